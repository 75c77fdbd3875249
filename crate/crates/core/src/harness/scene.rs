//! Synthetic driving scenes: world-fixed boxes seen from a moving ego.
//!
//! The world frame coincides with the ego frame of the last frame, which
//! is the frame the pipeline predicts.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix4, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{PipelineConfig, RigConfig};
use crate::bev::EgoPose;
use crate::error::{Error, Result};
use crate::eval::{OccupancyGrid, VisibleMask, EMPTY};
use crate::gsdl::DepthSample;
use crate::tensor::gsdt;
use crate::tensor::init::{named_seed, rng};
use crate::tensor::Tensor;
use crate::view::{CameraParams, GridSpec};

/// Axis-aligned world-frame box with a semantic class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxObstacle {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub class: u8,
}

impl BoxObstacle {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    /// Ray parameter of the first intersection at `t > 0`, if any.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        for a in 0..3 {
            if dir[a] == 0.0 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[a];
            let (mut ta, mut tb) = (
                (self.min[a] - origin[a]) * inv,
                (self.max[a] - origin[a]) * inv,
            );
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return None;
            }
        }
        (t0 > 0.0).then_some(t0)
    }
}

/// Object classes the generator draws from.
const OBJECT_CLASSES: [u8; 12] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 15];

/// Clearance kept between every box footprint and the ego path.
const PATH_CLEARANCE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub grid: GridSpec,
    pub rig: RigConfig,
    pub obstacles: Vec<BoxObstacle>,
    /// Ego-to-world pose per frame; the last one is the identity for
    /// generated scenes.
    pub trajectory: Vec<EgoPose>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    grid: GridSpec,
    rig: RigConfig,
    #[serde(default)]
    obstacles: Vec<BoxObstacle>,
}

fn rect_distance(b: &BoxObstacle, x: f64, y: f64) -> f64 {
    let dx = (b.min[0] - x).max(0.0).max(x - b.max[0]);
    let dy = (b.min[1] - y).max(0.0).max(y - b.max[1]);
    dx.hypot(dy)
}

/// Straight or arcing path ending at the identity.
pub fn trajectory(frames: usize, speed: f64, yaw_rate: f64) -> Vec<EgoPose> {
    let mut fwd = Vec::with_capacity(frames);
    let (mut x, mut y, mut yaw) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..frames {
        fwd.push(EgoPose::planar(x, y, 0.0, yaw));
        yaw += yaw_rate;
        x += speed * yaw.cos();
        y += speed * yaw.sin();
    }
    let last = fwd.last().copied().unwrap_or_default().inverse();
    fwd.iter().map(|p| last.compose(p)).collect()
}

impl SceneSpec {
    /// Random boxes resting on the grid floor, kept clear of the ego path.
    pub fn random(cfg: &PipelineConfig) -> Result<Self> {
        let sc = &cfg.scene;
        let trajectory = trajectory(sc.frames, sc.speed, sc.yaw_rate);
        let g = &cfg.grid;
        let mut r = rng(named_seed(cfg.seed, "scene"));
        let mut obstacles = Vec::with_capacity(sc.boxes);
        let mut attempts = 0;
        while obstacles.len() < sc.boxes {
            attempts += 1;
            if attempts > 1000 * sc.boxes.max(1) {
                return Err(Error::invalid(
                    "SceneSpec::random",
                    format!("placed only {} of {} boxes", obstacles.len(), sc.boxes),
                ));
            }
            let hx = r.random_range(0.4..2.0);
            let hy = r.random_range(0.4..2.0);
            let h = r.random_range(0.8..2.8f64).min(g.range[5] - g.range[2]);
            let cx = r.random_range(g.range[0] + hx..g.range[3] - hx);
            let cy = r.random_range(g.range[1] + hy..g.range[4] - hy);
            let class = OBJECT_CLASSES[r.random_range(0..OBJECT_CLASSES.len())];
            let b = BoxObstacle {
                min: [cx - hx, cy - hy, g.range[2]],
                max: [cx + hx, cy + hy, g.range[2] + h],
                class,
            };
            let clear = trajectory.iter().all(|p| {
                let t = p.translation();
                rect_distance(&b, t.x, t.y) > PATH_CLEARANCE
            });
            if clear {
                obstacles.push(b);
            }
        }
        let spec = Self {
            grid: cfg.grid,
            rig: cfg.cameras.clone(),
            obstacles,
            trajectory,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.trajectory.is_empty() {
            return Err(Error::invalid("SceneSpec", "empty trajectory"));
        }
        for b in &self.obstacles {
            let inside = (0..3).all(|a| {
                b.min[a] >= self.grid.range[a]
                    && b.max[a] <= self.grid.range[a + 3]
                    && b.min[a] < b.max[a]
            });
            if !inside {
                return Err(Error::invalid(
                    "SceneSpec",
                    format!("box {b:?} leaves the grid range"),
                ));
            }
            if b.class >= EMPTY {
                return Err(Error::invalid(
                    "SceneSpec",
                    format!("box class {} is not an object", b.class),
                ));
            }
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.trajectory.len()
    }
}

/// Everything a pipeline run and its evaluation need.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub spec: SceneSpec,
    /// Ground-truth labels per frame, in that frame's ego grid.
    pub labels: Vec<OccupancyGrid>,
    pub visible: Vec<VisibleMask>,
    /// `[frame][camera]` z-depth per feature pixel `[H_F, W_F]`; 0 = no hit.
    pub depth: Vec<Vec<Tensor<f64>>>,
}

/// Supersampling of visibility rays per feature pixel and axis.
const VIS_SUPERSAMPLE: usize = 4;

pub fn gen_scene(spec: &SceneSpec) -> Result<SceneBundle> {
    spec.validate()?;
    let cams = spec.rig.cameras()?;
    let mut labels = Vec::with_capacity(spec.frames());
    let mut visible = Vec::with_capacity(spec.frames());
    let mut depth = Vec::with_capacity(spec.frames());
    for pose in &spec.trajectory {
        let grid = rasterize(&spec.grid, &spec.obstacles, pose);
        visible.push(visibility(&spec.grid, &grid, &cams)?);
        depth.push(
            cams.iter()
                .map(|c| first_hit_depth(c, &spec.obstacles, pose))
                .collect(),
        );
        labels.push(OccupancyGrid::new(grid)?);
    }
    Ok(SceneBundle {
        spec: spec.clone(),
        labels,
        visible,
        depth,
    })
}

fn rasterize(grid: &GridSpec, boxes: &[BoxObstacle], pose: &EgoPose) -> Tensor<u8> {
    let [nx, ny, nz] = grid.counts;
    Tensor::from_fn(&[nx, ny, nz], |i| {
        let c = grid.voxel_center([i[0], i[1], i[2]]);
        let w = pose.transform(&Vector3::from(c));
        boxes
            .iter()
            .find(|b| b.contains([w.x, w.y, w.z]))
            .map_or(EMPTY, |b| b.class)
    })
}

/// Nearest box hit of every feature-pixel ray, as camera z-depth.
fn first_hit_depth(cam: &CameraParams, boxes: &[BoxObstacle], pose: &EgoPose) -> Tensor<f64> {
    let [hf, wf] = cam.feature_size;
    let rot = pose.0.rotation;
    Tensor::from_fn(&[hf, wf], |i| {
        let (x, y) = cam.feature_to_image(i[1] as f64, i[0] as f64);
        let (o, d) = cam.ray(x, y);
        let (ow, dw) = (pose.transform(&o), rot * d);
        let t = boxes
            .iter()
            .filter_map(|b| b.intersect(&ow, &dw))
            .fold(f64::INFINITY, f64::min);
        if t.is_finite() {
            t * (cam.rotation.transpose() * d).z
        } else {
            0.0
        }
    })
}

/// Voxels crossed by supersampled camera rays up to and including the first
/// occupied voxel.
fn visibility(grid: &GridSpec, labels: &Tensor<u8>, cams: &[CameraParams]) -> Result<VisibleMask> {
    let mut mask = Tensor::<u8>::zeros(&grid.counts);
    for cam in cams {
        let [hf, wf] = cam.feature_size;
        let s = VIS_SUPERSAMPLE;
        for v in 0..hf * s {
            for u in 0..wf * s {
                let fu = (u as f64 + 0.5) / s as f64 - 0.5;
                let fv = (v as f64 + 0.5) / s as f64 - 0.5;
                let (x, y) = cam.feature_to_image(fu, fv);
                let (o, d) = cam.ray(x, y);
                march(grid, labels, &o, &d, &mut mask);
            }
        }
    }
    VisibleMask::new(mask)
}

/// Amanatides–Woo traversal in grid coordinates.
fn march(
    grid: &GridSpec,
    labels: &Tensor<u8>,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    mask: &mut Tensor<u8>,
) {
    let size = grid.voxel_size();
    let start = grid.start();
    let n = grid.counts;
    let o = [0, 1, 2].map(|a| (origin[a] - start[a]) / size[a]);
    let d = [0, 1, 2].map(|a| dir[a] / size[a]);
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for a in 0..3 {
        if d[a] == 0.0 {
            if o[a] < 0.0 || o[a] > n[a] as f64 {
                return;
            }
            continue;
        }
        let (mut ta, mut tb) = (-o[a] / d[a], (n[a] as f64 - o[a]) / d[a]);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    if t0 >= t1 {
        return;
    }
    let entry = [0, 1, 2].map(|a| o[a] + d[a] * (t0 + 1e-9));
    let mut cell = [0, 1, 2].map(|a| (entry[a].floor().max(0.0) as usize).min(n[a] - 1));
    let step = d.map(|v| if v > 0.0 { 1i64 } else { -1 });
    let mut t_max = [0, 1, 2].map(|a| {
        if d[a] == 0.0 {
            f64::INFINITY
        } else {
            let next = if d[a] > 0.0 {
                cell[a] as f64 + 1.0
            } else {
                cell[a] as f64
            };
            (next - o[a]) / d[a]
        }
    });
    let t_delta = d.map(|v| {
        if v == 0.0 {
            f64::INFINITY
        } else {
            1.0 / v.abs()
        }
    });
    loop {
        let flat = grid.flat_index(cell);
        mask.data_mut()[flat] = 1;
        if labels.data()[flat] != EMPTY {
            return;
        }
        let a = (0..3)
            .min_by(|&i, &j| t_max[i].total_cmp(&t_max[j]))
            .unwrap_or(0);
        let next = cell[a] as i64 + step[a];
        if next < 0 || next >= n[a] as i64 {
            return;
        }
        cell[a] = next as usize;
        t_max[a] += t_delta[a];
    }
}

impl SceneBundle {
    pub fn frames(&self) -> usize {
        self.spec.frames()
    }

    /// Depth hits of `frame` as samples for ground-truth depth.
    pub fn depth_samples(&self, frame: usize) -> Vec<Vec<DepthSample>> {
        self.depth[frame]
            .iter()
            .map(|d| {
                let w = d.shape()[1];
                d.data()
                    .iter()
                    .enumerate()
                    .filter(|(_, &z)| z > 0.0)
                    .map(|(i, &z)| DepthSample {
                        v: i / w,
                        u: i % w,
                        depth: z,
                    })
                    .collect()
            })
            .collect()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let file = SceneFile {
            grid: self.spec.grid,
            rig: self.spec.rig.clone(),
            obstacles: self.spec.obstacles.clone(),
        };
        let text = toml::to_string(&file).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(dir.join("scene.toml"), text)?;
        let t = self.frames();
        let poses: Vec<f64> = self
            .spec
            .trajectory
            .iter()
            .flat_map(|p| {
                let m = p.to_matrix();
                (0..16).map(move |k| m[(k / 4, k % 4)])
            })
            .collect();
        gsdt::save(&Tensor::new(vec![t, 4, 4], poses)?, dir.join("poses.gsdt"))?;
        let stack_u8 = |parts: Vec<&Tensor<u8>>| {
            Tensor::stack(&parts.into_iter().cloned().collect::<Vec<_>>())
        };
        gsdt::save(
            &stack_u8(self.labels.iter().map(|l| l.labels()).collect())?,
            dir.join("labels.gsdt"),
        )?;
        gsdt::save(
            &stack_u8(self.visible.iter().map(|m| m.tensor()).collect())?,
            dir.join("visible.gsdt"),
        )?;
        let depth: Vec<Tensor<f64>> = self
            .depth
            .iter()
            .map(|cams| Tensor::stack(cams))
            .collect::<Result<_>>()?;
        gsdt::save(&Tensor::stack(&depth)?, dir.join("depth.gsdt"))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join("scene.toml"))?;
        let file: SceneFile =
            toml::from_str(&text).map_err(|e| Error::Format(format!("scene.toml: {e}")))?;
        let poses = gsdt::load(dir.join("poses.gsdt"))?.into_real::<f64>()?;
        if poses.rank() != 3 || poses.shape()[1..] != [4, 4] {
            return Err(Error::Format(format!(
                "poses.gsdt has shape {:?}",
                poses.shape()
            )));
        }
        let trajectory = poses
            .data()
            .chunks_exact(16)
            .map(|m| EgoPose::from_homogeneous(&Matrix4::from_row_slice(m)))
            .collect::<Result<Vec<_>>>()?;
        let spec = SceneSpec {
            grid: file.grid,
            rig: file.rig,
            obstacles: file.obstacles,
            trajectory,
        };
        spec.validate()?;
        let t = spec.frames();
        let [nx, ny, nz] = spec.grid.counts;
        let split_u8 = |name: &str| -> Result<Vec<Tensor<u8>>> {
            let all = gsdt::load(dir.join(name))?.into_u8()?;
            if all.shape() != [t, nx, ny, nz] {
                return Err(Error::Format(format!("{name} has shape {:?}", all.shape())));
            }
            (0..t)
                .map(|f| Tensor::new(vec![nx, ny, nz], all.slab(f).to_vec()))
                .collect()
        };
        let labels = split_u8("labels.gsdt")?
            .into_iter()
            .map(OccupancyGrid::new)
            .collect::<Result<Vec<_>>>()?;
        let visible = split_u8("visible.gsdt")?
            .into_iter()
            .map(VisibleMask::new)
            .collect::<Result<Vec<_>>>()?;
        let [hf, wf] = spec.rig.feature_size;
        let nc = spec.rig.count;
        let depth_all = gsdt::load(dir.join("depth.gsdt"))?.into_real::<f64>()?;
        if depth_all.shape() != [t, nc, hf, wf] {
            return Err(Error::Format(format!(
                "depth.gsdt has shape {:?}",
                depth_all.shape()
            )));
        }
        let plane = hf * wf;
        let depth = (0..t)
            .map(|f| {
                (0..nc)
                    .map(|c| {
                        let off = (f * nc + c) * plane;
                        Tensor::new(vec![hf, wf], depth_all.data()[off..off + plane].to_vec())
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec,
            labels,
            visible,
            depth,
        })
    }
}
