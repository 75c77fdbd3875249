//! Explicit 2D-to-3D view transformation.
//!
//! Each feature pixel is lifted to `D_bin` points along its camera ray; the
//! point at bin `k` carries the pixel's feature vector scaled by the pixel's
//! depth probability for `k` (the outer product `F ⊗ D`). Points are then
//! scatter-added into a voxel grid at half the output resolution.

mod camera;
mod grid;

use crate::bev::EgoPose;
use crate::error::{Error, Result};
use crate::tensor::{ensure_rank, Real, Tensor};

pub use camera::{frustum_points, CameraParams, DepthBins};
pub use grid::GridSpec;

/// Per-camera categorical depth distributions, each `[D_bin, H_F, W_F]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthDistribution<T> {
    pub cameras: Vec<Tensor<T>>,
}

/// Tolerance on per-pixel normalization.
pub const DEPTH_NORM_TOL: f64 = 1e-5;

impl<T: Real> DepthDistribution<T> {
    pub fn new(cameras: Vec<Tensor<T>>) -> Result<Self> {
        let d = Self { cameras };
        d.validate()?;
        Ok(d)
    }

    /// Every pixel column spread evenly over the bins.
    pub fn uniform(n_cams: usize, bins: usize, size: [usize; 2]) -> Self {
        let p = T::from_f64(1.0 / bins as f64);
        Self {
            cameras: (0..n_cams)
                .map(|_| Tensor::full(&[bins, size[0], size[1]], p))
                .collect(),
        }
    }

    pub fn bins(&self) -> usize {
        self.cameras.first().map_or(0, |c| c.shape()[0])
    }

    /// Largest deviation of any pixel column sum from 1.
    pub fn max_norm_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for cam in &self.cameras {
            let s = cam.shape();
            let plane = s[1] * s[2];
            for p in 0..plane {
                let total: f64 = (0..s[0]).map(|b| cam.data()[b * plane + p].as_f64()).sum();
                worst = worst.max((total - 1.0).abs());
            }
        }
        worst
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .cameras
            .first()
            .ok_or_else(|| Error::invalid("DepthDistribution", "no cameras"))?;
        for cam in &self.cameras {
            ensure_rank("DepthDistribution", cam, 3)?;
            if cam.shape() != first.shape() {
                return Err(Error::shape(
                    "DepthDistribution",
                    format!("{:?} vs {:?}", cam.shape(), first.shape()),
                ));
            }
            if cam.data().iter().any(|&v| !(v >= T::zero())) {
                return Err(Error::invalid(
                    "DepthDistribution",
                    "negative or NaN probability",
                ));
            }
        }
        let err = self.max_norm_error();
        if err > DEPTH_NORM_TOL {
            return Err(Error::invalid(
                "DepthDistribution",
                format!("pixel columns deviate from 1 by {err:e}"),
            ));
        }
        Ok(())
    }
}

/// Flattened lifted points ordered `(camera, bin, v, u)`; `features` is
/// `[N_points, C]` and holds `f·p`.
#[derive(Debug, Clone)]
pub struct PseudoPointCloud<T> {
    pub positions: Vec<[f64; 3]>,
    pub features: Tensor<T>,
}

impl<T: Real> PseudoPointCloud<T> {
    /// Materializes `F ⊗ D` with positions from the camera frustums.
    pub fn build(
        features: &[Tensor<T>],
        depth: &DepthDistribution<T>,
        cams: &[CameraParams],
        bins: &DepthBins,
        ego_pose: &EgoPose,
    ) -> Result<Self> {
        let channels = check_inputs(features, depth, cams, bins)?;
        let mut positions = Vec::new();
        let mut data = Vec::new();
        for ((cam, f), d) in cams.iter().zip(features).zip(&depth.cameras) {
            let [hf, wf] = cam.feature_size;
            let frustum = frustum_points(cam, bins, ego_pose);
            for b in 0..bins.count {
                for v in 0..hf {
                    for u in 0..wf {
                        let p = &frustum.data()[((b * hf + v) * wf + u) * 3..][..3];
                        positions.push([p[0], p[1], p[2]]);
                        let prob = d.get(&[b, v, u]);
                        data.extend((0..channels).map(|c| f.get(&[c, v, u]) * prob));
                    }
                }
            }
        }
        let n = positions.len();
        Ok(Self {
            positions,
            features: Tensor::new(vec![n, channels], data)?,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

fn check_inputs<T: Real>(
    features: &[Tensor<T>],
    depth: &DepthDistribution<T>,
    cams: &[CameraParams],
    bins: &DepthBins,
) -> Result<usize> {
    if cams.is_empty() || features.len() != cams.len() || depth.cameras.len() != cams.len() {
        return Err(Error::shape(
            "lift_splat",
            format!(
                "{} cameras, {} feature maps, {} depth maps",
                cams.len(),
                features.len(),
                depth.cameras.len()
            ),
        ));
    }
    let channels = features[0].shape().first().copied().unwrap_or(0);
    for ((cam, f), d) in cams.iter().zip(features).zip(&depth.cameras) {
        let [hf, wf] = cam.feature_size;
        if f.shape() != [channels, hf, wf] {
            return Err(Error::shape(
                "lift_splat",
                format!(
                    "feature map {:?}, expected [{channels}, {hf}, {wf}]",
                    f.shape()
                ),
            ));
        }
        if d.shape() != [bins.count, hf, wf] {
            return Err(Error::shape(
                "lift_splat",
                format!(
                    "depth map {:?}, expected [{}, {hf}, {wf}]",
                    d.shape(),
                    bins.count
                ),
            ));
        }
    }
    Ok(channels)
}

/// Precomputed voxel assignment of every frustum point of a camera rig.
/// Geometry is fixed per rig, so one pooling serves every frame.
#[derive(Debug, Clone)]
pub struct VoxelPooling {
    cams: Vec<CameraParams>,
    bins: DepthBins,
    pool_grid: GridSpec,
    /// Per camera, `(bin, v, u)`-ordered flat voxel index or `u32::MAX`.
    targets: Vec<Vec<u32>>,
}

const OUTSIDE: u32 = u32::MAX;

impl VoxelPooling {
    /// Pools into `grid` downsampled by 2.
    pub fn new(
        cams: &[CameraParams],
        bins: &DepthBins,
        ego_pose: &EgoPose,
        grid: &GridSpec,
    ) -> Result<Self> {
        grid.validate()?;
        let pool_grid = grid.downsampled(2)?;
        Self::with_pool_grid(cams, bins, ego_pose, pool_grid)
    }

    /// Pools directly into `pool_grid`.
    pub fn with_pool_grid(
        cams: &[CameraParams],
        bins: &DepthBins,
        ego_pose: &EgoPose,
        pool_grid: GridSpec,
    ) -> Result<Self> {
        pool_grid.validate()?;
        if pool_grid.num_voxels() >= OUTSIDE as usize {
            return Err(Error::invalid("VoxelPooling", "grid too large"));
        }
        let targets = cams
            .iter()
            .map(|cam| {
                let pts = frustum_points(cam, bins, ego_pose);
                pts.data()
                    .chunks_exact(3)
                    .map(|p| {
                        pool_grid
                            .voxel_of([p[0], p[1], p[2]])
                            .map_or(OUTSIDE, |idx| pool_grid.flat_index(idx) as u32)
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            cams: cams.to_vec(),
            bins: *bins,
            pool_grid,
            targets,
        })
    }

    pub fn pool_grid(&self) -> &GridSpec {
        &self.pool_grid
    }

    /// Number of frustum points that land inside the grid.
    pub fn points_in_range(&self) -> usize {
        self.targets
            .iter()
            .flatten()
            .filter(|&&t| t != OUTSIDE)
            .count()
    }

    /// Scatter-adds `f·p` of every in-range point into `[C, X', Y', Z']`.
    pub fn pool<T: Real>(
        &self,
        features: &[Tensor<T>],
        depth: &DepthDistribution<T>,
    ) -> Result<Tensor<T>> {
        let channels = check_inputs(features, depth, &self.cams, &self.bins)?;
        let slab = self.pool_grid.num_voxels();
        let [gx, gy, gz] = self.pool_grid.counts;
        let mut out = Tensor::zeros(&[channels, gx, gy, gz]);
        let dst = out.data_mut();
        for ((cam, f), (d, targets)) in self
            .cams
            .iter()
            .zip(features)
            .zip(depth.cameras.iter().zip(&self.targets))
        {
            let plane = cam.feature_size[0] * cam.feature_size[1];
            let fd = f.data();
            let dd = d.data();
            for (i, &t) in targets.iter().enumerate() {
                if t == OUTSIDE {
                    continue;
                }
                let prob = dd[i];
                if prob == T::zero() {
                    continue;
                }
                let pix = i % plane;
                let vox = t as usize;
                for c in 0..channels {
                    dst[c * slab + vox] += fd[c * plane + pix] * prob;
                }
            }
        }
        Ok(out)
    }
}

/// Lifts per-camera features `[C, H_F, W_F]` by their depth distributions
/// and pools them into `[C, X/2, Y/2, Z/2]` of `grid` (ego frame).
pub fn lift_splat<T: Real>(
    features: &[Tensor<T>],
    depth: &DepthDistribution<T>,
    cams: &[CameraParams],
    bins: &DepthBins,
    grid: &GridSpec,
) -> Result<Tensor<T>> {
    VoxelPooling::new(cams, bins, &EgoPose::identity(), grid)?.pool(features, depth)
}

/// Fraction of entries that are exactly zero.
pub fn sparsity_ratio<T: Real>(v: &Tensor<T>) -> f64 {
    if v.numel() == 0 {
        return 1.0;
    }
    v.data().iter().filter(|&&x| x == T::zero()).count() as f64 / v.numel() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn grid() -> GridSpec {
        GridSpec::new([0.0, -4.0, -4.0, 16.0, 4.0, 4.0], [16, 8, 8]).unwrap()
    }

    fn camera() -> CameraParams {
        CameraParams::looking_along(0.0, Vector3::zeros(), 1.0, [8, 8], [2, 2]).unwrap()
    }

    #[test]
    fn delta_distribution_hits_one_voxel() {
        let cam = camera();
        let bins = DepthBins::new(1.0, 9.0, 4).unwrap();
        let mut f = Tensor::<f64>::zeros(&[3, 2, 2]);
        for c in 0..3 {
            f.set(&[c, 1, 0], (c + 1) as f64);
        }
        let mut d = DepthDistribution::<f64>::uniform(1, 4, [2, 2])
            .cameras
            .remove(0);
        for b in 0..4 {
            d.set(&[b, 1, 0], if b == 2 { 1.0 } else { 0.0 });
        }
        let depth = DepthDistribution::new(vec![d]).unwrap();
        let out = lift_splat(&[f], &depth, std::slice::from_ref(&cam), &bins, &grid()).unwrap();
        let p = cam.unproject(0.0, 1.0, bins.center(2));
        let pool = grid().downsampled(2).unwrap();
        let idx = pool.voxel_of([p.x, p.y, p.z]).unwrap();
        for c in 0..3 {
            assert_eq!(out.get(&[c, idx[0], idx[1], idx[2]]), (c + 1) as f64);
        }
        assert_eq!(out.sum(), 6.0);
        assert_eq!(out.data().iter().filter(|&&v| v != 0.0).count(), 3);
    }

    #[test]
    fn out_of_range_gives_zero_grid() {
        // camera looking backwards, grid is entirely ahead
        let cam = CameraParams::looking_along(
            std::f64::consts::PI,
            Vector3::zeros(),
            1.0,
            [8, 8],
            [2, 2],
        )
        .unwrap();
        let bins = DepthBins::new(1.0, 9.0, 4).unwrap();
        let f = Tensor::<f32>::full(&[2, 2, 2], 1.0);
        let depth = DepthDistribution::uniform(1, 4, [2, 2]);
        let out = lift_splat(&[f], &depth, &[cam], &bins, &grid()).unwrap();
        assert_eq!(sparsity_ratio(&out), 1.0);
    }

    #[test]
    fn shape_errors() {
        let cam = camera();
        let bins = DepthBins::new(1.0, 9.0, 4).unwrap();
        let depth = DepthDistribution::<f32>::uniform(1, 4, [2, 2]);
        let bad = Tensor::<f32>::zeros(&[2, 3, 2]);
        assert!(lift_splat(&[bad], &depth, std::slice::from_ref(&cam), &bins, &grid()).is_err());
        let f = Tensor::<f32>::zeros(&[2, 2, 2]);
        assert!(lift_splat(&[f.clone(), f], &depth, &[cam], &bins, &grid()).is_err());
    }

    #[test]
    fn depth_validation() {
        let bad = Tensor::<f64>::full(&[4, 1, 1], 0.3);
        assert!(DepthDistribution::new(vec![bad]).is_err());
        let neg = Tensor::<f64>::new(vec![2, 1, 1], vec![1.5, -0.5]).unwrap();
        assert!(DepthDistribution::new(vec![neg]).is_err());
        assert!(DepthDistribution::<f64>::new(vec![]).is_err());
    }

    #[test]
    fn sparsity() {
        assert_eq!(sparsity_ratio(&Tensor::<f32>::zeros(&[4, 4])), 1.0);
        assert_eq!(sparsity_ratio(&Tensor::<f32>::full(&[4, 4], 1.0)), 0.0);
        let t = Tensor::<f64>::new(vec![4], vec![0.0, 1.0, 0.0, 2.0]).unwrap();
        assert_eq!(sparsity_ratio(&t), 0.5);
    }

    #[test]
    fn point_cloud_count() {
        let cams = vec![camera(), camera()];
        let bins = DepthBins::new(1.0, 9.0, 4).unwrap();
        let f = vec![Tensor::<f64>::full(&[3, 2, 2], 1.0); 2];
        let depth = DepthDistribution::uniform(2, 4, [2, 2]);
        let cloud =
            PseudoPointCloud::build(&f, &depth, &cams, &bins, &EgoPose::identity()).unwrap();
        assert_eq!(cloud.len(), 2 * 4 * 2 * 2);
        assert_eq!(cloud.features.shape(), &[32, 3]);
        assert!((cloud.features.sum() - 32.0 * 3.0 * 0.25).abs() < 1e-12);
    }
}
