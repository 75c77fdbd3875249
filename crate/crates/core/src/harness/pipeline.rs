//! End-to-end forward pass over a scene bundle.
//!
//! Every frame is lifted and collapsed to BEV; history frames only feed the
//! temporal queue, and the last frame runs the full network:
//!
//! ```text
//! V ─ collapse ─ B ─ temporal ─ B_t ─┬─ encoder ─ B_s ─ lift_s ─ V_s ─┐
//!                                    └─ lift_t ─ (+V) ─ reparam ─ V_g ┴─ fuse/upsample ─ head
//! ```

use std::fmt;
use std::time::{Duration, Instant};

use super::config::{DepthProvider, PipelineConfig, ReparamMode};
use super::scene::SceneBundle;
use crate::bev::{
    collapse_height, semantic_encoder_2d, temporal_fuse, FusionWeights, SemanticEncoderWeights,
    TemporalQueue,
};
use crate::bvl::{bev_to_voxel_lift, fuse_and_upsample, BvlWeights, UpsampleWeights};
use crate::error::{Error, Result, StageExt};
use crate::eval::NUM_CLASSES;
use crate::gsdl::{gt_depth_from_points, mix_depth};
use crate::reparam::{
    forward_deploy, forward_train, merge_branches, seeded_branches, ConvBranch, MergedKernel,
};
use crate::tensor::init::{fan_in_uniform, named_seed, uniform_range};
use crate::tensor::{conv2d, conv3d, relu, softmax, ConvSpec, ConvSpec2d, Real, Tensor};
use crate::view::{DepthDistribution, VoxelPooling};

/// Stand-in depth head: 3×3 conv, ReLU, 1×1 conv to `D_bin` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthStubWeights<T> {
    pub hidden: (Tensor<T>, Tensor<T>),
    pub logits: (Tensor<T>, Tensor<T>),
}

impl<T: Real> DepthStubWeights<T> {
    pub fn seeded(channels: usize, bins: usize, seed: u64) -> Self {
        Self {
            hidden: (
                fan_in_uniform(&[channels, channels, 3, 3], named_seed(seed, "hidden")),
                Tensor::zeros(&[channels]),
            ),
            logits: (
                fan_in_uniform(&[bins, channels, 1, 1], named_seed(seed, "logits")),
                Tensor::zeros(&[bins]),
            ),
        }
    }

    /// `[C, H_F, W_F]` → softmax-normalized `[D_bin, H_F, W_F]`.
    pub fn predict(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        let h = relu(&conv2d(
            features,
            &self.hidden.0,
            Some(&self.hidden.1),
            &ConvSpec2d::same([3, 3]),
        )?);
        let l = conv2d(
            &h,
            &self.logits.0,
            Some(&self.logits.1),
            &ConvSpec2d::same([1, 1]),
        )?;
        softmax(&l, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineWeights<T> {
    pub depth_stub: DepthStubWeights<T>,
    pub fusion: FusionWeights<T>,
    pub encoder: SemanticEncoderWeights<T>,
    /// Lifting of the temporal BEV, `C → C`.
    pub bvl_temporal: BvlWeights<T>,
    /// Lifting of the semantic BEV, `C' → C'`.
    pub bvl_semantic: BvlWeights<T>,
    pub branches: Vec<ConvBranch<T>>,
    pub merged: MergedKernel<T>,
    pub upsample: UpsampleWeights<T>,
    /// `[18, C', 1, 1, 1]` and `[18]`.
    pub head: (Tensor<T>, Tensor<T>),
}

impl<T: Real> PipelineWeights<T> {
    pub fn seeded(cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let m = &cfg.model;
        let (c, cs) = (m.channels, m.semantic_channels);
        let slices = cfg.half_grid()?.counts[2];
        let s = |name: &str| named_seed(cfg.seed, name);
        let branches = seeded_branches(cs, c, &m.branch_layout()?, s("reparam"));
        let merged = merge_branches(&branches, m.reparam_kernel)?;
        let bvl_temporal = BvlWeights::seeded(c, c, slices, s("bvl_temporal"));
        let bvl_semantic = if m.share_bvl {
            bvl_temporal.clone()
        } else {
            BvlWeights::seeded(cs, cs, slices, s("bvl_semantic"))
        };
        Ok(Self {
            depth_stub: DepthStubWeights::seeded(c, cfg.depth.bins, s("depth_stub")),
            fusion: FusionWeights::seeded(c, m.history, s("fusion")),
            encoder: SemanticEncoderWeights::seeded(c, cs, s("encoder")),
            bvl_temporal,
            bvl_semantic,
            branches,
            merged,
            upsample: UpsampleWeights::seeded(cs, s("upsample")),
            head: (
                fan_in_uniform(&[NUM_CLASSES, cs, 1, 1, 1], s("head")),
                Tensor::zeros(&[NUM_CLASSES]),
            ),
        })
    }
}

/// Seeded nonnegative image features `[C, H_F, W_F]` of one camera and frame.
pub fn image_features<T: Real>(cfg: &PipelineConfig, frame: usize, cam: usize) -> Tensor<T> {
    let [h, w] = cfg.cameras.feature_size;
    let seed = named_seed(cfg.seed, &format!("features/{frame}/{cam}"));
    uniform_range(&[cfg.model.channels, h, w], 0.0, 1.0, seed)
}

/// Wall-clock time per stage, in first-use order, plus the whole run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageTimings {
    pub stages: Vec<(&'static str, Duration)>,
    pub total: Duration,
}

impl StageTimings {
    fn record<R>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<R>) -> Result<R> {
        let t = Instant::now();
        let out = f().stage(stage);
        let dt = t.elapsed();
        match self.stages.iter_mut().find(|(s, _)| *s == stage) {
            Some((_, acc)) => *acc += dt,
            None => self.stages.push((stage, dt)),
        }
        out
    }

    pub fn get(&self, stage: &str) -> Option<Duration> {
        self.stages
            .iter()
            .find(|(s, _)| *s == stage)
            .map(|(_, d)| *d)
    }

    pub fn stage_sum(&self) -> Duration {
        self.stages.iter().map(|(_, d)| *d).sum()
    }
}

impl fmt::Display for StageTimings {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<18} {:>10}", "stage", "ms")?;
        for (name, d) in &self.stages {
            writeln!(f, "{name:<18} {:>10.3}", d.as_secs_f64() * 1e3)?;
        }
        writeln!(
            f,
            "{:<18} {:>10.3}",
            "total",
            self.total.as_secs_f64() * 1e3
        )
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput<T> {
    /// `[18, X, Y, Z]` at full grid resolution.
    pub logits: Tensor<T>,
    /// Lift-splat output of the predicted frame, `[C, X/2, Y/2, Z/2]`.
    pub lifted: Tensor<T>,
    pub timings: StageTimings,
}

fn check_scene(cfg: &PipelineConfig, scene: &SceneBundle) -> Result<()> {
    if scene.spec.grid != cfg.grid {
        return Err(Error::Config(format!(
            "scene grid {:?} differs from config grid {:?}",
            scene.spec.grid, cfg.grid
        )));
    }
    if scene.spec.rig != cfg.cameras {
        return Err(Error::Config("scene camera rig differs from config".into()));
    }
    Ok(())
}

/// Runs the network on the last frame of `scene`, with the history queue
/// filled from the frames before it. `alpha` weights predicted against
/// ground-truth depth.
pub fn run_pipeline<T: Real>(
    cfg: &PipelineConfig,
    weights: &PipelineWeights<T>,
    scene: &SceneBundle,
    alpha: f64,
) -> Result<PipelineOutput<T>> {
    let start = Instant::now();
    cfg.validate()?;
    check_scene(cfg, scene)?;
    let mut tm = StageTimings::default();
    let cams = cfg.cameras.cameras()?;
    let bins = cfg.depth_bins()?;
    let half = cfg.half_grid()?;
    let frames = scene.frames();
    let last = frames - 1;
    let pooling = tm.record("lift_splat", || {
        VoxelPooling::new(&cams, &bins, &crate::bev::EgoPose::identity(), &cfg.grid)
    })?;
    let mut queue = TemporalQueue::new(cfg.model.history);
    let first = last.saturating_sub(cfg.model.history);
    let mut current = None;
    for f in first..frames {
        let features: Vec<Tensor<T>> = (0..cams.len()).map(|c| image_features(cfg, f, c)).collect();
        let gt =
            gt_depth_from_points::<T>(&scene.depth_samples(f), cfg.cameras.feature_size, &bins);
        let pred = tm.record("depth", || match cfg.depth.provider {
            DepthProvider::Gt => Ok(gt.dist.clone()),
            DepthProvider::Stub => features
                .iter()
                .map(|x| weights.depth_stub.predict(x))
                .collect::<Result<Vec<_>>>()
                .map(|cameras| DepthDistribution { cameras }),
        })?;
        let depth = tm.record("depth_mixup", || {
            mix_depth(&pred, &gt.dist, alpha, Some(&gt.valid))
        })?;
        let voxels = tm.record("lift_splat", || pooling.pool(&features, &depth))?;
        let bev = tm.record("collapse", || {
            collapse_height(&voxels, cfg.model.height_reduce)
        })?;
        let pose = scene.spec.trajectory[f];
        if f < last {
            tm.record("temporal", || queue.push(bev, pose, f as u64))?;
        } else {
            current = Some((voxels, bev, pose));
        }
    }
    let (voxels, bev, pose) = current.expect("last frame processed");
    let b_t = tm.record("temporal", || {
        temporal_fuse(&mut queue, &bev, &pose, last as u64, &weights.fusion, &half)
    })?;
    let b_s = tm.record("semantic_encoder", || {
        semantic_encoder_2d(&b_t, &weights.encoder)
    })?;
    let v_s = tm.record("bvl", || bev_to_voxel_lift(&b_s, &weights.bvl_semantic))?;
    let v_in = tm.record("bvl", || {
        bev_to_voxel_lift(&b_t, &weights.bvl_temporal)?.add(&voxels)
    })?;
    let v_g = tm.record("geometric_encoder", || match cfg.model.reparam_mode {
        ReparamMode::Train => forward_train(&v_in, &weights.branches),
        ReparamMode::Deploy => forward_deploy(&v_in, &weights.merged),
    })?;
    let v_gs = tm.record("fuse_upsample", || {
        fuse_and_upsample(&v_g, &v_s, &weights.upsample)
    })?;
    let logits = tm.record("head", || {
        conv3d(
            &v_gs,
            &weights.head.0,
            Some(&weights.head.1),
            &ConvSpec::valid([1, 1, 1]),
        )
    })?;
    tm.total = start.elapsed();
    Ok(PipelineOutput {
        logits,
        lifted: voxels,
        timings: tm,
    })
}

#[cfg(test)]
mod tests {
    use super::super::scene::{gen_scene, SceneSpec};
    use super::*;
    use crate::view::GridSpec;

    fn tiny() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.grid = GridSpec::new([-6.4, -6.4, -1.0, 6.4, 6.4, 2.2], [16, 16, 4]).unwrap();
        cfg.cameras.feature_size = [4, 8];
        cfg.depth.bins = 6;
        cfg.depth.max = 12.0;
        cfg.model.channels = 3;
        cfg.model.semantic_channels = 4;
        cfg.model.history = 2;
        cfg.model.reparam_kernel = [7, 7, 1];
        cfg.scene.frames = 4;
        cfg.scene.boxes = 2;
        cfg.scene.speed = 0.2;
        cfg
    }

    #[test]
    fn shapes_and_timings() {
        let cfg = tiny();
        let scene = gen_scene(&SceneSpec::random(&cfg).unwrap()).unwrap();
        let w = PipelineWeights::<f32>::seeded(&cfg).unwrap();
        let out = run_pipeline(&cfg, &w, &scene, 0.5).unwrap();
        assert_eq!(out.logits.shape(), &[18, 16, 16, 4]);
        assert_eq!(out.lifted.shape(), &[3, 8, 8, 2]);
        assert!(out.logits.all_finite());
        assert!(out.timings.stage_sum() <= out.timings.total);
        assert!(out.timings.get("geometric_encoder").is_some());
    }

    #[test]
    fn train_and_deploy_agree() {
        let mut cfg = tiny();
        let scene = gen_scene(&SceneSpec::random(&cfg).unwrap()).unwrap();
        let w = PipelineWeights::<f64>::seeded(&cfg).unwrap();
        let deploy = run_pipeline(&cfg, &w, &scene, 0.3).unwrap().logits;
        cfg.model.reparam_mode = ReparamMode::Train;
        let train = run_pipeline(&cfg, &w, &scene, 0.3).unwrap().logits;
        assert!(deploy.max_abs_diff(&train).unwrap() < 1e-10);
    }

    #[test]
    fn mismatched_scene_rejected() {
        let cfg = tiny();
        let scene = gen_scene(&SceneSpec::random(&cfg).unwrap()).unwrap();
        let mut other = cfg.clone();
        other.cameras.hfov_deg = 60.0;
        let w = PipelineWeights::<f32>::seeded(&other).unwrap();
        assert!(matches!(
            run_pipeline(&other, &w, &scene, 0.0),
            Err(Error::Config(_))
        ));
    }
}
