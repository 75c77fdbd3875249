use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::bev::HeightReduce;
use crate::error::{Error, Result};
use crate::gsdl::MixupSchedule;
use crate::reparam::{default_layout, BranchShape};
use crate::view::{CameraParams, DepthBins, GridSpec};

/// Source of the "predicted" depth distribution fed to the mixup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthProvider {
    /// One-hot depth from the scene; mixing is then a no-op.
    Gt,
    /// Seeded conv head over the image features.
    #[default]
    Stub,
}

/// Which form of the large-kernel geometric encoder the pipeline runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReparamMode {
    /// Parallel branches with batch norm.
    Train,
    /// The single merged kernel.
    #[default]
    Deploy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthConfig {
    pub min: f64,
    pub max: f64,
    pub bins: usize,
    pub provider: DepthProvider,
}

impl Default for DepthConfig {
    fn default() -> Self {
        Self {
            min: 1.0,
            max: 40.0,
            bins: 16,
            provider: DepthProvider::Stub,
        }
    }
}

/// Cameras share intrinsics and mount height and are spread evenly in yaw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigConfig {
    pub count: usize,
    /// `[H, W]`
    pub image_size: [usize; 2],
    /// `[H_F, W_F]`
    pub feature_size: [usize; 2],
    pub hfov_deg: f64,
    pub mount: [f64; 3],
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            count: 2,
            image_size: [256, 704],
            feature_size: [16, 44],
            hfov_deg: 70.0,
            mount: [0.0, 0.0, 0.6],
        }
    }
}

impl RigConfig {
    pub fn cameras(&self) -> Result<Vec<CameraParams>> {
        (0..self.count)
            .map(|i| {
                let yaw = std::f64::consts::TAU * i as f64 / self.count as f64;
                CameraParams::looking_along(
                    yaw,
                    Vector3::from(self.mount),
                    self.hfov_deg.to_radians(),
                    self.image_size,
                    self.feature_size,
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Image / voxel feature width `C`.
    pub channels: usize,
    /// Width `C'` after the encoders.
    pub semantic_channels: usize,
    /// History queue length τ.
    pub history: usize,
    pub height_reduce: HeightReduce,
    /// Target extents of the large geometric kernel.
    pub reparam_kernel: [usize; 3],
    /// Branch shapes such as `"5x5x1@2x2x1"`; empty selects the default layout.
    pub branches: Vec<String>,
    pub reparam_mode: ReparamMode,
    /// Use one set of lifting weights for both branches (needs `C == C'`).
    pub share_bvl: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            semantic_channels: 32,
            history: 15,
            height_reduce: HeightReduce::Mean,
            reparam_kernel: [11, 11, 1],
            branches: Vec::new(),
            reparam_mode: ReparamMode::Deploy,
            share_bvl: false,
        }
    }
}

impl ModelConfig {
    pub fn branch_layout(&self) -> Result<Vec<BranchShape>> {
        if self.branches.is_empty() {
            return Ok(default_layout(self.reparam_kernel));
        }
        self.branches.iter().map(|s| s.parse()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub frames: usize,
    pub boxes: usize,
    /// Ego speed in meters per frame.
    pub speed: f64,
    /// Ego yaw change in radians per frame.
    pub yaw_rate: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            frames: 16,
            boxes: 24,
            speed: 0.4,
            yaw_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub runs: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { runs: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquivConfig {
    /// Randomized cases per dtype.
    pub cases: usize,
    pub tol_f32: f64,
    pub tol_f64: f64,
}

impl Default for EquivConfig {
    fn default() -> Self {
        Self {
            cases: 50,
            tol_f32: 1e-4,
            tol_f64: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub grid: GridSpec,
    pub depth: DepthConfig,
    pub cameras: RigConfig,
    pub model: ModelConfig,
    pub schedule: MixupSchedule,
    pub scene: SceneConfig,
    pub bench: BenchConfig,
    pub equiv: EquivConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            grid: GridSpec::desk_scale(),
            depth: DepthConfig::default(),
            cameras: RigConfig::default(),
            model: ModelConfig::default(),
            schedule: MixupSchedule::default(),
            scene: SceneConfig::default(),
            bench: BenchConfig::default(),
            equiv: EquivConfig::default(),
        }
    }
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn depth_bins(&self) -> Result<DepthBins> {
        DepthBins::new(self.depth.min, self.depth.max, self.depth.bins)
    }

    /// Internal resolution of the voxel and BEV features.
    pub fn half_grid(&self) -> Result<GridSpec> {
        self.grid.downsampled(2)
    }

    /// Cross-module shape checks.
    pub fn validate(&self) -> Result<()> {
        self.grid.validate().map_err(config_err)?;
        self.depth_bins().map_err(config_err)?;
        self.schedule.validate().map_err(config_err)?;
        let half = self.half_grid().map_err(config_err)?;
        if half.counts[0] % 4 != 0 || half.counts[1] % 4 != 0 {
            return Err(Error::Config(format!(
                "grid {:?}: half-resolution BEV extents must be divisible by 4",
                self.grid.counts
            )));
        }
        let m = &self.model;
        if m.channels == 0 || m.semantic_channels == 0 {
            return Err(Error::Config("channel widths must be nonzero".into()));
        }
        if m.share_bvl && m.channels != m.semantic_channels {
            return Err(Error::Config(
                "share_bvl needs channels == semantic_channels".into(),
            ));
        }
        let layout = m.branch_layout().map_err(config_err)?;
        if layout.is_empty() {
            return Err(Error::Config("no reparam branches".into()));
        }
        for b in &layout {
            b.check_fits(m.reparam_kernel).map_err(config_err)?;
            if b.effective().iter().any(|e| e % 2 == 0) {
                return Err(Error::Config(format!(
                    "branch {b} has an even effective extent"
                )));
            }
        }
        let r = &self.cameras;
        if r.count == 0 || r.feature_size.contains(&0) || r.image_size.contains(&0) {
            return Err(Error::Config(
                "camera rig needs cameras and nonzero sizes".into(),
            ));
        }
        if !(r.hfov_deg > 0.0 && r.hfov_deg < 180.0) {
            return Err(Error::Config(format!(
                "hfov_deg {} outside (0, 180)",
                r.hfov_deg
            )));
        }
        if self.scene.frames == 0 {
            return Err(Error::Config("scene needs at least one frame".into()));
        }
        if self.bench.runs == 0 {
            return Err(Error::Config("bench.runs must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let back = PipelineConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.model.branch_layout().unwrap().len(), 3);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = PipelineConfig::from_toml("seed = 7\n[model]\nchannels = 8\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.model.channels, 8);
        assert_eq!(cfg.model.history, 15);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_toml("sed = 7\n").is_err());
        assert!(PipelineConfig::from_toml("[model]\nchanels = 8\n").is_err());
    }

    #[test]
    fn inconsistent_shapes_rejected() {
        let bad = "[grid]\nrange = [-20.0, -20.0, -1.0, 20.0, 20.0, 2.2]\ncounts = [100, 100, 8]\n";
        assert!(matches!(
            PipelineConfig::from_toml(bad),
            Err(Error::Config(_))
        ));
        assert!(PipelineConfig::from_toml("[model]\nbranches = [\"13x13x1@1x1x1\"]\n").is_err());
        assert!(
            PipelineConfig::from_toml("[model]\nshare_bvl = true\nsemantic_channels = 4\n")
                .is_err()
        );
    }
}
