//! Configuration, synthetic scenes, the end-to-end pipeline and the
//! reports behind the `occ` command line tool.

pub mod config;
pub mod pipeline;
pub mod report;
pub mod scene;

pub use config::{DepthProvider, PipelineConfig, ReparamMode};
pub use pipeline::{image_features, run_pipeline, PipelineOutput, PipelineWeights, StageTimings};
pub use report::{
    bench_reparam, run_bench, run_equivalence, schedule_csv, BenchReport, EquivReport,
};
pub use scene::{gen_scene, BoxObstacle, SceneBundle, SceneSpec};
