//! Equivalence, benchmark and schedule reports.

use std::fmt;
use std::time::{Duration, Instant};

use rand::Rng;

use super::config::{EquivConfig, PipelineConfig};
use super::pipeline::{run_pipeline, PipelineWeights};
use super::scene::SceneBundle;
use crate::error::Result;
use crate::gsdl::{schedule_table, MixupSchedule};
use crate::reparam::{
    default_layout, forward_deploy, forward_train, merge_branches, seeded_branches, BranchShape,
};
use crate::tensor::init::{named_seed, rng, uniform};
use crate::tensor::{DType, Real};
use crate::view::{DepthDistribution, VoxelPooling};

/// One randomized train-vs-deploy comparison.
#[derive(Debug, Clone)]
pub struct EquivCase {
    pub dtype: DType,
    pub target: [usize; 3],
    pub layout: Vec<BranchShape>,
    /// `[C_in, X, Y, Z]`
    pub input: [usize; 4],
    pub c_out: usize,
    pub max_abs: f64,
    pub tol: f64,
}

impl EquivCase {
    pub fn pass(&self) -> bool {
        self.max_abs <= self.tol
    }
}

#[derive(Debug, Clone)]
pub struct EquivReport {
    pub cases: Vec<EquivCase>,
    pub elapsed: Duration,
}

impl EquivReport {
    pub fn pass(&self) -> bool {
        !self.cases.is_empty() && self.cases.iter().all(EquivCase::pass)
    }

    pub fn worst(&self, dtype: DType) -> f64 {
        self.cases
            .iter()
            .filter(|c| c.dtype == dtype)
            .map(|c| c.max_abs)
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for EquivReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<5} {:<10} {:<16} {:<44} {:>10} {:>6}",
            "dtype", "target", "input", "branches", "max|Δ|", "ok"
        )?;
        for c in &self.cases {
            let target = format!("{}x{}x{}", c.target[0], c.target[1], c.target[2]);
            let input = format!("{:?}", c.input);
            let layout: Vec<String> = c.layout.iter().map(|b| b.to_string()).collect();
            writeln!(
                f,
                "{:<5} {:<10} {:<16} {:<44} {:>10.2e} {:>6}",
                format!("{:?}", c.dtype).to_lowercase(),
                target,
                input,
                layout.join(" "),
                c.max_abs,
                if c.pass() { "pass" } else { "FAIL" }
            )?;
        }
        writeln!(
            f,
            "{} cases, worst f32 {:.2e}, worst f64 {:.2e}, {:.2}s: {}",
            self.cases.len(),
            self.worst(DType::F32),
            self.worst(DType::F64),
            self.elapsed.as_secs_f64(),
            if self.pass() { "PASS" } else { "FAIL" }
        )
    }
}

struct CaseSpec {
    target: [usize; 3],
    layout: Vec<BranchShape>,
    c_in: usize,
    c_out: usize,
    extents: [usize; 3],
    seed: u64,
}

fn random_case(r: &mut impl Rng, seed: u64) -> CaseSpec {
    let odd = |r: &mut dyn rand::RngCore, max: usize| 2 * r.random_range(0..=max / 2) + 1;
    let target = [odd(r, 11), odd(r, 11), odd(r, 3)];
    let mut layout = vec![BranchShape::new(target, [1, 1, 1])];
    for _ in 0..r.random_range(0..=3) {
        let mut kernel = [0; 3];
        let mut dilation = [1; 3];
        for a in 0..3 {
            kernel[a] = odd(r, target[a]);
            let max_r = if kernel[a] > 1 {
                (target[a] - 1) / (kernel[a] - 1)
            } else {
                1
            };
            dilation[a] = r.random_range(1..=max_r.max(1));
        }
        layout.push(BranchShape::new(kernel, dilation));
    }
    CaseSpec {
        target,
        layout,
        c_in: r.random_range(1..=4),
        c_out: r.random_range(1..=4),
        extents: [
            r.random_range(4..=14),
            r.random_range(4..=14),
            r.random_range(1..=5),
        ],
        seed,
    }
}

fn run_case<T: Real>(spec: &CaseSpec, tol: f64) -> Result<EquivCase> {
    let branches = seeded_branches::<T>(
        spec.c_out,
        spec.c_in,
        &spec.layout,
        named_seed(spec.seed, "branches"),
    );
    let [x, y, z] = spec.extents;
    let input = uniform::<T>(&[spec.c_in, x, y, z], 1.0, named_seed(spec.seed, "input"));
    let merged = merge_branches(&branches, spec.target)?;
    let a = forward_train(&input, &branches)?;
    let b = forward_deploy(&input, &merged)?;
    Ok(EquivCase {
        dtype: T::DTYPE,
        target: spec.target,
        layout: spec.layout.clone(),
        input: [spec.c_in, x, y, z],
        c_out: spec.c_out,
        max_abs: a.max_abs_diff(&b)?.as_f64(),
        tol,
    })
}

/// Randomized equivalence suite. The first cases are the `[11,11,1]`
/// default layout and the configured layout; the rest are random. Every
/// case runs in both f32 and f64.
pub fn run_equivalence(cfg: &PipelineConfig) -> Result<EquivReport> {
    run_equivalence_with(
        &cfg.equiv,
        &cfg.model.branch_layout()?,
        cfg.model.reparam_kernel,
        cfg.seed,
    )
}

pub fn run_equivalence_with(
    eq: &EquivConfig,
    configured: &[BranchShape],
    configured_target: [usize; 3],
    seed: u64,
) -> Result<EquivReport> {
    let start = Instant::now();
    let mut r = rng(named_seed(seed, "equiv"));
    let mut specs = vec![
        CaseSpec {
            target: [11, 11, 1],
            layout: default_layout([11, 11, 1]),
            c_in: 4,
            c_out: 4,
            extents: [24, 24, 3],
            seed: named_seed(seed, "equiv/default"),
        },
        CaseSpec {
            target: configured_target,
            layout: configured.to_vec(),
            c_in: 3,
            c_out: 2,
            extents: [16, 16, 4],
            seed: named_seed(seed, "equiv/configured"),
        },
    ];
    while specs.len() < eq.cases.max(2) {
        let case_seed = named_seed(seed, &format!("equiv/{}", specs.len()));
        specs.push(random_case(&mut r, case_seed));
    }
    let mut cases = Vec::with_capacity(2 * specs.len());
    for s in &specs {
        cases.push(run_case::<f32>(s, eq.tol_f32)?);
        cases.push(run_case::<f64>(s, eq.tol_f64)?);
    }
    Ok(EquivReport {
        cases,
        elapsed: start.elapsed(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub name: String,
    pub runs: usize,
    pub median: Duration,
    pub min: Duration,
}

fn time_runs(name: &str, runs: usize, mut f: impl FnMut() -> Result<()>) -> Result<BenchRow> {
    f()?;
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t = Instant::now();
        f()?;
        times.push(t.elapsed());
    }
    times.sort();
    Ok(BenchRow {
        name: name.to_string(),
        runs,
        median: times[runs / 2],
        min: times[0],
    })
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, name: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Median train latency over median deploy latency.
    pub fn speedup(&self) -> Option<f64> {
        let t = self.row("forward_train")?.median.as_secs_f64();
        let d = self.row("forward_deploy")?.median.as_secs_f64();
        Some(t / d)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("stage,runs,median_ms,min_ms\n");
        for r in &self.rows {
            s += &format!(
                "{},{},{:.4},{:.4}\n",
                r.name,
                r.runs,
                r.median.as_secs_f64() * 1e3,
                r.min.as_secs_f64() * 1e3
            );
        }
        s
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<16} {:>5} {:>12} {:>12}",
            "stage", "runs", "median ms", "min ms"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<16} {:>5} {:>12.3} {:>12.3}",
                r.name,
                r.runs,
                r.median.as_secs_f64() * 1e3,
                r.min.as_secs_f64() * 1e3
            )?;
        }
        if let Some(s) = self.speedup() {
            writeln!(f, "train/deploy latency ratio {s:.3}")?;
        }
        Ok(())
    }
}

/// `forward_train` against `forward_deploy` on a `[C, X, Y, Z]` input.
pub fn bench_reparam(
    layout: &[BranchShape],
    target: [usize; 3],
    channels: (usize, usize),
    extents: [usize; 3],
    runs: usize,
    seed: u64,
) -> Result<BenchReport> {
    let (c_in, c_out) = channels;
    let branches = seeded_branches::<f32>(c_out, c_in, layout, named_seed(seed, "bench/branches"));
    let merged = merge_branches(&branches, target)?;
    let [x, y, z] = extents;
    let input = uniform::<f32>(&[c_in, x, y, z], 1.0, named_seed(seed, "bench/input"));
    // Alternate so drift in machine load hits both forms alike.
    let mut train = Vec::with_capacity(runs);
    let mut deploy = Vec::with_capacity(runs);
    forward_train(&input, &branches)?;
    forward_deploy(&input, &merged)?;
    for _ in 0..runs {
        let t = Instant::now();
        forward_train(&input, &branches)?;
        train.push(t.elapsed());
        let t = Instant::now();
        forward_deploy(&input, &merged)?;
        deploy.push(t.elapsed());
    }
    let row = |name: &str, mut v: Vec<Duration>| {
        v.sort();
        BenchRow {
            name: name.to_string(),
            runs,
            median: v[runs / 2],
            min: v[0],
        }
    };
    Ok(BenchReport {
        rows: vec![row("forward_train", train), row("forward_deploy", deploy)],
    })
}

/// Reparam timings at the configured half-resolution grid, plus lift-splat
/// and the full pipeline on `scene`.
pub fn run_bench(cfg: &PipelineConfig, scene: &SceneBundle, runs: usize) -> Result<BenchReport> {
    let half = cfg.half_grid()?;
    let m = &cfg.model;
    let mut report = bench_reparam(
        &m.branch_layout()?,
        m.reparam_kernel,
        (m.channels, m.semantic_channels),
        half.counts,
        runs,
        cfg.seed,
    )?;
    let cams = cfg.cameras.cameras()?;
    let bins = cfg.depth_bins()?;
    let pooling = VoxelPooling::new(&cams, &bins, &crate::bev::EgoPose::identity(), &cfg.grid)?;
    let last = scene.frames() - 1;
    let features: Vec<_> = (0..cams.len())
        .map(|c| super::pipeline::image_features::<f32>(cfg, last, c))
        .collect();
    let depth = DepthDistribution::<f32>::uniform(cams.len(), bins.count, cfg.cameras.feature_size);
    report.rows.push(time_runs("lift_splat", runs, || {
        pooling.pool(&features, &depth).map(drop)
    })?);
    let weights = PipelineWeights::<f32>::seeded(cfg)?;
    let pipeline_runs = runs.clamp(1, 5);
    report.rows.push(time_runs("pipeline", pipeline_runs, || {
        run_pipeline(cfg, &weights, scene, 0.5).map(drop)
    })?);
    Ok(report)
}

/// `iter,x,alpha` rows sampled at `points` evenly spaced iterations.
pub fn schedule_csv(schedule: &MixupSchedule, points: usize) -> Result<String> {
    let mut s = String::from("iter,x,alpha\n");
    for (iter, x, a) in schedule_table(schedule, points)? {
        s += &format!("{iter},{x},{a:e}\n");
    }
    Ok(s)
}
