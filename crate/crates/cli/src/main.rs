use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use occ_core::eval::{argmax_decode, evaluate, OccupancyGrid, VisibleMask};
use occ_core::gsdl::MixupSchedule;
use occ_core::harness::{
    gen_scene, run_bench, run_equivalence, run_pipeline, schedule_csv, PipelineConfig,
    PipelineWeights, ReparamMode, SceneBundle, SceneSpec,
};
use occ_core::tensor::gsdt::{self, AnyTensor};
use occ_core::tensor::Tensor;
use occ_core::view::sparsity_ratio;

#[derive(Parser)]
#[command(
    name = "occ",
    version,
    about = "Camera-based semantic occupancy forward pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Train,
    Deploy,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene bundle.
    GenScene {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the pipeline on the last frame of a scene.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        scene: PathBuf,
        /// Weight of predicted depth against ground truth, in [0, 1].
        #[arg(long)]
        alpha: f64,
        /// Write the logits here as a GSDT tensor.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the configured geometric encoder form.
        #[arg(long, value_enum)]
        reparam: Option<Mode>,
    },
    /// Check that merged kernels reproduce their branch sets.
    Equiv {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Randomized cases per dtype.
        #[arg(long)]
        cases: Option<usize>,
    },
    /// Time train and deploy forms, lift-splat and the full pipeline.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        runs: Option<usize>,
        /// Scene to run on; generated from the config when absent.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// mIoU of a prediction against ground truth on visible voxels.
    Eval {
        /// Labels `[X,Y,Z]` (u8) or logits `[18,X,Y,Z]`.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        include_empty: bool,
        /// Frame to pick from stacked `[T,X,Y,Z]` scene tensors; defaults to the last.
        #[arg(long)]
        frame: Option<usize>,
    },
    /// Dump the depth mixup curve as CSV.
    Schedule {
        #[arg(long, default_value_t = 5.0)]
        r: f64,
        #[arg(long, default_value_t = 1000)]
        tmax: u64,
        #[arg(long, default_value_t = 5.0)]
        nalpha: f64,
        #[arg(long, default_value_t = 101)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

/// A single `[X,Y,Z]` u8 volume, picking `frame` out of a `[T,X,Y,Z]` stack.
fn select_frame(t: Tensor<u8>, frame: Option<usize>, path: &Path) -> Result<Tensor<u8>> {
    if t.rank() != 4 {
        return Ok(t);
    }
    let frames = t.shape()[0];
    let f = frame.unwrap_or(frames.saturating_sub(1));
    if f >= frames {
        bail!("{}: frame {f} out of {frames}", path.display());
    }
    Ok(Tensor::new(t.shape()[1..].to_vec(), t.slab(f).to_vec())?)
}

fn load_u8(path: &Path, frame: Option<usize>) -> Result<Tensor<u8>> {
    let t = gsdt::load(path).with_context(|| format!("reading {}", path.display()))?;
    select_frame(t.into_u8()?, frame, path)
}

fn load_grid(path: &Path, frame: Option<usize>) -> Result<OccupancyGrid> {
    let t = gsdt::load(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(match t {
        AnyTensor::U8(labels) => OccupancyGrid::new(select_frame(labels, frame, path)?)?,
        other => argmax_decode(&other.into_real::<f32>()?)?,
    })
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenScene { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let bundle = gen_scene(&SceneSpec::random(&cfg)?)?;
            bundle.save(&out)?;
            println!(
                "wrote {} frames, {} boxes, {} visible voxels in the last frame to {}",
                bundle.frames(),
                bundle.spec.obstacles.len(),
                bundle.visible.last().map_or(0, |m| m.count()),
                out.display()
            );
        }
        Command::Run {
            config,
            scene,
            alpha,
            out,
            reparam,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(mode) = reparam {
                cfg.model.reparam_mode = match mode {
                    Mode::Train => ReparamMode::Train,
                    Mode::Deploy => ReparamMode::Deploy,
                };
            }
            let scene = SceneBundle::load(&scene)
                .with_context(|| format!("loading scene {}", scene.display()))?;
            let weights = PipelineWeights::<f32>::seeded(&cfg)?;
            let result = run_pipeline(&cfg, &weights, &scene, alpha)?;
            print!("{}", result.timings);
            println!(
                "lift-splat zero fraction {:.4}",
                sparsity_ratio(&result.lifted)
            );
            let last = scene.frames() - 1;
            let pred = argmax_decode(&result.logits)?;
            let report = evaluate(&pred, &scene.labels[last], &scene.visible[last], false)?;
            match report.miou {
                Some(m) => println!("mIoU vs scene ground truth {m:.4}"),
                None => println!("mIoU vs scene ground truth undefined"),
            }
            if let Some(path) = out {
                gsdt::save(&result.logits, &path)?;
                println!(
                    "logits {:?} written to {}",
                    result.logits.shape(),
                    path.display()
                );
            }
        }
        Command::Equiv { config, cases } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(n) = cases {
                cfg.equiv.cases = n;
            }
            let report = run_equivalence(&cfg)?;
            print!("{report}");
            if !report.pass() {
                bail!("equivalence check failed");
            }
        }
        Command::Bench {
            config,
            runs,
            scene,
            csv,
        } => {
            let cfg = load_config(config.as_deref())?;
            let bundle = match scene {
                Some(dir) => SceneBundle::load(&dir)?,
                None => gen_scene(&SceneSpec::random(&cfg)?)?,
            };
            let report = run_bench(&cfg, &bundle, runs.unwrap_or(cfg.bench.runs).max(1))?;
            print!("{report}");
            if let Some(path) = csv {
                fs::write(&path, report.to_csv())?;
            }
        }
        Command::Eval {
            pred,
            gt,
            mask,
            include_empty,
            frame,
        } => {
            let pred = load_grid(&pred, frame)?;
            let gt = load_grid(&gt, frame)?;
            let mask = VisibleMask::new(load_u8(&mask, frame)?)?;
            print!("{}", evaluate(&pred, &gt, &mask, include_empty)?);
        }
        Command::Schedule {
            r,
            tmax,
            nalpha,
            points,
            out,
        } => {
            let csv = schedule_csv(&MixupSchedule::new(r, tmax, nalpha)?, points)?;
            match out {
                Some(path) => fs::write(&path, csv)?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}
