use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shapeseg::data::{load_dataset, SyntheticConfig};
use shapeseg::harness::{self, read_toml, ExperimentConfig};
use shapeseg::postproc::{Connectivity, PostprocConfig};
use shapeseg::trainer::TrainConfig;
use shapeseg::{Error, ErrorKind};

const USAGE: u8 = 1;
const DATA: u8 = 2;
const ABORT: u8 = 3;

#[derive(Parser)]
#[command(name = "shapeseg", version, about = "Shape-prior adversarial segmentation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Post {
    /// Probability threshold in (0, 1).
    #[arg(long)]
    threshold: Option<f64>,
    /// 3-d neighbourhood for largest-component filtering: 6, 18 or 26.
    #[arg(long)]
    connectivity: Option<Connectivity>,
}

impl Post {
    fn apply(&self, p: &mut PostprocConfig) {
        if let Some(t) = self.threshold {
            p.threshold = t;
        }
        if let Some(c) = self.connectivity {
            p.connectivity = c;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (scapula-like v1 unless --config is given).
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Stage 1: train the shape auto-encoder on dataset masks.
    TrainCae {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated subject ids; all subjects when absent.
        #[arg(long, value_delimiter = ',')]
        subjects: Option<Vec<String>>,
    },
    /// Stage 2: train the segmenter, with a stage-1 encoder when the ablation uses one.
    TrainSeg {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        subjects: Option<Vec<String>>,
    },
    /// Score predicted masks against groundtruth masks.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[command(flatten)]
        post: Post,
        /// Write the report as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Leave-one-out ablation over all configured methods.
    Loo {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        post: Post,
    },
    /// Render a results table and overlay images.
    Report {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overlays per subject and method, largest groundtruth slices first.
        #[arg(long, default_value_t = 1)]
        slices: usize,
    },
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Config {
        field: "arguments".into(),
        reason: msg.into(),
    }
}

fn required(out: Option<PathBuf>) -> Result<PathBuf, Error> {
    out.ok_or_else(|| usage("--out is required"))
}

fn train_config(common: &Common) -> Result<TrainConfig, Error> {
    let mut cfg: TrainConfig = match &common.config {
        Some(p) => read_toml(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
        cfg.augmentation.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::GenData { common } => {
            let mut cfg = match &common.config {
                Some(p) => read_toml(p)?,
                None => SyntheticConfig::scapula_like_v1(),
            };
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            let out = required(common.out)?;
            let ids = harness::gen_data(&cfg, &out)?;
            println!("wrote {} subjects to {}", ids.len(), out.display());
        }
        Command::TrainCae { common, data, subjects } => {
            let cfg = train_config(&common)?;
            let out = required(common.out.clone())?;
            let ds = load_dataset(&data)?;
            let dice = harness::train_cae_to(&ds, subjects.as_deref(), &cfg, &out)?;
            println!("reconstruction dice on training masks {dice:.4}");
        }
        Command::TrainSeg { common, data, encoder, subjects } => {
            let cfg = train_config(&common)?;
            let out = required(common.out.clone())?;
            let ds = load_dataset(&data)?;
            harness::train_seg_to(&ds, subjects.as_deref(), encoder.as_deref(), &cfg, &out)?;
            println!("wrote checkpoints to {}", out.display());
        }
        Command::Evaluate { pred, gt, post, out } => {
            let mut p = PostprocConfig::default();
            post.apply(&mut p);
            let report = harness::evaluate(&pred, &gt, &p, post.connectivity.is_some())?;
            for s in &report.subjects {
                println!(
                    "{}: dice {:.2} sens {:.2} spec {:.2} jacc {:.2} hd {}",
                    s.subject_id,
                    s.dice,
                    s.sensitivity,
                    s.specificity,
                    s.jaccard,
                    s.hausdorff.mm().map_or("undefined".into(), |h| format!("{h:.2} mm"))
                );
            }
            println!("mean dice {:.2} ± {:.2} over {} subjects", report.dice.mean, report.dice.std, report.dice.n);
            if let Some(path) = out {
                let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Serde(e.to_string()))?;
                std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })?;
            }
        }
        Command::Loo { common, post } => {
            let path = common.config.as_ref().ok_or_else(|| usage("loo needs --config"))?;
            let mut cfg: ExperimentConfig = read_toml(path)?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            if let Some(out) = common.out {
                cfg.out = out;
            }
            post.apply(&mut cfg.postproc);
            let table = harness::loo(&cfg, &mut |line| eprintln!("{line}"))?;
            print!("{}", harness::to_markdown(&table));
            if table.has_aborts() {
                return Ok(ABORT);
            }
        }
        Command::Report { table, out, slices } => {
            let out = out.unwrap_or_else(|| table.parent().map(|p| p.join("report")).unwrap_or_default());
            let summary = harness::report(&table, &out, slices)?;
            print!("{}", summary.markdown);
            println!("{} overlay images in {}", summary.overlays.len(), out.display());
            for (m, s) in &summary.skipped {
                println!("no prediction for {m}/{s}");
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => USAGE,
                ErrorKind::Data => DATA,
                ErrorKind::TrainingAbort => ABORT,
            })
        }
    }
}
