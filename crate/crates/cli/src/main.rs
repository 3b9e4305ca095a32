use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use baaf::ablation::{self, Grid};
use baaf::checkpoint::{load_checkpoint, save_checkpoint};
use baaf::config::{model_to_text, RunConfig};
use baaf::data::{gen_synthetic, load_cloud, save_cloud, CloudFormat, PointCloud, SyntheticSpec};
use baaf::diagnose;
use baaf::metrics::ConfusionMatrix;
use baaf::model::Model;
use baaf::train::{evaluate, prepare_samples, train, TrainConfig};
use clap::{Parser, Subcommand};

/// Point-cloud semantic segmentation with bilateral augmentation and
/// adaptive fusion.
#[derive(Parser, Debug)]
#[command(name = "baaf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a labelled synthetic indoor scene (.pcsb/.bin for binary, text otherwise).
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 6)]
        classes: usize,
        #[arg(long, default_value_t = 4096)]
        points: usize,
    },
    /// Train a model and write a checkpoint.
    Train {
        /// Run configuration file; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Labelled training cloud; repeat for several.
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out_checkpoint: PathBuf,
        /// Per-epoch log as `epoch, lr, loss, oa` lines.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score a checkpoint on labelled clouds.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write one predicted label per input point, in input order.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_labels: PathBuf,
    },
    /// Train and score every variant of an ablation grid.
    Ablate {
        #[arg(long)]
        grid: Grid,
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Training settings (the `train.*` keys); model keys are ignored.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed of every variant's initial parameters.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Neighbourhood compactness of raw versus shifted neighbours per level.
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn load(path: &Path) -> Result<PointCloud> {
    load_cloud(path, CloudFormat::from_path(path)).with_context(|| format!("reading {}", path.display()))
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<PointCloud>> {
    paths.iter().map(|p| load(p)).collect()
}

fn read_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(RunConfig::parse(&text).with_context(|| format!("in {}", p.display()))?)
        }
        None => Ok(RunConfig::default()),
    }
}

fn echo_config(text: &str) {
    for line in text.lines() {
        eprintln!("config {line}");
    }
}

/// Prints `text` and mirrors it to `path` when given.
fn emit(text: &str, path: Option<&Path>) -> Result<()> {
    print!("{text}");
    if let Some(p) = path {
        fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn check_classes(clouds: &[PointCloud], classes: usize) -> Result<()> {
    for c in clouds {
        if c.num_classes > classes {
            bail!(baaf::Error::Config(format!("data has {} classes, model predicts {classes}", c.num_classes)));
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynthetic { out, seed, classes, points } => {
            let spec = SyntheticSpec { points, num_classes: classes, seed, ..SyntheticSpec::default() };
            eprintln!("config {spec:?}");
            let cloud = gen_synthetic(&spec)?;
            save_cloud(&cloud, &out, CloudFormat::from_path(&out))
                .with_context(|| format!("writing {}", out.display()))?;
            println!("points={}", cloud.len());
            println!("classes={}", classes);
        }
        Command::Train { config, data, out_checkpoint, log } => {
            let cfg = read_config(config.as_deref())?;
            echo_config(&cfg.to_text());
            let clouds = load_all(&data)?;
            check_classes(&clouds, cfg.model.num_classes)?;
            let mut model = Model::new(cfg.model.clone(), cfg.train.seed)?;
            let samples = prepare_samples(&model, &clouds, &cfg.train)?;
            let mut log_file = match &log {
                Some(p) => Some(BufWriter::new(
                    fs::File::create(p).with_context(|| format!("writing {}", p.display()))?,
                )),
                None => None,
            };
            if let Some(f) = log_file.as_mut() {
                writeln!(f, "epoch, lr, loss, oa")?;
            }
            let report = train(&mut model, &samples, &cfg.train, &mut |entry| {
                println!("{entry}");
                if let Some(f) = log_file.as_mut() {
                    writeln!(f, "{entry}")?;
                }
                Ok(())
            })?;
            if let Some(mut f) = log_file {
                f.flush()?;
            }
            save_checkpoint(&model, &out_checkpoint)
                .with_context(|| format!("writing {}", out_checkpoint.display()))?;
            println!("optimizer_steps={}", report.optimizer_steps);
        }
        Command::Eval { checkpoint, data, report } => {
            let model = load_checkpoint(&checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
            echo_config(&model_to_text(model.config()));
            let clouds = load_all(&data)?;
            check_classes(&clouds, model.config().num_classes)?;
            let mut cm = ConfusionMatrix::new(model.config().num_classes);
            for c in &clouds {
                cm.merge(&evaluate(&model, c)?.0)?;
            }
            emit(&cm.scores()?.report(), report.as_deref())?;
        }
        Command::Infer { checkpoint, input, out_labels } => {
            let model = load_checkpoint(&checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
            echo_config(&model_to_text(model.config()));
            let cloud = load(&input)?;
            let geom = model.geometry(&cloud.positions)?;
            let labels = model.predict_labels(&geom, &cloud.input_features(model.config().input_channels)?)?;
            let mut w = BufWriter::new(
                fs::File::create(&out_labels).with_context(|| format!("writing {}", out_labels.display()))?,
            );
            for l in &labels {
                writeln!(w, "{l}")?;
            }
            w.flush()?;
            println!("points={}", labels.len());
        }
        Command::Ablate { grid, data, epochs, report, config, seed } => {
            let cfg = read_config(config.as_deref())?;
            let train_cfg = TrainConfig { epochs, ..cfg.train };
            let clouds = load_all(&data)?;
            let mut echoed = RunConfig { model: cfg.model.clone(), train: train_cfg.clone() }.to_text();
            echoed.push_str(&format!("ablate.grid = {grid}\nablate.seed = {seed}\n"));
            echo_config(&echoed);
            let rows = ablation::run_grid(grid, &clouds, &train_cfg, seed, cfg.model.input_channels, &mut |row| {
                eprintln!("finished {} miou={}", row.name, row.scores.miou);
            })?;
            emit(&ablation::table(&rows), report.as_deref())?;
        }
        Command::Diagnose { checkpoint, data, report } => {
            let model = load_checkpoint(&checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
            echo_config(&model_to_text(model.config()));
            let cloud = load(&data)?;
            let stats = diagnose::diagnose(&model, &cloud)?;
            emit(&diagnose::report(&stats), report.as_deref())?;
        }
    }
    Ok(())
}

/// `error kind=<kind> message="<text>"` on one line.
fn error_line(err: &anyhow::Error) -> String {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<baaf::Error>())
        .map_or("other", baaf::Error::kind);
    let message = format!("{err:#}").replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
    format!("error kind={kind} message=\"{message}\"")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
