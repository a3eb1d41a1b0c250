//! Command-line harness: `run` trains a single configuration, `sweep`
//! executes a hyperparameter search, `eval` scores a checkpoint, and `plot`
//! renders SVG charts from metrics files.
//!
//! Exit codes: 0 success, 1 configuration error (bad flags, bad config
//! file, checkpoint mismatch), 2 runtime failure.

mod plot;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use auxrl::config::{RunConfig, SweepConfig};
use auxrl::metrics::{self, MetricsWriter};
use auxrl::net::NetworkParams;
use auxrl::optim::SharedParamStore;
use auxrl::trainer::{self, TrainOptions, METRIC_COLUMNS};
use auxrl::{checkpoint, sweep};

#[derive(Parser)]
#[command(name = "auxrl", about = "Actor-critic agent with auxiliary tasks on pixel gridworlds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML configuration file; defaults apply for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for metrics, checkpoints and plots.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint to resume from (run) or to evaluate (eval).
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Overrides the seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory receiving PPM frames of the first evaluation episode.
    #[arg(long)]
    frames_dump: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write metrics plus a final checkpoint.
    Run(CommonArgs),
    /// Run the hyperparameter sweep described by the config file.
    Sweep(CommonArgs),
    /// Evaluate a checkpoint with the greedy policy.
    Eval(CommonArgs),
    /// Render SVG plots from the metrics files in --out.
    Plot(CommonArgs),
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            std::process::exit(1); // bad flags are a configuration error
        }
        Err(e) => {
            let _ = e.print(); // --help / --version
            std::process::exit(0);
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Plot(args) => cmd_plot(args),
    };
    match result {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(exit_code(&e));
        }
    }
}

fn exit_code(e: &anyhow::Error) -> i32 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<auxrl::Error>() {
            if matches!(err, auxrl::Error::ConfigInvalid(_) | auxrl::Error::ResumeMismatch(_)) {
                return 1;
            }
        }
    }
    2
}

fn load_run_config(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn required_out(args: &CommonArgs) -> Result<PathBuf> {
    let out = args
        .out
        .clone()
        .ok_or_else(|| auxrl::Error::ConfigInvalid("--out <dir> is required for this command".into()))?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok(out)
}

fn build_store(cfg: &RunConfig) -> Result<Arc<SharedParamStore>> {
    let arch = cfg.arch()?;
    let params = NetworkParams::init(arch, cfg.features.feature_control, cfg.seed)?;
    Ok(Arc::new(SharedParamStore::new(params, cfg.optimizer)))
}

fn cmd_run(args: CommonArgs) -> Result<()> {
    let cfg = load_run_config(&args)?;
    let out = required_out(&args)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml_string())?;

    let store = build_store(&cfg)?;
    let metrics_path = out.join("metrics.csv");
    let metrics = if let Some(ckpt) = &args.resume {
        let steps = checkpoint::restore(ckpt, &store)?;
        eprintln!("resumed from {} at step {steps}", ckpt.display());
        if metrics_path.exists() {
            MetricsWriter::append(&metrics_path, &METRIC_COLUMNS)?
        } else {
            MetricsWriter::create(&metrics_path, &METRIC_COLUMNS)?
        }
    } else {
        MetricsWriter::create(&metrics_path, &METRIC_COLUMNS)?
    };
    if let Some(dir) = &args.frames_dump {
        std::fs::create_dir_all(dir)?;
    }

    let report = trainer::train(
        &cfg,
        &store,
        TrainOptions { metrics: Some(metrics), frames_dump: args.frames_dump.clone() },
    )?;
    checkpoint::save(&out.join("final.ckpt"), &store)?;
    println!(
        "done: {} env steps, final eval return {}, target {}",
        report.env_steps,
        report.final_eval_return.map_or("n/a".into(), |r| format!("{r:.3}")),
        if report.reached_target { "reached" } else { "not reached" }
    );
    Ok(())
}

fn cmd_sweep(args: CommonArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => SweepConfig::from_file(path)?,
        None => SweepConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.sweep_seed = seed;
    }
    let out = required_out(&args)?;
    let results = sweep::run_sweep(&cfg, &out)?;
    let best = results
        .iter()
        .max_by(|a, b| a.score.partial_cmp(&b.score).expect("finite scores"))
        .expect("sweep produced runs");
    println!(
        "sweep done: {} runs, best score {:.3} (lr {:.5}, lambda_pc {:.4}, seed {})",
        results.len(),
        best.score,
        best.learning_rate,
        best.lambda_pc,
        best.seed
    );
    Ok(())
}

fn cmd_eval(args: CommonArgs) -> Result<()> {
    let cfg = load_run_config(&args)?;
    let ckpt = args
        .resume
        .as_ref()
        .ok_or_else(|| auxrl::Error::ConfigInvalid("--resume <ckpt> is required for eval".into()))?;
    let store = build_store(&cfg)?;
    checkpoint::restore(ckpt, &store)?;
    if let Some(dir) = &args.frames_dump {
        std::fs::create_dir_all(dir)?;
    }
    let report = trainer::evaluate(
        &store.snapshot(),
        &cfg.level,
        cfg.eval_episodes,
        cfg.seed,
        args.frames_dump.as_deref(),
    )?;
    println!(
        "eval: mean return {:.3}, mean episode steps {:.1} over {} episodes",
        report.mean_return, report.mean_steps, cfg.eval_episodes
    );
    Ok(())
}

fn cmd_plot(args: CommonArgs) -> Result<()> {
    let out = required_out(&args)?;
    let mut made_any = false;

    let mut curves = Vec::new();
    for entry in csv_files(&out)? {
        let name = entry.file_stem().and_then(|s| s.to_str()).unwrap_or("run").to_string();
        if name == "summary" || name == "robustness" {
            continue;
        }
        let (header, rows) = metrics::read_rows(&entry)?;
        let (Some(xi), Some(yi)) = (col(&header, "step"), col(&header, "eval_mean_return")) else {
            continue;
        };
        let points: Vec<(f64, f64)> = rows.iter().map(|r| (r[xi], r[yi])).collect();
        if !points.is_empty() {
            curves.push(plot::Series { label: name, points });
        }
    }
    if !curves.is_empty() {
        let svg = plot::line_plot("Evaluation return", "environment steps", "mean return", &curves);
        std::fs::write(out.join("learning_curves.svg"), svg)?;
        made_any = true;
    }

    let robustness = out.join("robustness.csv");
    if robustness.exists() {
        let (header, rows) = metrics::read_rows(&robustness)?;
        if let Some(si) = col(&header, "score") {
            let points: Vec<(f64, f64)> = rows.iter().enumerate().map(|(i, r)| (i as f64 + 1.0, r[si])).collect();
            let series = [plot::Series { label: "runs, best first".into(), points }];
            let svg = plot::line_plot("Robustness across the sweep", "run rank", "score", &series);
            std::fs::write(out.join("robustness.svg"), svg)?;
            made_any = true;
        }
    }

    if !made_any {
        return Err(auxrl::Error::ConfigInvalid(format!(
            "no plottable metrics files found in {}",
            out.display()
        ))
        .into());
    }
    println!("plots written to {}", out.display());
    Ok(())
}

fn col(header: &[String], name: &str) -> Option<usize> {
    header.iter().position(|h| h == name)
}

fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
