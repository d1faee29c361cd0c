//! advlab: train, attack and dissect small robust models from one binary.
//!
//! Exit codes are a stable contract: 0 success, 2 input or config error,
//! 3 artifact or compatibility error. Standard output stays machine
//! readable (eval prints its report as JSON there); everything meant for
//! humans goes to standard error.

mod config;
mod metrics;
mod output;
mod plot;

use std::path::PathBuf;
use std::time::Instant;

use advlab_core::analysis::{self, OverfitGap};
use advlab_core::train::{self, load_checkpoint, save_checkpoint, MetricsRecord};
use advlab_core::Error;
use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::output::{write_atomic, CliError};

#[derive(Parser)]
#[command(name = "advlab", version, about = "Desk-scale adversarial training laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run adversarial training from a JSON experiment config.
    Train(TrainArgs),
    /// Evaluate a checkpoint under the attack suite; prints JSON to stdout.
    Eval(EvalArgs),
    /// Bias-variance decomposition over a training-budget sweep.
    Bvdecomp(BvdecompArgs),
    /// Natural accuracy of a checkpoint on parametrically corrupted data.
    CorruptEval(CorruptEvalArgs),
    /// Render a metrics CSV as an SVG accuracy chart.
    Plot(PlotArgs),
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides out_dir from the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    /// Bitwise-reproducible mode: wall seconds are recorded as 0.
    #[arg(long)]
    serial: bool,
    /// Directory dataset files resolve against (else ADVLAB_DATA_DIR).
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Experiment config naming the dataset and evaluation suite.
    #[arg(long)]
    config: PathBuf,
    /// Override the evaluation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory dataset files resolve against (else ADVLAB_DATA_DIR).
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(clap::Args)]
struct BvdecompArgs {
    /// Experiment config with a bv section.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides out_dir from the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override the training seed used for both halves.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory dataset files resolve against (else ADVLAB_DATA_DIR).
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(clap::Args)]
struct CorruptEvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Experiment config with a corruption section.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides out_dir from the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Directory dataset files resolve against (else ADVLAB_DATA_DIR).
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(clap::Args)]
struct PlotArgs {
    /// Metrics CSV produced by the train subcommand.
    metrics: PathBuf,
    /// SVG file to write.
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bvdecomp(args) => cmd_bvdecomp(args),
        Command::CorruptEval(args) => cmd_corrupt_eval(args),
        Command::Plot(args) => cmd_plot(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.code());
    }
}

fn data_dir(flag: Option<PathBuf>) -> Option<PathBuf> {
    flag.or_else(|| std::env::var_os("ADVLAB_DATA_DIR").map(PathBuf::from))
}

fn out_dir(flag: Option<PathBuf>, cfg: &config::ExperimentConfig) -> Result<PathBuf, CliError> {
    flag.or_else(|| cfg.out_dir.clone()).ok_or_else(|| {
        CliError::input("no output directory: pass --out-dir or set out_dir in the config")
    })
}

/// Errors surfacing from a training run, after the config was accepted.
fn train_error(e: Error) -> CliError {
    match &e {
        Error::Diverged { epoch, batch, last_good } => CliError::artifact(format!(
            "training diverged at epoch {epoch}, batch {batch}; last stable state was after epoch {}",
            last_good.epoch
        )),
        _ => CliError::input(format!("training setup: {e}")),
    }
}

#[derive(Serialize)]
struct Summary {
    epochs_run: usize,
    best_epoch: u32,
    final_epoch: u32,
    wall_s_total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    overfit_gap: Option<OverfitGap>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_metrics: Option<MetricsRecord>,
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let mut cfg = config::load_experiment_file(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        cfg.train.epochs = epochs;
    }
    let out = out_dir(args.out_dir, &cfg)?;
    let dir = data_dir(args.data_dir);
    let (train_set, test_set) = config::load_datasets(&cfg.dataset, dir.as_deref())?;
    cfg.train
        .check_dataset(&train_set, "training")
        .and_then(|()| cfg.train.check_dataset(&test_set, "test"))
        .map_err(|e| CliError::input(format!("config key \"train.arch\": {e}")))?;

    eprintln!(
        "training: {} epochs, {} train / {} test samples, seed {}",
        cfg.train.epochs,
        train_set.len(),
        test_set.len(),
        cfg.train.seed
    );
    let t0 = Instant::now();
    let run = train::train::<f64>(&cfg.train, &train_set, &test_set).map_err(train_error)?;
    let wall_total = t0.elapsed().as_secs_f64();
    eprintln!("trained in {wall_total:.1}s");

    let gap = analysis::overfit_gap(&run.metrics).ok();
    let mut final_metrics = run.metrics.last().copied();
    if args.serial {
        if let Some(m) = &mut final_metrics {
            m.wall_time = 0.0;
        }
    }
    let summary = Summary {
        epochs_run: run.metrics.len(),
        best_epoch: run.best.epoch,
        final_epoch: run.last.epoch,
        wall_s_total: if args.serial { 0.0 } else { wall_total },
        overfit_gap: gap,
        final_metrics,
    };

    write_atomic(&out.join("config.json"), config::canonical_json(&cfg).as_bytes())?;
    write_atomic(
        &out.join("metrics.csv"),
        metrics::render_csv(&run.metrics, args.serial)?.as_bytes(),
    )?;
    save_checkpoint(out.join("best.ckpt"), &run.best)
        .map_err(|e| CliError::artifact(format!("writing best.ckpt: {e}")))?;
    save_checkpoint(out.join("final.ckpt"), &run.last)
        .map_err(|e| CliError::artifact(format!("writing final.ckpt: {e}")))?;
    let mut summary_json =
        serde_json::to_string_pretty(&summary).expect("summary serializes");
    summary_json.push('\n');
    write_atomic(&out.join("summary.json"), summary_json.as_bytes())?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&args.checkpoint)
        .map_err(|e| CliError::artifact(format!("{}: {e}", args.checkpoint.display())))?;
    let cfg = config::load_experiment_file(&args.config)?;
    if ckpt.arch != cfg.train.arch {
        return Err(CliError::artifact(format!(
            "checkpoint architecture {:?} does not match the configured {:?}",
            ckpt.arch, cfg.train.arch
        )));
    }
    let dir = data_dir(args.data_dir);
    let (_, test_set) = config::load_datasets(&cfg.dataset, dir.as_deref())?;
    let mut suite = cfg.train.eval.clone();
    if let Some(seed) = args.seed {
        suite.seed = seed;
    }
    let model = ckpt
        .to_eval_model::<f64>()
        .map_err(|e| CliError::artifact(format!("checkpoint: {e}")))?;
    let report = analysis::evaluate(&model, &test_set, &suite)
        .map_err(|e| CliError::artifact(format!("evaluation: {e}")))?;
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    print!("{json}");
    Ok(())
}

fn cmd_bvdecomp(args: BvdecompArgs) -> Result<(), CliError> {
    let mut cfg = config::load_experiment_file(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    let out = out_dir(args.out_dir, &cfg)?;
    let (bv_cfg, eval_attack) = cfg.bv_config()?;
    let dir = data_dir(args.data_dir);
    let (train_set, test_set) = config::load_datasets(&cfg.dataset, dir.as_deref())?;
    cfg.train
        .check_dataset(&train_set, "training")
        .map_err(|e| CliError::input(format!("config key \"train.arch\": {e}")))?;

    eprintln!(
        "bias-variance: {} sweep points, {} train samples per half",
        bv_cfg.sweep_eps.len(),
        train_set.len() / 2
    );
    let t0 = Instant::now();
    let report = analysis::bias_variance(&train_set, &test_set, &bv_cfg, &eval_attack)
        .map_err(train_error)?;
    eprintln!("decomposed in {:.1}s", t0.elapsed().as_secs_f64());

    let mut csv = String::from("sweep_eps,nat_risk,nat_bias,nat_var,adv_risk,adv_bias,adv_var\n");
    for p in &report.points {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            metrics::fmt_sig(p.train_eps),
            metrics::fmt_sig(p.natural.risk),
            metrics::fmt_sig(p.natural.bias),
            metrics::fmt_sig(p.natural.variance),
            metrics::fmt_sig(p.adversarial.risk),
            metrics::fmt_sig(p.adversarial.bias),
            metrics::fmt_sig(p.adversarial.variance),
        ));
    }
    write_atomic(&out.join("config.json"), config::canonical_json(&cfg).as_bytes())?;
    write_atomic(&out.join("bv.csv"), csv.as_bytes())?;
    write_atomic(&out.join("bv.svg"), plot::bv_chart(&report).as_bytes())?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn cmd_corrupt_eval(args: CorruptEvalArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&args.checkpoint)
        .map_err(|e| CliError::artifact(format!("{}: {e}", args.checkpoint.display())))?;
    let cfg = config::load_experiment_file(&args.config)?;
    let section = cfg.corruption.clone().ok_or_else(|| {
        CliError::input("config key \"corruption\": corrupt-eval needs a corruption section")
    })?;
    if ckpt.arch != cfg.train.arch {
        return Err(CliError::artifact(format!(
            "checkpoint architecture {:?} does not match the configured {:?}",
            ckpt.arch, cfg.train.arch
        )));
    }
    let out = out_dir(args.out_dir, &cfg)?;
    let dir = data_dir(args.data_dir);
    let (_, test_set) = config::load_datasets(&cfg.dataset, dir.as_deref())?;
    let model = ckpt
        .to_eval_model::<f64>()
        .map_err(|e| CliError::artifact(format!("checkpoint: {e}")))?;
    let report = analysis::corruption_eval(
        &model,
        &test_set,
        &section.kinds,
        &section.severities,
        section.seed,
    )
    .map_err(|e| CliError::artifact(format!("corruption evaluation: {e}")))?;
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    write_atomic(&out.join("corruption.json"), json.as_bytes())?;
    eprintln!(
        "mean corrupted accuracy {:.4} over {} cells; wrote {}",
        report.mean_acc,
        report.cells.len(),
        out.display()
    );
    Ok(())
}

fn cmd_plot(args: PlotArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.metrics)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", args.metrics.display())))?;
    let rows = metrics::parse_csv(&text)?;
    let svg = plot::metrics_chart(&rows)?;
    write_atomic(&args.out, svg.as_bytes())?;
    eprintln!("wrote {}", args.out.display());
    Ok(())
}
