mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use diprune::error::Error;

use report::Recorder;

#[derive(Parser)]
#[command(name = "diprune", version, about = "Channel scoring, pruning and quantization for small networks")]
struct Cli {
    /// Worker threads for greedy candidate evaluation.
    #[arg(long, global = true, env = "DIPRUNE_THREADS", default_value_t = 1)]
    threads: usize,

    /// More stderr logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct DataArgs {
    /// Dataset: `.csv` (features..., label), `.json` synthetic spec, or an IDX images file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Override the format inferred from the extension.
    #[arg(long, value_enum)]
    pub data_format: Option<DataFormat>,
    /// Number of classes (default: max label + 1).
    #[arg(long)]
    pub classes: Option<usize>,
    /// Hold out this fraction of the data and use only one part of the split.
    #[arg(long)]
    pub holdout: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub holdout_seed: u64,
    #[arg(long, value_enum, default_value_t = Part::Train)]
    pub part: Part,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum DataFormat {
    Idx,
    Csv,
    Synthetic,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Part {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Tap {
    Act,
    Preact,
    Bn,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Influence {
    Derivative,
    Exact,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Uniform,
    Greedy,
    Profile,
}

#[derive(Args, Clone)]
pub struct ScoreArgs {
    /// di, l1, fpgm, slimming, random, snr, fisher, symdiv or ttest.
    #[arg(long, default_value = "di")]
    pub heuristic: String,
    #[arg(long, value_enum, default_value_t = Tap::Act)]
    pub tap: Tap,
    #[arg(long, default_value_t = 512)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.1)]
    pub rho: f64,
    #[arg(long, value_enum, default_value_t = Influence::Derivative)]
    pub influence: Influence,
}

#[derive(Subcommand)]
enum Command {
    /// Score every prunable channel with one heuristic.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        score: ScoreArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Remove channels: uniformly, greedily under a FLOPs budget, or by a stage profile.
    Prune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Score table; greedy mode scores on the fly when absent.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Fraction of channels removed per layer (uniform).
        #[arg(long)]
        ratio: Option<f64>,
        /// Fraction of the original FLOPs to keep (greedy).
        #[arg(long)]
        flops_goal: Option<f64>,
        /// FLOPs removed per greedy step, as a fraction of the original.
        #[arg(long)]
        delta: Option<f64>,
        /// Fraction of the data held out for greedy candidate evaluation.
        #[arg(long, default_value_t = 0.1)]
        val_fraction: f64,
        /// Re-score the network after every greedy step.
        #[arg(long)]
        recompute_scores: bool,
        #[arg(long)]
        profile: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        score: ScoreArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract per-stage keep ratios from an original/pruned pair.
    Distill {
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        pruned: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Two-level per-filter quantization guided by channel scores.
    Quantize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, default_value_t = 4)]
        bits_high: u8,
        #[arg(long, default_value_t = 2)]
        bits_low: u8,
        /// Fraction of filters per layer stored at the high bit width.
        #[arg(long, default_value_t = 0.5)]
        split: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classification accuracy.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// FLOPs (multiply-accumulates) and parameter counts.
    Flops {
        #[arg(long)]
        model: PathBuf,
    },
    /// Train or fine-tune a sequential MLP with SGD and momentum.
    Train {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.9)]
        momentum: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a freshly initialized MLP.
    Init {
        #[arg(long)]
        inputs: usize,
        /// Hidden widths, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "64,64")]
        hidden: Vec<usize>,
        #[arg(long)]
        classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::BudgetUnreachable { .. } => 3,
        Error::Numerical(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let name = match &cli.command {
        Command::Score { .. } => "score",
        Command::Prune { .. } => "prune",
        Command::Distill { .. } => "distill",
        Command::Quantize { .. } => "quantize",
        Command::Eval { .. } => "eval",
        Command::Flops { .. } => "flops",
        Command::Train { .. } => "train",
        Command::Init { .. } => "init",
    };
    let mut rec = Recorder::new(name);
    let result = run(cli, &mut rec);
    let code = match &result {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            rec.metric("error", e.to_string());
            exit_code(e)
        }
    };
    if code != 0 {
        rec.metric("exit_code", code);
    }
    let report = rec.finish();
    println!("{}", serde_json::to_string(&report).expect("report serializes"));
    ExitCode::from(code)
}

fn run(cli: Cli, rec: &mut Recorder) -> diprune::error::Result<()> {
    use commands::*;
    match cli.command {
        Command::Score { model, data, score, seed, out } => score_cmd(rec, &model, &data, &score, seed, &out),
        Command::Prune {
            model,
            mode,
            scores,
            ratio,
            flops_goal,
            delta,
            val_fraction,
            recompute_scores,
            profile,
            data,
            score,
            seed,
            out,
        } => prune_cmd(
            rec,
            PruneArgs {
                model,
                mode,
                scores,
                ratio,
                flops_goal,
                delta,
                val_fraction,
                recompute_scores,
                profile,
                data,
                score,
                seed,
                threads: cli.threads,
                out,
            },
        ),
        Command::Distill { original, pruned, out } => distill_cmd(rec, &original, &pruned, &out),
        Command::Quantize {
            model,
            scores,
            bits_high,
            bits_low,
            split,
            out,
        } => quantize_cmd(rec, &model, &scores, bits_high, bits_low, split, &out),
        Command::Eval { model, data } => eval_cmd(rec, &model, &data),
        Command::Flops { model } => flops_cmd(rec, &model),
        Command::Train {
            model,
            data,
            epochs,
            lr,
            batch_size,
            momentum,
            seed,
            out,
        } => {
            let cfg = diprune::trainer::TrainConfig {
                epochs,
                batch_size,
                lr,
                momentum,
                seed,
            };
            train_cmd(rec, &model, &data, &cfg, &out)
        }
        Command::Init {
            inputs,
            hidden,
            classes,
            seed,
            out,
        } => init_cmd(rec, inputs, &hidden, classes, seed, &out),
    }
}
