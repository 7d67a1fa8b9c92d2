use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(name = "avsr", version, about = "Desk-scale 2D+1D video super-resolution distillation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a procedural dataset with ground-truth flow.
    GenData(GenDataArgs),
    /// Run stage 1 (distillation) or stage 2 (adversarial) training.
    Train(TrainArgs),
    /// Evaluate a model on the held-out clips and write a JSON report.
    Eval(EvalArgs),
    /// Slice one pixel row of a clip across time into a width×time image.
    Profile(ProfileArgs),
    /// Print the student parameter breakdown.
    Params(ParamsArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub clips: usize,
    #[arg(long, default_value_t = 5)]
    pub frames: usize,
    #[arg(long, num_args = 2, value_names = ["H", "W"], default_values_t = [64, 64])]
    pub size: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// static, translate, rotate_texture or mixed.
    #[arg(long, default_value = "mixed")]
    pub motion: String,
    /// Trailing clips marked as the test split.
    #[arg(long, default_value_t = 2)]
    pub test_clips: usize,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named ablation preset applied on top of the config.
    #[arg(long)]
    pub profile: Option<String>,
    /// Dataset directory; falls back to `data.dir` in the config.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint to continue from. A stage-1 checkpoint with `--stage 2`
    /// starts stage 2 from it.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint whose student is evaluated.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// Registered SR model: student or nearest.
    #[arg(long, default_value = "student")]
    pub model: String,
    /// Degradation seed; clip `i` uses `seed + i`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct ProfileArgs {
    /// Clip directory holding numbered frames.
    #[arg(long)]
    pub video: PathBuf,
    /// `center` or a row index.
    #[arg(long, default_value = "center")]
    pub row: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ParamsArgs {
    #[arg(long, conflicts_with = "config")]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, conflicts_with = "ckpt")]
    pub profile: Option<String>,
    /// Print JSON instead of aligned text.
    #[arg(long)]
    pub json: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text
                .lines()
                .map(|l| l.trim_start_matches("error: ").trim())
                .find(|l| !l.is_empty())
                .unwrap_or("invalid arguments");
            eprintln!("error[E_USAGE]: {first}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Profile(a) => commands::profile(a),
        Command::Params(a) => commands::params(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.message().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.code());
            ExitCode::FAILURE
        }
    }
}
