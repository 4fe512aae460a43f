//! `tvconv`: dataset synthesis, training, ablations, cost reports,
//! gradient checks and affinity-map export.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod setup;

#[derive(Parser, Debug)]
#[command(name = "tvconv", version, about = "Translation variant convolution toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Directory that receives every artifact of the command.
    #[arg(short, long, global = true, default_value = "out")]
    out: PathBuf,

    /// More progress output; repeat for per-epoch lines.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Only errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// `key=value` config file.
    #[arg(short, long)]
    pub config: Option<PathBuf>,

    /// Override one config value; repeatable, applied after the file.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic layout dataset from the `data.*` keys.
    Synth(ConfigArgs),
    /// Train one model and write its checkpoint.
    Train(ConfigArgs),
    /// Accuracy of a checkpoint on a stored dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// MACs, parameters and activation memory of an architecture file.
    Count { arch: PathBuf },
    /// Finite-difference check of every differentiable op.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
    /// Write every TVConv layer's affinity maps as PGM images.
    ExportAffinity {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Multi-seed ablation study.
    Ablate {
        name: Ablation,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    Init,
    Generator,
    Stage,
    Affine,
}

/// Output level shared by all commands.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Verbosity {
    Quiet,
    Normal,
    Verbose,
    Debug,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            eprintln!("{}", text.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    let verbosity = match (cli.quiet, cli.verbose) {
        (true, _) => Verbosity::Quiet,
        (false, 0) => Verbosity::Normal,
        (false, 1) => Verbosity::Verbose,
        _ => Verbosity::Debug,
    };
    let out = cli.out.as_path();
    let result = match &cli.command {
        Command::Synth(args) => commands::synth(args, out, verbosity),
        Command::Train(args) => commands::train(args, out, verbosity),
        Command::Eval { checkpoint, dataset } => commands::eval(checkpoint, dataset, out, verbosity),
        Command::Count { arch } => commands::count(arch, out, verbosity),
        Command::Gradcheck { seed, tol, instances } => commands::gradcheck(*seed, *tol, *instances, out, verbosity),
        Command::ExportAffinity { checkpoint } => commands::export_affinity(checkpoint, out, verbosity),
        Command::Ablate { name, config } => commands::ablate(*name, config, out, verbosity),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}");
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
