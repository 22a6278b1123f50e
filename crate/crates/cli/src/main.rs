use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use emg2text::Result;
use emg2text_cli::commands::{self, Baseline, EvalArgs, SplitName};
use emg2text_cli::config::{Overrides, RunConfig};
use emg2text_cli::manifest::{unix_now, write_manifest};

/// Unvoiced EMG to text: corpus generation, LM pretraining, adaptor
/// training, evaluation and experiments.
#[derive(Parser)]
#[command(name = "emg2text", version)]
struct Cli {
    /// JSON run configuration; defaults apply to absent keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Top-level seed (overrides the file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for featurization and evaluation.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Replace existing outputs of the command.
    #[arg(long, global = true)]
    force: bool,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus.
    Gen,
    /// Extract and cache handcrafted features.
    Featurize,
    /// Pretrain the language model on training transcripts.
    PretrainLm,
    /// Train the adaptor against the frozen LM on every fold.
    Train,
    /// Decode a split with a checkpoint or a baseline and score it.
    Eval {
        /// Checkpoint directory; defaults to the `train` output of the fold.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Score a baseline instead of a checkpoint.
        #[arg(long, value_enum, conflicts_with = "checkpoint")]
        baseline: Option<Baseline>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
        #[arg(long, default_value_t = 0)]
        fold: usize,
    },
    /// Train and compare the architecture and objective variants.
    Ablate,
    /// Train on growing amounts of data.
    Sweep,
    /// Person identification from pooled LM logits.
    Pid,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Featurize => "featurize",
            Command::PretrainLm => "pretrain-lm",
            Command::Train => "train",
            Command::Eval { .. } => "eval",
            Command::Ablate => "ablate",
            Command::Sweep => "sweep",
            Command::Pid => "pid",
        }
    }

    fn output_dir(&self) -> &'static str {
        match self {
            Command::Gen => commands::CORPUS_DIR,
            Command::Featurize => commands::FEATURES_DIR,
            Command::PretrainLm => commands::LM_DIR,
            Command::Train => commands::TRAIN_DIR,
            Command::Eval { .. } => commands::EVAL_DIR,
            Command::Ablate => commands::ABLATE_DIR,
            Command::Sweep => commands::SWEEP_DIR,
            Command::Pid => commands::PID_DIR,
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let overrides = Overrides { seed: cli.seed, output_dir: cli.out.clone() };
    let cfg = RunConfig::resolve(cli.config.as_deref(), &overrides)?;
    if cli.print_config {
        print!("{}", cfg.to_json());
        return Ok(());
    }
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| emg2text::Error::Config(format!("--jobs: {e}")))?;
    }
    let started = unix_now();
    let force = cli.force;
    let summary = match &cli.command {
        Command::Gen => commands::gen(&cfg, force)?,
        Command::Featurize => commands::featurize(&cfg, force)?,
        Command::PretrainLm => commands::pretrain(&cfg, force)?,
        Command::Train => commands::train(&cfg, force)?,
        Command::Eval { checkpoint, baseline, split, fold } => {
            let args = EvalArgs { checkpoint: checkpoint.clone(), baseline: *baseline, split: *split, fold: *fold };
            commands::eval(&cfg, &args, force)?
        }
        Command::Ablate => commands::ablate(&cfg, force)?,
        Command::Sweep => commands::sweep(&cfg, force)?,
        Command::Pid => commands::pid(&cfg, force)?,
    };
    let name = cli.command.name();
    write_manifest(&cfg, name, cli.command.output_dir(), summary.clone(), started)?;
    println!("{name}: {}", serde_json::to_string(&summary)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.class(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
