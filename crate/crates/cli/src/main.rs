use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use f2ocl_core::ErrorKind;

mod commands;

/// Rehearsal-free, task-free online continual learning with class prompts.
#[derive(Debug, Parser)]
#[command(name = "f2ocl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct ConfigArgs {
    /// Run configuration (JSON). Defaults are used when omitted.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the seed in the config file.
    #[arg(long, env = "F2OCL_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic class-incremental stream.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory for train.csv, test.csv and groups.json [default: config output_dir].
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Train on a stream and write the model state plus a per-batch log.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Stream directory or train.csv path.
        #[arg(long)]
        stream: PathBuf,
        /// Output directory for state.json, train_log.csv and checkpoints/ [default: config output_dir].
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Override the number of passes per batch.
        #[arg(long)]
        passes: Option<usize>,
    },
    /// Evaluate a trained state and write metrics.json and matrix.csv.
    Eval {
        /// State file written by `train`.
        #[arg(long)]
        state: PathBuf,
        /// Test directory or test.csv path.
        #[arg(long)]
        test: PathBuf,
        /// Number of keys retrieved (prompts concatenated) per test sample.
        #[arg(long, default_value_t = 1)]
        keys: usize,
        /// Force each sample's own class prompt (upper bound on key selection).
        #[arg(long, conflicts_with = "ablation_no_prompt")]
        oracle_keys: bool,
        /// Classify query embeddings against prompt-free prototypes.
        #[arg(long)]
        ablation_no_prompt: bool,
        /// Output directory.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Train and evaluate in one go, without intermediate files.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Stream directory; a synthetic stream is generated when omitted.
        #[arg(long)]
        stream: Option<PathBuf>,
        /// Output directory [default: config output_dir].
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Final accuracy over a grid of pass counts and retrieved keys.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Stream directory; a synthetic stream is generated when omitted.
        #[arg(long)]
        stream: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 5, 10])]
        passes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2])]
        keys: Vec<usize>,
        /// Grid CSV path.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Write query and augmented embeddings of every test sample.
    DumpEmbeddings {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = 1)]
        keys: usize,
        /// Embeddings CSV path.
        #[arg(long, short)]
        out: PathBuf,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<f2ocl_core::Error>())
        .map(f2ocl_core::Error::kind);
    match kind {
        Some(ErrorKind::Usage) => 1,
        Some(ErrorKind::Numeric) => 3,
        Some(ErrorKind::Io) | None => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Generate { config, out } => commands::generate(&config, out.as_deref()),
        Command::Train { config, stream, out, passes } => commands::train(&config, &stream, out.as_deref(), passes),
        Command::Eval { state, test, keys, oracle_keys, ablation_no_prompt, out } => {
            let mode = if oracle_keys {
                commands::EvalMode::OracleKeys
            } else if ablation_no_prompt {
                commands::EvalMode::NoPrompt
            } else {
                commands::EvalMode::Retrieved
            };
            commands::eval(&state, &test, keys, mode, &out)
        }
        Command::Run { config, stream, out } => commands::run(&config, stream.as_deref(), out.as_deref()),
        Command::Sweep { config, stream, passes, keys, out } => {
            commands::sweep(&config, stream.as_deref(), &passes, &keys, &out)
        }
        Command::DumpEmbeddings { state, test, keys, out } => commands::dump_embeddings(&state, &test, keys, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
