//! The `sumn` command line: one binary with a subcommand per pipeline stage.
//!
//! Exit codes: 0 on success, 1 when a check fails, 2 on usage, configuration
//! or I/O errors.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::Variant;

pub use commands::{embed_logs, Context, Outcome};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "sumn", version, about = "Self-supervised user representations from behavior logs")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON configuration file for the subcommand
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the configuration
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Reduce in a fixed order so results do not depend on thread count
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Directory for outputs and the resolved configuration
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a vocabulary from a JSONL corpus
    BuildVocab {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        max_size: Option<usize>,
        #[arg(long)]
        min_count: Option<u64>,
    },
    /// Train a model and write its checkpoint and loss curve
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        boundary: Option<i64>,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        hops: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Continue from a saved training state
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Write one embedding per user
    Infer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        boundary: Option<i64>,
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Train a probe on frozen embeddings and report test metrics
    Eval {
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        pca_out: Option<PathBuf>,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Generate a synthetic corpus with planted factors
    Synth {
        #[arg(long)]
        n_users: Option<usize>,
        #[arg(long)]
        noise_rate: Option<f64>,
    },
    /// Compare analytic gradients with finite differences
    Gradcheck {
        #[arg(long)]
        hops: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        variant: Option<Variant>,
        /// Double one analytic gradient; the check must then fail
        #[arg(long)]
        inject_fault: bool,
    },
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, flag: Option<T>) {
    if flag.is_some() {
        *slot = flag;
    }
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(Error::Invalid("--threads must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<Outcome> {
    let Common {
        config,
        seed,
        threads,
        deterministic,
        out_dir,
    } = cli.common;
    configure_threads(threads)?;
    let ctx = Context {
        out_dir,
        exec: Execution::Parallel,
        deterministic,
    };
    let path = config.as_deref();
    match cli.command {
        Command::BuildVocab {
            input,
            output,
            max_size,
            min_count,
        } => {
            let mut c: config::BuildVocabConfig = config::load(path)?;
            set_opt(&mut c.input, input);
            set_opt(&mut c.output, output);
            set(&mut c.max_size, max_size);
            set(&mut c.min_count, min_count);
            commands::build_vocab(&c, &ctx)
        }
        Command::Train {
            corpus,
            vocab,
            boundary,
            variant,
            dim,
            hops,
            learning_rate,
            batch_size,
            max_epochs,
            resume,
        } => {
            let mut c: config::TrainRunConfig = config::load(path)?;
            set_opt(&mut c.corpus, corpus);
            set_opt(&mut c.vocab, vocab);
            set_opt(&mut c.boundary, boundary);
            set_opt(&mut c.resume, resume);
            set(&mut c.train.variant, variant);
            set(&mut c.train.dim, dim);
            set(&mut c.train.hops, hops);
            set(&mut c.train.learning_rate, learning_rate);
            set(&mut c.train.batch_size, batch_size);
            set(&mut c.train.max_epochs, max_epochs);
            set(&mut c.train.seed, seed);
            commands::train(&c, &ctx)
        }
        Command::Infer {
            checkpoint,
            input,
            output,
            boundary,
            variant,
        } => {
            let mut c: config::InferConfig = config::load(path)?;
            set_opt(&mut c.checkpoint, checkpoint);
            set_opt(&mut c.input, input);
            set_opt(&mut c.output, output);
            set_opt(&mut c.boundary, boundary);
            set_opt(&mut c.variant, variant);
            commands::infer(&c, &ctx)
        }
        Command::Eval {
            embeddings,
            labels,
            pca_out,
            max_epochs,
        } => {
            let mut c: config::EvalConfig = config::load(path)?;
            set_opt(&mut c.embeddings, embeddings);
            set_opt(&mut c.labels, labels);
            set_opt(&mut c.pca_out, pca_out);
            set(&mut c.probe.max_epochs, max_epochs);
            set(&mut c.probe.seed, seed);
            commands::eval(&c, &ctx)
        }
        Command::Synth { n_users, noise_rate } => {
            let mut c: config::SynthRunConfig = config::load(path)?;
            set(&mut c.synth.n_users, n_users);
            set(&mut c.synth.noise_rate, noise_rate);
            set(&mut c.synth.seed, seed);
            commands::synth(&c, &ctx)
        }
        Command::Gradcheck {
            hops,
            dim,
            variant,
            inject_fault,
        } => {
            let mut c: config::GradcheckConfig = config::load(path)?;
            set(&mut c.hops, hops);
            set(&mut c.dim, dim);
            set(&mut c.variant, variant);
            set(&mut c.seed, seed);
            commands::gradcheck(&c, inject_fault, &ctx)
        }
    }
}

/// Parses `args`, runs the command, prints its report and returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            if outcome.check_failed {
                EXIT_CHECK_FAILED
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}
