//! `snn`: train, evaluate, and verify spiking neural networks from the
//! command line.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error,
//! 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use snn_cli::config::{load_config, Precision, RunConfig};
use snn_cli::runner::{self, CliError, GradcheckMode};

#[derive(Parser)]
#[command(
    name = "snn",
    version,
    about = "Spiking neural network training with spatio-temporal backpropagation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags that override values from the config file.
#[derive(Args)]
struct Overrides {
    /// RNG seed for init, shuffling, and dropout
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Float width: 32 or 64
    #[arg(long)]
    precision: Option<String>,
    /// Force the auxiliary normalization path: on or off
    #[arg(long)]
    neunorm: Option<String>,
    /// Output directory for checkpoints and metrics
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Number of training epochs
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network from a key=value config file
    Train {
        /// Path to the config file
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a checkpoint on a dataset and write a confusion matrix
    Eval {
        /// Path to a .snnc checkpoint
        #[arg(long)]
        checkpoint: PathBuf,
        /// Spike container file, event directory, or image directory
        #[arg(long)]
        dataset: PathBuf,
        /// Simulation window length
        #[arg(long = "T", visible_alias = "t-steps")]
        t_steps: usize,
        /// Where to write confusion.csv (default: alongside the checkpoint)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Float width: 32 or 64 (default: the checkpoint's own width)
        #[arg(long)]
        precision: Option<String>,
        /// Worker threads (0 = all cores)
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Verify gradients: oracle replay or finite differences
    Gradcheck {
        /// "oracle" (bit-for-bit scalar replay) or "relaxed" (finite differences)
        #[arg(long)]
        mode: String,
        /// How many random cases/networks to draw
        #[arg(long)]
        cases: Option<usize>,
        /// Base RNG seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train once per window length T and tabulate accuracy
    SweepT {
        /// Path to the config file
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated window lengths, e.g. 1,2,4,8
        #[arg(long = "t-list")]
        t_list: String,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Generate the synthetic digit corpus as IDX image/label files
    Synth {
        /// Directory to write the four IDX files into
        #[arg(long)]
        out: PathBuf,
        /// Training images to generate
        #[arg(long, default_value_t = 512)]
        train: usize,
        /// Test images to generate
        #[arg(long, default_value_t = 128)]
        test: usize,
        /// Corpus seed
        #[arg(long, default_value_t = 0x5EED_DA7A)]
        seed: u64,
    },
}

fn apply_overrides(cfg: &mut RunConfig, ov: &Overrides) -> Result<(), CliError> {
    if let Some(seed) = ov.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = ov.threads {
        cfg.threads = threads;
    }
    if let Some(p) = &ov.precision {
        cfg.precision = Precision::parse(p).map_err(CliError::from)?;
    }
    if let Some(n) = &ov.neunorm {
        cfg.neunorm = match n.as_str() {
            "on" => true,
            "off" => false,
            other => {
                return Err(CliError::Config(format!(
                    "--neunorm takes on|off, not {other:?}"
                )))
            }
        };
    }
    if let Some(dir) = &ov.out_dir {
        cfg.out_dir = dir.clone();
    }
    if let Some(epochs) = ov.epochs {
        cfg.epochs = epochs;
    }
    Ok(())
}

fn init_threads(threads: usize) -> Result<(), CliError> {
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot size the thread pool: {e}")))?;
    }
    Ok(())
}

fn parse_t_list(text: &str) -> Result<Vec<usize>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| CliError::Config(format!("bad T value {s:?} in --t-list")))
                .and_then(|t| {
                    if t == 0 {
                        Err(CliError::Config("T values must be >= 1".into()))
                    } else {
                        Ok(t)
                    }
                })
        })
        .collect()
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train { config, overrides } => {
            let mut cfg = load_config(&config)?;
            apply_overrides(&mut cfg, &overrides)?;
            init_threads(cfg.threads)?;
            let outcome = match cfg.precision {
                Precision::F32 => runner::run_training::<f32>(&cfg)?,
                Precision::F64 => runner::run_training::<f64>(&cfg)?,
            };
            if let (Some(last), Some(best)) = (outcome.final_test_acc, outcome.best_test_acc) {
                println!(
                    "done: {} epochs, final test_acc {last:.4}, best {best:.4} ({})",
                    outcome.epochs_run,
                    outcome.metrics_path.display()
                );
            }
            Ok(())
        }
        Command::Eval {
            checkpoint,
            dataset,
            t_steps,
            out,
            precision,
            threads,
        } => {
            init_threads(threads.unwrap_or(0))?;
            let out_dir = out.unwrap_or_else(|| {
                checkpoint
                    .parent()
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from("."))
            });
            let precision = match precision {
                Some(p) => Precision::parse(&p)?,
                None => sniff_checkpoint_precision(&checkpoint)?,
            };
            let outcome = match precision {
                Precision::F32 => runner::run_eval::<f32>(&checkpoint, &dataset, t_steps, &out_dir),
                Precision::F64 => runner::run_eval::<f64>(&checkpoint, &dataset, t_steps, &out_dir),
            }?;
            println!(
                "accuracy {:.4} over {} samples; confusion matrix at {}",
                outcome.accuracy,
                outcome.samples,
                outcome.confusion_path.display()
            );
            Ok(())
        }
        Command::Gradcheck { mode, cases, seed } => {
            let mode = match mode.as_str() {
                "oracle" => GradcheckMode::Oracle,
                "relaxed" => GradcheckMode::Relaxed,
                other => {
                    return Err(CliError::Config(format!(
                        "--mode takes oracle|relaxed, not {other:?}"
                    )))
                }
            };
            if runner::run_gradcheck(mode, cases, seed)? {
                Ok(())
            } else {
                Err(CliError::Numerical("gradient check failed".into()))
            }
        }
        Command::SweepT {
            config,
            t_list,
            overrides,
        } => {
            let mut cfg = load_config(&config)?;
            apply_overrides(&mut cfg, &overrides)?;
            init_threads(cfg.threads)?;
            let ts = parse_t_list(&t_list)?;
            match cfg.precision {
                Precision::F32 => runner::run_sweep::<f32>(&cfg, &ts)?,
                Precision::F64 => runner::run_sweep::<f64>(&cfg, &ts)?,
            };
            Ok(())
        }
        Command::Synth {
            out,
            train,
            test,
            seed,
        } => run_synth(&out, train, test, seed),
    }
}

/// Peek at a checkpoint's dtype byte so `eval` defaults to the width the
/// model was saved with.
fn sniff_checkpoint_precision(path: &std::path::Path) -> Result<Precision, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    match snn_core::checkpoint::stored_precision(&bytes) {
        Some(4) => Ok(Precision::F32),
        Some(8) => Ok(Precision::F64),
        _ => Err(CliError::Data(format!(
            "{}: not a recognizable checkpoint",
            path.display()
        ))),
    }
}

fn run_synth(out: &std::path::Path, train: usize, test: usize, seed: u64) -> Result<(), CliError> {
    use snn_core::data::{synth_digits_u8, write_idx_images, write_idx_labels};
    if train == 0 || test == 0 {
        return Err(CliError::Config("synth needs train >= 1 and test >= 1".into()));
    }
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out.display())))?;
    let (train_px, train_labels) = synth_digits_u8(train, seed);
    let (test_px, test_labels) = synth_digits_u8(test, seed ^ 0x7E57);
    write_idx_images(&out.join("train-images-idx3-ubyte"), train, 28, 28, &train_px)?;
    write_idx_labels(&out.join("train-labels-idx1-ubyte"), &train_labels)?;
    write_idx_images(&out.join("t10k-images-idx3-ubyte"), test, 28, 28, &test_px)?;
    write_idx_labels(&out.join("t10k-labels-idx1-ubyte"), &test_labels)?;
    println!(
        "wrote {train} training and {test} test digits as IDX files under {}",
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are not errors; anything else is a usage
            // problem and exits like a config error.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
