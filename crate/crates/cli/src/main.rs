use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use oocs_cli::{
    cmd_eval, cmd_filter, cmd_gen_kernel, cmd_report, cmd_robustness, cmd_train, Model, NetworkVariant,
    Perturbation, RobustnessGrid, TestSet, TrainConfig,
};
use oocs_core::data::{load_mnist_split, resolve_data_dir, Split};
use oocs_core::kernels::{parse_ratio, KernelProfile, Polarity};
use oocs_core::{OocsError, Result};

#[derive(Parser)]
#[command(name = "oocs", version, about = "On/off center-surround kernels and networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a balanced center-surround kernel and print its balance.
    GenKernel {
        #[arg(long)]
        size: usize,
        /// Center/surround radius ratio, e.g. `2/3` or `0.5`.
        #[arg(long, value_parser = ratio)]
        gamma: f64,
        #[arg(long, default_value = "on")]
        polarity: Polarity,
        #[arg(long, default_value = "dog")]
        profile: KernelProfile,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export on, off and rectified-sum response maps of a PGM image.
    Filter {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        size: usize,
        #[arg(long, value_parser = ratio)]
        gamma: f64,
        #[arg(long)]
        out_prefix: PathBuf,
    },
    /// Train a network on MNIST.
    Train {
        #[arg(long, default_value = "oocs")]
        network: NetworkVariant,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = oocs_cli::config::DEFAULT_EPOCHS)]
        epochs: usize,
        #[arg(long, default_value_t = oocs_cli::config::DEFAULT_BATCH)]
        batch_size: usize,
        #[arg(long, default_value_t = oocs_cli::config::DEFAULT_LR)]
        learning_rate: f64,
        #[arg(long, default_value_t = oocs_cli::config::DEFAULT_KERNEL_SIZE)]
        kernel_size: usize,
        #[arg(long, value_parser = ratio, default_value = "1/2")]
        gamma: f64,
        /// Pathway node after which the response is added (`conv1` or `relu1`).
        #[arg(long, default_value = oocs_cli::config::DEFAULT_INSERTION)]
        insertion: String,
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        train_subset: Option<usize>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Clean accuracy on the original or inverted test set.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "original")]
        test_set: TestSet,
        /// Report CSV to append to.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Accuracy over a grid of input perturbations.
    Robustness {
        #[arg(long)]
        checkpoint: PathBuf,
        /// First noise seed; further repeats use seed+1, seed+2, ...
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        repeats: u64,
        /// Comma-separated subset of gaussian,salt-pepper,gamma,contrast.
        #[arg(long, value_delimiter = ',')]
        kinds: Vec<Perturbation>,
        #[arg(long, default_value = "original")]
        test_set: TestSet,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Summary table and plots from a report CSV.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn ratio(s: &str) -> std::result::Result<f64, String> {
    parse_ratio(s).map_err(|e| e.to_string())
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenKernel {
            size,
            gamma,
            polarity,
            profile,
            out,
        } => {
            let (_, report) = cmd_gen_kernel(size, gamma, polarity, profile, &out)?;
            println!("{report}");
        }
        Command::Filter {
            image,
            size,
            gamma,
            out_prefix,
        } => {
            let out = cmd_filter(&image, size, gamma, &out_prefix)?;
            for p in [out.on, out.off, out.sum] {
                println!("{}", p.display());
            }
        }
        Command::Train {
            network,
            seed,
            checkpoint,
            epochs,
            batch_size,
            learning_rate,
            kernel_size,
            gamma,
            insertion,
            history,
            train_subset,
            data_dir,
        } => {
            let cfg = TrainConfig {
                epochs,
                batch_size,
                learning_rate,
                kernel_size,
                gamma,
                insertion,
                history,
                train_subset,
                ..TrainConfig::new(network, seed, checkpoint)
            };
            cfg.spec()?;
            let dir = resolve_data_dir(data_dir.as_deref())?;
            let train = load_mnist_split(&dir, Split::Train)?;
            let out = cmd_train(&cfg, &train, &mut io::stdout())?;
            println!("checkpoint {}", out.checkpoint.display());
            println!("history {}", out.history_path.display());
        }
        Command::Eval {
            checkpoint,
            test_set,
            report,
            data_dir,
        } => {
            let model = Model::load(&checkpoint)?;
            let test = load_mnist_split(&resolve_data_dir(data_dir.as_deref())?, Split::Test)?;
            for r in cmd_eval(&model, test_set, &test, report.as_deref())? {
                println!("{} {} accuracy={:.4} mean_loss={:.4} n={}", r.model_id, r.test_set_id, r.accuracy, r.mean_loss, r.n);
            }
        }
        Command::Robustness {
            checkpoint,
            seed,
            repeats,
            kinds,
            test_set,
            out,
            data_dir,
        } => {
            if repeats == 0 {
                return Err(OocsError::Domain("repeats must be at least 1".into()));
            }
            let seeds = (seed..seed + repeats).collect();
            let grid = if kinds.is_empty() {
                RobustnessGrid::standard(seeds)
            } else {
                RobustnessGrid::for_kinds(&kinds, seeds)
            };
            let model = Model::load(&checkpoint)?;
            let test = load_mnist_split(&resolve_data_dir(data_dir.as_deref())?, Split::Test)?;
            let rows = cmd_robustness(&model, &grid, test_set, &test, Some(&out))?;
            for r in &rows {
                println!("{} {} {} seed={} accuracy={:.4}", r.model_id, r.perturbation, r.magnitude, r.seed, r.accuracy);
            }
        }
        Command::Report { input, out_dir } => {
            let out = cmd_report(&input, &out_dir)?;
            println!("{} rows, summary {}", out.rows, out.summary.display());
            for p in out.plots {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { 2 } else { 1 })
        }
    }
}
