mod commands;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flipset::search::Algorithm;
use flipset::{AttributionMethod, ErrorCategory};

#[derive(Parser)]
#[command(name = "flipset", version, about = "Find training subsets whose removal flips a prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Run settings: a config file, overridden by any flags given.
#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    /// TOML or JSON run configuration.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Dataset file (.jsonl/.csv corpus or .bin embeddings); replaces the config's data source.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub algorithm: Option<Algorithm>,
    #[arg(long)]
    pub max_passes: Option<usize>,
    #[arg(short, long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Only the first N test points.
    #[arg(long)]
    pub max_test_points: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write its artifact and metrics.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Search a flipset for one test point of a trained model.
    Flipset {
        #[command(flatten)]
        run: RunArgs,
        /// Model artifact directory; defaults to the run's `model/`.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        test_index: usize,
        /// Retrain without the members and report the outcome.
        #[arg(long)]
        verify: bool,
    },
    /// Search and verify flipsets for every test point.
    Experiment {
        #[command(flatten)]
        run: RunArgs,
        /// Skip retrain verification.
        #[arg(long)]
        no_verify: bool,
        /// Discard records from an earlier, interrupted run.
        #[arg(long)]
        fresh: bool,
    },
    /// Compare influence estimates with exact leave-one-out retrains.
    Calibrate {
        #[command(flatten)]
        run: RunArgs,
        /// Minimum mean Pearson r.
        #[arg(long)]
        floor: Option<f64>,
        #[arg(long)]
        test_points: Option<usize>,
    },
    /// Remove each method's top-k points, retrain, and measure the change.
    Attribution {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<AttributionMethod>>,
        #[arg(long, value_delimiter = ',')]
        k_grid: Option<Vec<usize>>,
        #[arg(long)]
        test_points: Option<usize>,
    },
    /// Serve the contestation API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Where models and sessions are stored.
        #[arg(long, default_value = "service-data")]
        data_dir: PathBuf,
        /// Built UI bundle to serve under `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
        /// Experiment outputs to expose under `/reports`.
        #[arg(long)]
        reports_dir: Option<PathBuf>,
        #[arg(long, default_value_t = flipset_service::DEFAULT_WHATIF_WORKERS)]
        whatif_workers: usize,
    },
}

/// Exit status for a failed check (as opposed to a failed command).
pub const EXIT_CHECK_FAILED: u8 = 1;

fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Config => 2,
        ErrorCategory::Data => 3,
        ErrorCategory::Numerical => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FLIPSET_LOG", "warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train { run } => commands::train(&run),
        Command::Flipset {
            run,
            model,
            test_index,
            verify,
        } => commands::flipset(&run, model.as_deref(), test_index, verify),
        Command::Experiment { run, no_verify, fresh } => commands::experiment(&run, !no_verify, fresh),
        Command::Calibrate {
            run,
            floor,
            test_points,
        } => commands::calibrate(&run, floor, test_points),
        Command::Attribution {
            run,
            methods,
            k_grid,
            test_points,
        } => commands::attribution(&run, methods, k_grid, test_points),
        Command::Serve {
            addr,
            data_dir,
            static_dir,
            reports_dir,
            whatif_workers,
        } => commands::serve(addr, data_dir, static_dir, reports_dir, whatif_workers),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.category()))
        }
    }
}
