//! The `mrwlab` command line: every subcommand reads files, writes CSV
//! artifacts plus a manifest into its output directory, and exits with 0 on
//! success, 2 on invalid input and 3 when a computation fails.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::{NumberList, PathList};

pub mod commands;
pub mod config;
pub mod outputs;
pub mod report;
pub mod svg;

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const SEED_ENV: &str = "MRWLAB_SEED";

#[derive(Debug, Clone, PartialEq)]
pub enum Failure {
    Validation(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Validation(_) => EXIT_VALIDATION,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<mrwlab::Error> for Failure {
    fn from(e: mrwlab::Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mrwlab", version, about = "Multifractal random walk analysis of high-frequency returns")]
pub struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Key-value config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Grid {
    /// Sampling step in seconds.
    #[arg(long)]
    pub step: Option<u32>,
    /// Session open, HH:MM[:SS].
    #[arg(long)]
    pub session_open: Option<String>,
    /// Session close, HH:MM[:SS].
    #[arg(long)]
    pub session_close: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quotes CSV to per-day log prices and log-returns on a regular grid.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: Grid,
        /// Quote file with header `timestamp,bid,ask`.
        #[arg(long)]
        quotes: Option<PathBuf>,
        /// Days whose first quote comes later than this many seconds after the open are dropped.
        #[arg(long)]
        max_open_delay: Option<i64>,
    },
    /// Removes the intraday volatility profile and the per-bucket mean.
    Deseason {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: Grid,
        /// Log-return series CSV.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Moving-average width applied to the profile.
        #[arg(long)]
        smoothing: Option<usize>,
        /// Second pass: subtract, divide or none.
        #[arg(long)]
        mean_pass: Option<String>,
    },
    /// ACF, power spectrum, structure functions and scaling function.
    Scaling {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: Grid,
        /// Log-return series CSV.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Moment orders, comma separated.
        #[arg(long)]
        q_grid: Option<NumberList>,
        /// Smallest scale in grid steps.
        #[arg(long)]
        scale_min: Option<f64>,
        /// Largest scale in grid steps.
        #[arg(long)]
        scale_max: Option<f64>,
        /// Scales, in grid steps, bounding the log-log fits.
        #[arg(long)]
        fit_min: Option<f64>,
        #[arg(long)]
        fit_max: Option<f64>,
        #[arg(long)]
        max_lag: Option<usize>,
        /// Upper frequency, in cycles per grid step, of the spectral slope fit.
        #[arg(long)]
        psd_fit_max: Option<f64>,
    },
    /// Simulates a multifractal random walk.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: Grid,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
        /// Decorrelation time in seconds; defaults to the path length.
        #[arg(long)]
        t_seconds: Option<f64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Returns per trading day in the calendar layout of `returns.csv`; defaults to a full session.
        #[arg(long)]
        per_day: Option<usize>,
        /// First trading date of the calendar layout.
        #[arg(long)]
        start: Option<String>,
    },
    /// Maximum-likelihood fits per window.
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: Grid,
        /// Log-return series CSV.
        #[arg(long)]
        input: Option<PathBuf>,
        /// month, year, whole, or a window count.
        #[arg(long)]
        windows: Option<String>,
        /// window, estimate, or a fixed value in seconds.
        #[arg(long)]
        t_policy: Option<String>,
        #[arg(long)]
        restarts: Option<usize>,
    },
    /// Monte Carlo null distribution of the range of segment estimates.
    #[command(name = "mc-test")]
    McTest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ensemble: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
        /// Decorrelation time of the null paths in seconds; defaults to the path length.
        #[arg(long)]
        t_seconds: Option<f64>,
        #[arg(long)]
        step: Option<u32>,
        /// Path length in grid steps.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        segments: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Estimates CSV whose λ range is tested.
        #[arg(long)]
        observed: Option<PathBuf>,
        /// A range value to test directly.
        #[arg(long)]
        observed_range: Option<f64>,
    },
    /// Investment-grade spread and its comparison with λ estimates.
    Spread {
        #[command(flatten)]
        common: Common,
        /// AAA yields, `date,rate`.
        #[arg(long)]
        aaa: Option<PathBuf>,
        /// Government yields, `date,rate`.
        #[arg(long)]
        treasury: Option<PathBuf>,
        /// Estimates CSVs, comma separated; one per stock.
        #[arg(long)]
        estimates: Option<PathList>,
        /// monthly or annual.
        #[arg(long)]
        aggregate: Option<String>,
    },
    /// Figure data files and SVG renderings from earlier artifacts.
    Report {
        #[command(flatten)]
        common: Common,
        /// Artifact directories, comma separated.
        #[arg(long)]
        inputs: Option<PathList>,
    },
}

/// Runs one parsed invocation inside a pool of `jobs` threads.
pub fn run(cli: Cli) -> Result<(), Failure> {
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(j) = cli.jobs {
            if j == 0 {
                return Err(Failure::Validation("--jobs must be positive".into()));
            }
            b = b.num_threads(j);
        }
        b.build().map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?
    };
    pool.install(|| commands::dispatch(cli.command))
}
