mod commands;
mod manifest;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Green functions, spectral bands, contraction checks and disorder
/// simulations on trees of finite cone type.
#[derive(Debug, Parser)]
#[command(name = "conespectra", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the matrix conditions of a model file.
    Validate {
        model: String,
        #[arg(long)]
        out: Option<String>,
    },
    /// Detect spectral bands of the unperturbed operator.
    Bands(BandsArgs),
    /// Tabulate the label-invariant Green functions.
    Solve(SolveArgs),
    /// Run the randomized inequality suites on an energy interval.
    Verify(VerifyArgs),
    /// Monte Carlo moments of the perturbed Green function.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct BandArgs {
    #[arg(long, default_value_t = conespectra::greens::DEFAULT_GRID_STEP)]
    pub grid_step: f64,
    #[arg(long, default_value_t = conespectra::greens::DEFAULT_ETA_FLOOR)]
    pub eta_floor: f64,
    #[arg(long, default_value_t = conespectra::greens::DEFAULT_IM_THRESHOLD)]
    pub im_threshold: f64,
}

#[derive(Debug, Args)]
pub struct BandsArgs {
    pub model: String,
    #[command(flatten)]
    pub scan: BandArgs,
    /// Write the `Im Γ` scan as CSV.
    #[arg(long)]
    pub csv: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    pub model: String,
    /// Comma separated real parts.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub energy: Vec<f64>,
    #[arg(long, default_value_t = 0.01)]
    pub eta: f64,
    #[arg(long)]
    pub csv: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub model: String,
    /// Energy interval as `lo,hi`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, num_args = 1, default_value = "-1,1")]
    pub interval: Vec<f64>,
    #[arg(long, default_value_t = 1.5)]
    pub p: f64,
    /// Couplings of the two-step suites.
    #[arg(long, value_delimiter = ',', default_value = "0,0.01,0.05")]
    pub lambda: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 10_000)]
    pub kappa_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Energies of the constants grid.
    #[arg(long, default_value_t = 200)]
    pub grid_energies: usize,
    #[arg(long, default_value_t = 20)]
    pub eta_levels: usize,
    /// Number of full contraction reports to include.
    #[arg(long, default_value_t = 4)]
    pub reports: usize,
    #[command(flatten)]
    pub scan: BandArgs,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BoundaryArg {
    Free,
    Dirichlet,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: String,
    /// Coupling, or a comma separated sweep.
    #[arg(long, value_delimiter = ',', default_value = "0.05")]
    pub lambda: Vec<f64>,
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    pub energy: f64,
    /// `Im z`, or a comma separated sweep.
    #[arg(long, value_delimiter = ',', default_value = "0.01")]
    pub eta: Vec<f64>,
    #[arg(long, default_value_t = 1.5)]
    pub p: f64,
    /// Tree depth; chosen by a pilot run when absent.
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = BoundaryArg::Free)]
    pub boundary: BoundaryArg,
    /// Disorder mode, overriding the model file.
    #[arg(long)]
    pub disorder: Option<String>,
    /// Law as `name:param`, e.g. `uniform:0.9`, overriding the model file.
    #[arg(long)]
    pub law: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    /// Sweep table, one row per `(λ, η)`.
    #[arg(long)]
    pub csv: Option<String>,
}

fn init_threads() -> Result<(), commands::Failure> {
    if let Ok(v) = std::env::var("CONESPECTRA_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| commands::Failure::usage(format!("CONESPECTRA_THREADS={v:?} is not a positive integer")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| commands::Failure::usage(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match cli.command {
        Command::Validate { model, out } => commands::validate(&model, out.as_deref()),
        Command::Bands(a) => commands::bands(&a),
        Command::Solve(a) => commands::solve(&a),
        Command::Verify(a) => commands::verify(&a),
        Command::Simulate(a) => commands::simulate(&a),
    });
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
