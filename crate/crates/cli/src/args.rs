use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "qrcov", version, about = "Quantile regression with leave-one-out dual calibration")]
pub struct Cli {
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// key=value file whose entries act as flag defaults; explicit flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Write results here instead of stdout; `.csv` gives a table, anything else JSON.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one quantile regression and report its certificate and LOO coverage.
    Fit(FitArgs),
    /// Tune the quantile level so leave-one-out coverage hits the target.
    CalibrateLevel(CalibrateArgs),
    /// Tune a fixed offset so leave-one-out coverage hits the target.
    CalibrateAdditive(AdditiveArgs),
    /// Upper cutoffs from thresholding the test-point dual.
    DualThreshold(ThresholdArgs),
    /// Full conformal upper cutoffs.
    Conformal(PointArgs),
    /// Split-conformal quantile regression intervals.
    Cqr(CqrArgs),
    /// Run a simulation or CSV figure protocol.
    Simulate(SimulateArgs),
    /// Solve the proportional-limit program for coverage of plain quantile regression.
    Asymptotics(AsymptoticsArgs),
    /// Build two-sided intervals with one method and score them on a test CSV.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Training CSV with a header row; every column except the response is a feature.
    #[arg(long)]
    pub csv: PathBuf,

    /// Name of the response column.
    #[arg(long, default_value = "y")]
    pub response: String,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[arg(long, default_value_t = 0.9)]
    pub tau: f64,

    /// Ridge coefficient on the summed-loss scale.
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,

    /// Hold the offset at this value instead of fitting an intercept.
    #[arg(long, allow_negative_numbers = true)]
    pub offset: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// Target coverage.
    #[arg(long, default_value_t = 0.9)]
    pub tau: f64,

    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,

    /// Search λ over n·{0, 0.005, …, top} and keep the most multiaccurate fit.
    #[arg(long)]
    pub lambda_top: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AdditiveArgs {
    #[command(flatten)]
    pub calibrate: CalibrateArgs,

    #[arg(long, default_value_t = -10.0, allow_negative_numbers = true)]
    pub c_lo: f64,

    #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
    pub c_hi: f64,
}

#[derive(Debug, Args)]
pub struct PointArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[arg(long, default_value_t = 0.9)]
    pub tau: f64,

    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,

    /// One test point as comma separated features.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "test_csv")]
    pub x: Option<Vec<f64>>,

    /// Test points in the training CSV layout; the response column is used for coverage.
    #[arg(long)]
    pub test_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    #[command(flatten)]
    pub point: PointArgs,

    /// Dual threshold; defaults to the τ-quantile of the training duals.
    #[arg(long, allow_negative_numbers = true, conflicts_with = "random")]
    pub t: Option<f64>,

    /// Draw a fresh uniform threshold per test point from this seed.
    #[arg(long)]
    pub random: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CqrArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// Target miscoverage of the two-sided interval.
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,

    /// Fraction of rows used to fit; the rest calibrate.
    #[arg(long, default_value_t = 0.75)]
    pub split: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "test_csv")]
    pub x: Option<Vec<f64>>,

    #[arg(long)]
    pub test_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// fig1 … fig7.
    #[arg(long)]
    pub figure: String,

    /// Training size for every setting (default: the figure's protocol).
    #[arg(long)]
    pub n: Option<usize>,

    /// Comma separated dimensions (default: the figure's protocol).
    #[arg(long, value_delimiter = ',')]
    pub d: Option<Vec<usize>>,

    /// Trials per setting (default: the figure's protocol).
    #[arg(long)]
    pub trials: Option<usize>,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Test points per trial (default: the figure's protocol).
    #[arg(long)]
    pub n_test: Option<usize>,

    #[arg(long, default_value_t = 0.9)]
    pub tau: f64,

    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,

    /// Noise standard deviation.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,

    /// Top of the λ grid as a multiple of n (default: 0.1, fig7 0.2).
    #[arg(long)]
    pub lambda_top: Option<f64>,

    /// Interval methods for fig7 (default: all).
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,

    /// Dataset for fig7.
    #[arg(long)]
    pub csv: Option<PathBuf>,

    #[arg(long, default_value = "y")]
    pub response: String,
}

#[derive(Debug, Args)]
pub struct AsymptoticsArgs {
    /// d/n.
    #[arg(long)]
    pub gamma: f64,

    #[arg(long, default_value_t = 0.9)]
    pub tau: f64,

    /// Noise standard deviation.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,

    /// Ridge level per dimension; the fit uses λ = d·lambda.
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,

    /// E‖β‖² of the true coefficients.
    #[arg(long, default_value_t = 1.0)]
    pub beta_second_moment: f64,

    /// Levels at which to report quantiles of the limiting dual law.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,0.9")]
    pub levels: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// qr, cqr, gcc-rand, fixed-thresh, level-ridge or additive-ridge.
    #[arg(long)]
    pub method: String,

    #[arg(long)]
    pub test_csv: PathBuf,

    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,

    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,

    #[arg(long, default_value_t = 0.1)]
    pub lambda_top: f64,

    #[arg(long, default_value_t = -10.0, allow_negative_numbers = true)]
    pub c_lo: f64,

    #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
    pub c_hi: f64,

    #[arg(long, default_value_t = 0.75)]
    pub split: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
