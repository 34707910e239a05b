//! Command-line definitions. Every subcommand's arguments are serde
//! round-trippable so a run manifest can reproduce the run exactly.

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(
    name = "survcf",
    version,
    about = "Counterfactual explanations for black-box survival models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Clone, Serialize, Deserialize)]
pub enum Command {
    /// Generate a synthetic survival dataset CSV
    Generate(GenerateArgs),
    /// Fit a survival model on a dataset CSV and serialize it
    Fit(FitArgs),
    /// Compute a counterfactual for one point (exact or swarm search)
    Explain(ExplainArgs),
    /// Verify a saved explanation against a reference solution
    Verify(VerifyArgs),
    /// Evaluate the predicted mean on a 2-d grid for plotting
    Surface(SurfaceArgs),
    /// Re-run the command recorded in a manifest
    Rerun(RerunArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cox,
    Rsf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Pso,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verifier {
    /// Exact route for Cox models, sampling otherwise
    Auto,
    Exact,
    Sample,
}

/// Comma-separated float list for flags like --x and --coeffs.
#[derive(Clone, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FloatList(pub Vec<f64>);

impl FromStr for FloatList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .map(|part| {
                part.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("'{part}' is not a number"))
            })
            .collect::<Result<Vec<f64>, _>>()
            .map(FloatList)
    }
}

/// CSV column mapping shared by the data-consuming commands.
#[derive(clap::Args, Clone, Serialize, Deserialize)]
pub struct SchemaArgs {
    /// Feature columns (comma separated); all non-time/event columns when omitted
    #[arg(long, value_delimiter = ',')]
    pub features: Vec<String>,
    #[arg(long, default_value = "time")]
    pub time_col: String,
    #[arg(long, default_value = "event")]
    pub event_col: String,
    /// Keep only rows where a column equals a value, e.g. --filter trt=A
    #[arg(long)]
    pub filter: Option<String>,
}

#[derive(clap::Args, Clone, Serialize, Deserialize)]
pub struct GenerateArgs {
    /// Number of records
    #[arg(long)]
    pub n: usize,
    /// Feature dimension
    #[arg(long)]
    pub d: usize,
    /// Weibull scale
    #[arg(long, default_value_t = 1e-5)]
    pub lambda0: f64,
    /// Weibull shape
    #[arg(long, default_value_t = 2.0)]
    pub shape: f64,
    /// Probability that a record is an observed event
    #[arg(long, default_value_t = 0.9)]
    pub event_prob: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Risk coefficients; drawn uniformly from [0,1]^d when omitted
    #[arg(long)]
    pub coeffs: Option<FloatList>,
    /// Output CSV path
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Clone, Serialize, Deserialize)]
pub struct FitArgs {
    /// Input dataset CSV
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub model: ModelKind,
    #[command(flatten)]
    #[serde(flatten)]
    pub schema: SchemaArgs,
    /// Ridge penalty for the Cox fit
    #[arg(long, default_value_t = 0.0)]
    pub l2: f64,
    /// Gradient-norm convergence tolerance for the Cox fit
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    /// Number of trees (forest only)
    #[arg(long, default_value_t = 250)]
    pub trees: usize,
    /// Features tried per split; ceil(sqrt(d)) when omitted
    #[arg(long)]
    pub mtry: Option<usize>,
    #[arg(long, default_value_t = 15)]
    pub min_leaf: usize,
    /// Tail gap closing the time grid; mean event-time spacing when omitted
    #[arg(long)]
    pub t_gamma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Min-max scale features into [0,1] before fitting (recorded in the model)
    #[arg(long)]
    pub scale_minmax: bool,
    /// Output model JSON path
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Clone, Serialize, Deserialize)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model_file: PathBuf,
    /// Training dataset CSV (for feature bounds and the anchor point)
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub schema: SchemaArgs,
    /// The point to explain, as a comma-separated vector
    #[arg(long)]
    pub x: Option<FloatList>,
    /// Or a row index into the dataset
    #[arg(long)]
    pub x_row: Option<usize>,
    /// +1 asks for a larger mean, -1 for a smaller one
    #[arg(long, allow_hyphen_values = true)]
    pub theta: i8,
    /// Required shift in mean time to event
    #[arg(long)]
    pub r: f64,
    /// Penalty strength
    #[arg(long = "C", default_value_t = 1e6)]
    pub penalty: f64,
    #[arg(long, value_enum)]
    pub method: Method,
    #[arg(long, default_value_t = 2000)]
    pub particles: usize,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 2.05)]
    pub phi1: f64,
    #[arg(long, default_value_t = 2.05)]
    pub phi2: f64,
    #[arg(long, default_value_t = 1.0)]
    pub kappa: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON file with keys n_particles, n_iterations, phi1, phi2, kappa,
    /// seed; overrides the individual swarm flags
    #[arg(long)]
    pub pso_config: Option<PathBuf>,
    /// Also run the sampling oracle and store its result
    #[arg(long)]
    pub verify: bool,
    /// Sample count for --verify
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: u64,
    /// Output report JSON path
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Clone, Serialize, Deserialize)]
pub struct VerifyArgs {
    /// A report written by the explain command
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub model_file: PathBuf,
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Verifier::Auto)]
    pub verifier: Verifier,
    /// Output report JSON path
    #[arg(long)]
    pub out: PathBuf,
    /// Also append the result as one CSV table row
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(clap::Args, Clone, Serialize, Deserialize)]
pub struct SurfaceArgs {
    #[arg(long)]
    pub model_file: PathBuf,
    /// Training dataset CSV (for the grid bounds)
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub schema: SchemaArgs,
    /// Grid points per axis
    #[arg(long, default_value_t = 100)]
    pub resolution: usize,
    /// Overlay the points and region of a saved report
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Output CSV path (an overlay JSON lands next to it)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Clone, Serialize, Deserialize)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}
