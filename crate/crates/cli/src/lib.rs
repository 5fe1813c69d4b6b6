//! Command-line driver: `synth`, `ingest`, `train`, `ablate` and `recommend`.
//! Each command writes its outputs plus a `manifest.json` into `--out`.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod plots;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sitegnn::bundle::EdgeDefinition;
use sitegnn::gnn::OperatorKind;
use sitegnn::graph::{EdgeKind, NodeGroup};
use sitegnn::recommend::AttributionMethod;

pub use commands::run;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "sitegnn",
    version,
    about = "County-graph GNN pipeline for dealership site selection"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for data generation, splits and initialization (overrides the config file).
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Worker threads for parallel cross-validations [default: available cores].
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Generate a synthetic county lattice with a planted labelling rule.
    Synth(SynthArgs),
    /// Preprocess county tables and build the graph bundle.
    Ingest(IngestArgs),
    /// Cross-validate one model/feature combination and save its checkpoint.
    Train(TrainArgs),
    /// Run the two-round ablation study and write the report tables.
    Ablate(AblateArgs),
    /// Score the application set, attribute predictions and filter by network density.
    Recommend(RecommendArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Ingest(_) => "ingest",
            Command::Train(_) => "train",
            Command::Ablate(_) => "ablate",
            Command::Recommend(_) => "recommend",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Number of counties (overrides the config file).
    #[arg(long)]
    pub counties: Option<usize>,
    /// Label noise rate among competitor counties.
    #[arg(long)]
    pub noise_rate: Option<f64>,
    /// Share of non-competition feature cells left empty.
    #[arg(long)]
    pub missing_rate: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    /// Directory holding nodes.csv, catalog.csv, adjacency.csv, flows.csv and sci.csv.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Graph bundle written by `ingest`.
    #[arg(long, value_name = "PATH")]
    pub bundle: PathBuf,
    /// Operator kind, e.g. MPNN or GATConv.
    #[arg(long, default_value = "GeneralConv")]
    pub model: OperatorKind,
    /// Edge definition: adjacent or commuting.
    #[arg(long, default_value = "adjacent")]
    pub edges: EdgeDefinition,
    /// Edge features, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "SCI,MCI")]
    pub edge_features: Vec<EdgeKind>,
    /// Node feature groups in order, comma separated (BD, WE, TB, LB, CO).
    #[arg(long, value_delimiter = ',', default_value = "CO")]
    pub groups: Vec<NodeGroup>,
}

#[derive(Debug, Args, Serialize)]
pub struct AblateArgs {
    /// Graph bundle written by `ingest`.
    #[arg(long, value_name = "PATH")]
    pub bundle: PathBuf,
    /// Restrict round 2 to adjacency edges.
    #[arg(long)]
    pub quick: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct RecommendArgs {
    /// Graph bundle written by `ingest`.
    #[arg(long, value_name = "PATH")]
    pub bundle: PathBuf,
    /// Model checkpoint written by `train` or `ablate`.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Dealer locations CSV (brand,fips,lat,lon).
    #[arg(long, value_name = "PATH")]
    pub dealers: PathBuf,
    /// Attribution method: input_x_gradient or integrated_gradients.
    #[arg(long)]
    pub method: Option<AttributionMethod>,
}
