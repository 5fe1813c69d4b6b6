//! County-level graph learning for dealership site selection.
//!
//! Counties are nodes carrying demographic, wealth, behavioural and
//! competition features; edges join adjacent or commuting-linked counties and
//! carry social-connectedness and mobility-connectedness weights. A single
//! message-passing layer maps each county to the probability that it hosts a
//! dealership. The crate covers ingest and preprocessing, connectivity
//! indices, a small reverse-mode autodiff engine, ten operator kinds,
//! cross-validated training, the two-round ablation study, attribution and
//! the density-aware recommendation filter, plus a synthetic data generator.

pub mod ablation;
pub mod bundle;
pub mod connectivity;
pub mod gnn;
pub mod graph;
pub mod ingest;
pub mod recommend;
pub mod synth;
pub mod tensor;
pub mod train;

pub use ablation::{
    best_combo, emit_tables, run_round1, run_round2, run_study, AblationError, ComboSpec,
    StudyConfig, StudyReport, StudyResult,
};
pub use bundle::{
    build_bundle, BundleError, EdgeDefinition, GraphBundle, IngestOptions, IngestReport,
};
pub use connectivity::{Brand, ConnectivityError, DealerSite};
pub use gnn::{Checkpoint, GnnError, OperatorKind, OperatorParams};
pub use graph::{CountyGraph, CountyNode, EdgeKind, FeatureCatalog, GraphError, NodeGroup};
pub use recommend::{AttributionMethod, RecommendError, Recommendation};
pub use synth::{SynthConfig, SynthDataset};
pub use tensor::Tensor;
pub use train::{Metrics, Split, TrainConfig, TrainError};
