//! TOML run configuration. Every table is optional; missing keys take the
//! library defaults. `--seed` on the command line overrides `seed` here.
//!
//! ```toml
//! seed = 7
//!
//! [synth]
//! n_counties = 500
//! noise_rate = 0.05
//!
//! [ingest]
//! population_floor = 300.0
//!
//! [train]
//! learning_rate = 0.01
//! patience = 50
//!
//! [study]
//! kinds = ["MPNN", "GeneralConv"]
//! edge_definitions = ["Adjacent"]
//! edge_feature_sets = [["MCI"], ["SCI", "MCI"]]
//! max_prefix = 3
//!
//! [recommend]
//! method = "integrated_gradients"
//! steps = 64
//! top_k = 10
//! ```

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sitegnn::bundle::{EdgeDefinition, IngestOptions};
use sitegnn::gnn::OperatorKind;
use sitegnn::graph::EdgeKind;
use sitegnn::recommend::{AttributionMethod, DEFAULT_IG_STEPS};
use sitegnn::{StudyConfig, SynthConfig, TrainConfig};

pub const DEFAULT_SEED: u64 = 7;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub synth: SynthConfig,
    pub ingest: IngestOptions,
    pub train: TrainConfig,
    pub study: GridOverrides,
    pub recommend: RecommendConfig,
}

/// Grid restrictions layered over the full or quick study grid.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridOverrides {
    pub kinds: Option<Vec<OperatorKind>>,
    pub edge_definitions: Option<Vec<EdgeDefinition>>,
    pub edge_feature_sets: Option<Vec<Vec<EdgeKind>>>,
    pub max_prefix: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecommendConfig {
    pub method: AttributionMethod,
    pub steps: usize,
    /// Features drawn in each importance chart.
    pub top_k: usize,
}

impl Default for RecommendConfig {
    fn default() -> Self {
        Self {
            method: AttributionMethod::IntegratedGradients,
            steps: DEFAULT_IG_STEPS,
            top_k: 10,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    /// Applies the seed (command line first, then file, then default) to
    /// every seeded stage and returns the effective configuration.
    pub fn resolve(mut self, cli_seed: Option<u64>) -> Self {
        let seed = cli_seed.or(self.seed).unwrap_or(DEFAULT_SEED);
        self.seed = Some(seed);
        self.synth.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn study(&self, quick: bool) -> StudyConfig {
        let base = if quick {
            StudyConfig::quick()
        } else {
            StudyConfig::default()
        };
        let o = &self.study;
        StudyConfig {
            train: self.train.clone(),
            kinds: o.kinds.clone().unwrap_or(base.kinds),
            edge_definitions: o.edge_definitions.clone().unwrap_or(base.edge_definitions),
            edge_feature_sets: o
                .edge_feature_sets
                .clone()
                .unwrap_or(base.edge_feature_sets),
            max_prefix: o.max_prefix.unwrap_or(base.max_prefix),
        }
    }
}
