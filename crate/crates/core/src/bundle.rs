//! Preprocessed county graph with both edge definitions, serialized as a
//! versioned binary file.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::connectivity::{
    assemble_edge_features, compute_mci, edges_adjacency, edges_commuting, fips_index,
    normalize_sci, CommutingFlowTable, ConnectivityError, SciTable,
};
use crate::graph::{CountyGraph, CountyNode, EdgeKind, FeatureCatalog, GraphError, NodeGroup};
use crate::ingest::{
    filter_population, preprocess, ColumnReport, FilterReport, IngestError, RawNodeTable,
    TransformSpec,
};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"SGNNBNDL";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Connectivity(#[from] ConnectivityError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("not a graph bundle: {0}")]
    Format(String),
    #[error("graph bundle version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Which county pairs become edges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeDefinition {
    /// Counties that share a border.
    Adjacent,
    /// Counties with a non-zero commuting flow in either direction.
    CommutingFlows,
}

impl EdgeDefinition {
    pub const ALL: [EdgeDefinition; 2] = [EdgeDefinition::Adjacent, EdgeDefinition::CommutingFlows];

    pub fn label(self) -> &'static str {
        match self {
            EdgeDefinition::Adjacent => "Adjacent",
            EdgeDefinition::CommutingFlows => "Commuting Flows",
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            EdgeDefinition::Adjacent => "adjacent",
            EdgeDefinition::CommutingFlows => "commuting",
        }
    }
}

impl fmt::Display for EdgeDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for EdgeDefinition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s
            .trim()
            .to_ascii_lowercase()
            .replace([' ', '_', '-'], "")
            .as_str()
        {
            "adjacent" | "adjacency" => Ok(EdgeDefinition::Adjacent),
            "commuting" | "commutingflows" => Ok(EdgeDefinition::CommutingFlows),
            other => Err(format!("unknown edge definition {other:?}")),
        }
    }
}

/// Directed edges sorted by `(dst, src)` with `[SCI, MCI]` feature rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeSet {
    pub edges: Vec<(usize, usize)>,
    pub features: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestOptions {
    pub population_floor: f64,
    pub skew_threshold: f64,
    /// Pairs with more commuters than this become commuting edges.
    pub commuting_threshold: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            population_floor: crate::ingest::DEFAULT_POPULATION_FLOOR,
            skew_threshold: crate::ingest::DEFAULT_SKEW_THRESHOLD,
            commuting_threshold: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub filter: FilterReport,
    pub imputed_cells: usize,
    pub imputation_fallbacks: usize,
    pub columns: Vec<ColumnReport>,
    pub n_nodes: usize,
    pub n_adjacency_edges: usize,
    pub n_commuting_edges: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphBundle {
    pub nodes: Vec<CountyNode>,
    pub labels: Vec<u8>,
    /// `n x d` preprocessed features in catalog order.
    pub features: Tensor,
    pub catalog: FeatureCatalog,
    pub specs: Vec<TransformSpec>,
    pub adjacency: EdgeSet,
    pub commuting: EdgeSet,
}

/// Filters, preprocesses and connects the raw inputs.
pub fn build_bundle(
    table: &RawNodeTable,
    catalog: &FeatureCatalog,
    adjacency: &[(String, String)],
    flows: &CommutingFlowTable,
    sci: &SciTable,
    options: &IngestOptions,
) -> Result<(GraphBundle, IngestReport), BundleError> {
    let (table, filter) = filter_population(table, options.population_floor);
    let nodes = table.county_nodes();
    let index = fips_index(&nodes);
    let known: HashSet<&str> = index.keys().map(String::as_str).collect();
    let pairs: Vec<(String, String)> = adjacency
        .iter()
        .filter(|(a, b)| known.contains(a.as_str()) && known.contains(b.as_str()))
        .cloned()
        .collect();
    let pre = preprocess(&table, catalog, &pairs, options.skew_threshold)?;

    let kept_flows = CommutingFlowTable {
        entries: flows
            .entries
            .iter()
            .filter(|((a, b), _)| known.contains(a.as_str()) && known.contains(b.as_str()))
            .map(|(k, v)| (k.clone(), *v))
            .collect(),
    };
    let populations: HashMap<String, f64> = nodes
        .iter()
        .map(|n| (n.fips.clone(), n.population))
        .collect();
    let mci = compute_mci(&kept_flows, &populations)?;
    let sci = normalize_sci(sci)?;

    let both = [EdgeKind::Sci, EdgeKind::Mci];
    let make_set = |edges: Vec<(usize, usize)>| -> Result<EdgeSet, BundleError> {
        let features = assemble_edge_features(&edges, &nodes, &mci, &sci, &both)?;
        let graph = CountyGraph::new(
            nodes.clone(),
            edges,
            pre.matrix.clone(),
            catalog.node_column_names(),
            features,
            catalog.edge_column_names(),
            table.labels.clone(),
        )?;
        Ok(EdgeSet {
            edges: graph.edges().to_vec(),
            features: graph.edge_features().clone(),
        })
    };
    let adjacency = make_set(edges_adjacency(&pairs, &index)?)?;
    let commuting = make_set(edges_commuting(
        &kept_flows,
        &index,
        options.commuting_threshold,
    ))?;

    let report = IngestReport {
        filter,
        imputed_cells: pre.imputation.imputed(),
        imputation_fallbacks: pre.imputation.fallbacks,
        columns: pre.columns,
        n_nodes: nodes.len(),
        n_adjacency_edges: adjacency.edges.len(),
        n_commuting_edges: commuting.edges.len(),
    };
    let bundle = GraphBundle {
        nodes,
        labels: table.labels.clone(),
        features: pre.matrix,
        catalog: pre.catalog,
        specs: pre.specs,
        adjacency,
        commuting,
    };
    Ok((bundle, report))
}

#[derive(Serialize, Deserialize)]
struct Payload {
    bundle: GraphBundle,
}

fn revalidate(t: &Tensor) -> Result<(), BundleError> {
    Tensor::new(t.rows(), t.cols(), t.data().to_vec())
        .map(|_| ())
        .map_err(|e| BundleError::Format(e.to_string()))
}

impl GraphBundle {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_set(&self, def: EdgeDefinition) -> &EdgeSet {
        match def {
            EdgeDefinition::Adjacent => &self.adjacency,
            EdgeDefinition::CommutingFlows => &self.commuting,
        }
    }

    /// Graph restricted to the given node groups and edge feature kinds.
    pub fn graph(
        &self,
        def: EdgeDefinition,
        edge_kinds: &[EdgeKind],
        groups: &[NodeGroup],
    ) -> Result<CountyGraph, BundleError> {
        Ok(self
            .full_graph(def)?
            .select_columns(&self.catalog, groups, edge_kinds)?)
    }

    /// Graph with every node column and both edge features.
    pub fn full_graph(&self, def: EdgeDefinition) -> Result<CountyGraph, BundleError> {
        let set = self.edge_set(def);
        Ok(CountyGraph::new(
            self.nodes.clone(),
            set.edges.clone(),
            self.features.clone(),
            self.catalog.node_column_names(),
            set.features.clone(),
            self.catalog.edge_column_names(),
            self.labels.clone(),
        )?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, BundleError> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
        let payload = Payload {
            bundle: self.clone(),
        };
        let body = bincode::serialize(&payload).map_err(|e| BundleError::Format(e.to_string()))?;
        out.extend(body);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BundleError> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(BundleError::Format("missing bundle header".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("four bytes"));
        if version != BUNDLE_VERSION {
            return Err(BundleError::VersionMismatch {
                found: version,
                expected: BUNDLE_VERSION,
            });
        }
        let payload: Payload =
            bincode::deserialize(&bytes[12..]).map_err(|e| BundleError::Format(e.to_string()))?;
        let bundle = payload.bundle;
        revalidate(&bundle.features)?;
        revalidate(&bundle.adjacency.features)?;
        revalidate(&bundle.commuting.features)?;
        for def in EdgeDefinition::ALL {
            bundle.full_graph(def)?;
        }
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<(), BundleError> {
        std::fs::write(path, self.to_bytes()?).map_err(|source| BundleError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, BundleError> {
        let bytes = std::fs::read(path).map_err(|source| BundleError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connectivity::{read_flows, read_sci};
    use crate::ingest::{read_adjacency, read_catalog, read_node_table};
    use crate::synth::{generate, SynthConfig};

    fn bundle(missing_rate: f64) -> (GraphBundle, IngestReport) {
        let data = generate(&SynthConfig {
            n_counties: 100,
            missing_rate,
            ..SynthConfig::default()
        })
        .unwrap();
        build_bundle(
            &read_node_table(data.nodes_csv.as_bytes()).unwrap(),
            &read_catalog(data.catalog_csv.as_bytes()).unwrap(),
            &read_adjacency(data.adjacency_csv.as_bytes()).unwrap(),
            &read_flows(data.flows_csv.as_bytes()).unwrap(),
            &read_sci(data.sci_csv.as_bytes()).unwrap(),
            &IngestOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn synthetic_data_round_trips_through_ingest() {
        let (b, report) = bundle(0.0);
        assert_eq!(report.imputed_cells, 0);
        assert_eq!(b.n_nodes(), 100);
        assert_eq!(b.features.cols(), 65);
        assert!(b.features.data().iter().all(|v| (0.0..=1.0).contains(v)));
        // 10 x 10 lattice: 2 * 10 * 9 undirected borders
        assert_eq!(b.adjacency.edges.len(), 2 * 180);
        assert!(b.commuting.edges.len() > b.adjacency.edges.len());
        let mci_max = b
            .commuting
            .features
            .data()
            .chunks(2)
            .map(|r| r[1])
            .fold(0.0, f64::max);
        assert_eq!(mci_max, 1.0);

        let g = b
            .graph(
                EdgeDefinition::Adjacent,
                &[EdgeKind::Mci],
                &[NodeGroup::Competition],
            )
            .unwrap();
        assert_eq!((g.node_dim(), g.edge_dim()), (2, 1));
        let interior = g.index_of("10012").unwrap();
        assert_eq!(g.in_degree(interior), 4);
    }

    #[test]
    fn missing_cells_are_imputed() {
        let (b, report) = bundle(0.05);
        assert!(report.imputed_cells > 0);
        assert!(b.features.all_finite());
    }

    #[test]
    fn bytes_round_trip_and_version_check() {
        let (b, _) = bundle(0.0);
        let bytes = b.to_bytes().unwrap();
        assert_eq!(GraphBundle::from_bytes(&bytes).unwrap(), b);

        let mut wrong = bytes.clone();
        wrong[8..12].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(
            GraphBundle::from_bytes(&wrong),
            Err(BundleError::VersionMismatch { found: 99, .. })
        ));
        assert!(matches!(
            GraphBundle::from_bytes(b"nonsense"),
            Err(BundleError::Format(_))
        ));
    }

    #[test]
    fn edge_definition_parsing() {
        assert_eq!(
            "Commuting Flows".parse::<EdgeDefinition>().unwrap(),
            EdgeDefinition::CommutingFlows
        );
        assert_eq!(
            "adjacent".parse::<EdgeDefinition>().unwrap(),
            EdgeDefinition::Adjacent
        );
        assert!("rail".parse::<EdgeDefinition>().is_err());
    }
}
