//! County graph: nodes keyed by FIPS code, a set-symmetric directed edge
//! list, node/edge feature matrices and binary labels.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("duplicate fips {0}")]
    DuplicateFips(String),
    #[error("fips {0:?} must have exactly 5 characters")]
    InvalidFips(String),
    #[error("invalid coordinate ({lat}, {lon}) for county {fips}")]
    InvalidCoordinate { fips: String, lat: f64, lon: f64 },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("edge ({0}, {1}) has no reverse edge")]
    AsymmetricEdgeSet(usize, usize),
    #[error("invalid node id {0}")]
    InvalidNodeId(usize),
    #[error("label {value} on node {node} is not 0 or 1")]
    InvalidLabel { node: usize, value: u8 },
    #[error("unknown feature group or edge kind {0}")]
    UnknownGroup(String),
    #[error("column {0} is not present in the graph")]
    MissingColumn(String),
}

/// The five county-variable groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeGroup {
    #[serde(rename = "BD")]
    BasicDemographics,
    #[serde(rename = "WE")]
    Wealth,
    #[serde(rename = "TB")]
    TransportationBehavior,
    #[serde(rename = "LB")]
    LuxuryBehavior,
    #[serde(rename = "CO")]
    Competition,
}

impl NodeGroup {
    pub const ALL: [NodeGroup; 5] = [
        NodeGroup::BasicDemographics,
        NodeGroup::Wealth,
        NodeGroup::TransportationBehavior,
        NodeGroup::LuxuryBehavior,
        NodeGroup::Competition,
    ];

    pub fn code(self) -> &'static str {
        match self {
            NodeGroup::BasicDemographics => "BD",
            NodeGroup::Wealth => "WE",
            NodeGroup::TransportationBehavior => "TB",
            NodeGroup::LuxuryBehavior => "LB",
            NodeGroup::Competition => "CO",
        }
    }
}

impl fmt::Display for NodeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for NodeGroup {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NodeGroup::ALL
            .into_iter()
            .find(|g| g.code().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| GraphError::UnknownGroup(s.to_string()))
    }
}

/// Edge feature kinds. Declaration order is the canonical column order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeKind {
    #[serde(rename = "SCI")]
    Sci,
    #[serde(rename = "MCI")]
    Mci,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 2] = [EdgeKind::Sci, EdgeKind::Mci];

    pub fn code(self) -> &'static str {
        match self {
            EdgeKind::Sci => "SCI",
            EdgeKind::Mci => "MCI",
        }
    }
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for EdgeKind {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EdgeKind::ALL
            .into_iter()
            .find(|k| k.code().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| GraphError::UnknownGroup(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountyNode {
    pub fips: String,
    pub name: String,
    /// (latitude, longitude) in degrees.
    pub centroid: (f64, f64),
    pub population: f64,
}

impl CountyNode {
    pub fn new(
        fips: impl Into<String>,
        name: impl Into<String>,
        lat: f64,
        lon: f64,
        population: f64,
    ) -> Self {
        Self {
            fips: fips.into(),
            name: name.into(),
            centroid: (lat, lon),
            population,
        }
    }
}

/// Ordered assignment of node columns to groups and edge columns to kinds.
/// The order here is the canonical column order of the full feature matrices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureCatalog {
    pub node_columns: Vec<(String, NodeGroup)>,
    pub edge_columns: Vec<(String, EdgeKind)>,
}

impl FeatureCatalog {
    pub fn new(node_columns: Vec<(String, NodeGroup)>) -> Self {
        Self {
            node_columns,
            edge_columns: EdgeKind::ALL
                .iter()
                .map(|k| (k.code().to_string(), *k))
                .collect(),
        }
    }

    pub fn group_of(&self, column: &str) -> Option<NodeGroup> {
        self.node_columns
            .iter()
            .find(|(name, _)| name == column)
            .map(|(_, g)| *g)
    }

    pub fn columns_in(&self, group: NodeGroup) -> Vec<&str> {
        self.node_columns
            .iter()
            .filter(|(_, g)| *g == group)
            .map(|(name, _)| name.as_str())
            .collect()
    }

    pub fn node_column_names(&self) -> Vec<String> {
        self.node_columns.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn edge_column_names(&self) -> Vec<String> {
        self.edge_columns.iter().map(|(n, _)| n.clone()).collect()
    }
}

/// Immutable county graph. Edges are kept sorted by `(dst, src)` so the
/// in-neighbours of every node form a contiguous, ascending run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountyGraph {
    nodes: Vec<CountyNode>,
    edges: Vec<(usize, usize)>,
    node_features: Tensor,
    node_columns: Vec<String>,
    edge_features: Tensor,
    edge_columns: Vec<String>,
    labels: Vec<u8>,
    in_offsets: Vec<usize>,
}

/// Validates the inputs and returns a graph with default column names
/// (`x0..`, `e0..`). Edges are re-ordered by `(dst, src)`; edge feature
/// rows follow their edges.
pub fn build_graph(
    nodes: Vec<CountyNode>,
    edges: Vec<(usize, usize)>,
    node_features: Tensor,
    edge_features: Tensor,
    labels: Vec<u8>,
) -> Result<CountyGraph, GraphError> {
    let node_columns = (0..node_features.cols()).map(|c| format!("x{c}")).collect();
    let edge_columns = (0..edge_features.cols()).map(|c| format!("e{c}")).collect();
    CountyGraph::new(
        nodes,
        edges,
        node_features,
        node_columns,
        edge_features,
        edge_columns,
        labels,
    )
}

impl CountyGraph {
    pub fn new(
        nodes: Vec<CountyNode>,
        edges: Vec<(usize, usize)>,
        node_features: Tensor,
        node_columns: Vec<String>,
        edge_features: Tensor,
        edge_columns: Vec<String>,
        labels: Vec<u8>,
    ) -> Result<Self, GraphError> {
        let n = nodes.len();
        if node_features.rows() != n || labels.len() != n {
            return Err(GraphError::DimensionMismatch(format!(
                "{n} nodes, {} feature rows, {} labels",
                node_features.rows(),
                labels.len()
            )));
        }
        if edge_features.rows() != edges.len() {
            return Err(GraphError::DimensionMismatch(format!(
                "{} edges, {} edge feature rows",
                edges.len(),
                edge_features.rows()
            )));
        }
        if node_columns.len() != node_features.cols() || edge_columns.len() != edge_features.cols()
        {
            return Err(GraphError::DimensionMismatch(
                "column names do not match feature widths".into(),
            ));
        }
        let mut seen = HashSet::with_capacity(n);
        for node in &nodes {
            if node.fips.chars().count() != 5 {
                return Err(GraphError::InvalidFips(node.fips.clone()));
            }
            if !seen.insert(node.fips.as_str()) {
                return Err(GraphError::DuplicateFips(node.fips.clone()));
            }
            let (lat, lon) = node.centroid;
            if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
                return Err(GraphError::InvalidCoordinate {
                    fips: node.fips.clone(),
                    lat,
                    lon,
                });
            }
        }
        if let Some((node, &value)) = labels.iter().enumerate().find(|(_, &l)| l > 1) {
            return Err(GraphError::InvalidLabel { node, value });
        }

        let mut edge_set = HashSet::with_capacity(edges.len());
        for &(src, dst) in &edges {
            if src >= n {
                return Err(GraphError::InvalidNodeId(src));
            }
            if dst >= n {
                return Err(GraphError::InvalidNodeId(dst));
            }
            if src == dst {
                return Err(GraphError::SelfLoop(src));
            }
            if !edge_set.insert((src, dst)) {
                return Err(GraphError::DuplicateEdge(src, dst));
            }
        }
        for &(src, dst) in &edges {
            if !edge_set.contains(&(dst, src)) {
                return Err(GraphError::AsymmetricEdgeSet(src, dst));
            }
        }

        let mut order: Vec<usize> = (0..edges.len()).collect();
        order.sort_by_key(|&e| (edges[e].1, edges[e].0));
        let sorted_edges: Vec<(usize, usize)> = order.iter().map(|&e| edges[e]).collect();
        let edge_features = edge_features
            .select_rows(&order)
            .map_err(|e| GraphError::DimensionMismatch(e.to_string()))?;

        let mut in_offsets = vec![0usize; n + 1];
        for &(_, dst) in &sorted_edges {
            in_offsets[dst + 1] += 1;
        }
        for i in 0..n {
            in_offsets[i + 1] += in_offsets[i];
        }

        Ok(Self {
            nodes,
            edges: sorted_edges,
            node_features,
            node_columns,
            edge_features,
            edge_columns,
            labels,
            in_offsets,
        })
    }

    /// Renames the feature columns, keeping the data.
    pub fn with_column_names(
        mut self,
        node_columns: Vec<String>,
        edge_columns: Vec<String>,
    ) -> Result<Self, GraphError> {
        if node_columns.len() != self.node_features.cols()
            || edge_columns.len() != self.edge_features.cols()
        {
            return Err(GraphError::DimensionMismatch(
                "column names do not match feature widths".into(),
            ));
        }
        self.node_columns = node_columns;
        self.edge_columns = edge_columns;
        Ok(self)
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[CountyNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_features(&self) -> &Tensor {
        &self.node_features
    }

    pub fn edge_features(&self) -> &Tensor {
        &self.edge_features
    }

    pub fn node_columns(&self) -> &[String] {
        &self.node_columns
    }

    pub fn edge_columns(&self) -> &[String] {
        &self.edge_columns
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Number of node features `d`.
    pub fn node_dim(&self) -> usize {
        self.node_features.cols()
    }

    /// Number of edge features `k`.
    pub fn edge_dim(&self) -> usize {
        self.edge_features.cols()
    }

    pub fn index_of(&self, fips: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.fips == fips)
    }

    /// In-neighbours of `node` in ascending id order, each with the feature
    /// row of the edge `(neighbour, node)`.
    pub fn neighbors(&self, node: usize) -> Result<Vec<(usize, &[f64])>, GraphError> {
        if node >= self.nodes.len() {
            return Err(GraphError::InvalidNodeId(node));
        }
        Ok((self.in_offsets[node]..self.in_offsets[node + 1])
            .map(|e| (self.edges[e].0, self.edge_features.row(e)))
            .collect())
    }

    pub fn in_degree(&self, node: usize) -> usize {
        self.in_offsets[node + 1] - self.in_offsets[node]
    }

    pub fn out_degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|(src, _)| *src == node).count()
    }

    /// Source node of every edge, in storage order.
    pub fn sources(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.0).collect()
    }

    /// Destination node of every edge, in storage order (ascending).
    pub fn targets(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.1).collect()
    }

    /// Same graph with a replacement node feature matrix of the same shape.
    pub fn with_node_features(&self, features: Tensor) -> Result<Self, GraphError> {
        if features.shape() != self.node_features.shape() {
            return Err(GraphError::DimensionMismatch(format!(
                "expected {:?}, got {:?}",
                self.node_features.shape(),
                features.shape()
            )));
        }
        let mut out = self.clone();
        out.node_features = features;
        Ok(out)
    }

    /// Restricts the feature matrices to the columns of the requested
    /// groups and edge kinds, in catalog order.
    pub fn select_columns(
        &self,
        catalog: &FeatureCatalog,
        node_groups: &[NodeGroup],
        edge_kinds: &[EdgeKind],
    ) -> Result<Self, GraphError> {
        for g in node_groups {
            if !catalog.node_columns.iter().any(|(_, cg)| cg == g) {
                return Err(GraphError::UnknownGroup(g.code().to_string()));
            }
        }
        for k in edge_kinds {
            if !catalog.edge_columns.iter().any(|(_, ck)| ck == k) {
                return Err(GraphError::UnknownGroup(k.code().to_string()));
            }
        }
        let node_idx = resolve_columns(
            &self.node_columns,
            catalog
                .node_columns
                .iter()
                .filter(|(_, g)| node_groups.contains(g))
                .map(|(name, _)| name.as_str()),
        )?;
        let edge_idx = resolve_columns(
            &self.edge_columns,
            catalog
                .edge_columns
                .iter()
                .filter(|(_, k)| edge_kinds.contains(k))
                .map(|(name, _)| name.as_str()),
        )?;
        let mut out = self.clone();
        out.node_features = self
            .node_features
            .select_cols(&node_idx)
            .map_err(|e| GraphError::DimensionMismatch(e.to_string()))?;
        out.edge_features = self
            .edge_features
            .select_cols(&edge_idx)
            .map_err(|e| GraphError::DimensionMismatch(e.to_string()))?;
        out.node_columns = node_idx
            .iter()
            .map(|&c| self.node_columns[c].clone())
            .collect();
        out.edge_columns = edge_idx
            .iter()
            .map(|&c| self.edge_columns[c].clone())
            .collect();
        Ok(out)
    }
}

fn resolve_columns<'a>(
    present: &[String],
    wanted: impl Iterator<Item = &'a str>,
) -> Result<Vec<usize>, GraphError> {
    wanted
        .map(|name| {
            present
                .iter()
                .position(|p| p == name)
                .ok_or_else(|| GraphError::MissingColumn(name.to_string()))
        })
        .collect()
}

/// Symmetric closure of undirected pairs, dropping duplicates.
pub fn symmetric_closure(pairs: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut set = std::collections::BTreeSet::new();
    for &(a, b) in pairs {
        if a != b {
            set.insert((a, b));
            set.insert((b, a));
        }
    }
    set.into_iter().collect()
}
