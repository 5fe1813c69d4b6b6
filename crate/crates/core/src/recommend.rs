//! Scoring the application set, per-feature attribution, and the
//! network-density filter applied to candidate counties.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::connectivity::{nearest_dealer_distance, Brand, ConnectivityError, DealerSite};
use crate::gnn::{
    forward_on_context, probability_gradient, GnnError, GraphContext, OperatorParams,
};
use crate::graph::{CountyGraph, CountyNode};
use crate::tensor::{sigmoid, Tensor};

pub const DEFAULT_IG_STEPS: usize = 64;

#[derive(Debug, Error)]
pub enum RecommendError {
    #[error("node {0} out of range")]
    InvalidNode(usize),
    #[error(
        "unknown attribution method {0:?} (expected input_x_gradient or integrated_gradients)"
    )]
    InvalidMethod(String),
    #[error("integrated gradients needs at least one step")]
    InvalidSteps,
    #[error("parameters do not fit this graph: {0}")]
    UntrainedParams(String),
    #[error("no Company X dealers to measure distances against")]
    EmptyDealerSet,
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Connectivity(#[from] ConnectivityError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = RecommendError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttributionMethod {
    #[serde(rename = "input_x_gradient")]
    InputXGradient,
    #[serde(rename = "integrated_gradients")]
    IntegratedGradients,
}

impl AttributionMethod {
    pub fn code(self) -> &'static str {
        match self {
            AttributionMethod::InputXGradient => "input_x_gradient",
            AttributionMethod::IntegratedGradients => "integrated_gradients",
        }
    }
}

impl fmt::Display for AttributionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for AttributionMethod {
    type Err = RecommendError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "input_x_gradient" | "inputxgradient" => Ok(AttributionMethod::InputXGradient),
            "integrated_gradients" | "ig" => Ok(AttributionMethod::IntegratedGradients),
            _ => Err(RecommendError::InvalidMethod(s.to_string())),
        }
    }
}

/// Signed per-feature importances for one county's predicted probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub fips: String,
    pub method: AttributionMethod,
    pub features: Vec<String>,
    pub values: Vec<f64>,
}

/// Attributes the probability of `node` to its own feature row.
///
/// Input x gradient is `x ⊙ ∂p/∂x`. Integrated gradients averages the
/// gradient at the midpoints `(s + ½)/steps · x` of the straight path from the
/// zero row to `x` and multiplies by `x`; the other rows stay fixed.
pub fn attribute(
    params: &OperatorParams,
    graph: &CountyGraph,
    node: usize,
    method: AttributionMethod,
    steps: usize,
) -> Result<Attribution> {
    if node >= graph.n_nodes() {
        return Err(RecommendError::InvalidNode(node));
    }
    let ctx = GraphContext::new(graph)?;
    let values = attribute_on_context(params, &ctx, node, method, steps)?;
    Ok(Attribution {
        fips: graph.nodes()[node].fips.clone(),
        method,
        features: graph.node_columns().to_vec(),
        values,
    })
}

pub fn attribute_on_context(
    params: &OperatorParams,
    ctx: &GraphContext,
    node: usize,
    method: AttributionMethod,
    steps: usize,
) -> Result<Vec<f64>> {
    if node >= ctx.n_nodes() {
        return Err(RecommendError::InvalidNode(node));
    }
    let x = ctx.node_features();
    let own: Vec<f64> = x.row(node).to_vec();
    let grad_sum = match method {
        AttributionMethod::InputXGradient => probability_gradient(params, ctx, x, node)?.1,
        AttributionMethod::IntegratedGradients => {
            if steps == 0 {
                return Err(RecommendError::InvalidSteps);
            }
            let mut point: Tensor = x.clone();
            let mut total = vec![0.0; own.len()];
            for s in 0..steps {
                let alpha = (s as f64 + 0.5) / steps as f64;
                for (dst, &v) in point.row_mut(node).iter_mut().zip(&own) {
                    *dst = alpha * v;
                }
                let (_, g) = probability_gradient(params, ctx, &point, node)?;
                for (t, gi) in total.iter_mut().zip(g) {
                    *t += gi;
                }
            }
            total.iter().map(|t| t / steps as f64).collect()
        }
    };
    Ok(own.iter().zip(grad_sum).map(|(x, g)| x * g).collect())
}

/// Features ordered by `|importance|` descending, ties by name; at most `k`.
pub fn top_k_features(attribution: &Attribution, k: usize) -> Vec<(String, f64)> {
    let mut ranked: Vec<(String, f64)> = attribution
        .features
        .iter()
        .cloned()
        .zip(attribution.values.iter().copied())
        .collect();
    ranked.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    ranked
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub node: usize,
    pub fips: String,
    pub name: String,
    pub probability: f64,
}

/// Probabilities for the application nodes (from a full-graph forward pass)
/// that reach `threshold`, highest first; ties by fips.
pub fn predict_application(
    params: &OperatorParams,
    graph: &CountyGraph,
    application: &[usize],
    threshold: f64,
) -> Result<Vec<Prediction>> {
    params
        .validate()
        .map_err(|e| RecommendError::UntrainedParams(e.to_string()))?;
    if (params.d, params.k) != (graph.node_dim(), graph.edge_dim()) {
        return Err(RecommendError::UntrainedParams(format!(
            "model expects d={}, k={}; graph has d={}, k={}",
            params.d,
            params.k,
            graph.node_dim(),
            graph.edge_dim()
        )));
    }
    let ctx = GraphContext::new(graph)?;
    let logits = forward_on_context(params, &ctx, graph.node_features(), false)?.logit_values();
    let mut out = Vec::new();
    for &node in application {
        if node >= graph.n_nodes() {
            return Err(RecommendError::InvalidNode(node));
        }
        let probability = sigmoid(logits[node]);
        if probability >= threshold {
            let county = &graph.nodes()[node];
            out.push(Prediction {
                node,
                fips: county.fips.clone(),
                name: county.name.clone(),
                probability,
            });
        }
    }
    out.sort_by(|a, b| {
        b.probability
            .total_cmp(&a.probability)
            .then_with(|| a.fips.cmp(&b.fips))
    });
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub rank: usize,
    pub fips: String,
    pub name: String,
    pub probability: f64,
    /// Competitor brands with a dealership in the county, in brand order.
    pub competitor_presence: Vec<Brand>,
    pub nearest_dealer_miles: f64,
    pub increases_density: bool,
}

/// `"Competitor A & Competitor B"`, `"Competitor A"`, `"Competitor B"` or `"None"`.
pub fn presence_label(brands: &[Brand]) -> String {
    let names: Vec<&str> = brands
        .iter()
        .filter_map(|b| match b {
            Brand::CompetitorA => Some("Competitor A"),
            Brand::CompetitorB => Some("Competitor B"),
            Brand::CompanyX => None,
        })
        .collect();
    if names.is_empty() {
        "None".to_string()
    } else {
        names.join(" & ")
    }
}

/// Places a hypothetical dealership in each predicted county (on a
/// competitor's site when the county has one, else at the centroid) and
/// flags it when it lands closer to an existing Company X dealer than
/// `median_distance`.
pub fn recommend(
    predictions: &[Prediction],
    counties: &[CountyNode],
    dealers: &[DealerSite],
    median_distance: f64,
) -> Result<Vec<Recommendation>> {
    let company: Vec<DealerSite> = dealers
        .iter()
        .filter(|d| d.brand == Brand::CompanyX)
        .cloned()
        .collect();
    if company.is_empty() {
        return Err(RecommendError::EmptyDealerSet);
    }
    let mut ranked: Vec<&Prediction> = predictions.iter().collect();
    ranked.sort_by(|a, b| {
        b.probability
            .total_cmp(&a.probability)
            .then_with(|| a.fips.cmp(&b.fips))
    });
    ranked
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let county = counties
                .iter()
                .find(|c| c.fips == p.fips)
                .ok_or_else(|| ConnectivityError::UnknownFips(p.fips.clone()))?;
            let mut competitors: Vec<&DealerSite> = dealers
                .iter()
                .filter(|d| d.fips == p.fips && d.brand != Brand::CompanyX)
                .collect();
            competitors.sort_by(|a, b| {
                a.brand
                    .cmp(&b.brand)
                    .then(a.location.0.total_cmp(&b.location.0))
                    .then(a.location.1.total_cmp(&b.location.1))
            });
            let mut presence: Vec<Brand> = competitors.iter().map(|d| d.brand).collect();
            presence.dedup();
            let site = competitors.first().map_or(county.centroid, |d| d.location);
            let (distance, _) = nearest_dealer_distance(site, &company)?;
            Ok(Recommendation {
                rank: i + 1,
                fips: p.fips.clone(),
                name: p.name.clone(),
                probability: p.probability,
                competitor_presence: presence,
                nearest_dealer_miles: distance,
                increases_density: distance < median_distance,
            })
        })
        .collect()
}

/// Recommendations that do not densify the network, in probability order.
pub fn final_shortlist(recommendations: &[Recommendation]) -> Vec<Recommendation> {
    let mut kept: Vec<Recommendation> = recommendations
        .iter()
        .filter(|r| !r.increases_density)
        .cloned()
        .collect();
    kept.sort_by(|a, b| {
        b.probability
            .total_cmp(&a.probability)
            .then_with(|| a.fips.cmp(&b.fips))
    });
    kept
}

fn io_error(path: &Path) -> impl Fn(std::io::Error) -> RecommendError + '_ {
    move |source| RecommendError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_field(text: &str) -> String {
    if text.contains([',', '"', '\n']) {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_string()
    }
}

/// `fips,county,probability,competitor_presence,nearest_dealer_miles,increases_density`
pub fn write_recommendations(path: &Path, recommendations: &[Recommendation]) -> Result<()> {
    let err = io_error(path);
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(&err)?);
    writeln!(
        out,
        "fips,county,probability,competitor_presence,nearest_dealer_miles,increases_density"
    )
    .map_err(&err)?;
    for r in recommendations {
        writeln!(
            out,
            "{},{},{:.4},{},{:.1},{}",
            r.fips,
            csv_field(&r.name),
            r.probability,
            csv_field(&presence_label(&r.competitor_presence)),
            r.nearest_dealer_miles,
            if r.increases_density { "Yes" } else { "No" }
        )
        .map_err(&err)?;
    }
    out.flush().map_err(&err)
}

/// `fips,feature,importance,rank` with rank 1 for the largest `|importance|`.
pub fn write_attributions(path: &Path, attributions: &[Attribution]) -> Result<()> {
    let err = io_error(path);
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(&err)?);
    writeln!(out, "fips,feature,importance,rank").map_err(&err)?;
    for a in attributions {
        for (rank, (feature, value)) in top_k_features(a, a.features.len()).into_iter().enumerate()
        {
            writeln!(
                out,
                "{},{},{:.6e},{}",
                a.fips,
                csv_field(&feature),
                value,
                rank + 1
            )
            .map_err(&err)?;
        }
    }
    out.flush().map_err(&err)
}
