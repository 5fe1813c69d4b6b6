//! Two-round ablation over operator kinds, edge settings and node-feature
//! groups, with Table-shaped CSV reports.
//!
//! Round 1 scores each node group on its own under adjacency edges with both
//! edge features and ranks the groups by the median F-β across operator kinds.
//! Round 2 evaluates every cumulative prefix of that ranking on the edge grid.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::{BundleError, EdgeDefinition, GraphBundle};
use crate::connectivity::median;
use crate::gnn::OperatorKind;
use crate::graph::{EdgeKind, NodeGroup};
use crate::train::{cross_validate, FoldMetrics, Metrics, Split, TrainConfig, TrainError};

pub const TOP_RESULTS: usize = 10;

#[derive(Debug, Error)]
pub enum AblationError {
    #[error("no results to choose from")]
    EmptyResults,
    #[error("invalid study configuration: {0}")]
    InvalidConfig(String),
    #[error("catalog has no columns for group {0}")]
    MissingGroup(NodeGroup),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = AblationError> = std::result::Result<T, E>;

/// One cell of the study grid. The derived order (kind, edge definition,
/// edge kinds, node groups) is the final tie-break between equal scores.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ComboSpec {
    pub kind: OperatorKind,
    pub edge_def: EdgeDefinition,
    pub edge_kinds: Vec<EdgeKind>,
    pub node_groups: Vec<NodeGroup>,
}

impl ComboSpec {
    pub fn validate(&self) -> Result<()> {
        if self.edge_kinds.is_empty() || self.node_groups.is_empty() {
            return Err(AblationError::InvalidConfig(format!(
                "combo {self} needs at least one edge feature and one node group"
            )));
        }
        Ok(())
    }

    /// `"SCI + MCI"`, `"SCI"` or `"MCI"`.
    pub fn edge_label(&self) -> String {
        edge_kinds_label(&self.edge_kinds)
    }

    /// Node groups joined in study order, e.g. `"CO + BD"`.
    pub fn node_label(&self) -> String {
        node_groups_label(&self.node_groups)
    }
}

impl fmt::Display for ComboSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} / {} / {} / {}",
            self.kind,
            self.edge_def.label(),
            self.edge_label(),
            self.node_label()
        )
    }
}

pub fn edge_kinds_label(kinds: &[EdgeKind]) -> String {
    kinds
        .iter()
        .map(|k| k.code())
        .collect::<Vec<_>>()
        .join(" + ")
}

pub fn node_groups_label(groups: &[NodeGroup]) -> String {
    groups
        .iter()
        .map(|g| g.code())
        .collect::<Vec<_>>()
        .join(" + ")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub round: u8,
    pub combo: ComboSpec,
    /// Mean of the per-fold test metrics.
    pub metrics: Metrics,
    pub folds: Vec<FoldMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    pub group: NodeGroup,
    pub median_f_beta: f64,
    pub median_precision: f64,
}

/// Grid and training settings. The defaults give the full study; `quick`
/// keeps round 1 intact and restricts round 2 to adjacency edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub train: TrainConfig,
    pub kinds: Vec<OperatorKind>,
    pub edge_definitions: Vec<EdgeDefinition>,
    pub edge_feature_sets: Vec<Vec<EdgeKind>>,
    /// Number of cumulative group prefixes evaluated in round 2.
    pub max_prefix: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            kinds: OperatorKind::ALL.to_vec(),
            edge_definitions: EdgeDefinition::ALL.to_vec(),
            edge_feature_sets: vec![
                vec![EdgeKind::Mci],
                vec![EdgeKind::Sci],
                vec![EdgeKind::Sci, EdgeKind::Mci],
            ],
            max_prefix: NodeGroup::ALL.len(),
        }
    }
}

impl StudyConfig {
    pub fn quick() -> Self {
        Self {
            edge_definitions: vec![EdgeDefinition::Adjacent],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train
            .validate()
            .map_err(|e| AblationError::InvalidConfig(e.to_string()))?;
        let invalid = |msg: &str| Err(AblationError::InvalidConfig(msg.to_string()));
        if self.kinds.is_empty() {
            return invalid("kinds must not be empty");
        }
        if self.edge_definitions.is_empty() {
            return invalid("edge_definitions must not be empty");
        }
        if self.edge_feature_sets.is_empty() || self.edge_feature_sets.iter().any(Vec::is_empty) {
            return invalid("edge_feature_sets must be non-empty lists of SCI/MCI");
        }
        if !(1..=NodeGroup::ALL.len()).contains(&self.max_prefix) {
            return invalid("max_prefix must be between 1 and 5");
        }
        Ok(())
    }

    /// Round-1 plus round-2 cross-validations this configuration runs.
    pub fn n_evaluations(&self) -> usize {
        let kinds = self.kinds.len();
        kinds * NodeGroup::ALL.len()
            + kinds * self.max_prefix * self.edge_definitions.len() * self.edge_feature_sets.len()
    }
}

/// Called once per finished cross-validation, in completion order.
pub type Progress<'a> = &'a (dyn Fn(&StudyResult) + Sync);

fn evaluate(
    bundle: &GraphBundle,
    split: &Split,
    combo: &ComboSpec,
    round: u8,
    train: &TrainConfig,
    progress: Progress<'_>,
) -> Result<StudyResult> {
    combo.validate()?;
    let graph = bundle.graph(combo.edge_def, &combo.edge_kinds, &combo.node_groups)?;
    let cv = cross_validate(combo.kind, &graph, split, train)?;
    let result = StudyResult {
        round,
        combo: combo.clone(),
        metrics: cv.mean,
        folds: cv.folds,
    };
    progress(&result);
    Ok(result)
}

fn evaluate_all(
    bundle: &GraphBundle,
    split: &Split,
    combos: &[ComboSpec],
    round: u8,
    train: &TrainConfig,
    progress: Progress<'_>,
) -> Result<Vec<StudyResult>> {
    combos
        .par_iter()
        .map(|combo| evaluate(bundle, split, combo, round, train, progress))
        .collect()
}

fn check_groups(bundle: &GraphBundle) -> Result<()> {
    for group in NodeGroup::ALL {
        if bundle.catalog.columns_in(group).is_empty() {
            return Err(AblationError::MissingGroup(group));
        }
    }
    Ok(())
}

pub fn round1_combos(kinds: &[OperatorKind]) -> Vec<ComboSpec> {
    NodeGroup::ALL
        .iter()
        .flat_map(|&group| {
            kinds.iter().map(move |&kind| ComboSpec {
                kind,
                edge_def: EdgeDefinition::Adjacent,
                edge_kinds: vec![EdgeKind::Sci, EdgeKind::Mci],
                node_groups: vec![group],
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Round1 {
    pub results: Vec<StudyResult>,
    pub ranking: Vec<GroupScore>,
}

pub fn run_round1(
    bundle: &GraphBundle,
    split: &Split,
    config: &StudyConfig,
    progress: Progress<'_>,
) -> Result<Round1> {
    config.validate()?;
    check_groups(bundle)?;
    let results = evaluate_all(
        bundle,
        split,
        &round1_combos(&config.kinds),
        1,
        &config.train,
        progress,
    )?;
    let ranking = rank_groups(&results);
    Ok(Round1 { results, ranking })
}

/// Single-group results ranked by median F-β across kinds, descending;
/// ties by median precision, then group code.
pub fn rank_groups(results: &[StudyResult]) -> Vec<GroupScore> {
    let mut scores: Vec<GroupScore> = NodeGroup::ALL
        .iter()
        .map(|&group| {
            let own: Vec<&StudyResult> = results
                .iter()
                .filter(|r| r.combo.node_groups == [group])
                .collect();
            let f: Vec<f64> = own.iter().map(|r| r.metrics.f_beta).collect();
            let p: Vec<f64> = own.iter().map(|r| r.metrics.precision).collect();
            GroupScore {
                group,
                median_f_beta: if f.is_empty() { 0.0 } else { median(&f) },
                median_precision: if p.is_empty() { 0.0 } else { median(&p) },
            }
        })
        .collect();
    scores.sort_by(|a, b| {
        b.median_f_beta
            .total_cmp(&a.median_f_beta)
            .then(b.median_precision.total_cmp(&a.median_precision))
            .then_with(|| a.group.code().cmp(b.group.code()))
    });
    scores
}

/// Node-feature prefixes of the ranking: `[g1]`, `[g1, g2]`, ...
pub fn prefixes(ranking: &[NodeGroup], max_prefix: usize) -> Vec<Vec<NodeGroup>> {
    (1..=max_prefix.min(ranking.len()))
        .map(|n| ranking[..n].to_vec())
        .collect()
}

pub fn round2_combos(ranking: &[NodeGroup], config: &StudyConfig) -> Vec<ComboSpec> {
    let mut combos = Vec::new();
    for &kind in &config.kinds {
        for &edge_def in &config.edge_definitions {
            for edge_kinds in &config.edge_feature_sets {
                for node_groups in prefixes(ranking, config.max_prefix) {
                    combos.push(ComboSpec {
                        kind,
                        edge_def,
                        edge_kinds: edge_kinds.clone(),
                        node_groups,
                    });
                }
            }
        }
    }
    combos
}

pub fn run_round2(
    bundle: &GraphBundle,
    split: &Split,
    ranking: &[NodeGroup],
    config: &StudyConfig,
    progress: Progress<'_>,
) -> Result<Vec<StudyResult>> {
    config.validate()?;
    check_groups(bundle)?;
    evaluate_all(
        bundle,
        split,
        &round2_combos(ranking, config),
        2,
        &config.train,
        progress,
    )
}

/// Orders results best first: F-β, precision, recall descending, then the
/// smaller combo.
pub fn compare_results(a: &StudyResult, b: &StudyResult) -> Ordering {
    b.metrics
        .f_beta
        .total_cmp(&a.metrics.f_beta)
        .then(b.metrics.precision.total_cmp(&a.metrics.precision))
        .then(b.metrics.recall.total_cmp(&a.metrics.recall))
        .then_with(|| a.combo.cmp(&b.combo))
}

pub fn best_combo(results: &[StudyResult]) -> Result<&StudyResult> {
    results
        .iter()
        .min_by(|a, b| compare_results(a, b))
        .ok_or(AblationError::EmptyResults)
}

pub fn sorted_results(results: &[StudyResult]) -> Vec<StudyResult> {
    let mut sorted = results.to_vec();
    sorted.sort_by(compare_results);
    sorted
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub round1: Round1,
    pub round2: Vec<StudyResult>,
    pub best: StudyResult,
}

impl StudyReport {
    pub fn ranking_groups(&self) -> Vec<NodeGroup> {
        self.round1.ranking.iter().map(|s| s.group).collect()
    }

    pub fn all_results(&self) -> impl Iterator<Item = &StudyResult> {
        self.round1.results.iter().chain(&self.round2)
    }
}

pub fn run_study(
    bundle: &GraphBundle,
    split: &Split,
    config: &StudyConfig,
    progress: Progress<'_>,
) -> Result<StudyReport> {
    let round1 = run_round1(bundle, split, config, progress)?;
    let ranking: Vec<NodeGroup> = round1.ranking.iter().map(|s| s.group).collect();
    let round2 = run_round2(bundle, split, &ranking, config, progress)?;
    let best = best_combo(&round2)?.clone();
    Ok(StudyReport {
        config: config.clone(),
        round1,
        round2,
        best,
    })
}

struct Out<'a> {
    path: &'a Path,
    buf: std::io::BufWriter<std::fs::File>,
}

impl<'a> Out<'a> {
    fn create(path: &'a Path) -> Result<Self> {
        let file = std::fs::File::create(path).map_err(|e| io_error(path, e))?;
        Ok(Self {
            path,
            buf: std::io::BufWriter::new(file),
        })
    }

    fn line(&mut self, text: &str) -> Result<()> {
        writeln!(self.buf, "{text}").map_err(|e| io_error(self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.buf.flush().map_err(|e| io_error(self.path, e))
    }
}

fn io_error(path: &Path, source: std::io::Error) -> AblationError {
    AblationError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub const TOP10_FILE: &str = "top10.csv";
pub const RESULTS_FILE: &str = "results.csv";
pub const RANKING_FILE: &str = "round1_ranking.csv";

/// File name of the per-kind matrix, e.g. `matrix_MPNN.csv`.
pub fn matrix_file(kind: OperatorKind) -> String {
    format!("matrix_{}.csv", kind.name())
}

/// Writes the report files into `dir` and returns their paths:
///
/// * `top10.csv`: the ten best round-2 combos.
/// * `matrix_<kind>.csv`: per kind, edge-setting rows by node-set columns of
///   mean F-β rounded to 3 decimals.
/// * `round1_ranking.csv`: group medians in rank order.
/// * `results.csv`: every evaluation, in grid order.
pub fn emit_tables(report: &StudyReport, dir: &Path) -> Result<Vec<PathBuf>> {
    if report.round2.is_empty() {
        return Err(AblationError::EmptyResults);
    }
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let mut written = Vec::new();

    let path = dir.join(TOP10_FILE);
    let mut out = Out::create(&path)?;
    out.line("rank,model,edge_definition,edge_features,node_features,f_beta,precision,recall")?;
    for (i, r) in sorted_results(&report.round2)
        .iter()
        .take(TOP_RESULTS)
        .enumerate()
    {
        out.line(&format!(
            "{},{},{},{},{},{:.2},{:.2},{:.2}",
            i + 1,
            r.combo.kind,
            r.combo.edge_def.label(),
            r.combo.edge_label(),
            r.combo.node_label(),
            r.metrics.f_beta,
            r.metrics.precision,
            r.metrics.recall
        ))?;
    }
    out.finish()?;
    written.push(path);

    let columns = prefixes(&report.ranking_groups(), report.config.max_prefix);
    let mut kinds: Vec<OperatorKind> = report.round2.iter().map(|r| r.combo.kind).collect();
    kinds.sort();
    kinds.dedup();
    for kind in kinds {
        let path = dir.join(matrix_file(kind));
        let mut out = Out::create(&path)?;
        let header: Vec<String> = columns.iter().map(|c| node_groups_label(c)).collect();
        out.line(&format!(
            "edge_definition,edge_features,{}",
            header.join(",")
        ))?;
        for &def in &report.config.edge_definitions {
            for kinds_set in &report.config.edge_feature_sets {
                let cells: Vec<String> = columns
                    .iter()
                    .map(|groups| {
                        report
                            .round2
                            .iter()
                            .find(|r| {
                                r.combo.kind == kind
                                    && r.combo.edge_def == def
                                    && &r.combo.edge_kinds == kinds_set
                                    && &r.combo.node_groups == groups
                            })
                            .map_or_else(String::new, |r| format!("{:.3}", r.metrics.f_beta))
                    })
                    .collect();
                out.line(&format!(
                    "{},{},{}",
                    def.label(),
                    edge_kinds_label(kinds_set),
                    cells.join(",")
                ))?;
            }
        }
        out.finish()?;
        written.push(path);
    }

    let path = dir.join(RANKING_FILE);
    let mut out = Out::create(&path)?;
    out.line("rank,group,median_f_beta,median_precision")?;
    for (i, s) in report.round1.ranking.iter().enumerate() {
        out.line(&format!(
            "{},{},{:.6},{:.6}",
            i + 1,
            s.group,
            s.median_f_beta,
            s.median_precision
        ))?;
    }
    out.finish()?;
    written.push(path);

    let path = dir.join(RESULTS_FILE);
    let mut out = Out::create(&path)?;
    out.line(
        "round,model,edge_definition,edge_features,node_features,f_beta,precision,recall,accuracy",
    )?;
    for r in report.all_results() {
        out.line(&format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            r.round,
            r.combo.kind,
            r.combo.edge_def.label(),
            r.combo.edge_label(),
            r.combo.node_label(),
            r.metrics.f_beta,
            r.metrics.precision,
            r.metrics.recall,
            r.metrics.accuracy
        ))?;
    }
    out.finish()?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(kind: OperatorKind, groups: &[NodeGroup], f: f64, p: f64, r: f64) -> StudyResult {
        StudyResult {
            round: 2,
            combo: ComboSpec {
                kind,
                edge_def: EdgeDefinition::Adjacent,
                edge_kinds: vec![EdgeKind::Mci],
                node_groups: groups.to_vec(),
            },
            metrics: Metrics {
                f_beta: f,
                precision: p,
                recall: r,
                accuracy: 0.9,
            },
            folds: vec![],
        }
    }

    #[test]
    fn grid_sizes() {
        let ranking = [
            NodeGroup::Competition,
            NodeGroup::BasicDemographics,
            NodeGroup::Wealth,
            NodeGroup::LuxuryBehavior,
            NodeGroup::TransportationBehavior,
        ];
        let full = StudyConfig::default();
        let combos = round2_combos(&ranking, &full);
        assert_eq!(combos.len(), 300);
        for kind in OperatorKind::ALL {
            assert_eq!(combos.iter().filter(|c| c.kind == kind).count(), 30);
        }
        assert_eq!(round1_combos(&full.kinds).len(), 50);
        assert_eq!(full.n_evaluations(), 350);
        let p = prefixes(&ranking, 5);
        assert_eq!(
            p[1],
            vec![NodeGroup::Competition, NodeGroup::BasicDemographics]
        );
        assert_eq!(node_groups_label(&p[4]), "CO + BD + WE + LB + TB");
        assert_eq!(StudyConfig::quick().n_evaluations(), 200);
        let mut unique = combos.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), combos.len());
    }

    #[test]
    fn best_combo_tie_rules() {
        assert!(matches!(best_combo(&[]), Err(AblationError::EmptyResults)));
        let only = result(OperatorKind::Mpnn, &[NodeGroup::Competition], 0.5, 0.5, 0.5);
        assert_eq!(best_combo(std::slice::from_ref(&only)).unwrap(), &only);
        let a = result(OperatorKind::Mpnn, &[NodeGroup::Competition], 0.9, 0.9, 0.6);
        let b = result(
            OperatorKind::GatConv,
            &[NodeGroup::Competition],
            0.9,
            0.9,
            0.7,
        );
        assert_eq!(best_combo(&[a.clone(), b.clone()]).unwrap(), &b);
        let c = result(
            OperatorKind::GatConv,
            &[NodeGroup::Competition],
            0.9,
            0.9,
            0.6,
        );
        assert_eq!(best_combo(&[a.clone(), c.clone()]).unwrap(), &c);
        let d = result(
            OperatorKind::GeneralConv,
            &[NodeGroup::Wealth],
            0.91,
            0.1,
            0.1,
        );
        assert_eq!(best_combo(&[a, b, c, d.clone()]).unwrap(), &d);
    }

    #[test]
    fn group_ranking_uses_medians_and_tie_breaks() {
        let mut results = Vec::new();
        let f_by_group = [
            (NodeGroup::BasicDemographics, [0.1, 0.7, 0.7, 0.9], 0.5),
            (NodeGroup::Wealth, [0.6, 0.6, 0.8, 0.8], 0.5),
            (NodeGroup::TransportationBehavior, [0.0, 0.2, 0.2, 0.0], 0.3),
            (NodeGroup::LuxuryBehavior, [0.0, 0.2, 0.2, 0.0], 0.4),
            (NodeGroup::Competition, [0.9, 0.1, 0.9, 0.95], 0.9),
        ];
        for (group, fs, p) in f_by_group {
            for (i, f) in fs.into_iter().enumerate() {
                results.push(result(OperatorKind::ALL[i], &[group], f, p, 0.5));
            }
        }
        let ranking: Vec<NodeGroup> = rank_groups(&results).iter().map(|s| s.group).collect();
        assert_eq!(
            ranking,
            [
                NodeGroup::Competition,
                NodeGroup::BasicDemographics,
                NodeGroup::Wealth,
                NodeGroup::LuxuryBehavior,
                NodeGroup::TransportationBehavior
            ]
        );
        let scores = rank_groups(&results);
        assert!((scores[0].median_f_beta - 0.9).abs() < 1e-12);
        assert!((scores[1].median_f_beta - 0.7).abs() < 1e-12);
    }

    #[test]
    fn config_validation_and_toml_shape() {
        assert!(StudyConfig::default().validate().is_ok());
        let bad = StudyConfig {
            edge_feature_sets: vec![vec![]],
            ..StudyConfig::default()
        };
        assert!(matches!(
            bad.validate(),
            Err(AblationError::InvalidConfig(_))
        ));
        let json = serde_json::to_string(&StudyConfig::quick()).unwrap();
        let back: StudyConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, StudyConfig::quick());
    }

    #[test]
    fn tables_have_expected_shape() {
        let config = StudyConfig::default();
        let ranking = [
            NodeGroup::Competition,
            NodeGroup::BasicDemographics,
            NodeGroup::Wealth,
            NodeGroup::LuxuryBehavior,
            NodeGroup::TransportationBehavior,
        ];
        let round2: Vec<StudyResult> = round2_combos(&ranking, &config)
            .into_iter()
            .enumerate()
            .map(|(i, combo)| StudyResult {
                round: 2,
                combo,
                metrics: Metrics {
                    f_beta: (i % 97) as f64 / 100.0,
                    precision: 0.5,
                    recall: 0.5,
                    accuracy: 0.5,
                },
                folds: vec![],
            })
            .collect();
        let round1 = Round1 {
            results: vec![],
            ranking: ranking
                .iter()
                .map(|&group| GroupScore {
                    group,
                    median_f_beta: 0.0,
                    median_precision: 0.0,
                })
                .collect(),
        };
        let best = best_combo(&round2).unwrap().clone();
        let report = StudyReport {
            config,
            round1,
            round2,
            best,
        };
        let dir = tempfile::tempdir().unwrap();
        let files = emit_tables(&report, dir.path()).unwrap();
        assert_eq!(files.len(), 13);
        let top = std::fs::read_to_string(dir.path().join(TOP10_FILE)).unwrap();
        assert_eq!(top.lines().count(), 11);
        assert!(top.lines().nth(1).unwrap().ends_with(",0.96,0.50,0.50"));
        let matrix =
            std::fs::read_to_string(dir.path().join(matrix_file(OperatorKind::Mpnn))).unwrap();
        let lines: Vec<&str> = matrix.lines().collect();
        assert_eq!(lines.len(), 7);
        assert_eq!(
            lines[0],
            "edge_definition,edge_features,CO,CO + BD,CO + BD + WE,CO + BD + WE + LB,CO + BD + WE + LB + TB"
        );
        let cells: usize = lines[1..]
            .iter()
            .map(|l| l.split(',').skip(2).filter(|c| c.len() == 5).count())
            .sum();
        assert_eq!(cells, 30);
        assert!(lines[3].starts_with("Adjacent,SCI + MCI,"));
    }
}
