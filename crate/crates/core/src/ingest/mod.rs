//! Loading county tables and turning them into a scaled feature matrix:
//! population filtering, adjacent-county mean imputation, Yeo-Johnson
//! correction of skewed columns and min-max scaling.

mod table;
mod transform;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{FeatureCatalog, NodeGroup};
use crate::tensor::Tensor;

pub use table::{
    load_adjacency, load_catalog, load_node_table, normalize_fips, read_adjacency, read_catalog,
    read_node_table, RawNodeTable, REQUIRED_NODE_COLUMNS,
};
pub use transform::{
    fit_yeo_johnson_lambda, min_max_scale, skewness, yeo_johnson, yeo_johnson_log_likelihood,
    ScaleKind, TransformSpec, LAMBDA_RANGE,
};

/// Population floor below which counties are dropped.
pub const DEFAULT_POPULATION_FLOOR: f64 = 300.0;
/// `|skewness|` above which a column is power-transformed.
pub const DEFAULT_SKEW_THRESHOLD: f64 = 1.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("missing column {0}")]
    MissingColumn(String),
    #[error("column {column} has no observed values to impute from")]
    UnresolvableCell { column: String },
    #[error("degenerate column: {0}")]
    DegenerateColumn(String),
    #[error("competition column {column} holds non-binary value {value}")]
    NonBinary { column: String, value: f64 },
}

/// Rows removed by [`filter_population`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub removed: Vec<String>,
    pub remaining: usize,
}

impl FilterReport {
    pub fn warning(&self) -> Option<String> {
        (self.remaining == 0).then(|| {
            format!(
                "population filter removed all {} counties",
                self.removed.len()
            )
        })
    }
}

/// Drops counties with `population < floor`.
pub fn filter_population(table: &RawNodeTable, floor: f64) -> (RawNodeTable, FilterReport) {
    let filtered = table.retain_rows(|r| table.population[r] >= floor);
    let removed = (0..table.n_rows())
        .filter(|&r| table.population[r] < floor)
        .map(|r| table.fips[r].clone())
        .collect();
    let report = FilterReport {
        removed,
        remaining: filtered.n_rows(),
    };
    (filtered, report)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImputationReport {
    /// `(column index, row index)` of every filled cell.
    pub cells: Vec<(usize, usize)>,
    /// Cells filled with the column mean because no adjacent county had a value.
    pub fallbacks: usize,
}

impl ImputationReport {
    pub fn imputed(&self) -> usize {
        self.cells.len()
    }
}

/// Replaces each missing cell with the mean of the same column over adjacent
/// counties that have an observed value, falling back to the column mean.
/// Only originally observed values are averaged. Adjacency pairs naming
/// counties that are not in the table are ignored.
pub fn impute_adjacent_mean(
    table: &RawNodeTable,
    adjacency: &[(String, String)],
) -> Result<(RawNodeTable, ImputationReport), IngestError> {
    let index: HashMap<&str, usize> = table
        .fips
        .iter()
        .enumerate()
        .map(|(i, f)| (f.as_str(), i))
        .collect();
    let mut neighbours = vec![Vec::new(); table.n_rows()];
    for (a, b) in adjacency {
        if let (Some(&i), Some(&j)) = (index.get(a.as_str()), index.get(b.as_str())) {
            if i != j {
                neighbours[i].push(j);
                neighbours[j].push(i);
            }
        }
    }
    for list in &mut neighbours {
        list.sort_unstable();
        list.dedup();
    }

    let mut out = table.clone();
    let mut report = ImputationReport::default();
    for (c, column) in table.values.iter().enumerate() {
        if column.iter().all(|v| v.is_some()) {
            continue;
        }
        let observed: Vec<f64> = column.iter().flatten().copied().collect();
        if observed.is_empty() {
            return Err(IngestError::UnresolvableCell {
                column: table.columns[c].clone(),
            });
        }
        let column_mean = observed.iter().sum::<f64>() / observed.len() as f64;
        for (r, value) in column.iter().enumerate() {
            if value.is_some() {
                continue;
            }
            let vals: Vec<f64> = neighbours[r].iter().filter_map(|&j| column[j]).collect();
            let fill = if vals.is_empty() {
                report.fallbacks += 1;
                column_mean
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            };
            out.values[c][r] = Some(fill);
            report.cells.push((c, r));
        }
    }
    Ok((out, report))
}

/// Per-column record of what preprocessing did.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnReport {
    pub column: String,
    pub group: NodeGroup,
    pub imputed: usize,
    pub skew_before: Option<f64>,
    pub skew_after: Option<f64>,
    pub lambda: Option<f64>,
    /// True when the column crossed the skew threshold but the fitted
    /// transform did not reduce `|skewness|`, so it was left untransformed.
    pub transform_rejected: bool,
    pub kind: ScaleKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocessed {
    /// `n x d`, columns in catalog order, every entry in `[0, 1]`.
    pub matrix: Tensor,
    pub catalog: FeatureCatalog,
    pub specs: Vec<TransformSpec>,
    pub columns: Vec<ColumnReport>,
    pub imputation: ImputationReport,
}

fn check_catalog(table: &RawNodeTable, catalog: &FeatureCatalog) -> Result<(), IngestError> {
    for name in &table.columns {
        if catalog.group_of(name).is_none() {
            return Err(IngestError::Schema(format!(
                "column {name} is not assigned to a group in the catalog"
            )));
        }
    }
    for (name, _) in &catalog.node_columns {
        if table.column_index(name).is_none() {
            return Err(IngestError::MissingColumn(name.clone()));
        }
    }
    Ok(())
}

/// Impute, power-transform columns with `|skewness| > skew_threshold`
/// (competition flags exempt), then min-max scale every non-binary column.
pub fn preprocess(
    table: &RawNodeTable,
    catalog: &FeatureCatalog,
    adjacency: &[(String, String)],
    skew_threshold: f64,
) -> Result<Preprocessed, IngestError> {
    check_catalog(table, catalog)?;
    let (imputed, imputation) = impute_adjacent_mean(table, adjacency)?;

    let processed: Vec<(Vec<f64>, TransformSpec, ColumnReport)> = catalog
        .node_columns
        .par_iter()
        .map(|(name, group)| {
            let c = imputed.column_index(name).expect("checked above");
            let filled = imputation.cells.iter().filter(|(col, _)| *col == c).count();
            let raw: Vec<f64> = imputed.values[c]
                .iter()
                .map(|v| v.expect("imputed"))
                .collect();
            process_column(name, *group, raw, filled, skew_threshold)
        })
        .collect::<Result<_, _>>()?;

    let n = table.n_rows();
    let d = processed.len();
    let mut matrix = Tensor::zeros(n, d);
    for (c, (col, _, _)) in processed.iter().enumerate() {
        for (r, &v) in col.iter().enumerate() {
            matrix.set(r, c, v);
        }
    }
    let (specs, columns) = processed.into_iter().map(|(_, s, r)| (s, r)).unzip();
    Ok(Preprocessed {
        matrix,
        catalog: catalog.clone(),
        specs,
        columns,
        imputation,
    })
}

fn process_column(
    name: &str,
    group: NodeGroup,
    mut raw: Vec<f64>,
    imputed: usize,
    skew_threshold: f64,
) -> Result<(Vec<f64>, TransformSpec, ColumnReport), IngestError> {
    let mut report = ColumnReport {
        column: name.to_string(),
        group,
        imputed,
        skew_before: None,
        skew_after: None,
        lambda: None,
        transform_rejected: false,
        kind: ScaleKind::MinMax,
    };

    if group == NodeGroup::Competition {
        // imputed flags are rounded back onto {0, 1}
        for v in raw.iter_mut() {
            if *v != 0.0 && *v != 1.0 {
                if (0.0..=1.0).contains(v) {
                    *v = v.round();
                } else {
                    return Err(IngestError::NonBinary {
                        column: name.to_string(),
                        value: *v,
                    });
                }
            }
        }
        let spec = TransformSpec {
            column: name.to_string(),
            lambda: None,
            min: 0.0,
            max: 1.0,
            kind: ScaleKind::Binary,
        };
        report.kind = ScaleKind::Binary;
        return Ok((raw, spec, report));
    }

    let skew = match skewness(&raw) {
        Ok(s) => s,
        Err(_) => {
            let spec = TransformSpec {
                column: name.to_string(),
                lambda: None,
                min: raw.first().copied().unwrap_or(0.0),
                max: raw.first().copied().unwrap_or(0.0),
                kind: ScaleKind::Constant,
            };
            report.kind = ScaleKind::Constant;
            let out = spec.apply_column(&raw);
            return Ok((out, spec, report));
        }
    };
    report.skew_before = Some(skew);
    report.skew_after = Some(skew);

    let mut lambda = None;
    if skew.abs() > skew_threshold {
        let fitted = fit_yeo_johnson_lambda(&raw)?;
        let transformed: Vec<f64> = raw.iter().map(|&x| yeo_johnson(x, fitted)).collect();
        match skewness(&transformed) {
            Ok(after) if after.abs() < skew.abs() => {
                lambda = Some(fitted);
                report.skew_after = Some(after);
                report.lambda = Some(fitted);
            }
            _ => report.transform_rejected = true,
        }
    }
    let spec = transform::min_max_spec(name, &raw, lambda)?;
    let out = spec.apply_column(&raw);
    Ok((out, spec, report))
}
