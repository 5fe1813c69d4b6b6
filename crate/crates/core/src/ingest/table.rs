//! CSV loaders for the node, catalog and adjacency tables.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::graph::{CountyNode, FeatureCatalog, NodeGroup};

/// Columns every node CSV must carry, in addition to its feature columns.
pub const REQUIRED_NODE_COLUMNS: [&str; 6] = ["fips", "name", "lat", "lon", "population", "label"];

/// Parsed node table. Feature values are stored column-major and may be missing.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RawNodeTable {
    pub fips: Vec<String>,
    pub names: Vec<String>,
    pub lat: Vec<f64>,
    pub lon: Vec<f64>,
    pub population: Vec<f64>,
    pub labels: Vec<u8>,
    pub columns: Vec<String>,
    /// `values[column][row]`
    pub values: Vec<Vec<Option<f64>>>,
}

impl RawNodeTable {
    pub fn n_rows(&self) -> usize {
        self.fips.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<&[Option<f64>]> {
        self.column_index(name).map(|i| self.values[i].as_slice())
    }

    pub fn missing_count(&self) -> usize {
        self.values
            .iter()
            .map(|col| col.iter().filter(|v| v.is_none()).count())
            .sum()
    }

    pub fn row_index(&self, fips: &str) -> Option<usize> {
        self.fips.iter().position(|f| f == fips)
    }

    pub fn county_nodes(&self) -> Vec<CountyNode> {
        (0..self.n_rows())
            .map(|r| {
                CountyNode::new(
                    self.fips[r].clone(),
                    self.names[r].clone(),
                    self.lat[r],
                    self.lon[r],
                    self.population[r],
                )
            })
            .collect()
    }

    /// Keeps the rows for which `keep` is true.
    pub fn retain_rows(&self, keep: impl Fn(usize) -> bool) -> Self {
        let rows: Vec<usize> = (0..self.n_rows()).filter(|&r| keep(r)).collect();
        let pick = |v: &Vec<f64>| rows.iter().map(|&r| v[r]).collect();
        Self {
            fips: rows.iter().map(|&r| self.fips[r].clone()).collect(),
            names: rows.iter().map(|&r| self.names[r].clone()).collect(),
            lat: pick(&self.lat),
            lon: pick(&self.lon),
            population: pick(&self.population),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            columns: self.columns.clone(),
            values: self
                .values
                .iter()
                .map(|col| rows.iter().map(|&r| col[r]).collect())
                .collect(),
        }
    }
}

/// Left-pads an all-digit FIPS code to five characters ("8013" -> "08013").
pub fn normalize_fips(raw: &str) -> String {
    let t = raw.trim();
    if !t.is_empty() && t.len() < 5 && t.chars().all(|c| c.is_ascii_digit()) {
        format!("{t:0>5}")
    } else {
        t.to_string()
    }
}

pub(crate) fn open(path: &Path) -> Result<std::fs::File, IngestError> {
    std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_f64(field: &str, column: &str, line: u64) -> Result<f64, IngestError> {
    field.trim().parse::<f64>().map_err(|_| IngestError::Parse {
        line,
        message: format!("column {column}: cannot parse {field:?} as a number"),
    })
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

pub fn load_node_table(path: &Path) -> Result<RawNodeTable, IngestError> {
    read_node_table(open(path)?)
}

pub fn read_node_table<R: Read>(reader: R) -> Result<RawNodeTable, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let position = |name: &str| headers.iter().position(|h| h == name);
    let mut required = [0usize; 6];
    for (slot, name) in required.iter_mut().zip(REQUIRED_NODE_COLUMNS) {
        *slot = position(name)
            .ok_or_else(|| IngestError::Schema(format!("missing required column {name:?}")))?;
    }
    let feature_idx: Vec<usize> = (0..headers.len())
        .filter(|i| !required.contains(i))
        .collect();
    let columns: Vec<String> = feature_idx
        .iter()
        .map(|&i| headers[i].to_string())
        .collect();
    let mut unique = HashSet::new();
    for (i, h) in headers.iter().enumerate() {
        if !unique.insert(h) {
            return Err(IngestError::Schema(format!(
                "duplicate column {h:?} at position {i}"
            )));
        }
    }

    let mut table = RawNodeTable {
        columns,
        values: vec![Vec::new(); feature_idx.len()],
        ..Default::default()
    };
    let mut seen = HashSet::new();
    for record in rdr.records() {
        let record = record?;
        let line = record_line(&record);
        let get = |i: usize| record.get(i).unwrap_or("");
        let fips = normalize_fips(get(required[0]));
        if fips.is_empty() {
            return Err(IngestError::Parse {
                line,
                message: "empty fips".into(),
            });
        }
        if !seen.insert(fips.clone()) {
            return Err(IngestError::Schema(format!("duplicate fips {fips}")));
        }
        let label = match get(required[5]) {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(IngestError::Parse {
                    line,
                    message: format!("label must be 0 or 1, got {other:?}"),
                })
            }
        };
        table.fips.push(fips);
        table.names.push(get(required[1]).to_string());
        table.lat.push(parse_f64(get(required[2]), "lat", line)?);
        table.lon.push(parse_f64(get(required[3]), "lon", line)?);
        table
            .population
            .push(parse_f64(get(required[4]), "population", line)?);
        table.labels.push(label);
        for (c, &i) in feature_idx.iter().enumerate() {
            let field = get(i);
            let value = if field.is_empty() {
                None
            } else {
                Some(parse_f64(field, &table.columns[c], line)?)
            };
            table.values[c].push(value);
        }
    }
    Ok(table)
}

#[derive(Debug, Deserialize)]
struct CatalogRow {
    column: String,
    group: String,
}

pub fn load_catalog(path: &Path) -> Result<FeatureCatalog, IngestError> {
    read_catalog(open(path)?)
}

/// Reads `column,group` rows; the file order becomes the canonical column order.
pub fn read_catalog<R: Read>(reader: R) -> Result<FeatureCatalog, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut columns = Vec::new();
    let mut seen = HashSet::new();
    for row in rdr.deserialize() {
        let row: CatalogRow = row?;
        let group: NodeGroup = row.group.parse().map_err(|_| {
            IngestError::Schema(format!("unknown group {:?} for {}", row.group, row.column))
        })?;
        if !seen.insert(row.column.clone()) {
            return Err(IngestError::Schema(format!(
                "column {} listed twice in catalog",
                row.column
            )));
        }
        columns.push((row.column, group));
    }
    Ok(FeatureCatalog::new(columns))
}

#[derive(Debug, Deserialize)]
struct AdjacencyRow {
    fips_a: String,
    fips_b: String,
}

pub fn load_adjacency(path: &Path) -> Result<Vec<(String, String)>, IngestError> {
    read_adjacency(open(path)?)
}

pub fn read_adjacency<R: Read>(reader: R) -> Result<Vec<(String, String)>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    rdr.deserialize()
        .map(|row| {
            let row: AdjacencyRow = row?;
            Ok((normalize_fips(&row.fips_a), normalize_fips(&row.fips_b)))
        })
        .collect()
}
