//! County-to-county connections: the mobility connectedness index from
//! commuting flows, normalized social connectedness, the two edge
//! definitions, and great-circle distances between dealer sites.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{symmetric_closure, CountyNode, EdgeKind};
use crate::ingest::normalize_fips;
use crate::tensor::Tensor;

/// Mean Earth radius in statute miles.
pub const EARTH_RADIUS_MILES: f64 = 3958.7613;

#[derive(Debug, Error)]
pub enum ConnectivityError {
    #[error("commuting flow table has no positive flow")]
    EmptyFlows,
    #[error("county {0} has no positive population")]
    ZeroPopulation(String),
    #[error("SCI table is empty")]
    EmptyTable,
    #[error("unknown fips {0}")]
    UnknownFips(String),
    #[error("at least one edge kind is required")]
    EmptyKinds,
    #[error("invalid coordinate ({0}, {1})")]
    InvalidCoordinate(f64, f64),
    #[error("dealer set is empty")]
    EmptyDealerSet,
    #[error("need at least two dealers, got {0}")]
    TooFewDealers(usize),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

type Pair = (String, String);

/// Commuting workers per (origin, destination) county pair.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CommutingFlowTable {
    pub entries: BTreeMap<Pair, f64>,
}

impl CommutingFlowTable {
    pub fn insert(&mut self, origin: &str, dest: &str, workers: f64) {
        self.entries
            .insert((origin.to_string(), dest.to_string()), workers);
    }
}

/// Raw social connectedness values, stored in both orientations.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SciTable {
    pub entries: BTreeMap<Pair, f64>,
}

impl SciTable {
    /// Inserts the value for both orderings of the pair.
    pub fn insert(&mut self, a: &str, b: &str, value: f64) -> Result<(), ConnectivityError> {
        for key in [
            (a.to_string(), b.to_string()),
            (b.to_string(), a.to_string()),
        ] {
            if let Some(&old) = self.entries.get(&key) {
                if old != value {
                    return Err(ConnectivityError::InvalidValue(format!(
                        "SCI for ({a}, {b}) given as both {old} and {value}"
                    )));
                }
            }
            self.entries.insert(key, value);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Brand {
    #[serde(rename = "companyx")]
    CompanyX,
    #[serde(rename = "competitor_a")]
    CompetitorA,
    #[serde(rename = "competitor_b")]
    CompetitorB,
}

impl Brand {
    pub fn code(self) -> &'static str {
        match self {
            Brand::CompanyX => "companyx",
            Brand::CompetitorA => "competitor_a",
            Brand::CompetitorB => "competitor_b",
        }
    }
}

impl fmt::Display for Brand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Brand {
    type Err = ConnectivityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "companyx" => Ok(Brand::CompanyX),
            "competitor_a" => Ok(Brand::CompetitorA),
            "competitor_b" => Ok(Brand::CompetitorB),
            other => Err(ConnectivityError::InvalidValue(format!(
                "unknown brand {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DealerSite {
    pub brand: Brand,
    /// (latitude, longitude) in degrees.
    pub location: (f64, f64),
    pub fips: String,
}

/// `MCI_ij = (W_ij / P_i) / max_kl (W_kl / P_k)` over all off-diagonal pairs.
pub fn compute_mci(
    flows: &CommutingFlowTable,
    populations: &HashMap<String, f64>,
) -> Result<BTreeMap<Pair, f64>, ConnectivityError> {
    let mut ratios = BTreeMap::new();
    for ((origin, dest), &workers) in &flows.entries {
        if origin == dest {
            continue;
        }
        if workers < 0.0 || !workers.is_finite() {
            return Err(ConnectivityError::InvalidValue(format!(
                "negative commuting flow {origin}->{dest}"
            )));
        }
        let pop = populations.get(origin).copied().unwrap_or(0.0);
        if pop <= 0.0 {
            return Err(ConnectivityError::ZeroPopulation(origin.clone()));
        }
        ratios.insert((origin.clone(), dest.clone()), workers / pop);
    }
    let max = ratios.values().copied().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return Err(ConnectivityError::EmptyFlows);
    }
    Ok(ratios.into_iter().map(|(k, r)| (k, r / max)).collect())
}

/// Divides every SCI value by the table maximum.
pub fn normalize_sci(sci: &SciTable) -> Result<BTreeMap<Pair, f64>, ConnectivityError> {
    if sci.entries.is_empty() {
        return Err(ConnectivityError::EmptyTable);
    }
    let max = sci.entries.values().copied().fold(0.0f64, f64::max);
    Ok(sci
        .entries
        .iter()
        .map(|(k, &v)| (k.clone(), if max > 0.0 { v / max } else { 0.0 }))
        .collect())
}

pub fn fips_index(nodes: &[CountyNode]) -> HashMap<String, usize> {
    nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.fips.clone(), i))
        .collect()
}

/// Symmetric directed edge set from undirected adjacency pairs.
pub fn edges_adjacency(
    pairs: &[(String, String)],
    index: &HashMap<String, usize>,
) -> Result<Vec<(usize, usize)>, ConnectivityError> {
    let resolved = pairs
        .iter()
        .map(|(a, b)| {
            let i = *index
                .get(a)
                .ok_or_else(|| ConnectivityError::UnknownFips(a.clone()))?;
            let j = *index
                .get(b)
                .ok_or_else(|| ConnectivityError::UnknownFips(b.clone()))?;
            Ok((i, j))
        })
        .collect::<Result<Vec<_>, ConnectivityError>>()?;
    Ok(symmetric_closure(&resolved))
}

/// Edges for every pair with more than `threshold` commuters, symmetrized.
/// Pairs naming counties outside `index` are skipped.
pub fn edges_commuting(
    flows: &CommutingFlowTable,
    index: &HashMap<String, usize>,
    threshold: f64,
) -> Vec<(usize, usize)> {
    let pairs: Vec<(usize, usize)> = flows
        .entries
        .iter()
        .filter(|(_, &w)| w > threshold)
        .filter_map(|((a, b), _)| Some((*index.get(a)?, *index.get(b)?)))
        .collect();
    symmetric_closure(&pairs)
}

/// `m x k` edge features in canonical `[SCI, MCI]` order restricted to
/// `kinds`; pairs absent from a table get 0.
pub fn assemble_edge_features(
    edges: &[(usize, usize)],
    nodes: &[CountyNode],
    mci: &BTreeMap<Pair, f64>,
    sci: &BTreeMap<Pair, f64>,
    kinds: &[EdgeKind],
) -> Result<Tensor, ConnectivityError> {
    let ordered: Vec<EdgeKind> = EdgeKind::ALL
        .into_iter()
        .filter(|k| kinds.contains(k))
        .collect();
    if ordered.is_empty() {
        return Err(ConnectivityError::EmptyKinds);
    }
    let mut out = Tensor::zeros(edges.len(), ordered.len());
    let mut key = (String::new(), String::new());
    for (e, &(src, dst)) in edges.iter().enumerate() {
        key.0.clone_from(&nodes[src].fips);
        key.1.clone_from(&nodes[dst].fips);
        for (c, kind) in ordered.iter().enumerate() {
            let table = match kind {
                EdgeKind::Sci => sci,
                EdgeKind::Mci => mci,
            };
            out.set(e, c, table.get(&key).copied().unwrap_or(0.0));
        }
    }
    Ok(out)
}

fn check_coordinate((lat, lon): (f64, f64)) -> Result<(), ConnectivityError> {
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err(ConnectivityError::InvalidCoordinate(lat, lon));
    }
    Ok(())
}

/// Haversine great-circle distance in miles on a sphere of radius
/// [`EARTH_RADIUS_MILES`].
pub fn geodesic_miles(a: (f64, f64), b: (f64, f64)) -> Result<f64, ConnectivityError> {
    check_coordinate(a)?;
    check_coordinate(b)?;
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let h = ((lat2 - lat1) / 2.0).sin().powi(2)
        + lat1.cos() * lat2.cos() * ((lon2 - lon1) / 2.0).sin().powi(2);
    Ok(2.0 * EARTH_RADIUS_MILES * h.sqrt().min(1.0).asin())
}

/// Closest dealer to `point`; equal distances go to the lower fips.
pub fn nearest_dealer_distance(
    point: (f64, f64),
    dealers: &[DealerSite],
) -> Result<(f64, &DealerSite), ConnectivityError> {
    let mut best: Option<(f64, &DealerSite)> = None;
    for dealer in dealers {
        let d = geodesic_miles(point, dealer.location)?;
        best = match best {
            Some((bd, b)) if bd < d || (bd == d && b.fips <= dealer.fips) => Some((bd, b)),
            _ => Some((d, dealer)),
        };
    }
    best.ok_or(ConnectivityError::EmptyDealerSet)
}

/// Distance from each dealer to its nearest other dealer, in input order.
pub fn nn_dealer_distances(dealers: &[DealerSite]) -> Result<Vec<f64>, ConnectivityError> {
    if dealers.len() < 2 {
        return Err(ConnectivityError::TooFewDealers(dealers.len()));
    }
    dealers
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut best = f64::INFINITY;
            for (j, b) in dealers.iter().enumerate() {
                if i != j {
                    best = best.min(geodesic_miles(a.location, b.location)?);
                }
            }
            Ok(best)
        })
        .collect()
}

/// Median of the nearest-neighbour distances between dealers.
pub fn median_nn_dealer_distance(dealers: &[DealerSite]) -> Result<f64, ConnectivityError> {
    Ok(median(&nn_dealer_distances(dealers)?))
}

/// Median with the mean of the two middle values for even lengths. NaN for empty input.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 0 {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    } else {
        sorted[mid]
    }
}

fn open(path: &Path) -> Result<std::fs::File, ConnectivityError> {
    std::fs::File::open(path).map_err(|source| ConnectivityError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Deserialize)]
struct FlowRow {
    origin_fips: String,
    dest_fips: String,
    workers: f64,
}

pub fn load_flows(path: &Path) -> Result<CommutingFlowTable, ConnectivityError> {
    read_flows(open(path)?)
}

pub fn read_flows<R: Read>(reader: R) -> Result<CommutingFlowTable, ConnectivityError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut table = CommutingFlowTable::default();
    for row in rdr.deserialize() {
        let row: FlowRow = row?;
        if row.workers < 0.0 {
            return Err(ConnectivityError::InvalidValue(format!(
                "negative workers for {} -> {}",
                row.origin_fips, row.dest_fips
            )));
        }
        table.insert(
            &normalize_fips(&row.origin_fips),
            &normalize_fips(&row.dest_fips),
            row.workers,
        );
    }
    Ok(table)
}

#[derive(Deserialize)]
struct SciRow {
    fips_a: String,
    fips_b: String,
    sci: f64,
}

pub fn load_sci(path: &Path) -> Result<SciTable, ConnectivityError> {
    read_sci(open(path)?)
}

pub fn read_sci<R: Read>(reader: R) -> Result<SciTable, ConnectivityError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut table = SciTable::default();
    for row in rdr.deserialize() {
        let row: SciRow = row?;
        if row.sci < 0.0 {
            return Err(ConnectivityError::InvalidValue(format!(
                "negative SCI for ({}, {})",
                row.fips_a, row.fips_b
            )));
        }
        table.insert(
            &normalize_fips(&row.fips_a),
            &normalize_fips(&row.fips_b),
            row.sci,
        )?;
    }
    Ok(table)
}

#[derive(Deserialize)]
struct DealerRow {
    brand: String,
    fips: String,
    lat: f64,
    lon: f64,
}

pub fn load_dealers(path: &Path) -> Result<Vec<DealerSite>, ConnectivityError> {
    read_dealers(open(path)?)
}

pub fn read_dealers<R: Read>(reader: R) -> Result<Vec<DealerSite>, ConnectivityError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    rdr.deserialize()
        .map(|row| {
            let row: DealerRow = row?;
            check_coordinate((row.lat, row.lon))?;
            Ok(DealerSite {
                brand: row.brand.parse()?,
                location: (row.lat, row.lon),
                fips: normalize_fips(&row.fips),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pops(list: &[(&str, f64)]) -> HashMap<String, f64> {
        list.iter().map(|(f, p)| (f.to_string(), *p)).collect()
    }

    fn flows(list: &[(&str, &str, f64)]) -> CommutingFlowTable {
        let mut t = CommutingFlowTable::default();
        for (a, b, w) in list {
            t.insert(a, b, *w);
        }
        t
    }

    fn key(a: &str, b: &str) -> Pair {
        (a.to_string(), b.to_string())
    }

    fn dealer(fips: &str, lat: f64, lon: f64) -> DealerSite {
        DealerSite {
            brand: Brand::CompanyX,
            location: (lat, lon),
            fips: fips.to_string(),
        }
    }

    #[test]
    fn mci_hand_example() {
        let f = flows(&[("A", "B", 100.0), ("C", "B", 50.0), ("A", "C", 0.0)]);
        let mci = compute_mci(&f, &pops(&[("A", 1000.0), ("C", 2000.0)])).unwrap();
        assert_eq!(mci[&key("A", "B")], 1.0);
        assert_eq!(mci[&key("C", "B")], 0.25);
        assert_eq!(mci[&key("A", "C")], 0.0);
    }

    #[test]
    fn mci_errors() {
        assert!(matches!(
            compute_mci(&CommutingFlowTable::default(), &HashMap::new()),
            Err(ConnectivityError::EmptyFlows)
        ));
        let f = flows(&[("A", "B", 10.0)]);
        assert!(matches!(
            compute_mci(&f, &pops(&[("A", 0.0)])),
            Err(ConnectivityError::ZeroPopulation(_))
        ));
        // diagonal entries are ignored
        let f = flows(&[("A", "A", 10.0)]);
        assert!(matches!(
            compute_mci(&f, &pops(&[("A", 5.0)])),
            Err(ConnectivityError::EmptyFlows)
        ));
    }

    #[test]
    fn sci_normalization() {
        let mut t = SciTable::default();
        t.insert("A", "B", 10.0).unwrap();
        t.insert("A", "C", 5.0).unwrap();
        let n = normalize_sci(&t).unwrap();
        assert_eq!(n[&key("B", "A")], 1.0);
        assert_eq!(n[&key("A", "C")], 0.5);
        assert!(t.insert("B", "A", 11.0).is_err());
        assert!(matches!(
            normalize_sci(&SciTable::default()),
            Err(ConnectivityError::EmptyTable)
        ));

        let mut eq = SciTable::default();
        eq.insert("A", "B", 3.0).unwrap();
        eq.insert("B", "C", 3.0).unwrap();
        assert!(normalize_sci(&eq).unwrap().values().all(|&v| v == 1.0));
    }

    fn index(names: &[&str]) -> HashMap<String, usize> {
        names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.to_string(), i))
            .collect()
    }

    #[test]
    fn adjacency_edges() {
        let idx = index(&["A", "B", "C"]);
        assert_eq!(
            edges_adjacency(&[key("A", "B")], &idx).unwrap(),
            vec![(0, 1), (1, 0)]
        );
        assert!(edges_adjacency(&[], &idx).unwrap().is_empty());
        assert!(matches!(
            edges_adjacency(&[key("A", "Z")], &idx),
            Err(ConnectivityError::UnknownFips(_))
        ));
    }

    #[test]
    fn commuting_edges_are_symmetrized() {
        let idx = index(&["A", "B", "C"]);
        let f = flows(&[("A", "B", 5.0)]);
        assert_eq!(edges_commuting(&f, &idx, 0.0), vec![(0, 1), (1, 0)]);
        let zero = flows(&[("A", "B", 0.0), ("B", "C", 0.0)]);
        assert!(edges_commuting(&zero, &idx, 0.0).is_empty());
        let three = flows(&[("A", "B", 100.0), ("C", "B", 50.0)]);
        assert_eq!(edges_commuting(&three, &idx, 0.0).len(), 4);
    }

    #[test]
    fn edge_feature_assembly() {
        let nodes: Vec<CountyNode> = ["A", "B", "C"]
            .iter()
            .map(|f| CountyNode::new(*f, *f, 0.0, 0.0, 1.0))
            .collect();
        let f = flows(&[("A", "B", 5.0)]);
        let mci = compute_mci(&f, &pops(&[("A", 10.0)])).unwrap();
        let mut sci_t = SciTable::default();
        sci_t.insert("A", "B", 4.0).unwrap();
        let sci = normalize_sci(&sci_t).unwrap();
        let edges = vec![(0, 1), (1, 0), (1, 2), (2, 1)];
        let both =
            assemble_edge_features(&edges, &nodes, &mci, &sci, &[EdgeKind::Mci, EdgeKind::Sci])
                .unwrap();
        assert_eq!(both.shape(), (4, 2));
        assert_eq!(both.row(0), &[1.0, 1.0]);
        // reverse direction: SCI is symmetric, MCI_BA has no flow
        assert_eq!(both.row(1), &[1.0, 0.0]);
        assert_eq!(both.row(2), &[0.0, 0.0]);
        let m = assemble_edge_features(&edges, &nodes, &mci, &sci, &[EdgeKind::Mci]).unwrap();
        assert_eq!(m.cols(), 1);
        assert!(matches!(
            assemble_edge_features(&edges, &nodes, &mci, &sci, &[]),
            Err(ConnectivityError::EmptyKinds)
        ));
    }

    #[test]
    fn geodesic_examples() {
        assert_eq!(geodesic_miles((40.0, -75.0), (40.0, -75.0)).unwrap(), 0.0);
        let nyc_la = geodesic_miles((40.7128, -74.0060), (34.0522, -118.2437)).unwrap();
        assert!((nyc_la - 2445.0).abs() < 10.0, "{nyc_la}");
        let anti = geodesic_miles((0.0, 0.0), (0.0, 180.0)).unwrap();
        assert!((anti - std::f64::consts::PI * EARTH_RADIUS_MILES).abs() < 1e-6);
        assert!((anti - 12436.0).abs() < 1.0);
        assert!(matches!(
            geodesic_miles((95.0, 0.0), (0.0, 0.0)),
            Err(ConnectivityError::InvalidCoordinate(..))
        ));
    }

    #[test]
    fn nearest_dealer_rules() {
        let d = [dealer("00002", 40.0, -75.0)];
        let (dist, who) = nearest_dealer_distance((40.0, -75.0), &d).unwrap();
        assert_eq!(dist, 0.0);
        assert_eq!(who.fips, "00002");

        // equidistant along the equator
        let pair = [dealer("00009", 0.0, 1.0), dealer("00003", 0.0, -1.0)];
        let (_, who) = nearest_dealer_distance((0.0, 0.0), &pair).unwrap();
        assert_eq!(who.fips, "00003");

        // 37.4 miles due north
        let dlat = (37.4 / EARTH_RADIUS_MILES).to_degrees();
        let north = [dealer("00001", 42.3 + dlat, -73.2)];
        let (dist, _) = nearest_dealer_distance((42.3, -73.2), &north).unwrap();
        assert!((dist - 37.4).abs() < 1e-9);

        assert!(matches!(
            nearest_dealer_distance((0.0, 0.0), &[]),
            Err(ConnectivityError::EmptyDealerSet)
        ));
    }

    #[test]
    fn median_nearest_neighbour_distance() {
        let step = |miles: f64| (miles / EARTH_RADIUS_MILES).to_degrees();
        let two = [dealer("00001", 0.0, 0.0), dealer("00002", step(10.0), 0.0)];
        assert!((median_nn_dealer_distance(&two).unwrap() - 10.0).abs() < 1e-9);

        let line = [
            dealer("00001", 0.0, 0.0),
            dealer("00002", step(10.0), 0.0),
            dealer("00003", step(30.0), 0.0),
        ];
        let nn = nn_dealer_distances(&line).unwrap();
        for (got, want) in nn.iter().zip([10.0, 10.0, 20.0]) {
            assert!((got - want).abs() < 1e-9);
        }
        assert!((median_nn_dealer_distance(&line).unwrap() - 10.0).abs() < 1e-9);
        assert!(matches!(
            median_nn_dealer_distance(&line[..1]),
            Err(ConnectivityError::TooFewDealers(1))
        ));
        assert_eq!(median(&[1.0, 3.0, 2.0, 10.0]), 2.5);
    }

    #[test]
    fn csv_readers() {
        let f = read_flows("origin_fips,dest_fips,workers\n1,2,30\n".as_bytes()).unwrap();
        assert_eq!(f.entries[&key("00001", "00002")], 30.0);
        let s = read_sci("fips_a,fips_b,sci\n00001,00002,7\n00002,00001,7\n".as_bytes()).unwrap();
        assert_eq!(s.entries.len(), 2);
        assert!(read_sci("fips_a,fips_b,sci\n00001,00002,7\n00002,00001,8\n".as_bytes()).is_err());
        let d = read_dealers("brand,fips,lat,lon\ncompetitor_a,00001,40,-75\n".as_bytes()).unwrap();
        assert_eq!(d[0].brand, Brand::CompetitorA);
        assert!(read_dealers("brand,fips,lat,lon\nacme,00001,40,-75\n".as_bytes()).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn mci_max_is_one_and_population_scale_invariant(
                raw in proptest::collection::vec((0usize..6, 0usize..6, 0.0f64..1e4), 1..20),
                pops_raw in proptest::collection::vec(300.0f64..1e6, 6),
                factor in 1e-3f64..1e3,
            ) {
                let names: Vec<String> = (0..6).map(|i| format!("{i:05}")).collect();
                let mut f = CommutingFlowTable::default();
                for (a, b, w) in &raw {
                    f.insert(&names[*a], &names[*b], *w);
                }
                let p: HashMap<String, f64> = names.iter().cloned().zip(pops_raw.iter().copied()).collect();
                let scaled: HashMap<String, f64> = p.iter().map(|(k, v)| (k.clone(), v * factor)).collect();
                match compute_mci(&f, &p) {
                    Ok(m) => {
                        let max = m.values().copied().fold(0.0, f64::max);
                        prop_assert_eq!(max, 1.0);
                        prop_assert!(m.values().all(|v| (0.0..=1.0).contains(v)));
                        let m2 = compute_mci(&f, &scaled).unwrap();
                        for (k, v) in &m {
                            prop_assert!((v - m2[k]).abs() < 1e-12);
                        }
                    }
                    Err(ConnectivityError::EmptyFlows) => {}
                    Err(e) => prop_assert!(false, "{}", e),
                }
            }

            #[test]
            fn geodesic_symmetric_and_nonnegative(
                a in (-90.0f64..90.0, -180.0f64..180.0),
                b in (-90.0f64..90.0, -180.0f64..180.0),
            ) {
                let ab = geodesic_miles(a, b).unwrap();
                let ba = geodesic_miles(b, a).unwrap();
                prop_assert!(ab >= 0.0);
                prop_assert!((ab - ba).abs() < 1e-9);
                prop_assert_eq!(geodesic_miles(a, a).unwrap(), 0.0);
            }

            #[test]
            fn sci_normalization_preserves_order(vals in proptest::collection::vec(0.0f64..100.0, 2..10)) {
                let mut t = SciTable::default();
                for (i, v) in vals.iter().enumerate() {
                    t.insert(&format!("{i:05}"), "99999", *v).unwrap();
                }
                let n = normalize_sci(&t).unwrap();
                for (k1, v1) in &t.entries {
                    for (k2, v2) in &t.entries {
                        if v1 < v2 {
                            prop_assert!(n[k1] <= n[k2]);
                        }
                    }
                }
            }
        }
    }
}
