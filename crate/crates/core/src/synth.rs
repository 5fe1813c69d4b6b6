//! Seeded synthetic county datasets with a planted labelling rule.
//!
//! Counties sit on a rectangular lattice. A smooth spatial field drives
//! population density; the label is "has a competitor dealership and density
//! above the median", flipped with probability `noise_rate` among counties
//! that have a competitor. Every other column follows a plausible marginal
//! distribution (lognormal money amounts, Dirichlet household shares) and
//! carries no label signal of its own.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::connectivity::EARTH_RADIUS_MILES;
use crate::graph::{build_graph, symmetric_closure, CountyGraph, CountyNode, NodeGroup};
use crate::ingest::RawNodeTable;
use crate::tensor::{seeded_rng, Tensor};
use crate::train::f_beta;

pub const NODES_FILE: &str = "nodes.csv";
pub const ADJACENCY_FILE: &str = "adjacency.csv";
pub const FLOWS_FILE: &str = "flows.csv";
pub const SCI_FILE: &str = "sci.csv";
pub const DEALERS_FILE: &str = "dealers.csv";
pub const CATALOG_FILE: &str = "catalog.csv";

pub const DENSITY_COLUMN: &str = "pop_density";
pub const COMPETITOR_A_COLUMN: &str = "has_CompA_dealership";
pub const COMPETITOR_B_COLUMN: &str = "has_CompB_dealership";

/// Share of counties that get a competitor flag without meeting the density rule.
const SPARSE_COMPETITOR_SHARE: f64 = 0.04;
/// Competitor counties are drawn with weight `rank^SELECTION_POWER`, ranked
/// away from the density median, so they concentrate at the extremes.
const SELECTION_POWER: i32 = 3;
const LAT_ORIGIN: f64 = 32.0;
const LON_ORIGIN: f64 = -100.0;
const LAT_STEP: f64 = 0.4;
const LON_STEP: f64 = 0.5;
const FLOW_RADIUS: usize = 3;
const SCI_RADIUS: usize = 4;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_counties: usize,
    /// Lattice width; defaults to `ceil(sqrt(n_counties))`.
    pub grid_cols: Option<usize>,
    pub positive_rate: f64,
    pub noise_rate: f64,
    /// Probability that a non-competition feature cell is left empty.
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_counties: 500,
            grid_cols: None,
            positive_rate: 0.093,
            noise_rate: 0.05,
            missing_rate: 0.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n_counties < 20 {
            return fail(format!(
                "n_counties must be at least 20, got {}",
                self.n_counties
            ));
        }
        if !(self.positive_rate > 0.0 && self.positive_rate < 0.5) {
            return fail(format!(
                "positive_rate must lie in (0, 0.5), got {}",
                self.positive_rate
            ));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return fail(format!(
                "noise_rate must lie in [0, 1], got {}",
                self.noise_rate
            ));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return fail(format!(
                "missing_rate must lie in [0, 1), got {}",
                self.missing_rate
            ));
        }
        if let Some(cols) = self.grid_cols {
            if cols < 2 || cols >= self.n_counties {
                return fail(format!("grid_cols must lie in [2, n_counties), got {cols}"));
            }
        }
        Ok(())
    }

    /// `(rows, cols)` of the lattice; the last row may be partial.
    pub fn grid(&self) -> (usize, usize) {
        let cols = self
            .grid_cols
            .unwrap_or_else(|| (self.n_counties as f64).sqrt().ceil() as usize);
        (self.n_counties.div_ceil(cols), cols)
    }
}

/// The generated CSV files, as text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthDataset {
    pub nodes_csv: String,
    pub adjacency_csv: String,
    pub flows_csv: String,
    pub sci_csv: String,
    pub dealers_csv: String,
    pub catalog_csv: String,
}

impl SynthDataset {
    pub fn files(&self) -> [(&'static str, &str); 6] {
        [
            (NODES_FILE, &self.nodes_csv),
            (ADJACENCY_FILE, &self.adjacency_csv),
            (FLOWS_FILE, &self.flows_csv),
            (SCI_FILE, &self.sci_csv),
            (DEALERS_FILE, &self.dealers_csv),
            (CATALOG_FILE, &self.catalog_csv),
        ]
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), SynthError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| SynthError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        for (name, text) in self.files() {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(io(&path))?;
        }
        Ok(())
    }
}

/// The generative labelling rule: `label = CO flag AND density > median`,
/// before noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedRule {
    pub density_column: String,
    pub competition_columns: Vec<String>,
    pub noise_rate: f64,
}

impl PlantedRule {
    pub fn describe(&self) -> String {
        format!(
            "label = ({}) AND {} > median, flipped with probability {} among counties with a competitor",
            self.competition_columns.join(" OR "),
            self.density_column,
            self.noise_rate
        )
    }

    /// Noise-free rule output for every row. Missing cells count as 0.
    pub fn predict(&self, table: &RawNodeTable) -> Vec<u8> {
        let n = table.n_rows();
        let density: Vec<f64> = table
            .column(&self.density_column)
            .map(|c| c.iter().map(|v| v.unwrap_or(f64::NAN)).collect())
            .unwrap_or_else(|| vec![f64::NAN; n]);
        let finite: Vec<f64> = density.iter().copied().filter(|v| v.is_finite()).collect();
        let median = crate::connectivity::median(&finite);
        let flags: Vec<&[Option<f64>]> = self
            .competition_columns
            .iter()
            .filter_map(|c| table.column(c))
            .collect();
        (0..n)
            .map(|r| {
                let competitor = flags.iter().any(|col| col[r].unwrap_or(0.0) >= 0.5);
                u8::from(competitor && density[r] > median)
            })
            .collect()
    }

    /// F-beta of the noise-free rule against the table's labels: the best
    /// score any classifier of these features can reach in expectation.
    pub fn ceiling_f_beta(&self, table: &RawNodeTable, beta: f64) -> f64 {
        let pred = self.predict(table);
        let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
        for (p, &l) in pred.iter().zip(&table.labels) {
            match (*p == 1, l == 1) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        f_beta(ratio(tp, tp + fp), ratio(tp, tp + fneg), beta)
    }
}

pub fn planted_oracle(config: &SynthConfig) -> PlantedRule {
    PlantedRule {
        density_column: DENSITY_COLUMN.to_string(),
        competition_columns: vec![
            COMPETITOR_A_COLUMN.to_string(),
            COMPETITOR_B_COLUMN.to_string(),
        ],
        noise_rate: config.noise_rate,
    }
}

/// Every generated feature column with its group, in file order.
pub fn feature_columns() -> Vec<(String, NodeGroup)> {
    let mut cols: Vec<(String, NodeGroup)> = Vec::with_capacity(65);
    let mut push =
        |names: &[&str], g: NodeGroup| cols.extend(names.iter().map(|n| (n.to_string(), g)));
    push(&[DENSITY_COLUMN], NodeGroup::BasicDemographics);
    push(&HH_SIZE.map(|c| c.0), NodeGroup::BasicDemographics);
    push(&["family_hhs"], NodeGroup::BasicDemographics);
    push(&AGE.map(|c| c.0), NodeGroup::BasicDemographics);
    push(&["bachelors_or_higher"], NodeGroup::BasicDemographics);
    push(&["median_hh_income"], NodeGroup::Wealth);
    push(&INCOME.map(|c| c.0), NodeGroup::Wealth);
    push(&WEALTH.map(|c| c.0), NodeGroup::Wealth);
    push(
        &[
            "housing_units_wo_mortgage",
            "renter_occupied_housing",
            "poverty_rate",
            "unemployment_rate",
        ],
        NodeGroup::Wealth,
    );
    push(&VEHICLES.map(|c| c.0), NodeGroup::TransportationBehavior);
    push(
        &[
            "car_commuters",
            "hh_spending_new_cars_and_trucks",
            "hh_spending_airline_fares",
        ],
        NodeGroup::TransportationBehavior,
    );
    push(
        &[
            "segment_auto_luxury_lovers",
            "segment_status_cars",
            "population_with_luxury_vehicle",
            "google_trends_CompanyX",
            "gift_fine_jewelry",
            "gift_watches",
            "fine_dining",
        ],
        NodeGroup::LuxuryBehavior,
    );
    push(
        &[COMPETITOR_A_COLUMN, COMPETITOR_B_COLUMN],
        NodeGroup::Competition,
    );
    cols
}

const HH_SIZE: [(&str, f64); 7] = [
    ("1_person_hhs", 0.257),
    ("2_person_hhs", 0.366),
    ("3_person_hhs", 0.156),
    ("4_person_hhs", 0.113),
    ("5_person_hhs", 0.061),
    ("6_person_hhs", 0.029),
    ("7_plus_person_hhs", 0.012),
];

const AGE: [(&str, f64); 9] = [
    ("18_to_19_yos", 0.029),
    ("20_to_24_yos", 0.063),
    ("25_to_34_yos", 0.136),
    ("35_to_44_yos", 0.141),
    ("45_to_54_yos", 0.121),
    ("55_to_64_yos", 0.118),
    ("65_to_74_yos", 0.093),
    ("75_to_84_yos", 0.043),
    ("85_plus_yos", 0.014),
];

const INCOME: [(&str, f64); 12] = [
    ("hh_income_smaller_10k", 0.040),
    ("hh_income_10k_to_20k", 0.054),
    ("hh_income_20k_to_30k", 0.060),
    ("hh_income_30k_to_40k", 0.078),
    ("hh_income_40k_to_50k", 0.073),
    ("hh_income_50k_to_60k", 0.079),
    ("hh_income_60k_to_75k", 0.110),
    ("hh_income_75k_to_100k", 0.139),
    ("hh_income_100k_to_125k", 0.109),
    ("hh_income_125k_to_150k", 0.070),
    ("hh_income_150k_to_200k", 0.080),
    ("hh_income_200k_plus", 0.100),
];

const WEALTH: [(&str, f64); 12] = [
    ("hh_wealth_smaller_50k", 0.155),
    ("hh_wealth_50k_to_100k", 0.071),
    ("hh_wealth_100k_to_150k", 0.043),
    ("hh_wealth_150k_to_200k", 0.055),
    ("hh_wealth_200k_to_250k", 0.053),
    ("hh_wealth_250k_to_300k", 0.059),
    ("hh_wealth_300k_to_350k", 0.083),
    ("hh_wealth_350k_to_400k", 0.048),
    ("hh_wealth_400k_to_500k", 0.078),
    ("hh_wealth_500k_to_750k", 0.122),
    ("hh_wealth_750k_to_1m", 0.083),
    ("hh_wealth_1m_plus", 0.152),
];

const VEHICLES: [(&str, f64); 5] = [
    ("hhs_1_vehicle", 0.274),
    ("hhs_2_vehicles", 0.407),
    ("hhs_3_vehicles", 0.175),
    ("hhs_4_vehicles", 0.065),
    ("hhs_5_plus_vehicles", 0.033),
];

/// Independent random stream `id` for `seed`.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = seeded_rng(seed);
    rng.set_stream(id);
    rng
}

fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    Normal::new(0.0, 1.0).expect("valid normal").sample(rng)
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// Dirichlet draw around `means` with total concentration `conc`; `tilt`
/// shifts mass toward later categories when positive.
fn dirichlet(rng: &mut ChaCha8Rng, means: &[f64], conc: f64, tilt: f64) -> Vec<f64> {
    let last = (means.len() - 1).max(1) as f64;
    let shifted: Vec<f64> = means
        .iter()
        .enumerate()
        .map(|(i, m)| m * (tilt * (2.0 * i as f64 / last - 1.0)).exp())
        .collect();
    let total: f64 = shifted.iter().sum();
    let draws: Vec<f64> = shifted
        .iter()
        .map(|m| {
            Gamma::new((conc * m / total).max(1e-3), 1.0)
                .expect("valid gamma")
                .sample(rng)
                .max(1e-12)
        })
        .collect();
    let sum: f64 = draws.iter().sum();
    draws.iter().map(|d| d / sum).collect()
}

struct Lattice {
    rows: usize,
    cols: usize,
    n: usize,
}

impl Lattice {
    fn pos(&self, i: usize) -> (usize, usize) {
        (i / self.cols, i % self.cols)
    }

    fn manhattan(&self, a: usize, b: usize) -> usize {
        let (ra, ca) = self.pos(a);
        let (rb, cb) = self.pos(b);
        ra.abs_diff(rb) + ca.abs_diff(cb)
    }

    /// Rook-adjacent pairs `(a, b)` with `a < b`.
    fn adjacent_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for i in 0..self.n {
            let (r, c) = self.pos(i);
            if c + 1 < self.cols && i + 1 < self.n {
                pairs.push((i, i + 1));
            }
            if r + 1 < self.rows && i + self.cols < self.n {
                pairs.push((i, i + self.cols));
            }
        }
        pairs
    }

    /// Ordered pairs (including `i == j`) within Manhattan distance `radius`.
    fn pairs_within(&self, radius: usize) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            let (r, c) = self.pos(i);
            let r0 = r.saturating_sub(radius);
            let c0 = c.saturating_sub(radius);
            for rr in r0..=(r + radius).min(self.rows - 1) {
                for cc in c0..=(c + radius).min(self.cols - 1) {
                    let j = rr * self.cols + cc;
                    if j < self.n {
                        let d = self.manhattan(i, j);
                        if d <= radius {
                            out.push((i, j, d));
                        }
                    }
                }
            }
        }
        out
    }
}

pub fn county_fips(i: usize) -> String {
    format!("{:05}", 10001 + i)
}

/// Generates all six input files for `config`.
pub fn generate(config: &SynthConfig) -> Result<SynthDataset, SynthError> {
    config.validate()?;
    let n = config.n_counties;
    let (rows, cols) = config.grid();
    let lattice = Lattice { rows, cols, n };
    let seed = config.seed;

    // Smooth density field from a handful of metro centres.
    let mut rng = stream(seed, 1);
    let n_centres = (n / 50).max(3);
    let centres: Vec<(f64, f64, f64)> = (0..n_centres)
        .map(|_| {
            (
                rng.random_range(0.0..rows as f64),
                rng.random_range(0.0..cols as f64),
                rng.random_range(0.6..1.4),
            )
        })
        .collect();
    let raw_field: Vec<f64> = (0..n)
        .map(|i| {
            let (r, c) = lattice.pos(i);
            let bumps: f64 = centres
                .iter()
                .map(|&(cr, cc, h)| {
                    let d2 = (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2);
                    h * (-d2 / (2.0 * 2.5f64.powi(2))).exp()
                })
                .sum();
            bumps + 0.35 * std_normal(&mut rng)
        })
        .collect();
    let mean = raw_field.iter().sum::<f64>() / n as f64;
    let sd = (raw_field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let field: Vec<f64> = raw_field.iter().map(|v| (v - mean) / sd).collect();
    let density: Vec<f64> = field
        .iter()
        .map(|u| round6((4.2 + 1.3 * u).exp()))
        .collect();
    let area: Vec<f64> = (0..n).map(|_| rng.random_range(400.0..1200.0)).collect();
    let population: Vec<f64> = density
        .iter()
        .zip(&area)
        .map(|(d, a)| (d * a).round().max(500.0))
        .collect();
    let affluence: Vec<f64> = field
        .iter()
        .map(|u| 0.5 * u + 0.85 * std_normal(&mut rng))
        .collect();

    // Competitor flags: dense counties that satisfy the rule, plus a few sparse ones.
    let mut rng = stream(seed, 2);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| density[a].total_cmp(&density[b]).then(a.cmp(&b)));
    let median = crate::connectivity::median(&density);
    let sparse: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| density[i] <= median)
        .collect();
    let dense: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| density[i] > median)
        .collect();
    let n_rule = ((config.positive_rate * n as f64).round() as usize).min(dense.len());
    let n_sparse = ((SPARSE_COMPETITOR_SHARE * n as f64).round() as usize).min(sparse.len());
    let ranked = |list: &[usize], rising: bool| -> Vec<(usize, f64)> {
        let len = list.len() as f64;
        list.iter()
            .enumerate()
            .map(|(rank, &i)| {
                let weight = if rising {
                    rank as f64 + 1.0
                } else {
                    len - rank as f64
                };
                (i, weight.powi(SELECTION_POWER))
            })
            .collect()
    };
    let choose = |rng: &mut ChaCha8Rng, list: Vec<(usize, f64)>, amount: usize| -> HashSet<usize> {
        list.choose_multiple_weighted(rng, amount, |item| item.1)
            .expect("positive weights")
            .map(|item| item.0)
            .collect()
    };
    let rule_set = choose(&mut rng, ranked(&dense, true), n_rule);
    let sparse_set = choose(&mut rng, ranked(&sparse, false), n_sparse);
    let mut comp_a = vec![0u8; n];
    let mut comp_b = vec![0u8; n];
    for i in 0..n {
        let a_draw: f64 = rng.random();
        let b_draw: f64 = rng.random();
        if rule_set.contains(&i) || sparse_set.contains(&i) {
            comp_a[i] = u8::from(a_draw < 0.8);
            comp_b[i] = u8::from(b_draw < 0.6);
            if comp_a[i] == 0 && comp_b[i] == 0 {
                comp_a[i] = 1;
            }
        }
    }

    // Labels with coupled noise: the same uniform per county at every noise rate.
    let mut rng = stream(seed, 3);
    let noise: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let labels: Vec<u8> = (0..n)
        .map(|i| {
            let competitor = comp_a[i] == 1 || comp_b[i] == 1;
            let rule = u8::from(competitor && density[i] > median);
            if competitor && noise[i] < config.noise_rate {
                1 - rule
            } else {
                rule
            }
        })
        .collect();

    let features = feature_values(seed, n, &field, &affluence, &density, &comp_a, &comp_b);
    let columns = feature_columns();
    debug_assert_eq!(features.len(), columns.len());

    // Missing cells, never in the competition flags.
    let mut rng = stream(seed, 5);
    let mut missing = vec![vec![false; n]; columns.len()];
    if config.missing_rate > 0.0 {
        for (c, (_, group)) in columns.iter().enumerate() {
            for cell in missing[c].iter_mut() {
                let draw: f64 = rng.random();
                *cell = *group != NodeGroup::Competition && draw < config.missing_rate;
            }
        }
    }

    let coords: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let (r, c) = lattice.pos(i);
            (
                round6(LAT_ORIGIN + r as f64 * LAT_STEP),
                round6(LON_ORIGIN + c as f64 * LON_STEP),
            )
        })
        .collect();

    let mut nodes_csv = String::from("fips,name,lat,lon,population,label");
    for (name, _) in &columns {
        nodes_csv.push(',');
        nodes_csv.push_str(name);
    }
    nodes_csv.push('\n');
    for i in 0..n {
        let _ = write!(
            nodes_csv,
            "{},Synthetic County {},{},{},{},{}",
            county_fips(i),
            i + 1,
            coords[i].0,
            coords[i].1,
            population[i],
            labels[i]
        );
        for c in 0..columns.len() {
            if missing[c][i] {
                nodes_csv.push(',');
            } else {
                let _ = write!(nodes_csv, ",{}", features[c][i]);
            }
        }
        nodes_csv.push('\n');
    }

    let mut adjacency_csv = String::from("fips_a,fips_b\n");
    for (a, b) in lattice.adjacent_pairs() {
        let _ = writeln!(adjacency_csv, "{},{}", county_fips(a), county_fips(b));
    }

    // Commuting flows decay with lattice distance; far pairs can round to zero.
    let mut rng = stream(seed, 6);
    let mut flows_csv = String::from("origin_fips,dest_fips,workers\n");
    let mut flow = std::collections::HashMap::new();
    for (i, j, d) in lattice.pairs_within(FLOW_RADIUS) {
        let base = if i == j {
            0.6
        } else {
            0.04 * (-(d as f64 - 1.0) / 0.6).exp()
        };
        let workers = (population[i] * base * (0.5 * std_normal(&mut rng)).exp()).floor();
        flow.insert((i, j), workers);
        let _ = writeln!(
            flows_csv,
            "{},{},{}",
            county_fips(i),
            county_fips(j),
            workers
        );
    }

    let mut rng = stream(seed, 7);
    let mut sci_csv = String::from("fips_a,fips_b,sci\n");
    for (i, j, _) in lattice.pairs_within(SCI_RADIUS) {
        if i >= j {
            continue;
        }
        let shared =
            flow.get(&(i, j)).copied().unwrap_or(0.0) + flow.get(&(j, i)).copied().unwrap_or(0.0);
        let sci = ((shared + 5.0) * 100.0 * (0.3 * std_normal(&mut rng)).exp()).round();
        let _ = writeln!(sci_csv, "{},{},{}", county_fips(i), county_fips(j), sci);
    }

    // Dealers: competitors where flagged, Company X in positive counties,
    // co-located with a competitor when one exists.
    let mut rng = stream(seed, 8);
    let mut dealers_csv = String::from("brand,fips,lat,lon\n");
    let jitter = |(lat, lon): (f64, f64), rng: &mut ChaCha8Rng| {
        (
            round6(lat + rng.random_range(-0.12..0.12)),
            round6(lon + rng.random_range(-0.15..0.15)),
        )
    };
    for i in 0..n {
        let a_site = jitter(coords[i], &mut rng);
        let b_site = jitter(coords[i], &mut rng);
        let x_site = jitter(coords[i], &mut rng);
        if comp_a[i] == 1 {
            let _ = writeln!(
                dealers_csv,
                "competitor_a,{},{},{}",
                county_fips(i),
                a_site.0,
                a_site.1
            );
        }
        if comp_b[i] == 1 {
            let _ = writeln!(
                dealers_csv,
                "competitor_b,{},{},{}",
                county_fips(i),
                b_site.0,
                b_site.1
            );
        }
        if labels[i] == 1 {
            let site = if comp_a[i] == 1 {
                a_site
            } else if comp_b[i] == 1 {
                b_site
            } else {
                x_site
            };
            let _ = writeln!(
                dealers_csv,
                "companyx,{},{},{}",
                county_fips(i),
                site.0,
                site.1
            );
        }
    }

    let mut catalog_csv = String::from("column,group\n");
    for (name, group) in &columns {
        let _ = writeln!(catalog_csv, "{name},{}", group.code());
    }

    Ok(SynthDataset {
        nodes_csv,
        adjacency_csv,
        flows_csv,
        sci_csv,
        dealers_csv,
        catalog_csv,
    })
}

/// Column-major feature values in [`feature_columns`] order.
fn feature_values(
    seed: u64,
    n: usize,
    field: &[f64],
    affluence: &[f64],
    density: &[f64],
    comp_a: &[u8],
    comp_b: &[u8],
) -> Vec<Vec<f64>> {
    let mut rng = stream(seed, 4);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    // Regional interest index shared by lattice blocks, like a media market.
    let market: Vec<f64> = (0..n / 25 + 1).map(|_| std_normal(&mut rng)).collect();
    for i in 0..n {
        let (u, a) = (field[i], affluence[i]);
        let share = |rng: &mut ChaCha8Rng, p: f64, slope: f64, spread: f64| {
            round6(logistic(logit(p) + slope + spread * std_normal(rng)))
        };
        let money = |rng: &mut ChaCha8Rng, median: f64, slope: f64, spread: f64| {
            (median * (slope + spread * std_normal(rng)).exp()).round()
        };
        let mut row = vec![density[i]];

        let hh = dirichlet(&mut rng, &HH_SIZE.map(|c| c.1), 120.0, -0.15 * u);
        row.extend(hh.iter().map(|v| round6(*v)));
        row.push(share(&mut rng, 0.654, -0.1 * u, 0.15));
        let mut age_means: Vec<f64> = AGE.iter().map(|c| c.1).collect();
        age_means.push(0.242);
        let ages = dirichlet(&mut rng, &age_means, 300.0, 0.0);
        row.extend(ages[..AGE.len()].iter().map(|v| round6(*v)));
        row.push(share(&mut rng, 0.30, 0.35 * a, 0.25));

        row.push(money(&mut rng, 62000.0, 0.22 * a, 0.12));
        let income = dirichlet(&mut rng, &INCOME.map(|c| c.1), 150.0, 0.35 * a);
        row.extend(income.iter().map(|v| round6(*v)));
        let wealth = dirichlet(&mut rng, &WEALTH.map(|c| c.1), 100.0, 0.3 * a);
        row.extend(wealth.iter().map(|v| round6(*v)));
        row.push(share(&mut rng, 0.32, -0.1 * u, 0.25));
        row.push(share(&mut rng, 0.289, 0.25 * u, 0.25));
        row.push(share(&mut rng, 0.12, -0.35 * a, 0.3));
        row.push(round6(
            (0.04f64.ln() + 0.4 * std_normal(&mut rng)).exp().min(0.5),
        ));

        let mut vehicle_means: Vec<f64> = VEHICLES.iter().map(|c| c.1).collect();
        vehicle_means.insert(0, 0.046);
        let vehicles = dirichlet(&mut rng, &vehicle_means, 150.0, -0.2 * u);
        row.extend(vehicles[1..].iter().map(|v| round6(*v)));
        row.push(share(&mut rng, 0.85, -0.3 * u, 0.2));
        row.push(money(&mut rng, 3000.0, 0.25 * a, 0.15));
        row.push(money(&mut rng, 800.0, 0.35 * a, 0.25));

        row.push(share(&mut rng, 0.10, 0.3 * a, 0.25));
        row.push(share(&mut rng, 0.169, 0.25 * a, 0.2));
        row.push(share(&mut rng, 0.103, 0.3 * a, 0.25));
        let interest = 36.0 + 10.0 * market[i / 25] + 4.0 * std_normal(&mut rng);
        row.push(interest.round().clamp(0.0, 100.0));
        row.push(share(&mut rng, 0.079, 0.2 * a, 0.2));
        row.push(share(&mut rng, 0.031, 0.2 * a, 0.25));
        row.push(share(&mut rng, 0.072, 0.2 * a + 0.15 * u, 0.25));

        row.push(f64::from(comp_a[i]));
        row.push(f64::from(comp_b[i]));
        rows.push(row);
    }
    let width = rows[0].len();
    (0..width)
        .map(|c| rows.iter().map(|r| r[c]).collect())
        .collect()
}

/// Random symmetric graph for operator tests and benchmarks: `n` nodes,
/// each unordered pair connected with probability `edge_prob`, uniform
/// `[0, 1)` node and edge features, alternating labels.
pub fn random_graph(n: usize, d: usize, k: usize, edge_prob: f64, seed: u64) -> CountyGraph {
    let mut rng = seeded_rng(seed);
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < edge_prob {
                pairs.push((i, j));
            }
        }
    }
    let edges = symmetric_closure(&pairs);
    let uniform = |count: usize, rng: &mut ChaCha8Rng| {
        (0..count).map(|_| rng.random::<f64>()).collect::<Vec<_>>()
    };
    let x = Tensor::new(n, d, uniform(n * d, &mut rng)).expect("shape matches");
    let e = Tensor::new(edges.len(), k, uniform(edges.len() * k, &mut rng)).expect("shape matches");
    let nodes = (0..n)
        .map(|i| {
            let lat = 30.0 + (i / 10) as f64 * 0.1;
            let lon = -90.0 + (i % 10) as f64 * 0.1;
            CountyNode::new(county_fips(i), format!("Node {i}"), lat, lon, 1000.0)
        })
        .collect();
    let labels = (0..n).map(|i| (i % 2) as u8).collect();
    build_graph(nodes, edges, x, e, labels).expect("valid random graph")
}

/// Latitude offset in degrees that moves a point `miles` due north.
pub fn miles_to_lat_degrees(miles: f64) -> f64 {
    (miles / EARTH_RADIUS_MILES).to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{read_catalog, read_node_table};

    fn small() -> SynthConfig {
        SynthConfig {
            n_counties: 200,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn sixty_five_columns_in_five_groups() {
        let cols = feature_columns();
        assert_eq!(cols.len(), 65);
        let count = |g| cols.iter().filter(|c| c.1 == g).count();
        assert_eq!(count(NodeGroup::BasicDemographics), 19);
        assert_eq!(count(NodeGroup::Wealth), 29);
        assert_eq!(count(NodeGroup::TransportationBehavior), 8);
        assert_eq!(count(NodeGroup::LuxuryBehavior), 7);
        assert_eq!(count(NodeGroup::Competition), 2);
        let unique: HashSet<&str> = cols.iter().map(|c| c.0.as_str()).collect();
        assert_eq!(unique.len(), 65);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small()).unwrap();
        assert_eq!(a, generate(&small()).unwrap());
        let other = SynthConfig { seed: 8, ..small() };
        assert_ne!(a.nodes_csv, generate(&other).unwrap().nodes_csv);
    }

    #[test]
    fn config_validation() {
        assert!(SynthConfig {
            n_counties: 19,
            ..small()
        }
        .validate()
        .is_err());
        assert!(SynthConfig {
            positive_rate: 0.5,
            ..small()
        }
        .validate()
        .is_err());
        assert!(SynthConfig {
            noise_rate: 1.5,
            ..small()
        }
        .validate()
        .is_err());
        assert_eq!(SynthConfig::default().grid(), (22, 23));
    }

    #[test]
    fn planted_structure() {
        let config = SynthConfig::default();
        let data = generate(&config).unwrap();
        let table = read_node_table(data.nodes_csv.as_bytes()).unwrap();
        let catalog = read_catalog(data.catalog_csv.as_bytes()).unwrap();
        assert_eq!(catalog.node_column_names(), table.columns);
        assert_eq!(table.missing_count(), 0);

        let n = table.n_rows() as f64;
        let positives: Vec<usize> = (0..table.n_rows())
            .filter(|&r| table.labels[r] == 1)
            .collect();
        let share = positives.len() as f64 / n;
        assert!((share - 0.093).abs() <= 0.02, "positive share {share}");

        let a = table.column(COMPETITOR_A_COLUMN).unwrap();
        let b = table.column(COMPETITOR_B_COLUMN).unwrap();
        let with_co = positives
            .iter()
            .filter(|&&r| a[r] == Some(1.0) || b[r] == Some(1.0))
            .count();
        assert!(with_co as f64 / positives.len() as f64 >= 0.9);

        let rule = planted_oracle(&config);
        let ceiling = rule.ceiling_f_beta(&table, 1.0 / 3.0);
        assert!(ceiling > 0.85 && ceiling < 1.0, "{ceiling}");
    }

    #[test]
    fn ceiling_is_one_without_noise_and_monotone_in_noise() {
        let mut previous = f64::INFINITY;
        for noise in [0.0, 0.05, 0.1] {
            let config = SynthConfig {
                noise_rate: noise,
                ..small()
            };
            let table = read_node_table(generate(&config).unwrap().nodes_csv.as_bytes()).unwrap();
            let ceiling = planted_oracle(&config).ceiling_f_beta(&table, 1.0 / 3.0);
            if noise == 0.0 {
                assert_eq!(ceiling, 1.0);
            }
            assert!(ceiling <= previous);
            previous = ceiling;
        }
    }

    #[test]
    fn missingness_is_injected_outside_competition_columns() {
        let config = SynthConfig {
            missing_rate: 0.05,
            ..small()
        };
        let table = read_node_table(generate(&config).unwrap().nodes_csv.as_bytes()).unwrap();
        assert!(table.missing_count() > 0);
        assert!(table
            .column(COMPETITOR_A_COLUMN)
            .unwrap()
            .iter()
            .all(Option::is_some));
    }

    #[test]
    fn random_graph_is_valid() {
        let g = random_graph(8, 3, 2, 0.4, 1);
        assert_eq!(g.node_dim(), 3);
        assert_eq!(g.edge_dim(), 2);
        assert_eq!(g, random_graph(8, 3, 2, 0.4, 1));
    }
}
