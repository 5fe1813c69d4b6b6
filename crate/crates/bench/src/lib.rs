//! Shared fixtures for the benchmarks.

use sitegnn::bundle::{build_bundle, GraphBundle, IngestOptions};
use sitegnn::connectivity::{read_flows, read_sci};
use sitegnn::ingest::{read_adjacency, read_catalog, read_node_table};
use sitegnn::synth::{generate, SynthConfig};

/// Graph bundle for a synthetic lattice of `n_counties`.
pub fn synthetic_bundle(n_counties: usize, seed: u64) -> GraphBundle {
    let config = SynthConfig {
        n_counties,
        seed,
        ..SynthConfig::default()
    };
    let data = generate(&config).expect("valid synth config");
    let (bundle, _) = build_bundle(
        &read_node_table(data.nodes_csv.as_bytes()).expect("generated nodes parse"),
        &read_catalog(data.catalog_csv.as_bytes()).expect("generated catalog parses"),
        &read_adjacency(data.adjacency_csv.as_bytes()).expect("generated adjacency parses"),
        &read_flows(data.flows_csv.as_bytes()).expect("generated flows parse"),
        &read_sci(data.sci_csv.as_bytes()).expect("generated SCI parses"),
        &IngestOptions::default(),
    )
    .expect("generated data builds a bundle");
    bundle
}
