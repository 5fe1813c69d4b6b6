use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sitegnn::ablation::{self, StudyResult};
use sitegnn::bundle::{build_bundle, EdgeDefinition, GraphBundle};
use sitegnn::connectivity::{self, Brand};
use sitegnn::gnn::{Checkpoint, GraphContext};
use sitegnn::graph::{EdgeKind, NodeGroup};
use sitegnn::ingest::{load_adjacency, load_catalog, load_node_table};
use sitegnn::recommend::{self, Attribution};
use sitegnn::synth::{self, planted_oracle};
use sitegnn::train::{self, make_split, TrainConfig};

use crate::config::RunConfig;
use crate::manifest::RunManifest;
use crate::plots;
use crate::{AblateArgs, Cli, Command, IngestArgs, RecommendArgs, SynthArgs, TrainArgs};

pub const BUNDLE_FILE: &str = "graph.bundle";
pub const PREPROCESS_REPORT_FILE: &str = "preprocess_report.csv";
pub const INGEST_REPORT_FILE: &str = "ingest_report.json";
pub const PLANTED_FILE: &str = "planted_rule.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const STUDY_FILE: &str = "study.json";
pub const BEST_MODEL_FILE: &str = "best_model.json";
pub const RECOMMENDATIONS_FILE: &str = "recommendations.csv";
pub const SHORTLIST_FILE: &str = "shortlist.csv";
pub const ATTRIBUTIONS_FILE: &str = "attributions.csv";
pub const DISTANCE_HISTOGRAM_FILE: &str = "dealer_distance_histogram.svg";

const META_EDGES: &str = "edge_definition";
const META_EDGE_FEATURES: &str = "edge_features";
const META_GROUPS: &str = "node_groups";
const META_TRAIN: &str = "train_config";

/// Runs one parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    let file_config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let config = file_config.resolve(cli.seed);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        builder = builder.num_threads(jobs);
    }
    let pool = builder.build().context("cannot start worker pool")?;
    std::fs::create_dir_all(&cli.out)
        .with_context(|| format!("cannot create {}", cli.out.display()))?;

    let mut manifest = RunManifest::new(cli.command.name(), config.seed(), &config, &cli.command)?;
    let out = cli.out.as_path();
    let artifacts = pool.install(|| match &cli.command {
        Command::Synth(args) => cmd_synth(args, &config, out),
        Command::Ingest(args) => cmd_ingest(args, &config, out, &mut manifest),
        Command::Train(args) => cmd_train(args, &config, out, &mut manifest),
        Command::Ablate(args) => cmd_ablate(args, &config, out, &mut manifest),
        Command::Recommend(args) => cmd_recommend(args, &config, out, &mut manifest),
    })?;
    manifest.add_artifacts(out, &artifacts)?;
    manifest.write(out)?;
    Ok(())
}

fn write_text(path: PathBuf, text: &str) -> Result<PathBuf> {
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}

fn write_json(path: PathBuf, value: &impl Serialize) -> Result<PathBuf> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    write_text(path, &text)
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("input file not found: {}", path.display());
    }
    Ok(())
}

fn load_bundle(path: &Path, manifest: &mut RunManifest) -> Result<GraphBundle> {
    require_file(path)?;
    manifest.add_input(path)?;
    GraphBundle::load(path).with_context(|| format!("cannot load graph bundle {}", path.display()))
}

pub fn cmd_synth(args: &SynthArgs, config: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let mut synth_config = config.synth.clone();
    if let Some(n) = args.counties {
        synth_config.n_counties = n;
    }
    if let Some(r) = args.noise_rate {
        synth_config.noise_rate = r;
    }
    if let Some(r) = args.missing_rate {
        synth_config.missing_rate = r;
    }
    let dataset = synth::generate(&synth_config)?;
    dataset.write_to(out)?;
    let mut artifacts: Vec<PathBuf> = dataset
        .files()
        .iter()
        .map(|(name, _)| out.join(name))
        .collect();

    let table = sitegnn::ingest::read_node_table(dataset.nodes_csv.as_bytes())?;
    let rule = planted_oracle(&synth_config);
    #[derive(Serialize)]
    struct Planted {
        rule: String,
        noise_rate: f64,
        n_counties: usize,
        positives: usize,
        ceiling_f_beta: f64,
    }
    let planted = Planted {
        rule: rule.describe(),
        noise_rate: synth_config.noise_rate,
        n_counties: synth_config.n_counties,
        positives: table.labels.iter().filter(|&&l| l == 1).count(),
        ceiling_f_beta: rule.ceiling_f_beta(&table, config.train.beta),
    };
    artifacts.push(write_json(out.join(PLANTED_FILE), &planted)?);
    eprintln!(
        "synth: {} counties, {} positive, planted ceiling F = {:.4}",
        planted.n_counties, planted.positives, planted.ceiling_f_beta
    );
    Ok(artifacts)
}

pub fn cmd_ingest(
    args: &IngestArgs,
    config: &RunConfig,
    out: &Path,
    manifest: &mut RunManifest,
) -> Result<Vec<PathBuf>> {
    let path = |name: &str| args.data.join(name);
    for name in [
        synth::NODES_FILE,
        synth::CATALOG_FILE,
        synth::ADJACENCY_FILE,
        synth::FLOWS_FILE,
        synth::SCI_FILE,
    ] {
        require_file(&path(name))?;
        manifest.add_input(&path(name))?;
    }
    let table = load_node_table(&path(synth::NODES_FILE))?;
    let catalog = load_catalog(&path(synth::CATALOG_FILE))?;
    let adjacency = load_adjacency(&path(synth::ADJACENCY_FILE))?;
    let flows = connectivity::load_flows(&path(synth::FLOWS_FILE))?;
    let sci = connectivity::load_sci(&path(synth::SCI_FILE))?;
    let (bundle, report) =
        build_bundle(&table, &catalog, &adjacency, &flows, &sci, &config.ingest)?;
    if let Some(warning) = report.filter.warning() {
        eprintln!("warning: {warning}");
    }

    let bundle_path = out.join(BUNDLE_FILE);
    bundle.save(&bundle_path)?;
    let mut csv = String::from(
        "column,group,imputed,skew_before,skew_after,lambda,transform_rejected,scale\n",
    );
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.6}"));
    for c in &report.columns {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            c.column,
            c.group,
            c.imputed,
            opt(c.skew_before),
            opt(c.skew_after),
            opt(c.lambda),
            c.transform_rejected,
            serde_json::to_value(c.kind)?.as_str().unwrap_or_default()
        ));
    }
    let report_path = write_text(out.join(PREPROCESS_REPORT_FILE), &csv)?;
    let json_path = write_json(out.join(INGEST_REPORT_FILE), &report)?;
    eprintln!(
        "ingest: {} counties, {} adjacency edges, {} commuting edges, {} imputed cells",
        report.n_nodes, report.n_adjacency_edges, report.n_commuting_edges, report.imputed_cells
    );
    Ok(vec![bundle_path, report_path, json_path])
}

fn checkpoint_metadata(
    def: EdgeDefinition,
    edge_kinds: &[EdgeKind],
    groups: &[NodeGroup],
    train: &TrainConfig,
) -> Result<BTreeMap<String, String>> {
    let join = |items: Vec<&str>| items.join(",");
    Ok(BTreeMap::from([
        (META_EDGES.to_string(), def.code().to_string()),
        (
            META_EDGE_FEATURES.to_string(),
            join(edge_kinds.iter().map(|k| k.code()).collect()),
        ),
        (
            META_GROUPS.to_string(),
            join(groups.iter().map(|g| g.code()).collect()),
        ),
        (META_TRAIN.to_string(), serde_json::to_string(train)?),
    ]))
}

/// Combination stored in a checkpoint by `train` or `ablate`.
pub struct DeployedCombo {
    pub edge_def: EdgeDefinition,
    pub edge_kinds: Vec<EdgeKind>,
    pub groups: Vec<NodeGroup>,
    pub train: TrainConfig,
}

pub fn read_checkpoint_metadata(checkpoint: &Checkpoint) -> Result<DeployedCombo> {
    let get = |key: &str| {
        checkpoint
            .metadata
            .get(key)
            .with_context(|| format!("checkpoint metadata lacks {key:?}"))
    };
    let edge_def: EdgeDefinition = get(META_EDGES)?.parse().map_err(anyhow::Error::msg)?;
    let edge_kinds = get(META_EDGE_FEATURES)?
        .split(',')
        .map(str::parse)
        .collect::<Result<Vec<EdgeKind>, _>>()?;
    let groups = get(META_GROUPS)?
        .split(',')
        .map(str::parse)
        .collect::<Result<Vec<NodeGroup>, _>>()?;
    let train = serde_json::from_str(get(META_TRAIN)?)?;
    Ok(DeployedCombo {
        edge_def,
        edge_kinds,
        groups,
        train,
    })
}

pub fn cmd_train(
    args: &TrainArgs,
    config: &RunConfig,
    out: &Path,
    manifest: &mut RunManifest,
) -> Result<Vec<PathBuf>> {
    let bundle = load_bundle(&args.bundle, manifest)?;
    let graph = bundle.graph(args.edges, &args.edge_features, &args.groups)?;
    let split = make_split(&bundle.labels, &config.train)?;
    let (cv, deployed) = rayon::join(
        || train::cross_validate(args.model, &graph, &split, &config.train),
        || train::deployment_model(args.model, &graph, &split, &config.train),
    );
    let (cv, deployed) = (cv?, deployed?);

    let metadata =
        checkpoint_metadata(args.edges, &args.edge_features, &args.groups, &config.train)?;
    let checkpoint_path = out.join(CHECKPOINT_FILE);
    Checkpoint::new(deployed.params, metadata).save(&checkpoint_path)?;
    let history_path = out.join(HISTORY_FILE);
    train::write_history(&history_path, &deployed.history)?;
    let metrics_path = write_json(out.join(METRICS_FILE), &cv)?;
    eprintln!(
        "train: {} F = {:.3}, precision = {:.3}, recall = {:.3}",
        args.model, cv.mean.f_beta, cv.mean.precision, cv.mean.recall
    );
    Ok(vec![checkpoint_path, history_path, metrics_path])
}

pub fn cmd_ablate(
    args: &AblateArgs,
    config: &RunConfig,
    out: &Path,
    manifest: &mut RunManifest,
) -> Result<Vec<PathBuf>> {
    let bundle = load_bundle(&args.bundle, manifest)?;
    let study = config.study(args.quick);
    study.validate()?;
    let split = make_split(&bundle.labels, &study.train)?;
    let total = study.n_evaluations();
    let done = AtomicUsize::new(0);
    let progress = |r: &StudyResult| {
        let n = done.fetch_add(1, Ordering::Relaxed) + 1;
        eprintln!(
            "[{n}/{total}] round {} {}: F = {:.3} P = {:.3} R = {:.3}",
            r.round, r.combo, r.metrics.f_beta, r.metrics.precision, r.metrics.recall
        );
    };
    let report = ablation::run_study(&bundle, &split, &study, &progress)?;
    let mut artifacts = ablation::emit_tables(&report, out)?;
    artifacts.push(write_json(out.join(STUDY_FILE), &report)?);

    let best = &report.best.combo;
    let graph = bundle.graph(best.edge_def, &best.edge_kinds, &best.node_groups)?;
    let deployed = train::deployment_model(best.kind, &graph, &split, &study.train)?;
    let metadata = checkpoint_metadata(
        best.edge_def,
        &best.edge_kinds,
        &best.node_groups,
        &study.train,
    )?;
    let model_path = out.join(BEST_MODEL_FILE);
    Checkpoint::new(deployed.params, metadata).save(&model_path)?;
    artifacts.push(model_path);
    let ranking: Vec<&str> = report
        .round1
        .ranking
        .iter()
        .map(|s| s.group.code())
        .collect();
    eprintln!(
        "ablate: group ranking {}; best {} with F = {:.3}",
        ranking.join(" > "),
        best,
        report.best.metrics.f_beta
    );
    Ok(artifacts)
}

pub fn cmd_recommend(
    args: &RecommendArgs,
    config: &RunConfig,
    out: &Path,
    manifest: &mut RunManifest,
) -> Result<Vec<PathBuf>> {
    let bundle = load_bundle(&args.bundle, manifest)?;
    require_file(&args.checkpoint)?;
    manifest.add_input(&args.checkpoint)?;
    require_file(&args.dealers)?;
    manifest.add_input(&args.dealers)?;
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let combo = read_checkpoint_metadata(&checkpoint)?;
    let dealers = connectivity::load_dealers(&args.dealers)?;
    let method = args.method.unwrap_or(config.recommend.method);

    let graph = bundle.graph(combo.edge_def, &combo.edge_kinds, &combo.groups)?;
    let split = make_split(&bundle.labels, &combo.train)?;
    let predictions = recommend::predict_application(
        &checkpoint.params,
        &graph,
        &split.application,
        combo.train.threshold,
    )?;
    let company: Vec<_> = dealers
        .iter()
        .filter(|d| d.brand == Brand::CompanyX)
        .cloned()
        .collect();
    let nn = connectivity::nn_dealer_distances(&company)?;
    let median = connectivity::median(&nn);
    let recommendations = recommend::recommend(&predictions, graph.nodes(), &dealers, median)?;
    let shortlist = recommend::final_shortlist(&recommendations);

    let ctx = GraphContext::new(&graph)?;
    let attributions: Vec<Attribution> = predictions
        .iter()
        .map(|p| {
            let values = recommend::attribute_on_context(
                &checkpoint.params,
                &ctx,
                p.node,
                method,
                config.recommend.steps,
            )?;
            Ok(Attribution {
                fips: p.fips.clone(),
                method,
                features: graph.node_columns().to_vec(),
                values,
            })
        })
        .collect::<Result<_, recommend::RecommendError>>()?;

    let mut artifacts = Vec::new();
    let path = out.join(RECOMMENDATIONS_FILE);
    recommend::write_recommendations(&path, &recommendations)?;
    artifacts.push(path);
    let path = out.join(SHORTLIST_FILE);
    recommend::write_recommendations(&path, &shortlist)?;
    artifacts.push(path);
    let path = out.join(ATTRIBUTIONS_FILE);
    recommend::write_attributions(&path, &attributions)?;
    artifacts.push(path);
    for (a, p) in attributions.iter().zip(&predictions) {
        let top = recommend::top_k_features(a, config.recommend.top_k);
        let title = format!(
            "{} ({}) p = {:.2}: top features, {}",
            p.name, p.fips, p.probability, method
        );
        artifacts.push(write_text(
            out.join(format!("importance_{}.svg", p.fips)),
            &plots::signed_bar_chart(&title, &top),
        )?);
    }
    artifacts.push(write_text(
        out.join(DISTANCE_HISTOGRAM_FILE),
        &plots::histogram_chart(
            "Distance from each Company X dealer to its nearest Company X neighbour",
            "miles",
            &nn,
            20,
            Some(median),
        ),
    )?);
    eprintln!(
        "recommend: {} of {} application counties predicted, {} on the shortlist (median spacing {:.1} mi)",
        predictions.len(),
        split.application.len(),
        shortlist.len(),
        median
    );
    Ok(artifacts)
}
