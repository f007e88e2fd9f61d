//! The `spatial-bt` command line.

pub mod config;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use spatial_bt::bsbt::{write_chain_csv, write_results_csv};
use spatial_bt::bt::{read_comparisons, tally, write_comparisons};
use spatial_bt::cluster::{write_cluster_csv, write_k_posterior_csv};
use spatial_bt::geo::{adjacency_from_polygons, read_polygons, results_geojson, DEFAULT_TOLERANCE};
use spatial_bt::graph::read_manifest;
use spatial_bt::schedule::{build_schedule, draw_schedule, pc_schedule_spectral, write_schedule_csv};
use spatial_bt::sim::{self, BenchmarkConfig, DesignStudyConfig};
use spatial_bt::spatial::{prior_covariance, Affinity};
use spatial_bt::{
    fit, fit_clustered, stats, ClusterConfig, ComparisonRecord, FitConfig, Mechanism, NigBase,
    PosteriorSummary, WardGraph,
};

#[derive(Debug, Parser)]
#[command(name = "spatial-bt", version, about = "Spatial Bradley-Terry models for comparative judgement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the spatial prior model and write per-ward posterior summaries.
    Fit(FitArgs),
    /// Fit the clustering model, optionally over several values of --beta.
    Cluster(ClusterArgs),
    /// Write the pair distribution of a scheduling mechanism.
    Schedule(ScheduleArgs),
    /// Compare scheduling mechanisms on simulated studies.
    Simulate(SimulateArgs),
    /// Compare the Gibbs sampler with the Metropolis baseline.
    Bench(BenchArgs),
    /// Run the study service.
    Serve(ServeArgs),
    /// Refit with one judge left out and with only that judge.
    Sensitivity(SensitivityArgs),
    /// Derive an edge list and manifest from ward polygons.
    Convert(ConvertArgs),
    /// Write the built-in synthetic study region.
    Region(RegionArgs),
}

/// Where the ward graph comes from.
#[derive(Debug, Args)]
pub struct GraphArgs {
    /// Tab-separated edge list.
    #[arg(long, required_unless_present = "geojson")]
    pub edges: Option<PathBuf>,
    /// Ward ids, one per line; required when some ward has no neighbour.
    #[arg(long, requires = "edges")]
    pub manifest: Option<PathBuf>,
    /// Ward polygons (FeatureCollection); adjacency is derived from shared boundaries.
    #[arg(long, conflicts_with = "edges")]
    pub geojson: Option<PathBuf>,
    #[arg(long, default_value = "id")]
    pub id_property: String,
}

#[derive(Debug, Args)]
pub struct SamplerArgs {
    #[arg(long, default_value_t = 5000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 50)]
    pub burn_in: usize,
    /// Inverse-gamma shape of the alpha^2 prior.
    #[arg(long, default_value_t = 0.1)]
    pub chi: f64,
    /// Inverse-gamma scale of the alpha^2 prior.
    #[arg(long, default_value_t = 0.1)]
    pub omega: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

impl SamplerArgs {
    fn config(&self) -> FitConfig {
        FitConfig {
            iterations: self.iterations,
            burn_in: self.burn_in,
            chi: self.chi,
            omega: self.omega,
            seed: self.seed,
            ..FitConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Comparisons CSV: winner,loser,judge,timestamp.
    #[arg(long)]
    pub comparisons: PathBuf,
    #[command(flatten)]
    pub graph: GraphArgs,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// Results CSV.
    #[arg(long, default_value = "results.csv")]
    pub out: PathBuf,
    /// Also dump every retained draw here.
    #[arg(long)]
    pub chain: Option<PathBuf>,
    /// Results as GeoJSON (polygons copied from --geojson when given).
    #[arg(long)]
    pub geojson_out: Option<PathBuf>,
    /// Use only this judge's decisions (repeatable).
    #[arg(long = "include-judge")]
    pub include_judges: Vec<String>,
    /// Drop this judge's decisions (repeatable).
    #[arg(long = "exclude-judge")]
    pub exclude_judges: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub comparisons: PathBuf,
    #[command(flatten)]
    pub graph: GraphArgs,
    #[arg(long, default_value_t = 100_000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 1_000)]
    pub burn_in: usize,
    /// Self-link weight; repeat for a sweep.
    #[arg(long, default_values_t = [1e-8])]
    pub beta: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub mu0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta0: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "cluster-out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[command(flatten)]
    pub graph: GraphArgs,
    /// uniform, naive_spatial or principal_component.
    #[arg(long, default_value = "principal_component")]
    pub mechanism: Mechanism,
    /// Also draw this many pairs.
    #[arg(long)]
    pub comparisons: Option<usize>,
    #[arg(long, default_value = "schedule.csv")]
    pub out: PathBuf,
    /// Where the drawn pairs go.
    #[arg(long, default_value = "pairs.csv")]
    pub pairs_out: PathBuf,
    /// Build the principal-component schedule from its leading eigenvectors.
    #[arg(long)]
    pub spectral: bool,
    /// Number of eigenvectors used by --spectral.
    #[arg(long, default_value_t = 150)]
    pub components: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Edge list; the synthetic study region when absent.
    #[arg(long)]
    pub edges: Option<PathBuf>,
    #[arg(long, requires = "edges")]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    #[arg(long, default_value_t = 500)]
    pub comparisons: usize,
    /// Prior scale of the simulated rates.
    #[arg(long, default_value_t = 3.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 500)]
    pub iterations: usize,
    #[arg(long, default_value_t = 50)]
    pub burn_in: usize,
    /// Restrict to these mechanisms (repeatable); all three by default.
    #[arg(long)]
    pub mechanism: Vec<Mechanism>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub parallel_replicates: bool,
    #[arg(long, default_value = "simulate-out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub edges: Option<PathBuf>,
    #[arg(long, requires = "edges")]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub comparisons: usize,
    #[arg(long, default_value_t = 3.0)]
    pub alpha: f64,
    #[arg(long, default_value = "principal_component")]
    pub mechanism: Mechanism,
    #[arg(long, default_value_t = 2000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 200)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 20_000)]
    pub mh_iterations: usize,
    #[arg(long, default_value_t = 0.5)]
    pub mh_step: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "benchmark.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "SBT_LISTEN", default_value = "127.0.0.1:8080")]
    pub listen: SocketAddr,
    #[arg(long, env = "SBT_DATA_DIR", default_value = "sbt-data")]
    pub data_dir: PathBuf,
    /// Mechanism of studies created without one.
    #[arg(long, env = "SBT_MECHANISM", default_value = "principal_component")]
    pub mechanism: Mechanism,
    /// Master seed for studies created without one.
    #[arg(long, env = "SBT_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    #[arg(long)]
    pub comparisons: PathBuf,
    #[command(flatten)]
    pub graph: GraphArgs,
    /// Judge to leave out and to fit alone.
    #[arg(long)]
    pub judge: String,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long, default_value = "sensitivity-out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub geojson: PathBuf,
    #[arg(long, default_value = "id")]
    pub id_property: String,
    /// Boundary distance below which two wards touch.
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    #[arg(long, default_value = "edges.txt")]
    pub edges_out: PathBuf,
    #[arg(long, default_value = "manifest.txt")]
    pub manifest_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RegionArgs {
    #[arg(long, default_value = "edges.txt")]
    pub edges_out: PathBuf,
    #[arg(long, default_value = "manifest.txt")]
    pub manifest_out: PathBuf,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn read_json(path: &Path) -> Result<Value> {
    serde_json::from_reader(open(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn edge_graph(edges: &Path, manifest: Option<&Path>) -> Result<WardGraph> {
    let manifest = manifest.map(|m| Ok::<_, anyhow::Error>(read_manifest(open(m)?)?)).transpose()?;
    WardGraph::from_edge_list(open(edges)?, manifest).with_context(|| format!("reading {}", edges.display()))
}

impl GraphArgs {
    /// The graph and, when read from polygons, the polygon collection.
    fn load(&self) -> Result<(WardGraph, Option<Value>)> {
        match (&self.edges, &self.geojson) {
            (Some(edges), _) => Ok((edge_graph(edges, self.manifest.as_deref())?, None)),
            (None, Some(path)) => {
                let collection = read_json(path)?;
                let polygons = read_polygons(&collection, &self.id_property)?;
                Ok((adjacency_from_polygons(&polygons, DEFAULT_TOLERANCE)?, Some(collection)))
            }
            (None, None) => bail!("either --edges or --geojson is required"),
        }
    }
}

fn load_comparisons(path: &Path) -> Result<Vec<ComparisonRecord>> {
    let import = read_comparisons(open(path)?).with_context(|| format!("reading {}", path.display()))?;
    if !import.dropped.is_empty() {
        log::info!("{}: {} rows without a decision ignored", path.display(), import.dropped.len());
    }
    Ok(import.records)
}

fn select(records: &[ComparisonRecord], include: &[String], exclude: &[String]) -> Vec<ComparisonRecord> {
    records
        .iter()
        .filter(|r| include.is_empty() || include.contains(&r.judge))
        .filter(|r| !exclude.contains(&r.judge))
        .cloned()
        .collect()
}

fn summary_json(s: &PosteriorSummary) -> Value {
    json!({ "alpha": s.alpha })
}

fn print_json(v: Value) {
    println!("{v}");
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Cluster(a) => cmd_cluster(a),
        Command::Schedule(a) => cmd_schedule(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Sensitivity(a) => cmd_sensitivity(a),
        Command::Convert(a) => cmd_convert(a),
        Command::Region(a) => cmd_region(a),
    }
}

/// Fits the spatial prior model to `records`.
fn fit_records(
    graph: &WardGraph,
    records: &[ComparisonRecord],
    config: &FitConfig,
) -> Result<spatial_bt::BsbtFit> {
    if records.is_empty() {
        bail!("no comparisons to fit");
    }
    let tallies = tally(records, graph)?;
    let prior = prior_covariance(graph, 1.0)?;
    Ok(fit(&tallies, prior.correlation(), config)?)
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let (graph, polygons) = a.graph.load()?;
    let records = select(&load_comparisons(&a.comparisons)?, &a.include_judges, &a.exclude_judges);
    let config = a.sampler.config();
    config.validate()?;
    let result = fit_records(&graph, &records, &config)?;
    let mut out = create(&a.out)?;
    write_results_csv(&mut out, graph.ward_ids(), &result.summary)?;
    out.flush()?;
    if let Some(path) = &a.chain {
        let mut w = create(path)?;
        write_chain_csv(&mut w, &result)?;
        w.flush()?;
    }
    if let Some(path) = &a.geojson_out {
        let v = results_geojson(polygons.as_ref(), &a.graph.id_property, graph.ward_ids(), &result.summary.wards)?;
        let mut w = create(path)?;
        serde_json::to_writer(&mut w, &v)?;
        w.flush()?;
    }
    let mut report = summary_json(&result.summary);
    report["comparisons"] = json!(records.len());
    report["seconds"] = json!(result.sampling_seconds);
    print_json(report);
    Ok(())
}

fn beta_label(beta: f64) -> String {
    format!("{beta:e}")
}

fn cmd_cluster(a: ClusterArgs) -> Result<()> {
    let (graph, _) = a.graph.load()?;
    let records = load_comparisons(&a.comparisons)?;
    if records.is_empty() {
        bail!("no comparisons to fit");
    }
    let tallies = tally(&records, &graph)?;
    let affinity = Affinity::communicability(&graph);
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut sweep = csv::Writer::from_writer(create(&a.out_dir.join("beta_sweep.csv"))?);
    sweep.write_record(["beta", "modal_k", "k", "probability"])?;
    for &beta in &a.beta {
        let cfg = ClusterConfig {
            iterations: a.iterations,
            burn_in: a.burn_in,
            beta,
            base: NigBase { mu0: a.mu0, alpha0: a.alpha0, beta0: a.beta0 },
            seed: a.seed,
        };
        cfg.validate()?;
        let result = fit_clustered(&tallies, &affinity, &cfg)?;
        let label = beta_label(beta);
        let dir = a.out_dir.join(format!("beta_{label}"));
        let mut w = create(&dir.join("clusters.csv"))?;
        write_cluster_csv(&mut w, &graph, &result)?;
        w.flush()?;
        let mut w = create(&dir.join("k_posterior.csv"))?;
        write_k_posterior_csv(&mut w, &result)?;
        w.flush()?;
        let mut w = create(&dir.join("results.csv"))?;
        write_results_csv(&mut w, graph.ward_ids(), &result.summary)?;
        w.flush()?;
        let modal = result.modal_k();
        for (k, p) in result.k_posterior() {
            sweep.write_record([label.clone(), modal.to_string(), k.to_string(), p.to_string()])?;
        }
        print_json(json!({ "beta": beta, "modal_k": modal, "seconds": result.sampling_seconds }));
    }
    sweep.flush()?;
    Ok(())
}

fn cmd_schedule(a: ScheduleArgs) -> Result<()> {
    let (graph, _) = a.graph.load()?;
    let prior = prior_covariance(&graph, 1.0)?;
    let dist = if a.spectral {
        if a.mechanism != Mechanism::PrincipalComponent {
            bail!("--spectral only applies to the principal_component mechanism");
        }
        pc_schedule_spectral(prior.sigma(), a.components)?
    } else {
        build_schedule(a.mechanism, &graph, prior.sigma())?
    };
    let mut w = create(&a.out)?;
    write_schedule_csv(&mut w, graph.ward_ids(), &dist)?;
    w.flush()?;
    if let Some(m) = a.comparisons {
        let mut rng = spatial_bt::rng_for(a.seed, 0);
        let mut w = csv::Writer::from_writer(create(&a.pairs_out)?);
        w.write_record(["ward_a", "ward_b"])?;
        for (i, j) in draw_schedule(&dist, m, &mut rng) {
            w.write_record([graph.ward_id(i), graph.ward_id(j)])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn optional_graph(edges: Option<&Path>, manifest: Option<&Path>) -> Result<WardGraph> {
    match edges {
        Some(e) => edge_graph(e, manifest),
        None => Ok(WardGraph::study_region()),
    }
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg = DesignStudyConfig::new(optional_graph(a.edges.as_deref(), a.manifest.as_deref())?);
    cfg.alpha = a.alpha;
    cfg.comparisons = a.comparisons;
    cfg.replicates = a.replicates;
    cfg.iterations = a.iterations;
    cfg.burn_in = a.burn_in;
    cfg.seed = a.seed;
    cfg.parallel = a.parallel_replicates;
    if !a.mechanism.is_empty() {
        cfg.mechanisms = a.mechanism;
    }
    let report = sim::run_design_study(&cfg)?;
    let mut w = create(&a.out_dir.join("replicates.csv"))?;
    sim::write_replicates_csv(&mut w, &report)?;
    w.flush()?;
    let mut w = create(&a.out_dir.join("summary.csv"))?;
    sim::write_summary_csv(&mut w, &report)?;
    w.flush()?;
    for r in &report.summary {
        print_json(json!({ "mechanism": r.mechanism, "mean": r.mean, "min": r.min, "max": r.max }));
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let graph = optional_graph(a.edges.as_deref(), a.manifest.as_deref())?;
    let cfg = BenchmarkConfig {
        comparisons: a.comparisons,
        alpha: a.alpha,
        mechanism: a.mechanism,
        iterations: a.iterations,
        burn_in: a.burn_in,
        mh_iterations: a.mh_iterations,
        mh_step: a.mh_step,
        seed: a.seed,
    };
    let report = sim::run_sampler_benchmark(&graph, &cfg)?;
    let mut w = create(&a.out)?;
    sim::write_benchmark_csv(&mut w, &report)?;
    w.flush()?;
    print_json(json!({
        "pg_median_ess_per_sec": report.pg.median_ess_per_sec,
        "mh_median_ess_per_sec": report.mh.median_ess_per_sec,
        "speedup": report.speedup(),
        "agreement": report.agreement,
    }));
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let mut config = spatial_bt_service::ServiceConfig::new(a.data_dir);
    config.default_mechanism = a.mechanism;
    config.seed = a.seed;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(spatial_bt_service::serve(config, a.listen, async {
        let _ = tokio::signal::ctrl_c().await;
        log::info!("shutting down");
    }))?;
    Ok(())
}

fn cmd_sensitivity(a: SensitivityArgs) -> Result<()> {
    let (graph, _) = a.graph.load()?;
    let records = load_comparisons(&a.comparisons)?;
    if !records.iter().any(|r| r.judge == a.judge) {
        bail!("judge `{}` has no decisions in {}", a.judge, a.comparisons.display());
    }
    let only = vec![a.judge.clone()];
    let subsets = [
        ("all", records.clone()),
        ("without_judge", select(&records, &[], &only)),
        ("only_judge", select(&records, &only, &[])),
    ];
    let config = a.sampler.config();
    config.validate()?;
    let mut medians = Vec::new();
    for (name, subset) in &subsets {
        if *name != "all" {
            let mut w = create(&a.out_dir.join(format!("comparisons_{name}.csv")))?;
            write_comparisons(&mut w, subset)?;
            w.flush()?;
        }
        if subset.is_empty() {
            log::warn!("subset `{name}` has no comparisons; not fitted");
            continue;
        }
        let result = fit_records(&graph, subset, &config).with_context(|| format!("fitting `{name}`"))?;
        let mut w = create(&a.out_dir.join(format!("results_{name}.csv")))?;
        write_results_csv(&mut w, graph.ward_ids(), &result.summary)?;
        w.flush()?;
        let mut report = summary_json(&result.summary);
        report["subset"] = json!(name);
        report["comparisons"] = json!(subset.len());
        print_json(report);
        medians.push((*name, result.summary.medians()));
    }
    let mut w = csv::Writer::from_writer(create(&a.out_dir.join("correlations.csv"))?);
    w.write_record(["a", "b", "pearson", "spearman"])?;
    for x in 0..medians.len() {
        for y in x + 1..medians.len() {
            let (na, ma) = &medians[x];
            let (nb, mb) = &medians[y];
            w.write_record([
                na.to_string(),
                nb.to_string(),
                stats::pearson(ma, mb).to_string(),
                stats::spearman(ma, mb).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_graph(graph: &WardGraph, edges: &Path, manifest: &Path) -> Result<()> {
    let mut w = create(edges)?;
    graph.write_edge_list(&mut w)?;
    w.flush()?;
    let mut w = create(manifest)?;
    graph.write_manifest(&mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_convert(a: ConvertArgs) -> Result<()> {
    let polygons = read_polygons(&read_json(&a.geojson)?, &a.id_property)?;
    let graph = adjacency_from_polygons(&polygons, a.tolerance)?;
    write_graph(&graph, &a.edges_out, &a.manifest_out)?;
    print_json(json!({ "wards": graph.len(), "edges": graph.edge_count() }));
    Ok(())
}

fn cmd_region(a: RegionArgs) -> Result<()> {
    let graph = WardGraph::study_region();
    write_graph(&graph, &a.edges_out, &a.manifest_out)?;
    print_json(json!({ "wards": graph.len(), "edges": graph.edge_count() }));
    Ok(())
}
