//! Config-driven experiment pipelines.
//!
//! A run reads one TOML document, executes a single task and writes its
//! outputs into `output_dir`: a metrics CSV (`metric,value,details`), task
//! specific CSV/JSON files, a `manifest.json` echoing the config, and a
//! `run_report.json` with wall-clock timings. Everything except the run report
//! is a pure function of the config.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use lsgp::bounds::{check_elementwise_deviation_all, check_cross_covariance, check_within_covariance, extract_params};
use lsgp::estimation::{interpolate_all, sample_covariance, Interpolation};
use lsgp::eval::{
    covariance_discrepancy, error_metrics, normalized_mutual_information, planted_lsgp, random_localized_model,
    synthetic_block_lsgp, BlockSpec, LocalizedSpec, MetricReport, PlantedSpec,
};
use lsgp::graph::build_knn_graph;
use lsgp::io::{self as lio, MetricRow};
use lsgp::learner::{learn_lsgp, LearnerConfig};
use lsgp::model::ModelDocument;
use lsgp::partition::{covariance_edge_distance, local_approximation, partition_graph};
use lsgp::{Graph, LsgpModel, Partition, RealizationSet};
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] lsgp::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Synth,
    Learn,
    Interpolate,
    Partition,
    LocalApprox,
    VerifyBounds,
    Sweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    #[default]
    Files,
    Planted,
    Block,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub kind: DataKind,
    /// `id,x,y[,z…]`; a k-NN graph is built from it.
    pub coords: Option<PathBuf>,
    /// `i,j,w`; used instead of `coords` when given.
    pub edges: Option<PathBuf>,
    pub signals: Option<PathBuf>,
    pub knn: usize,
    pub width: Option<f64>,
    /// Realizations drawn from generated models.
    pub realizations: usize,
    pub snr_db: Option<f64>,
    pub planted: PlantedSpec,
    pub block: BlockSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            kind: DataKind::Files,
            coords: None,
            edges: None,
            signals: None,
            knn: 5,
            width: None,
            realizations: 1000,
            snr_db: None,
            planted: PlantedSpec::default(),
            block: BlockSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPattern {
    #[default]
    Random,
    Structured,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MissingConfig {
    pub ratio: f64,
    pub pattern: MissingPattern,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceSource {
    /// Available-case sample covariance.
    Sample,
    /// Model learned from the sample covariance.
    Lsgp,
    /// Block-diagonal composite of per-part stationary fits.
    Local,
    /// Covariance of the generating model, when known.
    True,
}

impl CovarianceSource {
    fn name(self) -> &'static str {
        match self {
            CovarianceSource::Sample => "sample",
            CovarianceSource::Lsgp => "lsgp",
            CovarianceSource::Local => "local",
            CovarianceSource::True => "true",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpolateConfig {
    pub methods: Vec<CovarianceSource>,
}

impl Default for InterpolateConfig {
    fn default() -> Self {
        InterpolateConfig { methods: vec![CovarianceSource::Sample, CovarianceSource::Lsgp] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    pub k: usize,
    pub theta: Option<f64>,
    /// Partition the true covariance instead of the sample estimate.
    pub use_true_covariance: bool,
    /// Reference partition for NMI.
    pub truth: Option<PathBuf>,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig { k: 2, theta: None, use_true_covariance: false, truth: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsConfig {
    /// Model document to check; the graph comes from `[data]`.
    pub model: Option<PathBuf>,
    pub partition: Option<PathBuf>,
    /// Number of random localized models to check when no model is given.
    pub random_models: usize,
    pub localized: LocalizedSpec,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        BoundsConfig {
            model: None,
            partition: None,
            random_models: 100,
            localized: LocalizedSpec { band_limited: true, ..LocalizedSpec::default() },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParameter {
    Mu1,
    Mu2,
    Mu3,
    K,
    Q,
    Ratio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// For block data: outside membership values to tabulate NMI over.
    pub outside_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub missing: MissingConfig,
    #[serde(default)]
    pub interpolate: InterpolateConfig,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default)]
    pub bounds: BoundsConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub synth: SynthConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Parses `path` and resolves relative paths against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.data.coords);
        fix(&mut self.data.edges);
        fix(&mut self.data.signals);
        fix(&mut self.partition.truth);
        fix(&mut self.bounds.model);
        fix(&mut self.bounds.partition);
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
    }

    /// Field-level checks run before any work.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(0.0..1.0).contains(&self.missing.ratio) {
            return bad(format!("missing.ratio must be in [0, 1), got {}", self.missing.ratio));
        }
        self.learner.validate().map_err(|e| CliError::Config(format!("learner: {e}")))?;
        let needs_data = !matches!(self.task, Task::VerifyBounds) || self.bounds.model.is_some();
        if needs_data && self.data.kind == DataKind::Files {
            if self.data.coords.is_none() && self.data.edges.is_none() {
                return bad("data: files input needs coords or edges".into());
            }
            if self.data.signals.is_none() && !matches!(self.task, Task::VerifyBounds) {
                return bad("data: files input needs signals".into());
            }
        }
        if self.data.kind != DataKind::Files && self.data.realizations < 2 {
            return bad("data.realizations must be at least 2".into());
        }
        for p in [
            &self.data.coords,
            &self.data.edges,
            &self.data.signals,
            &self.partition.truth,
            &self.bounds.model,
            &self.bounds.partition,
        ]
        .into_iter()
        .flatten()
        {
            if !p.exists() {
                return bad(format!("input path {} does not exist", p.display()));
            }
        }
        if self.bounds.model.is_some() != self.bounds.partition.is_some() {
            return bad("bounds.model and bounds.partition must be given together".into());
        }
        if self.task == Task::Sweep {
            match &self.sweep {
                None => return bad("task sweep needs a [sweep] table".into()),
                Some(s) if s.values.is_empty() => return bad("sweep.values is empty".into()),
                _ => {}
            }
        }
        if self.task == Task::Synth && !self.synth.outside_grid.is_empty() && self.data.kind != DataKind::Block {
            return bad("synth.outside_grid requires data.kind = \"block\"".into());
        }
        Ok(())
    }
}

/// A graph with realizations and, for generated data, the generating model.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: Arc<Graph>,
    pub realizations: RealizationSet,
    pub truth: Option<LsgpModel>,
    pub truth_partition: Option<Partition>,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(io_err(format!("opening {}", path.display())))
}

fn load_graph(cfg: &DataConfig) -> Result<Arc<Graph>> {
    if let Some(edges) = &cfg.edges {
        let n = edge_vertex_count(edges)?;
        return Ok(Arc::new(lio::read_edges(open(edges)?, n)?));
    }
    let coords = cfg.coords.as_ref().ok_or_else(|| CliError::Config("data: no graph source".into()))?;
    let points = lio::read_coords(open(coords)?)?;
    match build_knn_graph(&points, cfg.knn, cfg.width) {
        Err(lsgp::Error::Disconnected { components }) => Err(CliError::Config(format!(
            "the {}-NN graph has {} components; increase data.knn",
            cfg.knn,
            components.len()
        ))),
        other => Ok(Arc::new(other?)),
    }
}

fn edge_vertex_count(path: &Path) -> Result<usize> {
    let mut max = None;
    for (line, rec) in csv::Reader::from_reader(open(path)?).records().enumerate() {
        let rec = rec.map_err(|e| lsgp::Error::Csv { line: line as u64 + 2, message: e.to_string() })?;
        for field in rec.iter().take(2) {
            let v: usize = field.trim().parse().map_err(|_| lsgp::Error::Csv {
                line: line as u64 + 2,
                message: format!("bad vertex index {field:?}"),
            })?;
            max = max.max(Some(v));
        }
    }
    Ok(max.map_or(0, |m| m + 1))
}

/// Builds the graph and realizations described by `cfg`.
pub fn load_dataset(cfg: &DataConfig, seed: u64) -> Result<Dataset> {
    match cfg.kind {
        DataKind::Files => {
            let graph = load_graph(cfg)?;
            let signals = cfg.signals.as_ref().ok_or_else(|| CliError::Config("data.signals missing".into()))?;
            let realizations = lio::read_signals(open(signals)?)?;
            if realizations.n_vertices() != graph.n_vertices() {
                return Err(CliError::Config(format!(
                    "signals have {} columns but the graph has {} vertices",
                    realizations.n_vertices(),
                    graph.n_vertices()
                )));
            }
            Ok(Dataset { graph, realizations, truth: None, truth_partition: None })
        }
        DataKind::Planted => {
            let (graph, model) = planted_lsgp(&cfg.planted)?;
            let realizations = model.sample_realizations(cfg.realizations, seed, cfg.snr_db)?;
            Ok(Dataset { graph, realizations, truth: Some(model), truth_partition: None })
        }
        DataKind::Block => {
            let (graph, partition, model) = synthetic_block_lsgp(&cfg.block)?;
            let realizations = model.sample_realizations(cfg.realizations, seed, cfg.snr_db)?;
            Ok(Dataset { graph, realizations, truth: Some(model), truth_partition: Some(partition) })
        }
    }
}

/// Hides `⌈ratio·N⌉` vertices per realization: a uniform sample, or a
/// breadth-first ball around a uniform random center. Returns the reduced set
/// and the hidden vertices per realization (sorted).
pub fn inject_missingness(
    r: &RealizationSet,
    pattern: MissingPattern,
    ratio: f64,
    seed: u64,
    graph: &Graph,
) -> Result<(RealizationSet, Vec<Vec<usize>>)> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(CliError::Config(format!("missing ratio must be in [0, 1), got {ratio}")));
    }
    let n = r.n_vertices();
    let count = (ratio * n as f64).ceil() as usize;
    if count == 0 {
        return Ok((r.clone(), vec![Vec::new(); r.len()]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden: Vec<Vec<usize>> = (0..r.len())
        .map(|_| {
            let mut h = match pattern {
                MissingPattern::Random => sample(&mut rng, n, count).into_vec(),
                MissingPattern::Structured => {
                    let center = rng.random_range(0..n);
                    graph.bfs_order(center).into_iter().take(count).collect()
                }
            };
            h.sort_unstable();
            h
        })
        .collect();
    Ok((r.with_hidden(&hidden)?, hidden))
}

/// Output sink collecting metric rows and written files.
struct Outputs {
    dir: PathBuf,
    metrics: Vec<MetricRow>,
    files: Vec<String>,
    timings: Vec<(String, f64)>,
}

impl Outputs {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        self.files.push(name.to_string());
        Ok(BufWriter::new(File::create(&path).map_err(io_err(format!("creating {}", path.display())))?))
    }

    fn metric(&mut self, metric: &str, value: f64, details: String) {
        self.metrics.push(MetricRow { metric: metric.to_string(), value, details });
    }

    fn report(&mut self, r: &MetricReport, prefix: &str) {
        let mut row = MetricRow::from(r);
        if !prefix.is_empty() {
            row.details = format!("{prefix};{}", row.details);
        }
        self.metrics.push(row);
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let w = self.create(name)?;
        serde_json::to_writer_pretty(w, value)?;
        Ok(())
    }

    fn time<T>(&mut self, label: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f();
        self.timings.push((label.to_string(), t.elapsed().as_secs_f64()));
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub task: Task,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub versions: Vec<(String, String)>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub task: Task,
    pub timings: Vec<(String, f64)>,
    pub metrics: usize,
    pub seconds: f64,
}

/// Runs the configured task and returns the run report.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir).map_err(io_err(format!("creating {}", cfg.output_dir.display())))?;
    let start = Instant::now();
    let mut out = Outputs { dir: cfg.output_dir.clone(), metrics: Vec::new(), files: Vec::new(), timings: Vec::new() };
    match cfg.task {
        Task::Synth => task_synth(cfg, &mut out)?,
        Task::Learn => task_learn(cfg, &mut out)?,
        Task::Interpolate => {
            let data = out.time("load", || load_dataset(&cfg.data, cfg.seed))?;
            task_interpolate(cfg, &data, &cfg.learner, cfg.missing.ratio, "", &mut out)?;
        }
        Task::Partition => task_partition(cfg, &mut out)?,
        Task::LocalApprox => task_local(cfg, &mut out)?,
        Task::VerifyBounds => task_bounds(cfg, &mut out)?,
        Task::Sweep => task_sweep(cfg, &mut out)?,
    }
    let w = out.create("metrics.csv")?;
    lio::write_metrics(w, &out.metrics)?;
    let manifest = Manifest {
        task: cfg.task,
        seed: cfg.seed,
        config: cfg.clone(),
        versions: vec![
            ("lsgp".into(), lsgp::VERSION.into()),
            ("lsgp-cli".into(), env!("CARGO_PKG_VERSION").into()),
        ],
        files: {
            let mut f = out.files.clone();
            f.push("manifest.json".into());
            f.push("run_report.json".into());
            f
        },
    };
    out.json("manifest.json", &manifest)?;
    let report = RunReport {
        task: cfg.task,
        timings: out.timings.clone(),
        metrics: out.metrics.len(),
        seconds: start.elapsed().as_secs_f64(),
    };
    out.json("run_report.json", &report)?;
    Ok(report)
}

fn covariance_of(data: &Dataset) -> Result<DMatrix<f64>> {
    Ok(sample_covariance(&data.realizations)?.matrix)
}

fn write_model(out: &mut Outputs, name: &str, model: &LsgpModel) -> Result<()> {
    out.json(name, &model.to_document())
}

fn task_synth(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let data = out.time("generate", || load_dataset(&cfg.data, cfg.seed))?;
    let w = out.create("edges.csv")?;
    lio::write_edges(w, &data.graph)?;
    let w = out.create("signals.csv")?;
    lio::write_signals(w, &data.realizations)?;
    if let Some(m) = &data.truth {
        write_model(out, "model.json", m)?;
        if let Some(p) = &data.truth_partition {
            let params = extract_params(m, p)?;
            out.metric("delta_over_mu", params.localization_ratio(), String::new());
            out.metric("epsilon", params.epsilon, String::new());
        }
    }
    if let Some(p) = &data.truth_partition {
        let w = out.create("partition.csv")?;
        lio::write_partition(w, p)?;
    }
    out.metric("vertices", data.graph.n_vertices() as f64, String::new());
    out.metric("edges", data.graph.edges().len() as f64, String::new());
    out.metric("realizations", data.realizations.len() as f64, String::new());
    for &outside in &cfg.synth.outside_grid {
        let spec = BlockSpec { outside, ..cfg.data.block.clone() };
        let (graph, truth, model) = synthetic_block_lsgp(&spec)?;
        let ratio = extract_params(&model, &truth)?.localization_ratio();
        let c = model.model_covariance();
        let d = covariance_edge_distance(&c, &graph, cfg.partition.theta)?;
        let p = out.time("partition", || Ok(partition_graph(&graph, &d, spec.blocks)?))?;
        let nmi = normalized_mutual_information(&p, &truth)?;
        out.metric("NMI", nmi, format!("outside={outside};delta_over_mu={ratio}"));
    }
    Ok(())
}

fn learn_report(out: &mut Outputs, data: &Dataset, c_hat: &DMatrix<f64>, cfg: &LearnerConfig, prefix: &str) -> Result<LsgpModel> {
    let fit = out.time("learn", || Ok(learn_lsgp(&data.graph, c_hat, cfg)?))?;
    let d = &fit.diagnostics;
    let tag = |s: &str| match (prefix.is_empty(), s.is_empty()) {
        (true, _) => s.to_string(),
        (false, true) => prefix.to_string(),
        (false, false) => format!("{prefix};{s}"),
    };
    out.metric("objective", d.refine_objective[1], tag(&format!("outer_iterations={}", d.outer_iterations)));
    out.metric("gamma_residual", d.gamma_residual, tag(""));
    out.metric("b_residual", d.b_residual, tag(""));
    if let Some(truth) = &data.truth {
        let c = truth.model_covariance();
        out.report(&lsgp::eval::covariance_discrepancy_report(&c, c_hat)?, &tag("estimate=sample"));
        out.report(&lsgp::eval::covariance_discrepancy_report(&c, &fit.model.model_covariance())?, &tag("estimate=lsgp"));
    }
    Ok(fit.model)
}

fn task_learn(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let data = out.time("load", || load_dataset(&cfg.data, cfg.seed))?;
    let c_hat = covariance_of(&data)?;
    let model = learn_report(out, &data, &c_hat, &cfg.learner, "")?;
    write_model(out, "model.json", &model)?;
    Ok(())
}

fn targets(original: &RealizationSet, hidden: &[Vec<usize>], results: &[Interpolation]) -> (Vec<f64>, Vec<f64>) {
    let mut z = Vec::new();
    let mut z_hat = Vec::new();
    for (l, res) in results.iter().enumerate() {
        for (a, &v) in res.missing.iter().enumerate() {
            if hidden[l].binary_search(&v).is_ok() {
                if let Some(x) = original.value(l, v) {
                    z.push(x);
                    z_hat.push(res.estimates[a]);
                }
            }
        }
    }
    (z, z_hat)
}

fn task_interpolate(
    cfg: &ExperimentConfig,
    data: &Dataset,
    learner: &LearnerConfig,
    ratio: f64,
    prefix: &str,
    out: &mut Outputs,
) -> Result<()> {
    let (observed, hidden) = inject_missingness(&data.realizations, cfg.missing.pattern, ratio, cfg.seed.wrapping_add(1), &data.graph)?;
    let tag = |s: String| if prefix.is_empty() { s } else { format!("{prefix};{s}") };
    let hidden_count: usize = hidden.iter().map(Vec::len).sum();
    if hidden_count == 0 {
        out.metric("targets", 0.0, tag("no targets".into()));
        return Ok(());
    }
    let c_hat = sample_covariance(&observed)?.matrix;
    for &method in &cfg.interpolate.methods {
        let cov = match method {
            CovarianceSource::Sample => c_hat.clone(),
            CovarianceSource::Lsgp => {
                let sub = Dataset { realizations: observed.clone(), ..data.clone() };
                learn_report(out, &sub, &c_hat, learner, &tag(format!("method={}", method.name())))?.model_covariance()
            }
            CovarianceSource::Local => {
                let fit = out.time("local", || Ok(local_approximation(&data.graph, &c_hat, cfg.partition.k, cfg.partition.theta, learner)?))?;
                fit.composite_covariance()
            }
            CovarianceSource::True => match &data.truth {
                Some(m) => m.model_covariance(),
                None => return Err(CliError::Config("interpolate method \"true\" needs generated data".into())),
            },
        };
        let results = out.time("interpolate", || Ok(interpolate_all(&cov, &observed)?))?;
        if prefix.is_empty() {
            let w = out.create(&format!("interpolation_{}.csv", method.name()))?;
            lio::write_interpolations(w, &results)?;
        }
        let (z, z_hat) = targets(&data.realizations, &hidden, &results);
        if z.is_empty() {
            out.metric("targets", 0.0, tag(format!("method={};no targets", method.name())));
            continue;
        }
        let m = error_metrics(&DVector::from_vec(z), &DVector::from_vec(z_hat))?;
        for r in m.reports() {
            out.report(&r, &tag(format!("method={}", method.name())));
        }
    }
    Ok(())
}

fn task_partition(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let data = out.time("load", || load_dataset(&cfg.data, cfg.seed))?;
    let c = if cfg.partition.use_true_covariance {
        data.truth
            .as_ref()
            .ok_or_else(|| CliError::Config("partition.use_true_covariance needs generated data".into()))?
            .model_covariance()
    } else {
        covariance_of(&data)?
    };
    let d = covariance_edge_distance(&c, &data.graph, cfg.partition.theta)?;
    out.metric("theta", d.theta, String::new());
    let p = out.time("partition", || Ok(partition_graph(&data.graph, &d, cfg.partition.k)?))?;
    let w = out.create("partition.csv")?;
    lio::write_partition(w, &p)?;
    for (label, part) in p.parts().iter().enumerate() {
        out.metric("part_size", part.len() as f64, format!("label={label}"));
    }
    let truth = match &cfg.partition.truth {
        Some(path) => Some(lio::read_partition(open(path)?)?),
        None => data.truth_partition.clone(),
    };
    if let Some(t) = truth {
        out.metric("NMI", normalized_mutual_information(&p, &t)?, String::new());
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct CompositeDocument {
    labels: Vec<usize>,
    models: Vec<ModelDocument>,
}

fn task_local(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let data = out.time("load", || load_dataset(&cfg.data, cfg.seed))?;
    let c_hat = covariance_of(&data)?;
    let fit = out.time("local", || Ok(local_approximation(&data.graph, &c_hat, cfg.partition.k, cfg.partition.theta, &cfg.learner)?))?;
    let w = out.create("partition.csv")?;
    lio::write_partition(w, &fit.partition)?;
    let doc = CompositeDocument {
        labels: fit.partition.labels().to_vec(),
        models: fit.models().map(LsgpModel::to_document).collect(),
    };
    out.json("local_models.json", &doc)?;
    let composite = fit.composite_covariance();
    out.metric("CD", covariance_discrepancy(&c_hat, &composite)?, "reference=sample;estimate=local".into());
    if let Some(truth) = &data.truth {
        let c = truth.model_covariance();
        out.metric("CD", covariance_discrepancy(&c, &composite)?, "reference=true;estimate=local".into());
    }
    if let Some(t) = &data.truth_partition {
        out.metric("NMI", normalized_mutual_information(&fit.partition, t)?, String::new());
    }
    Ok(())
}

#[derive(Debug, Default)]
struct Tally {
    checked: usize,
    violations: usize,
    worst_margin: f64,
}

impl Tally {
    fn add(&mut self, violation_margin: f64, holds: bool) {
        if self.checked == 0 || violation_margin > self.worst_margin {
            self.worst_margin = violation_margin;
        }
        self.checked += 1;
        if !holds {
            self.violations += 1;
        }
    }
}

fn task_bounds(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let mut cases: Vec<(LsgpModel, Partition)> = Vec::new();
    if let (Some(model_path), Some(part_path)) = (&cfg.bounds.model, &cfg.bounds.partition) {
        let graph = load_graph(&cfg.data)?;
        let doc: ModelDocument = serde_json::from_reader(open(model_path)?)?;
        let model = LsgpModel::from_document(graph, &doc)?;
        let partition = lio::read_partition(open(part_path)?)?;
        cases.push((model, partition));
    } else {
        for i in 0..cfg.bounds.random_models {
            let spec = LocalizedSpec { seed: cfg.seed.wrapping_add(i as u64), ..cfg.bounds.localized.clone() };
            cases.push(random_localized_model(&spec)?);
        }
    }
    let (mut t2, mut t3, mut t4) = (Tally::default(), Tally::default(), Tally::default());
    let mut skipped4 = 0usize;
    for (model, p) in &cases {
        let c = check_elementwise_deviation_all(model, p)?;
        t2.add(c.lhs - c.rhs, c.holds);
        let c = check_cross_covariance(model, p)?;
        t3.add(c.lhs - c.rhs, c.holds);
        match check_within_covariance(model, p) {
            Ok((c, _)) => t4.add(c.rhs - c.lhs, c.holds),
            Err(lsgp::Error::NotBandLimited(_)) => skipped4 += 1,
            Err(e) => return Err(e.into()),
        }
    }
    for (name, t) in [("elementwise_deviation", &t2), ("cross_covariance", &t3), ("within_covariance", &t4)] {
        out.metric(
            &format!("{name}_violations"),
            t.violations as f64,
            format!("checked={};worst_margin={}", t.checked, t.worst_margin),
        );
    }
    if skipped4 > 0 {
        out.metric("within_covariance_skipped", skipped4 as f64, "kernels not band-limited".into());
    }
    Ok(())
}

fn task_sweep(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let Some(sweep) = &cfg.sweep else {
        return Err(CliError::Config("task sweep needs a [sweep] table".into()));
    };
    let data = out.time("load", || load_dataset(&cfg.data, cfg.seed))?;
    for &v in &sweep.values {
        let mut learner = cfg.learner.clone();
        let mut ratio = cfg.missing.ratio;
        let name = match sweep.parameter {
            SweepParameter::Mu1 => {
                learner.mu1 = v;
                "mu1"
            }
            SweepParameter::Mu2 => {
                learner.mu2 = v;
                "mu2"
            }
            SweepParameter::Mu3 => {
                learner.mu3 = v;
                "mu3"
            }
            SweepParameter::K => {
                learner.k = v as usize;
                "k"
            }
            SweepParameter::Q => {
                learner.q = v as usize;
                "q"
            }
            SweepParameter::Ratio => {
                ratio = v;
                "ratio"
            }
        };
        learner.validate().map_err(|e| CliError::Config(format!("sweep value {v}: {e}")))?;
        if !(0.0..1.0).contains(&ratio) {
            return Err(CliError::Config(format!("sweep ratio {ratio} outside [0, 1)")));
        }
        task_interpolate(cfg, &data, &learner, ratio, &format!("{name}={v}"), out)?;
    }
    Ok(())
}
