//! Batch audits and decision-grid export.
//!
//! An [`ExperimentConfig`] (JSON, unknown keys rejected) names a dataset, a
//! split, a classifier and a list of generators. [`Experiment::prepare`]
//! loads and trains; [`Experiment::audit`] explains every test instance
//! with every generator and scores each counterfactual. Per-instance seeds
//! are derived from the master seed and the instance index, and results are
//! gathered in index order, so the output does not depend on the number of
//! workers.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::classifiers::{
    accuracy, train_knn, train_rbf_svm, ClassScores, Classifier, Knn, KnnConfig, RbfSvm, RbfSvmConfig,
};
use crate::dataset::{
    correctly_predicted_subset, load_csv, train_test_split, ClassLabel, Dataset, DatasetSplit, DistanceMetric,
    FeatureVector, MinMaxScaler,
};
use crate::diagnostics::{
    connectedness, default_epsilon, proximity, stability, ConnectednessResult, EpsilonPolicy, ProximityScore,
    StabilityScore,
};
use crate::error::{Error, Result};
use crate::generators::{CounterfactualResult, Generator, GsConfig, HclsConfig, WachterConfig};

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    pub generators: Vec<GeneratorSpec>,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub master_seed: u64,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub label_column: String,
    /// Feature columns to keep, in order. All non-label columns if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<String>>,
    /// Min-max scale features, fitting on the training split only.
    #[serde(default)]
    pub min_max_scale: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_fraction: 0.7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierConfig {
    RbfSvm(RbfSvmConfig),
    Knn(KnnConfig),
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig::RbfSvm(RbfSvmConfig::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    GrowingSpheres,
    Hcls,
    Wachter,
}

/// A generator kind plus overrides of its data-scaled defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    #[serde(flatten)]
    pub overrides: Map<String, Value>,
}

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind) -> Self {
        GeneratorSpec {
            kind,
            overrides: Map::new(),
        }
    }

    /// Builds the generator, taking unspecified parameters from defaults
    /// scaled to a feature space of the given diameter.
    pub fn resolve(&self, diameter: f64) -> Result<Generator> {
        if self.overrides.contains_key("seed") {
            return Err(Error::Config(
                "generator seeds are derived from master_seed; remove \"seed\"".into(),
            ));
        }
        fn merge<T: Serialize + serde::de::DeserializeOwned>(base: T, over: &Map<String, Value>) -> Result<T> {
            let mut v = serde_json::to_value(base)?;
            let obj = v.as_object_mut().expect("configs are objects");
            for (k, val) in over {
                obj.insert(k.clone(), val.clone());
            }
            serde_json::from_value(v).map_err(|e| Error::Config(format!("generator config: {e}")))
        }
        Ok(match self.kind {
            GeneratorKind::GrowingSpheres => {
                Generator::GrowingSpheres(merge(GsConfig::for_diameter(diameter), &self.overrides)?)
            }
            GeneratorKind::Hcls => Generator::Hcls(merge(HclsConfig::for_diameter(diameter), &self.overrides)?),
            GeneratorKind::Wachter => {
                Generator::Wachter(merge(WachterConfig::for_diameter(diameter), &self.overrides)?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Connectedness eps: `"auto_per_class"` or `{"fixed": value}`.
    pub epsilon: EpsilonPolicy,
    pub metric: DistanceMetric,
    /// Stability is computed only when present.
    pub stability: Option<StabilityConfig>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            epsilon: EpsilonPolicy::AutoPerClass,
            metric: DistanceMetric::L2,
            stability: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Neighborhood {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    /// Ball radius; defaults to the training set's `default_epsilon`.
    pub epsilon: Option<f64>,
    pub neighborhood: Neighborhood,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative dataset and output paths are taken
    /// relative to the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.dataset.path.is_relative() {
            cfg.dataset.path = base.join(&cfg.dataset.path);
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        if !cfg.dataset.path.is_file() {
            return Err(Error::Config(format!("dataset {} does not exist", cfg.dataset.path.display())));
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.generators.is_empty() {
            return Err(Error::Config("at least one generator is required".into()));
        }
        let f = self.split.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("train_fraction must be in (0, 1), got {f}")));
        }
        for g in &self.generators {
            g.resolve(1.0)?;
        }
        if let Some(StabilityConfig { epsilon: Some(e), .. }) = self.diagnostics.stability {
            if !(e.is_finite() && e > 0.0) {
                return Err(Error::Config(format!("stability epsilon must be > 0, got {e}")));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Prepared experiment

/// A trained model behind the [`Classifier`] interface.
#[derive(Debug, Clone)]
pub enum TrainedModel {
    RbfSvm(RbfSvm),
    Knn(Knn),
}

impl Classifier for TrainedModel {
    fn n_features(&self) -> usize {
        match self {
            TrainedModel::RbfSvm(m) => m.n_features(),
            TrainedModel::Knn(m) => m.n_features(),
        }
    }

    fn n_classes(&self) -> usize {
        match self {
            TrainedModel::RbfSvm(m) => m.n_classes(),
            TrainedModel::Knn(m) => m.n_classes(),
        }
    }

    fn class_scores(&self, x: &[f64]) -> ClassScores {
        match self {
            TrainedModel::RbfSvm(m) => m.class_scores(x),
            TrainedModel::Knn(m) => m.class_scores(x),
        }
    }
}

pub fn train_classifier(train: &Dataset, cfg: &ClassifierConfig) -> Result<TrainedModel> {
    Ok(match cfg {
        ClassifierConfig::RbfSvm(c) => TrainedModel::RbfSvm(train_rbf_svm(train, c)?),
        ClassifierConfig::Knn(c) => TrainedModel::Knn(train_knn(train, c)?),
    })
}

/// Deterministic 64-bit seed from the master seed, a purpose tag and
/// integer coordinates (first 8 bytes of a SHA-256 digest).
pub fn derive_seed(master: u64, tag: &str, parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(tag.as_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

pub struct Experiment {
    pub config: ExperimentConfig,
    pub data: Dataset,
    pub split: DatasetSplit,
    pub model: TrainedModel,
    pub generators: Vec<Generator>,
    /// X^l for every class l, from the training split.
    pub correct_by_class: Vec<Dataset>,
    /// Connectedness eps per class; `None` when the policy cannot resolve
    /// it (fewer than two instances in X^l).
    pub eps_by_class: Vec<Option<f64>>,
    pub stability_eps: Option<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

impl Experiment {
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let mut data = load_csv(&config.dataset.path, &config.dataset.label_column)?;
        if let Some(features) = &config.dataset.features {
            data = data.select_features(features)?;
        }
        if data.distinct_labels() < 2 {
            return Err(Error::TooFewClasses {
                required: 2,
                found: data.distinct_labels(),
            });
        }
        let mut split = train_test_split(&data, config.split.train_fraction, config.split.seed)?;
        if config.dataset.min_max_scale {
            let scaler = MinMaxScaler::fit(&split.train);
            split.train = scaler.transform(&split.train);
            split.test = scaler.transform(&split.test);
            data = scaler.transform(&data);
        }
        let model = train_classifier(&split.train, &config.classifier)?;
        let diameter = split.train.diameter();
        let generators = config
            .generators
            .iter()
            .map(|g| g.resolve(diameter))
            .collect::<Result<Vec<_>>>()?;
        let metric = config.diagnostics.metric;
        let correct_by_class: Vec<Dataset> = (0..data.n_classes())
            .map(|l| correctly_predicted_subset(&model, &split.train, ClassLabel(l)))
            .collect();
        let eps_by_class = correct_by_class
            .iter()
            .map(|xl| config.diagnostics.epsilon.resolve(xl, metric).ok())
            .collect();
        let stability_eps = match config.diagnostics.stability {
            Some(StabilityConfig { epsilon: Some(e), .. }) => Some(e),
            Some(StabilityConfig { epsilon: None, .. }) => Some(default_epsilon(&split.train, DistanceMetric::L2)?),
            None => None,
        };
        let train_accuracy = accuracy(&model, &split.train)?;
        let test_accuracy = accuracy(&model, &split.test)?;
        Ok(Experiment {
            config: config.clone(),
            data,
            split,
            model,
            generators,
            correct_by_class,
            eps_by_class,
            stability_eps,
            train_accuracy,
            test_accuracy,
        })
    }

    /// Audits every test instance on a pool of `workers` threads.
    pub fn audit(&self, workers: usize) -> Result<AuditReport> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        let rows: Vec<AuditRow> = pool.install(|| {
            (0..self.split.test.len())
                .into_par_iter()
                .map(|i| self.audit_instance(i))
                .collect()
        });
        let aggregate = AggregateReport::from_rows(self, &rows);
        Ok(AuditReport { rows, aggregate })
    }

    fn audit_instance(&self, test_pos: usize) -> AuditRow {
        let inst = &self.split.test.instances()[test_pos];
        let instance = self.split.test_indices[test_pos];
        let x = &inst.features;
        let predicted = self.model.predict(x);
        let outcomes = self
            .generators
            .iter()
            .enumerate()
            .map(|(gi, g)| {
                let seed = derive_seed(self.config.master_seed, "instance", &[instance as u64, gi as u64]);
                self.audit_with(x, gi, &g.with_seed(seed))
            })
            .collect();
        AuditRow {
            instance,
            source: x.clone(),
            true_label: inst.label,
            predicted_label: predicted,
            outcomes,
        }
    }

    fn audit_with(&self, x: &FeatureVector, gi: usize, g: &Generator) -> GeneratorOutcome {
        let metric = self.config.diagnostics.metric;
        let result = match g.generate(x, &self.model) {
            Ok(r) => r,
            Err(e) => return GeneratorOutcome::failed(g, e),
        };
        // revalidate by re-prediction
        if self.model.predict(&result.counterfactual) == self.model.predict(x) {
            return GeneratorOutcome::failed(g, Error::NoCounterfactual { radius: result.distance_l2 });
        }
        let l = result.counterfactual_label.0;
        let xl = &self.correct_by_class[l];
        let proximity = proximity(&result.counterfactual, xl, metric).ok();
        let connectedness = if xl.is_empty() {
            // no instance of X^l to be connected to
            Some(ConnectednessResult {
                connected: false,
                eps: self.eps_by_class[l].unwrap_or(f64::NAN),
                cluster_id: None,
                anchor_index: None,
            })
        } else {
            self.eps_by_class[l].and_then(|eps| connectedness(&result.counterfactual, xl, eps, metric).ok())
        };
        let stability = self.stability_eps.map(|eps| {
            let hood = match self.config.diagnostics.stability.unwrap_or_default().neighborhood {
                Neighborhood::Train => &self.split.train,
                Neighborhood::Test => &self.split.test,
            };
            let explain = |p: &FeatureVector| -> Result<FeatureVector> {
                if p == x {
                    return Ok(result.counterfactual.clone());
                }
                let bits: Vec<u64> = std::iter::once(gi as u64).chain(p.iter().map(|v| v.to_bits())).collect();
                let seed = derive_seed(self.config.master_seed, "stability", &bits);
                Ok(g.with_seed(seed).generate(p, &self.model)?.counterfactual)
            };
            stability(x, hood, eps, explain).map_err(|e| e.to_string())
        });
        GeneratorOutcome {
            generator: g.name().to_owned(),
            config_hash: g.config_hash(),
            result: Some(result),
            error: None,
            proximity,
            connectedness,
            stability,
        }
    }

    /// Regular grid of predicted labels over the dataset's bounding box,
    /// padded by `padding` times each feature's range.
    pub fn decision_grid(&self, resolution: usize, padding: f64) -> Result<DecisionGrid> {
        let bounds: Vec<(f64, f64)> = self
            .data
            .bounds()
            .into_iter()
            .map(|(lo, hi)| {
                let pad = (hi - lo) * padding;
                (lo - pad, hi + pad)
            })
            .collect();
        export_decision_grid(&self.model, &bounds, resolution)
    }

    pub fn run_meta(&self, workers: usize) -> Value {
        let generators: Vec<Value> = self
            .generators
            .iter()
            .map(|g| {
                serde_json::json!({
                    "name": g.name(),
                    "config_hash": g.config_hash(),
                    "config": g,
                })
            })
            .collect();
        let gamma = match &self.model {
            TrainedModel::RbfSvm(m) => Some(m.gamma),
            TrainedModel::Knn(_) => None,
        };
        serde_json::json!({
            "tool": "cf-audit",
            "version": env!("CARGO_PKG_VERSION"),
            "master_seed": self.config.master_seed,
            "workers": workers,
            "config": self.config,
            "resolved_generators": generators,
            "svm_gamma": gamma,
            "n_train": self.split.train.len(),
            "n_test": self.split.test.len(),
            "train_indices": self.split.train_indices,
            "test_indices": self.split.test_indices,
        })
    }
}

// ---------------------------------------------------------------------------
// Results

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorOutcome {
    pub generator: String,
    pub config_hash: String,
    /// `None` when the generator failed.
    pub result: Option<CounterfactualResult>,
    pub error: Option<String>,
    pub proximity: Option<ProximityScore>,
    pub connectedness: Option<ConnectednessResult>,
    /// `None` when stability is disabled; `Some(Err)` when undefined.
    pub stability: Option<std::result::Result<StabilityScore, String>>,
}

impl GeneratorOutcome {
    fn failed(g: &Generator, e: Error) -> Self {
        GeneratorOutcome {
            generator: g.name().to_owned(),
            config_hash: g.config_hash(),
            result: None,
            error: Some(e.to_string()),
            proximity: None,
            connectedness: None,
            stability: None,
        }
    }
}

/// Everything audited for one test instance.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRow {
    /// Index in the full dataset.
    pub instance: usize,
    pub source: FeatureVector,
    pub true_label: ClassLabel,
    pub predicted_label: ClassLabel,
    /// One entry per configured generator, in config order.
    pub outcomes: Vec<GeneratorOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    /// `None` for the overflow bin.
    pub hi: Option<f64>,
    pub count: usize,
}

/// Bin width of the proximity histogram; bins cover [0, 5) plus overflow.
pub const PROXIMITY_BIN_WIDTH: f64 = 0.5;
pub const PROXIMITY_BIN_LIMIT: f64 = 5.0;
/// Upper end of the "plausible" proximity band.
pub const PROXIMITY_BAND: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximitySummary {
    pub n: usize,
    pub bins: Vec<HistogramBin>,
    /// Fraction of scores in [0, 3].
    pub fraction_in_band: Option<f64>,
    pub median: Option<f64>,
    pub max: Option<f64>,
}

impl ProximitySummary {
    pub fn from_values(values: &[f64]) -> Self {
        let n_bins = (PROXIMITY_BIN_LIMIT / PROXIMITY_BIN_WIDTH).round() as usize;
        let mut bins: Vec<HistogramBin> = (0..n_bins)
            .map(|b| HistogramBin {
                lo: b as f64 * PROXIMITY_BIN_WIDTH,
                hi: Some((b + 1) as f64 * PROXIMITY_BIN_WIDTH),
                count: 0,
            })
            .collect();
        bins.push(HistogramBin {
            lo: PROXIMITY_BIN_LIMIT,
            hi: None,
            count: 0,
        });
        for &v in values {
            let b = ((v / PROXIMITY_BIN_WIDTH).floor() as usize).min(n_bins);
            bins[b].count += 1;
        }
        let in_band = values.iter().filter(|&&v| v <= PROXIMITY_BAND).count();
        ProximitySummary {
            n: values.len(),
            bins,
            fraction_in_band: fraction(in_band, values.len()),
            median: median(values),
            max: values.iter().copied().reduce(f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySummary {
    pub n: usize,
    pub n_undefined: usize,
    pub min: Option<f64>,
    pub median: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorAggregate {
    pub generator: String,
    pub config_hash: String,
    pub n_instances: usize,
    pub n_success: usize,
    pub success_rate: f64,
    pub proximity: ProximitySummary,
    /// Successful rows with a connectedness verdict.
    pub n_connectedness: usize,
    pub n_non_connected: usize,
    pub non_connected_fraction: Option<f64>,
    pub stability: Option<StabilitySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub n_train: usize,
    pub n_test: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub generators: Vec<GeneratorAggregate>,
}

pub(crate) fn fraction(k: usize, n: usize) -> Option<f64> {
    (n > 0).then(|| k as f64 / n as f64)
}

pub(crate) fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

impl GeneratorAggregate {
    pub fn from_outcomes<'a>(outcomes: impl Iterator<Item = &'a GeneratorOutcome>, stability_enabled: bool) -> Self {
        let outcomes: Vec<&GeneratorOutcome> = outcomes.collect();
        let first = outcomes.first().copied();
        let ok: Vec<&GeneratorOutcome> = outcomes.iter().copied().filter(|o| o.result.is_some()).collect();
        let prox: Vec<f64> = ok.iter().filter_map(|o| o.proximity.map(|p| p.value)).collect();
        let conn: Vec<bool> = ok.iter().filter_map(|o| o.connectedness.map(|c| c.connected)).collect();
        let n_non_connected = conn.iter().filter(|&&c| !c).count();
        let stability = stability_enabled.then(|| {
            let vals: Vec<f64> = ok
                .iter()
                .filter_map(|o| o.stability.as_ref().and_then(|s| s.as_ref().ok()).map(|s| s.value))
                .collect();
            StabilitySummary {
                n: vals.len(),
                n_undefined: ok.len() - vals.len(),
                min: vals.iter().copied().reduce(f64::min),
                median: median(&vals),
                max: vals.iter().copied().reduce(f64::max),
            }
        });
        GeneratorAggregate {
            generator: first.map(|o| o.generator.clone()).unwrap_or_default(),
            config_hash: first.map(|o| o.config_hash.clone()).unwrap_or_default(),
            n_instances: outcomes.len(),
            n_success: ok.len(),
            success_rate: fraction(ok.len(), outcomes.len()).unwrap_or(0.0),
            proximity: ProximitySummary::from_values(&prox),
            n_connectedness: conn.len(),
            n_non_connected,
            non_connected_fraction: fraction(n_non_connected, conn.len()),
            stability,
        }
    }
}

impl AggregateReport {
    fn from_rows(exp: &Experiment, rows: &[AuditRow]) -> Self {
        let stability_enabled = exp.stability_eps.is_some();
        let generators = (0..exp.generators.len())
            .map(|gi| GeneratorAggregate::from_outcomes(rows.iter().map(|r| &r.outcomes[gi]), stability_enabled))
            .collect();
        AggregateReport {
            n_train: exp.split.train.len(),
            n_test: exp.split.test.len(),
            train_accuracy: exp.train_accuracy,
            test_accuracy: exp.test_accuracy,
            generators,
        }
    }
}

pub struct AuditReport {
    pub rows: Vec<AuditRow>,
    pub aggregate: AggregateReport,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl AuditReport {
    /// Column names of `audit_rows.csv` for the given feature names.
    pub fn csv_header(feature_names: &[String]) -> Vec<String> {
        let mut h: Vec<String> = ["instance", "generator", "config_hash", "true_label", "source_label", "status", "error"]
            .into_iter()
            .map(String::from)
            .collect();
        h.extend(feature_names.iter().map(|f| format!("x_{f}")));
        h.extend(feature_names.iter().map(|f| format!("cf_{f}")));
        h.extend(
            [
                "cf_label",
                "distance_l2",
                "evaluations",
                "proximity",
                "a0_index",
                "connected",
                "eps",
                "stability",
                "stability_witness",
            ]
            .into_iter()
            .map(String::from),
        );
        h
    }

    /// One line per instance per generator. Failed rows leave every
    /// counterfactual and diagnostic column empty.
    pub fn rows_csv(&self, data: &Dataset) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::csv_header(data.feature_names()))?;
        let name = |l: ClassLabel| data.class_name(l).unwrap_or("?").to_owned();
        for row in &self.rows {
            for o in &row.outcomes {
                let mut rec = vec![
                    row.instance.to_string(),
                    o.generator.clone(),
                    o.config_hash.clone(),
                    name(row.true_label),
                    name(row.predicted_label),
                    if o.result.is_some() { "ok" } else { "failed" }.to_owned(),
                    o.error.clone().unwrap_or_default(),
                ];
                rec.extend(row.source.iter().map(|v| v.to_string()));
                match &o.result {
                    Some(r) => {
                        rec.extend(r.counterfactual.iter().map(|v| v.to_string()));
                        rec.push(name(r.counterfactual_label));
                        rec.push(r.distance_l2.to_string());
                        rec.push(r.evaluations.to_string());
                    }
                    None => {
                        rec.extend(std::iter::repeat_n(String::new(), row.source.dim() + 3));
                    }
                }
                rec.push(opt(o.proximity.map(|p| p.value)));
                rec.push(o.proximity.map(|p| p.a0_index.to_string()).unwrap_or_default());
                rec.push(o.connectedness.map(|c| (c.connected as u8).to_string()).unwrap_or_default());
                rec.push(opt(o.connectedness.map(|c| c.eps).filter(|e| e.is_finite())));
                match &o.stability {
                    Some(Ok(s)) => {
                        rec.push(s.value.to_string());
                        rec.push(s.witness_index.to_string());
                    }
                    _ => rec.extend([String::new(), String::new()]),
                }
                w.write_record(&rec)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
    }

    pub fn aggregate_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.aggregate)? + "\n")
    }

    /// Writes `audit_rows.csv`, `aggregate.json` and `run_meta.json`, plus
    /// `model.json` when the classifier is an SVM.
    pub fn write(&self, exp: &Experiment, dir: &Path, workers: usize) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(p, e))
        };
        write("audit_rows.csv", self.rows_csv(&exp.data)?)?;
        write("aggregate.json", self.aggregate_json()?)?;
        write("run_meta.json", serde_json::to_string_pretty(&exp.run_meta(workers))? + "\n")?;
        if let TrainedModel::RbfSvm(m) = &exp.model {
            write("model.json", m.to_json()?)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Decision grid

/// Margin added around the data's bounding box by grid exports, as a
/// fraction of each feature's range.
pub const DEFAULT_GRID_PADDING: f64 = 0.1;

/// Predicted labels on a `resolution x resolution` grid. Cell `(i1, i2)` is
/// stored at `i2 * resolution + i1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionGrid {
    pub resolution: usize,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub labels: Vec<ClassLabel>,
}

/// A 4-connected set of grid cells sharing one label.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRegion {
    pub label: ClassLabel,
    pub cells: Vec<usize>,
}

pub fn export_decision_grid(f: &dyn Classifier, bounds: &[(f64, f64)], resolution: usize) -> Result<DecisionGrid> {
    if f.n_features() != 2 || bounds.len() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: f.n_features().max(bounds.len()),
        });
    }
    if resolution < 2 {
        return Err(Error::InvalidParameter("grid resolution must be >= 2".into()));
    }
    let axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
        (0..resolution)
            .map(|i| lo + (hi - lo) * i as f64 / (resolution - 1) as f64)
            .collect()
    };
    let x1 = axis(bounds[0]);
    let x2 = axis(bounds[1]);
    let labels = x2
        .par_iter()
        .flat_map_iter(|&b| x1.iter().map(move |&a| f.predict(&[a, b])))
        .collect();
    Ok(DecisionGrid {
        resolution,
        x1,
        x2,
        labels,
    })
}

impl DecisionGrid {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x1,x2,label\n");
        for (i2, b) in self.x2.iter().enumerate() {
            for (i1, a) in self.x1.iter().enumerate() {
                let _ = writeln!(s, "{a},{b},{}", self.labels[i2 * self.resolution + i1].0);
            }
        }
        s
    }

    pub fn regions(&self) -> Vec<GridRegion> {
        let r = self.resolution;
        let mut seen = vec![false; r * r];
        let mut out = Vec::new();
        for start in 0..r * r {
            if seen[start] {
                continue;
            }
            let label = self.labels[start];
            let mut cells = Vec::new();
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(c) = queue.pop_front() {
                cells.push(c);
                let (i1, i2) = (c % r, c / r);
                let mut nb = Vec::with_capacity(4);
                if i1 > 0 {
                    nb.push(c - 1);
                }
                if i1 + 1 < r {
                    nb.push(c + 1);
                }
                if i2 > 0 {
                    nb.push(c - r);
                }
                if i2 + 1 < r {
                    nb.push(c + r);
                }
                for n in nb {
                    if !seen[n] && self.labels[n] == label {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
            out.push(GridRegion { label, cells });
        }
        out
    }

    /// Grid cell nearest to a point.
    pub fn cell_of(&self, p: &[f64]) -> usize {
        let snap = |axis: &[f64], v: f64| -> usize {
            let step = axis[1] - axis[0];
            (((v - axis[0]) / step).round().max(0.0) as usize).min(axis.len() - 1)
        };
        snap(&self.x2, p[1]) * self.resolution + snap(&self.x1, p[0])
    }

    /// Regions containing none of the given points.
    pub fn empty_regions<'a>(&self, points: impl Iterator<Item = &'a FeatureVector>) -> Vec<GridRegion> {
        let regions = self.regions();
        let mut region_of = vec![0; self.labels.len()];
        for (ri, reg) in regions.iter().enumerate() {
            for &c in &reg.cells {
                region_of[c] = ri;
            }
        }
        let mut occupied = vec![false; regions.len()];
        for p in points {
            occupied[region_of[self.cell_of(p)]] = true;
        }
        regions
            .into_iter()
            .zip(occupied)
            .filter(|(_, o)| !o)
            .map(|(r, _)| r)
            .collect()
    }
}
