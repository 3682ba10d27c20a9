//! Repeated stratified cross validation over datasets, oversamplers and
//! classifiers.
//!
//! Every training fold is normalised on its own rows, oversampled up to class
//! balance and used to fit the classifier; the test fold is only ever
//! transformed and predicted.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::ClassifierSpec;
use crate::data::{load_manifest, stratified_folds, Dataset, DatasetEntry, FoldPlan, Normalizer};
use crate::error::{Error, Result};
use crate::metrics::{ComparisonCube, ConfusionMatrix};
use crate::points::Points;
use crate::rng::derive_seed;
use crate::samplers::{
    augmented_training_set, default_sample_count, select_scheme, Method, SchemeChoice, SchemePreset,
    SyntheticBatch, BENCHMARK_SIGMA, RECOMMENDED_SIGMA,
};
use crate::synth::Sigma;

/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 42;

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn five() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetSource {
    /// Path to a JSON list of [`DatasetEntry`]; entry paths are relative to it.
    Manifest(PathBuf),
    Entries(Vec<DatasetEntry>),
}

/// Noise level applied to every ProWRAS and LoRAS oversampler.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaProfile {
    #[default]
    Benchmark,
    Recommended,
    /// Keep whatever each oversampler specifies.
    PerMethod,
}

impl SigmaProfile {
    pub fn sigma(self) -> Option<f64> {
        match self {
            SigmaProfile::Benchmark => Some(BENCHMARK_SIGMA),
            SigmaProfile::Recommended => Some(RECOMMENDED_SIGMA),
            SigmaProfile::PerMethod => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OversamplerSpec {
    /// Column name in results; defaults to the method name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub method: Method,
}

impl OversamplerSpec {
    pub fn new(method: Method) -> Self {
        Self { name: None, method }
    }

    pub fn named(name: impl Into<String>, method: Method) -> Self {
        Self {
            name: Some(name.into()),
            method,
        }
    }

    pub fn label(&self) -> &str {
        self.name.as_deref().unwrap_or(self.method.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassifierSource {
    /// Predictions produced outside the harness, see [`import_external_predictions`].
    External { predictions: PathBuf },
    Builtin(ClassifierSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSlot {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub source: ClassifierSource,
}

impl ClassifierSlot {
    pub fn builtin(spec: ClassifierSpec) -> Self {
        Self {
            name: None,
            source: ClassifierSource::Builtin(spec),
        }
    }

    pub fn external(name: impl Into<String>, predictions: impl Into<PathBuf>) -> Self {
        Self {
            name: Some(name.into()),
            source: ClassifierSource::External {
                predictions: predictions.into(),
            },
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn label(&self) -> &str {
        match (&self.name, &self.source) {
            (Some(n), _) => n,
            (None, ClassifierSource::Builtin(spec)) => spec.name(),
            (None, ClassifierSource::External { .. }) => "external",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub datasets: DatasetSource,
    pub oversamplers: Vec<OversamplerSpec>,
    pub classifiers: Vec<ClassifierSlot>,
    #[serde(default = "five")]
    pub repeats: usize,
    #[serde(default = "five")]
    pub folds: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub sigma_profile: SigmaProfile,
    /// Directory relative paths are resolved against; set by [`Self::from_file`].
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl BenchmarkConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.oversamplers.is_empty() || self.classifiers.is_empty() {
            return Err(Error::InvalidParameter("need at least one oversampler and one classifier".into()));
        }
        if self.repeats == 0 || self.folds < 2 {
            return Err(Error::InvalidParameter(format!(
                "need repeats >= 1 and folds >= 2, got {}x{}",
                self.repeats, self.folds
            )));
        }
        unique(self.oversamplers.iter().map(OversamplerSpec::label), "oversampler")?;
        unique(self.classifiers.iter().map(ClassifierSlot::label), "classifier")
    }

    pub fn load_datasets(&self) -> Result<Vec<NamedDataset>> {
        let (entries, base) = match &self.datasets {
            DatasetSource::Manifest(p) => {
                let p = self.resolve(p);
                (load_manifest(&p)?, p.parent().map(Path::to_path_buf))
            }
            DatasetSource::Entries(e) => (e.clone(), self.base_dir.clone()),
        };
        if entries.is_empty() {
            return Err(Error::InvalidParameter("dataset list is empty".into()));
        }
        entries
            .iter()
            .map(|e| {
                Ok(NamedDataset {
                    name: e.name.clone(),
                    data: e.load(base.as_deref())?,
                })
            })
            .collect()
    }

    /// The oversampler's method with the sigma profile applied.
    pub fn effective_method(&self, spec: &OversamplerSpec) -> Method {
        let mut method = spec.method.clone();
        if let Some(s) = self.sigma_profile.sigma() {
            match &mut method {
                Method::Prowras { params, .. } => params.sigma = Sigma::Scalar(s),
                Method::Loras { params } => params.sigma = Sigma::Scalar(s),
                _ => {}
            }
        }
        method
    }
}

fn unique<'a>(labels: impl Iterator<Item = &'a str>, what: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for l in labels {
        if !seen.insert(l) {
            return Err(Error::InvalidParameter(format!("duplicate {what} name {l:?}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedDataset {
    pub name: String,
    pub data: Dataset,
}

impl NamedDataset {
    pub fn new(name: impl Into<String>, data: Dataset) -> Self {
        Self {
            name: name.into(),
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    F1,
    Kappa,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f1" => Ok(Metric::F1),
            "kappa" | "κ" => Ok(Metric::Kappa),
            other => Err(Error::InvalidParameter(format!("unknown metric {other:?}"))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::F1 => "f1",
            Metric::Kappa => "kappa",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub repeat: usize,
    pub fold: usize,
    pub f1: f64,
    pub kappa: f64,
    /// Synthetic points added to the training fold.
    pub n_synthetic: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub oversampler: String,
    pub scheme_used: Option<String>,
    pub classifier: String,
    /// `None` when the row failed.
    pub mean_f1: Option<f64>,
    pub mean_kappa: Option<f64>,
    pub per_fold_scores: Vec<FoldScore>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ResultRow {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    pub fn mean(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::F1 => self.mean_f1,
            Metric::Kappa => self.mean_kappa,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    /// One JSON object per row, newline terminated.
    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for row in &self.rows {
            out.push_str(&serde_json::to_string(row)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Accepts JSON lines, a JSON array of rows or a `{"rows": [...]}` object.
    pub fn from_json(text: &str) -> Result<Self> {
        let trimmed = text.trim_start();
        if trimmed.starts_with('[') {
            return Ok(Self {
                rows: serde_json::from_str(trimmed)?,
            });
        }
        if let Ok(table) = serde_json::from_str::<ResultsTable>(trimmed) {
            return Ok(table);
        }
        let rows = trimmed
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { rows })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn write_json_lines(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json_lines()?).map_err(|e| Error::io(path, e))
    }

    /// One line per (classifier, dataset) with an `F1/kappa` cell per
    /// oversampler.
    pub fn to_csv_table(&self, decimals: usize) -> Result<String> {
        let oversamplers = first_seen(self.rows.iter().map(|r| r.oversampler.as_str()));
        let keys = first_seen(self.rows.iter().map(|r| (r.classifier.as_str(), r.dataset.as_str())));
        let lookup: HashMap<_, _> = self
            .rows
            .iter()
            .map(|r| ((r.classifier.as_str(), r.dataset.as_str(), r.oversampler.as_str()), r))
            .collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["classifier", "dataset"];
        header.extend(oversamplers.iter().copied());
        w.write_record(&header)?;
        for (c, d) in keys {
            let mut record = vec![c.to_string(), d.to_string()];
            for o in &oversamplers {
                record.push(match lookup.get(&(c, d, *o)) {
                    Some(ResultRow {
                        mean_f1: Some(f1),
                        mean_kappa: Some(k),
                        ..
                    }) => format!("{f1:.decimals$}/{k:.decimals$}"),
                    Some(_) => "failed".into(),
                    None => String::new(),
                });
            }
            w.write_record(&record)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Incomplete(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv_table(&self, path: impl AsRef<Path>, decimals: usize) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv_table(decimals)?).map_err(|e| Error::io(path, e))
    }

    /// Mean scores of every successful row as a classifier × dataset ×
    /// oversampler cube. Failed or missing rows make the cube incomplete.
    pub fn cube(&self, metric: Metric) -> Result<ComparisonCube> {
        if let Some(r) = self.rows.iter().find(|r| r.failed()) {
            return Err(Error::Incomplete(format!(
                "row ({}, {}, {}) failed: {}",
                r.dataset,
                r.oversampler,
                r.classifier,
                r.error.as_deref().unwrap_or_default()
            )));
        }
        ComparisonCube::from_entries(self.rows.iter().map(|r| {
            (
                r.classifier.as_str(),
                r.dataset.as_str(),
                r.oversampler.as_str(),
                r.mean(metric).unwrap_or(f64::NAN),
            )
        }))
    }

    /// Restriction to one classifier.
    pub fn for_classifier(&self, classifier: &str) -> Self {
        Self {
            rows: self.rows.iter().filter(|r| r.classifier == classifier).cloned().collect(),
        }
    }
}

fn first_seen<T: PartialEq + Copy>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out = Vec::new();
    for item in items {
        if !out.contains(&item) {
            out.push(item);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseCounts {
    pub oversamplers: Vec<String>,
    pub n_datasets: usize,
    /// `counts[i][j]`: datasets on which oversampler `i` scores at least as
    /// well as oversampler `j`.
    pub counts: Vec<Vec<usize>>,
}

pub fn pairwise_counts(rt: &ResultsTable, classifier: &str, metric: Metric) -> Result<PairwiseCounts> {
    let sub = rt.for_classifier(classifier);
    if sub.rows.is_empty() {
        return Err(Error::Incomplete(format!("no rows for classifier {classifier:?}")));
    }
    let cube = sub.cube(metric)?;
    let (n_d, n_o) = (cube.datasets.len(), cube.oversamplers.len());
    let counts = (0..n_o)
        .map(|i| {
            (0..n_o)
                .map(|j| (0..n_d).filter(|&d| cube.score(0, d, i) >= cube.score(0, d, j)).count())
                .collect()
        })
        .collect();
    Ok(PairwiseCounts {
        oversamplers: cube.oversamplers.clone(),
        n_datasets: n_d,
        counts,
    })
}

#[derive(Debug, Deserialize)]
struct PredictionRecord {
    dataset: String,
    #[serde(default)]
    oversampler: Option<String>,
    repeat: usize,
    fold: usize,
    sample_index: usize,
    predicted_label: String,
}

type PredictionKey = (String, Option<String>, usize, usize);

/// Test-fold predictions made outside the harness, keyed by dataset,
/// optional oversampler, repeat and fold. Rows without an oversampler apply
/// to every oversampler.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalPredictions {
    source: PathBuf,
    predictions: HashMap<PredictionKey, BTreeMap<usize, String>>,
}

/// Reads a CSV with columns `dataset, repeat, fold, sample_index,
/// predicted_label` and optionally `oversampler`. `sample_index` is the
/// 0-based row of the dataset file.
pub fn import_external_predictions(path: impl AsRef<Path>) -> Result<ExternalPredictions> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut out = ExternalPredictions {
        source: path.to_path_buf(),
        predictions: HashMap::new(),
    };
    for record in reader.deserialize() {
        let r: PredictionRecord = record?;
        let oversampler = r.oversampler.filter(|o| !o.is_empty());
        let slot = out.predictions.entry((r.dataset, oversampler, r.repeat, r.fold)).or_default();
        if slot.insert(r.sample_index, r.predicted_label).is_some() {
            warn!("{}: duplicate prediction for sample {}, keeping the last", path.display(), r.sample_index);
        }
    }
    Ok(out)
}

impl ExternalPredictions {
    fn lookup(&self, dataset: &str, oversampler: &str, repeat: usize, fold: usize) -> Option<&BTreeMap<usize, String>> {
        self.predictions
            .get(&(dataset.to_string(), Some(oversampler.to_string()), repeat, fold))
            .or_else(|| self.predictions.get(&(dataset.to_string(), None, repeat, fold)))
    }

    /// Fails with every (repeat, fold) whose test samples are not all covered.
    pub fn check_coverage(&self, dataset: &str, oversampler: &str, plan: &FoldPlan) -> Result<()> {
        let missing: Vec<String> = plan
            .splits()
            .filter(|&(r, f)| match self.lookup(dataset, oversampler, r, f) {
                Some(p) => plan.test_indices(r, f).iter().any(|i| !p.contains_key(i)),
                None => true,
            })
            .map(|(r, f)| format!("(repeat {r}, fold {f})"))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Incomplete(format!(
                "{} lacks predictions for dataset {dataset:?}, oversampler {oversampler:?}: {}",
                self.source.display(),
                missing.join(", ")
            )))
        }
    }

    /// Minority flags for `test_indices`, in order.
    pub fn predict(
        &self,
        d: &Dataset,
        dataset: &str,
        oversampler: &str,
        repeat: usize,
        fold: usize,
        test_indices: &[usize],
    ) -> Result<Vec<bool>> {
        let missing = || {
            Error::Incomplete(format!(
                "{} lacks predictions for dataset {dataset:?} (repeat {repeat}, fold {fold})",
                self.source.display()
            ))
        };
        let preds = self.lookup(dataset, oversampler, repeat, fold).ok_or_else(missing)?;
        let extra = preds.len() - test_indices.iter().filter(|i| preds.contains_key(i)).count();
        if extra > 0 {
            warn!(
                "{}: ignoring {extra} predictions outside the test fold of {dataset:?} (repeat {repeat}, fold {fold})",
                self.source.display()
            );
        }
        test_indices
            .iter()
            .map(|i| preds.get(i).map(|label| label == d.minority_label()).ok_or_else(missing))
            .collect()
    }
}

/// Everything produced for one training fold before a classifier sees it.
#[derive(Debug, Clone)]
pub struct PreparedFold {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub normalizer: Normalizer,
    /// Normalised training fold.
    pub train: Dataset,
    /// Test fold under the training normaliser.
    pub test: Dataset,
    /// Synthetic points in normalised units; parents index `train`.
    pub synthetic: SyntheticBatch,
}

impl PreparedFold {
    pub fn augmented(&self) -> Result<(Points, Vec<bool>)> {
        augmented_training_set(&self.train, &self.synthetic)
    }
}

/// Splits, normalises and oversamples one fold.
pub fn prepare_fold(
    d: &Dataset,
    plan: &FoldPlan,
    repeat: usize,
    fold: usize,
    method: &Method,
    scheme: Option<SchemePreset>,
    seed: u64,
) -> Result<PreparedFold> {
    let train_indices = plan.train_indices(repeat, fold);
    let test_indices = plan.test_indices(repeat, fold);
    let train = d.subset(&train_indices)?;
    let normalizer = Normalizer::fit(train.features())?;
    let train = normalizer.apply(&train);
    let test = normalizer.apply(&d.subset(&test_indices)?);
    let synthetic = method.oversample(&train, default_sample_count(&train), scheme, seed)?;
    Ok(PreparedFold {
        train_indices,
        test_indices,
        normalizer,
        train,
        test,
        synthetic,
    })
}

/// What an observer sees of each evaluated fold.
#[derive(Debug, Clone)]
pub struct FoldObservation<'a> {
    pub dataset: &'a str,
    pub oversampler: &'a str,
    pub classifier: &'a str,
    pub repeat: usize,
    pub fold: usize,
    pub train_indices: &'a [usize],
    pub test_indices: &'a [usize],
    /// Synthetic points mapped back to the dataset's original units.
    pub synthetic: Points,
    /// Dataset rows each synthetic point was derived from.
    pub parents: Vec<Vec<usize>>,
}

pub type FoldObserver<'a> = &'a (dyn Fn(&FoldObservation<'_>) + Sync);

/// Seed of the fold-level task for one configuration.
pub fn task_seed(seed: u64, dataset: &str, oversampler: &str, classifier: &str, repeat: usize, fold: usize) -> u64 {
    derive_seed(seed, &[dataset, oversampler, classifier], &[repeat as u64, fold as u64])
}

fn plan_for(cfg: &BenchmarkConfig, nd: &NamedDataset) -> Result<FoldPlan> {
    stratified_folds(
        &nd.data,
        cfg.repeats,
        cfg.folds,
        derive_seed(cfg.seed, &[nd.name.as_str(), "folds"], &[]),
    )
}

/// Resolves the preset an oversampler uses on a dataset for a classifier.
/// Automatic selection runs once on the full dataset; external classifiers
/// are stood in for by the default kNN.
pub fn resolve_scheme(
    cfg: &BenchmarkConfig,
    nd: &NamedDataset,
    oversampler: &OversamplerSpec,
    classifier: &ClassifierSlot,
) -> Result<Option<SchemePreset>> {
    let method = cfg.effective_method(oversampler);
    let Method::Prowras { params, scheme } = &method else {
        return Ok(None);
    };
    match scheme {
        SchemeChoice::Preset(p) => Ok(Some(*p)),
        SchemeChoice::Custom => Ok(None),
        SchemeChoice::Auto => {
            let spec = match &classifier.source {
                ClassifierSource::Builtin(spec) => spec.clone(),
                ClassifierSource::External { .. } => {
                    warn!(
                        "selecting a scheme for external classifier {:?} with the default kNN",
                        classifier.label()
                    );
                    ClassifierSpec::knn()
                }
            };
            let seed = derive_seed(
                cfg.seed,
                &[nd.name.as_str(), oversampler.label(), classifier.label(), "scheme"],
                &[],
            );
            let selection = select_scheme(&nd.data, &spec, params, seed)?;
            info!(
                "{}: {} with {} uses scheme {}",
                nd.name,
                oversampler.label(),
                classifier.label(),
                selection.scheme
            );
            Ok(Some(selection.scheme))
        }
    }
}

fn scheme_label(method: &Method, scheme: Option<SchemePreset>) -> Option<String> {
    match (method, scheme) {
        (Method::Prowras { .. }, Some(s)) => Some(s.to_string()),
        (Method::Prowras { .. }, None) => Some("custom".into()),
        _ => None,
    }
}

struct RowPlan {
    d: usize,
    o: usize,
    c: usize,
    scheme: Result<Option<SchemePreset>>,
}

/// Loads the configured datasets and runs the benchmark.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<ResultsTable> {
    let datasets = cfg.load_datasets()?;
    run_benchmark_on(cfg, &datasets, None)
}

/// Runs the benchmark on already loaded datasets. Configuration rows come out
/// in dataset, oversampler, classifier order regardless of scheduling.
pub fn run_benchmark_on(
    cfg: &BenchmarkConfig,
    datasets: &[NamedDataset],
    observer: Option<FoldObserver<'_>>,
) -> Result<ResultsTable> {
    cfg.validate()?;
    if datasets.is_empty() {
        return Err(Error::InvalidParameter("dataset list is empty".into()));
    }
    unique(datasets.iter().map(|d| d.name.as_str()), "dataset")?;
    let plans = datasets.iter().map(|nd| plan_for(cfg, nd)).collect::<Result<Vec<_>>>()?;
    let methods: Vec<Method> = cfg.oversamplers.iter().map(|o| cfg.effective_method(o)).collect();
    let externals: Vec<Option<std::result::Result<ExternalPredictions, String>>> = cfg
        .classifiers
        .iter()
        .map(|c| match &c.source {
            ClassifierSource::External { predictions } => {
                Some(import_external_predictions(cfg.resolve(predictions)).map_err(|e| e.to_string()))
            }
            ClassifierSource::Builtin(_) => None,
        })
        .collect();

    let mut combos = Vec::new();
    for d in 0..datasets.len() {
        for o in 0..cfg.oversamplers.len() {
            for c in 0..cfg.classifiers.len() {
                combos.push((d, o, c));
            }
        }
    }
    let rows: Vec<RowPlan> = combos
        .into_par_iter()
        .map(|(d, o, c)| {
            let nd = &datasets[d];
            let mut scheme = resolve_scheme(cfg, nd, &cfg.oversamplers[o], &cfg.classifiers[c]);
            if let (Ok(_), Some(ext)) = (&scheme, &externals[c]) {
                let check = ext
                    .as_ref()
                    .map_err(|e| Error::InvalidDataset(e.clone()))
                    .and_then(|p| p.check_coverage(&nd.name, cfg.oversamplers[o].label(), &plans[d]));
                if let Err(e) = check {
                    scheme = Err(e);
                }
            }
            RowPlan { d, o, c, scheme }
        })
        .collect();

    let tasks: Vec<(usize, usize, usize)> = rows
        .iter()
        .enumerate()
        .filter(|(_, row)| row.scheme.is_ok())
        .flat_map(|(i, row)| plans[row.d].splits().map(move |(r, f)| (i, r, f)))
        .collect();
    let results: Vec<Result<FoldScore>> = tasks
        .par_iter()
        .map(|&(i, r, f)| {
            let row = &rows[i];
            let scheme = *row.scheme.as_ref().expect("only resolved rows are scheduled");
            let nd = &datasets[row.d];
            let (o_label, c_label) = (cfg.oversamplers[row.o].label(), cfg.classifiers[row.c].label());
            let seed = task_seed(cfg.seed, &nd.name, o_label, c_label, r, f);
            let prepared = prepare_fold(&nd.data, &plans[row.d], r, f, &methods[row.o], scheme, seed)?;
            if let Some(observe) = observer {
                observe(&observation(nd, o_label, c_label, r, f, &prepared));
            }
            let predicted = match (&cfg.classifiers[row.c].source, &externals[row.c]) {
                (ClassifierSource::External { .. }, Some(Ok(ext))) => {
                    ext.predict(&nd.data, &nd.name, o_label, r, f, &prepared.test_indices)?
                }
                (ClassifierSource::Builtin(spec), _) => {
                    let (x, y) = prepared.augmented()?;
                    spec.fit(&x, &y)?.predict(prepared.test.features())?
                }
                _ => unreachable!("unreadable prediction files fail the row up front"),
            };
            let cm = ConfusionMatrix::from_predictions(&prepared.test.minority_mask(), &predicted);
            debug!("{} {o_label} {c_label} r{r} f{f}: {cm:?}", nd.name);
            Ok(FoldScore {
                repeat: r,
                fold: f,
                f1: cm.f1(),
                kappa: cm.kappa(),
                n_synthetic: prepared.synthetic.len(),
            })
        })
        .collect();

    let mut per_row: Vec<Vec<(usize, usize, Result<FoldScore>)>> = rows.iter().map(|_| Vec::new()).collect();
    for (&(i, r, f), res) in tasks.iter().zip(results) {
        per_row[i].push((r, f, res));
    }
    let table_rows = rows
        .into_iter()
        .zip(per_row)
        .map(|(row, folds)| {
            let nd = &datasets[row.d];
            let method = &methods[row.o];
            let mut out = ResultRow {
                dataset: nd.name.clone(),
                oversampler: cfg.oversamplers[row.o].label().to_string(),
                scheme_used: None,
                classifier: cfg.classifiers[row.c].label().to_string(),
                mean_f1: None,
                mean_kappa: None,
                per_fold_scores: Vec::new(),
                seed: cfg.seed,
                error: None,
            };
            match row.scheme {
                Err(e) => out.error = Some(e.to_string()),
                Ok(scheme) => {
                    out.scheme_used = scheme_label(method, scheme);
                    for (r, f, res) in folds {
                        match res {
                            Ok(score) => out.per_fold_scores.push(score),
                            Err(e) => {
                                if out.error.is_none() {
                                    out.error = Some(format!("repeat {r}, fold {f}: {e}"));
                                }
                            }
                        }
                    }
                    if out.error.is_none() {
                        let n = out.per_fold_scores.len() as f64;
                        out.mean_f1 = Some(out.per_fold_scores.iter().map(|s| s.f1).sum::<f64>() / n);
                        out.mean_kappa = Some(out.per_fold_scores.iter().map(|s| s.kappa).sum::<f64>() / n);
                    }
                }
            }
            if let Some(e) = &out.error {
                warn!("{} / {} / {} failed: {e}", out.dataset, out.oversampler, out.classifier);
            }
            out
        })
        .collect();
    Ok(ResultsTable { rows: table_rows })
}

fn observation<'a>(
    nd: &'a NamedDataset,
    oversampler: &'a str,
    classifier: &'a str,
    repeat: usize,
    fold: usize,
    prepared: &'a PreparedFold,
) -> FoldObservation<'a> {
    FoldObservation {
        dataset: &nd.name,
        oversampler,
        classifier,
        repeat,
        fold,
        train_indices: &prepared.train_indices,
        test_indices: &prepared.test_indices,
        synthetic: prepared.normalizer.inverse(&prepared.synthetic.points),
        parents: prepared
            .synthetic
            .origins
            .iter()
            .map(|o| o.parents.iter().map(|&p| prepared.train_indices[p]).collect())
            .collect(),
    }
}

/// Writes the oversampled training folds and the test folds a classifier
/// named `classifier` would see, for producing external predictions.
///
/// Files are named `<dataset>.<oversampler>.r<repeat>f<fold>.{train,test}.csv`.
/// Both hold normalised features and the label; test files start with the
/// `sample_index` column expected back in the predictions file.
pub fn export_folds(
    cfg: &BenchmarkConfig,
    datasets: &[NamedDataset],
    classifier: &ClassifierSlot,
    dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for nd in datasets {
        let plan = plan_for(cfg, nd)?;
        let header = nd.data.header();
        for spec in &cfg.oversamplers {
            let method = cfg.effective_method(spec);
            let scheme = resolve_scheme(cfg, nd, spec, classifier)?;
            for (r, f) in plan.splits() {
                let seed = task_seed(cfg.seed, &nd.name, spec.label(), classifier.label(), r, f);
                let p = prepare_fold(&nd.data, &plan, r, f, &method, scheme, seed)?;
                let stem = format!("{}.{}.r{r}f{f}", nd.name, spec.label());
                let (x, y) = p.augmented()?;
                let labels = |m: bool| if m { nd.data.minority_label() } else { nd.data.majority_label() };

                let path = dir.join(format!("{stem}.train.csv"));
                let mut w = fold_writer(&path)?;
                w.write_record(&header)?;
                for (row, &m) in x.rows().zip(&y) {
                    w.write_record(row.iter().map(f64::to_string).chain([labels(m).to_string()]))?;
                }
                w.flush().map_err(|e| Error::io(&path, e))?;
                written.push(path);

                let path = dir.join(format!("{stem}.test.csv"));
                let mut w = fold_writer(&path)?;
                w.write_record(std::iter::once("sample_index").chain(header.iter().map(String::as_str)))?;
                for (k, &i) in p.test_indices.iter().enumerate() {
                    let row = p.test.features().row(k);
                    w.write_record(
                        std::iter::once(i.to_string())
                            .chain(row.iter().map(f64::to_string))
                            .chain([labels(nd.data.is_minority(i)).to_string()]),
                    )?;
                }
                w.flush().map_err(|e| Error::io(&path, e))?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

fn fold_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

/// Renders pairwise counts as a small text matrix.
pub fn format_pairwise(p: &PairwiseCounts) -> String {
    let width = p.oversamplers.iter().map(String::len).max().unwrap_or(0).max(4);
    let mut out = format!("{:width$}", "");
    for o in &p.oversamplers {
        let _ = write!(out, " {o:>width$}");
    }
    out.push('\n');
    for (o, row) in p.oversamplers.iter().zip(&p.counts) {
        let _ = write!(out, "{o:width$}");
        for c in row {
            let _ = write!(out, " {c:>width$}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::ProwrasParams;

    fn blobs(n_maj: usize, n_min: usize, seed: u64) -> Dataset {
        use rand::Rng;
        let mut rng = crate::rng::seeded(seed);
        let mut rows = Vec::new();
        let mut mask = Vec::new();
        for i in 0..n_maj + n_min {
            let minority = i >= n_maj;
            let c = if minority { 1.5 } else { 0.0 };
            rows.push([c + rng.random::<f64>(), c + rng.random::<f64>()]);
            mask.push(minority);
        }
        Dataset::from_mask(Points::from_rows(&rows).unwrap(), &mask).unwrap()
    }

    fn config(oversamplers: Vec<OversamplerSpec>) -> BenchmarkConfig {
        BenchmarkConfig {
            datasets: DatasetSource::Entries(Vec::new()),
            oversamplers,
            classifiers: vec![ClassifierSlot::builtin(ClassifierSpec::knn())],
            repeats: 2,
            folds: 3,
            seed: 11,
            sigma_profile: SigmaProfile::Benchmark,
            base_dir: None,
        }
    }

    #[test]
    fn baseline_twice_is_identical() {
        let data = vec![NamedDataset::new("blobs", blobs(40, 9, 1))];
        let cfg = config(vec![
            OversamplerSpec::named("a", Method::Baseline),
            OversamplerSpec::named("b", Method::Baseline),
        ]);
        let rt = run_benchmark_on(&cfg, &data, None).unwrap();
        assert_eq!(rt.rows.len(), 2);
        assert_eq!(rt.rows[0].per_fold_scores, rt.rows[1].per_fold_scores);
        assert_eq!(rt.rows[0].per_fold_scores.len(), 6);
    }

    #[test]
    fn zero_sample_oversampler_matches_baseline() {
        let data = vec![NamedDataset::new("blobs", blobs(40, 9, 2))];
        let cfg = config(vec![OversamplerSpec::new(Method::Baseline)]);
        let rt = run_benchmark_on(&cfg, &data, None).unwrap();
        let plan = plan_for(&cfg, &data[0]).unwrap();
        let smote = Method::Smote { k: 3 };
        for s in &rt.rows[0].per_fold_scores {
            let mut p = prepare_fold(&data[0].data, &plan, s.repeat, s.fold, &smote, None, 1).unwrap();
            p.synthetic = smote.oversample(&p.train, 0, None, 1).unwrap();
            let (x, y) = p.augmented().unwrap();
            let predicted = ClassifierSpec::knn().fit(&x, &y).unwrap().predict(p.test.features()).unwrap();
            let cm = ConfusionMatrix::from_predictions(&p.test.minority_mask(), &predicted);
            assert_eq!((cm.f1(), cm.kappa()), (s.f1, s.kappa));
        }
    }

    #[test]
    fn overshoot_is_bounded() {
        let data = vec![NamedDataset::new("blobs", blobs(50, 12, 3))];
        let cfg = config(vec![OversamplerSpec::new(Method::Prowras {
            params: ProwrasParams::default(),
            scheme: SchemeChoice::Preset(SchemePreset::Hlv),
        })]);
        let plan = plan_for(&cfg, &data[0]).unwrap();
        let rt = run_benchmark_on(&cfg, &data, None).unwrap();
        for s in &rt.rows[0].per_fold_scores {
            let train = plan.train_indices(s.repeat, s.fold);
            let n_min = train.iter().filter(|&&i| data[0].data.is_minority(i)).count();
            let n_maj = train.len() - n_min;
            assert!(n_min + s.n_synthetic >= n_maj);
            assert!(n_min + s.n_synthetic <= n_maj + 5);
        }
        assert_eq!(rt.rows[0].scheme_used.as_deref(), Some("hlv"));
    }

    #[test]
    fn failed_row_does_not_stop_the_run() {
        let data = vec![NamedDataset::new("blobs", blobs(40, 9, 4))];
        let cfg = config(vec![
            OversamplerSpec::new(Method::Smote { k: 50 }),
            OversamplerSpec::new(Method::Baseline),
        ]);
        let rt = run_benchmark_on(&cfg, &data, None).unwrap();
        assert!(rt.rows[0].failed());
        assert_eq!(rt.rows[0].mean_f1, None);
        assert!(!rt.rows[1].failed());
        assert!(rt.to_csv_table(3).unwrap().contains("failed"));
    }

    #[test]
    fn too_many_folds_rejected() {
        let data = vec![NamedDataset::new("blobs", blobs(40, 2, 5))];
        let cfg = config(vec![OversamplerSpec::new(Method::Baseline)]);
        assert!(run_benchmark_on(&cfg, &data, None).is_err());
    }

    fn row(d: &str, o: &str, f1: f64) -> ResultRow {
        ResultRow {
            dataset: d.into(),
            oversampler: o.into(),
            scheme_used: None,
            classifier: "knn".into(),
            mean_f1: Some(f1),
            mean_kappa: Some(f1 / 2.0),
            per_fold_scores: Vec::new(),
            seed: 0,
            error: None,
        }
    }

    #[test]
    fn pairwise_hand_count() {
        let rt = ResultsTable {
            rows: vec![
                row("d1", "a", 0.5),
                row("d1", "b", 0.4),
                row("d1", "c", 0.5),
                row("d2", "a", 0.1),
                row("d2", "b", 0.3),
                row("d2", "c", 0.2),
                row("d3", "a", 0.9),
                row("d3", "b", 0.8),
                row("d3", "c", 0.7),
            ],
        };
        let p = pairwise_counts(&rt, "knn", Metric::F1).unwrap();
        assert_eq!(p.counts, vec![vec![3, 2, 2], vec![1, 3, 2], vec![2, 1, 3]]);
        assert!(pairwise_counts(&rt, "logreg", Metric::F1).is_err());
    }

    #[test]
    fn json_lines_round_trip() {
        let rt = ResultsTable {
            rows: vec![row("d1", "a", 0.25), row("d1", "b", 1.0 / 3.0)],
        };
        let text = rt.to_json_lines().unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(ResultsTable::from_json(&text).unwrap(), rt);
        let array = serde_json::to_string(&rt.rows).unwrap();
        assert_eq!(ResultsTable::from_json(&array).unwrap(), rt);
        assert_eq!(
            rt.to_csv_table(3).unwrap(),
            "classifier,dataset,a,b\nknn,d1,0.250/0.125,0.333/0.167\n"
        );
    }

    #[test]
    fn config_from_json() {
        let cfg: BenchmarkConfig = serde_json::from_str(
            r#"{
                "datasets": "manifest.json",
                "oversamplers": [
                    {"method": "baseline"},
                    {"name": "prowras-llv", "method": "prowras", "scheme": "llv"},
                    {"method": "smote", "k": 3}
                ],
                "classifiers": [
                    {"kind": "knn", "k": 3},
                    {"name": "gb", "predictions": "gb.csv"}
                ]
            }"#,
        )
        .unwrap();
        assert_eq!((cfg.repeats, cfg.folds, cfg.seed), (5, 5, DEFAULT_SEED));
        assert_eq!(cfg.sigma_profile, SigmaProfile::Benchmark);
        let labels: Vec<_> = cfg.oversamplers.iter().map(OversamplerSpec::label).collect();
        assert_eq!(labels, ["baseline", "prowras-llv", "smote"]);
        assert_eq!(cfg.classifiers[0].source, ClassifierSource::Builtin(ClassifierSpec::Knn { k: 3 }));
        assert_eq!(cfg.classifiers[1].label(), "gb");
        match cfg.effective_method(&cfg.oversamplers[1]) {
            Method::Prowras { params, .. } => assert_eq!(params.sigma, Sigma::Scalar(BENCHMARK_SIGMA)),
            m => panic!("unexpected {m:?}"),
        }
        cfg.validate().unwrap();
    }

    #[test]
    fn duplicate_names_rejected() {
        let cfg = config(vec![
            OversamplerSpec::new(Method::Baseline),
            OversamplerSpec::new(Method::Baseline),
        ]);
        assert!(cfg.validate().is_err());
    }
}
