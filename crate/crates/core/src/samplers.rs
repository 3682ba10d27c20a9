//! Top-level oversamplers.
//!
//! [`prowras`] is the proximity-weighted multi-scheme oversampler. SMOTE,
//! ProWSyn, LoRAS and the star-topology polynomial-fit SMOTE are provided as
//! baselines. Every sampler is deterministic given its seed.

use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifiers::ClassifierSpec;
use crate::data::{selection_split, Dataset, Normalizer};
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::neighbors::NeighborIndex;
use crate::partition::{partition_minority, PartitionParams};
use crate::points::Points;
use crate::rng;
use crate::synth::{combine_neighborhood, generate_points, GenerationParams, SampleRecord, ShadowConfig, Sigma};

/// Noise level recommended for general use.
pub const RECOMMENDED_SIGMA: f64 = 1e-3;
/// Noise level used by the benchmark profile.
pub const BENCHMARK_SIGMA: f64 = 1e-6;
/// Neighbourhood size that makes the global schemes global on every
/// benchmark dataset (all minority classes are smaller).
pub const GLOBAL_NEB_CONV: usize = 1000;
pub const LOCAL_NEB_CONV: usize = 5;

/// The four ProWRAS oversampling schemes: {high, low} variance crossed with
/// {global, local} neighbourhoods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemePreset {
    Hgv,
    Lgv,
    Hlv,
    Llv,
}

impl SchemePreset {
    /// Preset order, also the tie-break order of scheme selection.
    pub const ALL: [SchemePreset; 4] = [Self::Hgv, Self::Lgv, Self::Hlv, Self::Llv];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Hgv => "hgv",
            Self::Lgv => "lgv",
            Self::Hlv => "hlv",
            Self::Llv => "llv",
        }
    }
}

impl fmt::Display for SchemePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hgv" => Ok(Self::Hgv),
            "lgv" => Ok(Self::Lgv),
            "hlv" => Ok(Self::Hlv),
            "llv" => Ok(Self::Llv),
            other => Err(Error::InvalidParameter(format!("unknown scheme {other:?}"))),
        }
    }
}

/// `(max_conv, neb_conv)` for a preset.
pub fn scheme_params(scheme: SchemePreset, n_feats: usize, minority_size: usize) -> (usize, usize) {
    let global = GLOBAL_NEB_CONV.max(minority_size);
    match scheme {
        SchemePreset::Hgv => (2, global),
        SchemePreset::Lgv => (n_feats, global),
        SchemePreset::Hlv => (2, LOCAL_NEB_CONV),
        SchemePreset::Llv => (n_feats, LOCAL_NEB_CONV),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProwrasParams {
    pub max_levels: usize,
    pub n_neighbours_max: usize,
    /// Total samples requested; `None` means `|majority| - |minority|`.
    pub num_samples_to_generate: Option<usize>,
    pub theta: f64,
    pub shadow: usize,
    pub sigma: Sigma,
    pub max_conv: usize,
    pub neb_conv: usize,
    /// Preset the two scheme parameters came from, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<SchemePreset>,
}

impl Default for ProwrasParams {
    fn default() -> Self {
        Self {
            max_levels: 5,
            n_neighbours_max: 5,
            num_samples_to_generate: None,
            theta: 1.0,
            shadow: 100,
            sigma: Sigma::Scalar(RECOMMENDED_SIGMA),
            max_conv: 2,
            neb_conv: GLOBAL_NEB_CONV,
            scheme: Some(SchemePreset::Hgv),
        }
    }
}

impl ProwrasParams {
    /// Copy with `max_conv`/`neb_conv` set from a preset for data with the
    /// given dimensions.
    pub fn with_scheme(&self, scheme: SchemePreset, n_feats: usize, minority_size: usize) -> Self {
        let (max_conv, neb_conv) = scheme_params(scheme, n_feats, minority_size);
        Self {
            max_conv,
            neb_conv,
            scheme: Some(scheme),
            ..self.clone()
        }
    }

    pub fn partition(&self) -> PartitionParams {
        PartitionParams {
            max_levels: self.max_levels,
            n_neighbours_max: self.n_neighbours_max,
            theta: self.theta,
        }
    }

    pub fn validate(&self, n_feats: usize) -> Result<()> {
        self.partition().validate()?;
        if self.max_conv == 0 || self.neb_conv == 0 {
            return Err(Error::InvalidParameter("max_conv and neb_conv must be at least 1".into()));
        }
        self.shadow_config().validate(n_feats)
    }

    pub fn shadow_config(&self) -> ShadowConfig {
        ShadowConfig {
            shadow: self.shadow,
            sigma: self.sigma.clone(),
        }
    }
}

/// Where a synthetic point came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointOrigin {
    /// 0-based proximity level for partition-based samplers.
    pub cluster_level: Option<usize>,
    pub scheme: Option<SchemePreset>,
    /// Dataset rows the point was derived from.
    pub parents: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBatch {
    pub points: Points,
    pub label: String,
    pub origins: Vec<PointOrigin>,
    pub seed: u64,
    /// Per-point generation records (ProWRAS only), with parents and
    /// neighbourhood anchors given as dataset rows.
    pub records: Vec<SampleRecord>,
}

impl SyntheticBatch {
    fn empty(d: &Dataset, seed: u64) -> Self {
        Self {
            points: Points::new(d.n_feats()),
            label: d.minority_label().to_string(),
            origins: Vec::new(),
            seed,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn push(&mut self, point: &[f64], origin: PointOrigin) -> Result<()> {
        self.points.push(point)?;
        self.origins.push(origin);
        Ok(())
    }
}

pub fn default_sample_count(d: &Dataset) -> usize {
    d.majority_count() - d.minority_count()
}

/// Proximity-weighted oversampling.
///
/// Cluster `i` with normalised weight `w_i` receives `ceil(N * w_i)` samples
/// built from `ceil(max_conv * w_i / w_max)`-way convex combinations, so the
/// batch may exceed `N` by at most the number of clusters.
pub fn prowras(d: &Dataset, params: &ProwrasParams, seed: u64) -> Result<SyntheticBatch> {
    params.validate(d.n_feats())?;
    let partition = partition_minority(d, &params.partition())?;
    let total = params.num_samples_to_generate.unwrap_or_else(|| default_sample_count(d));
    let weight_max = partition.max_weight();
    let gen = GenerationParams {
        neb_conv: params.neb_conv,
        shadow: params.shadow_config(),
        num_feats: d.n_feats(),
    };

    let mut batch = SyntheticBatch::empty(d, seed);
    for (level, cluster) in partition.levels.iter().enumerate() {
        let w = cluster.normalized_weight;
        let num_samples = (total as f64 * w).ceil() as usize;
        let num_convcomb = (params.max_conv as f64 * (w / weight_max)).ceil() as usize;
        let points = d.features().select(&cluster.indices);
        let mut rng = rng::stream(seed, level as u64);
        let generated = generate_points(&points, num_samples, num_convcomb, &gen, &mut rng)?;
        for (row, mut record) in generated.points.rows().zip(generated.records) {
            record.cluster = level;
            record.parents.iter_mut().for_each(|p| *p = cluster.indices[*p]);
            record.neighborhood_anchor = record.neighborhood_anchor.map(|a| cluster.indices[a]);
            batch.push(
                row,
                PointOrigin {
                    cluster_level: Some(level),
                    scheme: params.scheme,
                    parents: record.parents.clone(),
                },
            )?;
            batch.records.push(record);
        }
    }
    Ok(batch)
}

/// Outcome of classifier-specific scheme selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSelection {
    pub scheme: SchemePreset,
    /// Minority F1 per preset in [`SchemePreset::ALL`] order; `None` if the
    /// preset failed.
    pub f1: Vec<Option<f64>>,
}

/// Picks the preset with the best score; failures are skipped and ties go to
/// the earlier preset.
pub fn select_scheme_with<F>(mut score: F) -> Result<SchemeSelection>
where
    F: FnMut(SchemePreset) -> Result<f64>,
{
    let mut best: Option<(SchemePreset, f64)> = None;
    let mut f1 = Vec::with_capacity(4);
    for scheme in SchemePreset::ALL {
        match score(scheme) {
            Ok(s) => {
                f1.push(Some(s));
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((scheme, s));
                }
            }
            Err(e) => {
                warn!("scheme {scheme} failed during selection: {e}");
                f1.push(None);
            }
        }
    }
    best.map(|(scheme, _)| SchemeSelection { scheme, f1 })
        .ok_or_else(|| Error::InvalidDataset("every scheme failed during selection".into()))
}

/// Chooses a preset for `classifier` by training on a stratified 50% subset
/// and scoring minority F1 on a disjoint 20% subset.
pub fn select_scheme(
    d: &Dataset,
    classifier: &ClassifierSpec,
    base: &ProwrasParams,
    seed: u64,
) -> Result<SchemeSelection> {
    let (train, test) = selection_split(d, 0.5, 0.2, seed)?;
    let norm = Normalizer::fit(train.features())?;
    let (train, test) = (norm.apply(&train), norm.apply(&test));
    let truth = test.minority_mask();
    select_scheme_with(|scheme| {
        let mut params = base.with_scheme(scheme, train.n_feats(), train.minority_count());
        params.num_samples_to_generate = None;
        let batch = prowras(&train, &params, rng::derive_seed(seed, &[scheme.as_str()], &[]))?;
        let (x, y) = augmented_training_set(&train, &batch)?;
        let predicted = classifier.fit(&x, &y)?.predict(test.features())?;
        Ok(ConfusionMatrix::from_predictions(&truth, &predicted).f1())
    })
}

/// Training rows followed by synthetic rows, with minority targets.
pub fn augmented_training_set(d: &Dataset, batch: &SyntheticBatch) -> Result<(Points, Vec<bool>)> {
    let mut x = d.features().clone();
    x.extend(&batch.points)?;
    let mut y = d.minority_mask();
    y.extend(std::iter::repeat_n(true, batch.len()));
    Ok((x, y))
}

fn plain_origin(parents: Vec<usize>) -> PointOrigin {
    PointOrigin {
        cluster_level: None,
        scheme: None,
        parents,
    }
}

fn interpolate(a: &[f64], b: &[f64], u: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + u * (y - x)).collect()
}

/// Classic SMOTE: interpolate between a random minority point and one of its
/// `k` nearest minority neighbours.
pub fn smote(d: &Dataset, n: usize, k: usize, seed: u64) -> Result<SyntheticBatch> {
    let minority = d.minority_indices();
    if k == 0 || minority.len() < k + 1 {
        return Err(Error::InvalidParameter(format!(
            "SMOTE with k={k} needs at least {} minority samples, found {}",
            k + 1,
            minority.len()
        )));
    }
    let points = d.features().select(&minority);
    let index = NeighborIndex::new(&points)?;
    let neighbors: Vec<Vec<usize>> = (0..points.len())
        .map(|i| index.neighbors_of(i, k))
        .collect::<Result<_>>()?;
    let mut rng = rng::seeded(seed);
    let mut batch = SyntheticBatch::empty(d, seed);
    for _ in 0..n {
        let i = rng.random_range(0..points.len());
        let j = neighbors[i][rng.random_range(0..k)];
        let u: f64 = rng.random();
        let s = interpolate(points.row(i), points.row(j), u);
        batch.push(&s, plain_origin(vec![minority[i], minority[j]]))?;
    }
    Ok(batch)
}

/// ProWSyn: proximity-weighted cluster counts, two-point interpolation of
/// arbitrary cluster members. Singleton clusters repeat their point.
pub fn prowsyn(d: &Dataset, n: usize, params: &PartitionParams, seed: u64) -> Result<SyntheticBatch> {
    let partition = partition_minority(d, params)?;
    let mut batch = SyntheticBatch::empty(d, seed);
    for (level, cluster) in partition.levels.iter().enumerate() {
        let count = (n as f64 * cluster.normalized_weight).ceil() as usize;
        let mut rng = rng::stream(seed, level as u64);
        let rows = &cluster.indices;
        for _ in 0..count {
            let (s, parents) = if rows.len() == 1 {
                (d.features().row(rows[0]).to_vec(), vec![rows[0]])
            } else {
                let pair = index::sample(&mut rng, rows.len(), 2);
                let (a, b) = (rows[pair.index(0)], rows[pair.index(1)]);
                let u: f64 = rng.random();
                (interpolate(d.features().row(a), d.features().row(b), u), vec![a, b])
            };
            batch.push(
                &s,
                PointOrigin {
                    cluster_level: Some(level),
                    scheme: None,
                    parents,
                },
            )?;
        }
    }
    Ok(batch)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LorasParams {
    pub k: usize,
    pub shadow: usize,
    pub sigma: Sigma,
    /// Points per convex combination; `None` means `max(2, min(30, n_feats))`.
    pub n_aff: Option<usize>,
}

impl Default for LorasParams {
    fn default() -> Self {
        Self {
            k: 5,
            shadow: 100,
            sigma: Sigma::Scalar(RECOMMENDED_SIGMA),
            n_aff: None,
        }
    }
}

impl LorasParams {
    pub fn n_aff_for(&self, n_feats: usize) -> usize {
        self.n_aff.unwrap_or_else(|| n_feats.clamp(2, 30))
    }
}

/// LoRAS with Euclidean neighbourhoods: every sample combines `n_aff`
/// shadowsamples of an anchor's `(k + 1)`-point neighbourhood. Anchors cycle
/// through a shuffled minority order so they are used evenly.
pub fn loras(d: &Dataset, n: usize, params: &LorasParams, seed: u64) -> Result<SyntheticBatch> {
    let minority = d.minority_indices();
    let k = params.k;
    if k == 0 || minority.len() < k + 1 {
        return Err(Error::InvalidParameter(format!(
            "LoRAS with k={k} needs at least {} minority samples, found {}",
            k + 1,
            minority.len()
        )));
    }
    let cfg = ShadowConfig {
        shadow: params.shadow,
        sigma: params.sigma.clone(),
    };
    cfg.validate(d.n_feats())?;
    let n_aff = params.n_aff_for(d.n_feats());
    if n_aff < 2 || n_aff > params.shadow * (k + 1) {
        return Err(Error::InvalidParameter(format!(
            "n_aff must lie in [2, {}], got {n_aff}",
            params.shadow * (k + 1)
        )));
    }
    let points = d.features().select(&minority);
    let index = NeighborIndex::new(&points)?;
    let mut rng = rng::seeded(seed);
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(&mut rng);
    let mut hoods: Vec<Option<Vec<usize>>> = vec![None; points.len()];
    let mut batch = SyntheticBatch::empty(d, seed);
    for s in 0..n {
        let anchor = order[s % order.len()];
        if hoods[anchor].is_none() {
            let mut hood = vec![anchor];
            hood.extend(index.neighbors_of(anchor, k)?);
            hoods[anchor] = Some(hood);
        }
        let hood = hoods[anchor].as_deref().unwrap();
        let (point, record) = combine_neighborhood(&points, hood, n_aff, Some(&cfg), &mut rng)?;
        let parents = record.parents.iter().map(|&p| minority[p]).collect();
        batch.push(&point, plain_origin(parents))?;
    }
    Ok(batch)
}

/// Polynomial-fit SMOTE, star topology: points on segments between the
/// minority mean and each minority point.
pub fn pf_smote_star(d: &Dataset, n: usize, seed: u64) -> Result<SyntheticBatch> {
    let minority = d.minority_indices();
    let mean = d.features().select(&minority).mean();
    let mut rng = rng::seeded(seed);
    let mut batch = SyntheticBatch::empty(d, seed);
    for _ in 0..n {
        let i = minority[rng.random_range(0..minority.len())];
        let u: f64 = rng.random();
        let s = interpolate(&mean, d.features().row(i), u);
        batch.push(&s, plain_origin(vec![i]))?;
    }
    Ok(batch)
}

/// How ProWRAS picks `max_conv` and `neb_conv`. Serialised as `"auto"`,
/// `"custom"` or a preset name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SchemeChoice {
    Preset(SchemePreset),
    /// Classifier-specific selection on held-out subsets.
    Auto,
    /// Use the `max_conv`/`neb_conv` stored in the parameters.
    Custom,
}

impl fmt::Display for SchemeChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeChoice::Preset(p) => p.fmt(f),
            SchemeChoice::Auto => f.write_str("auto"),
            SchemeChoice::Custom => f.write_str("custom"),
        }
    }
}

impl From<SchemeChoice> for String {
    fn from(c: SchemeChoice) -> String {
        c.to_string()
    }
}

impl TryFrom<String> for SchemeChoice {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for SchemeChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Ok(Self::Auto),
            "custom" => Ok(Self::Custom),
            other => other.parse().map(Self::Preset),
        }
    }
}

/// A configured oversampler. `n` is always supplied at call time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Method {
    Baseline,
    Smote {
        #[serde(default = "five")]
        k: usize,
    },
    Prowsyn {
        #[serde(default)]
        partition: PartitionParams,
    },
    Loras {
        #[serde(default)]
        params: LorasParams,
    },
    Pfsmote,
    Prowras {
        #[serde(default)]
        params: ProwrasParams,
        #[serde(default = "auto")]
        scheme: SchemeChoice,
    },
}

fn five() -> usize {
    5
}

fn auto() -> SchemeChoice {
    SchemeChoice::Auto
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Smote { .. } => "smote",
            Method::Prowsyn { .. } => "prowsyn",
            Method::Loras { .. } => "loras",
            Method::Pfsmote => "pfsmote",
            Method::Prowras { .. } => "prowras",
        }
    }

    /// Runs the oversampler for `n` samples. ProWRAS with [`SchemeChoice::Auto`]
    /// needs `resolved` to name the preset already chosen.
    pub fn oversample(
        &self,
        d: &Dataset,
        n: usize,
        resolved: Option<SchemePreset>,
        seed: u64,
    ) -> Result<SyntheticBatch> {
        match self {
            Method::Baseline => Ok(SyntheticBatch::empty(d, seed)),
            Method::Smote { k } => smote(d, n, *k, seed),
            Method::Prowsyn { partition } => prowsyn(d, n, partition, seed),
            Method::Loras { params } => loras(d, n, params, seed),
            Method::Pfsmote => pf_smote_star(d, n, seed),
            Method::Prowras { params, scheme } => {
                let preset = match scheme {
                    SchemeChoice::Preset(p) => Some(*p),
                    SchemeChoice::Custom => None,
                    SchemeChoice::Auto => Some(resolved.ok_or_else(|| {
                        Error::InvalidParameter("automatic scheme has not been resolved".into())
                    })?),
                };
                let mut p = match preset {
                    Some(s) => params.with_scheme(s, d.n_feats(), d.minority_count()),
                    None => ProwrasParams {
                        scheme: None,
                        ..params.clone()
                    },
                };
                p.num_samples_to_generate = Some(n);
                prowras(d, &p, seed)
            }
        }
    }
}
