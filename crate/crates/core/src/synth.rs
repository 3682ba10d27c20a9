//! Shadowsamples, random convex combinations and cluster-wise point generation.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neighbors::neighborhoods;
use crate::points::Points;

/// Standard deviation of the Gaussian noise added to each feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sigma {
    Scalar(f64),
    PerFeature(Vec<f64>),
}

impl Sigma {
    #[inline]
    pub fn get(&self, feature: usize) -> f64 {
        match self {
            Sigma::Scalar(s) => *s,
            Sigma::PerFeature(v) => v[feature],
        }
    }

    pub fn broadcast(&self, dim: usize) -> Vec<f64> {
        (0..dim).map(|j| self.get(j)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowConfig {
    /// Shadowsamples drawn per parent point.
    pub shadow: usize,
    pub sigma: Sigma,
}

impl ShadowConfig {
    pub fn new(shadow: usize, sigma: f64) -> Self {
        Self {
            shadow,
            sigma: Sigma::Scalar(sigma),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.shadow == 0 {
            return Err(Error::InvalidParameter("shadow must be at least 1".into()));
        }
        let ok = |s: f64| s >= 0.0 && s.is_finite();
        match &self.sigma {
            Sigma::Scalar(s) if ok(*s) => Ok(()),
            Sigma::PerFeature(v) if v.len() == dim && v.iter().all(|&s| ok(s)) => Ok(()),
            s => Err(Error::InvalidParameter(format!(
                "sigma must be non-negative with one entry per feature ({dim}), got {s:?}"
            ))),
        }
    }

    fn perturb<R: Rng + ?Sized>(&self, parent: &[f64], out: &mut Vec<f64>, rng: &mut R) {
        for (j, &v) in parent.iter().enumerate() {
            let z: f64 = StandardNormal.sample(rng);
            out.push(v + self.sigma.get(j) * z);
        }
    }
}

/// Non-negative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexWeights(Vec<f64>);

impl ConvexWeights {
    /// Uniform draw from the (k-1)-simplex: normalised unit exponentials.
    pub fn sample<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Self {
        assert!(k >= 1);
        if k == 1 {
            return Self(vec![1.0]);
        }
        let mut w: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        Self(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

pub fn make_shadows<R: Rng + ?Sized>(
    parents: &Points,
    cfg: &ShadowConfig,
    rng: &mut R,
) -> Result<Points> {
    if parents.is_empty() {
        return Err(Error::InvalidParameter("no parent points".into()));
    }
    cfg.validate(parents.dim())?;
    let mut flat = Vec::with_capacity(parents.len() * cfg.shadow * parents.dim());
    for parent in parents.rows() {
        for _ in 0..cfg.shadow {
            cfg.perturb(parent, &mut flat, rng);
        }
    }
    Points::from_flat(flat, parents.dim())
}

fn weighted_sum(members: &[f64], weights: &[f64], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for (row, &w) in members.chunks_exact(dim).zip(weights) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += w * v;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Combination {
    pub point: Vec<f64>,
    pub pool_indices: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Picks `k` distinct rows uniformly and combines them with simplex-uniform weights.
pub fn random_convex_combination<R: Rng + ?Sized>(
    points: &Points,
    k: usize,
    rng: &mut R,
) -> Result<Combination> {
    if k == 0 || k > points.len() {
        return Err(Error::PoolTooSmall {
            k,
            pool: points.len(),
        });
    }
    let pool_indices = index::sample(rng, points.len(), k).into_vec();
    let weights = ConvexWeights::sample(k, rng).into_vec();
    let members: Vec<f64> = pool_indices
        .iter()
        .flat_map(|&i| points.row(i).iter().copied())
        .collect();
    Ok(Combination {
        point: weighted_sum(&members, &weights, points.dim()),
        pool_indices,
        weights,
    })
}

/// How one generated point was built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    /// Proximity level of the source cluster (0-based), filled in by callers.
    pub cluster: usize,
    /// Anchor point (cluster row) of the neighbourhood, `None` when the whole
    /// cluster was the neighbourhood.
    pub neighborhood_anchor: Option<usize>,
    pub k: usize,
    /// Whether the candidate pool held shadowsamples rather than raw points.
    pub shadow_pool: bool,
    pub pool_size: usize,
    /// Positions in the candidate pool. For shadow pools, position `q` is
    /// shadow `q % shadow` of neighbourhood member `q / shadow`.
    pub pool_indices: Vec<usize>,
    /// Cluster rows the combined members derive from.
    pub parents: Vec<usize>,
    pub weights: Vec<f64>,
    /// The combined members, row-major.
    #[serde(skip)]
    pub members: Vec<f64>,
}

impl SampleRecord {
    /// Recomputes the generated point from the recorded members and weights.
    pub fn reconstruct(&self, dim: usize) -> Vec<f64> {
        weighted_sum(&self.members, &self.weights, dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub points: Points,
    pub records: Vec<SampleRecord>,
}

/// Arguments of [`generate_points`] that stay fixed across clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationParams {
    pub neb_conv: usize,
    pub shadow: ShadowConfig,
    pub num_feats: usize,
}

/// Cluster-wise synthetic point generation.
///
/// When `num_convcomb < num_feats` each sample is a 2-point combination of raw
/// neighbourhood points; otherwise it combines `num_convcomb` shadowsamples of
/// the neighbourhood. A pool that is a single raw point yields that point.
pub fn generate_points<R: Rng + ?Sized>(
    cluster: &Points,
    num_samples: usize,
    num_convcomb: usize,
    params: &GenerationParams,
    rng: &mut R,
) -> Result<Generated> {
    if cluster.is_empty() {
        return Err(Error::InvalidParameter("empty cluster".into()));
    }
    if num_convcomb == 0 || params.neb_conv == 0 {
        return Err(Error::InvalidParameter(
            "num_convcomb and neb_conv must be at least 1".into(),
        ));
    }
    params.shadow.validate(cluster.dim())?;
    let dim = cluster.dim();
    let mut out = Generated {
        points: Points::with_capacity(dim, num_samples),
        records: Vec::with_capacity(num_samples),
    };
    if num_samples == 0 {
        return Ok(out);
    }

    let hoods = neighborhoods(cluster, params.neb_conv)?;
    let local = cluster.len() > params.neb_conv;
    let use_shadows = num_convcomb >= params.num_feats;
    let k = if use_shadows { num_convcomb } else { 2 };

    for _ in 0..num_samples {
        let hood = &hoods[rng.random_range(0..hoods.len())];
        let shadows = use_shadows.then_some(&params.shadow);
        let (point, mut record) = combine_neighborhood(cluster, hood, k, shadows, rng)?;
        record.neighborhood_anchor = local.then_some(hood[0]);
        out.points.push(&point)?;
        out.records.push(record);
    }
    Ok(out)
}

/// One convex combination of `k` distinct pool members drawn from the
/// neighbourhood `hood` (rows of `cluster`). With `shadows`, the pool is
/// `shadow` noisy copies of every neighbourhood member; otherwise the raw
/// members themselves, where a single-member pool yields that member.
pub(crate) fn combine_neighborhood<R: Rng + ?Sized>(
    cluster: &Points,
    hood: &[usize],
    k: usize,
    shadows: Option<&ShadowConfig>,
    rng: &mut R,
) -> Result<(Vec<f64>, SampleRecord)> {
    let dim = cluster.dim();
    let pool_size = match shadows {
        Some(cfg) => cfg.shadow * hood.len(),
        None => hood.len(),
    };
    let k_used = if shadows.is_none() && pool_size == 1 { 1 } else { k };
    if k_used == 0 || k_used > pool_size {
        return Err(Error::PoolTooSmall { k, pool: pool_size });
    }
    let pool_indices = index::sample(rng, pool_size, k_used).into_vec();
    let mut members = Vec::with_capacity(k_used * dim);
    let parents: Vec<usize> = match shadows {
        // only the chosen shadows are materialised; the rest of the pool would
        // be independent noise that is never observed
        Some(cfg) => pool_indices
            .iter()
            .map(|&q| {
                let parent = hood[q / cfg.shadow];
                cfg.perturb(cluster.row(parent), &mut members, rng);
                parent
            })
            .collect(),
        None => pool_indices
            .iter()
            .map(|&q| {
                members.extend_from_slice(cluster.row(hood[q]));
                hood[q]
            })
            .collect(),
    };
    let weights = ConvexWeights::sample(k_used, rng).into_vec();
    let point = weighted_sum(&members, &weights, dim);
    let record = SampleRecord {
        cluster: 0,
        neighborhood_anchor: None,
        k: k_used,
        shadow_pool: shadows.is_some(),
        pool_size,
        pool_indices,
        parents,
        weights,
        members,
    };
    Ok((point, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn params(neb_conv: usize, shadow: usize, sigma: f64, num_feats: usize) -> GenerationParams {
        GenerationParams {
            neb_conv,
            shadow: ShadowConfig::new(shadow, sigma),
            num_feats,
        }
    }

    #[test]
    fn zero_sigma_shadows_equal_parents() {
        let parents = Points::from_rows(&[[1.0, 2.0], [3.0, -1.0]]).unwrap();
        let s = make_shadows(&parents, &ShadowConfig::new(4, 0.0), &mut seeded(1)).unwrap();
        assert_eq!(s.len(), 8);
        for i in 0..8 {
            assert_eq!(s.row(i), parents.row(i / 4));
        }
    }

    #[test]
    fn shadow_noise_std() {
        let parents = Points::from_rows(&[[0.0, 0.0]]).unwrap();
        let n = 100_000;
        let s = make_shadows(&parents, &ShadowConfig::new(n, 0.001), &mut seeded(2)).unwrap();
        assert_eq!(s.len(), n);
        for j in 0..2 {
            let mean = s.rows().map(|r| r[j]).sum::<f64>() / n as f64;
            let var = s.rows().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let std = var.sqrt();
            assert!((0.00095..=0.00105).contains(&std), "std {std}");
        }
    }

    #[test]
    fn per_feature_sigma_length_checked() {
        let cfg = ShadowConfig {
            shadow: 1,
            sigma: Sigma::PerFeature(vec![0.1]),
        };
        assert!(cfg.validate(2).is_err());
        assert!(cfg.validate(1).is_ok());
        assert!(ShadowConfig::new(0, 0.1).validate(1).is_err());
        assert!(ShadowConfig::new(1, -0.1).validate(1).is_err());
    }

    #[test]
    fn convex_weights_on_simplex() {
        let mut rng = seeded(3);
        for k in 1..12 {
            let w = ConvexWeights::sample(k, &mut rng);
            assert_eq!(w.as_slice().len(), k);
            assert!(w.as_slice().iter().all(|&x| x >= 0.0));
            assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_point_combination_is_identity() {
        let p = Points::from_rows(&[[1.0, 5.0], [2.0, 7.0]]).unwrap();
        let c = random_convex_combination(&p, 1, &mut seeded(4)).unwrap();
        assert_eq!(c.point, p.row(c.pool_indices[0]));
        assert!(random_convex_combination(&p, 3, &mut seeded(4)).is_err());
    }

    #[test]
    fn two_point_combination_on_segment() {
        let p = Points::from_rows(&[[0.3, -1.0, 2.0], [1.7, 4.0, -0.5]]).unwrap();
        let mut rng = seeded(5);
        for _ in 0..100 {
            let c = random_convex_combination(&p, 2, &mut rng).unwrap();
            let (a, b) = (p.row(0), p.row(1));
            let t = (c.point[0] - a[0]) / (b[0] - a[0]);
            assert!((0.0..=1.0).contains(&t));
            for j in 0..3 {
                assert!((a[j] + t * (b[j] - a[j]) - c.point[j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn triangle_mean_is_centroid() {
        let p = Points::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        let mut rng = seeded(6);
        let n = 10_000;
        let mut acc = [0.0; 2];
        for _ in 0..n {
            let c = random_convex_combination(&p, 3, &mut rng).unwrap();
            acc[0] += c.point[0];
            acc[1] += c.point[1];
        }
        for a in acc {
            assert!((a / n as f64 - 1.0 / 3.0).abs() < 0.02);
        }
    }

    #[test]
    fn raw_branch_is_two_point() {
        let cluster = Points::from_flat((0..60).map(|v| v as f64 * 0.1).collect(), 10).unwrap();
        let g = generate_points(&cluster, 50, 2, &params(1000, 100, 0.001, 10), &mut seeded(7)).unwrap();
        assert_eq!(g.points.len(), 50);
        for r in &g.records {
            assert!(!r.shadow_pool);
            assert_eq!((r.k, r.pool_size), (2, 6));
            assert_eq!(r.neighborhood_anchor, None);
        }
    }

    #[test]
    fn shadow_branch_pool_counts() {
        let cluster = Points::from_flat((0..40).map(|v| (v as f64).sin()).collect(), 4).unwrap();
        let g = generate_points(&cluster, 30, 4, &params(5, 100, 0.001, 4), &mut seeded(8)).unwrap();
        for (i, r) in g.records.iter().enumerate() {
            assert!(r.shadow_pool);
            assert_eq!((r.k, r.pool_size), (4, 500));
            assert!(r.neighborhood_anchor.is_some());
            let rebuilt = r.reconstruct(4);
            for (a, b) in rebuilt.iter().zip(g.points.row(i)) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn empty_request() {
        let cluster = Points::from_rows(&[[0.0], [1.0]]).unwrap();
        let g = generate_points(&cluster, 0, 2, &params(5, 10, 0.0, 1), &mut seeded(9)).unwrap();
        assert!(g.points.is_empty());
    }

    #[test]
    fn singleton_raw_pool_copies_point() {
        let cluster = Points::from_rows(&[[0.25, 0.75, 0.5]]).unwrap();
        let g = generate_points(&cluster, 5, 2, &params(5, 10, 0.0, 3), &mut seeded(10)).unwrap();
        for row in g.points.rows() {
            assert_eq!(row, cluster.row(0));
        }
    }

    #[test]
    fn undersized_shadow_pool_is_reported() {
        let cluster = Points::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).unwrap();
        let err = generate_points(&cluster, 1, 3, &params(5, 1, 0.0, 2), &mut seeded(11)).unwrap_err();
        assert!(matches!(err, Error::PoolTooSmall { k: 3, pool: 2 }));
    }

    #[test]
    fn deterministic() {
        let cluster = Points::from_flat((0..30).map(|v| (v as f64).cos()).collect(), 3).unwrap();
        let p = params(5, 20, 0.01, 3);
        let a = generate_points(&cluster, 20, 3, &p, &mut seeded(12)).unwrap();
        let b = generate_points(&cluster, 20, 3, &p, &mut seeded(12)).unwrap();
        assert_eq!(a.points, b.points);
    }
}
