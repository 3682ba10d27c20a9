//! Imbalance-aware evaluation: minority F1, Cohen's kappa, the
//! classifier-independence I-score and the Wilcoxon signed-rank test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Binary confusion counts with the minority class as positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn from_predictions(truth: &[bool], predicted: &[bool]) -> Self {
        assert_eq!(truth.len(), predicted.len(), "prediction count mismatch");
        let mut cm = Self::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t, p) {
                (true, true) => cm.tp += 1,
                (false, true) => cm.fp += 1,
                (true, false) => cm.fn_ += 1,
                (false, false) => cm.tn += 1,
            }
        }
        cm
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Minority-class F1; zero when there are no true positives.
    pub fn f1(&self) -> f64 {
        if self.tp == 0 {
            return 0.0;
        }
        let tp = self.tp as f64;
        let precision = tp / (self.tp + self.fp) as f64;
        let recall = tp / (self.tp + self.fn_) as f64;
        2.0 * precision * recall / (precision + recall)
    }

    /// Cohen's kappa; zero when chance agreement is already perfect.
    pub fn kappa(&self) -> f64 {
        let n = self.total() as f64;
        if n == 0.0 {
            return 0.0;
        }
        let (tp, fp, fn_, tn) = (self.tp as f64, self.fp as f64, self.fn_ as f64, self.tn as f64);
        let observed = (tp + tn) / n;
        let chance = ((tp + fp) * (tp + fn_) + (fn_ + tn) * (fp + tn)) / (n * n);
        if chance == 1.0 {
            return 0.0;
        }
        (observed - chance) / (1.0 - chance)
    }
}

pub fn f1_minority(cm: &ConfusionMatrix) -> f64 {
    cm.f1()
}

pub fn cohen_kappa(cm: &ConfusionMatrix) -> f64 {
    cm.kappa()
}

/// Scores indexed by classifier, dataset and oversampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCube {
    pub classifiers: Vec<String>,
    pub datasets: Vec<String>,
    pub oversamplers: Vec<String>,
    scores: Vec<f64>,
}

impl ComparisonCube {
    /// Builds a cube from `(classifier, dataset, oversampler, score)` entries.
    /// Axes keep first-seen order; every combination must be present.
    pub fn from_entries<'a, I>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str, f64)>,
    {
        let entries: Vec<_> = entries.into_iter().collect();
        let mut axes: [Vec<String>; 3] = Default::default();
        for &(c, d, o, _) in &entries {
            for (axis, key) in axes.iter_mut().zip([c, d, o]) {
                if !axis.iter().any(|k| k == key) {
                    axis.push(key.to_string());
                }
            }
        }
        let [classifiers, datasets, oversamplers] = axes;
        let mut cube = Self {
            scores: vec![f64::NAN; classifiers.len() * datasets.len() * oversamplers.len()],
            classifiers,
            datasets,
            oversamplers,
        };
        for (c, d, o, s) in entries {
            let i = cube.offset(
                position(&cube.classifiers, c),
                position(&cube.datasets, d),
                position(&cube.oversamplers, o),
            );
            cube.scores[i] = s;
        }
        if let Some(i) = cube.scores.iter().position(|s| s.is_nan()) {
            let (no, nd) = (cube.oversamplers.len(), cube.datasets.len());
            return Err(Error::Incomplete(format!(
                "no score for classifier {:?}, dataset {:?}, oversampler {:?}",
                cube.classifiers[i / (nd * no)],
                cube.datasets[(i / no) % nd],
                cube.oversamplers[i % no]
            )));
        }
        Ok(cube)
    }

    fn offset(&self, c: usize, d: usize, o: usize) -> usize {
        (c * self.datasets.len() + d) * self.oversamplers.len() + o
    }

    pub fn score(&self, c: usize, d: usize, o: usize) -> f64 {
        self.scores[self.offset(c, d, o)]
    }

    /// Copy with every score rounded to `decimals` places.
    pub fn rounded(&self, decimals: i32) -> Self {
        let scale = 10f64.powi(decimals);
        Self {
            scores: self.scores.iter().map(|s| (s * scale).round() / scale).collect(),
            ..self.clone()
        }
    }
}

fn position(axis: &[String], key: &str) -> usize {
    axis.iter().position(|k| k == key).expect("key registered")
}

/// Classifier independence of `target`: geometric mean over classifiers of
/// the average fraction of datasets on which `target` scores at least as well
/// as each competitor (within `tie_tolerance`).
pub fn iscore(cube: &ComparisonCube, target: &str, tie_tolerance: f64) -> Result<f64> {
    let o = cube
        .oversamplers
        .iter()
        .position(|x| x == target)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown oversampler {target:?}")))?;
    let (n_c, n_d, n_o) = (cube.classifiers.len(), cube.datasets.len(), cube.oversamplers.len());
    if n_o < 2 || n_c == 0 || n_d == 0 {
        return Err(Error::InvalidParameter(
            "I-score needs at least two oversamplers, one classifier and one dataset".into(),
        ));
    }
    let product: f64 = (0..n_c)
        .map(|c| {
            let wins: usize = (0..n_o)
                .filter(|&other| other != o)
                .map(|other| {
                    (0..n_d)
                        .filter(|&d| cube.score(c, d, o) >= cube.score(c, d, other) - tie_tolerance)
                        .count()
                })
                .sum();
            wins as f64 / ((n_o - 1) * n_d) as f64
        })
        .product();
    Ok(product.powf(1.0 / n_c as f64))
}

/// I-score of every oversampler, in cube order.
pub fn iscore_all(cube: &ComparisonCube, tie_tolerance: f64) -> Result<Vec<(String, f64)>> {
    cube.oversamplers
        .iter()
        .map(|o| Ok((o.clone(), iscore(cube, o, tie_tolerance)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WsrtResult {
    pub w_plus: f64,
    pub w_minus: f64,
    /// `(min(W+, W-) - n(n+1)/4) / sd` with the tie-corrected deviation; never positive.
    pub z: f64,
    /// Normal-approximation p-value for the alternative `a > b`.
    pub p_one_sided: f64,
    pub p_two_sided: f64,
    /// Effect size `|z| / sqrt(N)` over all `N` pairs.
    pub r: f64,
    /// Pairs left after dropping zero differences.
    pub n_effective: usize,
    pub n_total: usize,
    /// Set when every difference was zero and no test could be made.
    pub degenerate: bool,
}

/// Average ranks (1-based) of `values`, with tied values sharing the mean of
/// their positions. Also returns the size of every tied group.
pub fn average_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        if end - start > 1 {
            ties.push(end - start);
        }
        start = end;
    }
    (ranks, ties)
}

/// Wilcoxon signed-rank test of paired samples `a` and `b`.
///
/// Zero differences are dropped; absolute differences get average ranks.
/// The reported `z` follows the tie-corrected formula on `min(W+, W-)`. The
/// p-values use the same normal approximation with a continuity correction
/// of one half.
pub fn wsrt(a: &[f64], b: &[f64]) -> Result<WsrtResult> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "paired samples must be non-empty and of equal length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let n_total = a.len();
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(WsrtResult {
            w_plus: 0.0,
            w_minus: 0.0,
            z: 0.0,
            p_one_sided: 1.0,
            p_two_sided: 1.0,
            r: 0.0,
            n_effective: 0,
            n_total,
            degenerate: true,
        });
    }
    let magnitudes: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = average_ranks(&magnitudes);
    let (mut w_plus, mut w_minus) = (0.0, 0.0);
    for (d, r) in diffs.iter().zip(&ranks) {
        if *d > 0.0 {
            w_plus += r;
        } else {
            w_minus += r;
        }
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let sd = (nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term).sqrt();
    let z = (w_plus.min(w_minus) - mean) / sd;

    let normal = Normal::standard();
    let p_one_sided = normal.sf((w_plus - mean - 0.5) / sd);
    let p_two_sided = (2.0 * normal.sf(((w_plus - mean).abs() - 0.5).max(0.0) / sd)).min(1.0);
    Ok(WsrtResult {
        w_plus,
        w_minus,
        z,
        p_one_sided,
        p_two_sided,
        r: z.abs() / (n_total as f64).sqrt(),
        n_effective: n,
        n_total,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn f1_cases() {
        assert_eq!(ConfusionMatrix::new(10, 0, 0, 5).f1(), 1.0);
        assert_eq!(ConfusionMatrix::new(0, 3, 4, 5).f1(), 0.0);
        assert_abs_diff_eq!(ConfusionMatrix::new(5, 5, 5, 0).f1(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn kappa_cases() {
        assert_eq!(ConfusionMatrix::new(7, 0, 0, 13).kappa(), 1.0);
        assert_eq!(ConfusionMatrix::new(4, 4, 4, 4).kappa(), 0.0);
        assert_abs_diff_eq!(ConfusionMatrix::new(40, 20, 10, 30).kappa(), 0.4, epsilon = 1e-12);
        // a single class on both sides
        assert_eq!(ConfusionMatrix::new(0, 0, 0, 9).kappa(), 0.0);
    }

    #[test]
    fn kappa_transpose_symmetry() {
        let cm = ConfusionMatrix::new(12, 7, 3, 41);
        let t = ConfusionMatrix::new(12, 3, 7, 41);
        assert_abs_diff_eq!(cm.kappa(), t.kappa(), epsilon = 1e-15);
    }

    #[test]
    fn from_predictions_counts() {
        let cm = ConfusionMatrix::from_predictions(&[true, true, false, false, true], &[true, false, true, false, true]);
        assert_eq!(cm, ConfusionMatrix::new(2, 1, 1, 1));
    }

    fn cube(scores: &[(&'static str, &'static str, &'static str, f64)]) -> ComparisonCube {
        ComparisonCube::from_entries(scores.iter().copied()).unwrap()
    }

    #[test]
    fn iscore_bounds() {
        let c = cube(&[
            ("knn", "d1", "a", 0.9),
            ("knn", "d1", "b", 0.5),
            ("knn", "d2", "a", 0.7),
            ("knn", "d2", "b", 0.7),
        ]);
        assert_eq!(iscore(&c, "a", 0.0).unwrap(), 1.0);
        assert_eq!(iscore(&c, "b", 0.0).unwrap(), 0.5);
        assert!(iscore(&c, "zzz", 0.0).is_err());
    }

    #[test]
    fn incomplete_cube_rejected() {
        let err = ComparisonCube::from_entries([("knn", "d1", "a", 0.5), ("knn", "d2", "b", 0.5)]).unwrap_err();
        assert!(matches!(err, Error::Incomplete(_)));
    }

    #[test]
    fn ranks_with_ties() {
        let (r, t) = average_ranks(&[3.0, 1.0, 3.0, 2.0, 3.0]);
        assert_eq!(r, vec![4.0, 1.0, 4.0, 2.0, 4.0]);
        assert_eq!(t, vec![3]);
    }

    #[test]
    fn wsrt_constant_shift() {
        let b: Vec<f64> = (0..10).map(|i| f64::from(i) * 0.37).collect();
        let a: Vec<f64> = (0..10).map(|i| b[i] + 0.25 + i as f64 * 0.01).collect();
        let res = wsrt(&a, &b).unwrap();
        assert_eq!((res.w_plus, res.w_minus), (55.0, 0.0));
        assert_abs_diff_eq!(res.z, -27.5 / (96.25f64).sqrt(), epsilon = 1e-12);
        assert!(res.p_one_sided < 0.01);
        assert_abs_diff_eq!(res.r, res.z.abs() / 10f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn wsrt_degenerate_and_errors() {
        let r = wsrt(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.n_effective, 0);
        assert!(wsrt(&[1.0], &[1.0, 2.0]).is_err());
        assert!(wsrt(&[], &[]).is_err());
    }

    #[test]
    fn wsrt_tie_correction() {
        // |D| = (1, 1, 2, 3) → ranks 1.5, 1.5, 3, 4; one tie group of size 2
        let r = wsrt(&[1.0, 0.0, 2.0, 3.0], &[0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!((r.w_plus, r.w_minus), (8.5, 1.5));
        let sd = (4.0 * 5.0 * 9.0 / 24.0 - 6.0 / 48.0f64).sqrt();
        assert_abs_diff_eq!(r.z, (1.5 - 5.0) / sd, epsilon = 1e-12);
    }
}
