//! Proximity-weighted partitioning of the minority class.
//!
//! Level 1 collects, for every majority point, its nearest minority points;
//! those are removed and the search repeats on what is left. Points never
//! reached within `max_levels - 1` rounds form one final level. Level `i`
//! carries raw weight `exp(-theta * (i - 1))`, normalised over the levels
//! that actually exist.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::neighbors::NeighborIndex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    /// Dataset row indices, ascending.
    pub indices: Vec<usize>,
    pub raw_weight: f64,
    pub normalized_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedPartition {
    pub levels: Vec<Level>,
    pub theta: f64,
    pub max_levels: usize,
}

impl WeightedPartition {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn clusters(&self) -> impl Iterator<Item = &[usize]> + '_ {
        self.levels.iter().map(|l| l.indices.as_slice())
    }

    pub fn weights(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.normalized_weight).collect()
    }

    pub fn raw_weights(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.raw_weight).collect()
    }

    pub fn max_weight(&self) -> f64 {
        self.levels
            .iter()
            .map(|l| l.normalized_weight)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionParams {
    pub max_levels: usize,
    pub n_neighbours_max: usize,
    pub theta: f64,
}

impl Default for PartitionParams {
    fn default() -> Self {
        Self {
            max_levels: 5,
            n_neighbours_max: 5,
            theta: 1.0,
        }
    }
}

impl PartitionParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_levels == 0 || self.n_neighbours_max == 0 {
            return Err(Error::InvalidParameter(
                "max_levels and n_neighbours_max must be at least 1".into(),
            ));
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::InvalidParameter(format!("theta must be > 0, got {}", self.theta)));
        }
        Ok(())
    }
}

pub fn partition_minority(d: &Dataset, params: &PartitionParams) -> Result<WeightedPartition> {
    params.validate()?;
    let majority = d.majority_points();
    if majority.is_empty() || d.minority_count() == 0 {
        return Err(Error::InvalidDataset("both classes must be non-empty".into()));
    }
    let level_weight = |i: usize| (-params.theta * (i as f64 - 1.0)).exp();

    let mut remaining = d.minority_indices();
    let mut raw: Vec<(Vec<usize>, f64)> = Vec::new();
    for level in 1..params.max_levels {
        if remaining.is_empty() {
            break;
        }
        let k = remaining.len().min(params.n_neighbours_max);
        let candidates = d.features().select(&remaining);
        let index = NeighborIndex::new(&candidates)?;
        let mut claimed = BTreeSet::new();
        for row in majority.rows() {
            claimed.extend(index.knn(row, k, false)?);
        }
        assert!(!claimed.is_empty(), "a proximity level claimed no points");
        let cluster = claimed.iter().map(|&pos| remaining[pos]).collect();
        raw.push((cluster, level_weight(level)));
        remaining = remaining
            .iter()
            .enumerate()
            .filter(|(pos, _)| !claimed.contains(pos))
            .map(|(_, &i)| i)
            .collect();
    }
    if !remaining.is_empty() {
        raw.push((remaining, level_weight(params.max_levels)));
    }

    let total: f64 = raw.iter().map(|(_, w)| w).sum();
    let levels = raw
        .into_iter()
        .map(|(indices, w)| Level {
            indices,
            raw_weight: w,
            normalized_weight: w / total,
        })
        .collect();
    Ok(WeightedPartition {
        levels,
        theta: params.theta,
        max_levels: params.max_levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::points::Points;
    use approx::assert_abs_diff_eq;

    fn line(majority: &[f64], minority: &[f64]) -> Dataset {
        let values: Vec<f64> = majority.iter().chain(minority).copied().collect();
        let mask: Vec<bool> = (0..values.len()).map(|i| i >= majority.len()).collect();
        // pad the majority so the minority stays the smaller class
        let pad = minority.len().saturating_sub(majority.len());
        let mut values = values;
        let mut mask = mask;
        for _ in 0..pad {
            values.push(majority[0]);
            mask.push(false);
        }
        Dataset::from_mask(Points::from_flat(values, 1).unwrap(), &mask).unwrap()
    }

    #[test]
    fn hand_traced_levels() {
        let d = line(&[0.0], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let p = partition_minority(
            &d,
            &PartitionParams {
                max_levels: 3,
                n_neighbours_max: 2,
                theta: 1.0,
            },
        )
        .unwrap();
        let clusters: Vec<Vec<f64>> = p
            .clusters()
            .map(|c| c.iter().map(|&i| d.features().row(i)[0]).collect())
            .collect();
        assert_eq!(clusters, vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let w = p.weights();
        assert_abs_diff_eq!(w[0], 0.665241, epsilon = 1e-6);
        assert_abs_diff_eq!(w[1], 0.244728, epsilon = 1e-6);
        assert_abs_diff_eq!(w[2], 0.090031, epsilon = 1e-6);
        assert_eq!(p.raw_weights()[1], (-1.0f64).exp());
    }

    #[test]
    fn single_level() {
        let d = line(&[0.0], &[1.0, 2.0, 3.0]);
        let p = partition_minority(
            &d,
            &PartitionParams {
                max_levels: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.levels[0].indices.len(), 3);
        assert_eq!(p.levels[0].normalized_weight, 1.0);
    }

    #[test]
    fn early_exhaustion_stops() {
        let d = line(&[0.0, 10.0], &[1.0, 9.0]);
        let p = partition_minority(&d, &PartitionParams::default()).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.levels[0].indices.len(), 2);
    }

    #[test]
    fn rejects_bad_params() {
        let d = line(&[0.0], &[1.0]);
        for params in [
            PartitionParams { max_levels: 0, ..Default::default() },
            PartitionParams { n_neighbours_max: 0, ..Default::default() },
            PartitionParams { theta: 0.0, ..Default::default() },
        ] {
            assert!(partition_minority(&d, &params).is_err());
        }
    }
}
