//! Exact brute-force Euclidean nearest neighbours.
//!
//! Datasets here are small (a few thousand rows), so every query scans all
//! indexed points. Ties in distance are broken by the smaller point index,
//! which keeps results independent of floating-point sort instability.

use crate::error::{Error, Result};
use crate::points::{squared_distance, Points};

#[derive(Debug, Clone)]
pub struct NeighborIndex<'a> {
    points: &'a Points,
}

impl<'a> NeighborIndex<'a> {
    pub fn new(points: &'a Points) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("neighbour index needs at least one point".into()));
        }
        if !points.all_finite() {
            return Err(Error::InvalidParameter("neighbour index holds non-finite values".into()));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &Points {
        self.points
    }

    /// The `k` nearest indexed points to `query`, closest first.
    ///
    /// With `exclude_self`, the lowest-index point exactly equal to `query`
    /// (if any) is left out of the result.
    pub fn knn(&self, query: &[f64], k: usize, exclude_self: bool) -> Result<Vec<usize>> {
        let skip = if exclude_self {
            self.points.rows().position(|r| r == query)
        } else {
            None
        };
        self.knn_skipping(query, k, skip)
    }

    /// The `k` nearest neighbours of indexed point `i`, excluding `i` itself.
    pub fn neighbors_of(&self, i: usize, k: usize) -> Result<Vec<usize>> {
        self.knn_skipping(self.points.row(i), k, Some(i))
    }

    fn knn_skipping(&self, query: &[f64], k: usize, skip: Option<usize>) -> Result<Vec<usize>> {
        let available = self.len() - usize::from(skip.is_some());
        if k == 0 || k > available {
            return Err(Error::TooFewPoints { k, available });
        }
        let mut scored: Vec<(f64, usize)> = self
            .points
            .rows()
            .enumerate()
            .filter(|(i, _)| Some(*i) != skip)
            .map(|(i, row)| (squared_distance(query, row), i))
            .collect();
        let by_distance =
            |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, by_distance);
            scored.truncate(k);
        }
        scored.sort_unstable_by(by_distance);
        Ok(scored.into_iter().map(|(_, i)| i).collect())
    }
}

/// Neighbourhoods used for local convex combinations.
///
/// When the cluster has more than `size` points, each point anchors one
/// neighbourhood made of itself plus its `size - 1` nearest cluster-mates
/// (anchor first). Otherwise the whole cluster is the only neighbourhood.
pub fn neighborhoods(cluster: &Points, size: usize) -> Result<Vec<Vec<usize>>> {
    if cluster.is_empty() {
        return Err(Error::InvalidParameter("empty cluster".into()));
    }
    if cluster.len() <= size {
        return Ok(vec![(0..cluster.len()).collect()]);
    }
    let index = NeighborIndex::new(cluster)?;
    (0..cluster.len())
        .map(|anchor| {
            let mut hood = Vec::with_capacity(size);
            hood.push(anchor);
            if size > 1 {
                hood.extend(index.neighbors_of(anchor, size - 1)?);
            }
            Ok(hood)
        })
        .collect()
}
