use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of real-valued points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Points {
    data: Vec<f64>,
    dim: usize,
}

impl Points {
    pub fn new(dim: usize) -> Self {
        Self {
            data: Vec::new(),
            dim,
        }
    }

    pub fn with_capacity(dim: usize, rows: usize) -> Self {
        Self {
            data: Vec::with_capacity(dim * rows),
            dim,
        }
    }

    pub fn from_flat(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("points need at least one feature".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidParameter(format!(
                "flat buffer of length {} is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { data, dim })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| Error::InvalidParameter("no rows given".into()))?;
        let mut out = Self::with_capacity(dim, rows.len());
        for row in rows {
            out.push(row.as_ref())?;
        }
        Ok(out)
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::InvalidParameter(format!(
                "row has {} values, expected {}",
                row.len(),
                self.dim
            )));
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    /// Appends every row of `other`.
    pub fn extend(&mut self, other: &Points) -> Result<()> {
        if other.dim != self.dim && !other.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "cannot append {}-dimensional points to {}-dimensional points",
                other.dim, self.dim
            )));
        }
        self.data.extend_from_slice(&other.data);
        Ok(())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Points {
        let mut out = Points::with_capacity(self.dim, indices.len());
        for &i in indices {
            out.data.extend_from_slice(self.row(i));
        }
        out
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for row in self.rows() {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        let n = self.len().max(1) as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_and_select() {
        let p = Points::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p.row(1), &[3.0, 4.0]);
        let s = p.select(&[2, 0]);
        assert_eq!(s.as_flat(), &[5.0, 6.0, 1.0, 2.0]);
        assert_eq!(p.mean(), vec![3.0, 4.0]);
    }

    #[test]
    fn push_rejects_wrong_width() {
        let mut p = Points::new(2);
        assert!(p.push(&[1.0]).is_err());
    }
}
