//! Classifiers used by the benchmark harness.
//!
//! Targets are `true` for the minority (positive) class.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neighbors::NeighborIndex;
use crate::points::Points;

fn default_k() -> usize {
    5
}

fn default_l2() -> f64 {
    1.0
}

fn default_max_iter() -> usize {
    1000
}

fn default_tol() -> f64 {
    1e-6
}

/// Untrained classifier configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClassifierSpec {
    Knn {
        #[serde(default = "default_k")]
        k: usize,
    },
    Logreg {
        #[serde(default = "default_l2")]
        l2: f64,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
        #[serde(default = "default_tol")]
        tol: f64,
    },
}

impl ClassifierSpec {
    pub fn knn() -> Self {
        ClassifierSpec::Knn { k: default_k() }
    }

    pub fn logreg() -> Self {
        ClassifierSpec::Logreg {
            l2: default_l2(),
            max_iter: default_max_iter(),
            tol: default_tol(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ClassifierSpec::Knn { .. } => "knn",
            ClassifierSpec::Logreg { .. } => "logreg",
        }
    }

    pub fn fit(&self, x: &Points, y: &[bool]) -> Result<FittedClassifier> {
        match *self {
            ClassifierSpec::Knn { k } => knn_fit(x, y, k),
            ClassifierSpec::Logreg { l2, max_iter, tol } => logreg_fit(x, y, l2, max_iter, tol),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    pub k: usize,
    points: Points,
    targets: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after each accepted step, starting at the initial point.
    pub loss_history: Vec<f64>,
}

impl LogRegModel {
    pub fn probability(&self, x: &[f64]) -> f64 {
        let z = self.bias + dot(&self.weights, x);
        sigmoid(z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedClassifier {
    Knn(KnnModel),
    LogReg(LogRegModel),
    /// Training data held a single class; always predicts it.
    Constant { minority: bool },
}

impl FittedClassifier {
    pub fn predict(&self, points: &Points) -> Result<Vec<bool>> {
        match self {
            FittedClassifier::Knn(m) => knn_predict(m, points),
            FittedClassifier::LogReg(m) => Ok(points.rows().map(|r| m.probability(r) >= 0.5).collect()),
            FittedClassifier::Constant { minority } => Ok(vec![*minority; points.len()]),
        }
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self, FittedClassifier::Constant { .. })
    }
}

fn check_training(x: &Points, y: &[bool]) -> Result<()> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::InvalidParameter(format!(
            "training set has {} rows and {} targets",
            x.len(),
            y.len()
        )));
    }
    Ok(())
}

pub fn knn_fit(x: &Points, y: &[bool], k: usize) -> Result<FittedClassifier> {
    check_training(x, y)?;
    if k == 0 || k > x.len() {
        return Err(Error::TooFewPoints {
            k,
            available: x.len(),
        });
    }
    Ok(FittedClassifier::Knn(KnnModel {
        k,
        points: x.clone(),
        targets: y.to_vec(),
    }))
}

/// Majority vote among the `k` nearest training points; an even split goes
/// to the minority class.
pub fn knn_predict(model: &KnnModel, points: &Points) -> Result<Vec<bool>> {
    let index = NeighborIndex::new(&model.points)?;
    points
        .rows()
        .map(|q| {
            let votes = index
                .knn(q, model.k, false)?
                .into_iter()
                .filter(|&i| model.targets[i])
                .count();
            Ok(2 * votes >= model.k)
        })
        .collect()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(t)) without overflow.
#[inline]
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Penalised negative log-likelihood and its gradient.
///
/// `params` holds the feature weights followed by the bias. The objective is
/// `sum_i log(1 + exp(-s_i z_i)) + l2/2 * |w|^2` with `s_i = ±1`; the bias is
/// not penalised.
pub fn loss_and_gradient(params: &[f64], x: &Points, y: &[bool], l2: f64) -> (f64, Vec<f64>) {
    let dim = x.dim();
    let (w, b) = (&params[..dim], params[dim]);
    let mut loss = 0.5 * l2 * dot(w, w);
    let mut grad: Vec<f64> = w.iter().map(|wj| l2 * wj).chain([0.0]).collect();
    for (row, &target) in x.rows().zip(y) {
        let s = if target { 1.0 } else { -1.0 };
        let margin = s * (dot(w, row) + b);
        loss += softplus(-margin);
        let coef = -s * sigmoid(-margin);
        for (g, v) in grad.iter_mut().zip(row) {
            *g += coef * v;
        }
        grad[dim] += coef;
    }
    (loss, grad)
}

fn objective(params: &[f64], x: &Points, y: &[bool], l2: f64) -> f64 {
    let dim = x.dim();
    let (w, b) = (&params[..dim], params[dim]);
    0.5 * l2 * dot(w, w)
        + x.rows()
            .zip(y)
            .map(|(row, &t)| {
                let s = if t { 1.0 } else { -1.0 };
                softplus(-s * (dot(w, row) + b))
            })
            .sum::<f64>()
}

/// L2-regularised logistic regression fitted by full-batch gradient descent
/// with Armijo backtracking.
pub fn logreg_fit(
    x: &Points,
    y: &[bool],
    l2: f64,
    max_iter: usize,
    tol: f64,
) -> Result<FittedClassifier> {
    check_training(x, y)?;
    if !(l2 >= 0.0) || !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("bad l2 {l2} or tol {tol}")));
    }
    let positives = y.iter().filter(|&&t| t).count();
    if positives == 0 || positives == y.len() {
        warn!("logistic regression trained on a single class; using a constant predictor");
        return Ok(FittedClassifier::Constant {
            minority: positives > 0,
        });
    }

    let mut params = vec![0.0; x.dim() + 1];
    let (mut loss, mut grad) = loss_and_gradient(&params, x, y, l2);
    let mut history = vec![loss];
    let mut step = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    let mut trial = vec![0.0; params.len()];
    while iterations < max_iter {
        let gnorm2 = dot(&grad, &grad);
        if gnorm2.sqrt() < tol {
            converged = true;
            break;
        }
        iterations += 1;
        step *= 2.0;
        let accepted = loop {
            for ((t, p), g) in trial.iter_mut().zip(&params).zip(&grad) {
                *t = p - step * g;
            }
            let candidate = objective(&trial, x, y, l2);
            if candidate.is_finite() && candidate <= loss - 1e-4 * step * gnorm2 {
                break true;
            }
            step *= 0.5;
            if step < 1e-18 {
                break false;
            }
        };
        if !accepted {
            // no descent possible at machine precision
            converged = true;
            break;
        }
        params.copy_from_slice(&trial);
        (loss, grad) = loss_and_gradient(&params, x, y, l2);
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("objective became {loss}")));
        }
        history.push(loss);
    }
    let bias = params.pop().unwrap();
    Ok(FittedClassifier::LogReg(LogRegModel {
        weights: params,
        bias,
        l2,
        iterations,
        converged,
        loss_history: history,
    }))
}
