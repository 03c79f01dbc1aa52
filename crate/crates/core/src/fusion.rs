//! Score-level fusion by L2-penalized logistic regression.
//!
//! The fitted model maximizes
//!
//! ```text
//! Σ_i [ y_i log p_i + (1 − y_i) log(1 − p_i) ] − (λ/2) ‖β‖²,   p_i = σ(β0 + βᵀ s_i)
//! ```
//!
//! with Newton (IRLS) steps. The intercept is not penalized.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrModel {
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub l2_lambda: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrOptions {
    pub l2_lambda: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for LrOptions {
    fn default() -> Self {
        Self {
            l2_lambda: 1e-3,
            max_iters: 100,
            tol: 1e-8,
        }
    }
}

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn design(scores: &[Vec<f64>]) -> Result<(DMatrix<f64>, usize)> {
    let d = scores
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::InvalidArgument("no samples to fit".into()))?;
    if d == 0 {
        return Err(Error::InvalidArgument("need at least one modality".into()));
    }
    if scores.iter().any(|s| s.len() != d) {
        return Err(Error::DimensionMismatch("score tuples differ in length".into()));
    }
    if scores.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("scores must be finite".into()));
    }
    let x = DMatrix::from_fn(scores.len(), d + 1, |i, j| if j == 0 { 1.0 } else { scores[i][j - 1] });
    Ok((x, d))
}

/// Gradient of the penalized log-likelihood at `(beta0, beta)`.
pub fn penalized_gradient(model: &LrModel, scores: &[Vec<f64>], labels: &[bool]) -> Result<Vec<f64>> {
    let (x, d) = design(scores)?;
    let params = DVector::from_iterator(d + 1, std::iter::once(model.beta0).chain(model.beta.iter().copied()));
    Ok(gradient(&x, labels, &params, model.l2_lambda).iter().copied().collect())
}

fn gradient(x: &DMatrix<f64>, labels: &[bool], params: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let eta = x * params;
    let resid = DVector::from_iterator(
        labels.len(),
        labels.iter().zip(eta.iter()).map(|(&y, &e)| f64::from(u8::from(y)) - sigmoid(e)),
    );
    let mut g = x.transpose() * resid;
    for j in 1..g.len() {
        g[j] -= lambda * params[j];
    }
    g
}

/// Fits the fusion weights; `labels[i]` is true for kin pairs.
pub fn fit_logistic(scores: &[Vec<f64>], labels: &[bool], opts: LrOptions) -> Result<LrModel> {
    let (x, d) = design(scores)?;
    if labels.len() != scores.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} score tuples but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if !labels.iter().any(|&y| y) || labels.iter().all(|&y| y) {
        return Err(Error::Protocol("logistic fusion needs both kin and non-kin samples".into()));
    }
    if !(opts.l2_lambda >= 0.0) || !opts.l2_lambda.is_finite() {
        return Err(Error::InvalidArgument("l2_lambda must be finite and >= 0".into()));
    }
    let n = scores.len();
    let mut params = DVector::zeros(d + 1);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        let eta = &x * &params;
        let weights: Vec<f64> = eta
            .iter()
            .map(|&e| {
                let p = sigmoid(e);
                p * (1.0 - p)
            })
            .collect();
        let mut hessian = DMatrix::zeros(d + 1, d + 1);
        for i in 0..n {
            let row = x.row(i);
            hessian.ger(weights[i], &row.transpose(), &row.transpose(), 1.0);
        }
        for j in 1..=d {
            hessian[(j, j)] += opts.l2_lambda;
        }
        let grad = gradient(&x, labels, &params, opts.l2_lambda);
        let step = match hessian.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => hessian
                .lu()
                .solve(&grad)
                .ok_or_else(|| Error::Numerical("singular IRLS Hessian".into()))?,
        };
        params += &step;
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("IRLS diverged".into()));
        }
        if step.amax() < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("logistic fusion did not converge in {} iterations", opts.max_iters);
    }
    Ok(LrModel {
        beta0: params[0],
        beta: params.iter().skip(1).copied().collect(),
        l2_lambda: opts.l2_lambda,
        converged,
        iterations,
    })
}

/// Fused kin probability `σ(β0 + βᵀs)`.
pub fn fuse(model: &LrModel, scores: &[f64]) -> Result<f64> {
    if scores.len() != model.beta.len() {
        return Err(Error::DimensionMismatch(format!(
            "model expects {} scores, got {}",
            model.beta.len(),
            scores.len()
        )));
    }
    let eta = model.beta0 + model.beta.iter().zip(scores).map(|(b, s)| b * s).sum::<f64>();
    Ok(sigmoid(eta))
}

impl LrModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::dataset::write_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::dataset::read_json(path)
    }
}
