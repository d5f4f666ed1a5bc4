//! L2-regularized logistic regression trained by damped Newton.
//!
//! The objective over a set of rows is
//! `R(θ) = (1/N) Σ L(z_i, θ) + (λ/2) θᵀθ`, with `L` the binary
//! cross-entropy of `σ(θᵀx)`. Every coordinate is penalized, including the
//! bias column that ingest appends, so the Hessian is `∇²R + λI`-shaped
//! and always positive definite.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetSplit, Instance};
use crate::error::{Error, Result};
use crate::features::Features;
use crate::linalg::{dot, norm, SpdOperator, SpdSolver, DENSE_DIM_LIMIT};

const ARMIJO_C: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MIN_STEP: f64 = 1e-12;
/// Allowed risk increase for a step taken once Armijo is lost in rounding.
const RISK_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub lambda: f64,
    pub tau: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub solver_tol: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            tau: 0.5,
            newton_tol: 1e-8,
            newton_max_iter: 100,
            solver_tol: 1e-8,
        }
    }
}

impl Hyperparams {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if !(self.newton_tol > 0.0) || !(self.solver_tol > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.newton_max_iter == 0 {
            return Err(Error::Config("newton_max_iter must be at least 1".into()));
        }
        Ok(())
    }

    /// Binary decision: strictly above the threshold is positive.
    pub fn label(&self, prob: f64) -> u8 {
        u8::from(prob > self.tau)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub theta: Vec<f64>,
    pub hyper: Hyperparams,
    pub final_grad_norm: f64,
    pub iterations: usize,
}

impl TrainedModel {
    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn logit(&self, x: &Features) -> Result<f64> {
        x.check_dim(self.dim())?;
        Ok(x.dot(&self.theta))
    }

    pub fn predict_proba(&self, x: &Features) -> Result<f64> {
        Ok(sigmoid(self.logit(x)?))
    }

    pub fn predict_label(&self, x: &Features) -> Result<u8> {
        Ok(self.hyper.label(self.predict_proba(x)?))
    }

    /// `∇_θ σ(θᵀx) = σ(1 − σ) x`.
    pub fn prediction_gradient(&self, x: &Features) -> Result<Vec<f64>> {
        x.check_dim(self.dim())?;
        Ok(prediction_gradient_at(x, &self.theta))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Cross-entropy of one instance: `ln(1 + e^z) − y z`.
pub fn instance_loss(z: &Instance, theta: &[f64]) -> f64 {
    let logit = z.features.dot(theta);
    softplus(logit) - z.y() * logit
}

/// `∇_θ L(z, θ) = (σ(θᵀx) − y) x`.
pub fn loss_grad(z: &Instance, theta: &[f64]) -> Result<Vec<f64>> {
    z.features.check_dim(theta.len())?;
    Ok(loss_grad_unchecked(z, theta))
}

pub(crate) fn loss_grad_unchecked(z: &Instance, theta: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; theta.len()];
    let residual = sigmoid(z.features.dot(theta)) - z.y();
    z.features.axpy(residual, &mut g);
    g
}

/// `∇L(z, θ)ᵀ v`, without materializing the gradient.
pub(crate) fn loss_grad_dot(z: &Instance, theta: &[f64], v: &[f64]) -> f64 {
    (sigmoid(z.features.dot(theta)) - z.y()) * z.features.dot(v)
}

pub(crate) fn prediction_gradient_at(x: &Features, theta: &[f64]) -> Vec<f64> {
    let p = sigmoid(x.dot(theta));
    let mut g = vec![0.0; theta.len()];
    x.axpy(p * (1.0 - p), &mut g);
    g
}

pub fn risk(rows: &[&Instance], theta: &[f64], lambda: f64) -> f64 {
    let n = rows.len() as f64;
    let data: f64 = rows.iter().map(|z| instance_loss(z, theta)).sum();
    data / n + 0.5 * lambda * dot(theta, theta)
}

pub fn risk_gradient(rows: &[&Instance], theta: &[f64], lambda: f64) -> Vec<f64> {
    let n = rows.len() as f64;
    let mut g = vec![0.0; theta.len()];
    for z in rows {
        let residual = sigmoid(z.features.dot(theta)) - z.y();
        z.features.axpy(residual / n, &mut g);
    }
    for (gj, tj) in g.iter_mut().zip(theta) {
        *gj += lambda * tj;
    }
    g
}

/// `(1/N) Σ σ_i(1 − σ_i) x_i x_iᵀ + λI` over the whole split.
pub fn risk_hessian(split: &DatasetSplit, theta: &[f64], lambda: f64) -> Result<DMatrix<f64>> {
    if theta.len() != split.dim() {
        return Err(Error::Dimension {
            expected: split.dim(),
            got: theta.len(),
        });
    }
    Ok(risk_hessian_rows(&split.rows(), theta, lambda))
}

pub fn risk_hessian_rows(rows: &[&Instance], theta: &[f64], lambda: f64) -> DMatrix<f64> {
    let d = theta.len();
    let n = rows.len() as f64;
    let mut h = DMatrix::<f64>::zeros(d, d);
    let mut nz: Vec<(usize, f64)> = Vec::new();
    for z in rows {
        let p = sigmoid(z.features.dot(theta));
        let w = p * (1.0 - p) / n;
        if w == 0.0 {
            continue;
        }
        nz.clear();
        nz.extend(z.features.nonzeros());
        for (a, &(j, xj)) in nz.iter().enumerate() {
            let wxj = w * xj;
            for &(k, xk) in &nz[a..] {
                // upper triangle only; mirrored below
                h[(j.min(k), j.max(k))] += wxj * xk;
            }
        }
    }
    for j in 0..d {
        h[(j, j)] += lambda;
        for k in j + 1..d {
            h[(k, j)] = h[(j, k)];
        }
    }
    h
}

/// The risk Hessian as a matrix-free operator, for dimensions too large to
/// factor densely.
pub struct HessianOperator<'a> {
    rows: Vec<&'a Instance>,
    weights: Vec<f64>,
    lambda: f64,
    dim: usize,
}

impl<'a> HessianOperator<'a> {
    pub fn new(rows: &[&'a Instance], theta: &[f64], lambda: f64) -> Self {
        let n = rows.len() as f64;
        let weights = rows
            .iter()
            .map(|z| {
                let p = sigmoid(z.features.dot(theta));
                p * (1.0 - p) / n
            })
            .collect();
        Self {
            rows: rows.to_vec(),
            weights,
            lambda,
            dim: theta.len(),
        }
    }
}

impl SpdOperator for HessianOperator<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (o, vj) in out.iter_mut().zip(v) {
            *o = self.lambda * vj;
        }
        for (z, w) in self.rows.iter().zip(&self.weights) {
            let s = w * z.features.dot(v);
            if s != 0.0 {
                z.features.axpy(s, out);
            }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let mut diag = vec![self.lambda; self.dim];
        for (z, w) in self.rows.iter().zip(&self.weights) {
            for (j, x) in z.features.nonzeros() {
                diag[j] += w * x * x;
            }
        }
        diag
    }
}

/// Factored (or matrix-free) risk Hessian over `rows` at `theta`.
pub fn hessian_solver<'a>(
    rows: &[&'a Instance],
    theta: &[f64],
    lambda: f64,
) -> Result<SpdSolver<HessianOperator<'a>>> {
    if theta.len() <= DENSE_DIM_LIMIT {
        SpdSolver::dense(risk_hessian_rows(rows, theta, lambda))
    } else {
        Ok(SpdSolver::Iterative(HessianOperator::new(rows, theta, lambda)))
    }
}

/// The full Newton step `−H(θ)^{-1} ∇R(θ)` of the mean risk over `rows`.
pub fn newton_direction(
    rows: &[&Instance],
    theta: &[f64],
    lambda: f64,
    solver_tol: f64,
) -> Result<Vec<f64>> {
    let g = risk_gradient(rows, theta, lambda);
    let solver = hessian_solver(rows, theta, lambda)?;
    let mut p = solver.solve(&g, solver_tol)?;
    p.iter_mut().for_each(|x| *x = -*x);
    Ok(p)
}

pub fn train(split: &DatasetSplit, hyper: &Hyperparams) -> Result<TrainedModel> {
    train_rows(&split.rows(), split.dim(), hyper)
}

/// Trains on an arbitrary subset of instances. Deterministic: Newton from
/// `θ = 0` with sequential reductions.
pub fn train_rows(rows: &[&Instance], dim: usize, hyper: &Hyperparams) -> Result<TrainedModel> {
    newton(rows, dim, hyper, None)
}

/// Like [`train`], also returning the risk after every iteration (the first
/// entry is the risk at `θ = 0`).
pub fn train_traced(split: &DatasetSplit, hyper: &Hyperparams) -> Result<(TrainedModel, Vec<f64>)> {
    let mut trace = Vec::new();
    let model = newton(&split.rows(), split.dim(), hyper, Some(&mut trace))?;
    Ok((model, trace))
}

fn newton(
    rows: &[&Instance],
    dim: usize,
    hyper: &Hyperparams,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<TrainedModel> {
    hyper.validate()?;
    if rows.is_empty() {
        return Err(Error::Input("cannot train on an empty training set".into()));
    }
    if let Some(z) = rows.iter().find(|z| z.features.dim() != dim) {
        return Err(Error::Dimension {
            expected: dim,
            got: z.features.dim(),
        });
    }
    let lambda = hyper.lambda;
    let mut theta = vec![0.0; dim];
    let mut current = risk(rows, &theta, lambda);
    if let Some(t) = trace.as_deref_mut() {
        t.push(current);
    }
    let mut grad = risk_gradient(rows, &theta, lambda);
    let mut grad_norm = norm(&grad);

    for iter in 0..hyper.newton_max_iter {
        if grad_norm <= hyper.newton_tol {
            return Ok(TrainedModel {
                theta,
                hyper: *hyper,
                final_grad_norm: grad_norm,
                iterations: iter,
            });
        }
        let solver = hessian_solver(rows, &theta, lambda)?;
        let mut step = solver.solve(&grad, hyper.solver_tol)?;
        step.iter_mut().for_each(|x| *x = -*x);
        let slope = dot(&grad, &step);
        if !(slope < 0.0) {
            return Err(Error::Numerical(format!(
                "newton direction is not a descent direction (slope {slope:e})"
            )));
        }

        let full: Vec<f64> = theta.iter().zip(&step).map(|(a, p)| a + p).collect();
        let full_risk = risk(rows, &full, lambda);
        let (next, next_risk) = if full_risk <= current + ARMIJO_C * slope {
            (full, full_risk)
        } else if full_risk <= current + RISK_SLACK
            && norm(&risk_gradient(rows, &full, lambda)) < grad_norm
        {
            // Near the optimum the sufficient decrease falls below the
            // floating resolution of R; the gradient still certifies progress.
            (full, full_risk)
        } else {
            let mut t = BACKTRACK;
            loop {
                let cand: Vec<f64> = theta.iter().zip(&step).map(|(a, p)| a + t * p).collect();
                let r = risk(rows, &cand, lambda);
                if r <= current + ARMIJO_C * t * slope {
                    break (cand, r);
                }
                t *= BACKTRACK;
                if t < MIN_STEP {
                    return Err(Error::Training {
                        iterations: iter + 1,
                        grad_norm,
                    });
                }
            }
        };
        theta = next;
        current = next_risk;
        if let Some(t) = trace.as_deref_mut() {
            t.push(current);
        }
        grad = risk_gradient(rows, &theta, lambda);
        grad_norm = norm(&grad);
    }

    if grad_norm <= hyper.newton_tol {
        Ok(TrainedModel {
            theta,
            hyper: *hyper,
            final_grad_norm: grad_norm,
            iterations: hyper.newton_max_iter,
        })
    } else {
        Err(Error::Training {
            iterations: hyper.newton_max_iter,
            grad_norm,
        })
    }
}
