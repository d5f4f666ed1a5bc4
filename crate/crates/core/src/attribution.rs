//! Training-instance attribution: influence on prediction and loss plus the
//! similarity and gradient baselines it is compared against.
//!
//! Every method produces one score per training point, oriented so that a
//! higher score means "remove this first".

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetSplit, Instance};
use crate::error::{Error, Result};
use crate::features::Features;
use crate::influence::{argsort_descending, InfluenceContext};
use crate::linalg::{inverse_sqrt, DENSE_DIM_LIMIT};
use crate::model::{risk_hessian_rows, sigmoid, TrainedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AttributionMethod {
    /// Influence on prediction, signed toward flipping the current label.
    Ip,
    /// Influence on the test loss.
    IfLoss,
    Euc,
    Dot,
    Cos,
    /// Cosine of Hessian-whitened loss gradients.
    Rif,
    /// Loss-gradient dot product.
    Gd,
    /// Loss-gradient cosine.
    Gc,
    Random,
}

impl AttributionMethod {
    pub const ALL: [AttributionMethod; 9] = [
        AttributionMethod::Ip,
        AttributionMethod::IfLoss,
        AttributionMethod::Euc,
        AttributionMethod::Dot,
        AttributionMethod::Cos,
        AttributionMethod::Rif,
        AttributionMethod::Gd,
        AttributionMethod::Gc,
        AttributionMethod::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttributionMethod::Ip => "IP",
            AttributionMethod::IfLoss => "IF_LOSS",
            AttributionMethod::Euc => "EUC",
            AttributionMethod::Dot => "DOT",
            AttributionMethod::Cos => "COS",
            AttributionMethod::Rif => "RIF",
            AttributionMethod::Gd => "GD",
            AttributionMethod::Gc => "GC",
            AttributionMethod::Random => "RANDOM",
        }
    }
}

impl fmt::Display for AttributionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttributionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase().replace('-', "_");
        AttributionMethod::ALL
            .into_iter()
            .find(|m| m.name() == upper)
            .ok_or_else(|| Error::Config(format!("unknown attribution method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionScores {
    pub method: AttributionMethod,
    pub scores: Vec<f64>,
    pub seed: Option<u64>,
}

impl AttributionScores {
    /// Train indices of the `k` highest scores; ties go to the lower index.
    pub fn top_k(&self, k: usize) -> Vec<usize> {
        let mut order = argsort_descending(&self.scores);
        order.truncate(k);
        order
    }
}

/// Cosine with the zero-norm convention: 0 when either side vanishes.
fn cosine(dot: f64, norm_a: f64, norm_b: f64) -> f64 {
    if norm_a == 0.0 || norm_b == 0.0 {
        0.0
    } else {
        dot / (norm_a * norm_b)
    }
}

fn squared_distance(x: &Features, dense: &[f64], dense_norm_sq: f64) -> f64 {
    match x {
        Features::Dense(v) => v.iter().zip(dense).map(|(a, b)| (a - b) * (a - b)).sum(),
        Features::Sparse(_) => {
            let correction: f64 = x
                .nonzeros()
                .map(|(j, v)| (dense[j] - v) * (dense[j] - v) - dense[j] * dense[j])
                .sum();
            (dense_norm_sq + correction).max(0.0)
        }
    }
}

struct Whitening {
    /// Floored `H^{-1}`, i.e. `W²` for `W = H^{-1/2}`.
    inverse: DMatrix<f64>,
    /// `‖W x_i‖` for every training row.
    row_norms: Vec<f64>,
}

impl Whitening {
    fn new(h: &DMatrix<f64>, floor: f64, train: &DatasetSplit) -> Self {
        let d = h.nrows();
        let w = inverse_sqrt(h, floor);
        let row_norms = train
            .instances()
            .iter()
            .map(|z| {
                let mut wx = vec![0.0; d];
                for (j, x) in z.features.nonzeros() {
                    for (r, out) in wx.iter_mut().enumerate() {
                        *out += w[(r, j)] * x;
                    }
                }
                wx.iter().map(|v| v * v).sum::<f64>().sqrt()
            })
            .collect();
        Whitening {
            inverse: &w * &w,
            row_norms,
        }
    }
}

/// Scores every method for many test points against one trained model.
pub struct AttributionEngine<'a> {
    model: &'a TrainedModel,
    train: &'a DatasetSplit,
    ctx: InfluenceContext<'a>,
    residuals: Vec<f64>,
    feature_norms: Vec<f64>,
    whitening: OnceLock<Result<Whitening, String>>,
}

impl<'a> AttributionEngine<'a> {
    pub fn new(model: &'a TrainedModel, train: &'a DatasetSplit) -> Result<Self> {
        let ctx = InfluenceContext::new(model, train)?;
        let residuals = train
            .instances()
            .iter()
            .map(|z| sigmoid(z.features.dot(&model.theta)) - z.y())
            .collect();
        let feature_norms = train
            .instances()
            .iter()
            .map(|z| z.features.norm_sq().sqrt())
            .collect();
        Ok(Self {
            model,
            train,
            ctx,
            residuals,
            feature_norms,
            whitening: OnceLock::new(),
        })
    }

    pub fn context(&self) -> &InfluenceContext<'a> {
        &self.ctx
    }

    fn whitening(&self) -> Result<&Whitening> {
        let built = self.whitening.get_or_init(|| {
            let d = self.model.dim();
            if d > DENSE_DIM_LIMIT {
                return Err(format!(
                    "RIF needs a dense eigendecomposition; dimension {d} exceeds {DENSE_DIM_LIMIT}"
                ));
            }
            let lambda = self.model.hyper.lambda;
            let h = risk_hessian_rows(&self.train.rows(), &self.model.theta, lambda);
            Ok(Whitening::new(&h, lambda / 2.0, self.train))
        });
        built.as_ref().map_err(|e| Error::Input(e.clone()))
    }

    /// Scores for `z_t`. Label-dependent methods (IF_LOSS, RIF, GD, GC) use
    /// `z_t.label`; IP orients by the model's own prediction.
    pub fn scores(&self, method: AttributionMethod, z_t: &Instance, seed: u64) -> Result<AttributionScores> {
        let d = self.model.dim();
        z_t.features.check_dim(d)?;
        let rows = self.train.instances();
        let x_t = z_t.features.to_dense();
        let t_norm = z_t.features.norm_sq().sqrt();
        let r_t = sigmoid(z_t.features.dot(&self.model.theta)) - z_t.y();

        let scores: Vec<f64> = match method {
            AttributionMethod::Ip => {
                let iv = self.ctx.prediction_influence(z_t)?;
                let p = sigmoid(z_t.features.dot(&self.model.theta));
                // Positive predictions flip by lowering the probability.
                let orient = if self.model.hyper.label(p) == 1 { -1.0 } else { 1.0 };
                iv.deltas.iter().map(|d| orient * d).collect()
            }
            AttributionMethod::IfLoss => self.ctx.loss_influence(z_t)?,
            AttributionMethod::Euc => {
                let t_norm_sq = z_t.features.norm_sq();
                rows.iter().map(|z| -squared_distance(&z.features, &x_t, t_norm_sq)).collect()
            }
            AttributionMethod::Dot => rows.iter().map(|z| z.features.dot(&x_t)).collect(),
            AttributionMethod::Cos => rows
                .iter()
                .zip(&self.feature_norms)
                .map(|(z, n_i)| cosine(z.features.dot(&x_t), t_norm, *n_i))
                .collect(),
            AttributionMethod::Gd => rows
                .iter()
                .zip(&self.residuals)
                .map(|(z, r_i)| r_t * r_i * z.features.dot(&x_t))
                .collect(),
            AttributionMethod::Gc => rows
                .iter()
                .zip(self.residuals.iter().zip(&self.feature_norms))
                .map(|(z, (r_i, n_i))| {
                    cosine(r_t * r_i * z.features.dot(&x_t), (r_t * t_norm).abs(), (r_i * n_i).abs())
                })
                .collect(),
            AttributionMethod::Rif => {
                let wh = self.whitening()?;
                let u = &wh.inverse * nalgebra::DVector::from_column_slice(&x_t);
                let t_whitened = x_t.iter().zip(u.iter()).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt();
                rows.iter()
                    .zip(self.residuals.iter().zip(&wh.row_norms))
                    .map(|(z, (r_i, wn_i))| {
                        cosine(
                            r_t * r_i * z.features.dot(u.as_slice()),
                            (r_t * t_whitened).abs(),
                            (r_i * wn_i).abs(),
                        )
                    })
                    .collect()
            }
            AttributionMethod::Random => random_scores(rows.len(), seed),
        };
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numerical(format!("{method} produced a non-finite score")));
        }
        Ok(AttributionScores {
            method,
            scores,
            seed: (method == AttributionMethod::Random).then_some(seed),
        })
    }
}

/// A seeded uniform permutation, as scores.
fn random_scores(n: usize, seed: u64) -> Vec<f64> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    perm.into_iter().map(|r| r as f64).collect()
}

/// One-shot attribution of every training point for `z_t`.
pub fn attribution(
    method: AttributionMethod,
    model: &TrainedModel,
    train: &DatasetSplit,
    z_t: &Instance,
    seed: u64,
) -> Result<AttributionScores> {
    AttributionEngine::new(model, train)?.scores(method, z_t, seed)
}
