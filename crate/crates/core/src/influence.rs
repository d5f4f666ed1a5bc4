//! Influence of training points on parameters, test loss and test
//! predictions.
//!
//! Removing `z_i` from an `N`-point training set moves the minimizer by
//! approximately `(1/N) H^{-1} ∇L(z_i, θ̂)`. Every delta this module hands
//! out uses that removal convention: `deltas[i]` is the estimated change in
//! the quantity of interest when `z_i` is dropped and the model retrained,
//! in the quantity's own units (probability for predictions, nats for
//! loss). Group removals are estimated by summing deltas.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{normalize_indices, DatasetSplit, Instance};
use crate::error::{Error, Result};
use crate::features::Features;
use crate::model::{
    hessian_solver, loss_grad_dot, loss_grad_unchecked, prediction_gradient_at, HessianOperator,
    TrainedModel,
};
use crate::linalg::SpdSolver;

/// Per-point parameter influence columns `Δ_iθ = H^{-1} ∇L(z_i, θ)`.
///
/// The first-order parameter shift from removing `z_i` (downweighting it by
/// `1/N` in the full objective) is `columns[i] / normalization`.
///
/// Retraining on the remaining points averages over `N − 1` of them with
/// the same λ, which is the full objective with λ scaled by `N/(N − 1)`.
/// One Newton step of that reduced objective from `θ̂` gives
/// `(columns[i] + renormalization) / (N − 1)`; see [`Self::retrain_shift`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamInfluence {
    pub columns: BTreeMap<usize, Vec<f64>>,
    pub base_theta: Vec<f64>,
    pub normalization: f64,
    /// `H^{-1} λθ̂`, shared by every removal.
    pub renormalization: Vec<f64>,
}

impl ParamInfluence {
    /// `columns[i] / N`.
    pub fn shift(&self, i: usize) -> Option<Vec<f64>> {
        let col = self.columns.get(&i)?;
        Some(col.iter().map(|c| c / self.normalization).collect())
    }

    /// One Newton step of the reduced mean objective without `z_i`, from
    /// `θ̂`. `None` if `i` has no column or `N = 1`.
    pub fn retrain_shift(&self, i: usize) -> Option<Vec<f64>> {
        let col = self.columns.get(&i)?;
        let m = self.normalization - 1.0;
        (m > 0.0).then(|| col.iter().zip(&self.renormalization).map(|(c, r)| (c + r) / m).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaConvention {
    /// Change in predicted probability when the point is removed.
    RemovalProbability,
    /// Change in test loss when the point is removed.
    RemovalLoss,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceVector {
    pub test_index: usize,
    /// Train index of each entry in `deltas`.
    pub indices: Vec<usize>,
    pub deltas: Vec<f64>,
    pub convention: DeltaConvention,
}

impl InfluenceVector {
    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    /// Estimated effect of removing every point in `subset` (train indices).
    pub fn group_effect(&self, subset: &[usize]) -> f64 {
        self.indices
            .iter()
            .zip(&self.deltas)
            .filter(|(i, _)| subset.contains(i))
            .map(|(_, d)| d)
            .sum()
    }
}

/// A Hessian factorization over a fixed set of training rows at a fixed
/// parameter vector, reused across many test points.
pub struct InfluenceContext<'a> {
    rows: Vec<&'a Instance>,
    theta: Vec<f64>,
    solver: SpdSolver<HessianOperator<'a>>,
    lambda: f64,
    solver_tol: f64,
}

impl<'a> InfluenceContext<'a> {
    /// Context for a model trained on `split`.
    pub fn new(model: &TrainedModel, split: &'a DatasetSplit) -> Result<Self> {
        if model.dim() != split.dim() {
            return Err(Error::Dimension {
                expected: split.dim(),
                got: model.dim(),
            });
        }
        Self::at(
            split.rows(),
            model.theta.clone(),
            model.hyper.lambda,
            model.hyper.solver_tol,
        )
    }

    /// Context for the mean risk over `rows`, evaluated at `theta`.
    pub fn at(rows: Vec<&'a Instance>, theta: Vec<f64>, lambda: f64, solver_tol: f64) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Input("influence needs at least one training row".into()));
        }
        let solver = hessian_solver(&rows, &theta, lambda)?;
        Ok(Self {
            rows,
            theta,
            solver,
            lambda,
            solver_tol,
        })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[&'a Instance] {
        &self.rows
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn solver_tol(&self) -> f64 {
        self.solver_tol
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.solver.solve(b, self.solver_tol)
    }

    /// `H v` for the factored Hessian.
    pub fn hessian_apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.solver.apply(v, &mut out);
        out
    }

    /// One solve `H v = direction`, then `(1/N) vᵀ ∇L(z_i)` for each `z_i`
    /// in `points`. `points` need not belong to the context's rows.
    pub fn removal_deltas(&self, direction: &[f64], points: &[&Instance]) -> Result<Vec<f64>> {
        let v = self.solve(direction)?;
        let n = self.n() as f64;
        let deltas: Vec<f64> = points
            .iter()
            .map(|z| loss_grad_dot(z, &self.theta, &v) / n)
            .collect();
        if let Some(pos) = deltas.iter().position(|d| !d.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite influence for train index {}",
                points[pos].index
            )));
        }
        Ok(deltas)
    }

    /// Removal effect of each context row on `σ(θᵀx_t)`.
    pub fn prediction_influence(&self, x_t: &Instance) -> Result<InfluenceVector> {
        x_t.features.check_dim(self.theta.len())?;
        let grad_f = prediction_gradient_at(&x_t.features, &self.theta);
        let deltas = self.removal_deltas(&grad_f, &self.rows)?;
        Ok(InfluenceVector {
            test_index: x_t.index,
            indices: self.rows.iter().map(|z| z.index).collect(),
            deltas,
            convention: DeltaConvention::RemovalProbability,
        })
    }

    /// Removal effect of each `point` on `σ(θᵀx)`, using this context's
    /// Hessian and normalization.
    pub fn prediction_deltas_for(&self, x: &Features, points: &[&Instance]) -> Result<Vec<f64>> {
        x.check_dim(self.theta.len())?;
        let grad_f = prediction_gradient_at(x, &self.theta);
        self.removal_deltas(&grad_f, points)
    }

    /// Removal effect of each context row on the loss of `z_t`.
    pub fn loss_influence(&self, z_t: &Instance) -> Result<Vec<f64>> {
        z_t.features.check_dim(self.theta.len())?;
        let grad_l = loss_grad_unchecked(z_t, &self.theta);
        self.removal_deltas(&grad_l, &self.rows)
    }

    /// `H^{-1} ∇L(z_i)` for each requested train index (one solve each).
    pub fn param_influence(&self, subset: &[usize]) -> Result<ParamInfluence> {
        let lookup: BTreeMap<usize, &Instance> =
            self.rows.iter().map(|z| (z.index, *z)).collect();
        let mut wanted = Vec::with_capacity(subset.len());
        for i in subset {
            let z = lookup.get(i).ok_or_else(|| {
                Error::Input(format!("train index {i} is not among the influence rows"))
            })?;
            wanted.push(*z);
        }
        wanted.sort_by_key(|z| z.index);
        wanted.dedup_by_key(|z| z.index);
        let columns = wanted
            .par_iter()
            .map(|z| {
                let g = loss_grad_unchecked(z, &self.theta);
                self.solve(&g).map(|col| (z.index, col))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        let scaled: Vec<f64> = self.theta.iter().map(|t| self.lambda * t).collect();
        Ok(ParamInfluence {
            columns,
            base_theta: self.theta.clone(),
            normalization: self.n() as f64,
            renormalization: self.solve(&scaled)?,
        })
    }
}

/// `Δ_iθ = H^{-1} ∇L(z_i, θ̂)` for each index in `subset`.
pub fn param_influence(
    model: &TrainedModel,
    train: &DatasetSplit,
    subset: &[usize],
) -> Result<ParamInfluence> {
    let subset = normalize_indices(subset, train.len())?;
    InfluenceContext::new(model, train)?.param_influence(&subset)
}

/// Estimated change in `f(x_t)` from removing each training point, with a
/// single Hessian solve.
pub fn prediction_influence(
    model: &TrainedModel,
    train: &DatasetSplit,
    x_t: &Instance,
) -> Result<InfluenceVector> {
    InfluenceContext::new(model, train)?.prediction_influence(x_t)
}

/// Estimated change in the loss of `z_t` from removing each training point.
pub fn loss_influence(model: &TrainedModel, train: &DatasetSplit, z_t: &Instance) -> Result<Vec<f64>> {
    InfluenceContext::new(model, train)?.loss_influence(z_t)
}

/// Stable descending argsort; ties go to the lower index.
pub fn argsort_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Stable ascending argsort; ties go to the lower index.
pub fn argsort_ascending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SplitKind;
    use crate::lab::retrain_without;
    use crate::model::{train, Hyperparams};
    use crate::stats::pearson;

    fn split(rows: &[(&[f64], u8)]) -> DatasetSplit {
        let d = rows[0].0.len();
        DatasetSplit::from_parts(
            SplitKind::Train,
            d,
            rows.iter().map(|(x, y)| (Features::Dense(x.to_vec()), *y)),
        )
        .unwrap()
    }

    fn eight() -> DatasetSplit {
        split(&[
            (&[1.0, 2.0, 1.0], 1),
            (&[2.0, 1.5, 1.0], 1),
            (&[1.5, -0.5, 1.0], 1),
            (&[-0.5, 1.0, 1.0], 1),
            (&[-1.0, -2.0, 1.0], 0),
            (&[-2.0, -0.5, 1.0], 0),
            (&[0.5, -1.5, 1.0], 0),
            (&[1.0, 0.5, 1.0], 0),
        ])
    }

    #[test]
    fn zero_gradient_instance_has_zero_column_and_delta() {
        let s = split(&[
            (&[1.0, 0.5], 1),
            (&[-1.0, 0.2], 0),
            (&[0.0, 0.0], 1),
            (&[0.5, -1.0], 0),
        ]);
        let m = train(&s, &Hyperparams::with_lambda(0.3)).unwrap();
        let pi = param_influence(&m, &s, &[2]).unwrap();
        assert_eq!(pi.columns[&2], vec![0.0, 0.0]);
        let xt = Instance::new(0, vec![0.3, 0.9], 1);
        let iv = prediction_influence(&m, &s, &xt).unwrap();
        assert_eq!(iv.deltas[2], 0.0);
    }

    #[test]
    fn zero_test_vector_has_zero_deltas() {
        let s = eight();
        let m = train(&s, &Hyperparams::with_lambda(0.5)).unwrap();
        let xt = Instance::new(0, vec![0.0; 3], 0);
        let iv = prediction_influence(&m, &s, &xt).unwrap();
        assert!(iv.deltas.iter().all(|&d| d == 0.0));
        assert_eq!(iv.len(), 8);
    }

    #[test]
    fn one_dimensional_influence_is_scalar_division() {
        let s = split(&[(&[1.0], 1), (&[2.0], 1), (&[-1.5], 0), (&[0.5], 0)]);
        let m = train(&s, &Hyperparams::with_lambda(0.4)).unwrap();
        let h = crate::model::risk_hessian(&s, &m.theta, 0.4).unwrap()[(0, 0)];
        let pi = param_influence(&m, &s, &[0, 1, 2, 3]).unwrap();
        for z in s.instances() {
            let g = crate::model::loss_grad(z, &m.theta).unwrap()[0];
            assert!((pi.columns[&z.index][0] - g / h).abs() <= 1e-14 * (1.0 + (g / h).abs()));
        }
        let zt = Instance::new(0, vec![0.7], 1);
        let li = loss_influence(&m, &s, &zt).unwrap();
        let gt = crate::model::loss_grad(&zt, &m.theta).unwrap()[0];
        for (z, got) in s.instances().iter().zip(&li) {
            let gi = crate::model::loss_grad(z, &m.theta).unwrap()[0];
            let want = gt * gi / h / 4.0;
            assert!((got - want).abs() <= 1e-14);
        }
    }

    fn six() -> DatasetSplit {
        split(&[
            (&[1.0, 0.2, 1.0], 1),
            (&[0.4, 1.1, 1.0], 1),
            (&[-0.3, 0.8, 1.0], 1),
            (&[-1.2, -0.4, 1.0], 0),
            (&[0.1, -1.0, 1.0], 0),
            (&[-0.6, 0.3, 1.0], 0),
        ])
    }

    fn relative_error(approx: &[f64], exact: &[f64]) -> f64 {
        let err: f64 = approx.iter().zip(exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        err / exact.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn parameter_columns_approximate_leave_one_out() {
        let s = six();
        let hyper = Hyperparams::with_lambda(0.5);
        let m = train(&s, &hyper).unwrap();
        let pi = param_influence(&m, &s, &[0, 1, 2, 3, 4, 5]).unwrap();
        for i in 0..6 {
            let loo = retrain_without(&s, &[i], &hyper).unwrap();
            let approx: Vec<f64> = m.theta.iter().zip(pi.retrain_shift(i).unwrap()).map(|(t, d)| t + d).collect();
            let err = relative_error(&approx, &loo.theta);
            assert!(err <= 0.10, "point {i}: relative error {err}");
        }
    }

    #[test]
    fn first_order_and_retrain_shifts_differ_by_the_shared_term() {
        let s = six();
        let m = train(&s, &Hyperparams::with_lambda(0.5)).unwrap();
        let pi = param_influence(&m, &s, &[2, 4]).unwrap();
        for i in [2, 4] {
            let first = pi.shift(i).unwrap();
            let step = pi.retrain_shift(i).unwrap();
            for j in 0..3 {
                let rebuilt = (6.0 * first[j] + pi.renormalization[j]) / 5.0;
                assert!((rebuilt - step[j]).abs() <= 1e-14);
            }
        }
        assert!(pi.shift(0).is_none());
    }

    #[test]
    fn prediction_deltas_track_leave_one_out() {
        let s = eight();
        let hyper = Hyperparams::with_lambda(0.5);
        let m = train(&s, &hyper).unwrap();
        let xt = Instance::new(0, vec![0.4, 0.3, 1.0], 1);
        let iv = prediction_influence(&m, &s, &xt).unwrap();
        let base = m.predict_proba(&xt.features).unwrap();
        let actual: Vec<f64> = (0..8)
            .map(|i| {
                retrain_without(&s, &[i], &hyper)
                    .unwrap()
                    .predict_proba(&xt.features)
                    .unwrap()
                    - base
            })
            .collect();
        let r = pearson(&iv.deltas, &actual).unwrap();
        let agree = iv
            .deltas
            .iter()
            .zip(&actual)
            .filter(|(a, b)| a.signum() == b.signum())
            .count();
        assert!(r >= 0.95, "pearson {r}");
        assert!(agree >= 7, "sign agreement {agree}/8");
    }

    #[test]
    fn loss_influence_signs_track_leave_one_out() {
        let s = eight();
        let hyper = Hyperparams::with_lambda(0.5);
        let m = train(&s, &hyper).unwrap();
        let zt = Instance::new(0, vec![0.4, 0.3, 1.0], 1);
        let li = loss_influence(&m, &s, &zt).unwrap();
        let base = crate::model::instance_loss(&zt, &m.theta);
        let agree = (0..8)
            .filter(|&i| {
                let loo = retrain_without(&s, &[i], &hyper).unwrap();
                let change = crate::model::instance_loss(&zt, &loo.theta) - base;
                change.signum() == li[i].signum()
            })
            .count();
        assert!(agree >= 7, "sign agreement {agree}/8");
    }

    #[test]
    fn one_solve_matches_per_point_solves() {
        let s = eight();
        let m = train(&s, &Hyperparams::with_lambda(0.2)).unwrap();
        let xt = Instance::new(3, vec![-0.2, 0.9, 1.0], 0);
        let iv = prediction_influence(&m, &s, &xt).unwrap();
        let pi = param_influence(&m, &s, &(0..8).collect::<Vec<_>>()).unwrap();
        let grad_f = m.prediction_gradient(&xt.features).unwrap();
        for i in 0..8 {
            let naive: f64 = grad_f.iter().zip(&pi.columns[&i]).map(|(a, b)| a * b).sum::<f64>() / 8.0;
            assert!((naive - iv.deltas[i]).abs() <= 10.0 * m.hyper.solver_tol * (1.0 + naive.abs()));
        }
        assert_eq!(iv.test_index, 3);
    }

    #[test]
    fn invalid_subset_index_is_rejected() {
        let s = eight();
        let m = train(&s, &Hyperparams::default()).unwrap();
        assert!(param_influence(&m, &s, &[8]).is_err());
    }

    #[test]
    fn argsorts_are_stable() {
        let s = [0.5, 1.0, 0.5, -2.0];
        assert_eq!(argsort_descending(&s), vec![1, 0, 2, 3]);
        assert_eq!(argsort_ascending(&s), vec![3, 0, 2, 1]);
    }
}
