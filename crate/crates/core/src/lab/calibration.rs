use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetSplit, Instance};
use crate::error::Result;
use crate::influence::InfluenceContext;
use crate::lab::retrain::retrain_without;
use crate::model::TrainedModel;
use crate::stats::{mean, pearson};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCalibration {
    pub test_index: usize,
    /// `None` when either side has zero variance.
    pub pearson: Option<f64>,
    pub sign_agreement: f64,
    pub mean_abs_delta: f64,
    pub mean_abs_actual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub n_train: usize,
    pub points: Vec<PointCalibration>,
    /// Mean over the points whose correlation is defined.
    pub mean_pearson: Option<f64>,
    /// Fraction of all (test, train) pairs whose signs agree.
    pub sign_agreement: f64,
}

/// Compares estimated removal deltas to exact removal effects.
pub fn compare(test_index: usize, deltas: &[f64], actual: &[f64]) -> PointCalibration {
    let agree = deltas
        .iter()
        .zip(actual)
        .filter(|(d, a)| d.signum() == a.signum())
        .count();
    let n = deltas.len().max(1) as f64;
    PointCalibration {
        test_index,
        pearson: pearson(deltas, actual),
        sign_agreement: agree as f64 / n,
        mean_abs_delta: deltas.iter().map(|d| d.abs()).sum::<f64>() / n,
        mean_abs_actual: actual.iter().map(|a| a.abs()).sum::<f64>() / n,
    }
}

/// Leave-one-out check of the influence approximation: for every test
/// point, correlate the estimated removal deltas with the exact change in
/// predicted probability after retraining without each training point.
pub fn loo_calibration(
    model: &TrainedModel,
    train: &DatasetSplit,
    test_points: &[Instance],
) -> Result<CalibrationReport> {
    let ctx = InfluenceContext::new(model, train)?;
    let loo_models = (0..train.len())
        .into_par_iter()
        .map(|i| retrain_without(train, &[i], &model.hyper))
        .collect::<Result<Vec<_>>>()?;

    let mut points = Vec::with_capacity(test_points.len());
    let (mut agree, mut pairs) = (0.0, 0usize);
    for x_t in test_points {
        let iv = ctx.prediction_influence(x_t)?;
        let base = model.predict_proba(&x_t.features)?;
        let actual = loo_models
            .iter()
            .map(|m| m.predict_proba(&x_t.features).map(|p| p - base))
            .collect::<Result<Vec<_>>>()?;
        let point = compare(x_t.index, &iv.deltas, &actual);
        agree += point.sign_agreement * actual.len() as f64;
        pairs += actual.len();
        points.push(point);
    }
    let defined: Vec<f64> = points.iter().filter_map(|p| p.pearson).collect();
    Ok(CalibrationReport {
        n_train: train.len(),
        mean_pearson: mean(&defined),
        sign_agreement: if pairs == 0 { 0.0 } else { agree / pairs as f64 },
        points,
    })
}

/// For each subset, the summed removal deltas and the exact retrained
/// change in `f(x_t)`.
pub fn group_effects(
    model: &TrainedModel,
    train: &DatasetSplit,
    x_t: &Instance,
    subsets: &[Vec<usize>],
) -> Result<Vec<(f64, f64)>> {
    let ctx = InfluenceContext::new(model, train)?;
    let iv = ctx.prediction_influence(x_t)?;
    let base = model.predict_proba(&x_t.features)?;
    subsets
        .par_iter()
        .map(|subset| {
            let estimated: f64 = subset.iter().map(|&i| iv.deltas[i]).sum();
            let retrained = retrain_without(train, subset, &model.hyper)?;
            Ok((estimated, retrained.predict_proba(&x_t.features)? - base))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::synthetic::{make_synthetic, SyntheticConfig};
    use crate::model::{train as fit, Hyperparams};

    #[test]
    fn deltas_against_themselves_correlate_perfectly() {
        let d = [0.1, -0.3, 0.02, 0.5];
        let c = compare(0, &d, &d);
        assert!((c.pearson.unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(c.sign_agreement, 1.0);
    }

    #[test]
    fn small_synthetic_correlates() {
        let data = make_synthetic(&SyntheticConfig {
            seed: 3,
            n_train: 8,
            n_test: 4,
            dim: 2,
            separation: 2.0,
            noise_rate: 0.0,
        })
        .unwrap();
        let m = fit(&data.train, &Hyperparams::with_lambda(0.5)).unwrap();
        let report = loo_calibration(&m, &data.train, data.test.instances()).unwrap();
        assert!(report.mean_pearson.unwrap() >= 0.95, "{report:?}");
    }

    #[test]
    fn heavy_regularization_shrinks_effects_but_stays_defined() {
        let data = make_synthetic(&SyntheticConfig {
            seed: 4,
            n_train: 10,
            n_test: 3,
            dim: 2,
            separation: 2.0,
            noise_rate: 0.0,
        })
        .unwrap();
        let light = fit(&data.train, &Hyperparams::with_lambda(0.5)).unwrap();
        let heavy = fit(&data.train, &Hyperparams::with_lambda(1e3)).unwrap();
        let a = loo_calibration(&light, &data.train, data.test.instances()).unwrap();
        let b = loo_calibration(&heavy, &data.train, data.test.instances()).unwrap();
        for (pa, pb) in a.points.iter().zip(&b.points) {
            assert!(pb.mean_abs_actual < pa.mean_abs_actual);
            assert!(pb.mean_abs_delta < 1e-4);
            assert!(pb.pearson.is_some());
        }
    }
}
