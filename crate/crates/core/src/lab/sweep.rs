//! Removal sweeps comparing attribution methods: drop each method's top-k
//! training points for a test point, retrain, and measure how far the
//! prediction moves.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionEngine, AttributionMethod};
use crate::dataset::{DatasetSplit, Instance};
use crate::error::{Error, Result};
use crate::fsutil::{write_atomic, write_json_atomic};
use crate::lab::experiment::{csv_err, with_pool};
use crate::lab::retrain::retrain_without;
use crate::model::TrainedModel;

pub const DEFAULT_K_GRID: [usize; 4] = [10, 25, 50, 100];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    /// Mean over test points of `|f'(x_t) − f(x_t)|`.
    pub mean_abs_delta: f64,
    /// Test points whose top-k removal could not be retrained.
    pub n_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub method: AttributionMethod,
    pub points: Vec<SweepPoint>,
}

impl SweepCurve {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.points.iter().find(|p| p.k == k).map(|p| p.mean_abs_delta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionSweepReport {
    pub k_grid: Vec<usize>,
    pub n_test: usize,
    pub seed: u64,
    pub curves: Vec<SweepCurve>,
}

impl AttributionSweepReport {
    pub fn curve(&self, method: AttributionMethod) -> Option<&SweepCurve> {
        self.curves.iter().find(|c| c.method == method)
    }

    /// Rows of `method,k,mean_abs_delta`.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "k", "mean_abs_delta"]).map_err(csv_err)?;
        for c in &self.curves {
            for p in &c.points {
                w.write_record([c.method.name().to_string(), p.k.to_string(), p.mean_abs_delta.to_string()])
                    .map_err(csv_err)?;
            }
        }
        w.into_inner().map_err(|e| csv_err(e.into_error()))
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        write_json_atomic(&out_dir.join("attribution_sweep.json"), self)?;
        write_atomic(&out_dir.join("attribution_sweep.csv"), &self.to_csv()?)
    }
}

/// Mean absolute prediction change after removing each test point's
/// top-`k` training points, for every `k` in `k_grid`, under each method.
///
/// Test points are given an ordinary copy of the model's predicted label so
/// that label-dependent methods score against what the model believes.
pub fn attribution_sweep(
    model: &TrainedModel,
    train: &DatasetSplit,
    test_points: &[Instance],
    methods: &[AttributionMethod],
    k_grid: &[usize],
    seed: u64,
    threads: usize,
) -> Result<AttributionSweepReport> {
    if let Some(&k) = k_grid.iter().find(|&&k| k > train.len()) {
        return Err(Error::Config(format!(
            "k = {k} exceeds the {} training points",
            train.len()
        )));
    }
    let engine = AttributionEngine::new(model, train)?;
    let base: Vec<f64> = test_points
        .iter()
        .map(|x| model.predict_proba(&x.features))
        .collect::<Result<_>>()?;
    let probes: Vec<Instance> = test_points
        .iter()
        .zip(&base)
        .map(|(x, &p)| Instance {
            label: model.hyper.label(p),
            ..x.clone()
        })
        .collect();

    let mut curves = Vec::with_capacity(methods.len());
    for &method in methods {
        // shifts[t][j]: |Δf| for test point t at k_grid[j]; None if skipped.
        let shifts: Vec<Vec<Option<f64>>> = with_pool(threads, || {
            probes
                .par_iter()
                .enumerate()
                .map(|(t, z_t)| {
                    let ranked = engine.scores(method, z_t, seed.wrapping_add(t as u64))?.top_k(train.len());
                    k_grid
                        .iter()
                        .map(|&k| {
                            if k == 0 {
                                return Ok(Some(0.0));
                            }
                            match retrain_without(train, &ranked[..k], &model.hyper) {
                                Ok(m) => Ok(Some((m.predict_proba(&z_t.features)? - base[t]).abs())),
                                Err(Error::DegenerateRemainder(_)) => Ok(None),
                                Err(e) => Err(e),
                            }
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        })??;
        let points = k_grid
            .iter()
            .enumerate()
            .map(|(j, &k)| {
                let vals: Vec<f64> = shifts.iter().filter_map(|row| row[j]).collect();
                SweepPoint {
                    k,
                    mean_abs_delta: if vals.is_empty() {
                        0.0
                    } else {
                        vals.iter().sum::<f64>() / vals.len() as f64
                    },
                    n_skipped: shifts.len() - vals.len(),
                }
            })
            .collect();
        curves.push(SweepCurve { method, points });
    }
    Ok(AttributionSweepReport {
        k_grid: k_grid.to_vec(),
        n_test: test_points.len(),
        seed,
        curves,
    })
}
