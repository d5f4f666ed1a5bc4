//! Seeded Gaussian-blob datasets for experiments with known structure.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetSplit, DatasetSplits, FeatureKind, Instance, SplitKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    /// Feature dimension before the bias column.
    pub dim: usize,
    /// Distance between the two class means.
    pub separation: f64,
    /// Fraction of labels flipped after sampling, per split.
    pub noise_rate: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_train: 1000,
            n_test: 200,
            dim: 10,
            separation: 2.0,
            noise_rate: 0.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train < 2 {
            return Err(Error::Config(format!("n_train must be at least 2, got {}", self.n_train)));
        }
        if self.dim == 0 {
            return Err(Error::Config("dim must be at least 1".into()));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::Config(format!("separation must be finite and non-negative, got {}", self.separation)));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::Config(format!("noise_rate must lie in [0, 1], got {}", self.noise_rate)));
        }
        Ok(())
    }
}

fn sample_split(
    rng: &mut ChaCha8Rng,
    kind: SplitKind,
    n: usize,
    mean: &[f64],
    noise_rate: f64,
) -> Result<DatasetSplit> {
    let dim = mean.len();
    let mut rows: Vec<(Vec<f64>, u8)> = (0..n)
        .map(|_| {
            let label = u8::from(rng.random_bool(0.5));
            let sign = if label == 1 { 1.0 } else { -1.0 };
            let mut x: Vec<f64> = mean
                .iter()
                .map(|m| sign * m + rng.sample::<f64, _>(StandardNormal))
                .collect();
            x.push(1.0);
            (x, label)
        })
        .collect();
    let n_flip = (noise_rate * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    for &i in &order[..n_flip] {
        rows[i].1 = 1 - rows[i].1;
    }
    let instances = rows
        .into_iter()
        .enumerate()
        .map(|(i, (x, y))| Instance::new(i, x, y))
        .collect();
    DatasetSplit::new(kind, dim + 1, instances)
}

/// Two unit-variance Gaussian blobs centred at `±(separation/2)·u` for a
/// seeded random unit vector `u`, balanced in expectation, with a constant
/// bias column appended.
pub fn make_synthetic(config: &SyntheticConfig) -> Result<DatasetSplits> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut u: Vec<f64> = (0..config.dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        u[0] = 1.0;
    } else {
        u.iter_mut().for_each(|v| *v /= norm);
    }
    let mean: Vec<f64> = u.iter().map(|v| v * config.separation / 2.0).collect();
    Ok(DatasetSplits {
        train: sample_split(&mut rng, SplitKind::Train, config.n_train, &mean, config.noise_rate)?,
        test: sample_split(&mut rng, SplitKind::Test, config.n_test, &mean, config.noise_rate)?,
        feature_kind: FeatureKind::Synthetic,
    })
}
