//! Feature vectors, stored dense or sparse.

use crate::error::{Error, Result};

/// Sorted, duplicate-free sparse vector of fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVec {
    dim: usize,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseVec {
    /// Builds from `(column, value)` pairs. Duplicate columns are summed and
    /// explicit zeros dropped.
    pub fn new(dim: usize, mut entries: Vec<(usize, f64)>) -> Result<Self> {
        entries.sort_by_key(|&(c, _)| c);
        let mut indices = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        for (col, val) in entries {
            if col >= dim {
                return Err(Error::Input(format!(
                    "sparse column {col} out of range for dimension {dim}"
                )));
            }
            if indices.last() == Some(&col) {
                *values.last_mut().unwrap() += val;
            } else {
                indices.push(col);
                values.push(val);
            }
        }
        let (indices, values) = indices
            .into_iter()
            .zip(values)
            .filter(|&(_, v)| v != 0.0)
            .unzip();
        Ok(Self {
            dim,
            indices,
            values,
        })
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Dense(Vec<f64>),
    Sparse(SparseVec),
}

impl Features {
    pub fn dim(&self) -> usize {
        match self {
            Features::Dense(v) => v.len(),
            Features::Sparse(s) => s.dim,
        }
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() == expected {
            Ok(())
        } else {
            Err(Error::Dimension {
                expected,
                got: self.dim(),
            })
        }
    }

    /// Inner product with a dense vector of the same dimension.
    pub fn dot(&self, w: &[f64]) -> f64 {
        debug_assert_eq!(self.dim(), w.len());
        match self {
            Features::Dense(v) => v.iter().zip(w).map(|(a, b)| a * b).sum(),
            Features::Sparse(s) => s.iter().map(|(j, v)| v * w[j]).sum(),
        }
    }

    /// `out += alpha * self`
    pub fn axpy(&self, alpha: f64, out: &mut [f64]) {
        debug_assert_eq!(self.dim(), out.len());
        match self {
            Features::Dense(v) => {
                for (o, x) in out.iter_mut().zip(v) {
                    *o += alpha * x;
                }
            }
            Features::Sparse(s) => {
                for (j, v) in s.iter() {
                    out[j] += alpha * v;
                }
            }
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.nonzeros().map(|(_, v)| v * v).sum()
    }

    /// Iterates `(column, value)`; dense vectors skip exact zeros.
    pub fn nonzeros(&self) -> Box<dyn Iterator<Item = (usize, f64)> + '_> {
        match self {
            Features::Dense(v) => Box::new(
                v.iter()
                    .copied()
                    .enumerate()
                    .filter(|&(_, x)| x != 0.0),
            ),
            Features::Sparse(s) => Box::new(s.iter()),
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        match self {
            Features::Dense(v) => v.clone(),
            Features::Sparse(s) => {
                let mut out = vec![0.0; s.dim];
                for (j, v) in s.iter() {
                    out[j] = v;
                }
                out
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.nonzeros().next().is_none()
    }
}

impl From<Vec<f64>> for Features {
    fn from(v: Vec<f64>) -> Self {
        Features::Dense(v)
    }
}
