//! Symmetric positive definite solves.
//!
//! Small systems are factored densely with Cholesky. Above
//! [`DENSE_DIM_LIMIT`] the Hessian is never materialized and systems are
//! solved with Jacobi-preconditioned conjugate gradient against a
//! matrix-free operator.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Largest dimension for which Hessians are formed and factored densely.
pub const DENSE_DIM_LIMIT: usize = 2000;

/// A symmetric positive definite linear operator.
pub trait SpdOperator {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64], out: &mut [f64]);
    fn diagonal(&self) -> Vec<f64>;
}

impl SpdOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let n = self.nrows();
        for (i, o) in out.iter_mut().enumerate().take(n) {
            *o = (0..n).map(|j| self[(i, j)] * v[j]).sum();
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows()).map(|i| self[(i, i)]).collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn relative_residual(op: &impl SpdOperator, x: &[f64], b: &[f64]) -> f64 {
    let mut hx = vec![0.0; b.len()];
    op.apply(x, &mut hx);
    let r: f64 = hx
        .iter()
        .zip(b)
        .map(|(a, c)| (a - c) * (a - c))
        .sum::<f64>()
        .sqrt();
    r / norm(b)
}

/// Jacobi-preconditioned conjugate gradient.
///
/// Stops when `‖Hx − b‖ / ‖b‖ ≤ tol`. A non-positive curvature direction
/// means the operator is not SPD and is reported as a numerical error.
pub fn conjugate_gradient(
    op: &impl SpdOperator,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let n = op.dim();
    if b.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: b.len(),
        });
    }
    let b_norm = norm(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(x);
    }
    let diag = op.diagonal();
    if let Some(j) = diag.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::Numerical(format!(
            "conjugate gradient: non-positive diagonal entry {} at {j}",
            diag[j]
        )));
    }
    let inv_diag: Vec<f64> = diag.iter().map(|d| 1.0 / d).collect();

    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, m)| r * m).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut hp = vec![0.0; n];

    for iter in 0..max_iter {
        op.apply(&p, &mut hp);
        let curvature = dot(&p, &hp);
        if !(curvature > 0.0) {
            return Err(Error::Numerical(format!(
                "conjugate gradient breakdown at iteration {iter}: pᵀHp = {curvature:e}"
            )));
        }
        let alpha = rz / curvature;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * hp[i];
        }
        if norm(&r) / b_norm <= tol {
            // The recursive residual drifts; confirm against the true one.
            let true_res = relative_residual(op, &x, b);
            if true_res <= tol {
                return Ok(x);
            }
            op.apply(&x, &mut hp);
            for i in 0..n {
                r[i] = b[i] - hp[i];
            }
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Numerical(format!(
        "conjugate gradient did not reach relative residual {tol:e} in {max_iter} iterations \
         (final {:e})",
        relative_residual(op, &x, b)
    )))
}

/// Cholesky solve with a few rounds of iterative refinement if the first
/// solution misses `tol`.
fn cholesky_solve(
    h: &DMatrix<f64>,
    chol: &Cholesky<f64, Dyn>,
    b: &[f64],
    tol: f64,
) -> Result<Vec<f64>> {
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(vec![0.0; b.len()]);
    }
    let rhs = DVector::from_column_slice(b);
    let mut x = chol.solve(&rhs);
    for _ in 0..3 {
        let r = &rhs - h * &x;
        if r.norm() / b_norm <= tol {
            return Ok(x.as_slice().to_vec());
        }
        x += chol.solve(&r);
    }
    let res = (&rhs - h * &x).norm() / b_norm;
    if res <= tol {
        Ok(x.as_slice().to_vec())
    } else {
        Err(Error::Numerical(format!(
            "cholesky solve residual {res:e} exceeds tolerance {tol:e}"
        )))
    }
}

/// Solves `Hx = b` for SPD `H` to relative residual `tol`.
///
/// Dense Cholesky up to [`DENSE_DIM_LIMIT`], conjugate gradient beyond.
pub fn solve_spd(h: &DMatrix<f64>, b: &[f64], tol: f64) -> Result<Vec<f64>> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(Error::Input(format!(
            "matrix is {}x{}, not square",
            n,
            h.ncols()
        )));
    }
    if b.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: b.len(),
        });
    }
    if n <= DENSE_DIM_LIMIT {
        let chol = Cholesky::new(h.clone()).ok_or_else(|| {
            Error::Numerical(format!("cholesky failed: {n}x{n} matrix is not positive definite"))
        })?;
        cholesky_solve(h, &chol, b, tol)
    } else {
        conjugate_gradient(h, b, tol, 10 * n)
    }
}

/// A reusable SPD solver: a dense Cholesky factor, or a matrix-free operator
/// solved by conjugate gradient.
pub enum SpdSolver<Op> {
    Dense {
        matrix: DMatrix<f64>,
        factor: Cholesky<f64, Dyn>,
    },
    Iterative(Op),
}

impl<Op: SpdOperator> SpdSolver<Op> {
    pub fn dense(matrix: DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        let factor = Cholesky::new(matrix.clone()).ok_or_else(|| {
            Error::Numerical(format!("cholesky failed: {n}x{n} Hessian is not positive definite"))
        })?;
        Ok(SpdSolver::Dense { matrix, factor })
    }

    pub fn dim(&self) -> usize {
        match self {
            SpdSolver::Dense { matrix, .. } => matrix.nrows(),
            SpdSolver::Iterative(op) => op.dim(),
        }
    }

    pub fn solve(&self, b: &[f64], tol: f64) -> Result<Vec<f64>> {
        match self {
            SpdSolver::Dense { matrix, factor } => cholesky_solve(matrix, factor, b, tol),
            SpdSolver::Iterative(op) => conjugate_gradient(op, b, tol, 10 * op.dim()),
        }
    }

    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        match self {
            SpdSolver::Dense { matrix, .. } => matrix.apply(v, out),
            SpdSolver::Iterative(op) => op.apply(v, out),
        }
    }
}

/// `H^{-1/2}` through the eigendecomposition, with eigenvalues floored at
/// `floor` first.
pub fn inverse_sqrt(h: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(h.clone());
    let scaled = eig
        .eigenvalues
        .map(|l| 1.0 / l.max(floor).sqrt());
    let q = &eig.eigenvectors;
    q * DMatrix::from_diagonal(&scaled) * q.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    /// Independent reference: Gaussian elimination with partial pivoting.
    fn gauss_solve(h: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut a: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut row: Vec<f64> = (0..n).map(|j| h[(i, j)]).collect();
                row.push(b[i]);
                row
            })
            .collect();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            a.swap(col, piv);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                for k in col..=n {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
            x[i] = (a[i][n] - s) / a[i][i];
        }
        x
    }

    #[test]
    fn identity_returns_rhs() {
        let b = [1.5, -2.0, 0.25];
        let x = solve_spd(&DMatrix::identity(3, 3), &b, 1e-12).unwrap();
        assert_eq!(x, b.to_vec());
    }

    #[test]
    fn scaled_identity() {
        let h = DMatrix::identity(2, 2) * 2.0;
        let x = solve_spd(&h, &[4.0, 0.0], 1e-12).unwrap();
        assert!((x[0] - 2.0).abs() <= 1e-15 && x[1] == 0.0, "{x:?}");
    }

    #[test]
    fn random_spd_matches_elimination_oracle() {
        let h = random_spd(20, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = solve_spd(&h, &b, 1e-12).unwrap();
        let oracle = gauss_solve(&h, &b);
        let err: f64 = x.iter().zip(&oracle).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
        assert!(err / norm(&oracle) <= 1e-8, "relative error {err}");
    }

    #[test]
    fn conjugate_gradient_matches_cholesky() {
        let h = random_spd(30, 11);
        let b: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let cg = conjugate_gradient(&h, &b, 1e-10, 300).unwrap();
        let direct = solve_spd(&h, &b, 1e-12).unwrap();
        for (a, c) in cg.iter().zip(&direct) {
            assert!((a - c).abs() <= 1e-7 * (1.0 + c.abs()));
        }
        assert!(relative_residual(&h, &cg, &b) <= 1e-10);
    }

    #[test]
    fn non_spd_is_reported() {
        let mut h = DMatrix::identity(2, 2);
        h[(1, 1)] = -1.0;
        assert!(matches!(
            solve_spd(&h, &[1.0, 1.0], 1e-8),
            Err(Error::Numerical(_))
        ));
        let mut indefinite = DMatrix::identity(2, 2);
        indefinite[(0, 1)] = 3.0;
        indefinite[(1, 0)] = 3.0;
        assert!(conjugate_gradient(&indefinite, &[1.0, -1.0], 1e-8, 10).is_err());
    }

    #[test]
    fn inverse_sqrt_squares_to_inverse() {
        let h = random_spd(6, 3);
        let s = inverse_sqrt(&h, 0.0);
        let prod = &s * &s * &h;
        assert!((prod - DMatrix::identity(6, 6)).amax() < 1e-9);
    }
}
