//! Small vector helpers, Lanczos extreme-eigenvalue estimation and dense
//! spectral utilities.

use crate::rng::rng_from_seed;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// y += a·x
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Extreme eigenvalue estimates of a symmetric operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtremeEigs {
    pub min: f64,
    pub max: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Which end(s) of the spectrum must converge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Want {
    Min,
    Max,
    Both,
}

/// Lanczos with full reorthogonalization for the smallest and largest
/// eigenvalues of the symmetric operator `op` (`op(x, y)` writes y = Op x).
///
/// Convergence is declared when the Ritz residual of each extreme pair is at
/// most `tol` times the magnitude of its Ritz value, or when the Krylov space
/// becomes invariant.
pub fn lanczos_extremes<F>(n: usize, op: F, max_iter: usize, tol: f64, seed: u64) -> ExtremeEigs
where
    F: FnMut(&[f64], &mut [f64]),
{
    lanczos(n, op, max_iter, tol, seed, Want::Both)
}

/// Lanczos iteration stopping once the requested end(s) converge.
pub fn lanczos<F>(n: usize, mut op: F, max_iter: usize, tol: f64, seed: u64, want: Want) -> ExtremeEigs
where
    F: FnMut(&[f64], &mut [f64]),
{
    let mut rng = rng_from_seed(seed);
    let mut q: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let nq = norm2(&q);
    q.iter_mut().for_each(|v| *v /= nq);
    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];
    let cap = max_iter.min(n).max(1);
    let mut est = ExtremeEigs { min: f64::NAN, max: f64::NAN, iterations: 0, converged: false };
    for j in 0..cap {
        op(&basis[j], &mut w);
        let a = dot(&basis[j], &w);
        alpha.push(a);
        axpy(-a, &basis[j], &mut w);
        if j > 0 {
            axpy(-beta[j - 1], &basis[j - 1], &mut w);
        }
        for _ in 0..2 {
            for v in &basis {
                let c = dot(v, &w);
                axpy(-c, v, &mut w);
            }
        }
        let b = norm2(&w);
        let k = j + 1;
        let check = k <= 20 || k % 5 == 0 || k == cap;
        let tnorm = alpha.iter().chain(beta.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        let invariant = b <= 1e-13 * tnorm.max(f64::MIN_POSITIVE) || k == n;
        if check || invariant {
            let mut t = DMatrix::zeros(k, k);
            for i in 0..k {
                t[(i, i)] = alpha[i];
                if i + 1 < k {
                    t[(i, i + 1)] = beta[i];
                    t[(i + 1, i)] = beta[i];
                }
            }
            let eig = SymmetricEigen::new(t);
            let (mut imin, mut imax) = (0, 0);
            for i in 0..k {
                if eig.eigenvalues[i] < eig.eigenvalues[imin] {
                    imin = i;
                }
                if eig.eigenvalues[i] > eig.eigenvalues[imax] {
                    imax = i;
                }
            }
            let (tmin, tmax) = (eig.eigenvalues[imin], eig.eigenvalues[imax]);
            let rmin = (b * eig.eigenvectors[(k - 1, imin)]).abs();
            let rmax = (b * eig.eigenvectors[(k - 1, imax)]).abs();
            est = ExtremeEigs { min: tmin, max: tmax, iterations: k, converged: false };
            let ok_min = rmin <= tol * tmin.abs();
            let ok_max = rmax <= tol * tmax.abs();
            let done = match want {
                Want::Min => ok_min,
                Want::Max => ok_max,
                Want::Both => ok_min && ok_max,
            };
            if invariant || done {
                est.converged = true;
                return est;
            }
        }
        beta.push(b);
        basis.push(w.iter().map(|v| v / b).collect());
    }
    est
}

/// Extreme eigenvalues of (M + Mᵀ)/2.
pub fn sym_part_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let s = (m + m.transpose()) * 0.5;
    let e = SymmetricEigen::new(s).eigenvalues;
    (e.min(), e.max())
}

/// Smallest and largest singular values.
pub fn singular_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let s = m.clone().singular_values();
    (s.min(), s.max())
}

/// Column-major copy of a slice of column vectors.
pub fn columns_to_matrix(n: usize, cols: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}
