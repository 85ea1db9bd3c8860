//! Sketch matrices V (n×K) for Frobenius semi-norm estimation, sketch-size
//! bounds and coherence diagnostics.

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SketchKind {
    /// First n rows and K columns of H_s/√K.
    RescaledPartialHadamard,
    /// i.i.d. entries ±K^{-1/2}.
    RescaledRademacher,
    /// First n rows of K^{-1/2}(R H_s D)ᵀ.
    Psrht,
}

impl std::str::FromStr for SketchKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hadamard" | "rescaled-partial-hadamard" => Ok(SketchKind::RescaledPartialHadamard),
            "rademacher" | "rescaled-rademacher" => Ok(SketchKind::RescaledRademacher),
            "psrht" | "p-srht" => Ok(SketchKind::Psrht),
            _ => Err(Error::InvalidArgument(format!("unknown sketch kind `{s}`"))),
        }
    }
}

/// Dense n×K sketch matrix with its generating data.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchMatrix {
    kind: SketchKind,
    seed: u64,
    v: DMatrix<f64>,
    /// Hadamard size used (0 for Rademacher).
    s: usize,
    /// Diagonal sign flips D (P-SRHT only).
    signs: Vec<f64>,
    /// Rows of H_s selected by R (P-SRHT only).
    rows: Vec<usize>,
}

fn is_pow2(s: usize) -> bool {
    s >= 1 && s & (s - 1) == 0
}

#[inline]
fn hadamard_sign(i: usize, j: usize) -> f64 {
    if (i & j).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Sylvester-Hadamard matrix H_s built by the Kronecker recursion
/// H_{2s} = H_2 ⊗ H_s.
pub fn hadamard(s: usize) -> Result<DMatrix<f64>> {
    if !is_pow2(s) {
        return Err(Error::InvalidSize(format!("Hadamard size {s} is not a power of 2")));
    }
    let h2 = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, -1.0]);
    let mut h = DMatrix::from_element(1, 1, 1.0);
    while h.nrows() < s {
        h = h2.kronecker(&h);
    }
    Ok(h)
}

impl SketchMatrix {
    pub fn new(kind: SketchKind, n: usize, k: usize, seed: u64) -> Result<Self> {
        if n == 0 || k == 0 {
            return Err(Error::InvalidSize(format!("sketch shape {n}x{k} must be positive")));
        }
        let scale = 1.0 / (k as f64).sqrt();
        match kind {
            SketchKind::RescaledPartialHadamard => {
                let s = n.max(k).next_power_of_two();
                let v = DMatrix::from_fn(n, k, |i, j| hadamard_sign(i, j) * scale);
                Ok(Self { kind, seed, v, s, signs: Vec::new(), rows: Vec::new() })
            }
            SketchKind::RescaledRademacher => {
                let mut rng = rng_from_seed(seed);
                // column-major fill order
                let mut data = Vec::with_capacity(n * k);
                for _ in 0..n * k {
                    data.push(if rng.random_bool(0.5) { scale } else { -scale });
                }
                let v = DMatrix::from_vec(n, k, data);
                Ok(Self { kind, seed, v, s: 0, signs: Vec::new(), rows: Vec::new() })
            }
            SketchKind::Psrht => {
                let s = n.next_power_of_two();
                if k > s {
                    return Err(Error::InvalidSize(format!(
                        "P-SRHT with {k} columns needs at most s = {s} rows to sample"
                    )));
                }
                let mut rng = rng_from_seed(seed);
                let signs: Vec<f64> =
                    (0..s).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
                // partial Fisher-Yates: the first k entries are a uniform sample without replacement
                let mut idx: Vec<usize> = (0..s).collect();
                for i in 0..k {
                    let j = rng.random_range(i..s);
                    idx.swap(i, j);
                }
                let rows = idx[..k].to_vec();
                let v = DMatrix::from_fn(n, k, |i, c| scale * signs[i] * hadamard_sign(rows[c], i));
                Ok(Self { kind, seed, v, s, signs, rows })
            }
        }
    }

    pub fn kind(&self) -> SketchKind {
        self.kind
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn nrows(&self) -> usize {
        self.v.nrows()
    }
    pub fn ncols(&self) -> usize {
        self.v.ncols()
    }
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.v
    }
    pub fn column(&self, c: usize) -> &[f64] {
        let n = self.v.nrows();
        &self.v.as_slice()[c * n..(c + 1) * n]
    }
    /// Hadamard size s (0 for Rademacher).
    pub fn hadamard_size(&self) -> usize {
        self.s
    }
    /// Sign flips D (P-SRHT only).
    pub fn signs(&self) -> &[f64] {
        &self.signs
    }
    /// Sampled Hadamard rows (P-SRHT only).
    pub fn sampled_rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn frobenius_norm2(&self) -> f64 {
        self.v.iter().map(|x| x * x).sum()
    }

    /// Identity sketch V = I_n, which turns the semi-norm into the Frobenius norm.
    pub fn identity(n: usize) -> Self {
        Self {
            kind: SketchKind::RescaledPartialHadamard,
            seed: 0,
            v: DMatrix::identity(n, n),
            s: 0,
            signs: Vec::new(),
            rows: Vec::new(),
        }
    }

    /// Wraps an explicit matrix (for experiments with custom sketches).
    pub fn from_matrix(kind: SketchKind, v: DMatrix<f64>) -> Self {
        Self { kind, seed: 0, v, s: 0, signs: Vec::new(), rows: Vec::new() }
    }
}

pub fn make_sketch(kind: SketchKind, n: usize, k: usize, seed: u64) -> Result<SketchMatrix> {
    SketchMatrix::new(kind, n, k, seed)
}

/// Root-mean-square magnitude of the off-diagonal part of I − VVᵀ:
/// √(‖I − VVᵀ‖_F² / (n(n−1))).
pub fn coherence_err(v: &SketchMatrix) -> Result<f64> {
    let n = v.nrows();
    if n < 2 {
        return Err(Error::InvalidSize("coherence needs at least 2 rows".into()));
    }
    let m = v.matrix();
    let val = if n <= 4096 {
        let mut g = m * m.transpose();
        for i in 0..n {
            g[(i, i)] -= 1.0;
        }
        g.iter().map(|x| x * x).sum::<f64>()
    } else {
        // ‖I − VVᵀ‖² = n − 2‖V‖² + ‖VᵀV‖²
        let g = m.transpose() * m;
        n as f64 - 2.0 * v.frobenius_norm2() + g.iter().map(|x| x * x).sum::<f64>()
    };
    Ok((val.max(0.0) / (n as f64 * (n as f64 - 1.0))).sqrt())
}

/// Lower bound √((n−K)/((n−1)K)) on `coherence_err` for unit-norm rows.
pub fn welch_bound(n: usize, k: usize) -> f64 {
    let (n, k) = (n as f64, k as f64);
    ((n - k).max(0.0) / ((n - 1.0) * k)).sqrt()
}

/// Occupied diagonals (offsets j − i) of VVᵀ for a partial Hadamard sketch
/// with K a power of two. Entries are accumulated in exact integer arithmetic.
pub fn vvt_pattern(v: &SketchMatrix) -> Result<BTreeSet<i64>> {
    if v.kind() != SketchKind::RescaledPartialHadamard || v.hadamard_size() == 0 {
        return Err(Error::InvalidArgument("diagonal pattern is defined for partial Hadamard sketches".into()));
    }
    let (n, k) = (v.nrows(), v.ncols());
    if !is_pow2(k) {
        return Err(Error::InvalidSize(format!("K = {k} is not a power of 2")));
    }
    let mut offsets = BTreeSet::new();
    for i in 0..n {
        for j in i..n {
            let s: i64 = (0..k).map(|c| if (i & c).count_ones() % 2 == (j & c).count_ones() % 2 { 1 } else { -1 }).sum();
            if s != 0 {
                offsets.insert((j - i) as i64);
                offsets.insert(-((j - i) as i64));
            }
        }
    }
    Ok(offsets)
}

/// K from the single-matrix concentration bound for rescaled Rademacher
/// sketches: 6ε⁻² ln(2n/δ).
pub fn rademacher_columns(eps: f64, n: usize, delta: f64) -> f64 {
    6.0 / (eps * eps) * (2.0 * n as f64 / delta).ln()
}

/// K from the single-matrix concentration bound for P-SRHT sketches:
/// 2(ε² − ε³/3)⁻¹ ln(4/δ)(1 + √(8 ln(4n/δ)))².
pub fn psrht_columns(eps: f64, n: usize, delta: f64) -> f64 {
    let t = 1.0 + (8.0 * (4.0 * n as f64 / delta).ln()).sqrt();
    2.0 / (eps * eps - eps.powi(3) / 3.0) * (4.0 / delta).ln() * t * t
}

/// Subspace-extended sketch size at a given net constant C, before rounding.
fn subspace_bound(kind: SketchKind, n: f64, m: usize, eps_prime: f64, c: f64, delta: f64) -> f64 {
    let eps = eps_prime * (c - 1.0) / (c + 1.0);
    // ln((9C/ε)^{m+1})
    let net = (m as f64 + 1.0) * (9.0 * c / eps).ln();
    match kind {
        SketchKind::RescaledRademacher => 6.0 / (eps * eps) * ((2.0 * n / delta).ln() + net),
        _ => {
            // leading logarithm carries the constant 8, not 4
            let t = 1.0 + (8.0 * ((4.0 * n / delta).ln() + net)).sqrt();
            2.0 / (eps * eps - eps.powi(3) / 3.0) * ((8.0 / delta).ln() + net) * t * t
        }
    }
}

/// Smallest number of sketch columns guaranteeing the quasi-optimality ratio
/// √((1+ε′)/(1−ε′)) = `ratio` with probability 1 − `delta` over a span of
/// `m` sampled inverses, minimized over the net constant C > 1.
pub fn min_sketch_columns(kind: SketchKind, n: usize, m: usize, ratio: f64, delta: f64) -> Result<u64> {
    if !(ratio > 1.0) || !ratio.is_finite() {
        return Err(Error::InvalidArgument(format!("quasi-optimality ratio {ratio} must exceed 1")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("probability {delta} must lie in (0, 1)")));
    }
    if kind == SketchKind::RescaledPartialHadamard {
        return Err(Error::InvalidArgument("no probabilistic bound exists for deterministic Hadamard sketches".into()));
    }
    if n == 0 {
        return Err(Error::InvalidSize("n must be positive".into()));
    }
    let r2 = ratio * ratio;
    let eps_prime = (r2 - 1.0) / (r2 + 1.0);
    let f = |lc: f64| subspace_bound(kind, n as f64, m, eps_prime, lc.exp(), delta);
    let (lo, hi) = ((1.0f64 + 1e-4).ln(), 1e3f64.ln());
    let npts = 10_000;
    let step = (hi - lo) / (npts - 1) as f64;
    let mut best: usize = 0;
    let mut best_val = f64::INFINITY;
    for i in 0..npts {
        let v = f(lo + step * i as f64);
        if v < best_val {
            best_val = v;
            best = i;
        }
    }
    // golden-section refinement on the bracketing grid cells
    let mut a = lo + step * best.saturating_sub(1) as f64;
    let mut b = lo + step * (best + 1).min(npts - 1) as f64;
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        }
        if b - a < 1e-14 {
            break;
        }
    }
    let k = best_val.min(f1).min(f2);
    Ok(k.ceil() as u64)
}
