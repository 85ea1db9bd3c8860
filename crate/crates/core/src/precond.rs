//! Frobenius (semi-)norm projection onto a span of sampled inverses: normal
//! equations, coefficient solvers, spectral constants and dense diagnostics.

use crate::error::{check_len, Error, Result};
use crate::linalg::{dot, lanczos, sym_part_extremes, Want};
use crate::operators::{AffineOperator, LinearMap};
use crate::sketch::SketchMatrix;
use crate::sparse::CsrMatrix;
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

/// Sampled inverses P_i = A(ξ_i)⁻¹ spanning the preconditioner space.
#[derive(Clone)]
pub struct InverseBasis {
    n: usize,
    points: Vec<Vec<f64>>,
    inverses: Vec<Arc<dyn LinearMap>>,
}

impl fmt::Debug for InverseBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InverseBasis").field("n", &self.n).field("points", &self.points).finish()
    }
}

impl InverseBasis {
    pub fn new(n: usize) -> Self {
        Self { n, points: Vec::new(), inverses: Vec::new() }
    }

    /// Factorizes the operator at each point.
    pub fn from_operator(op: &AffineOperator, points: &[Vec<f64>]) -> Result<Self> {
        let mut b = Self::new(op.dim());
        for p in points {
            b.push(p.clone(), Arc::new(op.factorize_at(p)?))?;
        }
        Ok(b)
    }

    pub fn push(&mut self, point: Vec<f64>, inverse: Arc<dyn LinearMap>) -> Result<()> {
        check_len(self.n, inverse.dim())?;
        if self.points.iter().any(|p| *p == point) {
            return Err(Error::InvalidArgument(format!("point {point:?} is already in the basis")));
        }
        self.points.push(point);
        self.inverses.push(inverse);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
    pub fn dim(&self) -> usize {
        self.n
    }
    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }
    pub fn inverse(&self, i: usize) -> &Arc<dyn LinearMap> {
        &self.inverses[i]
    }
    pub fn inverses(&self) -> &[Arc<dyn LinearMap>] {
        &self.inverses
    }

    /// Basis restricted to its first `m` elements.
    pub fn truncated(&self, m: usize) -> Self {
        Self {
            n: self.n,
            points: self.points[..m].to_vec(),
            inverses: self.inverses[..m].to_vec(),
        }
    }
}

/// M λ = S with M_ij = ⟨P_iAV, P_jAV⟩_F, S_i = ⟨V, P_iAV⟩_F and vnorm2 = ‖V‖_F².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalEq {
    #[serde(with = "dense_rows")]
    pub m: DMatrix<f64>,
    pub s: Vec<f64>,
    pub vnorm2: f64,
}

pub(crate) mod dense_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let nr = rows.len();
        let nc = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != nc) {
            return Err(serde::de::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
    }
}

impl NormalEq {
    pub fn len(&self) -> usize {
        self.s.len()
    }
    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// ‖(I − Σλ_iP_iA)V‖_F² = vnorm2 − 2λᵀS + λᵀMλ (unclamped).
    pub fn raw_objective(&self, lambda: &[f64]) -> f64 {
        let l = DVector::from_column_slice(lambda);
        self.vnorm2 - 2.0 * dot(lambda, &self.s) + l.dot(&(&self.m * &l))
    }

    /// Objective clamped at zero.
    pub fn objective(&self, lambda: &[f64]) -> f64 {
        let v = self.raw_objective(lambda);
        if v < -1e-10 * self.vnorm2 {
            log::warn!("normal-equation objective {v:e} is negative beyond roundoff");
        }
        v.max(0.0)
    }

    /// Weighted sum of normal equations (used by the online surrogate).
    pub fn combination(terms: &[(f64, &NormalEq)]) -> Self {
        let first = terms[0].1;
        let mut m = DMatrix::zeros(first.m.nrows(), first.m.ncols());
        let mut s = vec![0.0; first.s.len()];
        let mut vnorm2 = 0.0;
        for (c, ne) in terms {
            m += &ne.m * *c;
            for (a, b) in s.iter_mut().zip(&ne.s) {
                *a += c * b;
            }
            vnorm2 += c * ne.vnorm2;
        }
        Self { m, s, vnorm2 }
    }
}

/// Products W_i = P_i A V for one fixed operator A, extended as the basis grows.
#[derive(Debug, Clone)]
pub struct SketchedProducts {
    av: DMatrix<f64>,
    ws: Vec<DMatrix<f64>>,
    m: DMatrix<f64>,
    s: Vec<f64>,
    vnorm2: f64,
    v: DMatrix<f64>,
}

impl SketchedProducts {
    pub fn new(a: &CsrMatrix, v: &SketchMatrix) -> Result<Self> {
        check_len(a.ncols(), v.nrows())?;
        Ok(Self {
            av: a.mul_dense(v.matrix()),
            ws: Vec::new(),
            m: DMatrix::zeros(0, 0),
            s: Vec::new(),
            vnorm2: v.frobenius_norm2(),
            v: v.matrix().clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.ws.len()
    }
    pub fn is_empty(&self) -> bool {
        self.ws.is_empty()
    }

    /// Computes W_i for the basis elements not yet processed (K solves each).
    pub fn extend(&mut self, basis: &InverseBasis) -> Result<()> {
        check_len(self.av.nrows(), basis.dim())?;
        let k = self.av.ncols();
        if basis.len() > k {
            return Err(Error::SketchTooSmall { columns: k, basis: basis.len() });
        }
        let n = self.av.nrows();
        let old = self.ws.len();
        for i in old..basis.len() {
            let p = basis.inverse(i);
            let cols: Vec<Vec<f64>> = (0..k)
                .into_par_iter()
                .map(|c| {
                    let src = &self.av.as_slice()[c * n..(c + 1) * n];
                    let mut out = vec![0.0; n];
                    let mut work = vec![0.0; n];
                    p.apply_into(src, &mut out, false, &mut work);
                    out
                })
                .collect();
            let mut w = DMatrix::zeros(n, k);
            for (c, col) in cols.iter().enumerate() {
                w.as_mut_slice()[c * n..(c + 1) * n].copy_from_slice(col);
            }
            self.ws.push(w);
        }
        let m = self.ws.len();
        let mut mm = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                mm[(i, j)] = if i < old && j < old {
                    self.m[(i, j)]
                } else if j < i {
                    mm[(j, i)]
                } else {
                    dot(self.ws[i].as_slice(), self.ws[j].as_slice())
                };
            }
        }
        for i in old..m {
            self.s.push(dot(self.v.as_slice(), self.ws[i].as_slice()));
        }
        self.m = mm;
        Ok(())
    }

    pub fn normal_eq(&self) -> NormalEq {
        NormalEq { m: self.m.clone(), s: self.s.clone(), vnorm2: self.vnorm2 }
    }

    /// W_i = P_i A V.
    pub fn product(&self, i: usize) -> &DMatrix<f64> {
        &self.ws[i]
    }

    /// Heap bytes held by the cached products.
    pub fn memory_bytes(&self) -> usize {
        8 * (self.av.len() + self.v.len() + self.ws.iter().map(|w| w.len()).sum::<usize>())
    }
}

/// Sketched normal equations at the operator matrix `a` (m·K inverse applications).
pub fn assemble_normal_eq(a: &CsrMatrix, basis: &InverseBasis, v: &SketchMatrix) -> Result<NormalEq> {
    if basis.len() > v.ncols() {
        return Err(Error::SketchTooSmall { columns: v.ncols(), basis: basis.len() });
    }
    let mut sp = SketchedProducts::new(a, v)?;
    sp.extend(basis)?;
    Ok(sp.normal_eq())
}

/// Feasible set of the coefficient problem.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ConstraintMode {
    #[default]
    Unconstrained,
    Nonneg,
    Kappa(f64),
}

impl FromStr for ConstraintMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "unconstrained" => Ok(Self::Unconstrained),
            "nonneg" => Ok(Self::Nonneg),
            _ => match s.strip_prefix("kappa:") {
                Some(v) => {
                    let k: f64 = v
                        .parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad kappa bound `{v}`")))?;
                    if !(k > 0.0) || !k.is_finite() {
                        return Err(Error::InvalidArgument(format!("bad kappa bound `{v}`")));
                    }
                    Ok(Self::Kappa(k))
                }
                None => Err(Error::InvalidArgument(format!(
                    "unknown constraint `{s}` (expected none, nonneg or kappa:<value>)"
                ))),
            },
        }
    }
}

impl fmt::Display for ConstraintMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Unconstrained => write!(f, "none"),
            Self::Nonneg => write!(f, "nonneg"),
            Self::Kappa(k) => write!(f, "kappa:{k}"),
        }
    }
}

impl Serialize for ConstraintMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ConstraintMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Coefficients λ(ξ) and the attained objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSolution {
    pub lambda: Vec<f64>,
    /// Split λ = λ⁺ − λ⁻ (kappa mode only).
    pub lambda_plus: Option<Vec<f64>>,
    pub lambda_minus: Option<Vec<f64>>,
    pub mode: ConstraintMode,
    pub objective: f64,
    /// Set when M was numerically singular and a minimum-norm solution was used.
    pub rank_deficient: bool,
}

/// Solves the symmetric system, falling back to the minimum-norm
/// least-squares solution when M is numerically singular.
fn solve_symmetric(m: &DMatrix<f64>, s: &[f64]) -> (Vec<f64>, bool) {
    let k = s.len();
    if k == 0 {
        return (Vec::new(), false);
    }
    let rhs = DVector::from_column_slice(s);
    let eig = SymmetricEigen::new(m.clone());
    let mu_max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mu_min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    let cutoff = 1e-13 * mu_max;
    if mu_min > cutoff {
        if let Some(ch) = Cholesky::new(m.clone()) {
            return (ch.solve(&rhs).iter().copied().collect(), false);
        }
    }
    let mut x = DVector::zeros(k);
    for (j, &mu) in eig.eigenvalues.iter().enumerate() {
        if mu > cutoff {
            let q = eig.eigenvectors.column(j);
            x += q * (q.dot(&rhs) / mu);
        }
    }
    (x.iter().copied().collect(), true)
}

pub fn solve_unconstrained(ne: &NormalEq) -> CoefficientSolution {
    let (lambda, rank_deficient) = solve_symmetric(&ne.m, &ne.s);
    if rank_deficient {
        log::warn!("normal-equation matrix is rank deficient; using the minimum-norm solution");
    }
    let objective = ne.objective(&lambda);
    CoefficientSolution {
        lambda,
        lambda_plus: None,
        lambda_minus: None,
        mode: ConstraintMode::Unconstrained,
        objective,
        rank_deficient,
    }
}

/// min ½λᵀMλ − Sᵀλ subject to λ ≥ 0 (Lawson-Hanson active set on the
/// normal equations).
pub fn nnls_normal(m: &DMatrix<f64>, s: &[f64]) -> Vec<f64> {
    let k = s.len();
    let mut x = vec![0.0; k];
    if k == 0 {
        return x;
    }
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())) + s.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-13 * scale.max(f64::MIN_POSITIVE);
    let mut passive = vec![false; k];
    let grad = |x: &[f64]| -> Vec<f64> {
        let mx = m * DVector::from_column_slice(x);
        (0..k).map(|i| s[i] - mx[i]).collect()
    };
    let sub_solve = |passive: &[bool]| -> Vec<f64> {
        let idx: Vec<usize> = (0..k).filter(|&i| passive[i]).collect();
        let mp = DMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])]);
        let sp: Vec<f64> = idx.iter().map(|&i| s[i]).collect();
        let (z, _) = solve_symmetric(&mp, &sp);
        let mut full = vec![0.0; k];
        for (a, &i) in idx.iter().enumerate() {
            full[i] = z[a];
        }
        full
    };
    let max_outer = 3 * k + 10;
    for _ in 0..max_outer {
        let w = grad(&x);
        let cand = (0..k).filter(|&i| !passive[i]).max_by(|&a, &b| w[a].total_cmp(&w[b]).then(b.cmp(&a)));
        let j = match cand {
            Some(j) if w[j] > tol => j,
            _ => break,
        };
        passive[j] = true;
        let mut z = sub_solve(&passive);
        let mut inner = 0;
        while (0..k).any(|i| passive[i] && z[i] <= 0.0) && inner < 3 * k + 10 {
            inner += 1;
            let mut alpha = f64::INFINITY;
            for i in 0..k {
                if passive[i] && z[i] <= 0.0 {
                    alpha = alpha.min(x[i] / (x[i] - z[i]));
                }
            }
            for i in 0..k {
                x[i] += alpha * (z[i] - x[i]);
            }
            for i in 0..k {
                if passive[i] && x[i] <= tol.max(1e-15 * x[i].abs()) {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
            z = sub_solve(&passive);
        }
        x = z;
        if passive.iter().all(|&p| p) {
            break;
        }
    }
    x.iter_mut().for_each(|v| *v = v.max(0.0));
    x
}

pub fn solve_nonneg(ne: &NormalEq) -> CoefficientSolution {
    let lambda = nnls_normal(&ne.m, &ne.s);
    let objective = ne.objective(&lambda);
    CoefficientSolution {
        lambda,
        lambda_plus: None,
        lambda_minus: None,
        mode: ConstraintMode::Nonneg,
        objective,
        rank_deficient: false,
    }
}

/// Primal active-set method for min ½xᵀHx − gᵀx s.t. a_iᵀx ≥ 0 for every row
/// of `a`, started from x = 0 with the first `n` rows (the bounds x ≥ 0) as
/// working set. H must be positive definite on the feasible directions.
fn active_set_qp(h: &DMatrix<f64>, g: &DVector<f64>, a: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = h.nrows();
    let rows = a.nrows();
    let mut x = DVector::zeros(n);
    let mut work: Vec<usize> = (0..n).collect();
    let scale = h.iter().fold(0.0f64, |m, v| m.max(v.abs())) + g.amax();
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let cap = 50 * (n + rows) + 100;
    for _ in 0..cap {
        let nw = work.len();
        let dim = n + nw;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(h);
        for (r, &i) in work.iter().enumerate() {
            for j in 0..n {
                kkt[(j, n + r)] = -a[(i, j)];
                kkt[(n + r, j)] = a[(i, j)];
            }
        }
        let grad = h * &x - g;
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, n).copy_from(&(-&grad));
        let sol = match kkt.clone().lu().solve(&rhs) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => kkt.svd(true, true).solve(&rhs, 1e-14).map_err(|e| Error::InvalidArgument(e.into()))?,
        };
        let p = sol.rows(0, n).into_owned();
        if p.amax() <= 1e-12 * (1.0 + x.amax()) {
            let mu = sol.rows(n, nw);
            let (jmin, mumin) = mu.iter().enumerate().fold((usize::MAX, 0.0f64), |acc, (j, &v)| {
                if v < acc.1 { (j, v) } else { acc }
            });
            if jmin == usize::MAX || mumin >= -tol {
                return Ok(x);
            }
            work.remove(jmin);
            continue;
        }
        let mut alpha = 1.0f64;
        let mut block = None;
        for i in 0..rows {
            if work.contains(&i) {
                continue;
            }
            let ap = a.row(i).dot(&p.transpose());
            if ap < -1e-14 * p.amax() {
                let ax = a.row(i).dot(&x.transpose());
                let t = (-ax / ap).max(0.0);
                if t < alpha {
                    alpha = t;
                    block = Some(i);
                }
            }
        }
        x += &p * alpha;
        if let Some(i) = block {
            work.push(i);
        }
    }
    Err(Error::ConvergenceFailure { what: "active-set QP", iterations: cap, estimate: x.iter().copied().collect() })
}

/// Constants of the sampled inverses: extreme eigenvalues γ⁻, γ⁺ of their
/// symmetric parts and spectral norms C.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralConstants {
    pub gamma_minus: Vec<f64>,
    pub gamma_plus: Vec<f64>,
    pub c: Vec<f64>,
    /// Relative tolerance of the Lanczos iterations.
    pub tol: f64,
    /// Iteration cap of the Lanczos iterations.
    pub max_iter: usize,
}

/// Materializes a map as a dense matrix (n applications).
pub fn dense_from_map(map: &dyn LinearMap) -> DMatrix<f64> {
    let n = map.dim();
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let mut out = vec![0.0; n];
            let mut work = vec![0.0; n];
            map.apply_into(&e, &mut out, false, &mut work);
            out
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| cols[j][i])
}

/// Largest size at which dense fallbacks are used.
pub const DENSE_LIMIT: usize = 2000;

/// (γ⁻, γ⁺, C) of a single map.
pub fn map_constants(p: &dyn LinearMap, tol: f64, max_iter: usize, seed: u64) -> Result<(f64, f64, f64)> {
    let n = p.dim();
    let mut t1 = vec![0.0; n];
    let mut t2 = vec![0.0; n];
    let mut w = vec![0.0; n];
    let sym = lanczos(
        n,
        |x, y| {
            p.apply_into(x, &mut t1, false, &mut w);
            p.apply_into(x, &mut t2, true, &mut w);
            for i in 0..n {
                y[i] = 0.5 * (t1[i] + t2[i]);
            }
        },
        max_iter,
        tol,
        seed,
        Want::Both,
    );
    let norm = lanczos(
        n,
        |x, y| {
            p.apply_into(x, &mut t1, false, &mut w);
            p.apply_into(&t1, y, true, &mut w);
        },
        max_iter,
        tol,
        seed ^ 0x5555,
        Want::Max,
    );
    if sym.converged && norm.converged {
        return Ok((sym.min, sym.max, norm.max.max(0.0).sqrt()));
    }
    if n <= DENSE_LIMIT {
        let d = dense_from_map(p);
        let (lo, hi) = sym_part_extremes(&d);
        let c = d.singular_values().max();
        return Ok((lo, hi, c));
    }
    Err(Error::ConvergenceFailure {
        what: "Lanczos (spectral constants)",
        iterations: sym.iterations.max(norm.iterations),
        estimate: vec![sym.min, sym.max, norm.max.max(0.0).sqrt()],
    })
}

impl SpectralConstants {
    pub fn empty(tol: f64) -> Self {
        Self { gamma_minus: Vec::new(), gamma_plus: Vec::new(), c: Vec::new(), tol, max_iter: 500 }
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }
    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    /// Computes the constants of basis elements not yet covered.
    pub fn extend(&mut self, basis: &InverseBasis) -> Result<()> {
        for i in self.len()..basis.len() {
            let (lo, hi, c) = map_constants(basis.inverse(i).as_ref(), self.tol, self.max_iter, 0x9e37 + i as u64)?;
            self.gamma_minus.push(lo);
            self.gamma_plus.push(hi);
            self.c.push(c);
        }
        Ok(())
    }

    /// Smallest admissible κ̄, max_i C_i/γ⁻_i (infinite if some γ⁻_i ≤ 0).
    pub fn kappa_threshold(&self) -> f64 {
        self.c
            .iter()
            .zip(&self.gamma_minus)
            .map(|(c, g)| if *g > 0.0 { c / g } else { f64::INFINITY })
            .fold(0.0, f64::max)
    }
}

pub fn spectral_constants(basis: &InverseBasis, tol: f64) -> Result<SpectralConstants> {
    let mut sc = SpectralConstants::empty(tol);
    sc.extend(basis)?;
    Ok(sc)
}

/// Minimizes the objective over λ = λ⁺ − λ⁻ with (λ⁺, λ⁻) ≥ 0,
/// ⟨λ⁺,γ⁻⟩ − ⟨λ⁻,γ⁺⟩ ≥ 0 and ⟨λ⁺, κ̄γ⁻ − C⟩ − ⟨λ⁻, κ̄γ⁺ + C⟩ ≥ 0,
/// which bounds the condition number of Σλ_iP_i by κ̄.
pub fn solve_kappa_constrained(ne: &NormalEq, sc: &SpectralConstants, kappa: f64) -> Result<CoefficientSolution> {
    let m = ne.len();
    check_len(m, sc.len())?;
    let threshold = sc.kappa_threshold();
    if !(kappa >= threshold) {
        return Err(Error::KappaTooSmall { kappa, threshold });
    }
    let n = 2 * m;
    let trace = ne.m.trace().abs().max(f64::MIN_POSITIVE);
    // small ridge makes the lifted Hessian definite without moving the optimum measurably
    let ridge = 1e-13 * trace / m.max(1) as f64;
    let mut h = DMatrix::zeros(n, n);
    for i in 0..m {
        for j in 0..m {
            let v = ne.m[(i, j)];
            h[(i, j)] = v;
            h[(m + i, m + j)] = v;
            h[(i, m + j)] = -v;
            h[(m + i, j)] = -v;
        }
        h[(i, i)] += ridge;
        h[(m + i, m + i)] += ridge;
    }
    let mut g = DVector::zeros(n);
    for i in 0..m {
        g[i] = ne.s[i];
        g[m + i] = -ne.s[i];
    }
    let mut a = DMatrix::zeros(n + 2, n);
    for i in 0..n {
        a[(i, i)] = 1.0;
    }
    for i in 0..m {
        a[(n, i)] = sc.gamma_minus[i];
        a[(n, m + i)] = -sc.gamma_plus[i];
        a[(n + 1, i)] = kappa * sc.gamma_minus[i] - sc.c[i];
        a[(n + 1, m + i)] = -(kappa * sc.gamma_plus[i] + sc.c[i]);
    }
    let z = active_set_qp(&h, &g, &a)?;
    let lp: Vec<f64> = (0..m).map(|i| z[i].max(0.0)).collect();
    let lm: Vec<f64> = (0..m).map(|i| z[m + i].max(0.0)).collect();
    let lambda: Vec<f64> = lp.iter().zip(&lm).map(|(p, q)| p - q).collect();
    let objective = ne.objective(&lambda);
    Ok(CoefficientSolution {
        lambda,
        lambda_plus: Some(lp),
        lambda_minus: Some(lm),
        mode: ConstraintMode::Kappa(kappa),
        objective,
        rank_deficient: false,
    })
}

/// Slacks of the two linear constraints of the κ̄-constrained set.
pub fn kappa_slacks(sc: &SpectralConstants, kappa: f64, lp: &[f64], lm: &[f64]) -> (f64, f64) {
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for i in 0..lp.len() {
        s1 += lp[i] * sc.gamma_minus[i] - lm[i] * sc.gamma_plus[i];
        s2 += lp[i] * (kappa * sc.gamma_minus[i] - sc.c[i]) - lm[i] * (kappa * sc.gamma_plus[i] + sc.c[i]);
    }
    (s1, s2)
}

/// Dispatches on the constraint mode. Kappa mode needs spectral constants.
pub fn solve_coefficients(ne: &NormalEq, mode: ConstraintMode, sc: Option<&SpectralConstants>) -> Result<CoefficientSolution> {
    match mode {
        ConstraintMode::Unconstrained => Ok(solve_unconstrained(ne)),
        ConstraintMode::Nonneg => Ok(solve_nonneg(ne)),
        ConstraintMode::Kappa(k) => {
            let sc = sc.ok_or_else(|| Error::InvalidArgument("kappa mode requires spectral constants".into()))?;
            solve_kappa_constrained(ne, sc, k)
        }
    }
}

/// √max(0, vnorm2 − 2λᵀS + λᵀMλ)
pub fn frob_residual(ne: &NormalEq, lambda: &[f64]) -> f64 {
    ne.raw_objective(lambda).max(0.0).sqrt()
}

/// Σ λ_i P_i x (or Σ λ_i P_iᵀ x) into `out`; `tmp` and `work` are scratch of length n.
pub fn precond_apply_into(lambda: &[f64], basis: &InverseBasis, x: &[f64], out: &mut [f64], transpose: bool, tmp: &mut [f64], work: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (l, p) in lambda.iter().zip(basis.inverses()) {
        if *l == 0.0 {
            continue;
        }
        p.apply_into(x, tmp, transpose, work);
        for (o, t) in out.iter_mut().zip(tmp.iter()) {
            *o += l * t;
        }
    }
}

pub fn precond_apply(lambda: &[f64], basis: &InverseBasis, x: &[f64]) -> Result<Vec<f64>> {
    precond_apply_impl(lambda, basis, x, false)
}

pub fn precond_apply_transpose(lambda: &[f64], basis: &InverseBasis, x: &[f64]) -> Result<Vec<f64>> {
    precond_apply_impl(lambda, basis, x, true)
}

fn precond_apply_impl(lambda: &[f64], basis: &InverseBasis, x: &[f64], t: bool) -> Result<Vec<f64>> {
    check_len(basis.len(), lambda.len())?;
    check_len(basis.dim(), x.len())?;
    let n = x.len();
    let (mut out, mut tmp, mut work) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    precond_apply_into(lambda, basis, x, &mut out, t, &mut tmp, &mut work);
    Ok(out)
}

/// ‖(I − P_m(ξ)A(ξ))V‖_F evaluated by explicit application to the columns of V.
pub fn sketched_residual_direct(a: &CsrMatrix, basis: &InverseBasis, lambda: &[f64], v: &SketchMatrix) -> Result<f64> {
    check_len(basis.len(), lambda.len())?;
    check_len(a.nrows(), v.nrows())?;
    let n = a.nrows();
    let sums: Vec<f64> = (0..v.ncols())
        .into_par_iter()
        .map(|c| {
            let col = v.column(c);
            let mut av = vec![0.0; n];
            a.mul_vec_into(col, &mut av);
            let (mut out, mut tmp, mut work) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            precond_apply_into(lambda, basis, &av, &mut out, false, &mut tmp, &mut work);
            col.iter().zip(&out).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        })
        .collect();
    Ok(sums.iter().sum::<f64>().sqrt())
}

/// Linear combination Σ w_i M_i of maps, the common form of every
/// preconditioner used here (identity, R_X⁻¹, interpolated inverse).
#[derive(Clone)]
pub struct WeightedMaps {
    n: usize,
    terms: Vec<(f64, Arc<dyn LinearMap>)>,
}

impl fmt::Debug for WeightedMaps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w: Vec<f64> = self.terms.iter().map(|t| t.0).collect();
        f.debug_struct("WeightedMaps").field("n", &self.n).field("weights", &w).finish()
    }
}

impl WeightedMaps {
    pub fn new(n: usize, terms: Vec<(f64, Arc<dyn LinearMap>)>) -> Result<Self> {
        for (_, m) in &terms {
            check_len(n, m.dim())?;
        }
        Ok(Self { n, terms })
    }

    pub fn single(map: Arc<dyn LinearMap>) -> Self {
        Self { n: map.dim(), terms: vec![(1.0, map)] }
    }

    pub fn from_basis(lambda: &[f64], basis: &InverseBasis) -> Result<Self> {
        check_len(basis.len(), lambda.len())?;
        Ok(Self { n: basis.dim(), terms: lambda.iter().copied().zip(basis.inverses().iter().cloned()).collect() })
    }

    pub fn weights(&self) -> Vec<f64> {
        self.terms.iter().map(|t| t.0).collect()
    }
}

impl LinearMap for WeightedMaps {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64], transpose: bool, work: &mut [f64]) {
        if let [(w, m)] = self.terms.as_slice() {
            m.apply_into(x, out, transpose, work);
            if *w != 1.0 {
                out.iter_mut().for_each(|v| *v *= w);
            }
            return;
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut tmp = vec![0.0; self.n];
        for (w, m) in &self.terms {
            if *w == 0.0 {
                continue;
            }
            m.apply_into(x, &mut tmp, transpose, work);
            for (o, t) in out.iter_mut().zip(&tmp) {
                *o += w * t;
            }
        }
    }
}

/// Spectral condition number of P·A (or of A when `p` is `None`) by Lanczos
/// on the normal operator; the smallest singular value of A alone comes from
/// its factorization. Returns the estimate and whether both ends converged.
pub fn condition_number(a: &CsrMatrix, p: Option<&dyn LinearMap>, tol: f64, max_iter: usize) -> Result<(f64, bool)> {
    let n = a.nrows();
    let mut t1 = vec![0.0; n];
    let mut t2 = vec![0.0; n];
    let mut work = vec![0.0; n];
    match p {
        None => {
            let lu = crate::lu::SparseLu::factorize(a, crate::lu::Pivoting::Threshold(0.1))?;
            let hi = lanczos(
                n,
                |x, y| {
                    a.mul_vec_into(x, &mut t1);
                    a.mul_vec_transpose_into(&t1, y);
                },
                max_iter,
                tol,
                11,
                Want::Max,
            );
            let lo = lanczos(
                n,
                |x, y| {
                    y.copy_from_slice(x);
                    lu.solve_transpose_in_place(y, &mut work);
                    lu.solve_in_place(y, &mut work);
                },
                max_iter,
                tol,
                13,
                Want::Max,
            );
            Ok(((hi.max * lo.max).max(0.0).sqrt(), hi.converged && lo.converged))
        }
        Some(p) => {
            check_len(n, p.dim())?;
            let e = lanczos(
                n,
                |x, y| {
                    a.mul_vec_into(x, &mut t1);
                    p.apply_into(&t1, &mut t2, false, &mut work);
                    p.apply_into(&t2, &mut t1, true, &mut work);
                    a.mul_vec_transpose_into(&t1, y);
                },
                max_iter,
                tol,
                17,
                Want::Both,
            );
            let k = if e.min > 0.0 { (e.max / e.min).sqrt() } else { f64::INFINITY };
            Ok((k, e.converged))
        }
    }
}

/// Exact-Frobenius diagnostics of a preconditioned matrix PA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrobeniusDiagnostics {
    /// Smallest singular value of PA.
    pub alpha: f64,
    /// Largest singular value of PA.
    pub beta: f64,
    pub kappa: f64,
    /// ‖I − PA‖_F²
    pub frob2: f64,
    pub lower_ok: bool,
    pub upper_ok: bool,
    pub kappa_ok: bool,
    pub frob_gap_ok: bool,
}

/// Checks (1−α)² ≤ ‖I−PA‖_F² ≤ n(1−α²) and κ ≤ √(n−(n−1)α²)/α, valid for the
/// Frobenius-optimal P over a linear space, with slack 1e-8.
pub fn diagnostics_prop21(a: &DMatrix<f64>, p: &DMatrix<f64>) -> FrobeniusDiagnostics {
    let n = a.nrows();
    let nf = n as f64;
    let pa = p * a;
    let mut r = -&pa;
    for i in 0..n {
        r[(i, i)] += 1.0;
    }
    let frob2 = r.norm_squared();
    let sv = pa.singular_values();
    let (alpha, beta) = (sv.min(), sv.max());
    let kappa = if alpha > 0.0 { beta / alpha } else { f64::INFINITY };
    let slack = 1e-8;
    let lower_ok = (1.0 - alpha).powi(2) <= frob2 + slack;
    let upper_ok = alpha > 1.0 + slack || frob2 <= nf * (1.0 - alpha * alpha) + slack * nf;
    let bound = if alpha > 0.0 { (nf - (nf - 1.0) * alpha * alpha).max(0.0).sqrt() / alpha } else { f64::INFINITY };
    let kappa_ok = !kappa.is_finite() || kappa <= bound * (1.0 + slack) + slack;
    FrobeniusDiagnostics { alpha, beta, kappa, frob2, lower_ok, upper_ok, kappa_ok, frob_gap_ok: lower_ok && upper_ok && kappa_ok }
}

/// Sketched-Frobenius diagnostics of PA for sketch V with distortion ε′.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SketchedDiagnostics {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    /// ‖(I − PA)V‖_F²
    pub sketched2: f64,
    pub eps_prime: f64,
    /// (1−ε′)(1−α)² ≤ ‖(I−PA)V‖_F²
    pub lower_ok: bool,
    /// (1−α)²/(1−ε′) ≤ ‖(I−PA)V‖_F² (stronger variant; may fail)
    pub lower_divided_ok: bool,
    /// ‖(I−PA)V‖_F² ≤ ‖V‖_F²(1 − (1−ε′)α²)
    pub upper_ok: bool,
    /// κ ≤ α⁻¹√(‖V‖_F²/(1−ε′) − (n−1)α²)
    pub kappa_ok: bool,
}

pub fn diagnostics_sketched(a: &DMatrix<f64>, p: &DMatrix<f64>, v: &DMatrix<f64>, eps_prime: f64) -> SketchedDiagnostics {
    let n = a.nrows() as f64;
    let pa = p * a;
    let rv = v - &pa * v;
    let sketched2 = rv.norm_squared();
    let vn2 = v.norm_squared();
    let sv = pa.singular_values();
    let (alpha, beta) = (sv.min(), sv.max());
    let kappa = if alpha > 0.0 { beta / alpha } else { f64::INFINITY };
    let slack = 1e-8;
    let e = eps_prime;
    let lower_ok = (1.0 - e) * (1.0 - alpha).powi(2) <= sketched2 + slack;
    let lower_divided_ok = (1.0 - alpha).powi(2) / (1.0 - e) <= sketched2 + slack;
    let upper_ok = sketched2 <= vn2 * (1.0 - (1.0 - e) * alpha * alpha) + slack * vn2;
    let bound = if alpha > 0.0 {
        (vn2 / (1.0 - e) - (n - 1.0) * alpha * alpha).max(0.0).sqrt() / alpha
    } else {
        f64::INFINITY
    };
    let kappa_ok = !kappa.is_finite() || kappa <= bound * (1.0 + slack) + slack;
    SketchedDiagnostics { alpha, beta, kappa, sketched2, eps_prime, lower_ok, lower_divided_ok, upper_ok, kappa_ok }
}

/// Realized distortion ε′ = sup |‖BV‖_F² − ‖B‖_F²| / ‖B‖_F² over
/// B ∈ span{I, P_1A, …, P_mA}, from the generalized eigenvalues of the two
/// Gram matrices.
pub fn empirical_eps_prime(a: &DMatrix<f64>, ps: &[DMatrix<f64>], v: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut bs = vec![DMatrix::<f64>::identity(n, n)];
    bs.extend(ps.iter().map(|p| p * a));
    let bv: Vec<DMatrix<f64>> = bs.iter().map(|b| b * v).collect();
    let k = bs.len();
    let g = DMatrix::from_fn(k, k, |i, j| bs[i].dot(&bs[j]));
    let gv = DMatrix::from_fn(k, k, |i, j| bv[i].dot(&bv[j]));
    let eig = SymmetricEigen::new(g);
    let mu_max = eig.eigenvalues.max();
    let keep: Vec<usize> = (0..k).filter(|&j| eig.eigenvalues[j] > 1e-12 * mu_max).collect();
    let t = DMatrix::from_fn(k, keep.len(), |i, c| {
        eig.eigenvectors[(i, keep[c])] / eig.eigenvalues[keep[c]].sqrt()
    });
    let red = t.transpose() * gv * &t;
    let red = (&red + red.transpose()) * 0.5;
    SymmetricEigen::new(red).eigenvalues.iter().fold(0.0f64, |a, mu| a.max((mu - 1.0).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{DenseMap, FactorizedInverse};

    fn dmap(rows: usize, v: &[f64]) -> Arc<dyn LinearMap> {
        Arc::new(DenseMap(DMatrix::from_row_slice(rows, v.len() / rows, v)))
    }

    #[test]
    fn hand_normal_equations() {
        let mut b = InverseBasis::new(2);
        b.push(vec![0.0], Arc::new(FactorizedInverse::new(&CsrMatrix::identity(2)).unwrap())).unwrap();
        b.push(vec![1.0], dmap(2, &[0.5, 0.0, 0.0, 0.5])).unwrap();
        let ne = assemble_normal_eq(&CsrMatrix::identity(2), &b, &SketchMatrix::identity(2)).unwrap();
        assert_eq!(ne.m, DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 0.5]));
        assert_eq!(ne.s, vec![2.0, 1.0]);
        assert_eq!(ne.vnorm2, 2.0);
        assert!(b.push(vec![0.0], dmap(2, &[1.0, 0.0, 0.0, 1.0])).is_err());
    }

    #[test]
    fn sketch_too_small() {
        let mut b = InverseBasis::new(2);
        b.push(vec![0.0], dmap(2, &[1.0, 0.0, 0.0, 1.0])).unwrap();
        b.push(vec![1.0], dmap(2, &[2.0, 0.0, 0.0, 1.0])).unwrap();
        let v = SketchMatrix::from_matrix(crate::sketch::SketchKind::RescaledRademacher, DMatrix::from_element(2, 1, 1.0));
        assert!(matches!(
            assemble_normal_eq(&CsrMatrix::identity(2), &b, &v),
            Err(Error::SketchTooSmall { columns: 1, basis: 2 })
        ));
    }

    #[test]
    fn solver_examples() {
        let ne = NormalEq { m: DMatrix::identity(2, 2), s: vec![3.0, -1.0], vnorm2: 20.0 };
        assert_eq!(solve_unconstrained(&ne).lambda, vec![3.0, -1.0]);
        let ne = NormalEq { m: DMatrix::identity(2, 2), s: vec![1.0, -1.0], vnorm2: 2.0 };
        assert_eq!(solve_nonneg(&ne).lambda, vec![1.0, 0.0]);
        let ne = NormalEq { m: DMatrix::identity(2, 2), s: vec![1.0, 2.0], vnorm2: 5.0 };
        assert_eq!(solve_nonneg(&ne).lambda, solve_unconstrained(&ne).lambda);
        assert!(solve_unconstrained(&ne).objective.abs() < 1e-14);
    }

    #[test]
    fn rank_deficient_flagged() {
        let ne = NormalEq { m: DMatrix::from_element(2, 2, 1.0), s: vec![1.0, 1.0], vnorm2: 1.0 };
        let sol = solve_unconstrained(&ne);
        assert!(sol.rank_deficient);
        assert!((sol.lambda[0] - 0.5).abs() < 1e-12 && (sol.lambda[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn spectral_constant_examples() {
        let mut b = InverseBasis::new(2);
        b.push(vec![0.0], dmap(2, &[1.0, 0.0, 0.0, 1.0])).unwrap();
        b.push(vec![1.0], dmap(2, &[1.0, 0.0, 0.0, 2.0])).unwrap();
        b.push(vec![2.0], dmap(2, &[1.0, 1.0, 0.0, 1.0])).unwrap();
        let sc = spectral_constants(&b, 1e-10).unwrap();
        let want = [(1.0, 1.0, 1.0), (1.0, 2.0, 2.0), (0.5, 1.5, (1.0 + 5f64.sqrt()) / 2.0)];
        for (i, w) in want.iter().enumerate() {
            assert!((sc.gamma_minus[i] - w.0).abs() < 1e-9);
            assert!((sc.gamma_plus[i] - w.1).abs() < 1e-9);
            assert!((sc.c[i] - w.2).abs() < 1e-9);
        }
    }

    #[test]
    fn kappa_single_point_matches_nonneg() {
        let mut b = InverseBasis::new(2);
        b.push(vec![0.0], dmap(2, &[1.0, 0.0, 0.0, 2.0])).unwrap();
        let sc = spectral_constants(&b, 1e-10).unwrap();
        let ne = NormalEq { m: DMatrix::from_element(1, 1, 5.0), s: vec![3.0], vnorm2: 2.0 };
        let k = solve_kappa_constrained(&ne, &sc, 10.0).unwrap();
        let nn = solve_nonneg(&ne);
        assert!((k.lambda[0] - nn.lambda[0]).abs() < 1e-10);
        assert!(matches!(solve_kappa_constrained(&ne, &sc, 1.5), Err(Error::KappaTooSmall { .. })));
    }

    #[test]
    fn apply_examples() {
        let mut b = InverseBasis::new(2);
        b.push(vec![0.0], dmap(2, &[1.0, 0.0, 0.0, 2.0])).unwrap();
        b.push(vec![1.0], dmap(2, &[3.0, 0.0, 0.0, 4.0])).unwrap();
        assert_eq!(precond_apply(&[1.0, 1.0], &b, &[1.0, 0.0]).unwrap(), vec![4.0, 0.0]);
        assert_eq!(precond_apply(&[0.0, 0.0], &b, &[1.0, 5.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(precond_apply(&[0.0, 1.0], &b, &[1.0, 1.0]).unwrap(), vec![3.0, 4.0]);
        assert!(precond_apply(&[1.0], &b, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn constraint_mode_parsing() {
        assert_eq!("none".parse::<ConstraintMode>().unwrap(), ConstraintMode::Unconstrained);
        assert_eq!("nonneg".parse::<ConstraintMode>().unwrap(), ConstraintMode::Nonneg);
        assert_eq!("kappa:5e4".parse::<ConstraintMode>().unwrap(), ConstraintMode::Kappa(5e4));
        assert!("kappa:x".parse::<ConstraintMode>().is_err());
        assert!("other".parse::<ConstraintMode>().is_err());
    }

    #[test]
    fn frobenius_diagnostics_extremes() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 3.0]);
        let d = diagnostics_prop21(&a, &a.clone().try_inverse().unwrap());
        assert!((d.alpha - 1.0).abs() < 1e-12 && (d.kappa - 1.0).abs() < 1e-12 && d.frob2 < 1e-24);
        assert!(d.frob_gap_ok);
        let d = diagnostics_prop21(&a, &DMatrix::zeros(2, 2));
        assert_eq!(d.alpha, 0.0);
        assert!((d.frob2 - 2.0).abs() < 1e-15 && d.frob_gap_ok);
    }
}
