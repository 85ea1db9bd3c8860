//! Preconditioned Petrov-Galerkin reduced-basis approximation, quasi-optimality
//! diagnostics and reduced-basis greedy drivers.

use crate::bench::BenchmarkProblem;
use crate::error::{check_len, Error, Result};
use crate::greedy::{fmt_f64, fmt_point, Preconditioner};
use crate::linalg::dot;
use crate::operators::{AffineOperator, AffineVector, LinearMap, NormMatrix};
use crate::precond::{ConstraintMode, InverseBasis, WeightedMaps};
use crate::sketch::SketchMatrix;
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

/// Reduced space X_r = range(U) with UᵀR_XU = I.
#[derive(Debug, Clone)]
pub struct ReducedModel {
    op: AffineOperator,
    rhs: AffineVector,
    norm: Arc<NormMatrix>,
    u: Vec<Vec<f64>>,
    ru: Vec<Vec<f64>>,
    points: Vec<Vec<f64>>,
    pub mode: String,
}

/// Relative size below which a snapshot is considered dependent.
pub const DROP_TOL: f64 = 1e-12;

impl ReducedModel {
    pub fn new(op: &AffineOperator, rhs: &AffineVector, norm: Arc<NormMatrix>) -> Result<Self> {
        check_len(op.dim(), rhs.dim())?;
        check_len(op.dim(), norm.dim())?;
        Ok(Self { op: op.clone(), rhs: rhs.clone(), norm, u: Vec::new(), ru: Vec::new(), points: Vec::new(), mode: String::new() })
    }

    /// Model spanned by the columns of `basis` (orthonormalized here).
    pub fn from_columns(op: &AffineOperator, rhs: &AffineVector, norm: Arc<NormMatrix>, basis: &[Vec<f64>]) -> Result<Self> {
        let mut m = Self::new(op, rhs, norm)?;
        for v in basis {
            m.add_vector(v.clone())?;
        }
        Ok(m)
    }

    /// Adds a direction by modified Gram-Schmidt in the X inner product with
    /// one reorthogonalization pass. Returns false if it was dependent.
    pub fn add_vector(&mut self, v: Vec<f64>) -> Result<bool> {
        check_len(self.dim(), v.len())?;
        let norm0 = self.norm.xnorm(&v)?;
        if norm0 == 0.0 {
            return Ok(false);
        }
        let mut w = v;
        for _ in 0..2 {
            for (q, rq) in self.u.iter().zip(&self.ru) {
                let c = dot(rq, &w);
                w.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
            }
        }
        let nw = self.norm.xnorm(&w)?;
        if nw <= DROP_TOL * norm0 {
            return Ok(false);
        }
        w.iter_mut().for_each(|a| *a /= nw);
        self.ru.push(self.norm.apply(&w)?);
        self.u.push(w);
        Ok(true)
    }

    /// Adds the snapshot u(ξ); returns false if it was dependent.
    pub fn add_snapshot(&mut self, xi: &[f64], u: Vec<f64>) -> Result<bool> {
        let added = self.add_vector(u)?;
        if added {
            self.points.push(xi.to_vec());
        }
        Ok(added)
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }
    pub fn rank(&self) -> usize {
        self.u.len()
    }
    pub fn basis(&self) -> &[Vec<f64>] {
        &self.u
    }
    /// Columns of R_X U.
    pub fn basis_dual(&self) -> &[Vec<f64>] {
        &self.ru
    }
    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }
    pub fn norm(&self) -> &NormMatrix {
        &self.norm
    }
    pub fn norm_arc(&self) -> Arc<NormMatrix> {
        self.norm.clone()
    }
    pub fn operator(&self) -> &AffineOperator {
        &self.op
    }
    pub fn rhs(&self) -> &AffineVector {
        &self.rhs
    }

    pub fn basis_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim(), self.rank(), |i, j| self.u[j][i])
    }

    /// U a
    pub fn reconstruct(&self, a: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (c, q) in a.iter().zip(&self.u) {
            out.iter_mut().zip(q).for_each(|(o, v)| *o += c * v);
        }
        out
    }

    /// Writes U (Matrix Market, dense) and metadata JSON into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        crate::mmio::write_dense(dir.join("basis.mtx"), &self.basis_matrix())?;
        let meta = ReducedModelMeta { rank: self.rank(), dim: self.dim(), points: self.points.clone(), mode: self.mode.clone() };
        std::fs::write(dir.join("model.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReducedModelMeta {
    pub rank: usize,
    pub dim: usize,
    pub points: Vec<Vec<f64>>,
    pub mode: String,
}

/// Columns Wⱼ = Pᵀ R_X Uⱼ of the preconditioned test space.
pub fn test_space(model: &ReducedModel, p: &dyn LinearMap) -> Vec<Vec<f64>> {
    let n = model.dim();
    model
        .ru
        .par_iter()
        .map(|c| {
            let mut out = vec![0.0; n];
            let mut work = vec![0.0; n];
            p.apply_into(c, &mut out, true, &mut work);
            out
        })
        .collect()
}

fn solve_small(m: DMatrix<f64>, rhs: DVector<f64>, xi: &[f64]) -> Result<Vec<f64>> {
    let scale = m.amax();
    let lu = m.lu();
    let ok = lu.u().diagonal().iter().all(|d| d.abs() > 1e-14 * scale);
    match lu.solve(&rhs) {
        Some(a) if ok && a.iter().all(|v| v.is_finite()) => Ok(a.iter().copied().collect()),
        _ => Err(Error::SingularReducedSystem { point: xi.to_vec() }),
    }
}

/// Solves (WᵀA(ξ)U) a = Wᵀb(ξ) for test columns W.
pub fn project_with_test(xi: &[f64], model: &ReducedModel, w: &[Vec<f64>]) -> Result<Vec<f64>> {
    let r = model.rank();
    check_len(r, w.len())?;
    if r == 0 {
        return Ok(Vec::new());
    }
    let a = model.op.eval(xi)?;
    let b = model.rhs.eval(xi)?;
    let au: Vec<Vec<f64>> = model.u.iter().map(|q| a.mul_vec(q)).collect::<Result<_>>()?;
    let m = DMatrix::from_fn(r, r, |i, j| dot(&w[i], &au[j]));
    let rhs = DVector::from_iterator(r, w.iter().map(|wi| dot(wi, &b)));
    solve_small(m, rhs, xi)
}

/// Petrov-Galerkin coefficients (UᵀR_X P A U) a = UᵀR_X P b for any map P.
pub fn petrov_galerkin_with(xi: &[f64], model: &ReducedModel, p: &dyn LinearMap) -> Result<Vec<f64>> {
    check_len(model.dim(), p.dim())?;
    let w = test_space(model, p);
    project_with_test(xi, model, &w)
}

/// Petrov-Galerkin coefficients with the interpolated preconditioner P_m(ξ).
pub fn petrov_galerkin(xi: &[f64], model: &ReducedModel, precond: &Preconditioner) -> Result<Vec<f64>> {
    let p = precond.map_at(xi)?;
    petrov_galerkin_with(xi, model, &p)
}

/// Galerkin coefficients (UᵀA(ξ)U) a = Uᵀb(ξ).
pub fn galerkin(xi: &[f64], model: &ReducedModel) -> Result<Vec<f64>> {
    project_with_test(xi, model, &model.u)
}

/// Solution u(ξ) = A(ξ)⁻¹b(ξ).
pub fn solve_full(op: &AffineOperator, rhs: &AffineVector, xi: &[f64]) -> Result<Vec<f64>> {
    let f = op.factorize_at(xi)?;
    f.apply_inverse(&rhs.eval(xi)?, false)
}

/// X-orthogonal projection coefficients UᵀR_X u(ξ).
pub fn best_approx(xi: &[f64], model: &ReducedModel) -> Result<Vec<f64>> {
    let u = solve_full(&model.op, &model.rhs, xi)?;
    Ok(project_coefficients(model, &u))
}

/// UᵀR_X u for a given u.
pub fn project_coefficients(model: &ReducedModel, u: &[f64]) -> Vec<f64> {
    model.ru.iter().map(|rq| dot(rq, u)).collect()
}

/// δ-proximality of the Petrov-Galerkin projection with test map P:
/// sup over v ∈ X_r of the X-distance from v to R_X⁻¹ range((PA)ᵀR_XU),
/// relative to ‖v‖_X.
pub fn delta_rm_with(xi: &[f64], model: &ReducedModel, p: &dyn LinearMap) -> Result<f64> {
    let r = model.rank();
    if r == 0 {
        return Ok(0.0);
    }
    let a = model.op.eval(xi)?;
    let w = test_space(model, p);
    let b: Vec<Vec<f64>> = w.iter().map(|c| a.mul_vec_transpose(c)).collect::<Result<_>>()?;
    let rib: Vec<Vec<f64>> = b.par_iter().map(|c| model.norm.solve(c)).collect::<Result<_>>()?;
    let g = DMatrix::from_fn(r, r, |i, j| 0.5 * (dot(&b[i], &rib[j]) + dot(&b[j], &rib[i])));
    let ub = DMatrix::from_fn(r, r, |i, j| dot(&model.u[i], &b[j]));
    let eig_g = SymmetricEigen::new(g.clone());
    let gmax = eig_g.eigenvalues.max();
    if !(eig_g.eigenvalues.min() > 1e-13 * gmax) {
        return Err(Error::DegenerateTestSpace);
    }
    let ch = Cholesky::new(g).ok_or(Error::DegenerateTestSpace)?;
    // C = UᵀB G⁻¹ BᵀU; UᵀR_XU = I
    let x = ch.solve(&ub.transpose());
    let c = &ub * x;
    let c = (&c + c.transpose()) * 0.5;
    let gamma = SymmetricEigen::new(c).eigenvalues.min();
    Ok((1.0 - gamma).clamp(0.0, 1.0).sqrt())
}

pub fn delta_rm(xi: &[f64], model: &ReducedModel, precond: &Preconditioner) -> Result<f64> {
    let p = precond.map_at(xi)?;
    delta_rm_with(xi, model, &p)
}

/// (1−δ²)^{-1/2}, infinite for δ ≥ 1.
pub fn quasi_opt_constant(delta: f64) -> f64 {
    if delta >= 1.0 {
        f64::INFINITY
    } else {
        (1.0 - delta * delta).powf(-0.5)
    }
}

/// A(ξ)u_r − b(ξ)
pub fn residual(op: &AffineOperator, rhs: &AffineVector, xi: &[f64], ur: &[f64]) -> Result<Vec<f64>> {
    let mut r = op.eval(xi)?.mul_vec(ur)?;
    let b = rhs.eval(xi)?;
    r.iter_mut().zip(&b).for_each(|(a, c)| *a -= c);
    Ok(r)
}

/// ‖P(A(ξ)u_r − b(ξ))‖_X
pub fn preconditioned_residual_norm(op: &AffineOperator, rhs: &AffineVector, xi: &[f64], ur: &[f64], p: &dyn LinearMap, norm: &NormMatrix) -> Result<f64> {
    let r = residual(op, rhs, xi, ur)?;
    norm.xnorm(&p.apply(&r, false)?)
}

/// Effectivity η = ‖P(Au_r − b)‖_X / ‖u − u_r‖_X; returns (1, true) when u_r = u.
pub fn effectivity(estimate: f64, error: f64) -> (f64, bool) {
    if error == 0.0 {
        (1.0, true)
    } else {
        (estimate / error, false)
    }
}

/// Extreme singular values of P A as an operator on (ℝⁿ, ‖·‖_X):
/// those of L P A L⁻¹ with LᵀL = R_X. Dense.
pub fn singular_bounds(pa: &DMatrix<f64>, rx: &DMatrix<f64>) -> Result<(f64, f64, f64)> {
    let ch = Cholesky::new(rx.clone()).ok_or(Error::NotSpd { pivot: 0, value: f64::NAN })?;
    let l = ch.l().transpose();
    let linv = l.clone().try_inverse().ok_or(Error::NotSpd { pivot: 0, value: f64::NAN })?;
    let m = &l * pa * linv;
    let sv = m.singular_values();
    let (lo, hi) = (sv.min(), sv.max());
    Ok((lo, hi, if lo > 0.0 { hi / lo } else { f64::INFINITY }))
}

/// X-orthonormal POD basis of rank r from snapshots (method of snapshots).
pub fn pod_basis(snapshots: &[Vec<f64>], norm: &NormMatrix, r: usize) -> Result<Vec<Vec<f64>>> {
    let k = snapshots.len();
    if r > k {
        return Err(Error::InvalidArgument(format!("POD rank {r} exceeds {k} snapshots")));
    }
    let rs: Vec<Vec<f64>> = snapshots.iter().map(|s| norm.apply(s)).collect::<Result<_>>()?;
    let g = DMatrix::from_fn(k, k, |i, j| 0.5 * (dot(&snapshots[i], &rs[j]) + dot(&snapshots[j], &rs[i])));
    let eig = SymmetricEigen::new(g);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let n = norm.dim();
    let mut out = Vec::new();
    for &j in order.iter().take(r) {
        let mu = eig.eigenvalues[j];
        if mu <= 0.0 {
            break;
        }
        let mut v = vec![0.0; n];
        for (i, s) in snapshots.iter().enumerate() {
            let c = eig.eigenvectors[(i, j)] / mu.sqrt();
            v.iter_mut().zip(s).for_each(|(a, b)| *a += c * b);
        }
        out.push(v);
    }
    Ok(out)
}

/// Selection rule of the reduced-basis greedy loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RbMode {
    /// True X-error of the orthogonal projection.
    Ideal,
    /// Dual residual norm of the Galerkin projection.
    Standard,
    /// Preconditioned residual with a preconditioner fixed beforehand.
    PrecondFixed,
    /// Preconditioned residual; each snapshot's factorization joins the preconditioner.
    PrecondReuse,
}

impl FromStr for RbMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ideal" => Ok(Self::Ideal),
            "standard" => Ok(Self::Standard),
            "precond-fixed" => Ok(Self::PrecondFixed),
            "precond-reuse" => Ok(Self::PrecondReuse),
            _ => Err(Error::InvalidArgument(format!("unknown reduced-basis mode `{s}`"))),
        }
    }
}

impl std::fmt::Display for RbMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Ideal => "ideal",
            Self::Standard => "standard",
            Self::PrecondFixed => "precond-fixed",
            Self::PrecondReuse => "precond-reuse",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub r: usize,
    pub xi_selected: Vec<f64>,
    /// Relative X-errors over the validation set.
    pub sup_rel_err: f64,
    pub q97_rel_err: f64,
    /// Smallest interval holding 97% of the validation effectivities.
    pub eff_lo: f64,
    pub eff_hi: f64,
    /// sup of the relative error over the whole grid.
    pub sup_rel_err_all: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyTrace {
    pub mode: RbMode,
    pub records: Vec<TraceRecord>,
    pub stagnated: bool,
}

pub const TRACE_SCHEMA: &str = "# schema: paraprec-rb-trace v1";

impl GreedyTrace {
    pub fn write_csv(&self, w: impl std::io::Write) -> Result<()> {
        let mut w = w;
        writeln!(w, "{TRACE_SCHEMA}")?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["r", "xi_selected", "sup_rel_err", "q97_rel_err", "eff_lo", "eff_hi", "sup_rel_err_all"])?;
        for t in &self.records {
            csv.write_record([
                t.r.to_string(),
                fmt_point(&t.xi_selected),
                fmt_f64(t.sup_rel_err),
                fmt_f64(t.q97_rel_err),
                fmt_f64(t.eff_lo),
                fmt_f64(t.eff_hi),
                fmt_f64(t.sup_rel_err_all),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// Empirical p-quantile (nearest rank).
pub fn quantile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = ((p * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[k - 1]
}

/// Smallest interval [lo, hi] (by ratio hi/lo, positive values) containing
/// a fraction p of the values.
pub fn confidence_interval(values: &[f64], p: f64) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = ((p * v.len() as f64).ceil() as usize).clamp(1, v.len());
    let mut best = (v[0], v[k - 1]);
    let width = |lo: f64, hi: f64| if lo > 0.0 { (hi / lo).ln() } else { hi - lo + 1e300 };
    for s in 0..=v.len() - k {
        let (lo, hi) = (v[s], v[s + k - 1]);
        if width(lo, hi) < width(best.0, best.1) {
            best = (lo, hi);
        }
    }
    best
}

/// Options of the reduced-basis greedy drivers.
#[derive(Debug, Clone)]
pub struct RbOptions {
    pub sketch: SketchMatrix,
    pub constraint: ConstraintMode,
    /// Every `validation_stride`-th grid point (offset stride/2) is withheld.
    pub validation_stride: usize,
}

pub struct RbOutcome {
    pub model: ReducedModel,
    pub trace: GreedyTrace,
    pub precond: Option<Preconditioner>,
}

/// Split of the grid into training and validation indices.
pub fn split_grid(len: usize, stride: usize) -> (Vec<usize>, Vec<usize>) {
    if stride < 2 {
        return ((0..len).collect(), (0..len).collect());
    }
    (0..len).partition(|i| i % stride != stride / 2)
}

/// Offline blocks Z_ij = P_iᵀ R_X u_j, so that the preconditioned test space
/// at ξ is the combination Σ_i λ_i(ξ) Z_i instead of m·r solves per point.
#[derive(Default)]
struct TestBlocks {
    z: Vec<Vec<Vec<f64>>>,
}

impl TestBlocks {
    /// Adds the blocks of new basis elements and new reduced-basis columns.
    fn update(&mut self, basis: &InverseBasis, ru: &[Vec<f64>]) {
        let n = basis.dim();
        let jobs: Vec<(usize, usize)> = (0..basis.len())
            .flat_map(|i| {
                let have = self.z.get(i).map_or(0, Vec::len);
                (have..ru.len()).map(move |j| (i, j))
            })
            .collect();
        let cols: Vec<Vec<f64>> = jobs
            .par_iter()
            .map(|&(i, j)| {
                let mut out = vec![0.0; n];
                let mut work = vec![0.0; n];
                basis.inverse(i).apply_into(&ru[j], &mut out, true, &mut work);
                out
            })
            .collect();
        self.z.resize_with(basis.len(), Vec::new);
        for ((i, _), c) in jobs.into_iter().zip(cols) {
            self.z[i].push(c);
        }
    }

    fn combine(&self, lambda: &[f64], r: usize, n: usize) -> Vec<Vec<f64>> {
        (0..r)
            .map(|j| {
                let mut w = vec![0.0; n];
                for (l, zi) in lambda.iter().zip(&self.z) {
                    if *l != 0.0 {
                        w.iter_mut().zip(&zi[j]).for_each(|(a, b)| *a += l * b);
                    }
                }
                w
            })
            .collect()
    }
}

/// Approximation u_r(ξ) and its error estimate under the given mode.
fn approx_and_estimate(
    mode: RbMode,
    xi: &[f64],
    model: &ReducedModel,
    precond: Option<&Preconditioner>,
    blocks: &TestBlocks,
    truth: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let (op, rhs) = (&model.op, &model.rhs);
    match mode {
        RbMode::Ideal => {
            let ur = model.reconstruct(&project_coefficients(model, truth));
            let e: Vec<f64> = truth.iter().zip(&ur).map(|(a, b)| a - b).collect();
            let err = model.norm.xnorm(&e)?;
            Ok((ur, err))
        }
        RbMode::Standard => {
            let ur = model.reconstruct(&galerkin(xi, model)?);
            let r = residual(op, rhs, xi, &ur)?;
            Ok((ur, model.norm.xdualnorm(&r)?))
        }
        RbMode::PrecondFixed | RbMode::PrecondReuse => {
            let p = precond.ok_or_else(|| Error::InvalidArgument("preconditioned mode needs a preconditioner".into()))?;
            let map: WeightedMaps = p.map_at(xi)?;
            let a = if p.is_empty() {
                petrov_galerkin_with(xi, model, &map)?
            } else {
                let w = blocks.combine(&map.weights(), model.rank(), model.dim());
                project_with_test(xi, model, &w)?
            };
            let ur = model.reconstruct(&a);
            let est = preconditioned_residual_norm(op, rhs, xi, &ur, &map, &model.norm)?;
            Ok((ur, est))
        }
    }
}

/// Reduced-basis greedy loop with R iterations. `truth` holds u(ξ) for every
/// grid point and is used for error reporting and by the ideal mode.
pub fn rb_greedy(
    problem: &BenchmarkProblem,
    truth: &[Vec<f64>],
    r_max: usize,
    mode: RbMode,
    opts: &RbOptions,
    fixed: Option<Preconditioner>,
) -> Result<RbOutcome> {
    let grid = &problem.grid;
    check_len(grid.len(), truth.len())?;
    let (train, valid) = split_grid(grid.len(), opts.validation_stride);
    if r_max > train.len() {
        return Err(Error::InvalidArgument(format!("R = {r_max} exceeds the {} training points", train.len())));
    }
    let norm = Arc::new(problem.norm.clone());
    let mut model = ReducedModel::new(&problem.op, &problem.rhs, norm.clone())?;
    model.mode = mode.to_string();
    let mut precond = match mode {
        RbMode::PrecondFixed => Some(fixed.ok_or_else(|| Error::InvalidArgument("precond-fixed mode needs a preconditioner".into()))?),
        RbMode::PrecondReuse => {
            let mut p = Preconditioner::new(&problem.op, opts.sketch.clone(), grid, opts.constraint)?;
            p.strategy = "rb-reuse".into();
            Some(p)
        }
        _ => None,
    };
    let truth_norm: Vec<f64> = truth.par_iter().map(|u| norm.xnorm(u)).collect::<Result<_>>()?;
    let mut records = Vec::new();
    let mut stagnated = false;
    let mut selected: Vec<usize> = Vec::new();
    let mut blocks = TestBlocks::default();
    for r in 0..=r_max {
        if let Some(p) = &precond {
            blocks.update(p.basis(), &model.ru);
        }
        // evaluate the current approximation everywhere
        let evals: Vec<(f64, f64)> = (0..grid.len())
            .into_par_iter()
            .map(|t| {
                let (ur, est) = approx_and_estimate(mode, &grid[t], &model, precond.as_ref(), &blocks, &truth[t])?;
                let e: Vec<f64> = truth[t].iter().zip(&ur).map(|(a, b)| a - b).collect();
                Ok((norm.xnorm(&e)?, est))
            })
            .collect::<Result<_>>()?;
        if r > 0 {
            let rel = |t: usize| if truth_norm[t] > 0.0 { evals[t].0 / truth_norm[t] } else { evals[t].0 };
            let vrel: Vec<f64> = valid.iter().map(|&t| rel(t)).collect();
            let eff: Vec<f64> = valid.iter().map(|&t| effectivity(evals[t].1, evals[t].0).0).collect();
            let (eff_lo, eff_hi) = confidence_interval(&eff, 0.97);
            records.push(TraceRecord {
                r,
                xi_selected: grid[*selected.last().expect("selected")].clone(),
                sup_rel_err: vrel.iter().copied().fold(0.0, f64::max),
                q97_rel_err: quantile(&vrel, 0.97),
                eff_lo,
                eff_hi,
                sup_rel_err_all: (0..grid.len()).map(rel).fold(0.0, f64::max),
            });
            log::info!("rb {mode} r = {r}: sup validation error {:e}", records.last().map_or(0.0, |t| t.sup_rel_err));
        }
        if r == r_max {
            break;
        }
        let mut best: Option<usize> = None;
        for &t in &train {
            if evals[t].1.is_finite() && best.map_or(true, |b| evals[t].1 > evals[b].1) {
                best = Some(t);
            }
        }
        let Some(t) = best else { break };
        if selected.contains(&t) {
            log::warn!("reduced-basis greedy stagnated at r = {r}: {:?} selected twice", grid[t]);
            stagnated = true;
            break;
        }
        let xi = &grid[t];
        let f = Arc::new(problem.op.factorize_at(xi)?);
        let snapshot = f.apply_inverse(&problem.rhs.eval(xi)?, false)?;
        if !model.add_snapshot(xi, snapshot)? {
            log::warn!("reduced-basis greedy stagnated at r = {r}: dependent snapshot at {xi:?}");
            stagnated = true;
            break;
        }
        selected.push(t);
        if mode == RbMode::PrecondReuse {
            precond.as_mut().expect("reuse preconditioner").add_inverse(xi, f)?;
        }
    }
    Ok(RbOutcome { model, trace: GreedyTrace { mode, records, stagnated }, precond })
}

/// u(ξ) at every grid point.
pub fn truth_solutions(problem: &BenchmarkProblem) -> Result<Vec<Vec<f64>>> {
    problem.grid.par_iter().map(|xi| solve_full(&problem.op, &problem.rhs, xi)).collect()
}

/// Preconditioner from an explicit basis of inverses and weights, for tests
/// and for comparing against R_X⁻¹.
pub fn weighted_inverse(lambda: &[f64], basis: &InverseBasis) -> Result<WeightedMaps> {
    WeightedMaps::from_basis(lambda, basis)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quasi_opt_examples() {
        assert_eq!(quasi_opt_constant(0.0), 1.0);
        assert!((quasi_opt_constant(0.6) - 1.25).abs() < 1e-15);
        assert!(quasi_opt_constant(0.99) < quasi_opt_constant(0.999));
        assert!(quasi_opt_constant(1.0).is_infinite());
    }

    #[test]
    fn interval_and_quantile() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(quantile(&v, 0.97), 97.0);
        let (lo, hi) = confidence_interval(&v, 0.97);
        assert_eq!((lo, hi), (4.0, 100.0));
    }

    #[test]
    fn split_keeps_every_fifth() {
        let (t, v) = split_grid(10, 5);
        assert_eq!(v, vec![2, 7]);
        assert_eq!(t.len(), 8);
    }
}
