//! Greedy selection of interpolation points for the preconditioner.

use crate::eim::{online_eval, SurrogateBuilder, SurrogateNE};
use crate::error::{Error, Result};
use crate::operators::{AffineOperator, IdentityMap, LinearMap};
use crate::precond::{
    condition_number, frob_residual, sketched_residual_direct, solve_coefficients, CoefficientSolution,
    ConstraintMode, InverseBasis, NormalEq, SpectralConstants, WeightedMaps,
};
use crate::reduction::{delta_rm, ReducedModel};
use crate::rng::rng_from_seed;
use crate::sketch::{SketchKind, SketchMatrix};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// Latin hypercube sample of `m` points in the box `bounds`: each coordinate
/// takes one value in each of its m equal strata.
pub fn lhs_points(d: usize, m: usize, seed: u64, bounds: &[(f64, f64)]) -> Result<Vec<Vec<f64>>> {
    if m == 0 || d == 0 {
        return Err(Error::InvalidArgument("LHS needs m ≥ 1 and d ≥ 1".into()));
    }
    if bounds.len() != d {
        return Err(Error::Dimension { expected: d, got: bounds.len() });
    }
    let mut rng = rng_from_seed(seed);
    let mut pts = vec![vec![0.0; d]; m];
    for (c, &(lo, hi)) in bounds.iter().enumerate() {
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut rng);
        for (i, p) in pts.iter_mut().enumerate() {
            let u: f64 = rng.random();
            p[c] = lo + (hi - lo) * (perm[i] as f64 + u) / m as f64;
        }
    }
    Ok(pts)
}

/// One iteration of a greedy point selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    /// Basis size after the point was added.
    pub m: usize,
    pub xi_selected: Vec<f64>,
    /// sup over Ξ of the score (sketched residual or δ) of P_m.
    pub sup_score: f64,
    /// sup over Ξ of κ(P_m A), when computed.
    pub sup_kappa: Option<f64>,
}

/// Serializable description of a preconditioner, enough to rebuild it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreconditionerState {
    pub points: Vec<Vec<f64>>,
    pub mode: ConstraintMode,
    pub sketch_kind: SketchKind,
    pub sketch_columns: usize,
    pub sketch_seed: u64,
    pub strategy: String,
    pub initial_sup_score: Option<f64>,
    pub initial_sup_kappa: Option<f64>,
    pub history: Vec<HistoryRecord>,
}

/// Interpolated inverse P_m(ξ) = Σ λ_i(ξ) A(ξ_i)⁻¹ with an online surrogate
/// for λ(ξ). With an empty basis it is the identity.
pub struct Preconditioner {
    op: AffineOperator,
    basis: InverseBasis,
    builder: SurrogateBuilder,
    surrogate: SurrogateNE,
    mode: ConstraintMode,
    spectral: Option<SpectralConstants>,
    sketch: SketchMatrix,
    pub history: Vec<HistoryRecord>,
    pub initial_sup_score: Option<f64>,
    pub initial_sup_kappa: Option<f64>,
    pub strategy: String,
}

impl fmt::Debug for Preconditioner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Preconditioner")
            .field("points", &self.basis.points())
            .field("mode", &self.mode)
            .field("history", &self.history)
            .finish()
    }
}

/// Relative tolerance of the spectral constants used by the kappa mode.
pub const SPECTRAL_TOL: f64 = 1e-6;

impl Preconditioner {
    /// Empty preconditioner; `grid` is the training set used to place the
    /// surrogate's magic points.
    pub fn new(op: &AffineOperator, sketch: SketchMatrix, grid: &[Vec<f64>], mode: ConstraintMode) -> Result<Self> {
        let mut builder = SurrogateBuilder::new(op, &sketch, grid)?;
        let basis = InverseBasis::new(op.dim());
        let surrogate = builder.update(&basis)?;
        let spectral = matches!(mode, ConstraintMode::Kappa(_)).then(|| SpectralConstants::empty(SPECTRAL_TOL));
        Ok(Self {
            op: op.clone(),
            basis,
            builder,
            surrogate,
            mode,
            spectral,
            sketch,
            history: Vec::new(),
            initial_sup_score: None,
            initial_sup_kappa: None,
            strategy: "manual".into(),
        })
    }

    /// Preconditioner interpolating the inverse at fixed points.
    pub fn from_points(op: &AffineOperator, sketch: SketchMatrix, grid: &[Vec<f64>], mode: ConstraintMode, points: &[Vec<f64>]) -> Result<Self> {
        let mut p = Self::new(op, sketch, grid, mode)?;
        for xi in points {
            p.add_point(xi)?;
        }
        Ok(p)
    }

    /// Factorizes A(ξ) and adds its inverse to the basis.
    pub fn add_point(&mut self, xi: &[f64]) -> Result<()> {
        let f = self.op.factorize_at(xi)?;
        self.add_inverse(xi, Arc::new(f))
    }

    /// Adds an already factorized inverse A(ξ)⁻¹.
    pub fn add_inverse(&mut self, xi: &[f64], inv: Arc<dyn LinearMap>) -> Result<()> {
        if self.basis.len() >= self.sketch.ncols() {
            return Err(Error::SketchTooSmall { columns: self.sketch.ncols(), basis: self.basis.len() + 1 });
        }
        let mut basis = self.basis.clone();
        basis.push(xi.to_vec(), inv)?;
        if let Some(sc) = &mut self.spectral {
            sc.extend(&basis)?;
        }
        self.surrogate = self.builder.update(&basis)?;
        self.basis = basis;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }
    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }
    pub fn dim(&self) -> usize {
        self.basis.dim()
    }
    pub fn basis(&self) -> &InverseBasis {
        &self.basis
    }
    pub fn points(&self) -> &[Vec<f64>] {
        self.basis.points()
    }
    pub fn mode(&self) -> ConstraintMode {
        self.mode
    }
    pub fn operator(&self) -> &AffineOperator {
        &self.op
    }
    pub fn sketch(&self) -> &SketchMatrix {
        &self.sketch
    }
    pub fn surrogate(&self) -> &SurrogateNE {
        &self.surrogate
    }
    pub fn spectral(&self) -> Option<&SpectralConstants> {
        self.spectral.as_ref()
    }

    pub fn normal_eq(&self, xi: &[f64]) -> Result<NormalEq> {
        online_eval(&self.surrogate, &self.op, xi)
    }

    pub fn coefficients(&self, xi: &[f64]) -> Result<CoefficientSolution> {
        let ne = self.normal_eq(xi)?;
        solve_coefficients(&ne, self.mode, self.spectral.as_ref())
    }

    /// P_m(ξ) as a linear map (identity when the basis is empty).
    pub fn map_at(&self, xi: &[f64]) -> Result<WeightedMaps> {
        if self.basis.is_empty() {
            return Ok(WeightedMaps::single(Arc::new(IdentityMap(self.dim()))));
        }
        let sol = self.coefficients(xi)?;
        WeightedMaps::from_basis(&sol.lambda, &self.basis)
    }

    /// ‖(I − P_m(ξ)A(ξ))V‖_F from the surrogate normal equations; for the
    /// empty basis, ‖(I − A(ξ))V‖_F directly.
    pub fn sketched_residual(&self, xi: &[f64]) -> Result<f64> {
        if self.basis.is_empty() {
            return self.sketched_residual_direct(xi);
        }
        let ne = self.normal_eq(xi)?;
        let sol = solve_coefficients(&ne, self.mode, self.spectral.as_ref())?;
        Ok(frob_residual(&ne, &sol.lambda))
    }

    /// ‖(I − P_m(ξ)A(ξ))V‖_F by explicit application to the columns of V.
    pub fn sketched_residual_direct(&self, xi: &[f64]) -> Result<f64> {
        let a = self.op.eval(xi)?;
        if self.basis.is_empty() {
            let n = self.dim();
            let mut av = vec![0.0; n];
            let mut total = 0.0;
            for c in 0..self.sketch.ncols() {
                let col = self.sketch.column(c);
                a.mul_vec_into(col, &mut av);
                total += col.iter().zip(&av).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
            }
            return Ok(total.sqrt());
        }
        let sol = self.coefficients(xi)?;
        sketched_residual_direct(&a, &self.basis, &sol.lambda, &self.sketch)
    }

    /// Spectral κ(P_m(ξ)A(ξ)) by Lanczos.
    pub fn kappa_at(&self, xi: &[f64], tol: f64) -> Result<f64> {
        let a = self.op.eval(xi)?;
        let (k, ok) = if self.basis.is_empty() {
            condition_number(&a, None, tol, 500)?
        } else {
            let p = self.map_at(xi)?;
            condition_number(&a, Some(&p), tol, 500)?
        };
        if !ok {
            log::warn!("condition number at {xi:?} did not converge; estimate {k:e}");
        }
        Ok(k)
    }

    pub fn state(&self) -> PreconditionerState {
        PreconditionerState {
            points: self.basis.points().to_vec(),
            mode: self.mode,
            sketch_kind: self.sketch.kind(),
            sketch_columns: self.sketch.ncols(),
            sketch_seed: self.sketch.seed(),
            strategy: self.strategy.clone(),
            initial_sup_score: self.initial_sup_score,
            initial_sup_kappa: self.initial_sup_kappa,
            history: self.history.clone(),
        }
    }

    /// Rebuilds a preconditioner from its state, refactorizing each point.
    pub fn from_state(op: &AffineOperator, grid: &[Vec<f64>], st: &PreconditionerState) -> Result<Self> {
        let v = SketchMatrix::new(st.sketch_kind, op.dim(), st.sketch_columns, st.sketch_seed)?;
        let mut p = Self::from_points(op, v, grid, st.mode, &st.points)?;
        p.history = st.history.clone();
        p.initial_sup_score = st.initial_sup_score;
        p.initial_sup_kappa = st.initial_sup_kappa;
        p.strategy = st.strategy.clone();
        Ok(p)
    }
}

/// Options shared by the greedy drivers.
#[derive(Debug, Clone, Default)]
pub struct GreedyOptions {
    /// Forced first point instead of the argmax rule.
    pub seed_point: Option<Vec<f64>>,
    /// Basis sizes at which sup_ξ κ(P_mA(ξ)) is computed (m = 0 included).
    pub kappa_at: Vec<usize>,
    /// Relative Lanczos tolerance of the κ diagnostics.
    pub kappa_tol: f64,
    /// Stop once the sup score falls to this value.
    pub stop_score: f64,
}

/// Index of the largest finite score among allowed entries; ties go to the lowest index.
fn argmax(scores: &[f64], allowed: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if allowed[i] && s.is_finite() && best.map_or(true, |b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

fn sup(scores: &[f64]) -> f64 {
    scores.iter().copied().filter(|s| s.is_finite()).fold(0.0, f64::max)
}

/// sup over the grid of κ(P_mA(ξ)).
pub fn sup_kappa(p: &Preconditioner, grid: &[Vec<f64>], tol: f64) -> Result<f64> {
    let ks = grid.par_iter().map(|xi| p.kappa_at(xi, tol)).collect::<Result<Vec<_>>>()?;
    Ok(ks.iter().copied().fold(0.0, f64::max))
}

/// Greedy loop shared by the selection rules: scores P_m on the grid, adds
/// the argmax (skipping selected and singular points) until `m_max`.
fn greedy_loop<F>(p: &mut Preconditioner, grid: &[Vec<f64>], m_max: usize, opts: &GreedyOptions, score: F) -> Result<()>
where
    F: Fn(&Preconditioner, &[f64]) -> Result<f64> + Sync,
{
    let kappa_tol = if opts.kappa_tol > 0.0 { opts.kappa_tol } else { 1e-4 };
    let sweep = |p: &Preconditioner| -> Result<Vec<f64>> { grid.par_iter().map(|xi| score(p, xi)).collect() };
    let mut scores = sweep(p)?;
    if p.is_empty() {
        p.initial_sup_score = Some(sup(&scores));
        if opts.kappa_at.contains(&0) {
            p.initial_sup_kappa = Some(sup_kappa(p, grid, kappa_tol)?);
        }
    }
    let mut blocked: Vec<bool> = grid.iter().map(|xi| p.points().iter().any(|q| q == xi)).collect();
    while p.len() < m_max {
        if sup(&scores) <= opts.stop_score && !(p.is_empty() && opts.seed_point.is_some()) {
            log::info!("greedy stopped at m = {}: sup score {:e}", p.len(), sup(&scores));
            break;
        }
        let chosen = if let (true, Some(sp)) = (p.is_empty(), &opts.seed_point) {
            p.add_point(sp)?;
            sp.clone()
        } else {
            let mut picked = None;
            loop {
                let allowed: Vec<bool> = blocked.iter().map(|b| !b).collect();
                let Some(i) = argmax(&scores, &allowed) else { break };
                blocked[i] = true;
                match p.add_point(&grid[i]) {
                    Ok(()) => {
                        picked = Some(grid[i].clone());
                        break;
                    }
                    Err(Error::SingularOperator { .. }) => {
                        log::warn!("operator singular at {:?}; taking the next-best point", grid[i]);
                    }
                    Err(e) => return Err(e),
                }
            }
            match picked {
                Some(xi) => xi,
                None => break,
            }
        };
        if let Some(i) = grid.iter().position(|q| *q == chosen) {
            blocked[i] = true;
        }
        scores = sweep(p)?;
        let m = p.len();
        let sup_kappa = if opts.kappa_at.contains(&m) { Some(sup_kappa(p, grid, kappa_tol)?) } else { None };
        log::info!("m = {m}: selected {chosen:?}, sup score {:e}", sup(&scores));
        p.history.push(HistoryRecord { m, xi_selected: chosen, sup_score: sup(&scores), sup_kappa });
    }
    Ok(())
}

/// Greedy selection by the sketched Frobenius residual, starting from P₀ = I.
pub fn greedy_frob(op: &AffineOperator, grid: &[Vec<f64>], v: SketchMatrix, m_max: usize, mode: ConstraintMode, opts: &GreedyOptions) -> Result<Preconditioner> {
    let mut p = Preconditioner::new(op, v, grid, mode)?;
    p.strategy = "frob-residual".into();
    greedy_frob_continue(&mut p, grid, m_max, opts)?;
    Ok(p)
}

/// Continues a frob-residual greedy run (for example after a resume).
pub fn greedy_frob_continue(p: &mut Preconditioner, grid: &[Vec<f64>], m_max: usize, opts: &GreedyOptions) -> Result<()> {
    if m_max < 1 {
        return Err(Error::InvalidArgument("m_max must be at least 1".into()));
    }
    greedy_loop(p, grid, m_max, opts, |p, xi| p.sketched_residual(xi))
}

/// Greedy selection by the δ-proximality of the preconditioned
/// Petrov-Galerkin projection onto a fixed reduced space.
pub fn greedy_delta(op: &AffineOperator, grid: &[Vec<f64>], model: &ReducedModel, v: SketchMatrix, m_max: usize, mode: ConstraintMode, opts: &GreedyOptions) -> Result<Preconditioner> {
    if m_max < 1 {
        return Err(Error::InvalidArgument("m_max must be at least 1".into()));
    }
    let mut p = Preconditioner::new(op, v, grid, mode)?;
    p.strategy = "delta-rm".into();
    let opts = GreedyOptions { stop_score: opts.stop_score.max(1e-12), ..opts.clone() };
    greedy_loop(&mut p, grid, m_max, &opts, |p, xi| delta_rm(xi, model, p))?;
    Ok(p)
}

/// Preconditioner interpolating at an LHS sample of the unit box.
pub fn lhs_preconditioner(op: &AffineOperator, grid: &[Vec<f64>], v: SketchMatrix, m: usize, mode: ConstraintMode, seed: u64) -> Result<Preconditioner> {
    let pts = lhs_points(op.param_dim(), m, seed, &vec![(0.0, 1.0); op.param_dim()])?;
    let mut p = Preconditioner::from_points(op, v, grid, mode, &pts)?;
    p.strategy = "lhs".into();
    Ok(p)
}

/// Version tag written in the first row of history files.
pub const HISTORY_SCHEMA: &str = "# schema: paraprec-greedy-history v1";

/// History CSV: m, xi_selected, sup_sketch_residual (or sup_delta), sup_kappa.
pub fn write_history_csv(p: &Preconditioner, w: impl std::io::Write) -> Result<()> {
    let mut w = w;
    writeln!(w, "{HISTORY_SCHEMA}")?;
    let mut csv = csv::Writer::from_writer(w);
    let score_name = if p.strategy == "delta-rm" { "sup_delta" } else { "sup_sketch_residual" };
    csv.write_record(["m", "xi_selected", score_name, "sup_kappa"])?;
    if let Some(s) = p.initial_sup_score {
        csv.write_record(["0".to_string(), String::new(), fmt_f64(s), p.initial_sup_kappa.map(fmt_f64).unwrap_or_default()])?;
    }
    for h in &p.history {
        csv.write_record([
            h.m.to_string(),
            fmt_point(&h.xi_selected),
            fmt_f64(h.sup_score),
            h.sup_kappa.map(fmt_f64).unwrap_or_default(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

/// Deterministic float formatting for CSV output.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.12e}")
}

/// Point coordinates joined by ';'.
pub fn fmt_point(p: &[f64]) -> String {
    p.iter().map(|v| format!("{v:.12e}")).collect::<Vec<_>>().join(";")
}
