//! Empirical interpolation of scalar function families and the resulting
//! affine surrogate of the sketched normal equations.

use crate::error::{check_len, Error, Result};
use crate::operators::AffineOperator;
use crate::precond::{dense_rows, InverseBasis, NormalEq, SketchedProducts};
use crate::sketch::SketchMatrix;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Relative stopping tolerance: stop once the selected residual falls to
/// this multiple of the first one.
pub const DEFAULT_REL_TOL: f64 = 1e-14;

/// Interpolation Ψ(ξ) = Q⁻¹(ζ_{i*_j}(ξ))_j of a tabulated function family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EimModel {
    pub magic_points: Vec<Vec<f64>>,
    /// Grid index of each magic point.
    pub magic_grid_indices: Vec<usize>,
    /// Family index i*_k selected at each step.
    pub magic_indices: Vec<usize>,
    /// Q_ij = ζ_{i*_i}(ξ*_j)
    #[serde(with = "dense_rows")]
    pub q: DMatrix<f64>,
    #[serde(with = "dense_rows")]
    pub q_inv: DMatrix<f64>,
    /// Selected residual magnitudes e_1 ≥ e_2 ≥ …
    pub residuals: Vec<f64>,
    /// Largest remaining residual when the loop stopped.
    pub final_residual: f64,
    pub family_size: usize,
}

impl EimModel {
    pub fn rank(&self) -> usize {
        self.magic_indices.len()
    }

    /// Ψ(ξ) from the values `zeta(i)` = ζ_i(ξ) of the family at ξ.
    pub fn coefficients_from(&self, xi: &[f64], zeta: impl Fn(usize) -> f64) -> Vec<f64> {
        let k = self.rank();
        if let Some(pos) = self.magic_points.iter().position(|p| p.as_slice() == xi) {
            let mut e = vec![0.0; k];
            e[pos] = 1.0;
            return e;
        }
        let v = DVector::from_iterator(k, self.magic_indices.iter().map(|&i| zeta(i)));
        (&self.q_inv * v).iter().copied().collect()
    }
}

/// Runs the greedy residual-maximization loop over a table with one row per
/// function and one column per grid point. Ties go to the lowest
/// (function, grid) index pair.
pub fn eim(table: &DMatrix<f64>, grid: &[Vec<f64>], rel_tol: f64) -> Result<EimModel> {
    let (nf, ng) = table.shape();
    check_len(ng, grid.len())?;
    if nf == 0 || ng == 0 {
        return Err(Error::EmptyMatrix("empty function family".into()));
    }
    let mut r = table.clone();
    let mut picks: Vec<(usize, usize)> = Vec::new();
    let mut residuals = Vec::new();
    let mut e_init = 0.0;
    let final_residual;
    loop {
        let mut best = (0, 0, -1.0f64);
        for i in 0..nf {
            for t in 0..ng {
                let a = r[(i, t)].abs();
                if a > best.2 {
                    best = (i, t, a);
                }
            }
        }
        let (bi, bt, e) = best;
        if picks.is_empty() {
            e_init = e;
        }
        if e == 0.0 || (!picks.is_empty() && e <= rel_tol * e_init) || picks.len() == nf.min(ng) {
            final_residual = e;
            break;
        }
        picks.push((bi, bt));
        residuals.push(e);
        let pivot = r[(bi, bt)];
        let col: Vec<f64> = (0..nf).map(|i| r[(i, bt)]).collect();
        let row: Vec<f64> = (0..ng).map(|t| r[(bi, t)] / pivot).collect();
        for t in 0..ng {
            for i in 0..nf {
                r[(i, t)] -= col[i] * row[t];
            }
        }
        // exact zeros where the interpolant is exact by construction
        for i in 0..nf {
            r[(i, bt)] = 0.0;
        }
        for t in 0..ng {
            r[(bi, t)] = 0.0;
        }
    }
    let k = picks.len();
    let q = DMatrix::from_fn(k, k, |i, j| table[(picks[i].0, picks[j].1)]);
    let q_inv = if k == 0 {
        DMatrix::zeros(0, 0)
    } else {
        let det = q.clone().lu().determinant();
        if det == 0.0 || !det.is_finite() {
            return Err(Error::InvalidArgument("interpolation matrix is singular".into()));
        }
        q.clone().try_inverse().ok_or_else(|| Error::InvalidArgument("interpolation matrix is singular".into()))?
    };
    Ok(EimModel {
        magic_points: picks.iter().map(|&(_, t)| grid[t].clone()).collect(),
        magic_grid_indices: picks.iter().map(|&(_, t)| t).collect(),
        magic_indices: picks.iter().map(|&(i, _)| i).collect(),
        q,
        q_inv,
        residuals,
        final_residual,
        family_size: nf,
    })
}

/// Rows Φ_k(ξ_t) of the coefficient functions of `op` over the grid.
pub fn tabulate_coefficients(op: &AffineOperator, grid: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ma = op.num_terms();
    let mut t = DMatrix::zeros(ma, grid.len());
    for (j, xi) in grid.iter().enumerate() {
        let c = op.coefficients(xi)?;
        for k in 0..ma {
            t[(k, j)] = c[k];
        }
    }
    Ok(t)
}

/// Rows Φ_aΦ_b (ordered pairs, index a·m_A + b) over the grid.
pub fn tabulate_products(coeffs: &DMatrix<f64>) -> DMatrix<f64> {
    let (ma, ng) = coeffs.shape();
    DMatrix::from_fn(ma * ma, ng, |r, t| coeffs[(r / ma, t)] * coeffs[(r % ma, t)])
}

/// Affine surrogate M^V(ξ) ≈ Σ Ψ_k(ξ) M^V(ξ*_k), S^V(ξ) ≈ Σ Ψ̃_k(ξ) S^V(ξ̃*_k).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateNE {
    pub m_model: EimModel,
    pub s_model: EimModel,
    pub m_values: Vec<NormalEq>,
    pub s_values: Vec<NormalEq>,
    pub num_terms: usize,
}

impl SurrogateNE {
    pub fn m_count(&self) -> usize {
        self.m_model.rank()
    }
    pub fn s_count(&self) -> usize {
        self.s_model.rank()
    }
    pub fn basis_len(&self) -> usize {
        self.m_values.first().map_or(0, |ne| ne.len())
    }
}

/// Evaluates the surrogate from the coefficient values Φ(ξ).
pub fn online_eval_with(sur: &SurrogateNE, xi: &[f64], phi: &[f64]) -> NormalEq {
    let ma = sur.num_terms;
    let psi = sur.m_model.coefficients_from(xi, |r| phi[r / ma] * phi[r % ma]);
    let psi_s = sur.s_model.coefficients_from(xi, |r| phi[r]);
    let m = combine(&psi, &sur.m_values, |ne| &ne.m);
    let s = combine_vec(&psi_s, &sur.s_values);
    let vnorm2 = sur.m_values.first().or(sur.s_values.first()).map_or(0.0, |ne| ne.vnorm2);
    NormalEq { m, s, vnorm2 }
}

pub fn online_eval(sur: &SurrogateNE, op: &AffineOperator, xi: &[f64]) -> Result<NormalEq> {
    let phi = op.coefficients(xi)?;
    Ok(online_eval_with(sur, xi, &phi))
}

fn unit_index(psi: &[f64]) -> Option<usize> {
    let ones: Vec<usize> = (0..psi.len()).filter(|&i| psi[i] == 1.0).collect();
    (ones.len() == 1 && psi.iter().filter(|&&v| v == 0.0).count() == psi.len() - 1).then(|| ones[0])
}

fn combine(psi: &[f64], values: &[NormalEq], get: impl Fn(&NormalEq) -> &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(i) = unit_index(psi) {
        return get(&values[i]).clone();
    }
    let m = values.first().map_or(0, |v| v.len());
    let mut out = DMatrix::zeros(m, m);
    for (p, ne) in psi.iter().zip(values) {
        out += get(ne) * *p;
    }
    out
}

fn combine_vec(psi: &[f64], values: &[NormalEq]) -> Vec<f64> {
    if let Some(i) = unit_index(psi) {
        return values[i].s.clone();
    }
    let m = values.first().map_or(0, |v| v.len());
    let mut out = vec![0.0; m];
    for (p, ne) in psi.iter().zip(values) {
        for (o, s) in out.iter_mut().zip(&ne.s) {
            *o += p * s;
        }
    }
    out
}

/// Offline state reused as the basis grows: magic points depend only on the
/// coefficient functions, so the products P_iA(ξ*)V are cached per magic point.
#[derive(Debug, Clone)]
pub struct SurrogateBuilder {
    m_model: EimModel,
    s_model: EimModel,
    num_terms: usize,
    points: Vec<Vec<f64>>,
    m_slot: Vec<usize>,
    s_slot: Vec<usize>,
    products: Vec<SketchedProducts>,
}

impl SurrogateBuilder {
    pub fn new(op: &AffineOperator, v: &SketchMatrix, grid: &[Vec<f64>]) -> Result<Self> {
        check_len(op.dim(), v.nrows())?;
        let coeffs = tabulate_coefficients(op, grid)?;
        let m_model = eim(&tabulate_products(&coeffs), grid, DEFAULT_REL_TOL)?;
        let s_model = eim(&coeffs, grid, DEFAULT_REL_TOL)?;
        let mut points: Vec<Vec<f64>> = Vec::new();
        let slot = |p: &Vec<f64>, points: &mut Vec<Vec<f64>>| match points.iter().position(|q| q == p) {
            Some(i) => i,
            None => {
                points.push(p.clone());
                points.len() - 1
            }
        };
        let m_slot: Vec<usize> = m_model.magic_points.iter().map(|p| slot(p, &mut points)).collect();
        let s_slot: Vec<usize> = s_model.magic_points.iter().map(|p| slot(p, &mut points)).collect();
        let mats: Vec<_> = points.iter().map(|p| op.eval(p)).collect::<Result<_>>()?;
        let products = mats.iter().map(|a| SketchedProducts::new(a, v)).collect::<Result<_>>()?;
        Ok(Self { m_model, s_model, num_terms: op.num_terms(), points, m_slot, s_slot, products })
    }

    /// Distinct magic points of both interpolations.
    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn memory_bytes(&self) -> usize {
        self.products.iter().map(|p| p.memory_bytes()).sum()
    }

    /// Surrogate for the given basis, assembling only what is new.
    pub fn update(&mut self, basis: &InverseBasis) -> Result<SurrogateNE> {
        if basis.len() < self.products.first().map_or(0, |p| p.len()) {
            return Err(Error::InvalidArgument("basis shrank since the last update".into()));
        }
        self.products.par_iter_mut().map(|p| p.extend(basis)).collect::<Result<Vec<_>>>()?;
        let nes: Vec<NormalEq> = self.products.iter().map(|p| p.normal_eq()).collect();
        Ok(SurrogateNE {
            m_model: self.m_model.clone(),
            s_model: self.s_model.clone(),
            m_values: self.m_slot.iter().map(|&i| nes[i].clone()).collect(),
            s_values: self.s_slot.iter().map(|&i| nes[i].clone()).collect(),
            num_terms: self.num_terms,
        })
    }
}

pub fn build_surrogate(op: &AffineOperator, basis: &InverseBasis, v: &SketchMatrix, grid: &[Vec<f64>]) -> Result<SurrogateNE> {
    SurrogateBuilder::new(op, v, grid)?.update(basis)
}

/// Uniform grid of `count` points on [lo, hi], endpoints included.
pub fn uniform_grid(lo: f64, hi: f64, count: usize) -> Vec<Vec<f64>> {
    if count == 1 {
        return vec![vec![lo]];
    }
    (0..count).map(|i| vec![lo + (hi - lo) * i as f64 / (count - 1) as f64]).collect()
}
