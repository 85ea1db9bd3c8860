//! Benchmark problems (periodic advection-diffusion-reaction, synthetic
//! multi-parameter diffusion) and interpolation baselines.

use crate::eim::uniform_grid;
use crate::error::{Error, Result};
use crate::greedy::lhs_points;
use crate::mmio;
use crate::operators::{AffineOperator, AffineVector, CoeffFn, NormMatrix};
use crate::rng::component_rng;
use crate::sparse::CsrMatrix;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemMeta {
    pub name: String,
    pub description: String,
    pub mesh_side: Option<usize>,
    pub advection: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkProblem {
    pub op: AffineOperator,
    pub rhs: AffineVector,
    pub grid: Vec<Vec<f64>>,
    pub norm: NormMatrix,
    pub meta: ProblemMeta,
}

impl BenchmarkProblem {
    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    /// Factorizes the operator at up to `count` grid points drawn from `seed`.
    pub fn check_nonsingular(&self, count: usize, seed: u64) -> Result<()> {
        let mut rng = component_rng(seed, "nonsingular-check");
        for _ in 0..count.min(self.grid.len()) {
            let t = rng.random_range(0..self.grid.len());
            self.op.factorize_at(&self.grid[t])?;
        }
        Ok(())
    }
}

/// Source term of the ADR benchmark.
pub fn adr_source(x: f64, y: f64) -> f64 {
    (-((x - 0.5).powi(2) + (y - 0.5).powi(2)) / 0.01).exp()
}

/// P1 finite elements on a periodic `side`×`side` grid of [0,1]², each cell
/// split along its rising diagonal. Returns (stiffness + mass, ∫φ_i∂_xφ_j,
/// ∫φ_i∂_yφ_j, mass).
pub fn adr_matrices(side: usize) -> (CsrMatrix, CsrMatrix, CsrMatrix, CsrMatrix) {
    let n = side * side;
    let h = 1.0 / side as f64;
    let area = 0.5 * h * h;
    let node = |i: usize, j: usize| (i % side) + side * (j % side);
    let mut a0 = Vec::new();
    let mut a1 = Vec::new();
    let mut a2 = Vec::new();
    let mut mass = Vec::new();
    for j in 0..side {
        for i in 0..side {
            // local coordinates in units of h
            let tris: [[(usize, usize, f64, f64); 3]; 2] = [
                [(i, j, 0.0, 0.0), (i + 1, j, 1.0, 0.0), (i + 1, j + 1, 1.0, 1.0)],
                [(i, j, 0.0, 0.0), (i + 1, j + 1, 1.0, 1.0), (i, j + 1, 0.0, 1.0)],
            ];
            for t in &tris {
                let (x, y): (Vec<f64>, Vec<f64>) = t.iter().map(|v| (v.2 * h, v.3 * h)).unzip();
                let det = (x[1] - x[0]) * (y[2] - y[0]) - (x[2] - x[0]) * (y[1] - y[0]);
                // ∇φ_a = (y_b − y_c, x_c − x_b)/det for (a, b, c) cyclic
                let grads: Vec<(f64, f64)> = (0..3)
                    .map(|a| {
                        let b = (a + 1) % 3;
                        let c = (a + 2) % 3;
                        ((y[b] - y[c]) / det, (x[c] - x[b]) / det)
                    })
                    .collect();
                for a in 0..3 {
                    for b in 0..3 {
                        let (ra, rb) = (node(t[a].0, t[a].1), node(t[b].0, t[b].1));
                        let k = area * (grads[a].0 * grads[b].0 + grads[a].1 * grads[b].1);
                        let m = area / 12.0 * if a == b { 2.0 } else { 1.0 };
                        a0.push((ra, rb, k + m));
                        mass.push((ra, rb, m));
                        a1.push((ra, rb, area / 3.0 * grads[b].0));
                        a2.push((ra, rb, area / 3.0 * grads[b].1));
                    }
                }
            }
        }
    }
    let build = |t: Vec<(usize, usize, f64)>| CsrMatrix::from_triplets(n, n, &t).expect("valid triplets");
    (build(a0), build(a1), build(a2), build(mass))
}

/// Periodic ADR problem −Δu + v(ξ)·∇u + u = f with v(ξ) = D(cos 2πξ, sin 2πξ),
/// on a grid of 250 parameter values in [0, 1]. R_X is the symmetric part A₀.
pub fn assemble_adr(mesh_side: usize, d: f64) -> Result<BenchmarkProblem> {
    if mesh_side < 4 {
        return Err(Error::InvalidArgument(format!("mesh side {mesh_side} < 4")));
    }
    let (a0, a1, a2, mass) = adr_matrices(mesh_side);
    let h = 1.0 / mesh_side as f64;
    let n = mesh_side * mesh_side;
    let fnod: Vec<f64> = (0..n).map(|k| adr_source((k % mesh_side) as f64 * h, (k / mesh_side) as f64 * h)).collect();
    let b = mass.mul_vec(&fnod)?;
    let op = AffineOperator::new(
        vec![a0.clone(), a1, a2],
        vec![
            CoeffFn::constant(1.0),
            CoeffFn::Cos { coord: 0, freq: 1.0, scale: d },
            CoeffFn::Sin { coord: 0, freq: 1.0, scale: d },
        ],
        1,
    )?;
    let prob = BenchmarkProblem {
        op,
        rhs: AffineVector::constant(b),
        grid: uniform_grid(0.0, 1.0, 250),
        norm: NormMatrix::new(a0)?,
        meta: ProblemMeta {
            name: "adr".into(),
            description: format!("periodic advection-diffusion-reaction, {mesh_side}x{mesh_side} P1 mesh, D = {d}"),
            mesh_side: Some(mesh_side),
            advection: Some(d),
        },
    };
    prob.check_nonsingular(10, 0)?;
    Ok(prob)
}

/// Options of the synthetic multi-parameter generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub d: usize,
    pub n: usize,
    pub num_terms: usize,
    pub grid_size: usize,
    pub seed: u64,
}

/// A(ξ) = A₀ + Σ_k g_k(ξ)A_k on a grid graph with n nodes: A₀ is a weighted
/// graph Laplacian plus a diagonal shift, A_k the Laplacian of the edges
/// inside region k, and g_k log-uniform in [0.1, 10] along coordinate
/// (k−1) mod d. The grid Ξ is a Latin hypercube in [0,1]^d.
pub fn synthetic_multiparam(spec: &SyntheticSpec) -> Result<BenchmarkProblem> {
    let SyntheticSpec { d, n, num_terms, grid_size, seed } = *spec;
    if d < 1 || num_terms < 2 || n < 2 || grid_size < 1 {
        return Err(Error::InvalidArgument("synthetic problem needs d ≥ 1, m_A ≥ 2, n ≥ 2".into()));
    }
    let width = (n as f64).sqrt().ceil() as usize;
    let mut edges = Vec::new();
    for v in 0..n {
        if (v + 1) % width != 0 && v + 1 < n {
            edges.push((v, v + 1));
        }
        if v + width < n {
            edges.push((v, v + width));
        }
    }
    let regions = num_terms - 1;
    let region = |v: usize| (v * regions / n).min(regions - 1);
    let grid = lhs_points(d, grid_size, crate::rng::derive_seed(seed, "synthetic-grid"), &vec![(0.0, 1.0); d])?;
    let mut shift = 1e-2;
    for attempt in 0..5 {
        let mut rng = component_rng(seed, &format!("synthetic-terms-{attempt}"));
        let lap = |sel: &dyn Fn(usize, usize) -> bool, rng: &mut crate::rng::Rng| {
            let mut t = Vec::new();
            for &(a, b) in &edges {
                if sel(a, b) {
                    let w: f64 = rng.random_range(0.5..1.5);
                    t.extend([(a, a, w), (b, b, w), (a, b, -w), (b, a, -w)]);
                }
            }
            t
        };
        let mut t0 = lap(&|_, _| true, &mut rng);
        t0.extend((0..n).map(|v| (v, v, shift)));
        let mut terms = vec![CsrMatrix::from_triplets(n, n, &t0)?];
        let mut coeffs = vec![CoeffFn::constant(1.0)];
        for k in 0..regions {
            let tk = lap(&|a, b| region(a) == k && region(b) == k, &mut rng);
            terms.push(CsrMatrix::from_triplets(n, n, &tk)?);
            coeffs.push(CoeffFn::LogUniform { coord: k % d, lo: 0.1, hi: 10.0 });
        }
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = NormMatrix::new(terms[0].clone())?;
        let op = AffineOperator::new(terms, coeffs, d)?;
        let prob = BenchmarkProblem {
            op,
            rhs: AffineVector::constant(b),
            grid: grid.clone(),
            norm,
            meta: ProblemMeta {
                name: "synthetic".into(),
                description: format!("grid-graph diffusion, n = {n}, d = {d}, {num_terms} terms, seed {seed}"),
                mesh_side: None,
                advection: None,
            },
        };
        match prob.check_nonsingular(10, seed) {
            Ok(()) => return Ok(prob),
            Err(e) => {
                log::warn!("synthetic problem attempt {attempt} rejected: {e}");
                shift *= 10.0;
            }
        }
    }
    Err(Error::GenerationFailed { attempts: 5 })
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Inverse-distance weights λ_i ∝ ‖ξ − ξ_i‖^{-s}.
pub fn shepard_weights(xi: &[f64], points: &[Vec<f64>], s: f64) -> Result<Vec<f64>> {
    if !(s > 0.0) {
        return Err(Error::InvalidArgument(format!("Shepard exponent {s} must be positive")));
    }
    let m = points.len();
    let mut w = vec![0.0; m];
    if let Some(i) = points.iter().position(|p| p.as_slice() == xi) {
        w[i] = 1.0;
        return Ok(w);
    }
    for (wi, p) in w.iter_mut().zip(points) {
        *wi = distance(xi, p).powf(-s);
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

/// λ = e_i for the nearest point (lowest index on ties).
pub fn nearest_weights(xi: &[f64], points: &[Vec<f64>]) -> Vec<f64> {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d = distance(xi, p);
        if d < bd {
            bd = d;
            best = i;
        }
    }
    let mut w = vec![0.0; points.len()];
    if !points.is_empty() {
        w[best] = 1.0;
    }
    w
}

/// On-disk description of a problem: Matrix Market files next to this manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemManifest {
    pub meta: ProblemMeta,
    pub param_dim: usize,
    pub operator_terms: Vec<String>,
    pub operator_coeffs: Vec<CoeffFn>,
    pub rhs_terms: Vec<String>,
    pub rhs_coeffs: Vec<CoeffFn>,
    /// Norm matrix file; identity when absent.
    pub norm: Option<String>,
    pub grid: Vec<Vec<f64>>,
}

pub fn export_problem(p: &BenchmarkProblem, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut operator_terms = Vec::new();
    for (k, t) in p.op.terms().iter().enumerate() {
        let name = format!("A{k}.mtx");
        mmio::write_sparse(dir.join(&name), t)?;
        operator_terms.push(name);
    }
    let mut rhs_terms = Vec::new();
    for (k, t) in p.rhs.terms().iter().enumerate() {
        let name = format!("b{k}.mtx");
        mmio::write_vector(dir.join(&name), t)?;
        rhs_terms.push(name);
    }
    mmio::write_sparse(dir.join("norm.mtx"), p.norm.matrix())?;
    let manifest = ProblemManifest {
        meta: p.meta.clone(),
        param_dim: p.op.param_dim(),
        operator_terms,
        operator_coeffs: p.op.coeffs().to_vec(),
        rhs_terms,
        rhs_coeffs: p.rhs.coeffs().to_vec(),
        norm: Some("norm.mtx".into()),
        grid: p.grid.clone(),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn import_problem(dir: impl AsRef<Path>) -> Result<BenchmarkProblem> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let m: ProblemManifest = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    let terms = m.operator_terms.iter().map(|f| mmio::read_sparse(dir.join(f))).collect::<Result<Vec<_>>>()?;
    let op = AffineOperator::new(terms, m.operator_coeffs, m.param_dim)?;
    let rhs_terms = m.rhs_terms.iter().map(|f| mmio::read_vector(dir.join(f))).collect::<Result<Vec<_>>>()?;
    let rhs = AffineVector::new(rhs_terms, m.rhs_coeffs)?;
    if rhs.dim() != op.dim() {
        return Err(Error::Dimension { expected: op.dim(), got: rhs.dim() });
    }
    let norm = match &m.norm {
        Some(f) => NormMatrix::new(mmio::read_sparse(dir.join(f))?)?,
        None => NormMatrix::identity(op.dim()),
    };
    if m.grid.is_empty() {
        return Err(Error::InvalidArgument("problem grid is empty".into()));
    }
    Ok(BenchmarkProblem { op, rhs, grid: m.grid, norm, meta: m.meta })
}
