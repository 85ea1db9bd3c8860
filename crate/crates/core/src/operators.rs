//! Affinely parameter-dependent operators and vectors, factorized samples
//! and the X-norm.

use crate::error::{check_len, Error, Result};
use crate::lu::{Pivoting, SparseLu};
use crate::sparse::CsrMatrix;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Scalar coefficient function of the parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CoeffFn {
    Constant { value: f64 },
    /// scale·cos(2π·freq·ξ[coord])
    Cos {
        coord: usize,
        freq: f64,
        #[serde(default = "unit")]
        scale: f64,
    },
    /// scale·sin(2π·freq·ξ[coord])
    Sin {
        coord: usize,
        freq: f64,
        #[serde(default = "unit")]
        scale: f64,
    },
    /// scale·ξ[coord]^power
    Monomial { coord: usize, power: i32, scale: f64 },
    /// lo·(hi/lo)^ξ[coord], mapping [0, 1] log-uniformly onto [lo, hi]
    LogUniform { coord: usize, lo: f64, hi: f64 },
    /// Values given on a finite set of points; evaluation elsewhere fails.
    Tabulated { points: Vec<Vec<f64>>, values: Vec<f64> },
}

fn unit() -> f64 {
    1.0
}

impl CoeffFn {
    pub fn constant(value: f64) -> Self {
        CoeffFn::Constant { value }
    }

    pub fn eval(&self, xi: &[f64]) -> Result<f64> {
        let coord = |c: usize| {
            xi.get(c).copied().ok_or(Error::Dimension { expected: c + 1, got: xi.len() })
        };
        Ok(match self {
            CoeffFn::Constant { value } => *value,
            CoeffFn::Cos { coord: c, freq, scale } => scale * (2.0 * PI * freq * coord(*c)?).cos(),
            CoeffFn::Sin { coord: c, freq, scale } => scale * (2.0 * PI * freq * coord(*c)?).sin(),
            CoeffFn::Monomial { coord: c, power, scale } => scale * coord(*c)?.powi(*power),
            CoeffFn::LogUniform { coord: c, lo, hi } => lo * (hi / lo).powf(coord(*c)?),
            CoeffFn::Tabulated { points, values } => {
                let pos = points.iter().position(|p| {
                    p.len() == xi.len() && p.iter().zip(xi).all(|(a, b)| (a - b).abs() <= 1e-12)
                });
                match pos {
                    Some(i) => values[i],
                    None => {
                        return Err(Error::InvalidArgument(format!(
                            "tabulated coefficient has no value at {xi:?}"
                        )))
                    }
                }
            }
        })
    }

    /// Largest parameter coordinate referenced, if any.
    fn max_coord(&self) -> Option<usize> {
        match self {
            CoeffFn::Constant { .. } => None,
            CoeffFn::Cos { coord, .. }
            | CoeffFn::Sin { coord, .. }
            | CoeffFn::Monomial { coord, .. }
            | CoeffFn::LogUniform { coord, .. } => Some(*coord),
            CoeffFn::Tabulated { points, .. } => points.first().map(|p| p.len().saturating_sub(1)),
        }
    }

    fn validate(&self, param_dim: usize) -> Result<()> {
        if let Some(c) = self.max_coord() {
            if c >= param_dim {
                return Err(Error::InvalidArgument(format!(
                    "coefficient uses coordinate {c} but the parameter has dimension {param_dim}"
                )));
            }
        }
        match self {
            CoeffFn::LogUniform { lo, hi, .. } if !(*lo > 0.0 && *hi > 0.0) => {
                Err(Error::InvalidArgument("log-uniform bounds must be positive".into()))
            }
            CoeffFn::Tabulated { points, values } if points.len() != values.len() => {
                Err(Error::Dimension { expected: points.len(), got: values.len() })
            }
            _ => Ok(()),
        }
    }
}

/// A(ξ) = Σ_k Φ_k(ξ) A_k.
#[derive(Debug, Clone)]
pub struct AffineOperator {
    terms: Vec<CsrMatrix>,
    coeffs: Vec<CoeffFn>,
    param_dim: usize,
    pattern: CsrMatrix,
    // position in `pattern.data` of each stored entry of each term
    scatter: Vec<Vec<usize>>,
}

impl AffineOperator {
    pub fn new(terms: Vec<CsrMatrix>, coeffs: Vec<CoeffFn>, param_dim: usize) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidArgument("an affine operator needs at least one term".into()));
        }
        check_len(terms.len(), coeffs.len())?;
        if param_dim == 0 {
            return Err(Error::InvalidArgument("parameter dimension must be positive".into()));
        }
        let n = terms[0].nrows();
        for t in &terms {
            if t.nrows() != n || t.ncols() != n {
                return Err(Error::Dimension { expected: n, got: t.nrows().max(t.ncols()) });
            }
        }
        for c in &coeffs {
            c.validate(param_dim)?;
        }
        let mut triplets = Vec::new();
        for t in &terms {
            for i in 0..n {
                let (cols, _) = t.row(i);
                triplets.extend(cols.iter().map(|&j| (i, j, 0.0)));
            }
        }
        let pattern = CsrMatrix::from_triplets(n, n, &triplets)?;
        let scatter = terms
            .iter()
            .map(|t| {
                let mut pos = Vec::with_capacity(t.nnz());
                for i in 0..n {
                    let (cols, _) = t.row(i);
                    let (pcols, _) = pattern.row(i);
                    let base = pattern.indptr()[i];
                    for &j in cols {
                        pos.push(base + pcols.binary_search(&j).expect("pattern covers term"));
                    }
                }
                pos
            })
            .collect();
        Ok(Self { terms, coeffs, param_dim, pattern, scatter })
    }

    /// Parameter-independent operator.
    pub fn constant(a: CsrMatrix) -> Result<Self> {
        Self::new(vec![a], vec![CoeffFn::constant(1.0)], 1)
    }

    pub fn dim(&self) -> usize {
        self.pattern.nrows()
    }
    pub fn param_dim(&self) -> usize {
        self.param_dim
    }
    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }
    pub fn terms(&self) -> &[CsrMatrix] {
        &self.terms
    }
    pub fn coeffs(&self) -> &[CoeffFn] {
        &self.coeffs
    }

    pub fn coefficients(&self, xi: &[f64]) -> Result<Vec<f64>> {
        check_len(self.param_dim, xi.len())?;
        self.coeffs.iter().map(|c| c.eval(xi)).collect()
    }

    /// Σ_k c_k A_k on the union pattern.
    pub fn combine(&self, c: &[f64]) -> Result<CsrMatrix> {
        check_len(self.terms.len(), c.len())?;
        let mut m = self.pattern.clone();
        let data = m.data_mut();
        for (k, t) in self.terms.iter().enumerate() {
            for (e, &p) in self.scatter[k].iter().enumerate() {
                data[p] += c[k] * t.data()[e];
            }
        }
        Ok(m)
    }

    pub fn eval(&self, xi: &[f64]) -> Result<CsrMatrix> {
        self.combine(&self.coefficients(xi)?)
    }

    pub fn factorize_at(&self, xi: &[f64]) -> Result<FactorizedInverse> {
        let mut f = FactorizedInverse::new(&self.eval(xi)?)?;
        f.point = xi.to_vec();
        Ok(f)
    }
}

/// b(ξ) = Σ_k θ_k(ξ) b_k.
#[derive(Debug, Clone)]
pub struct AffineVector {
    terms: Vec<Vec<f64>>,
    coeffs: Vec<CoeffFn>,
}

impl AffineVector {
    pub fn new(terms: Vec<Vec<f64>>, coeffs: Vec<CoeffFn>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidArgument("an affine vector needs at least one term".into()));
        }
        check_len(terms.len(), coeffs.len())?;
        let n = terms[0].len();
        for t in &terms {
            check_len(n, t.len())?;
        }
        Ok(Self { terms, coeffs })
    }

    pub fn constant(b: Vec<f64>) -> Self {
        Self { terms: vec![b], coeffs: vec![CoeffFn::constant(1.0)] }
    }

    pub fn dim(&self) -> usize {
        self.terms[0].len()
    }
    pub fn terms(&self) -> &[Vec<f64>] {
        &self.terms
    }
    pub fn coeffs(&self) -> &[CoeffFn] {
        &self.coeffs
    }

    pub fn coefficients(&self, xi: &[f64]) -> Result<Vec<f64>> {
        self.coeffs.iter().map(|c| c.eval(xi)).collect()
    }

    pub fn eval(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let c = self.coefficients(xi)?;
        let mut b = vec![0.0; self.dim()];
        for (k, t) in self.terms.iter().enumerate() {
            for (bi, ti) in b.iter_mut().zip(t) {
                *bi += c[k] * ti;
            }
        }
        Ok(b)
    }
}

/// Linear map x ↦ M x with a transpose action. `work` has length `dim()`.
pub trait LinearMap: Send + Sync {
    fn dim(&self) -> usize;
    fn apply_into(&self, x: &[f64], out: &mut [f64], transpose: bool, work: &mut [f64]);

    fn apply(&self, x: &[f64], transpose: bool) -> Result<Vec<f64>> {
        check_len(self.dim(), x.len())?;
        let mut out = vec![0.0; x.len()];
        let mut work = vec![0.0; x.len()];
        self.apply_into(x, &mut out, transpose, &mut work);
        Ok(out)
    }
}

/// Implicit inverse of a sampled operator, usable only through solves.
#[derive(Debug, Clone)]
pub struct FactorizedInverse {
    lu: SparseLu,
    point: Vec<f64>,
}

impl FactorizedInverse {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        Ok(Self { lu: SparseLu::factorize(a, Pivoting::Threshold(0.1))?, point: Vec::new() })
    }

    /// The parameter at which the operator was sampled (empty if unknown).
    pub fn point(&self) -> &[f64] {
        &self.point
    }

    pub fn dim(&self) -> usize {
        self.lu.dim()
    }

    /// A⁻¹x, or A⁻ᵀx when `transpose` is set.
    pub fn apply_inverse(&self, x: &[f64], transpose: bool) -> Result<Vec<f64>> {
        if transpose {
            self.lu.solve_transpose(x)
        } else {
            self.lu.solve(x)
        }
    }

    pub fn lu(&self) -> &SparseLu {
        &self.lu
    }
}

impl LinearMap for FactorizedInverse {
    fn dim(&self) -> usize {
        self.lu.dim()
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64], transpose: bool, work: &mut [f64]) {
        out.copy_from_slice(x);
        if transpose {
            self.lu.solve_transpose_in_place(out, work);
        } else {
            self.lu.solve_in_place(out, work);
        }
    }
}

/// Identity map of a given size.
#[derive(Debug, Clone, Copy)]
pub struct IdentityMap(pub usize);

impl LinearMap for IdentityMap {
    fn dim(&self) -> usize {
        self.0
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64], _transpose: bool, _work: &mut [f64]) {
        out.copy_from_slice(x);
    }
}

/// Explicit dense matrix used as a map.
#[derive(Debug, Clone)]
pub struct DenseMap(pub DMatrix<f64>);

impl LinearMap for DenseMap {
    fn dim(&self) -> usize {
        self.0.nrows()
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64], transpose: bool, _work: &mut [f64]) {
        let m = &self.0;
        let n = m.nrows();
        for (i, o) in out.iter_mut().enumerate() {
            *o = if transpose {
                (0..n).map(|k| m[(k, i)] * x[k]).sum()
            } else {
                (0..n).map(|k| m[(i, k)] * x[k]).sum()
            };
        }
    }
}

/// Symmetric positive-definite matrix R_X defining ‖v‖_X² = vᵀR_X v.
#[derive(Debug, Clone)]
pub struct NormMatrix {
    r: CsrMatrix,
    lu: SparseLu,
}

impl NormMatrix {
    pub fn new(r: CsrMatrix) -> Result<Self> {
        if r.nrows() != r.ncols() {
            return Err(Error::Dimension { expected: r.nrows(), got: r.ncols() });
        }
        if !r.is_symmetric(1e-12) {
            return Err(Error::InvalidArgument("norm matrix is not symmetric".into()));
        }
        let lu = SparseLu::factorize(&r, Pivoting::Diagonal)?;
        Ok(Self { r, lu })
    }

    pub fn identity(n: usize) -> Self {
        Self::new(CsrMatrix::identity(n)).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.r.nrows()
    }
    pub fn matrix(&self) -> &CsrMatrix {
        &self.r
    }

    /// R_X v
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.r.mul_vec(v)
    }

    /// R_X⁻¹ v
    pub fn solve(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.lu.solve(v)
    }

    /// uᵀ R_X v
    pub fn inner(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        check_len(self.dim(), u.len())?;
        let rv = self.apply(v)?;
        Ok(u.iter().zip(&rv).map(|(a, b)| a * b).sum())
    }

    pub fn xnorm(&self, v: &[f64]) -> Result<f64> {
        Ok(self.inner(v, v)?.max(0.0).sqrt())
    }

    /// ‖v‖_{X'} = √(vᵀR_X⁻¹v)
    pub fn xdualnorm(&self, v: &[f64]) -> Result<f64> {
        let w = self.solve(v)?;
        Ok(v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt())
    }

    /// The map v ↦ R_X⁻¹ v.
    pub fn inverse_map(&self) -> NormInverse<'_> {
        NormInverse(self)
    }
}

/// R_X⁻¹ as a linear map (symmetric, so the transpose flag is ignored).
#[derive(Debug, Clone, Copy)]
pub struct NormInverse<'a>(pub &'a NormMatrix);

impl LinearMap for NormInverse<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64], _transpose: bool, work: &mut [f64]) {
        out.copy_from_slice(x);
        self.0.lu.solve_in_place(out, work);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(rows: usize, v: &[f64]) -> CsrMatrix {
        CsrMatrix::from_dense(&DMatrix::from_row_slice(rows, v.len() / rows, v))
    }

    #[test]
    fn eval_examples() {
        let op = AffineOperator::constant(CsrMatrix::identity(3)).unwrap();
        assert_eq!(op.eval(&[0.3]).unwrap().to_dense(), DMatrix::identity(3, 3));
        let op = AffineOperator::new(
            vec![dense(2, &[1.0, 0.0, 0.0, 1.0]), dense(2, &[1.0, 0.0, 0.0, 0.0])],
            vec![CoeffFn::constant(1.0), CoeffFn::Monomial { coord: 0, power: 1, scale: 1.0 }],
            1,
        )
        .unwrap();
        assert_eq!(op.eval(&[2.0]).unwrap().to_dense(), DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]));
    }

    #[test]
    fn mismatched_terms_rejected() {
        let r = AffineOperator::new(
            vec![CsrMatrix::identity(2), CsrMatrix::identity(3)],
            vec![CoeffFn::constant(1.0), CoeffFn::constant(1.0)],
            1,
        );
        assert!(r.is_err());
        assert!(AffineOperator::new(vec![CsrMatrix::identity(2)], vec![], 1).is_err());
    }

    #[test]
    fn factorize_examples() {
        let f = FactorizedInverse::new(&dense(2, &[2.0, 0.0, 0.0, 4.0])).unwrap();
        assert_eq!(f.apply_inverse(&[2.0, 4.0], false).unwrap(), vec![1.0, 1.0]);
        assert_eq!(f.apply_inverse(&[1.0, 1.0], false).unwrap(), vec![0.5, 0.25]);
        let f = FactorizedInverse::new(&dense(2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        assert_eq!(f.apply_inverse(&[1.0, 2.0], false).unwrap(), vec![2.0, 1.0]);
        let f = FactorizedInverse::new(&dense(2, &[1.0, 1.0, 0.0, 1.0])).unwrap();
        assert_eq!(f.apply_inverse(&[0.0, 1.0], true).unwrap(), vec![0.0, 1.0]);
        assert_eq!(f.apply_inverse(&[0.0, 1.0], false).unwrap(), vec![-1.0, 1.0]);
        assert!(matches!(f.apply_inverse(&[1.0], false), Err(Error::Dimension { .. })));
    }

    #[test]
    fn norm_examples() {
        let n = NormMatrix::new(dense(2, &[4.0, 0.0, 0.0, 1.0])).unwrap();
        assert_eq!(n.xnorm(&[1.0, 0.0]).unwrap(), 2.0);
        assert_eq!(n.xdualnorm(&[1.0, 0.0]).unwrap(), 0.5);
        let id = NormMatrix::identity(2);
        assert!((id.xnorm(&[3.0, 4.0]).unwrap() - 5.0).abs() < 1e-15);
        assert!(matches!(
            NormMatrix::new(dense(2, &[1.0, 2.0, 2.0, 1.0])),
            Err(Error::NotSpd { .. })
        ));
    }
}
