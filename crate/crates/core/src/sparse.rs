//! Compressed sparse row matrices.

use crate::error::{check_len, Error, Result};
use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from (row, col, value) triplets. Duplicates are summed,
    /// column indices are sorted within each row.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut counts = vec![0usize; nrows + 1];
        for &(i, j, _) in triplets {
            if i >= nrows || j >= ncols {
                return Err(Error::InvalidArgument(format!(
                    "entry ({i}, {j}) outside a {nrows}x{ncols} matrix"
                )));
            }
            counts[i + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(i, j, v) in triplets {
            cols[next[i]] = j;
            vals[next[i]] = v;
            next[i] += 1;
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut data = Vec::with_capacity(triplets.len());
        indptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for i in 0..nrows {
            row.clear();
            row.extend((counts[i]..counts[i + 1]).map(|p| (cols[p], vals[p])));
            row.sort_by_key(|e| e.0);
            for &(j, v) in &row {
                if indices.len() > indptr[i] && *indices.last().unwrap() == j {
                    *data.last_mut().unwrap() += v;
                } else {
                    indices.push(j);
                    data.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Ok(Self { nrows, ncols, indptr, indices, data })
    }

    /// Builds a matrix from raw CSR arrays, validating the structure.
    pub fn from_raw(
        nrows: usize,
        ncols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        data: Vec<f64>,
    ) -> Result<Self> {
        check_len(nrows + 1, indptr.len())?;
        check_len(indices.len(), data.len())?;
        if indptr[0] != 0 || indptr[nrows] != indices.len() {
            return Err(Error::InvalidArgument("malformed CSR row pointer".into()));
        }
        for i in 0..nrows {
            if indptr[i] > indptr[i + 1] {
                return Err(Error::InvalidArgument("row pointer not monotone".into()));
            }
            let row = &indices[indptr[i]..indptr[i + 1]];
            if row.windows(2).any(|w| w[0] >= w[1]) || row.iter().any(|&j| j >= ncols) {
                return Err(Error::InvalidArgument(format!("bad column indices in row {i}")));
            }
        }
        Ok(Self { nrows, ncols, indptr, indices, data })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: vec![1.0; n],
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut t = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    t.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &t).expect("in-range triplets")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }
    pub fn ncols(&self) -> usize {
        self.ncols
    }
    pub fn nnz(&self) -> usize {
        self.data.len()
    }
    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[r.clone()], &self.data[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        match c.binary_search(&j) {
            Ok(p) => v[p],
            Err(_) => 0.0,
        }
    }

    /// y = A x
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        for i in 0..self.nrows {
            let mut s = 0.0;
            for p in self.indptr[i]..self.indptr[i + 1] {
                s += self.data[p] * x[self.indices[p]];
            }
            y[i] = s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.ncols, x.len())?;
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        Ok(y)
    }

    /// y = Aᵀ x
    pub fn mul_vec_transpose_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.nrows {
            let xi = x[i];
            for p in self.indptr[i]..self.indptr[i + 1] {
                y[self.indices[p]] += self.data[p] * xi;
            }
        }
    }

    pub fn mul_vec_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.nrows, x.len())?;
        let mut y = vec![0.0; self.ncols];
        self.mul_vec_transpose_into(x, &mut y);
        Ok(y)
    }

    /// A times a dense matrix.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows, x.ncols());
        for c in 0..x.ncols() {
            let col = x.column(c);
            let mut oc = out.column_mut(c);
            for i in 0..self.nrows {
                let mut s = 0.0;
                for p in self.indptr[i]..self.indptr[i + 1] {
                    s += self.data[p] * col[self.indices[p]];
                }
                oc[i] = s;
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &j in &self.indices {
            counts[j + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut indices = vec![0; self.nnz()];
        let mut data = vec![0.0; self.nnz()];
        for i in 0..self.nrows {
            for p in self.indptr[i]..self.indptr[i + 1] {
                let j = self.indices[p];
                indices[next[j]] = i;
                data[next[j]] = self.data[p];
                next[j] += 1;
            }
        }
        Self { nrows: self.ncols, ncols: self.nrows, indptr: counts, indices, data }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for p in self.indptr[i]..self.indptr[i + 1] {
                m[(i, self.indices[p])] += self.data[p];
            }
        }
        m
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut m = self.clone();
        m.data.iter_mut().for_each(|v| *v *= s);
        m
    }

    /// Σ c_k M_k over matrices of equal shape.
    pub fn linear_combination(terms: &[(f64, &CsrMatrix)]) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty linear combination".into()))?
            .1;
        let mut t = Vec::new();
        for (c, m) in terms {
            if m.nrows != first.nrows || m.ncols != first.ncols {
                return Err(Error::Dimension { expected: first.nrows, got: m.nrows });
            }
            for i in 0..m.nrows {
                for p in m.indptr[i]..m.indptr[i + 1] {
                    t.push((i, m.indices[p], c * m.data[p]));
                }
            }
        }
        Self::from_triplets(first.nrows, first.ncols, &t)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// Frobenius norm.
    pub fn norm_fro(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// True when |A - Aᵀ| ≤ tol·max|A| entrywise.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        let t = self.transpose();
        let d = CsrMatrix::linear_combination(&[(1.0, self), (-1.0, &t)]).expect("same shape");
        d.max_abs() <= tol * scale
    }

    /// Pattern of A + Aᵀ without the diagonal, as adjacency lists.
    pub(crate) fn symmetric_adjacency(&self) -> Vec<Vec<usize>> {
        let n = self.nrows;
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..n {
            for p in self.indptr[i]..self.indptr[i + 1] {
                let j = self.indices[p];
                if i != j {
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
        }
        for a in adj.iter_mut() {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, 3, &[(0, 2, 1.0), (0, 0, 2.0), (0, 2, 3.0), (1, 1, -1.0)])
            .unwrap();
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(0, 2), 4.0);
        assert_eq!(m.mul_vec(&[1.0, 2.0, 3.0]).unwrap(), vec![14.0, -2.0]);
        assert_eq!(m.mul_vec_transpose(&[1.0, 1.0]).unwrap(), vec![2.0, -1.0, 4.0]);
        assert_eq!(m.transpose().to_dense(), m.to_dense().transpose());
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(CsrMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
    }
}
