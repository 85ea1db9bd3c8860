//! Sparse LU factorization: minimum-degree fill-reducing ordering followed by
//! a left-looking (Gilbert-Peierls) factorization with threshold partial
//! pivoting that prefers the diagonal.

use crate::error::{check_len, Error, Result};
use crate::sparse::CsrMatrix;
use std::cmp::Reverse;
use std::collections::BinaryHeap;

/// Symmetric minimum-degree ordering on the pattern of A + Aᵀ.
/// Ties are broken by the lowest vertex index.
pub fn minimum_degree(a: &CsrMatrix) -> Vec<usize> {
    let n = a.nrows();
    let mut adj = a.symmetric_adjacency();
    let mut eliminated = vec![false; n];
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
        (0..n).map(|v| Reverse((adj[v].len(), v))).collect();
    let mut order = Vec::with_capacity(n);
    let mut mark = vec![usize::MAX; n];
    let mut merged: Vec<usize> = Vec::new();
    while let Some(Reverse((deg, v))) = heap.pop() {
        if eliminated[v] || deg != adj[v].len() {
            continue;
        }
        eliminated[v] = true;
        order.push(v);
        let nbrs = std::mem::take(&mut adj[v]);
        for &u in &nbrs {
            merged.clear();
            mark[u] = u;
            for &w in &adj[u] {
                if w != v && !eliminated[w] && mark[w] != u {
                    mark[w] = u;
                    merged.push(w);
                }
            }
            for &w in &nbrs {
                if w != u && mark[w] != u {
                    mark[w] = u;
                    merged.push(w);
                }
            }
            mark[u] = usize::MAX;
            for &w in &merged {
                mark[w] = usize::MAX;
            }
            adj[u].clear();
            adj[u].extend_from_slice(&merged);
            heap.push(Reverse((adj[u].len(), u)));
        }
    }
    order
}

/// Pivot selection rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pivoting {
    /// Partial pivoting; the diagonal entry is kept whenever its magnitude is
    /// at least `threshold` times the column maximum.
    Threshold(f64),
    /// Diagonal pivots only (symmetric positive definite input).
    Diagonal,
}

/// Column-compressed triangular factor.
#[derive(Debug, Clone)]
struct Csc {
    colptr: Vec<usize>,
    rowind: Vec<usize>,
    values: Vec<f64>,
}

/// LU factors of a square sparse matrix: A(p, q) = L U.
#[derive(Debug, Clone)]
pub struct SparseLu {
    n: usize,
    l: Csc,
    u: Csc,
    /// pinv[i] = elimination step at which original row i was pivotal.
    pinv: Vec<usize>,
    /// q[k] = original column eliminated at step k.
    q: Vec<usize>,
    min_pivot: f64,
}

impl SparseLu {
    pub fn factorize(a: &CsrMatrix, pivoting: Pivoting) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Dimension { expected: a.nrows(), got: a.ncols() });
        }
        let n = a.nrows();
        if n == 0 {
            return Err(Error::InvalidSize("empty matrix".into()));
        }
        let q = minimum_degree(a);
        // Column access: CSR of Aᵀ is CSC of A.
        let at = a.transpose();
        let (ap, ai, ax) = (at.indptr(), at.indices(), at.data());
        let scale = a.max_abs();
        let tiny = scale * 1e-14;

        let est = 4 * a.nnz() + n;
        let mut l = Csc { colptr: Vec::with_capacity(n + 1), rowind: Vec::with_capacity(est), values: Vec::with_capacity(est) };
        let mut u = Csc { colptr: Vec::with_capacity(n + 1), rowind: Vec::with_capacity(est), values: Vec::with_capacity(est) };
        const NONE: usize = usize::MAX;
        let mut pinv = vec![NONE; n];
        let mut x = vec![0.0; n];
        let mut xi = vec![0usize; n];
        let mut stack = vec![0usize; n];
        let mut pstack = vec![0usize; n];
        let mut visited = vec![NONE; n];
        let mut min_pivot = f64::INFINITY;

        for k in 0..n {
            l.colptr.push(l.rowind.len());
            u.colptr.push(u.rowind.len());
            let col = q[k];
            // Reach of column `col` in the graph of L (depth-first, topological order).
            let mut top = n;
            for p in ap[col]..ap[col + 1] {
                let start = ai[p];
                if visited[start] == k {
                    continue;
                }
                let mut head = 0usize;
                stack[0] = start;
                while let Some(&j) = stack[..=head].last() {
                    let jnew = pinv[j];
                    if visited[j] != k {
                        visited[j] = k;
                        pstack[head] = if jnew == NONE { 0 } else { l.colptr[jnew] };
                    }
                    let mut done = true;
                    if jnew != NONE {
                        let end = l.colptr[jnew + 1];
                        let mut pp = pstack[head];
                        while pp < end {
                            let i = l.rowind[pp];
                            pp += 1;
                            if visited[i] != k {
                                pstack[head] = pp;
                                head += 1;
                                stack[head] = i;
                                done = false;
                                break;
                            }
                        }
                        if done {
                            pstack[head] = end;
                        }
                    }
                    if done {
                        top -= 1;
                        xi[top] = j;
                        if head == 0 {
                            break;
                        }
                        head -= 1;
                    }
                }
            }
            // Sparse triangular solve x = L \ A(:, col).
            for &i in &xi[top..n] {
                x[i] = 0.0;
            }
            for p in ap[col]..ap[col + 1] {
                x[ai[p]] = ax[p];
            }
            for px in top..n {
                let j = xi[px];
                let jj = pinv[j];
                if jj == NONE {
                    continue;
                }
                let xj = x[j];
                // diagonal of L is 1 and stored first
                for p in l.colptr[jj] + 1..l.colptr[jj + 1] {
                    x[l.rowind[p]] -= l.values[p] * xj;
                }
            }
            // Pivot choice.
            let mut ipiv = NONE;
            let mut amax = -1.0f64;
            for &i in &xi[top..n] {
                if pinv[i] == NONE {
                    let t = x[i].abs();
                    if t > amax {
                        amax = t;
                        ipiv = i;
                    }
                } else {
                    u.rowind.push(pinv[i]);
                    u.values.push(x[i]);
                }
            }
            match pivoting {
                Pivoting::Threshold(tol) => {
                    if pinv[col] == NONE && x[col].abs() >= amax * tol && visited[col] == k {
                        ipiv = col;
                    }
                    if ipiv == NONE || amax <= tiny {
                        return Err(Error::SingularOperator { pivot: k });
                    }
                }
                Pivoting::Diagonal => {
                    let d = if visited[col] == k { x[col] } else { 0.0 };
                    if !(d > tiny) {
                        return Err(Error::NotSpd { pivot: k, value: d });
                    }
                    ipiv = col;
                }
            }
            let pivot = x[ipiv];
            min_pivot = min_pivot.min(pivot.abs());
            u.rowind.push(k);
            u.values.push(pivot);
            pinv[ipiv] = k;
            l.rowind.push(ipiv);
            l.values.push(1.0);
            for &i in &xi[top..n] {
                if pinv[i] == NONE {
                    l.rowind.push(i);
                    l.values.push(x[i] / pivot);
                }
                x[i] = 0.0;
            }
        }
        l.colptr.push(l.rowind.len());
        u.colptr.push(u.rowind.len());
        for r in l.rowind.iter_mut() {
            *r = pinv[*r];
        }
        // Move the diagonal of each U column to the end for the backward solve.
        for k in 0..n {
            let (s, e) = (u.colptr[k], u.colptr[k + 1]);
            if let Some(pos) = (s..e).find(|&p| u.rowind[p] == k) {
                u.rowind.swap(pos, e - 1);
                u.values.swap(pos, e - 1);
            }
        }
        Ok(Self { n, l, u, pinv, q, min_pivot })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored entries in L and U.
    pub fn nnz(&self) -> usize {
        self.l.values.len() + self.u.values.len()
    }

    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    /// Solves A x = b in place of `b`, using `work` as scratch.
    pub fn solve_in_place(&self, b: &mut [f64], work: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            work[self.pinv[i]] = b[i];
        }
        let l = &self.l;
        for j in 0..n {
            let xj = work[j];
            if xj != 0.0 {
                for p in l.colptr[j] + 1..l.colptr[j + 1] {
                    work[l.rowind[p]] -= l.values[p] * xj;
                }
            }
        }
        let u = &self.u;
        for j in (0..n).rev() {
            let e = u.colptr[j + 1] - 1;
            let xj = work[j] / u.values[e];
            work[j] = xj;
            if xj != 0.0 {
                for p in u.colptr[j]..e {
                    work[u.rowind[p]] -= u.values[p] * xj;
                }
            }
        }
        for k in 0..n {
            b[self.q[k]] = work[k];
        }
    }

    /// Solves Aᵀ x = b in place of `b`.
    pub fn solve_transpose_in_place(&self, b: &mut [f64], work: &mut [f64]) {
        let n = self.n;
        for k in 0..n {
            work[k] = b[self.q[k]];
        }
        let u = &self.u;
        for j in 0..n {
            let e = u.colptr[j + 1] - 1;
            let mut s = work[j];
            for p in u.colptr[j]..e {
                s -= u.values[p] * work[u.rowind[p]];
            }
            work[j] = s / u.values[e];
        }
        let l = &self.l;
        for j in (0..n).rev() {
            let mut s = work[j];
            for p in l.colptr[j] + 1..l.colptr[j + 1] {
                s -= l.values[p] * work[l.rowind[p]];
            }
            work[j] = s;
        }
        for i in 0..n {
            b[i] = work[self.pinv[i]];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n, b.len())?;
        let mut x = b.to_vec();
        let mut w = vec![0.0; self.n];
        self.solve_in_place(&mut x, &mut w);
        Ok(x)
    }

    pub fn solve_transpose(&self, b: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n, b.len())?;
        let mut x = b.to_vec();
        let mut w = vec![0.0; self.n];
        self.solve_transpose_in_place(&mut x, &mut w);
        Ok(x)
    }
}
