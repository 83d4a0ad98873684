//! Sparse matrices and the linear solvers used by the assembly and solve
//! paths: CSR storage with exact triplet assembly, reverse Cuthill–McKee
//! ordering, a simplicial LDLᵀ factorization for symmetric positive
//! definite systems (with iterative refinement in the wrapper), and MINRES
//! for symmetric indefinite systems.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SparseError {
    #[error("matrix is not square ({0} x {1})")]
    NotSquare(usize, usize),
    #[error("zero or near-zero pivot at column {0} (value {1:e})")]
    DegeneratePivot(usize, f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Triplet (COO) accumulator for assembling sparse matrices.
#[derive(Debug, Clone)]
pub struct Triplets {
    pub nrows: usize,
    pub ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Triplets {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.nrows && c < self.ncols);
        if v != 0.0 {
            self.entries.push((r, c, v));
        }
    }

    /// Sort by (row, col) and sum duplicates into a CSR matrix.
    pub fn to_csr(mut self) -> Csr {
        self.entries
            .sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::with_capacity(self.entries.len());
        let mut data: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &self.entries {
            if last == Some((r, c)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                data.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..self.nrows {
            indptr[r + 1] += indptr[r];
        }
        Csr {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr,
            indices,
            data,
        }
    }
}

/// Compressed sparse row matrix with sorted column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl Csr {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Csr {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            data: Vec::new(),
        }
    }

    /// Diagonal matrix from the given entries.
    pub fn diag(d: &[f64]) -> Self {
        let n = d.len();
        Csr {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: d.to_vec(),
        }
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[s..e], &self.data[s..e])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c];
            }
            y[r] = acc;
        }
        y
    }

    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                y[*c] += v * x[r];
            }
        }
        y
    }

    pub fn transpose(&self) -> Csr {
        let mut t = Triplets::new(self.ncols, self.nrows);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                t.push(*c, r, *v);
            }
        }
        t.to_csr()
    }

    /// Sparse matrix product `self * rhs` (Gustavson's algorithm).
    pub fn mul(&self, rhs: &Csr) -> Csr {
        assert_eq!(self.ncols, rhs.nrows, "product dimension mismatch");
        let n = rhs.ncols;
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::new();
        let mut data = Vec::new();
        let mut acc = vec![0.0f64; n];
        let mut mark = vec![usize::MAX; n];
        let mut row_cols: Vec<usize> = Vec::new();
        for r in 0..self.nrows {
            row_cols.clear();
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                let (rcols, rvals) = rhs.row(*c);
                for (cc, vv) in rcols.iter().zip(rvals) {
                    if mark[*cc] != r {
                        mark[*cc] = r;
                        acc[*cc] = 0.0;
                        row_cols.push(*cc);
                    }
                    acc[*cc] += v * vv;
                }
            }
            row_cols.sort_unstable();
            for &c in &row_cols {
                indices.push(c);
                data.push(acc[c]);
            }
            indptr[r + 1] = indices.len();
        }
        Csr {
            nrows: self.nrows,
            ncols: n,
            indptr,
            indices,
            data,
        }
    }

    /// Maximum absolute deviation from symmetry.
    pub fn symmetry_error(&self) -> f64 {
        let t = self.transpose();
        let mut err: f64 = 0.0;
        for r in 0..self.nrows {
            let (c1, v1) = self.row(r);
            let (c2, v2) = t.row(r);
            let mut i = 0;
            let mut j = 0;
            while i < c1.len() || j < c2.len() {
                let ci = c1.get(i).copied().unwrap_or(usize::MAX);
                let cj = c2.get(j).copied().unwrap_or(usize::MAX);
                if ci == cj {
                    err = err.max((v1[i] - v2[j]).abs());
                    i += 1;
                    j += 1;
                } else if ci < cj {
                    err = err.max(v1[i].abs());
                    i += 1;
                } else {
                    err = err.max(v2[j].abs());
                    j += 1;
                }
            }
        }
        err
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                m[(r, *c)] = *v;
            }
        }
        m
    }

    /// Rows and columns restricted to `keep` (a sorted index set).
    pub fn principal_submatrix(&self, keep: &[usize]) -> Csr {
        let mut map = vec![usize::MAX; self.ncols.max(self.nrows)];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut t = Triplets::new(keep.len(), keep.len());
        for (new_r, &old_r) in keep.iter().enumerate() {
            let (cols, vals) = self.row(old_r);
            for (c, v) in cols.iter().zip(vals) {
                if map[*c] != usize::MAX {
                    t.push(new_r, map[*c], *v);
                }
            }
        }
        t.to_csr()
    }
}

/// Reverse Cuthill–McKee ordering of a symmetric sparsity pattern.
/// Returns `perm` with `perm[new] = old`.
pub fn rcm_ordering(a: &Csr) -> Vec<usize> {
    let n = a.nrows;
    let degree = |v: usize| a.indptr[v + 1] - a.indptr[v];
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut component = Vec::new();
    while order.len() < n {
        // lowest-degree unvisited vertex as BFS seed
        let mut seed = usize::MAX;
        for v in 0..n {
            if !visited[v] && (seed == usize::MAX || degree(v) < degree(seed)) {
                seed = v;
            }
        }
        // pseudo-peripheral refinement: run BFS twice
        for _ in 0..2 {
            let mut frontier = vec![seed];
            let mut seen = vec![false; n];
            seen[seed] = true;
            let mut last = seed;
            while !frontier.is_empty() {
                let mut next = Vec::new();
                for &v in &frontier {
                    let (cols, _) = a.row(v);
                    for &w in cols {
                        if !seen[w] && !visited[w] {
                            seen[w] = true;
                            next.push(w);
                        }
                    }
                }
                if let Some(&v) = next.iter().min_by_key(|&&v| degree(v)) {
                    last = v;
                }
                frontier = next;
            }
            seed = last;
        }
        // BFS from the refined seed, neighbors by increasing degree
        component.clear();
        component.push(seed);
        visited[seed] = true;
        let mut head = 0;
        while head < component.len() {
            let v = component[head];
            head += 1;
            let (cols, _) = a.row(v);
            let mut nbrs: Vec<usize> = cols.iter().copied().filter(|&w| !visited[w]).collect();
            nbrs.sort_unstable_by_key(|&w| (degree(w), w));
            for w in nbrs {
                if !visited[w] {
                    visited[w] = true;
                    component.push(w);
                }
            }
        }
        order.extend(component.iter().rev());
    }
    order
}

/// Simplicial LDLᵀ factorization of a symmetric matrix with the given
/// fill-reducing permutation (up-looking, elimination-tree based).
#[derive(Debug, Clone)]
pub struct LdlFactor {
    n: usize,
    perm: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
}

pub fn ldl_factor(a: &Csr, perm: Option<Vec<usize>>) -> Result<LdlFactor, SparseError> {
    if a.nrows != a.ncols {
        return Err(SparseError::NotSquare(a.nrows, a.ncols));
    }
    let n = a.nrows;
    let perm = perm.unwrap_or_else(|| (0..n).collect());
    let mut iperm = vec![0usize; n];
    for (new, &old) in perm.iter().enumerate() {
        iperm[old] = new;
    }
    // Permuted upper triangle in column-major (CSC) form: for column k,
    // rows i <= k. Built from the CSR of A using symmetry.
    let mut col_entries: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for old_r in 0..n {
        let (cols, vals) = a.row(old_r);
        let i = iperm[old_r];
        for (c, v) in cols.iter().zip(vals) {
            let j = iperm[*c];
            if i <= j {
                col_entries[j].push((i, *v));
            }
        }
    }
    for col in col_entries.iter_mut() {
        col.sort_unstable_by_key(|e| e.0);
    }

    // Symbolic pass: elimination tree and column counts.
    let mut parent = vec![usize::MAX; n];
    let mut flag = vec![usize::MAX; n];
    let mut lnz = vec![0usize; n];
    for k in 0..n {
        flag[k] = k;
        for &(i, _) in &col_entries[k] {
            let mut i = i;
            while i < k && flag[i] != k {
                if parent[i] == usize::MAX {
                    parent[i] = k;
                }
                lnz[i] += 1;
                flag[i] = k;
                i = parent[i];
            }
        }
    }
    let mut lp = vec![0usize; n + 1];
    for k in 0..n {
        lp[k + 1] = lp[k] + lnz[k];
    }
    let nnz = lp[n];
    let mut li = vec![0usize; nnz];
    let mut lx = vec![0.0f64; nnz];
    let mut d = vec![0.0f64; n];
    let mut y = vec![0.0f64; n];
    let mut pattern = vec![0usize; n];
    let mut lnz_used = vec![0usize; n];
    let scale: f64 = col_entries
        .iter()
        .flat_map(|c| c.iter().map(|e| e.1.abs()))
        .fold(0.0, f64::max)
        .max(1e-300);

    // Numeric pass (row k of L via sparse triangular solve).
    for k in 0..n {
        let mut top = n;
        flag[k] = k;
        for &(i, v) in &col_entries[k] {
            if i > k {
                continue;
            }
            y[i] += v;
            let mut len = 0;
            let mut i2 = i;
            while flag[i2] != k {
                pattern[len] = i2;
                len += 1;
                flag[i2] = k;
                i2 = parent[i2];
            }
            // push path onto the stack in reverse (topological) order
            while len > 0 {
                len -= 1;
                top -= 1;
                pattern[top] = pattern[len];
            }
        }
        d[k] = y[k];
        y[k] = 0.0;
        for t in top..n {
            let i = pattern[t];
            let yi = y[i];
            y[i] = 0.0;
            let (s, e) = (lp[i], lp[i] + lnz_used[i]);
            for p in s..e {
                y[li[p]] -= lx[p] * yi;
            }
            let lki = yi / d[i];
            d[k] -= lki * yi;
            li[lp[i] + lnz_used[i]] = k;
            lx[lp[i] + lnz_used[i]] = lki;
            lnz_used[i] += 1;
        }
        if d[k].abs() <= 1e-300 * scale {
            return Err(SparseError::DegeneratePivot(k, d[k]));
        }
    }
    Ok(LdlFactor {
        n,
        perm,
        lp,
        li,
        lx,
        d,
    })
}

impl LdlFactor {
    /// Solve `A x = b` using the stored factorization.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut x = vec![0.0; n];
        for k in 0..n {
            x[k] = b[self.perm[k]];
        }
        // L is stored by columns: forward solve
        for k in 0..n {
            let xk = x[k];
            for p in self.lp[k]..self.lp[k + 1] {
                x[self.li[p]] -= self.lx[p] * xk;
            }
        }
        for k in 0..n {
            x[k] /= self.d[k];
        }
        // Lᵀ solve (backward)
        for k in (0..n).rev() {
            let mut acc = x[k];
            for p in self.lp[k]..self.lp[k + 1] {
                acc -= self.lx[p] * x[self.li[p]];
            }
            x[k] = acc;
        }
        let mut out = vec![0.0; n];
        for k in 0..n {
            out[self.perm[k]] = x[k];
        }
        out
    }

    /// Smallest pivot magnitude (diagnostic for rank checks).
    pub fn min_pivot(&self) -> f64 {
        self.d.iter().fold(f64::INFINITY, |m, &v| m.min(v.abs()))
    }

    /// Smallest signed pivot (negative for indefinite matrices).
    pub fn min_signed_pivot(&self) -> f64 {
        self.d.iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }
}

/// Symmetric positive definite solver: RCM-ordered LDLᵀ with iterative
/// refinement against the original matrix.
#[derive(Debug, Clone)]
pub struct SpdSolver {
    pub a: Csr,
    factor: LdlFactor,
}

impl SpdSolver {
    pub fn new(a: Csr) -> Result<Self, SparseError> {
        let perm = rcm_ordering(&a);
        let factor = ldl_factor(&a, Some(perm))?;
        if factor.min_signed_pivot() <= 0.0 {
            return Err(SparseError::DegeneratePivot(0, factor.min_signed_pivot()));
        }
        Ok(SpdSolver { a, factor })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = self.factor.solve(b);
        let norm_b = norm(b).max(1e-300);
        for _ in 0..3 {
            let mut r = self.a.matvec(&x);
            for i in 0..r.len() {
                r[i] = b[i] - r[i];
            }
            if norm(&r) <= 1e-15 * norm_b {
                break;
            }
            let dx = self.factor.solve(&r);
            for i in 0..x.len() {
                x[i] += dx[i];
            }
        }
        x
    }

    pub fn min_pivot(&self) -> f64 {
        self.factor.min_pivot()
    }

    pub fn n(&self) -> usize {
        self.a.nrows
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// MINRES for symmetric (possibly indefinite) systems given an operator.
/// Returns `(x, relative_residual, iterations)`.
pub fn minres(
    n: usize,
    apply: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, f64, usize) {
    let mut x = vec![0.0; n];
    let norm_b = norm(b);
    if norm_b == 0.0 {
        return (x, 0.0, 0);
    }
    let mut v_prev = vec![0.0; n];
    let mut v = b.to_vec();
    for e in v.iter_mut() {
        *e /= norm_b;
    }
    // beta tracks the subdiagonal of the Lanczos tridiagonal matrix; the
    // normalizer of b itself is not part of it.
    let mut beta = 0.0;
    let (mut c_prev, mut s_prev) = (1.0f64, 0.0f64);
    let (mut c, mut s) = (1.0f64, 0.0f64);
    let mut w_prev = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut eta = norm_b;
    let mut relres = 1.0;
    for it in 1..=max_iter {
        // Lanczos step
        let mut av = apply(&v);
        let alpha = dot(&v, &av);
        for i in 0..n {
            av[i] -= alpha * v[i] + beta * v_prev[i];
        }
        let beta_next = norm(&av);
        // two previous Givens rotations
        let delta = c * alpha - c_prev * s * beta;
        let rho2 = s * alpha + c_prev * c * beta;
        let rho3 = s_prev * beta;
        // new rotation
        let rho1 = (delta * delta + beta_next * beta_next).sqrt();
        let (c_new, s_new) = if rho1 == 0.0 {
            (1.0, 0.0)
        } else {
            (delta / rho1, beta_next / rho1)
        };
        let mut w_new = v.clone();
        for i in 0..n {
            w_new[i] = (v[i] - rho2 * w[i] - rho3 * w_prev[i]) / rho1.max(1e-300);
        }
        for i in 0..n {
            x[i] += c_new * eta * w_new[i];
        }
        relres = (s_new * eta).abs() / norm_b;
        eta = -s_new * eta;
        if relres <= tol {
            return (x, relres, it);
        }
        if beta_next == 0.0 {
            break;
        }
        for i in 0..n {
            av[i] /= beta_next;
        }
        v_prev = std::mem::replace(&mut v, av);
        beta = beta_next;
        c_prev = c;
        s_prev = s;
        c = c_new;
        s = s_new;
        w_prev = std::mem::replace(&mut w, w_new);
    }
    (x, relres, max_iter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> Csr {
        // banded SPD: diagonal dominance
        let mut t = Triplets::new(n, n);
        let mut offdiag = vec![0.0f64; n];
        let mut entries = Vec::new();
        for i in 0..n {
            for j in (i + 1)..(i + 4).min(n) {
                if rng.random::<f64>() < 0.7 {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    entries.push((i, j, v));
                    offdiag[i] += v.abs();
                    offdiag[j] += v.abs();
                }
            }
        }
        for &(i, j, v) in &entries {
            t.push(i, j, v);
            t.push(j, i, v);
        }
        for i in 0..n {
            t.push(i, i, offdiag[i] + 1.0 + rng.random::<f64>());
        }
        t.to_csr()
    }

    #[test]
    fn triplets_sum_duplicates_and_sort() {
        let mut t = Triplets::new(3, 3);
        t.push(1, 2, 1.0);
        t.push(0, 0, 2.0);
        t.push(1, 2, 0.5);
        t.push(1, 0, -1.0);
        let m = t.to_csr();
        assert_eq!(m.get(1, 2), 1.5);
        assert_eq!(m.get(0, 0), 2.0);
        assert_eq!(m.get(1, 0), -1.0);
        assert_eq!(m.get(2, 2), 0.0);
        assert_eq!(m.nnz(), 3);
    }

    #[test]
    fn matvec_and_transpose_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_spd(25, &mut rng);
        let dense = a.to_dense();
        let x: Vec<f64> = (0..25).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = a.matvec(&x);
        let xd = nalgebra::DVector::from_column_slice(&x);
        let yd = &dense * &xd;
        for i in 0..25 {
            assert!((y[i] - yd[i]).abs() < 1e-12);
        }
        let yt = a.matvec_transpose(&x);
        let ytd = dense.transpose() * &xd;
        for i in 0..25 {
            assert!((yt[i] - ytd[i]).abs() < 1e-12);
        }
        assert!(a.symmetry_error() < 1e-15);
    }

    #[test]
    fn sparse_product_matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut t1 = Triplets::new(8, 12);
        let mut t2 = Triplets::new(12, 5);
        for _ in 0..30 {
            t1.push(
                rng.random_range(0..8),
                rng.random_range(0..12),
                rng.random_range(-2.0..2.0),
            );
            t2.push(
                rng.random_range(0..12),
                rng.random_range(0..5),
                rng.random_range(-2.0..2.0),
            );
        }
        let (a, b) = (t1.to_csr(), t2.to_csr());
        let c = a.mul(&b);
        let cd = a.to_dense() * b.to_dense();
        for i in 0..8 {
            for j in 0..5 {
                assert!((c.get(i, j) - cd[(i, j)]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn ldl_solves_match_dense_cholesky() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1usize, 2, 5, 20, 80] {
            let a = random_spd(n, &mut rng);
            let solver = SpdSolver::new(a.clone()).expect("SPD factorization");
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = solver.solve(&b);
            let dense = a.to_dense();
            let xd = dense
                .cholesky()
                .expect("dense cholesky")
                .solve(&nalgebra::DVector::from_column_slice(&b));
            for i in 0..n {
                assert!(
                    (x[i] - xd[i]).abs() < 1e-10 * (1.0 + xd[i].abs()),
                    "n={n} i={i}"
                );
            }
        }
    }

    #[test]
    fn rcm_is_a_permutation_and_reduces_bandwidth() {
        // path graph with scrambled labels
        let n = 50;
        let mut label: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            label.swap(i, j);
        }
        let mut t = Triplets::new(n, n);
        for i in 0..n {
            t.push(label[i], label[i], 2.0);
            if i + 1 < n {
                t.push(label[i], label[i + 1], -1.0);
                t.push(label[i + 1], label[i], -1.0);
            }
        }
        let a = t.to_csr();
        let perm = rcm_ordering(&a);
        let mut seen = vec![false; n];
        for &p in &perm {
            assert!(!seen[p], "duplicate in permutation");
            seen[p] = true;
        }
        let mut iperm = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        let mut bw = 0usize;
        for r in 0..n {
            let (cols, _) = a.row(r);
            for &c in cols {
                bw = bw.max(iperm[r].abs_diff(iperm[c]));
            }
        }
        assert!(bw <= 2, "rcm bandwidth on a path should be tiny, got {bw}");
    }

    #[test]
    fn degenerate_pivot_is_reported() {
        let mut t = Triplets::new(2, 2);
        t.push(0, 0, 1.0);
        t.push(0, 1, 1.0);
        t.push(1, 0, 1.0);
        t.push(1, 1, 1.0); // rank 1
        assert!(matches!(
            ldl_factor(&t.to_csr(), None),
            Err(SparseError::DegeneratePivot(..))
        ));
    }

    #[test]
    fn minres_matches_direct_solve_on_spd_and_indefinite_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = random_spd(30, &mut rng);
        let b: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (x, relres, _) = minres(30, |v| a.matvec(v), &b, 1e-12, 500);
        assert!(relres <= 1e-12);
        let xd = a
            .to_dense()
            .cholesky()
            .unwrap()
            .solve(&nalgebra::DVector::from_column_slice(&b));
        for i in 0..30 {
            assert!((x[i] - xd[i]).abs() < 1e-9);
        }

        // symmetric indefinite: saddle-point-like block matrix
        let mut t = Triplets::new(4, 4);
        for (i, j, v) in [
            (0, 0, -2.0),
            (1, 1, -1.0),
            (0, 2, 1.0),
            (2, 0, 1.0),
            (1, 3, 0.5),
            (3, 1, 0.5),
            (2, 2, 3.0),
            (3, 3, 2.0),
            (2, 3, 0.25),
            (3, 2, 0.25),
        ] {
            t.push(i, j, v);
        }
        let m = t.to_csr();
        let b = vec![1.0, -2.0, 0.5, 3.0];
        let (x, relres, _) = minres(4, |v| m.matvec(v), &b, 1e-13, 200);
        assert!(relres <= 1e-13);
        let xd = m
            .to_dense()
            .lu()
            .solve(&nalgebra::DVector::from_column_slice(&b))
            .unwrap();
        for i in 0..4 {
            assert!((x[i] - xd[i]).abs() < 1e-10);
        }
    }
}
