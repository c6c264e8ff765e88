use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DMatrixView, DMatrixViewMut, Dyn, LU};

use super::SymmetricToeplitz;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct HodlrOptions {
    /// Leaves hold at most this many rows.
    pub leaf_size: usize,
    /// Cross-approximation stops once the residual max-norm drops below
    /// `rel_tol` times the block's max-norm.
    pub rel_tol: f64,
}

impl Default for HodlrOptions {
    fn default() -> Self {
        Self {
            leaf_size: 128,
            rel_tol: 1e-8,
        }
    }
}

/// Hierarchical compression of a symmetric Toeplitz kernel `K`.
///
/// The index range is halved recursively down to a fixed depth, so all
/// leaves sit on the same level. The off-diagonal block of every internal
/// node is stored as `u·vᵀ`. Blocks of a Toeplitz matrix depend only on
/// their shape, so each distinct shape is compressed once. Per level, the
/// `u` factors (left-child rows) and `v` factors (right-child rows) of all
/// nodes are packed into one `n × r` matrix, zero-padded to the level's
/// largest rank.
#[derive(Debug)]
pub struct HodlrKernel {
    toeplitz: SymmetricToeplitz,
    /// `bounds[l]` has `2^l + 1` entries: node `k` at level `l` spans
    /// `bounds[l][k]..bounds[l][k+1]`.
    bounds: Vec<Vec<usize>>,
    bases: Vec<DMatrix<f64>>,
}

impl HodlrKernel {
    /// Compresses `toeplitz`; falls back to one dense block when some
    /// off-diagonal block is not numerically low-rank.
    pub fn new(toeplitz: SymmetricToeplitz, opts: HodlrOptions) -> Self {
        let n = toeplitz.len();
        let leaf = opts.leaf_size.max(4);
        let mut depth = 0;
        while n.div_ceil(1 << depth) > leaf {
            depth += 1;
        }
        let mut bounds = vec![vec![0, n]];
        for l in 0..depth {
            let mut next = Vec::with_capacity(2 * bounds[l].len());
            for w in bounds[l].windows(2) {
                next.push(w[0]);
                next.push(w[0] + (w[1] - w[0]) / 2);
            }
            next.push(n);
            bounds.push(next);
        }

        let mut cache: HashMap<(usize, usize), Option<(DMatrix<f64>, DMatrix<f64>)>> = HashMap::new();
        let mut bases = Vec::with_capacity(depth);
        for l in 0..depth {
            let nodes = bounds[l].len() - 1;
            let mut blocks = Vec::with_capacity(nodes);
            for k in 0..nodes {
                let (s, mid, e) = (bounds[l][k], bounds[l + 1][2 * k + 1], bounds[l][k + 1]);
                let shape = (mid - s, e - mid);
                let entry = cache
                    .entry(shape)
                    .or_insert_with(|| cross_approximation(&toeplitz, shape.0, shape.1, opts.rel_tol));
                match entry {
                    Some(b) => blocks.push((s, mid, b.clone())),
                    None => return Self::dense(toeplitz),
                }
            }
            let rank = blocks.iter().map(|b| b.2 .0.ncols()).max().unwrap_or(0);
            let mut basis = DMatrix::zeros(n, rank);
            for (s, mid, (u, v)) in blocks {
                for c in 0..u.ncols() {
                    for i in 0..u.nrows() {
                        basis[(s + i, c)] = u[(i, c)];
                    }
                    for j in 0..v.nrows() {
                        basis[(mid + j, c)] = v[(j, c)];
                    }
                }
            }
            bases.push(basis);
        }
        Self {
            toeplitz,
            bounds,
            bases,
        }
    }

    pub fn dense(toeplitz: SymmetricToeplitz) -> Self {
        let n = toeplitz.len();
        Self {
            toeplitz,
            bounds: vec![vec![0, n]],
            bases: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.toeplitz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.toeplitz.is_empty()
    }

    pub fn toeplitz(&self) -> &SymmetricToeplitz {
        &self.toeplitz
    }

    pub fn depth(&self) -> usize {
        self.bases.len()
    }

    /// Largest off-diagonal rank (0 for a dense representation).
    pub fn max_rank(&self) -> usize {
        self.bases.iter().map(|b| b.ncols()).max().unwrap_or(0)
    }

    pub fn is_hierarchical(&self) -> bool {
        !self.bases.is_empty()
    }

    /// Factorizes `shift·I + D·(scale·K)·D` with `D = diag(d)` (identity when
    /// `d` is `None`). The matrix must be symmetric positive definite.
    pub fn factor(&self, shift: f64, scale: f64, d: Option<&[f64]>) -> Result<HodlrFactor> {
        let n = self.len();
        if let Some(d) = d {
            assert_eq!(d.len(), n);
        }
        let dv = |i: usize| d.map_or(1.0, |d| d[i]);
        let depth = self.depth();
        let mut offsets = Vec::with_capacity(depth + 1);
        offsets.push(0);
        for b in &self.bases {
            offsets.push(offsets.last().unwrap() + b.ncols());
        }
        let total = *offsets.last().unwrap();

        // Original (scaled) bases: left-child rows carry scale·D·u, right-child rows D·v.
        let mut basis = DMatrix::zeros(n, total);
        for l in 0..depth {
            let r = self.bases[l].ncols();
            let nodes = self.bounds[l].len() - 1;
            for k in 0..nodes {
                let (s, mid, e) = (self.bounds[l][k], self.bounds[l + 1][2 * k + 1], self.bounds[l][k + 1]);
                for c in 0..r {
                    for i in s..e {
                        let f = if i < mid { scale * dv(i) } else { dv(i) };
                        basis[(i, offsets[l] + c)] = f * self.bases[l][(i, c)];
                    }
                }
            }
        }
        let mut solved = basis.clone();
        let mut log_det = 0.0;

        let leaf_bounds = &self.bounds[depth];
        let mut leaves = Vec::with_capacity(leaf_bounds.len() - 1);
        for w in leaf_bounds.windows(2) {
            let (s, m) = (w[0], w[1] - w[0]);
            let col = self.toeplitz.column();
            let a = DMatrix::from_fn(m, m, |i, j| {
                let base = scale * dv(s + i) * col[i.abs_diff(j)] * dv(s + j);
                if i == j {
                    base + shift
                } else {
                    base
                }
            });
            let chol = Cholesky::new(a).ok_or_else(|| {
                Error::Factorization(format!("leaf block at rows {s}..{} is not positive definite", s + m))
            })?;
            log_det += 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            if total > 0 {
                let mut rows = solved.rows_mut(s, m);
                chol.solve_mut(&mut rows);
            }
            leaves.push(chol);
        }

        let mut couplings: Vec<Vec<LU<f64, Dyn, Dyn>>> = (0..depth).map(|_| Vec::new()).collect();
        for l in (0..depth).rev() {
            let r = self.bases[l].ncols();
            let c0 = offsets[l];
            let nodes = self.bounds[l].len() - 1;
            let mut level = Vec::with_capacity(nodes);
            for k in 0..nodes {
                let (s, mid, e) = (self.bounds[l][k], self.bounds[l + 1][2 * k + 1], self.bounds[l][k + 1]);
                let p = basis.view((s, c0), (mid - s, r));
                let q = basis.view((mid, c0), (e - mid, r));
                let n_mat = p.transpose() * solved.view((s, c0), (mid - s, r));
                let m_mat = q.transpose() * solved.view((mid, c0), (e - mid, r));
                let mut kmat = DMatrix::identity(2 * r, 2 * r);
                kmat.view_mut((0, r), (r, r)).copy_from(&n_mat);
                kmat.view_mut((r, 0), (r, r)).copy_from(&m_mat);
                let lu = kmat.lu();
                let det = lu.determinant();
                if !(det > 0.0 && det.is_finite()) {
                    return Err(Error::Factorization(format!(
                        "coupling determinant {det:e} at rows {s}..{e} is not positive"
                    )));
                }
                log_det += det.ln();
                if c0 > 0 {
                    // Apply this node's correction to the ancestor columns.
                    let (mut ancestors, level_cols) = solved.columns_range_pair_mut(0..c0, c0..c0 + r);
                    let y1 = level_cols.rows(s, mid - s);
                    let y2 = level_cols.rows(mid, e - mid);
                    let z = ancestors.rows_mut(s, e - s);
                    apply_correction(z, mid - s, p, q, y1.as_view(), y2.as_view(), &lu);
                }
                level.push(lu);
            }
            couplings[l] = level;
        }

        Ok(HodlrFactor {
            bounds: self.bounds.clone(),
            offsets,
            basis,
            solved,
            leaves,
            couplings,
            log_det,
        })
    }
}

/// `z ← (I + [[0, y1 qᵀ], [y2 pᵀ, 0]])⁻¹ z` for a node split at `len1`.
fn apply_correction(
    mut z: DMatrixViewMut<'_, f64>,
    len1: usize,
    p: DMatrixView<'_, f64>,
    q: DMatrixView<'_, f64>,
    y1: DMatrixView<'_, f64>,
    y2: DMatrixView<'_, f64>,
    lu: &LU<f64, Dyn, Dyn>,
) {
    let r = p.ncols();
    if r == 0 {
        return;
    }
    let cols = z.ncols();
    let len2 = z.nrows() - len1;
    let mut small = DMatrix::zeros(2 * r, cols);
    small.rows_mut(0, r).gemm_tr(1.0, &p, &z.rows(0, len1), 0.0);
    small.rows_mut(r, r).gemm_tr(1.0, &q, &z.rows(len1, len2), 0.0);
    lu.solve_mut(&mut small);
    z.rows_mut(0, len1).gemm(-1.0, &y1, &small.rows(r, r), 1.0);
    z.rows_mut(len1, len2).gemm(-1.0, &y2, &small.rows(0, r), 1.0);
}

/// Fully pivoted cross approximation of the `m1 × m2` block coupling two
/// adjacent index ranges. `None` when the rank would exceed half the block
/// dimension.
fn cross_approximation(
    t: &SymmetricToeplitz,
    m1: usize,
    m2: usize,
    rel_tol: f64,
) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let col = t.column();
    let mut resid = DMatrix::from_fn(m1, m2, |i, j| col[m1 - i + j]);
    let scale = resid.amax();
    let limit = m1.min(m2) / 2;
    let mut us: Vec<Vec<f64>> = Vec::new();
    let mut vs: Vec<Vec<f64>> = Vec::new();
    if scale > 0.0 {
        loop {
            let (mut pi, mut pj, mut best) = (0, 0, 0.0);
            for j in 0..m2 {
                for i in 0..m1 {
                    let a = resid[(i, j)].abs();
                    if a > best {
                        best = a;
                        pi = i;
                        pj = j;
                    }
                }
            }
            if best <= rel_tol * scale {
                break;
            }
            if us.len() >= limit {
                return None;
            }
            let pivot = resid[(pi, pj)];
            let u: Vec<f64> = (0..m1).map(|i| resid[(i, pj)]).collect();
            let v: Vec<f64> = (0..m2).map(|j| resid[(pi, j)] / pivot).collect();
            for j in 0..m2 {
                let vj = v[j];
                if vj != 0.0 {
                    for i in 0..m1 {
                        resid[(i, j)] -= u[i] * vj;
                    }
                }
            }
            us.push(u);
            vs.push(v);
        }
    }
    let r = us.len();
    let u = DMatrix::from_fn(m1, r, |i, k| us[k][i]);
    let v = DMatrix::from_fn(m2, r, |j, k| vs[k][j]);
    if r == 0 {
        return Some((u, v));
    }
    Some(recompress(u, v, rel_tol))
}

/// Truncated SVD of `u·vᵀ`, keeping singular values above `rel_tol·s₁`.
fn recompress(u: DMatrix<f64>, v: DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let qu = u.qr();
    let qv = v.qr();
    let core = qu.r() * qv.r().transpose();
    let svd = core.svd(true, true);
    let s = &svd.singular_values;
    let top = s.max();
    let keep = s.iter().filter(|&&x| x > rel_tol * top).count().max(1);
    let left = svd.u.as_ref().unwrap();
    let right = svd.v_t.as_ref().unwrap().transpose();
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let order = &order[..keep];
    let qu_m = qu.q();
    let qv_m = qv.q();
    let lu = DMatrix::from_fn(left.nrows(), keep, |i, k| left[(i, order[k])] * s[order[k]]);
    let rv = DMatrix::from_fn(right.nrows(), keep, |i, k| right[(i, order[k])]);
    (qu_m * lu, qv_m * rv)
}

/// Factorization of `shift·I + D·(scale·K)·D`, giving solves and the log-determinant.
#[derive(Debug)]
pub struct HodlrFactor {
    bounds: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    basis: DMatrix<f64>,
    solved: DMatrix<f64>,
    leaves: Vec<Cholesky<f64, Dyn>>,
    couplings: Vec<Vec<LU<f64, Dyn, Dyn>>>,
    log_det: f64,
}

impl HodlrFactor {
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn len(&self) -> usize {
        self.basis.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let m = self.solve_mat(DMatrix::from_column_slice(b.len(), 1, b));
        m.as_slice().to_vec()
    }

    pub fn solve_mat(&self, mut b: DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(b.nrows(), self.len());
        let depth = self.couplings.len();
        for (chol, w) in self.leaves.iter().zip(self.bounds[depth].windows(2)) {
            let mut rows = b.rows_mut(w[0], w[1] - w[0]);
            chol.solve_mut(&mut rows);
        }
        for l in (0..depth).rev() {
            let r = self.offsets[l + 1] - self.offsets[l];
            let c0 = self.offsets[l];
            for (k, lu) in self.couplings[l].iter().enumerate() {
                let (s, mid, e) = (self.bounds[l][k], self.bounds[l + 1][2 * k + 1], self.bounds[l][k + 1]);
                apply_correction(
                    b.rows_mut(s, e - s),
                    mid - s,
                    self.basis.view((s, c0), (mid - s, r)),
                    self.basis.view((mid, c0), (e - mid, r)),
                    self.solved.view((s, c0), (mid - s, r)),
                    self.solved.view((mid, c0), (e - mid, r)),
                    lu,
                );
            }
        }
        b
    }
}
