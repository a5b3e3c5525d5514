//! Dense row-major matrices, a deterministic one-sided Jacobi SVD, and the
//! nuclear norm with its subgradient.
//!
//! Everything here accumulates in `f64`. Matrix products go through
//! `matrixmultiply`; decompositions are implemented in this module so that
//! results depend only on the input bits.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

/// Maximum number of Jacobi sweeps before giving up.
const MAX_SWEEPS: usize = 80;
/// Off-diagonal tolerance relative to the column norms.
const JACOBI_TOL: f64 = 1e-15;
/// Singular values below `SUBGRAD_CUTOFF * s_max` are excluded from `U_r V_r^T`.
pub const SUBGRAD_CUTOFF: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFiniteInput { row: usize, col: usize },
    #[error("Jacobi iteration did not converge within {sweeps} sweeps")]
    ConvergenceFailure { sweeps: usize },
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("data length {len} does not match shape {rows}x{cols}")]
    BadLength { rows: usize, cols: usize, len: usize },
    #[error("operation requires a non-empty matrix")]
    Empty,
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Row-major dense matrix of `f64`.
#[derive(Clone, PartialEq, Default)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DenseMatrix {}x{} ", self.rows, self.cols)?;
        if self.rows * self.cols <= 64 {
            f.debug_list()
                .entries((0..self.rows).map(|i| self.row(i)))
                .finish()
        } else {
            write!(f, "[..]")
        }
    }
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LinalgError::BadLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally long rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        Self::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 })
    }

    /// Standard-normal entries drawn from `rng`.
    pub fn random_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on 0; an empty-width matrix has no row data.
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Gathers the given rows, in order, into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.scale(s);
        out
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "add")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "sub")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &Self) -> Result<()> {
        self.check_same_shape(other, "axpy")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// First non-finite entry, if any.
    pub fn find_non_finite(&self) -> Option<(usize, usize)> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|p| (p / self.cols.max(1), p % self.cols.max(1)))
    }

    pub fn ensure_finite(&self) -> Result<()> {
        match self.find_non_finite() {
            Some((row, col)) => Err(LinalgError::NonFiniteInput { row, col }),
            None => Ok(()),
        }
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for r in self.rows_iter() {
            for (m, v) in means.iter_mut().zip(r) {
                *m += v;
            }
        }
        let n = self.rows.max(1) as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let mut out = Self::zeros(self.rows, other.cols);
        gemm(1.0, self, false, other, false, 0.0, &mut out)?;
        Ok(out)
    }

    fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(LinalgError::DimensionMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }
}

/// `c = alpha * op(a) * op(b) + beta * c`, where `op` optionally transposes.
pub fn gemm(
    alpha: f64,
    a: &DenseMatrix,
    trans_a: bool,
    b: &DenseMatrix,
    trans_b: bool,
    beta: f64,
    c: &mut DenseMatrix,
) -> Result<()> {
    let (m, ka) = if trans_a {
        (a.cols, a.rows)
    } else {
        (a.rows, a.cols)
    };
    let (kb, n) = if trans_b {
        (b.cols, b.rows)
    } else {
        (b.rows, b.cols)
    };
    if ka != kb || c.rows != m || c.cols != n {
        return Err(LinalgError::DimensionMismatch {
            op: "gemm",
            left: (m, ka),
            right: (kb, n),
        });
    }
    if m == 0 || n == 0 {
        return Ok(());
    }
    if ka == 0 {
        c.scale(beta);
        return Ok(());
    }
    let (rsa, csa) = if trans_a {
        (1, a.cols as isize)
    } else {
        (a.cols as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, b.cols as isize)
    } else {
        (b.cols as isize, 1)
    };
    // SAFETY: shapes and strides were validated above; the three buffers are
    // distinct allocations (c is borrowed mutably, a and b immutably).
    unsafe {
        matrixmultiply::dgemm(
            m,
            ka,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
    Ok(())
}

/// Squared Euclidean distance with four independent accumulators.
#[inline]
pub fn sq_euclidean(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = [0.0f64; 4];
    let cx = x.chunks_exact(4);
    let cy = y.chunks_exact(4);
    let (rx, ry) = (cx.remainder(), cy.remainder());
    for (a, b) in cx.zip(cy) {
        for l in 0..4 {
            let d = a[l] - b[l];
            acc[l] += d * d;
        }
    }
    let mut tail = 0.0;
    for (a, b) in rx.iter().zip(ry) {
        let d = a - b;
        tail += d * d;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let cx = x.chunks_exact(4);
    let cy = y.chunks_exact(4);
    let (rx, ry) = (cx.remainder(), cy.remainder());
    for (a, b) in cx.zip(cy) {
        for l in 0..4 {
            acc[l] += a[l] * b[l];
        }
    }
    let mut tail = 0.0;
    for (a, b) in rx.iter().zip(ry) {
        tail += a * b;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Entry `(i, j)` is `||a_i - b_j||^2`, computed by direct differences.
pub fn pairwise_sq_dists(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.cols {
        return Err(LinalgError::DimensionMismatch {
            op: "pairwise_sq_dists",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = DenseMatrix::zeros(a.rows, b.rows);
    if b.rows == 0 {
        return Ok(out);
    }
    out.data
        .par_chunks_mut(b.rows)
        .enumerate()
        .for_each(|(i, row)| {
            let ai = a.row(i);
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = sq_euclidean(ai, b.row(j)).max(0.0);
            }
        });
    Ok(out)
}

/// Thin singular value decomposition `a = u * diag(s) * v^T`.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DenseMatrix,
    pub s: Vec<f64>,
    pub v: DenseMatrix,
}

impl ThinSvd {
    pub fn rank(&self) -> usize {
        self.r()
    }

    pub fn r(&self) -> usize {
        self.s.len()
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        for i in 0..us.rows {
            for (j, s) in self.s.iter().enumerate() {
                us.data[i * us.cols + j] *= s;
            }
        }
        let mut out = DenseMatrix::zeros(self.u.rows, self.v.rows);
        gemm(1.0, &us, false, &self.v, true, 0.0, &mut out).expect("svd shapes");
        out
    }

    /// Number of singular values above `tol * s_max`.
    pub fn numerical_rank(&self, tol: f64) -> usize {
        let smax = self.s.first().copied().unwrap_or(0.0);
        self.s.iter().filter(|&&s| s > tol * smax && s > 0.0).count()
    }
}

/// Column-major scratch matrix used by the decompositions.
struct ColMajor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ColMajor {
    fn from_dense(a: &DenseMatrix) -> Self {
        let mut data = vec![0.0; a.rows * a.cols];
        for i in 0..a.rows {
            for j in 0..a.cols {
                data[j * a.rows + i] = a.data[i * a.cols + j];
            }
        }
        Self {
            rows: a.rows,
            cols: a.cols,
            data,
        }
    }

    fn from_dense_transposed(a: &DenseMatrix) -> Self {
        // the row-major buffer of `a` is the column-major buffer of `a^T`
        Self {
            rows: a.cols,
            cols: a.rows,
            data: a.data.clone(),
        }
    }

    fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self {
            rows: n,
            cols: n,
            data,
        }
    }

    #[inline]
    fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    fn two_cols_mut(&mut self, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
        debug_assert!(p < q);
        let r = self.rows;
        let (lo, hi) = self.data.split_at_mut(q * r);
        (&mut lo[p * r..(p + 1) * r], &mut hi[..r])
    }

    fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for j in 0..self.cols {
            for i in 0..self.rows {
                out.data[i * self.cols + j] = self.data[j * self.rows + i];
            }
        }
        out
    }
}

/// Householder QR of a tall column-major matrix. Returns the `n x n` upper
/// factor and, when requested, the thin orthonormal factor (`m x n`).
fn householder_qr(mut a: ColMajor, want_q: bool) -> (ColMajor, Option<ColMajor>) {
    let (m, n) = (a.rows, a.cols);
    let mut reflectors: Vec<(usize, Vec<f64>, f64)> = Vec::with_capacity(n);
    for j in 0..n {
        let x = &a.col(j)[j..];
        let normx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if normx == 0.0 {
            continue;
        }
        let alpha = if x[0] > 0.0 { -normx } else { normx };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vnorm2 = v.iter().map(|t| t * t).sum::<f64>();
        if vnorm2 == 0.0 {
            continue;
        }
        {
            let cj = a.col_mut(j);
            cj[j] = alpha;
            cj[j + 1..].iter_mut().for_each(|t| *t = 0.0);
        }
        for c in j + 1..n {
            let col = &mut a.col_mut(c)[j..];
            let f = 2.0 * dot(&v, col) / vnorm2;
            for (t, vi) in col.iter_mut().zip(&v) {
                *t -= f * vi;
            }
        }
        reflectors.push((j, v, vnorm2));
    }
    let mut r = ColMajor {
        rows: n,
        cols: n,
        data: vec![0.0; n * n],
    };
    for j in 0..n {
        for i in 0..=j.min(m - 1) {
            r.data[j * n + i] = a.data[j * m + i];
        }
    }
    let q = want_q.then(|| {
        let mut q = ColMajor {
            rows: m,
            cols: n,
            data: vec![0.0; m * n],
        };
        for j in 0..n {
            q.data[j * m + j] = 1.0;
        }
        for (j, v, vnorm2) in reflectors.iter().rev() {
            for c in 0..n {
                let col = &mut q.col_mut(c)[*j..];
                let f = 2.0 * dot(v, col) / vnorm2;
                if f != 0.0 {
                    for (t, vi) in col.iter_mut().zip(v) {
                        *t -= f * vi;
                    }
                }
            }
        }
        q
    });
    (r, q)
}

/// One-sided (Hestenes) Jacobi on the columns of `w` (`m x n`, `m >= n`).
/// On return the columns of `w` are mutually orthogonal and `v` holds the
/// accumulated rotations.
fn one_sided_jacobi(w: &mut ColMajor, mut v: Option<&mut ColMajor>) -> Result<()> {
    let n = w.cols;
    let tol = JACOBI_TOL.max(f64::EPSILON * w.rows as f64);
    for _sweep in 0..MAX_SWEEPS {
        // columns this small are numerically zero; rotating them never settles
        let max_sq = (0..n).map(|j| dot(w.col(j), w.col(j))).fold(0.0, f64::max);
        let tiny = max_sq * (f64::EPSILON * w.rows as f64).powi(2);
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let (cp, cq) = w.two_cols_mut(p, q);
                let alpha = dot(cp, cp);
                let beta = dot(cq, cq);
                let gamma = dot(cp, cq);
                if alpha <= tiny || beta <= tiny || gamma.abs() <= tol * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(cp, cq, c, s);
                if let Some(v) = v.as_deref_mut() {
                    let (vp, vq) = v.two_cols_mut(p, q);
                    rotate(vp, vq, c, s);
                }
            }
        }
        if !rotated {
            return Ok(());
        }
    }
    Err(LinalgError::ConvergenceFailure { sweeps: MAX_SWEEPS })
}

#[inline]
fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (xa, yb) = (*a, *b);
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

/// Singular values (descending) and optionally the factors of a column-major
/// matrix with `rows >= cols`.
fn svd_tall(a: ColMajor, want_vectors: bool) -> Result<(Vec<f64>, Option<(ColMajor, ColMajor)>)> {
    let (m, n) = (a.rows, a.cols);
    // QR first when tall: Jacobi then runs on the small triangular factor.
    let (mut w, q) = if m > n {
        let (r, q) = householder_qr(a, want_vectors);
        (r, q)
    } else {
        (a, None)
    };
    let mut v = want_vectors.then(|| ColMajor::identity(n));
    one_sided_jacobi(&mut w, v.as_mut())?;

    let norms: Vec<f64> = (0..n).map(|j| dot(w.col(j), w.col(j)).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]).then(x.cmp(&y)));
    let s: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    if !want_vectors {
        return Ok((s, None));
    }
    let v = v.expect("requested");
    let wr = w.rows;
    let mut u_small = ColMajor {
        rows: wr,
        cols: n,
        data: vec![0.0; wr * n],
    };
    let mut v_sorted = ColMajor {
        rows: n,
        cols: n,
        data: vec![0.0; n * n],
    };
    let smax = s.first().copied().unwrap_or(0.0);
    let mut missing = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        v_sorted.col_mut(dst).copy_from_slice(v.col(src));
        let nrm = norms[src];
        if nrm > smax * f64::EPSILON * wr as f64 && nrm.is_normal() {
            let col = u_small.col_mut(dst);
            for (t, x) in col.iter_mut().zip(w.col(src)) {
                *t = x / nrm;
            }
        } else {
            missing.push(dst);
        }
    }
    complete_orthonormal(&mut u_small, &missing);
    let u = match q {
        Some(q) => {
            // u = q * u_small
            let qd = q.to_dense();
            let ud = u_small.to_dense();
            let mut prod = DenseMatrix::zeros(m, n);
            gemm(1.0, &qd, false, &ud, false, 0.0, &mut prod)?;
            ColMajor::from_dense(&prod)
        }
        None => u_small,
    };
    Ok((s, Some((u, v_sorted))))
}

/// Fills the listed columns with unit vectors orthogonal to all others.
fn complete_orthonormal(u: &mut ColMajor, missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let m = u.rows;
    let mut filled: Vec<usize> = (0..u.cols).filter(|j| !missing.contains(j)).collect();
    let mut basis = 0usize;
    for &target in missing {
        while basis < m {
            let mut cand = vec![0.0; m];
            cand[basis] = 1.0;
            basis += 1;
            // two passes of Gram-Schmidt
            for _ in 0..2 {
                for &j in &filled {
                    let c = u.col(j);
                    let f = dot(&cand, c);
                    for (t, x) in cand.iter_mut().zip(c) {
                        *t -= f * x;
                    }
                }
            }
            let nrm = dot(&cand, &cand).sqrt();
            if nrm > 1e-8 {
                for (t, x) in u.col_mut(target).iter_mut().zip(&cand) {
                    *t = x / nrm;
                }
                filled.push(target);
                break;
            }
        }
    }
}

/// Thin SVD by Householder QR followed by one-sided Jacobi.
pub fn thin_svd(a: &DenseMatrix) -> Result<ThinSvd> {
    if a.is_empty() {
        return Err(LinalgError::Empty);
    }
    a.ensure_finite()?;
    if a.rows >= a.cols {
        let (s, f) = svd_tall(ColMajor::from_dense(a), true)?;
        let (u, v) = f.expect("vectors");
        Ok(ThinSvd {
            u: u.to_dense(),
            s,
            v: v.to_dense(),
        })
    } else {
        let (s, f) = svd_tall(ColMajor::from_dense_transposed(a), true)?;
        let (u, v) = f.expect("vectors");
        Ok(ThinSvd {
            u: v.to_dense(),
            s,
            v: u.to_dense(),
        })
    }
}

/// Singular values only, descending.
pub fn singular_values(a: &DenseMatrix) -> Result<Vec<f64>> {
    if a.is_empty() {
        return Err(LinalgError::Empty);
    }
    a.ensure_finite()?;
    let cm = if a.rows >= a.cols {
        ColMajor::from_dense(a)
    } else {
        ColMajor::from_dense_transposed(a)
    };
    Ok(svd_tall(cm, false)?.0)
}

/// Sum of singular values.
pub fn nuclear_norm(a: &DenseMatrix) -> Result<f64> {
    Ok(singular_values(a)?.iter().sum())
}

/// `U_r V_r^T` restricted to singular values above `SUBGRAD_CUTOFF * s_max`.
pub fn nuclear_norm_subgradient(a: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(nuclear_norm_with_subgradient(a)?.1)
}

/// Nuclear norm and its subgradient from a single decomposition.
pub fn nuclear_norm_with_subgradient(a: &DenseMatrix) -> Result<(f64, DenseMatrix)> {
    let svd = thin_svd(a)?;
    let norm = svd.s.iter().sum();
    Ok((norm, subgradient_from_svd(&svd, a.rows, a.cols)))
}

fn subgradient_from_svd(svd: &ThinSvd, rows: usize, cols: usize) -> DenseMatrix {
    let smax = svd.s.first().copied().unwrap_or(0.0);
    let keep = svd
        .s
        .iter()
        .take_while(|&&s| s > SUBGRAD_CUTOFF * smax && s > 0.0)
        .count();
    let mut out = DenseMatrix::zeros(rows, cols);
    if keep == 0 {
        return out;
    }
    let ur = DenseMatrix::from_fn(rows, keep, |i, j| svd.u.get(i, j));
    let vr = DenseMatrix::from_fn(cols, keep, |i, j| svd.v.get(i, j));
    gemm(1.0, &ur, false, &vr, true, 0.0, &mut out).expect("subgradient shapes");
    out
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Eigenvalues are returned ascending; eigenvectors are the columns of the
/// returned matrix.
pub fn symmetric_eigen(a: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    let n = a.rows;
    if n != a.cols {
        return Err(LinalgError::DimensionMismatch {
            op: "symmetric_eigen",
            left: a.shape(),
            right: a.shape(),
        });
    }
    if n == 0 {
        return Err(LinalgError::Empty);
    }
    a.ensure_finite()?;
    let mut m = a.clone();
    let mut v = DenseMatrix::identity(n);
    let scale = m.frobenius_norm().max(f64::MIN_POSITIVE);
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m.get(i, j).powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            converged = true;
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m.get(k, p);
                    let akq = m.get(k, q);
                    m.set(k, p, c * akp - s * akq);
                    m.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = m.get(p, k);
                    let aqk = m.get(q, k);
                    m.set(p, k, c * apk - s * aqk);
                    m.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    if !converged {
        return Err(LinalgError::ConvergenceFailure { sweeps: MAX_SWEEPS });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| m.get(x, x).total_cmp(&m.get(y, y)).then(x.cmp(&y)));
    let vals = order.iter().map(|&i| m.get(i, i)).collect();
    let vecs = DenseMatrix::from_fn(n, n, |i, j| v.get(i, order[j]));
    Ok((vals, vecs))
}
