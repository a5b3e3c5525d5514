//! Low-dimensional layout of a fuzzy graph: curve fitting for the
//! similarity kernel, spectral initialization and stochastic optimization of
//! the fuzzy cross-entropy with negative sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fuzzy::FuzzyGraph;
use crate::linalg::{gemm, symmetric_eigen, thin_svd, DenseMatrix};

const REPULSION_EPS: f64 = 1e-3;
const GRAD_CLIP: f64 = 4.0;
const INIT_EXTENT: f64 = 10.0;
const INIT_JITTER: f64 = 1e-4;
const CE_EPS: f64 = 1e-12;
const LANCZOS_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayoutError {
    #[error("invalid layout config: {0}")]
    Config(String),
    #[error("curve fit for min_dist = {min_dist}, spread = {spread} diverged")]
    FitDiverged { min_dist: f64, spread: f64 },
    #[error("non-finite coordinate at epoch {epoch} while processing edge {edge}")]
    NonFiniteCoordinate { epoch: usize, edge: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("graph has no nodes")]
    EmptyGraph,
}

pub type Result<T> = std::result::Result<T, LayoutError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutConfig {
    pub out_dim: usize,
    pub min_dist: f64,
    pub spread: f64,
    /// Overrides the fitted curve parameter when set.
    pub a: Option<f64>,
    pub b: Option<f64>,
    /// `None` picks 500 epochs up to 10,000 points and 200 beyond.
    pub n_epochs: Option<usize>,
    pub neg_sample_rate: usize,
    pub initial_lr: f64,
    pub seed: u64,
    /// Edges, and as many non-edges, in the cross-entropy probe set.
    pub probe_edges: usize,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            out_dim: 2,
            min_dist: 0.1,
            spread: 1.0,
            a: None,
            b: None,
            n_epochs: None,
            neg_sample_rate: 5,
            initial_lr: 1.0,
            seed: 0,
            probe_edges: 1000,
        }
    }
}

impl LayoutConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.out_dim == 2 || self.out_dim == 3) {
            return Err(LayoutError::Config(format!("out_dim must be 2 or 3, got {}", self.out_dim)));
        }
        if !(self.min_dist >= 0.0 && self.min_dist < self.spread) {
            return Err(LayoutError::Config(format!(
                "need 0 <= min_dist < spread, got {} and {}",
                self.min_dist, self.spread
            )));
        }
        for (name, v) in [("a", self.a), ("b", self.b)] {
            if let Some(v) = v {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(LayoutError::Config(format!("{name} must be positive, got {v}")));
                }
            }
        }
        if self.n_epochs == Some(0) {
            return Err(LayoutError::Config("n_epochs must be >= 1".into()));
        }
        if !(self.initial_lr > 0.0) {
            return Err(LayoutError::Config("initial_lr must be positive".into()));
        }
        Ok(())
    }

    pub fn epochs_for(&self, n: usize) -> usize {
        self.n_epochs.unwrap_or(if n <= 10_000 { 500 } else { 200 })
    }

    /// Curve parameters, fitted from `min_dist`/`spread` unless overridden.
    pub fn resolve_ab(&self) -> Result<(f64, f64)> {
        match (self.a, self.b) {
            (Some(a), Some(b)) => Ok((a, b)),
            (a, b) => {
                let (fa, fb) = fit_ab(self.min_dist, self.spread)?;
                Ok((a.unwrap_or(fa), b.unwrap_or(fb)))
            }
        }
    }
}

/// How the starting coordinates were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Spectral,
    Pca,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Init {
    pub y: DenseMatrix,
    pub kind: InitKind,
}

impl Init {
    pub fn fell_back(&self) -> bool {
        self.kind != InitKind::Spectral
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub y: DenseMatrix,
    pub config: LayoutConfig,
    pub a: f64,
    pub b: f64,
    pub epochs_run: usize,
    /// Cross-entropy of the probe edges after each epoch.
    pub ce_trace: Vec<f64>,
    /// Probe estimate of the cross-entropy over all pairs, edges and non-edges.
    pub all_pairs_ce_trace: Vec<f64>,
}

/// `(1 + a d^(2b))^-1`.
#[inline]
pub fn kernel(d: f64, a: f64, b: f64) -> f64 {
    1.0 / (1.0 + a * d.powf(2.0 * b))
}

fn target_curve(d: f64, min_dist: f64, spread: f64) -> f64 {
    if d <= min_dist {
        1.0
    } else {
        (-(d - min_dist) / spread).exp()
    }
}

/// Sample points used by [`fit_ab`]: 300 evenly spaced values on `(0, 3 spread]`.
pub fn fit_grid(spread: f64) -> Vec<f64> {
    (1..=300).map(|i| 3.0 * spread * i as f64 / 300.0).collect()
}

/// Root-mean-square gap between the kernel and the target curve on [`fit_grid`].
pub fn fit_rms(a: f64, b: f64, min_dist: f64, spread: f64) -> f64 {
    let xs = fit_grid(spread);
    let ss: f64 = xs
        .iter()
        .map(|&d| (kernel(d, a, b) - target_curve(d, min_dist, spread)).powi(2))
        .sum();
    (ss / xs.len() as f64).sqrt()
}

/// Least-squares fit of `(1 + a d^(2b))^-1` to the target curve, by
/// Levenberg-Marquardt over `(ln a, ln b)`.
pub fn fit_ab(min_dist: f64, spread: f64) -> Result<(f64, f64)> {
    if !(min_dist >= 0.0 && min_dist < spread) || !spread.is_finite() {
        return Err(LayoutError::Config(format!(
            "need 0 <= min_dist < spread, got {min_dist} and {spread}"
        )));
    }
    let xs = fit_grid(spread);
    let ys: Vec<f64> = xs.iter().map(|&d| target_curve(d, min_dist, spread)).collect();
    let sse = |la: f64, lb: f64| -> f64 {
        let (a, b) = (la.exp(), lb.exp());
        xs.iter().zip(&ys).map(|(&d, &y)| (kernel(d, a, b) - y).powi(2)).sum()
    };
    let (mut la, mut lb) = (1.5f64.ln(), 0.9f64.ln());
    let mut cur = sse(la, lb);
    let mut mu = 1e-3;
    for _ in 0..500 {
        let (a, b) = (la.exp(), lb.exp());
        // normal equations of the Gauss-Newton step in log-parameters
        let (mut h00, mut h01, mut h11, mut g0, mut g1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&d, &y) in xs.iter().zip(&ys) {
            let p = d.powf(2.0 * b);
            let f = 1.0 / (1.0 + a * p);
            let r = f - y;
            let df = -f * f;
            let ja = df * a * p;
            let jb = df * a * p * 2.0 * b * d.ln();
            h00 += ja * ja;
            h01 += ja * jb;
            h11 += jb * jb;
            g0 += ja * r;
            g1 += jb * r;
        }
        let mut improved = false;
        for _ in 0..30 {
            let (m00, m11) = (h00 * (1.0 + mu), h11 * (1.0 + mu));
            let det = m00 * m11 - h01 * h01;
            if det.abs() < 1e-300 {
                mu *= 10.0;
                continue;
            }
            let s0 = -(m11 * g0 - h01 * g1) / det;
            let s1 = -(m00 * g1 - h01 * g0) / det;
            let next = sse(la + s0, lb + s1);
            if next.is_finite() && next < cur {
                la += s0;
                lb += s1;
                let gain = cur - next;
                cur = next;
                mu = (mu * 0.3).max(1e-12);
                improved = gain > 1e-15 * cur.max(1e-300);
                break;
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let (a, b) = (la.exp(), lb.exp());
    if !a.is_finite() || !b.is_finite() || !cur.is_finite() {
        return Err(LayoutError::FitDiverged { min_dist, spread });
    }
    Ok((a, b))
}

/// `y <- A y` with `A = D^-1/2 W D^-1/2`.
fn normalized_matvec(adj: &[Vec<(usize, f64)>], inv_sqrt_deg: &[f64], x: &[f64], out: &mut [f64]) {
    for (i, row) in adj.iter().enumerate() {
        let s: f64 = row.iter().map(|&(j, w)| w * inv_sqrt_deg[j] * x[j]).sum();
        out[i] = inv_sqrt_deg[i] * s;
    }
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let f: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= f * b);
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Top `count` eigenpairs of the normalized adjacency orthogonal to `deflate`,
/// by Lanczos with full reorthogonalization. `None` when Ritz pairs fail
/// the residual check.
fn lanczos_top(
    adj: &[Vec<(usize, f64)>],
    inv_sqrt_deg: &[f64],
    deflate: &[f64],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<Vec<f64>>> {
    let n = adj.len();
    let avail = n - 1;
    if count > avail {
        return None;
    }
    let mut steps = (4 * count + 40).min(avail);
    loop {
        let fixed = vec![deflate.to_vec()];
        let mut q: Vec<Vec<f64>> = Vec::with_capacity(steps);
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        orthogonalize(&mut v, &fixed);
        let nv = norm(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        let mut alpha = Vec::with_capacity(steps);
        let mut beta: Vec<f64> = Vec::with_capacity(steps);
        let mut w = vec![0.0; n];
        for it in 0..steps {
            q.push(v.clone());
            normalized_matvec(adj, inv_sqrt_deg, &v, &mut w);
            let a: f64 = w.iter().zip(&v).map(|(x, y)| x * y).sum();
            alpha.push(a);
            orthogonalize(&mut w, &fixed);
            orthogonalize(&mut w, &q);
            let b = norm(&w);
            if it + 1 == steps || b < 1e-12 {
                break;
            }
            beta.push(b);
            v = w.iter().map(|x| x / b).collect();
        }
        let m = alpha.len();
        let t = DenseMatrix::from_fn(m, m, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j {
                beta[i]
            } else if j + 1 == i {
                beta[j]
            } else {
                0.0
            }
        });
        let (vals, vecs) = symmetric_eigen(&t).ok()?;
        if m < count {
            return None;
        }
        let mut out = Vec::with_capacity(count);
        let mut ok = true;
        for c in 0..count {
            let col = m - 1 - c;
            let theta = vals[col];
            let mut x = vec![0.0; n];
            for (r, qr) in q.iter().enumerate() {
                let s = vecs.get(r, col);
                x.iter_mut().zip(qr).for_each(|(xi, qi)| *xi += s * qi);
            }
            let nx = norm(&x);
            x.iter_mut().for_each(|xi| *xi /= nx);
            normalized_matvec(adj, inv_sqrt_deg, &x, &mut w);
            let res = w.iter().zip(&x).map(|(a, b)| (a - theta * b).powi(2)).sum::<f64>().sqrt();
            if !(res < LANCZOS_TOL.max(1e-3 / (n as f64).sqrt())) {
                ok = false;
            }
            out.push(x);
        }
        if ok {
            return Some(out);
        }
        if steps == avail || steps >= 600 {
            return None;
        }
        steps = (steps * 2).min(avail).min(600);
    }
}

/// Centres the columns, scales to `[-INIT_EXTENT, INIT_EXTENT]` and adds jitter.
fn finish_init(mut y: DenseMatrix, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let means = y.column_means();
    let cols = y.cols();
    for r in 0..y.rows() {
        for (c, m) in means.iter().enumerate().take(cols) {
            let v = y.get(r, c) - m;
            y.set(r, c, v);
        }
    }
    let max_abs = y.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs > 0.0 {
        y.scale(INIT_EXTENT / max_abs);
    }
    let jitter = Normal::new(0.0, INIT_JITTER).expect("jitter");
    y.as_mut_slice().iter_mut().for_each(|v| *v += jitter.sample(rng));
    y
}

/// Sign convention: the largest-magnitude entry of each column is positive.
fn fix_signs(y: &mut DenseMatrix) {
    for c in 0..y.cols() {
        let mut best = 0.0f64;
        for r in 0..y.rows() {
            let v = y.get(r, c);
            if v.abs() > best.abs() {
                best = v;
            }
        }
        if best < 0.0 {
            for r in 0..y.rows() {
                let v = y.get(r, c);
                y.set(r, c, -v);
            }
        }
    }
}

/// Leading principal component scores of `data` by seeded subspace iteration.
pub fn pca_coords(data: &DenseMatrix, out_dim: usize, seed: u64) -> Option<DenseMatrix> {
    let (n, d) = data.shape();
    if n < 2 || d == 0 {
        return None;
    }
    let means = data.column_means();
    let x = DenseMatrix::from_fn(n, d, |i, j| data.get(i, j) - means[j]);
    let l = (out_dim + 8).min(d).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = DenseMatrix::random_normal(d, l, &mut rng);
    let mut y = DenseMatrix::zeros(n, l);
    gemm(1.0, &x, false, &omega, false, 0.0, &mut y).ok()?;
    let mut q = thin_svd(&y).ok()?.u;
    let mut xtq = DenseMatrix::zeros(d, l);
    for _ in 0..6 {
        gemm(1.0, &x, true, &q, false, 0.0, &mut xtq).ok()?;
        gemm(1.0, &x, false, &xtq, false, 0.0, &mut y).ok()?;
        q = thin_svd(&y).ok()?.u;
    }
    // B = Q^T X, right singular vectors give the principal axes
    let mut bt = DenseMatrix::zeros(d, l);
    gemm(1.0, &x, true, &q, false, 0.0, &mut bt).ok()?;
    let svd = thin_svd(&bt).ok()?;
    let k = out_dim.min(svd.u.cols());
    let axes = DenseMatrix::from_fn(d, out_dim, |i, j| if j < k { svd.u.get(i, j) } else { 0.0 });
    let mut scores = DenseMatrix::zeros(n, out_dim);
    gemm(1.0, &x, false, &axes, false, 0.0, &mut scores).ok()?;
    Some(scores)
}

/// Spectral coordinates from the normalized graph Laplacian. Disconnected
/// graphs and solver failures fall back to PCA of `data` (or seeded uniform
/// noise without data).
pub fn spectral_init(fg: &FuzzyGraph, out_dim: usize, seed: u64, data: Option<&DenseMatrix>) -> Result<Init> {
    let n = fg.n_nodes;
    if n == 0 {
        return Err(LayoutError::EmptyGraph);
    }
    if let Some(d) = data {
        if d.rows() != n {
            return Err(LayoutError::ShapeMismatch(format!("data has {} rows, graph has {n} nodes", d.rows())));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let comps = fg.components();
    let n_comp = comps.iter().copied().max().map_or(0, |m| m + 1);
    let spectral = if n_comp == 1 && n > out_dim + 1 {
        let deg = fg.degrees();
        let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
        let total: f64 = deg.iter().sum();
        let top: Vec<f64> = deg.iter().map(|d| (d / total).sqrt()).collect();
        lanczos_top(&fg.adjacency(), &inv_sqrt, &top, out_dim, &mut rng)
    } else {
        None
    };
    if let Some(vecs) = spectral {
        let mut y = DenseMatrix::from_fn(n, out_dim, |i, j| vecs[j][i]);
        fix_signs(&mut y);
        return Ok(Init {
            y: finish_init(y, &mut rng),
            kind: InitKind::Spectral,
        });
    }
    log::warn!("spectral initialization unavailable ({n_comp} components); falling back");
    if let Some(mut y) = data.and_then(|d| pca_coords(d, out_dim, seed)) {
        fix_signs(&mut y);
        return Ok(Init {
            y: finish_init(y, &mut rng),
            kind: InitKind::Pca,
        });
    }
    let y = DenseMatrix::from_fn(n, out_dim, |_, _| rng.random_range(-INIT_EXTENT..INIT_EXTENT));
    Ok(Init { y, kind: InitKind::Random })
}

/// Fuzzy cross-entropy of `pairs` under the layout `y`:
/// `sum w ln(w / v) + (1 - w) ln((1 - w) / (1 - v))`.
pub fn cross_entropy(y: &DenseMatrix, pairs: &[(usize, usize, f64)], a: f64, b: f64) -> f64 {
    pairs
        .iter()
        .map(|&(i, j, w)| {
            let d = crate::linalg::sq_euclidean(y.row(i), y.row(j)).sqrt();
            let v = kernel(d, a, b).clamp(CE_EPS, 1.0 - CE_EPS);
            let mut t = 0.0;
            if w > 0.0 {
                t += w * (w / v).ln();
            }
            if w < 1.0 {
                t += (1.0 - w) * ((1.0 - w) / (1.0 - v)).ln();
            }
            t
        })
        .sum()
}

/// Fixed pair sample for tracking the layout objective. Graph edges and
/// non-edges are drawn separately; each part is scaled to the population it
/// stands for so that the total estimates the sum over all pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub edges: Vec<(usize, usize, f64)>,
    /// Weight-zero pairs.
    pub non_edges: Vec<(usize, usize, f64)>,
    pub edge_scale: f64,
    pub non_edge_scale: f64,
}

impl Probe {
    /// Estimated cross-entropy over every pair.
    pub fn cross_entropy(&self, y: &DenseMatrix, a: f64, b: f64) -> f64 {
        self.edge_scale * cross_entropy(y, &self.edges, a, b)
            + self.non_edge_scale * cross_entropy(y, &self.non_edges, a, b)
    }

    /// Unscaled cross-entropy of the sampled edges alone.
    pub fn edge_cross_entropy(&self, y: &DenseMatrix, a: f64, b: f64) -> f64 {
        cross_entropy(y, &self.edges, a, b)
    }
}

/// Seeded probe of up to `count` distinct edges and `count` distinct non-edges.
pub fn probe_set(fg: &FuzzyGraph, count: usize, seed: u64) -> Probe {
    let n = fg.n_nodes;
    let m = fg.n_edges();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let edges = if m <= count {
        fg.edges.clone()
    } else {
        let mut idx = rand::seq::index::sample(&mut rng, m, count).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|e| fg.edges[e]).collect()
    };

    let all_pairs = n * n.saturating_sub(1) / 2;
    let absent = all_pairs - m;
    let mut non_edges = Vec::new();
    if absent <= count {
        for i in 0..n {
            for j in i + 1..n {
                if fg.weight(i, j).is_none() {
                    non_edges.push((i, j, 0.0));
                }
            }
        }
    } else {
        let mut seen = std::collections::BTreeSet::new();
        while non_edges.len() < count {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            let key = (i.min(j), i.max(j));
            if i != j && fg.weight(i, j).is_none() && seen.insert(key) {
                non_edges.push((key.0, key.1, 0.0));
            }
        }
        non_edges.sort_unstable_by_key(|&(i, j, _)| (i, j));
    }
    let scale = |pop: usize, got: usize| if got == 0 { 0.0 } else { pop as f64 / got as f64 };
    Probe {
        edge_scale: scale(m, edges.len()),
        non_edge_scale: scale(absent, non_edges.len()),
        edges,
        non_edges,
    }
}

#[inline]
fn clip(v: f64) -> f64 {
    v.clamp(-GRAD_CLIP, GRAD_CLIP)
}

/// Stochastic optimization of the layout, sequential over edges.
pub fn optimize_layout(y0: &DenseMatrix, fg: &FuzzyGraph, cfg: &LayoutConfig) -> Result<Layout> {
    cfg.validate()?;
    let n = fg.n_nodes;
    if y0.rows() != n || y0.cols() != cfg.out_dim {
        return Err(LayoutError::ShapeMismatch(format!(
            "initial layout is {}x{}, expected {n}x{}",
            y0.rows(),
            y0.cols(),
            cfg.out_dim
        )));
    }
    let (a, b) = cfg.resolve_ab()?;
    let n_epochs = cfg.epochs_for(n);
    let dim = cfg.out_dim;
    let mut y = y0.clone();
    let probe = probe_set(fg, cfg.probe_edges, cfg.seed);

    // each undirected edge is visited in both orientations
    let max_w = fg.edges.iter().map(|e| e.2).fold(0.0, f64::max);
    let mut heads = Vec::with_capacity(2 * fg.n_edges());
    let mut tails = Vec::with_capacity(2 * fg.n_edges());
    let mut eps = Vec::with_capacity(2 * fg.n_edges());
    for &(i, j, w) in &fg.edges {
        let e = max_w / w;
        for (h, t) in [(i, j), (j, i)] {
            heads.push(h);
            tails.push(t);
            eps.push(e);
        }
    }
    let rate = cfg.neg_sample_rate as f64;
    let eps_neg: Vec<f64> = eps.iter().map(|e| e / rate.max(1e-300)).collect();
    let mut next_sample = eps.clone();
    let mut next_neg = eps_neg.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ce_trace = Vec::with_capacity(n_epochs);
    let mut all_pairs_ce_trace = Vec::with_capacity(n_epochs);
    let mut diff = [0.0f64; 3];

    for epoch in 0..n_epochs {
        let alpha = cfg.initial_lr * (1.0 - epoch as f64 / n_epochs as f64);
        let now = epoch as f64;
        for e in 0..heads.len() {
            if next_sample[e] > now {
                continue;
            }
            let (i, j) = (heads[e], tails[e]);
            let mut d2 = 0.0;
            for c in 0..dim {
                diff[c] = y.get(i, c) - y.get(j, c);
                d2 += diff[c] * diff[c];
            }
            if d2 > 0.0 {
                let coeff = -2.0 * a * b * d2.powf(b - 1.0) / (1.0 + a * d2.powf(b));
                for c in 0..dim {
                    let g = clip(coeff * diff[c]) * alpha;
                    let yi = y.get(i, c) + g;
                    y.set(i, c, yi);
                    let yj = y.get(j, c) - g;
                    y.set(j, c, yj);
                }
            }
            next_sample[e] += eps[e];

            if cfg.neg_sample_rate > 0 {
                let n_neg = ((now - next_neg[e]) / eps_neg[e]) as usize;
                for _ in 0..n_neg {
                    let mut l = rng.random_range(0..n);
                    if l == i {
                        if n < 2 {
                            continue;
                        }
                        l = (l + 1 + rng.random_range(0..n - 1)) % n;
                    }
                    let mut d2 = 0.0;
                    for c in 0..dim {
                        diff[c] = y.get(i, c) - y.get(l, c);
                        d2 += diff[c] * diff[c];
                    }
                    for c in 0..dim {
                        let g = if d2 > 0.0 {
                            let coeff = 2.0 * b / ((REPULSION_EPS + d2) * (1.0 + a * d2.powf(b)));
                            clip(coeff * diff[c])
                        } else {
                            GRAD_CLIP
                        };
                        let yi = y.get(i, c) + g * alpha;
                        y.set(i, c, yi);
                    }
                }
                next_neg[e] += n_neg as f64 * eps_neg[e];
            }
            if y.row(i).iter().chain(y.row(j)).any(|v| !v.is_finite()) {
                return Err(LayoutError::NonFiniteCoordinate { epoch, edge: e / 2 });
            }
        }
        ce_trace.push(probe.edge_cross_entropy(&y, a, b));
        all_pairs_ce_trace.push(probe.cross_entropy(&y, a, b));
    }
    Ok(Layout {
        y,
        config: LayoutConfig {
            a: Some(a),
            b: Some(b),
            n_epochs: Some(n_epochs),
            ..cfg.clone()
        },
        a,
        b,
        epochs_run: n_epochs,
        ce_trace,
        all_pairs_ce_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_default_curve() {
        let (a, b) = fit_ab(0.1, 1.0).unwrap();
        assert!((kernel(0.0, a, b) - 1.0).abs() < 1e-6);
        assert!((a - 1.5769).abs() < 1e-3 && (b - 0.8951).abs() < 1e-3, "a={a} b={b}");
        // no grid point does better than the fit
        let rms = fit_rms(a, b, 0.1, 1.0);
        let mut best = f64::INFINITY;
        for ia in 0..=200 {
            for ib in 0..=200 {
                let (ga, gb) = (1.0 + ia as f64 * 0.005, 0.7 + ib as f64 * 0.002);
                best = best.min(fit_rms(ga, gb, 0.1, 1.0));
            }
        }
        assert!(rms <= best + 1e-9, "fit {rms} grid {best}");
        assert!(rms < 0.02);
    }

    #[test]
    fn fit_a_decreases_with_min_dist() {
        let a: Vec<f64> = [0.01, 0.1, 0.5].iter().map(|&m| fit_ab(m, 1.0).unwrap().0).collect();
        assert!(a[0] > a[1] && a[1] > a[2], "{a:?}");
        assert!(fit_ab(1.0, 1.0).is_err());
    }

    fn path(n: usize) -> FuzzyGraph {
        FuzzyGraph::new(n, (0..n - 1).map(|i| (i, i + 1, 1.0)).collect()).unwrap()
    }

    #[test]
    fn path_graph_fiedler_is_monotone() {
        let init = spectral_init(&path(5), 2, 1, None).unwrap();
        assert_eq!(init.kind, InitKind::Spectral);
        let col: Vec<f64> = (0..5).map(|i| init.y.get(i, 0)).collect();
        // the end pairs tie up to jitter: [1, 1, 0, -1, -1] up to scale
        let inc = col.windows(2).all(|w| w[0] <= w[1] + 1e-3);
        let dec = col.windows(2).all(|w| w[0] >= w[1] - 1e-3);
        assert!(col[2].abs() < 1e-3 && (col[0] + col[4]).abs() < 1e-3 && (col[0] - col[4]).abs() > 1.0);
        assert!(inc || dec, "{col:?}");
        let max = init.y.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((max - 10.0).abs() < 1e-3);
    }

    #[test]
    fn disconnected_graph_falls_back() {
        let mut edges = Vec::new();
        for base in [0, 4] {
            for i in 0..4 {
                for j in i + 1..4 {
                    edges.push((base + i, base + j, 1.0));
                }
            }
        }
        let fg = FuzzyGraph::new(8, edges).unwrap();
        let data = DenseMatrix::from_fn(8, 3, |i, j| (i * 3 + j) as f64 + if i < 4 { 0.0 } else { 10.0 });
        let init = spectral_init(&fg, 2, 3, Some(&data)).unwrap();
        assert_eq!(init.kind, InitKind::Pca);
        assert!(init.fell_back());
        let init = spectral_init(&fg, 2, 3, None).unwrap();
        assert_eq!(init.kind, InitKind::Random);
    }

    #[test]
    fn init_is_deterministic() {
        let fg = path(30);
        assert_eq!(spectral_init(&fg, 2, 7, None).unwrap(), spectral_init(&fg, 2, 7, None).unwrap());
    }

    #[test]
    fn two_points_attract() {
        let fg = FuzzyGraph::new(2, vec![(0, 1, 1.0)]).unwrap();
        let y0 = DenseMatrix::from_rows(&[[-5.0, 0.0], [5.0, 0.0]]);
        let cfg = LayoutConfig {
            n_epochs: Some(200),
            neg_sample_rate: 0,
            ..Default::default()
        };
        let lay = optimize_layout(&y0, &fg, &cfg).unwrap();
        let d = crate::linalg::sq_euclidean(lay.y.row(0), lay.y.row(1)).sqrt();
        assert!(d <= 0.1 + 0.5, "distance {d}");
    }

    #[test]
    fn empty_graph_keeps_coordinates() {
        let fg = FuzzyGraph::new(3, vec![]).unwrap();
        let y0 = DenseMatrix::from_rows(&[[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]]);
        let lay = optimize_layout(&y0, &fg, &LayoutConfig { n_epochs: Some(10), ..Default::default() }).unwrap();
        assert_eq!(lay.y, y0);
    }

    #[test]
    fn ce_is_rigid_motion_invariant() {
        let y = DenseMatrix::from_rows(&[[0.0, 0.0], [1.0, 0.5], [2.0, -1.0], [0.3, 0.7]]);
        let pairs = vec![(0, 1, 0.9), (1, 2, 0.4), (0, 3, 1.0), (2, 3, 0.05)];
        let (c, s) = (0.6f64, 0.8f64);
        let moved = DenseMatrix::from_fn(4, 2, |i, j| {
            let (x0, x1) = (y.get(i, 0), y.get(i, 1));
            if j == 0 {
                c * x0 - s * x1 + 3.0
            } else {
                s * x0 + c * x1 - 2.0
            }
        });
        let a = cross_entropy(&y, &pairs, 1.58, 0.9);
        let b = cross_entropy(&moved, &pairs, 1.58, 0.9);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn small_probe_is_the_exact_objective() {
        // with every pair enumerated the probe equals the direct all-pairs sum
        let fg = FuzzyGraph::new(5, vec![(0, 1, 0.9), (1, 2, 0.4), (0, 3, 1.0), (2, 4, 0.05)]).unwrap();
        let probe = probe_set(&fg, 100, 0);
        assert_eq!((probe.edges.len(), probe.non_edges.len()), (4, 6));
        let y = DenseMatrix::from_rows(&[[0.0, 0.0], [1.0, 0.5], [2.0, -1.0], [0.3, 0.7], [-1.0, 2.0]]);
        let mut direct = 0.0;
        for i in 0..5 {
            for j in i + 1..5 {
                direct += cross_entropy(&y, &[(i, j, fg.weight(i, j).unwrap_or(0.0))], 1.58, 0.9);
            }
        }
        assert!((probe.cross_entropy(&y, 1.58, 0.9) - direct).abs() < 1e-12);

        // sampled probes scale each part to its population
        let big = FuzzyGraph::new(60, (0..59).map(|i| (i, i + 1, 0.5)).collect()).unwrap();
        let probe = probe_set(&big, 20, 3);
        assert_eq!((probe.edges.len(), probe.non_edges.len()), (20, 20));
        assert!((probe.edge_scale - 59.0 / 20.0).abs() < 1e-12);
        assert!((probe.non_edge_scale - (1770.0 - 59.0) / 20.0).abs() < 1e-12);
        assert!(probe.non_edges.iter().all(|&(i, j, w)| i < j && w == 0.0 && big.weight(i, j).is_none()));
        assert_eq!(probe, probe_set(&big, 20, 3));
    }

    #[test]
    fn config_checks() {
        assert!(LayoutConfig { out_dim: 4, ..Default::default() }.validate().is_err());
        assert!(LayoutConfig { a: Some(-1.0), ..Default::default() }.validate().is_err());
        assert_eq!(LayoutConfig::default().epochs_for(10_000), 500);
        assert_eq!(LayoutConfig::default().epochs_for(10_001), 200);
    }
}
