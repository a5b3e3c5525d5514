//! Label-based quality measures for layouts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::linalg::{sq_euclidean, DenseMatrix};
use crate::neighbor_graph::{build_knn, NeighborGraph};

const VOTE_DIST_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("labels are required for this measure")]
    MissingLabels,
    #[error("{labels} labels for {points} points")]
    LengthMismatch { labels: usize, points: usize },
    #[error("k = {k} must be in 1..{n}")]
    BadK { k: usize, n: usize },
    #[error("measure needs at least two classes")]
    SingleClass,
    #[error("class {0} has no members")]
    EmptyClass(u32),
    #[error("class {0} has fewer than two members")]
    ClassTooSmall(u32),
    #[error("sample count must be positive")]
    EmptySample,
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

fn check_labels(y: &DenseMatrix, labels: &[u32]) -> Result<()> {
    if labels.len() != y.rows() {
        return Err(MetricsError::LengthMismatch {
            labels: labels.len(),
            points: y.rows(),
        });
    }
    if labels.is_empty() {
        return Err(MetricsError::MissingLabels);
    }
    Ok(())
}

/// Sorted distinct labels.
pub fn classes(labels: &[u32]) -> Vec<u32> {
    let mut c = labels.to_vec();
    c.sort_unstable();
    c.dedup();
    c
}

fn layout_knn(y: &DenseMatrix, k: usize) -> Result<NeighborGraph> {
    build_knn(y, k).map_err(|_| MetricsError::BadK { k, n: y.rows() })
}

fn check_k(g: &NeighborGraph, k: usize) -> Result<()> {
    if k == 0 || k > g.k() {
        return Err(MetricsError::BadK { k, n: g.n() });
    }
    Ok(())
}

/// Mean fraction of each point's `k` nearest layout neighbors sharing its label.
pub fn neighborhood_hit(y: &DenseMatrix, labels: &[u32], k: usize) -> Result<f64> {
    check_labels(y, labels)?;
    neighborhood_hit_graph(&layout_knn(y, k)?, labels, k)
}

pub fn neighborhood_hit_graph(g: &NeighborGraph, labels: &[u32], k: usize) -> Result<f64> {
    check_k(g, k)?;
    let total: f64 = (0..g.n())
        .map(|i| {
            let hits = g.neighbors(i)[..k].iter().filter(|&&j| labels[j] == labels[i]).count();
            hits as f64 / k as f64
        })
        .sum();
    Ok(total / g.n() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: u32,
    pub name: Option<String>,
    pub count: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnAccuracy {
    pub overall: f64,
    pub per_class: Vec<ClassScore>,
}

/// Leave-one-out inverse-distance-weighted kNN vote; ties go to the lower class id.
pub fn knn_accuracy(y: &DenseMatrix, labels: &[u32], k: usize) -> Result<KnnAccuracy> {
    check_labels(y, labels)?;
    knn_accuracy_graph(&layout_knn(y, k)?, labels, k)
}

pub fn knn_accuracy_graph(g: &NeighborGraph, labels: &[u32], k: usize) -> Result<KnnAccuracy> {
    check_k(g, k)?;
    let cls = classes(labels);
    let mut correct: BTreeMap<u32, (usize, usize)> = cls.iter().map(|&c| (c, (0, 0))).collect();
    let mut votes: BTreeMap<u32, f64> = BTreeMap::new();
    let mut total_correct = 0usize;
    for i in 0..g.n() {
        votes.clear();
        for (&j, &d) in g.neighbors(i)[..k].iter().zip(&g.dists(i)[..k]) {
            *votes.entry(labels[j]).or_insert(0.0) += 1.0 / d.max(VOTE_DIST_FLOOR);
        }
        // BTreeMap iterates by ascending class, so strict > keeps the lower id on ties
        let mut best = (u32::MAX, f64::NEG_INFINITY);
        for (&c, &w) in &votes {
            if w > best.1 {
                best = (c, w);
            }
        }
        let entry = correct.get_mut(&labels[i]).expect("known class");
        entry.1 += 1;
        if best.0 == labels[i] {
            entry.0 += 1;
            total_correct += 1;
        }
    }
    let per_class = correct
        .into_iter()
        .map(|(class, (ok, count))| ClassScore {
            class,
            name: None,
            count,
            accuracy: ok as f64 / count as f64,
        })
        .collect();
    Ok(KnnAccuracy {
        overall: total_correct as f64 / g.n() as f64,
        per_class,
    })
}

/// Per-class centroids, rows in ascending class order.
fn centroids(y: &DenseMatrix, labels: &[u32], cls: &[u32]) -> (DenseMatrix, Vec<usize>) {
    let index: BTreeMap<u32, usize> = cls.iter().enumerate().map(|(p, &c)| (c, p)).collect();
    let mut c = DenseMatrix::zeros(cls.len(), y.cols());
    let mut counts = vec![0usize; cls.len()];
    for (i, &l) in labels.iter().enumerate() {
        let p = index[&l];
        counts[p] += 1;
        for (cv, yv) in c.row_mut(p).iter_mut().zip(y.row(i)) {
            *cv += yv;
        }
    }
    for (p, &n) in counts.iter().enumerate() {
        c.row_mut(p).iter_mut().for_each(|v| *v /= n as f64);
    }
    (c, counts)
}

fn class_positions(labels: &[u32], cls: &[u32]) -> Vec<usize> {
    let index: BTreeMap<u32, usize> = cls.iter().enumerate().map(|(p, &c)| (c, p)).collect();
    labels.iter().map(|l| index[l]).collect()
}

/// Fraction of points whose nearest class centroid (ties to the lower id) is their own.
pub fn distance_consistency(y: &DenseMatrix, labels: &[u32]) -> Result<f64> {
    check_labels(y, labels)?;
    let cls = classes(labels);
    if cls.len() < 2 {
        return Err(MetricsError::SingleClass);
    }
    let (c, _) = centroids(y, labels, &cls);
    let pos = class_positions(labels, &cls);
    let hits = (0..y.rows())
        .filter(|&i| {
            let mut best = (0, f64::INFINITY);
            for p in 0..cls.len() {
                let d = sq_euclidean(y.row(i), c.row(p));
                if d < best.1 {
                    best = (p, d);
                }
            }
            best.0 == pos[i]
        })
        .count();
    Ok(hits as f64 / y.rows() as f64)
}

/// Between- over within-class dispersion, each divided by its degrees of freedom.
pub fn calinski_harabasz(y: &DenseMatrix, labels: &[u32]) -> Result<f64> {
    check_labels(y, labels)?;
    let cls = classes(labels);
    let (n, k) = (y.rows(), cls.len());
    if k < 2 {
        return Err(MetricsError::SingleClass);
    }
    if n <= k {
        return Err(MetricsError::Invalid("need more points than classes".into()));
    }
    let (c, counts) = centroids(y, labels, &cls);
    let mean = y.column_means();
    let between: f64 = (0..k).map(|p| counts[p] as f64 * sq_euclidean(c.row(p), &mean)).sum();
    let pos = class_positions(labels, &cls);
    let within: f64 = (0..n).map(|i| sq_euclidean(y.row(i), c.row(pos[i]))).sum();
    if within == 0.0 {
        return Ok(1.0);
    }
    Ok(between * (n - k) as f64 / (within * (k - 1) as f64))
}

/// Mean over classes of the worst `(s_i + s_j) / d_ij` ratio.
pub fn davies_bouldin(y: &DenseMatrix, labels: &[u32]) -> Result<f64> {
    check_labels(y, labels)?;
    let cls = classes(labels);
    let k = cls.len();
    if k < 2 {
        return Err(MetricsError::SingleClass);
    }
    let (c, counts) = centroids(y, labels, &cls);
    let pos = class_positions(labels, &cls);
    let mut s = vec![0.0; k];
    for i in 0..y.rows() {
        s[pos[i]] += sq_euclidean(y.row(i), c.row(pos[i])).sqrt();
    }
    for p in 0..k {
        s[p] /= counts[p] as f64;
    }
    let mut total = 0.0;
    for p in 0..k {
        let mut worst = 0.0f64;
        for q in 0..k {
            if p == q {
                continue;
            }
            let d = sq_euclidean(c.row(p), c.row(q)).sqrt();
            if d > 0.0 {
                worst = worst.max((s[p] + s[q]) / d);
            }
        }
        total += worst;
    }
    Ok(total / k as f64)
}

/// Lloyd's k-means from k-means++ seeds; best of `restarts` by inertia.
pub fn kmeans(y: &DenseMatrix, k: usize, restarts: usize, seed: u64) -> Result<Vec<u32>> {
    let n = y.rows();
    if k == 0 || k > n {
        return Err(MetricsError::BadK { k, n });
    }
    let runs: Vec<(f64, Vec<u32>)> = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| kmeans_once(y, k, seed.wrapping_add(r as u64)))
        .collect();
    let mut best = 0;
    for (r, run) in runs.iter().enumerate() {
        if run.0 < runs[best].0 {
            best = r;
        }
    }
    Ok(runs.into_iter().nth(best).expect("at least one run").1)
}

fn kmeans_once(y: &DenseMatrix, k: usize, seed: u64) -> (f64, Vec<u32>) {
    let n = y.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = vec![y.row(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_euclidean(y.row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if t < w {
                    chosen = i;
                    break;
                }
                t -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(y.row(pick).to_vec());
        let c = centers.last().expect("pushed");
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_euclidean(y.row(i), c));
        }
    }
    let mut assign = vec![u32::MAX; n];
    for _ in 0..300 {
        let mut changed = false;
        for i in 0..n {
            let mut best = (0u32, f64::INFINITY);
            for (c, ctr) in centers.iter().enumerate() {
                let d = sq_euclidean(y.row(i), ctr);
                if d < best.1 {
                    best = (c as u32, d);
                }
            }
            if assign[i] != best.0 {
                assign[i] = best.0;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; y.cols()]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assign[i] as usize;
            counts[c] += 1;
            sums[c].iter_mut().zip(y.row(i)).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] == 0 {
                // reseed an empty cluster at the point farthest from its center
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_euclidean(y.row(a), &centers[assign[a] as usize]);
                        let db = sq_euclidean(y.row(b), &centers[assign[b] as usize]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .expect("n > 0");
                centers[c] = y.row(far).to_vec();
            } else {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let inertia = (0..n).map(|i| sq_euclidean(y.row(i), &centers[assign[i] as usize])).sum();
    (inertia, assign)
}

/// Label given to DBSCAN noise points.
pub const NOISE: i64 = -1;

/// Density clustering; a point is core when at least `min_pts` points
/// (itself included) lie within `eps`.
pub fn dbscan(y: &DenseMatrix, eps: f64, min_pts: usize) -> Vec<i64> {
    let n = y.rows();
    // sweep along the first coordinate to bound each region query
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y.get(a, 0).total_cmp(&y.get(b, 0)).then(a.cmp(&b)));
    let xs: Vec<f64> = order.iter().map(|&i| y.get(i, 0)).collect();
    let eps2 = eps * eps;
    let region = |i: usize| -> Vec<usize> {
        let x = y.get(i, 0);
        let lo = xs.partition_point(|&v| v < x - eps);
        let hi = xs.partition_point(|&v| v <= x + eps);
        let mut out: Vec<usize> = order[lo..hi]
            .iter()
            .copied()
            .filter(|&j| sq_euclidean(y.row(i), y.row(j)) <= eps2)
            .collect();
        out.sort_unstable();
        out
    };
    let mut label = vec![i64::MIN; n];
    let mut next = 0i64;
    for s in 0..n {
        if label[s] != i64::MIN {
            continue;
        }
        let nb = region(s);
        if nb.len() < min_pts {
            label[s] = NOISE;
            continue;
        }
        label[s] = next;
        let mut queue: std::collections::VecDeque<usize> = nb.into_iter().collect();
        while let Some(p) = queue.pop_front() {
            if label[p] == NOISE {
                label[p] = next;
            }
            if label[p] != i64::MIN {
                continue;
            }
            label[p] = next;
            let nbp = region(p);
            if nbp.len() >= min_pts {
                queue.extend(nbp);
            }
        }
        next += 1;
    }
    label
}

/// Knee of the sorted `min_pts`-distance curve: the point farthest from the
/// chord joining its ends, both axes scaled to `[0, 1]`.
pub fn knee_eps(y: &DenseMatrix, min_pts: usize) -> Result<f64> {
    let g = layout_knn(y, min_pts)?;
    let mut kd: Vec<f64> = (0..g.n()).map(|i| g.dists(i)[min_pts - 1]).collect();
    kd.sort_by(f64::total_cmp);
    Ok(knee_of_sorted(&kd))
}

pub fn knee_of_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 3 {
        return v.last().copied().unwrap_or(0.0);
    }
    let (lo, hi) = (v[0], v[n - 1]);
    let span = hi - lo;
    if span <= 0.0 {
        return hi;
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &val) in v.iter().enumerate() {
        let x = i as f64 / (n - 1) as f64;
        let yv = (val - lo) / span;
        // distance below the chord y = x
        let gap = x - yv;
        if gap > best.1 {
            best = (i, gap);
        }
    }
    v[best.0]
}

struct Contingency {
    n: f64,
    cells: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

fn contingency<A: Ord + Copy, B: Ord + Copy>(u: &[A], v: &[B]) -> Contingency {
    let ui: BTreeMap<A, usize> = {
        let mut s: Vec<A> = u.to_vec();
        s.sort_unstable();
        s.dedup();
        s.into_iter().enumerate().map(|(p, c)| (c, p)).collect()
    };
    let vi: BTreeMap<B, usize> = {
        let mut s: Vec<B> = v.to_vec();
        s.sort_unstable();
        s.dedup();
        s.into_iter().enumerate().map(|(p, c)| (c, p)).collect()
    };
    let (r, c) = (ui.len(), vi.len());
    let mut table = vec![0.0; r * c];
    for (x, y) in u.iter().zip(v) {
        table[ui[x] * c + vi[y]] += 1.0;
    }
    let a = (0..r).map(|i| table[i * c..(i + 1) * c].iter().sum()).collect();
    let b = (0..c).map(|j| (0..r).map(|i| table[i * c + j]).sum()).collect();
    Contingency {
        n: u.len() as f64,
        cells: table,
        a,
        b,
    }
}

fn comb2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

fn entropy(counts: &[f64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / n;
            -p * p.ln()
        })
        .sum()
}

fn mutual_info(t: &Contingency) -> f64 {
    let c = t.b.len();
    let mut mi = 0.0;
    for (idx, &nij) in t.cells.iter().enumerate() {
        if nij > 0.0 {
            let (i, j) = (idx / c, idx % c);
            mi += nij / t.n * (t.n * nij / (t.a[i] * t.b[j])).ln();
        }
    }
    mi.max(0.0)
}

/// Adjusted Rand index.
pub fn adjusted_rand<A: Ord + Copy, B: Ord + Copy>(truth: &[A], pred: &[B]) -> f64 {
    let t = contingency(truth, pred);
    let index: f64 = t.cells.iter().map(|&x| comb2(x)).sum();
    let sa: f64 = t.a.iter().map(|&x| comb2(x)).sum();
    let sb: f64 = t.b.iter().map(|&x| comb2(x)).sum();
    let total = comb2(t.n);
    if total == 0.0 {
        return 1.0;
    }
    let expected = sa * sb / total;
    let max = (sa + sb) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Normalized mutual information with the arithmetic-mean normalizer.
pub fn normalized_mutual_info<A: Ord + Copy, B: Ord + Copy>(truth: &[A], pred: &[B]) -> f64 {
    let t = contingency(truth, pred);
    let (hu, hv) = (entropy(&t.a, t.n), entropy(&t.b, t.n));
    if t.a.len() == t.b.len() && (t.a.len() <= 1 || t.cells.iter().filter(|&&x| x > 0.0).count() == t.a.len()) {
        // identical partitions up to relabeling, including the trivial one
        if t.a.len() <= 1 || hu == hv {
            return 1.0;
        }
    }
    let denom = (hu + hv) / 2.0;
    if denom <= 0.0 {
        return 1.0;
    }
    (mutual_info(&t) / denom).clamp(0.0, 1.0)
}

/// Expected mutual information under the hypergeometric model.
fn expected_mutual_info(t: &Contingency) -> f64 {
    let n = t.n;
    let ln_n_fact = ln_gamma(n + 1.0);
    let mut emi = 0.0;
    for &ai in &t.a {
        for &bj in &t.b {
            let start = (ai + bj - n).max(1.0);
            let end = ai.min(bj);
            let fixed = ln_gamma(ai + 1.0) + ln_gamma(bj + 1.0) + ln_gamma(n - ai + 1.0) + ln_gamma(n - bj + 1.0)
                - ln_n_fact;
            let mut nij = start;
            while nij <= end {
                let term = nij / n * (n * nij / (ai * bj)).ln();
                let lp = fixed
                    - ln_gamma(nij + 1.0)
                    - ln_gamma(ai - nij + 1.0)
                    - ln_gamma(bj - nij + 1.0)
                    - ln_gamma(n - ai - bj + nij + 1.0);
                emi += term * lp.exp();
                nij += 1.0;
            }
        }
    }
    emi
}

/// Adjusted mutual information with the arithmetic-mean normalizer.
pub fn adjusted_mutual_info<A: Ord + Copy, B: Ord + Copy>(truth: &[A], pred: &[B]) -> f64 {
    let t = contingency(truth, pred);
    if (t.a.len() == 1 && t.b.len() == 1) || (t.a.len() == t.n as usize && t.b.len() == t.n as usize) {
        return 1.0;
    }
    let mi = mutual_info(&t);
    let emi = expected_mutual_info(&t);
    let (hu, hv) = (entropy(&t.a, t.n), entropy(&t.b, t.n));
    let mut denom = (hu + hv) / 2.0 - emi;
    let eps = f64::EPSILON;
    denom = if denom < 0.0 { denom.min(-eps) } else { denom.max(eps) };
    (mi - emi) / denom
}

/// Harmonic mean of homogeneity and completeness.
pub fn v_measure<A: Ord + Copy, B: Ord + Copy>(truth: &[A], pred: &[B]) -> f64 {
    let t = contingency(truth, pred);
    let (hc, hk) = (entropy(&t.a, t.n), entropy(&t.b, t.n));
    let mi = mutual_info(&t);
    let h = if hc > 0.0 { mi / hc } else { 1.0 };
    let c = if hk > 0.0 { mi / hk } else { 1.0 };
    if h + c == 0.0 {
        0.0
    } else {
        (2.0 * h * c / (h + c)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub ari: f64,
    pub ami: f64,
    pub nmi: f64,
    pub v_measure: f64,
}

pub fn agreement<B: Ord + Copy>(truth: &[u32], pred: &[B]) -> Agreement {
    Agreement {
        ari: adjusted_rand(truth, pred),
        ami: adjusted_mutual_info(truth, pred),
        nmi: normalized_mutual_info(truth, pred),
        v_measure: v_measure(truth, pred),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterAlgo {
    Kmeans,
    Dbscan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringOutcome {
    pub algo: ClusterAlgo,
    /// `None` when DBSCAN finds at most one cluster.
    pub scores: Option<Agreement>,
    pub n_clusters: usize,
    /// DBSCAN radius, when applicable.
    pub eps: Option<f64>,
    pub noise_points: usize,
}

/// Clusters the layout and scores the result against the labels.
pub fn clustering_agreement(
    y: &DenseMatrix,
    labels: &[u32],
    algo: ClusterAlgo,
    cfg: &MetricsConfig,
) -> Result<ClusteringOutcome> {
    check_labels(y, labels)?;
    match algo {
        ClusterAlgo::Kmeans => {
            let c = classes(labels).len();
            let pred = kmeans(y, c, cfg.kmeans_restarts, cfg.seed)?;
            Ok(ClusteringOutcome {
                algo,
                scores: Some(agreement(labels, &pred)),
                n_clusters: classes(&pred).len(),
                eps: None,
                noise_points: 0,
            })
        }
        ClusterAlgo::Dbscan => {
            let eps = knee_eps(y, cfg.dbscan_min_pts)?;
            let pred = dbscan(y, eps, cfg.dbscan_min_pts);
            let mut ids: Vec<i64> = pred.iter().copied().filter(|&l| l != NOISE).collect();
            ids.sort_unstable();
            ids.dedup();
            let noise_points = pred.iter().filter(|&&l| l == NOISE).count();
            Ok(ClusteringOutcome {
                algo,
                scores: (ids.len() > 1).then(|| agreement(labels, &pred)),
                n_clusters: ids.len(),
                eps: Some(eps),
                noise_points,
            })
        }
    }
}

/// `1 - 2 * mean penalty`, where a mismatched neighbor at rank `r` costs
/// `k - r + 1` out of `sum_r (k - r + 1)`.
pub fn label_trustworthiness(y: &DenseMatrix, labels: &[u32], k: usize) -> Result<f64> {
    check_labels(y, labels)?;
    label_trustworthiness_graph(&layout_knn(y, k)?, labels, k)
}

pub fn label_trustworthiness_graph(g: &NeighborGraph, labels: &[u32], k: usize) -> Result<f64> {
    check_k(g, k)?;
    let norm = (k * (k + 1) / 2) as f64;
    let total: f64 = (0..g.n())
        .map(|i| {
            g.neighbors(i)[..k]
                .iter()
                .enumerate()
                .filter(|(_, &j)| labels[j] != labels[i])
                .map(|(r, _)| (k - r) as f64)
                .sum::<f64>()
                / norm
        })
        .sum();
    Ok(1.0 - 2.0 * total / g.n() as f64)
}

/// Linear-interpolated percentile (`q` in `[0, 100]`) of unsorted values.
pub fn percentile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 1 {
        return values[0];
    }
    let pos = q / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
}

fn median(values: &mut [f64]) -> f64 {
    percentile(values, 50.0)
}

/// Median over class pairs of the max-symmetrized percentile of
/// nearest-other-class distances.
pub fn quantile_hausdorff(y: &DenseMatrix, labels: &[u32], q: f64) -> Result<f64> {
    check_labels(y, labels)?;
    if !(0.0..=100.0).contains(&q) {
        return Err(MetricsError::Invalid(format!("percentile must be in [0, 100], got {q}")));
    }
    let cls = classes(labels);
    let k = cls.len();
    if k < 2 {
        return Err(MetricsError::SingleClass);
    }
    let pos = class_positions(labels, &cls);
    let n = y.rows();
    // nearest[i][c]: distance from i to the closest point of class c
    let nearest: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut best = vec![f64::INFINITY; k];
            for j in 0..n {
                let c = pos[j];
                if c != pos[i] {
                    let d = sq_euclidean(y.row(i), y.row(j));
                    if d < best[c] {
                        best[c] = d;
                    }
                }
            }
            best.into_iter().map(f64::sqrt).collect()
        })
        .collect();
    let mut directed = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in 0..k {
            if a == b {
                continue;
            }
            let mut v: Vec<f64> = (0..n).filter(|&i| pos[i] == a).map(|i| nearest[i][b]).collect();
            directed[a][b] = percentile(&mut v, q);
        }
    }
    let mut pairs = Vec::with_capacity(k * (k - 1) / 2);
    for a in 0..k {
        for b in a + 1..k {
            pairs.push(directed[a][b].max(directed[b][a]));
        }
    }
    Ok(median(&mut pairs))
}

fn members_by_class(labels: &[u32]) -> BTreeMap<u32, Vec<usize>> {
    let mut m: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        m.entry(l).or_default().push(i);
    }
    m
}

/// Fraction of sampled (reference, same-class, other-class) triplets where the
/// same-class point is closer; ties count one half.
pub fn perceptual_2afc(y: &DenseMatrix, labels: &[u32], n_triplets: usize, seed: u64) -> Result<f64> {
    check_labels(y, labels)?;
    let triplets = sample_triplets(labels, n_triplets, seed)?;
    Ok(score_triplets(y, &triplets))
}

/// Uniform reference point, a uniform other member of its class and a
/// uniform point from any other class.
pub fn sample_triplets(labels: &[u32], n_triplets: usize, seed: u64) -> Result<Vec<(usize, usize, usize)>> {
    if n_triplets == 0 {
        return Err(MetricsError::EmptySample);
    }
    let members = members_by_class(labels);
    if members.len() < 2 {
        return Err(MetricsError::SingleClass);
    }
    if let Some((&c, _)) = members.iter().find(|(_, m)| m.len() < 2) {
        return Err(MetricsError::ClassTooSmall(c));
    }
    let n = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_triplets);
    for _ in 0..n_triplets {
        let r = rng.random_range(0..n);
        let same_pool = &members[&labels[r]];
        let mut s = same_pool[rng.random_range(0..same_pool.len() - 1)];
        if s == r {
            s = same_pool[same_pool.len() - 1];
        }
        let mut t = rng.random_range(0..n - same_pool.len());
        // map t to the t-th point outside r's class
        let mut d = usize::MAX;
        for (&c, m) in &members {
            if c == labels[r] {
                continue;
            }
            if t < m.len() {
                d = m[t];
                break;
            }
            t -= m.len();
        }
        out.push((r, s, d));
    }
    Ok(out)
}

/// Fraction of `(reference, same, different)` triplets with the same-class
/// point strictly closer; ties count one half.
pub fn score_triplets(y: &DenseMatrix, triplets: &[(usize, usize, usize)]) -> f64 {
    let score: f64 = triplets
        .iter()
        .map(|&(r, s, d)| {
            let ds = sq_euclidean(y.row(r), y.row(s));
            let dd = sq_euclidean(y.row(r), y.row(d));
            if ds < dd {
                1.0
            } else if ds == dd {
                0.5
            } else {
                0.0
            }
        })
        .sum();
    score / triplets.len() as f64
}

/// ROC AUC by the rank formula with averaged tie ranks.
pub fn auc_from_scores(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            if positive[o] {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// AUC of negative distance as a same-class detector over sampled pairs.
pub fn perceptual_auc(y: &DenseMatrix, labels: &[u32], n_pairs: usize, seed: u64) -> Result<f64> {
    check_labels(y, labels)?;
    if n_pairs == 0 {
        return Err(MetricsError::EmptySample);
    }
    let members = members_by_class(labels);
    if members.len() < 2 {
        return Err(MetricsError::SingleClass);
    }
    if let Some((&c, _)) = members.iter().find(|(_, m)| m.len() < 2) {
        return Err(MetricsError::ClassTooSmall(c));
    }
    let (scores, positive) = sample_pairs(y, labels, n_pairs, seed);
    auc_from_scores(&scores, &positive)
        .ok_or_else(|| MetricsError::Invalid("sampled pairs are all of one kind; raise n_pairs".into()))
}

/// Uniform pairs `i != j`: negative distances and same-class flags.
pub fn sample_pairs(y: &DenseMatrix, labels: &[u32], n_pairs: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let n = y.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = Vec::with_capacity(n_pairs);
    let mut positive = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        scores.push(-sq_euclidean(y.row(i), y.row(j)).sqrt());
        positive.push(labels[i] == labels[j]);
    }
    (scores, positive)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub neighborhood_hit_k: usize,
    pub knn_k: usize,
    pub trustworthiness_k: usize,
    pub hausdorff_percentile: f64,
    pub n_triplets: usize,
    pub n_pairs: usize,
    pub kmeans_restarts: usize,
    pub dbscan_min_pts: usize,
    pub seed: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            neighborhood_hit_k: 15,
            knn_k: 10,
            trustworthiness_k: 15,
            hausdorff_percentile: 5.0,
            n_triplets: 50_000,
            n_pairs: 50_000,
            kmeans_restarts: 10,
            dbscan_min_pts: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureRow {
    pub group: String,
    pub name: String,
    pub key: String,
    pub value: Option<f64>,
    pub higher_is_better: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MeasureRow>,
    pub per_class_knn: Vec<ClassScore>,
    pub kmeans: ClusteringOutcome,
    pub dbscan: ClusteringOutcome,
    pub config: MetricsConfig,
    /// Free-form provenance, e.g. optimizer settings of the run.
    pub provenance: BTreeMap<String, String>,
}

/// Keys of the measures every report carries, in table order.
pub const MEASURE_KEYS: [&str; 17] = [
    "neighborhood_hit",
    "knn_accuracy",
    "distance_consistency",
    "calinski_harabasz",
    "davies_bouldin",
    "kmeans_ari",
    "kmeans_ami",
    "kmeans_nmi",
    "kmeans_v_measure",
    "dbscan_ari",
    "dbscan_ami",
    "dbscan_nmi",
    "dbscan_v_measure",
    "label_trustworthiness",
    "hausdorff",
    "two_afc",
    "pairwise_auc",
];

/// Measures whose value must lie in `[0, 1]`.
const UNIT_BOUNDED: [&str; 9] = [
    "neighborhood_hit",
    "knn_accuracy",
    "distance_consistency",
    "kmeans_nmi",
    "kmeans_v_measure",
    "dbscan_nmi",
    "dbscan_v_measure",
    "two_afc",
    "pairwise_auc",
];

impl MetricsReport {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.key == key).and_then(|r| r.value)
    }

    pub fn class_accuracy(&self, name_or_id: &str) -> Option<f64> {
        self.per_class_knn
            .iter()
            .find(|c| c.name.as_deref() == Some(name_or_id) || c.class.to_string() == name_or_id)
            .map(|c| c.accuracy)
    }

    /// Checks finiteness and the `[0, 1]` range of bounded measures.
    pub fn validate(&self) -> Result<()> {
        for r in &self.rows {
            if let Some(v) = r.value {
                if !v.is_finite() {
                    return Err(MetricsError::Invalid(format!("{} is not finite", r.key)));
                }
                if UNIT_BOUNDED.contains(&r.key.as_str()) && !(0.0..=1.0).contains(&v) {
                    return Err(MetricsError::Invalid(format!("{} = {v} outside [0, 1]", r.key)));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| MetricsError::Invalid(e.to_string()))
    }

    /// Markdown tables: one row per measure grouped like the summary table,
    /// then per-class kNN accuracy.
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        s.push_str("| Group | Measure | Value |\n|---|---|---:|\n");
        for r in &self.rows {
            let arrow = if r.higher_is_better { "↑" } else { "↓" };
            let v = r.value.map_or("-".to_string(), |v| format!("{v:.3}"));
            let _ = writeln!(s, "| {} | {} {} | {} |", r.group, r.name, arrow, v);
        }
        s.push_str("\n| Class | Count | kNN accuracy |\n|---|---:|---:|\n");
        for c in &self.per_class_knn {
            let name = c.name.clone().unwrap_or_else(|| c.class.to_string());
            let _ = writeln!(s, "| {} | {} | {:.3} |", name, c.count, c.accuracy);
        }
        s
    }
}

/// Runs every measure on a layout.
pub fn full_report(
    y: &DenseMatrix,
    labels: &[u32],
    label_names: Option<&BTreeMap<u32, String>>,
    cfg: &MetricsConfig,
) -> Result<MetricsReport> {
    check_labels(y, labels)?;
    let mut rows = Vec::with_capacity(17);
    let mut push = |group: &str, name: &str, key: &str, value: Option<f64>, hib: bool, secs: f64| {
        rows.push(MeasureRow {
            group: group.into(),
            name: name.into(),
            key: key.into(),
            value,
            higher_is_better: hib,
            seconds: secs,
        });
    };
    let kmax = cfg.neighborhood_hit_k.max(cfg.knn_k).max(cfg.trustworthiness_k);
    let t = Instant::now();
    let g = layout_knn(y, kmax)?;
    let knn_secs = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let nh = neighborhood_hit_graph(&g, labels, cfg.neighborhood_hit_k)?;
    push("Local", "Neighborhood hit", "neighborhood_hit", Some(nh), true, knn_secs + t.elapsed().as_secs_f64());
    let t = Instant::now();
    let mut acc = knn_accuracy_graph(&g, labels, cfg.knn_k)?;
    if let Some(names) = label_names {
        for c in &mut acc.per_class {
            c.name = names.get(&c.class).cloned();
        }
    }
    push("Local", "kNN classification accuracy", "knn_accuracy", Some(acc.overall), true, t.elapsed().as_secs_f64());
    let t = Instant::now();
    let dsc = distance_consistency(y, labels)?;
    push("Local", "Distance consistency", "distance_consistency", Some(dsc), true, t.elapsed().as_secs_f64());
    let t = Instant::now();
    let ch = calinski_harabasz(y, labels)?;
    push("Global", "Calinski-Harabasz", "calinski_harabasz", Some(ch), true, t.elapsed().as_secs_f64());
    let t = Instant::now();
    let db = davies_bouldin(y, labels)?;
    push("Global", "Davies-Bouldin", "davies_bouldin", Some(db), false, t.elapsed().as_secs_f64());

    let mut outcomes = Vec::with_capacity(2);
    for (algo, group, prefix) in [
        (ClusterAlgo::Kmeans, "Clustering (k-means)", "kmeans"),
        (ClusterAlgo::Dbscan, "Clustering (DBSCAN)", "dbscan"),
    ] {
        let t = Instant::now();
        let out = clustering_agreement(y, labels, algo, cfg)?;
        let secs = t.elapsed().as_secs_f64() / 4.0;
        let s = out.scores;
        push(group, "ARI", &format!("{prefix}_ari"), s.map(|a| a.ari), true, secs);
        push(group, "AMI", &format!("{prefix}_ami"), s.map(|a| a.ami), true, secs);
        push(group, "NMI", &format!("{prefix}_nmi"), s.map(|a| a.nmi), true, secs);
        push(group, "V-measure", &format!("{prefix}_v_measure"), s.map(|a| a.v_measure), true, secs);
        outcomes.push(out);
    }
    let t = Instant::now();
    let lt = label_trustworthiness_graph(&g, labels, cfg.trustworthiness_k)?;
    push("Boundary", "Label trustworthiness", "label_trustworthiness", Some(lt), true, t.elapsed().as_secs_f64());
    let t = Instant::now();
    let hd = quantile_hausdorff(y, labels, cfg.hausdorff_percentile)?;
    push("Boundary", "Hausdorff distance", "hausdorff", Some(hd), true, t.elapsed().as_secs_f64());
    let t = Instant::now();
    let afc = perceptual_2afc(y, labels, cfg.n_triplets, cfg.seed)?;
    push("Perceptual", "2AFC accuracy", "two_afc", Some(afc), true, t.elapsed().as_secs_f64());
    let t = Instant::now();
    let auc = perceptual_auc(y, labels, cfg.n_pairs, cfg.seed)?;
    push("Perceptual", "Pairwise AUC", "pairwise_auc", Some(auc), true, t.elapsed().as_secs_f64());

    let dbscan_out = outcomes.pop().expect("two outcomes");
    let kmeans_out = outcomes.pop().expect("two outcomes");
    let report = MetricsReport {
        rows,
        per_class_knn: acc.per_class,
        kmeans: kmeans_out,
        dbscan: dbscan_out,
        config: cfg.clone(),
        provenance: BTreeMap::new(),
    };
    report.validate()?;
    Ok(report)
}
