//! Brute-force reference implementations shared by the integration tests.
//! Each one favors the most literal formula over speed.

#![allow(dead_code)]

pub mod props;

use maple::linalg::DenseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut r = rng(seed);
    DenseMatrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0))
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// kNN by sorting every other point by (distance, index).
pub fn knn_oracle(z: &DenseMatrix, k: usize) -> Vec<Vec<usize>> {
    (0..z.rows())
        .map(|i| {
            let mut all: Vec<(f64, usize)> = (0..z.rows())
                .filter(|&j| j != i)
                .map(|j| {
                    let d: f64 = z.row(i).iter().zip(z.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                    (d, j)
                })
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            all.into_iter().take(k).map(|p| p.1).collect()
        })
        .collect()
}

/// ARI by enumerating every unordered pair of points.
pub fn ari_pairs(u: &[u32], v: &[u32]) -> f64 {
    let n = u.len();
    let (mut a, mut b, mut c, mut d) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..n {
        for j in i + 1..n {
            match (u[i] == u[j], v[i] == v[j]) {
                (true, true) => a += 1.0,
                (true, false) => b += 1.0,
                (false, true) => c += 1.0,
                (false, false) => d += 1.0,
            }
        }
    }
    let total = a + b + c + d;
    let expected = (a + b) * (a + c) / total;
    let max = ((a + b) + (a + c)) / 2.0;
    if max == expected {
        return 1.0;
    }
    (a - expected) / (max - expected)
}

fn counts(u: &[u32]) -> std::collections::BTreeMap<u32, f64> {
    let mut m = std::collections::BTreeMap::new();
    for &x in u {
        *m.entry(x).or_insert(0.0) += 1.0;
    }
    m
}

pub fn entropy(u: &[u32]) -> f64 {
    let n = u.len() as f64;
    counts(u).values().map(|&c| -(c / n) * (c / n).ln()).sum()
}

pub fn mutual_info(u: &[u32], v: &[u32]) -> f64 {
    let n = u.len() as f64;
    let cu = counts(u);
    let cv = counts(v);
    let mut mi = 0.0;
    for (&a, &na) in &cu {
        for (&b, &nb) in &cv {
            let nab = u.iter().zip(v).filter(|(x, y)| **x == a && **y == b).count() as f64;
            if nab > 0.0 {
                mi += nab / n * (n * nab / (na * nb)).ln();
            }
        }
    }
    mi
}

pub fn nmi(u: &[u32], v: &[u32]) -> f64 {
    let (hu, hv) = (entropy(u), entropy(v));
    if hu == 0.0 && hv == 0.0 {
        return 1.0;
    }
    mutual_info(u, v) / ((hu + hv) / 2.0)
}

/// Homogeneity and completeness from conditional entropies.
pub fn v_measure(truth: &[u32], pred: &[u32]) -> f64 {
    let n = truth.len() as f64;
    let cond = |a: &[u32], b: &[u32]| -> f64 {
        // H(a | b)
        let cb = counts(b);
        let mut h = 0.0;
        for (&bv, &nb) in &cb {
            let sub: Vec<u32> = a.iter().zip(b).filter(|(_, y)| **y == bv).map(|(x, _)| *x).collect();
            h += nb / n * entropy(&sub);
        }
        h
    };
    let (hc, hk) = (entropy(truth), entropy(pred));
    let h = if hc == 0.0 { 1.0 } else { 1.0 - cond(truth, pred) / hc };
    let c = if hk == 0.0 { 1.0 } else { 1.0 - cond(pred, truth) / hk };
    if h + c == 0.0 {
        0.0
    } else {
        2.0 * h * c / (h + c)
    }
}

fn log_choose(n: f64, k: f64) -> f64 {
    (1..=k as u64).map(|i| ((n - k + i as f64) / i as f64).ln()).sum()
}

/// Expected mutual information by summing the hypergeometric pmf term by term.
pub fn emi(u: &[u32], v: &[u32]) -> f64 {
    let n = u.len() as f64;
    let cu = counts(u);
    let cv = counts(v);
    let mut e = 0.0;
    for &a in cu.values() {
        for &b in cv.values() {
            let lo = (a + b - n).max(1.0) as u64;
            let hi = a.min(b) as u64;
            for nij in lo..=hi {
                let nij = nij as f64;
                // P(n_ij) = C(a, n_ij) C(n - a, b - n_ij) / C(n, b)
                let lp = log_choose(a, nij) + log_choose(n - a, b - nij) - log_choose(n, b);
                e += nij / n * (n * nij / (a * b)).ln() * lp.exp();
            }
        }
    }
    e
}

pub fn ami(u: &[u32], v: &[u32]) -> f64 {
    let e = emi(u, v);
    let denom = (entropy(u) + entropy(v)) / 2.0 - e;
    (mutual_info(u, v) - e) / denom
}

/// AUC as the fraction of positive-negative pairs ranked correctly, ties half.
pub fn auc_pairs(scores: &[f64], positive: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &pi) in positive.iter().enumerate() {
        if !pi {
            continue;
        }
        for (j, &pj) in positive.iter().enumerate() {
            if pj {
                continue;
            }
            den += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / den
}

/// Central finite difference of `f` at `x` along coordinate `i`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += h;
    let mut xm = x.to_vec();
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// Labels with `classes` values in round-robin order, then shuffled.
pub fn random_labels(n: usize, classes: u32, seed: u64) -> Vec<u32> {
    let mut r = rng(seed);
    let mut l: Vec<u32> = (0..n).map(|i| i as u32 % classes).collect();
    for i in (1..n).rev() {
        let j = r.random_range(0..=i);
        l.swap(i, j);
    }
    l
}
