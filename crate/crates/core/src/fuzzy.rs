//! Fuzzy edge weights on a kNN graph: temperature softmax for learned
//! embeddings, smooth-kNN weights for the input-space baseline, and the
//! probabilistic-or symmetrization shared by both.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{sq_euclidean, DenseMatrix};
use crate::neighbor_graph::NeighborGraph;

/// Symmetrized weights below this are dropped.
pub const MIN_EDGE_WEIGHT: f64 = 1e-8;
pub const DEFAULT_TAU: f64 = 0.3;

const SIGMA_MAX_ITER: usize = 64;
const SIGMA_TOL: f64 = 1e-5;
const MIN_SIGMA_SCALE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FuzzyError {
    #[error("softmax temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("weight {w} on edge ({i}, {j}) is outside [0, 1]")]
    WeightOutOfRange { i: usize, j: usize, w: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid fuzzy graph: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, FuzzyError>;

/// Outgoing weights over each node's k graph neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedWeights {
    pub n: usize,
    pub k: usize,
    pub targets: Vec<usize>,
    pub weights: Vec<f64>,
}

impl DirectedWeights {
    pub fn targets(&self, i: usize) -> &[usize] {
        &self.targets[i * self.k..(i + 1) * self.k]
    }

    pub fn weights(&self, i: usize) -> &[f64] {
        &self.weights[i * self.k..(i + 1) * self.k]
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.weights(i).iter().sum()
    }
}

/// How reciprocal directed weights merge into one undirected weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Symmetrization {
    /// `a + b - ab`.
    #[default]
    ProbabilisticOr,
    /// No symmetrization: a pair keeps the larger of its directed weights.
    None,
}

/// Undirected weighted graph, one record per pair with `i < j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyGraph {
    pub n_nodes: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

impl FuzzyGraph {
    pub fn new(n_nodes: usize, mut edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        edges.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let g = Self { n_nodes, edges };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for (pos, &(i, j, w)) in self.edges.iter().enumerate() {
            if i >= j || j >= self.n_nodes {
                return Err(FuzzyError::Invalid(format!("edge ({i}, {j}) is not an ordered pair of nodes")));
            }
            if !(w > 0.0 && w <= 1.0) {
                return Err(FuzzyError::WeightOutOfRange { i, j, w });
            }
            if pos > 0 {
                let (pi, pj, _) = self.edges[pos - 1];
                if (pi, pj) >= (i, j) {
                    return Err(FuzzyError::Invalid(format!("edge ({i}, {j}) duplicated or unsorted")));
                }
            }
        }
        Ok(())
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Sum of incident weights per node.
    pub fn degrees(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n_nodes];
        for &(i, j, w) in &self.edges {
            d[i] += w;
            d[j] += w;
        }
        d
    }

    /// Adjacency lists `(neighbor, weight)` in both directions.
    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.n_nodes];
        for &(i, j, w) in &self.edges {
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
        adj
    }

    /// Connected-component id per node, numbered in order of first node.
    pub fn components(&self) -> Vec<usize> {
        let adj = self.adjacency();
        let mut comp = vec![usize::MAX; self.n_nodes];
        let mut next = 0;
        let mut stack = Vec::new();
        for s in 0..self.n_nodes {
            if comp[s] != usize::MAX {
                continue;
            }
            comp[s] = next;
            stack.push(s);
            while let Some(u) = stack.pop() {
                for &(v, _) in &adj[u] {
                    if comp[v] == usize::MAX {
                        comp[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        comp
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        let key = (i.min(j), i.max(j));
        self.edges
            .binary_search_by(|e| (e.0, e.1).cmp(&key))
            .ok()
            .map(|p| self.edges[p].2)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("fuzzy graph serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let g: Self = serde_json::from_str(s).map_err(|e| FuzzyError::Invalid(e.to_string()))?;
        g.validate()?;
        Ok(g)
    }
}

/// `w_ij = exp(-d_ij / tau) / sum_l exp(-d_il / tau)` over each node's neighbors,
/// with `d` recomputed from `z`.
pub fn softmax_weights(z: &DenseMatrix, g: &NeighborGraph, tau: f64) -> Result<DirectedWeights> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(FuzzyError::NonPositiveTemperature(tau));
    }
    if z.rows() != g.n() {
        return Err(FuzzyError::ShapeMismatch(format!(
            "embedding has {} rows, graph has {} nodes",
            z.rows(),
            g.n()
        )));
    }
    let k = g.k();
    let weights: Vec<f64> = (0..g.n())
        .into_par_iter()
        .flat_map_iter(|i| {
            let d: Vec<f64> = g
                .neighbors(i)
                .iter()
                .map(|&j| sq_euclidean(z.row(i), z.row(j)).sqrt())
                .collect();
            let dmin = d.iter().copied().fold(f64::INFINITY, f64::min);
            let e: Vec<f64> = d.iter().map(|v| (-(v - dmin) / tau).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(move |v| v / s)
        })
        .collect();
    let targets = (0..g.n()).flat_map(|i| g.neighbors(i).iter().copied()).collect();
    Ok(DirectedWeights {
        n: g.n(),
        k,
        targets,
        weights,
    })
}

/// Per-pair merge `a + b - ab`. Ordering the arguments makes swaps exact and
/// keeps 0 as an exact identity and 1 as an exact absorbing value.
#[inline]
pub fn fuzzy_union(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + lo * (1.0 - hi)
}

/// Merges reciprocal directed weights into an undirected graph.
pub fn symmetrize(dw: &DirectedWeights) -> Result<FuzzyGraph> {
    symmetrize_with(dw, Symmetrization::ProbabilisticOr)
}

pub fn symmetrize_with(dw: &DirectedWeights, mode: Symmetrization) -> Result<FuzzyGraph> {
    // (lo, hi, weight from lo, weight from hi)
    let mut recs: Vec<(usize, usize, f64, f64)> = Vec::with_capacity(dw.n * dw.k);
    for i in 0..dw.n {
        for (&j, &w) in dw.targets(i).iter().zip(dw.weights(i)) {
            if !(0.0..=1.0).contains(&w) {
                return Err(FuzzyError::WeightOutOfRange { i, j, w });
            }
            if i == j || j >= dw.n {
                return Err(FuzzyError::Invalid(format!("directed edge ({i}, {j}) is not valid")));
            }
            if i < j {
                recs.push((i, j, w, 0.0));
            } else {
                recs.push((j, i, 0.0, w));
            }
        }
    }
    recs.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let mut edges = Vec::with_capacity(recs.len());
    let mut pos = 0;
    while pos < recs.len() {
        let (i, j) = (recs[pos].0, recs[pos].1);
        let (mut a, mut b) = (0.0f64, 0.0f64);
        while pos < recs.len() && recs[pos].0 == i && recs[pos].1 == j {
            a = a.max(recs[pos].2);
            b = b.max(recs[pos].3);
            pos += 1;
        }
        let w = match mode {
            Symmetrization::ProbabilisticOr => fuzzy_union(a, b),
            Symmetrization::None => a.max(b),
        };
        if w >= MIN_EDGE_WEIGHT {
            edges.push((i, j, w.min(1.0)));
        }
    }
    Ok(FuzzyGraph {
        n_nodes: dw.n,
        edges,
    })
}

/// Per-node offset and bandwidth of the smooth-kNN weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalScale {
    pub rho: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Nodes whose sigma sits at the lower clamp.
    pub clamped: Vec<usize>,
    /// Nodes where the search did not converge and sigma fell back to the
    /// mean neighbor distance.
    pub fallbacks: Vec<usize>,
}

enum SigmaFit {
    Solved(f64),
    Clamped(f64),
    Fallback(f64),
}

fn solve_sigma(dists: &[f64], rho: f64, target: f64, floor: f64, mean: f64) -> SigmaFit {
    let psum = |sigma: f64| -> f64 { dists.iter().map(|d| (-(d - rho).max(0.0) / sigma).exp()).sum() };
    // sum at sigma -> 0+ counts the distances not beyond rho
    let at_zero = dists.iter().filter(|&&d| d <= rho).count() as f64;
    if at_zero >= target {
        return SigmaFit::Clamped(floor);
    }
    let (mut lo, mut hi, mut mid) = (0.0f64, f64::INFINITY, 1.0f64);
    for _ in 0..SIGMA_MAX_ITER {
        let s = psum(mid);
        if (s - target).abs() < SIGMA_TOL {
            break;
        }
        if s > target {
            hi = mid;
            mid = (lo + hi) / 2.0;
        } else {
            lo = mid;
            mid = if hi.is_infinite() { mid * 2.0 } else { (lo + hi) / 2.0 };
        }
    }
    if !mid.is_finite() || (hi.is_infinite() && (psum(mid) - target).abs() >= SIGMA_TOL) {
        return SigmaFit::Fallback(mean.max(floor));
    }
    if mid < floor {
        SigmaFit::Clamped(floor)
    } else {
        SigmaFit::Solved(mid)
    }
}

/// `rho_i` = smallest positive neighbor distance; `sigma_i` solves
/// `sum_j exp(-max(0, d_ij - rho_i) / sigma_i) = log2(k)`.
pub fn umap_local_scales(g: &NeighborGraph) -> LocalScale {
    let k = g.k();
    let target = (k as f64).log2();
    let global_mean = {
        let n = (g.n() * k).max(1) as f64;
        (0..g.n()).map(|i| g.dists(i).iter().sum::<f64>()).sum::<f64>() / n
    };
    let fits: Vec<(f64, SigmaFit)> = (0..g.n())
        .into_par_iter()
        .map(|i| {
            let d = g.dists(i);
            let rho = d.iter().copied().find(|&v| v > 0.0).unwrap_or(0.0);
            let mean = d.iter().sum::<f64>() / k as f64;
            let base = if rho > 0.0 && mean > 0.0 { mean } else { global_mean };
            let floor = (MIN_SIGMA_SCALE * base).max(f64::MIN_POSITIVE);
            (rho, solve_sigma(d, rho, target, floor, mean))
        })
        .collect();
    let mut out = LocalScale {
        rho: Vec::with_capacity(g.n()),
        sigma: Vec::with_capacity(g.n()),
        clamped: Vec::new(),
        fallbacks: Vec::new(),
    };
    for (i, (rho, fit)) in fits.into_iter().enumerate() {
        out.rho.push(rho);
        out.sigma.push(match fit {
            SigmaFit::Solved(s) => s,
            SigmaFit::Clamped(s) => {
                out.clamped.push(i);
                s
            }
            SigmaFit::Fallback(s) => {
                out.fallbacks.push(i);
                s
            }
        });
    }
    if !out.fallbacks.is_empty() {
        log::warn!(
            "bandwidth search did not converge for {} nodes; using mean neighbor distance",
            out.fallbacks.len()
        );
    }
    out
}

/// `w_ij = exp(-max(0, d_ij - rho_i) / sigma_i)`.
pub fn umap_weights(g: &NeighborGraph, s: &LocalScale) -> Result<DirectedWeights> {
    if s.rho.len() != g.n() || s.sigma.len() != g.n() {
        return Err(FuzzyError::ShapeMismatch(format!(
            "scales cover {} nodes, graph has {}",
            s.rho.len(),
            g.n()
        )));
    }
    let mut weights = Vec::with_capacity(g.n() * g.k());
    for i in 0..g.n() {
        for &d in g.dists(i) {
            weights.push((-(d - s.rho[i]).max(0.0) / s.sigma[i]).exp());
        }
    }
    let targets = (0..g.n()).flat_map(|i| g.neighbors(i).iter().copied()).collect();
    Ok(DirectedWeights {
        n: g.n(),
        k: g.k(),
        targets,
        weights,
    })
}
