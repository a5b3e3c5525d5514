//! Exact k-nearest-neighbor graphs under the L2 metric.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{gemm, sq_euclidean, DenseMatrix};

/// Query rows per distance block.
const BLOCK: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("k = {k} must be smaller than the number of points ({n})")]
    KTooLarge { k: usize, n: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("index {index} out of range for {n} points")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("refresh interval must be at least 1")]
    ZeroInterval,
    #[error("invalid graph: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Per-node neighbor lists sorted by ascending distance (ties by index).
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    k: usize,
    n: usize,
    neighbors: Vec<usize>,
    dists: Vec<f64>,
    pub built_at_epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    k: usize,
    #[serde(default)]
    built_at_epoch: usize,
    neighbors: Vec<Vec<usize>>,
    dists: Vec<Vec<f64>>,
}

impl NeighborGraph {
    /// Builds a graph from explicit lists, checking the structural invariants.
    pub fn from_lists(k: usize, neighbors: Vec<Vec<usize>>, dists: Vec<Vec<f64>>) -> Result<Self> {
        let n = neighbors.len();
        if dists.len() != n {
            return Err(GraphError::Invalid("neighbors/dists length mismatch".into()));
        }
        let mut flat_n = Vec::with_capacity(n * k);
        let mut flat_d = Vec::with_capacity(n * k);
        for (i, (nb, ds)) in neighbors.iter().zip(&dists).enumerate() {
            if nb.len() != k || ds.len() != k {
                return Err(GraphError::Invalid(format!("node {i} does not have {k} neighbors")));
            }
            flat_n.extend_from_slice(nb);
            flat_d.extend_from_slice(ds);
        }
        let g = Self {
            k,
            n,
            neighbors: flat_n,
            dists: flat_d,
            built_at_epoch: 0,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..self.n {
            let nb = self.neighbors(i);
            let ds = self.dists(i);
            for (pos, &j) in nb.iter().enumerate() {
                if j >= self.n {
                    return Err(GraphError::IndexOutOfRange { index: j, n: self.n });
                }
                if j == i {
                    return Err(GraphError::Invalid(format!("node {i} lists itself")));
                }
                if nb[..pos].contains(&j) {
                    return Err(GraphError::Invalid(format!("node {i} lists {j} twice")));
                }
            }
            if ds.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) || ds.windows(2).any(|w| w[0] > w[1]) {
                return Err(GraphError::Invalid(format!("node {i} has unsorted or negative distances")));
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    #[inline]
    pub fn dists(&self, i: usize) -> &[f64] {
        &self.dists[i * self.k..(i + 1) * self.k]
    }

    /// `{i}` followed by its neighbors.
    pub fn neighborhood(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(i).chain(self.neighbors(i).iter().copied())
    }

    /// Directed edges whose endpoints carry different labels.
    pub fn cross_label_edges(&self, labels: &[u32]) -> usize {
        (0..self.n)
            .map(|i| {
                self.neighbors(i)
                    .iter()
                    .filter(|&&j| labels[j] != labels[i])
                    .count()
            })
            .sum()
    }

    pub fn to_json(&self) -> String {
        let g = GraphJson {
            k: self.k,
            built_at_epoch: self.built_at_epoch,
            neighbors: (0..self.n).map(|i| self.neighbors(i).to_vec()).collect(),
            dists: (0..self.n).map(|i| self.dists(i).to_vec()).collect(),
        };
        serde_json::to_string(&g).expect("graph serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let g: GraphJson = serde_json::from_str(s).map_err(|e| GraphError::Invalid(e.to_string()))?;
        let mut out = Self::from_lists(g.k, g.neighbors, g.dists)?;
        out.built_at_epoch = g.built_at_epoch;
        Ok(out)
    }
}

/// Exact kNN by blocked distance scans. Candidate distances come from the
/// `|a|^2 + |b|^2 - 2ab` expansion; everything within a rounding margin of the
/// k-th candidate is re-ranked with directly computed distances.
pub fn build_knn(z: &DenseMatrix, k: usize) -> Result<NeighborGraph> {
    let n = z.rows();
    if k == 0 {
        return Err(GraphError::ZeroK);
    }
    if k >= n {
        return Err(GraphError::KTooLarge { k, n });
    }
    let sq_norms: Vec<f64> = z.rows_iter().map(|r| r.iter().map(|v| v * v).sum()).collect();
    let max_norm = sq_norms.iter().copied().fold(0.0, f64::max);
    let blocks: Vec<(usize, usize)> = (0..n)
        .step_by(BLOCK)
        .map(|s| (s, (s + BLOCK).min(n)))
        .collect();

    let per_block: Vec<(Vec<usize>, Vec<f64>)> = blocks
        .par_iter()
        .map(|&(s, e)| {
            let idx: Vec<usize> = (s..e).collect();
            let q = z.select_rows(&idx);
            let mut g = DenseMatrix::zeros(e - s, n);
            gemm(1.0, &q, false, z, true, 0.0, &mut g).expect("knn shapes");
            let mut nbrs = Vec::with_capacity((e - s) * k);
            let mut dists = Vec::with_capacity((e - s) * k);
            let mut approx: Vec<(f64, usize)> = Vec::with_capacity(n);
            for (qi, i) in (s..e).enumerate() {
                approx.clear();
                let grow = g.row(qi);
                approx.extend(
                    (0..n)
                        .filter(|&j| j != i)
                        .map(|j| ((sq_norms[i] + sq_norms[j] - 2.0 * grow[j]).max(0.0), j)),
                );
                approx.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0));
                let kth = approx[..k].iter().map(|a| a.0).fold(f64::NEG_INFINITY, f64::max);
                let margin = 1e-9 * (sq_norms[i] + max_norm) + 1e-300;
                let mut exact: Vec<(f64, usize)> = approx
                    .iter()
                    .filter(|a| a.0 <= kth + margin)
                    .map(|&(_, j)| (sq_euclidean(z.row(i), z.row(j)), j))
                    .collect();
                exact.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                for &(d, j) in &exact[..k] {
                    nbrs.push(j);
                    dists.push(d.sqrt());
                }
            }
            (nbrs, dists)
        })
        .collect();

    let mut neighbors = Vec::with_capacity(n * k);
    let mut dists = Vec::with_capacity(n * k);
    for (nb, ds) in per_block {
        neighbors.extend(nb);
        dists.extend(ds);
    }
    Ok(NeighborGraph {
        k,
        n,
        neighbors,
        dists,
        built_at_epoch: 0,
    })
}

/// True on epochs at which the tentative graph is rebuilt.
pub fn should_refresh(epoch: usize, interval: usize) -> Result<bool> {
    if interval == 0 {
        return Err(GraphError::ZeroInterval);
    }
    Ok(epoch % interval == 0)
}

/// Stack of `z_i` followed by its neighbors' rows, `(k + 1) x D'`.
pub fn neighborhood_matrix(z: &DenseMatrix, g: &NeighborGraph, i: usize) -> Result<DenseMatrix> {
    if i >= g.n() || i >= z.rows() {
        return Err(GraphError::IndexOutOfRange { index: i, n: g.n() });
    }
    let idx: Vec<usize> = g.neighborhood(i).collect();
    Ok(z.select_rows(&idx))
}
