//! Neighborhood MMCR objective and the representation-learning loop.
//!
//! The loss over a batch `B` is
//! `lambda * mean_{i in B} ||Z_local_i||_* - ||C||_*`
//! where `Z_local_i` stacks `z_i` with its graph neighbors and row `i` of `C`
//! is the mean of that stack.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{self, Architecture, EncoderError, EncoderParams};
use crate::ingest::Dataset;
use crate::linalg::{nuclear_norm, nuclear_norm_with_subgradient, DenseMatrix, LinalgError};
use crate::neighbor_graph::{build_knn, neighborhood_matrix, should_refresh, GraphError, NeighborGraph};

/// Tolerance on `|z| = 1` checked after every epoch.
const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("batch of {size} rows is too small; need at least 2")]
    BatchTooSmall { size: usize },
    #[error("batch index {index} out of range for {n} rows")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("dataset has {n} rows, need more than k = {k}")]
    TooFewRows { n: usize, k: usize },
    #[error("embedding row {row} has norm {norm} after epoch {epoch}")]
    NotUnitNorm { epoch: usize, row: usize, norm: f64 },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("writing train log: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Which rows form the centroid matrix in each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CentroidScope {
    /// One centroid per batch member.
    #[default]
    Batch,
    /// One centroid per dataset row; every step then forwards all rows.
    Full,
}

/// How neighbor rows that are not batch members get their embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NeighborRows {
    /// Taken from the embedding cache, refreshed by a full pass every epoch.
    /// Only batch rows receive gradient.
    #[default]
    Cached,
    /// Forwarded together with the batch so they receive gradient too.
    Fresh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub k: usize,
    pub lambda: f64,
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub graph_refresh_interval: usize,
    pub lr: f64,
    pub seed: u64,
    pub centroid_scope: CentroidScope,
    pub neighbor_rows: NeighborRows,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 15,
            lambda: 0.5,
            embed_dim: 128,
            hidden: Architecture::DEFAULT_HIDDEN.to_vec(),
            epochs: 20,
            batch_size: 4096,
            graph_refresh_interval: 20,
            lr: 1e-3,
            seed: 0,
            centroid_scope: CentroidScope::Batch,
            neighbor_rows: NeighborRows::Cached,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.k < 1 {
            return bad("k must be >= 1".into());
        }
        if self.epochs < 1 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if self.embed_dim < 2 {
            return bad(format!("embed_dim must be >= 2, got {}", self.embed_dim));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be a finite value >= 0, got {}", self.lambda));
        }
        if self.graph_refresh_interval < 1 {
            return bad("graph_refresh_interval must be >= 1".into());
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be >= 1".into());
        }
        Ok(())
    }

    pub fn architecture(&self, input_dim: usize) -> Architecture {
        Architecture::with_hidden(input_dim, &self.hidden, self.embed_dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub loss: f64,
    /// Mean over batches of the batch-mean local nuclear norm.
    pub local_term: f64,
    /// Mean over batches of the centroid nuclear norm.
    pub centroid_term: f64,
    /// Local nuclear norm averaged over every row after the epoch.
    pub local_term_full: f64,
    pub seconds: f64,
    pub refreshed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for r in &self.records {
            wtr.serialize(r).map_err(|e| TrainError::Io(e.to_string()))?;
        }
        wtr.flush().map_err(|e| TrainError::Io(e.to_string()))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
        self.write_csv(f)
    }
}

/// Loss value, its two terms and `dL/dz` (nonzero only on touched rows).
#[derive(Debug, Clone)]
pub struct MmcrLoss {
    pub loss: f64,
    /// Batch mean of `||Z_local_i||_*`.
    pub local_term: f64,
    /// `||C||_*`.
    pub centroid_term: f64,
    pub grad_z: DenseMatrix,
}

fn check_batch(z: &DenseMatrix, g: &NeighborGraph, batch: &[usize]) -> Result<()> {
    if g.n() != z.rows() {
        return Err(TrainError::Graph(GraphError::Invalid(format!(
            "graph has {} nodes, embedding has {} rows",
            g.n(),
            z.rows()
        ))));
    }
    if let Some(&i) = batch.iter().find(|&&i| i >= z.rows()) {
        return Err(TrainError::IndexOutOfRange { index: i, n: z.rows() });
    }
    Ok(())
}

/// Row `b` is the mean of `z` over `{batch[b]} ∪ neighbors(batch[b])`.
pub fn batch_centroids(z: &DenseMatrix, g: &NeighborGraph, batch: &[usize]) -> Result<DenseMatrix> {
    check_batch(z, g, batch)?;
    let d = z.cols();
    let inv = 1.0 / (g.k() + 1) as f64;
    let mut c = DenseMatrix::zeros(batch.len(), d);
    for (b, &i) in batch.iter().enumerate() {
        let row = c.row_mut(b);
        for j in g.neighborhood(i) {
            for (cv, zv) in row.iter_mut().zip(z.row(j)) {
                *cv += zv;
            }
        }
        row.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(c)
}

/// Loss and gradient for one batch.
pub fn mmcr_loss(z: &DenseMatrix, g: &NeighborGraph, batch: &[usize], lambda: f64) -> Result<MmcrLoss> {
    if batch.len() < 2 {
        return Err(TrainError::BatchTooSmall { size: batch.len() });
    }
    check_batch(z, g, batch)?;
    let bsz = batch.len() as f64;
    let locals: Vec<(f64, DenseMatrix)> = batch
        .par_iter()
        .map(|&i| {
            let m = neighborhood_matrix(z, g, i)?;
            Ok(nuclear_norm_with_subgradient(&m)?)
        })
        .collect::<Result<_>>()?;
    let c = batch_centroids(z, g, batch)?;
    let (c_norm, c_grad) = nuclear_norm_with_subgradient(&c)?;

    let local_term = locals.iter().map(|(v, _)| v).sum::<f64>() / bsz;
    let mut grad = DenseMatrix::zeros(z.rows(), z.cols());
    let w_local = lambda / bsz;
    let w_cent = 1.0 / (g.k() + 1) as f64;
    for (b, &i) in batch.iter().enumerate() {
        let sub = &locals[b].1;
        let cg = c_grad.row(b);
        for (pos, j) in g.neighborhood(i).enumerate() {
            let gr = grad.row_mut(j);
            for ((gv, lv), cv) in gr.iter_mut().zip(sub.row(pos)).zip(cg) {
                *gv += w_local * lv - w_cent * cv;
            }
        }
    }
    Ok(MmcrLoss {
        loss: lambda * local_term - c_norm,
        local_term,
        centroid_term: c_norm,
        grad_z: grad,
    })
}

/// Loss value only; the full-dataset form when `batch` covers every row.
pub fn mmcr_value(z: &DenseMatrix, g: &NeighborGraph, batch: &[usize], lambda: f64) -> Result<f64> {
    if batch.len() < 2 {
        return Err(TrainError::BatchTooSmall { size: batch.len() });
    }
    check_batch(z, g, batch)?;
    let local = mean_local_norm(z, g, batch)?;
    let c = batch_centroids(z, g, batch)?;
    Ok(lambda * local - nuclear_norm(&c)?)
}

/// Mean of `||Z_local_i||_*` over `rows`, reduced in index order.
pub fn mean_local_norm(z: &DenseMatrix, g: &NeighborGraph, rows: &[usize]) -> Result<f64> {
    let vals: Vec<f64> = rows
        .par_iter()
        .map(|&i| Ok(nuclear_norm(&neighborhood_matrix(z, g, i)?)?))
        .collect::<Result<_>>()?;
    Ok(vals.iter().sum::<f64>() / rows.len().max(1) as f64)
}

/// Everything produced by [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: EncoderParams,
    /// Graph on the final embeddings.
    pub graph: NeighborGraph,
    /// Graph on the untrained network's embeddings.
    pub initial_graph: NeighborGraph,
    /// Final embeddings, one unit-norm row per point.
    pub z: DenseMatrix,
    pub log: TrainLog,
}

/// Shuffled batches; a trailing single row joins the previous batch.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch as u64));
    idx.shuffle(&mut rng);
    let mut out: Vec<Vec<usize>> = idx.chunks(batch_size).map(|c| c.to_vec()).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        let tail = out.pop().expect("nonempty");
        out.last_mut().expect("nonempty").extend(tail);
    }
    out
}

fn check_unit_norm(z: &DenseMatrix, epoch: usize) -> Result<()> {
    for (row, r) in z.rows_iter().enumerate() {
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(TrainError::NotUnitNorm { epoch, row, norm });
        }
    }
    Ok(())
}

/// Rows to forward for one step, sorted.
fn forward_rows(cfg: &TrainConfig, g: &NeighborGraph, batch: &[usize], n: usize) -> Vec<usize> {
    if cfg.centroid_scope == CentroidScope::Full {
        return (0..n).collect();
    }
    match cfg.neighbor_rows {
        NeighborRows::Cached => {
            let mut r = batch.to_vec();
            r.sort_unstable();
            r
        }
        NeighborRows::Fresh => {
            let mut mark = vec![false; n];
            for &i in batch {
                for j in g.neighborhood(i) {
                    mark[j] = true;
                }
            }
            (0..n).filter(|&j| mark[j]).collect()
        }
    }
}

/// Trains the encoder on `ds` and returns the learned graph and embeddings.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let n = ds.n();
    if n <= cfg.k {
        return Err(TrainError::TooFewRows { n, k: cfg.k });
    }
    let x = &ds.x;
    let mut params = encoder::init_params(&cfg.architecture(ds.dim()), cfg.seed)?;
    let mut cache = encoder::embed(&params, x)?;
    let initial_graph = build_knn(&cache, cfg.k)?;
    let mut graph = initial_graph.clone();
    let all: Vec<usize> = (0..n).collect();
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let mut refreshed = epoch == 0;
        if epoch > 0 && should_refresh(epoch, cfg.graph_refresh_interval)? {
            graph = build_knn(&cache, cfg.k)?;
            graph.built_at_epoch = epoch;
            refreshed = true;
        }
        let batches = if cfg.centroid_scope == CentroidScope::Full {
            vec![all.clone()]
        } else {
            epoch_batches(n, cfg.batch_size, cfg.seed, epoch)
        };
        let (mut loss_sum, mut local_sum, mut cent_sum) = (0.0, 0.0, 0.0);
        for batch in &batches {
            let rows = forward_rows(cfg, &graph, batch, n);
            let trace = encoder::forward(&params, &x.select_rows(&rows))?;
            for (r, &i) in rows.iter().enumerate() {
                cache.row_mut(i).copy_from_slice(trace.z.row(r));
            }
            let out = mmcr_loss(&cache, &graph, batch, cfg.lambda)?;
            loss_sum += out.loss;
            local_sum += out.local_term;
            cent_sum += out.centroid_term;
            let grads = encoder::backward(&params, &trace, &out.grad_z.select_rows(&rows))?;
            encoder::step(&mut params, &grads, cfg.lr)?;
        }
        cache = encoder::embed(&params, x)?;
        check_unit_norm(&cache, epoch)?;
        let local_full = mean_local_norm(&cache, &graph, &all)?;
        let nb = batches.len() as f64;
        let rec = EpochRecord {
            epoch,
            loss: loss_sum / nb,
            local_term: local_sum / nb,
            centroid_term: cent_sum / nb,
            local_term_full: local_full,
            seconds: t0.elapsed().as_secs_f64(),
            refreshed,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} local {:.4} centroid {:.4} ({:.2}s)",
            rec.loss,
            rec.local_term,
            rec.centroid_term,
            rec.seconds
        );
        log.records.push(rec);
    }

    let mut final_graph = build_knn(&cache, cfg.k)?;
    final_graph.built_at_epoch = cfg.epochs;
    Ok(TrainOutput {
        params,
        graph: final_graph,
        initial_graph,
        z: cache,
        log,
    })
}
