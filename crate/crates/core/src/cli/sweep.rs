//! Grid over neighborhood size, loss balance and seed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{Method, RunConfig};
use super::pipeline::run_method;
use super::CliError;
use crate::ingest::Dataset;
use crate::metrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub lambda: f64,
    pub seed: u64,
    pub neighborhood_hit: f64,
    pub knn_accuracy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub k: usize,
    pub lambda: f64,
    pub seeds: usize,
    pub neighborhood_hit_mean: f64,
    pub neighborhood_hit_std: f64,
    pub knn_accuracy_mean: f64,
    pub knn_accuracy_std: f64,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn run_sweep(ds: &Dataset, cfg: &RunConfig) -> Result<Vec<SweepRow>, CliError> {
    let labels = ds
        .labels
        .as_ref()
        .ok_or_else(|| CliError::Config("sweep needs a labeled dataset".into()))?;
    let base_seed = cfg.train.seed;
    let mut rows = Vec::new();
    for &k in &cfg.sweep.k_grid {
        for &lambda in &cfg.sweep.lambda_grid {
            for s in 0..cfg.sweep.seeds as u64 {
                let mut c = cfg.clone();
                c.train.k = k;
                c.train.lambda = lambda;
                c.train.seed = base_seed + s;
                c.layout.seed = cfg.layout.seed + s;
                c.validate()?;
                let run = run_method(ds, &c, Method::Maple, false)?;
                let y = &run.layout.y;
                let err = |e: metrics::MetricsError| CliError::Compute {
                    phase: "metrics",
                    message: e.to_string(),
                };
                let nh = metrics::neighborhood_hit(y, labels, cfg.metrics.neighborhood_hit_k).map_err(err)?;
                let acc = metrics::knn_accuracy(y, labels, cfg.metrics.knn_k).map_err(err)?;
                log::info!("sweep: k={k} lambda={lambda} seed={}: hit {nh:.4}, kNN {:.4}", c.train.seed, acc.overall);
                rows.push(SweepRow {
                    k,
                    lambda,
                    seed: c.train.seed,
                    neighborhood_hit: nh,
                    knn_accuracy: acc.overall,
                    seconds: run.timer.total(),
                });
            }
        }
    }
    Ok(rows)
}

pub fn summarize(rows: &[SweepRow]) -> Vec<SweepCell> {
    // keyed by grid position so cells keep the configured order
    let mut order: Vec<(usize, u64)> = Vec::new();
    let mut groups: BTreeMap<(usize, u64), Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.k, r.lambda.to_bits());
        if !groups.contains_key(&key) {
            order.push(key);
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let nh: Vec<f64> = g.iter().map(|r| r.neighborhood_hit).collect();
            let acc: Vec<f64> = g.iter().map(|r| r.knn_accuracy).collect();
            let (nm, ns) = mean_std(&nh);
            let (am, as_) = mean_std(&acc);
            SweepCell {
                k: key.0,
                lambda: g[0].lambda,
                seeds: g.len(),
                neighborhood_hit_mean: nm,
                neighborhood_hit_std: ns,
                knn_accuracy_mean: am,
                knn_accuracy_std: as_,
            }
        })
        .collect()
}
