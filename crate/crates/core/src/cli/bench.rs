//! Runtime scaling over point count and input dimension.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Method, RunConfig};
use super::pipeline::run_method;
use super::CliError;
use crate::ingest::{synth_scale, Dataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    /// `n` for the point-count sweep, `d` for the dimension sweep.
    pub sweep: String,
    pub method: Method,
    pub k: usize,
    pub n: usize,
    pub dim: usize,
    /// `ok`, `skipped_memory` or `failed`.
    pub status: String,
    pub seconds: Option<f64>,
    pub graph_seconds: Option<f64>,
    pub layout_seconds: Option<f64>,
    pub estimated_mb: u64,
    pub retries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub sweep: String,
    pub method: Method,
    pub k: usize,
    /// The dimension held fixed in the `n` sweep, the count in the `d` sweep.
    pub fixed: usize,
    pub points: usize,
    pub slope: Option<f64>,
    pub monotone: bool,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 || xs.len() != ys.len() || xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Rough peak resident bytes of one run, used to refuse oversized cells.
pub fn estimate_peak_bytes(n: usize, dim: usize, method: Method, cfg: &RunConfig) -> u64 {
    let (n, dim, k) = (n as u64, dim as u64, cfg.train.k as u64);
    let data = 2 * n * dim * 8;
    let knn_block = 256 * n * 8 * 2;
    let graph = n * k * 16 + n * k * 2 * 24;
    let layout = n * cfg.layout.out_dim as u64 * 8 * 2;
    let common = data + knn_block + graph + layout;
    match method {
        Method::BaselineUmap => common,
        Method::Maple => {
            let mut widths = vec![dim];
            widths.extend(cfg.train.hidden.iter().map(|&h| h as u64));
            widths.push(cfg.train.embed_dim as u64);
            let params: u64 = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
            let batch = (cfg.train.batch_size as u64).min(n);
            let acts: u64 = widths.iter().sum::<u64>() * batch * 8 * 3;
            let z = n * cfg.train.embed_dim as u64 * 8 * 3;
            common + params * 8 * 4 + acts + z
        }
    }
}

/// Dataset with `n` rows at image dimension `dim` (native when `None`).
pub fn cell_dataset(base: &Dataset, n: usize, dim: Option<usize>, seed: u64) -> Result<Dataset, CliError> {
    let start = if n < base.n() { base.subsample(n, seed) } else { base.clone() };
    let dim = dim.filter(|&d| d != start.dim());
    synth_scale(&start, n, dim, seed).map_err(|e| CliError::Config(format!("bench cell n={n}: {e}")))
}

fn timed_run(ds: &Dataset, cfg: &RunConfig, method: Method) -> Result<(f64, f64, f64), CliError> {
    let run = run_method(ds, cfg, method, false)?;
    let t = &run.timer;
    let graph = t.get("train") + t.get("knn") + t.get("weights");
    let layout = t.get("init") + t.get("layout");
    Ok((t.total(), graph, layout))
}

pub fn run_bench(base: &Dataset, cfg: &RunConfig) -> Result<Vec<BenchRow>, CliError> {
    let b = &cfg.bench;
    let mut cells: Vec<(&str, usize, Option<usize>)> = Vec::new();
    for &n in &b.n_grid {
        cells.push(("n", n, b.n_sweep_dim));
    }
    for &d in &b.d_grid {
        cells.push(("d", b.d_sweep_n, Some(d)));
    }
    let mut rows = Vec::new();
    // last timing per (sweep, method, k, fixed) for the monotonicity retry
    let mut previous: BTreeMap<(String, Method, usize), f64> = BTreeMap::new();
    let budget = b.memory_budget_mb * 1024 * 1024;
    for (sweep, n, dim) in cells {
        let native_dim = dim.unwrap_or(base.dim());
        let mut ds: Option<Dataset> = None;
        for &k in &b.k_grid {
            for &method in &b.methods {
                let mut run_cfg = cfg.clone();
                run_cfg.train.k = k;
                if let Some(e) = b.train_epochs {
                    run_cfg.train.epochs = e;
                }
                if b.layout_epochs.is_some() {
                    run_cfg.layout.n_epochs = b.layout_epochs;
                }
                let est = estimate_peak_bytes(n, native_dim, method, &run_cfg);
                let mut row = BenchRow {
                    sweep: sweep.into(),
                    method,
                    k,
                    n,
                    dim: native_dim,
                    status: "ok".into(),
                    seconds: None,
                    graph_seconds: None,
                    layout_seconds: None,
                    estimated_mb: est / (1024 * 1024),
                    retries: 0,
                };
                if est > budget {
                    log::warn!("bench: skipping {method} n={n} dim={native_dim} k={k}: estimated {} MB over budget", row.estimated_mb);
                    row.status = "skipped_memory".into();
                    rows.push(row);
                    continue;
                }
                if ds.is_none() {
                    ds = Some(cell_dataset(base, n, dim, cfg.dataset.seed)?);
                }
                let data = ds.as_ref().expect("built above");
                let key = (sweep.to_string(), method, k);
                let mut attempt = timed_run(data, &run_cfg, method);
                if sweep == "n" {
                    while let (Ok((secs, ..)), Some(&prev)) = (&attempt, previous.get(&key)) {
                        if *secs >= prev || row.retries >= b.retries {
                            break;
                        }
                        row.retries += 1;
                        attempt = timed_run(data, &run_cfg, method);
                    }
                }
                match attempt {
                    Ok((total, graph, layout)) => {
                        log::info!("bench: {method} n={n} dim={native_dim} k={k}: {total:.2}s");
                        row.seconds = Some(total);
                        row.graph_seconds = Some(graph);
                        row.layout_seconds = Some(layout);
                        if sweep == "n" {
                            previous.insert(key, total);
                        }
                    }
                    Err(e) => {
                        log::error!("bench: {method} n={n} k={k} failed: {e}");
                        row.status = "failed".into();
                    }
                }
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

pub fn summarize(rows: &[BenchRow]) -> Vec<BenchSummary> {
    let mut groups: BTreeMap<(String, Method, usize, usize), Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.status == "ok") {
        let (fixed, x) = if r.sweep == "n" { (r.dim, r.n) } else { (r.n, r.dim) };
        groups
            .entry((r.sweep.clone(), r.method, r.k, fixed))
            .or_default()
            .push((x as f64, r.seconds.expect("ok rows are timed")));
    }
    groups
        .into_iter()
        .map(|((sweep, method, k, fixed), mut pts)| {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (xs, ys): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
            BenchSummary {
                sweep,
                method,
                k,
                fixed,
                points: xs.len(),
                slope: loglog_slope(&xs, &ys),
                monotone: ys.windows(2).all(|w| w[1] >= w[0]),
            }
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let out_err = |m: String| CliError::Output {
        path: path.to_path_buf(),
        message: m,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| out_err(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| out_err(e.to_string()))?;
    }
    w.flush().map_err(|e| out_err(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.25)).collect();
        assert!((loglog_slope(&xs, &ys).unwrap() - 1.25).abs() < 1e-12);
        assert!(loglog_slope(&[1.0], &[1.0]).is_none());
    }

    #[test]
    fn memory_estimate_grows_with_n() {
        let cfg = RunConfig::default();
        let a = estimate_peak_bytes(1_000, 784, Method::Maple, &cfg);
        let b = estimate_peak_bytes(100_000, 784, Method::Maple, &cfg);
        assert!(b > 10 * a / 2);
        assert!(estimate_peak_bytes(1_000, 784, Method::BaselineUmap, &cfg) < a);
    }
}
