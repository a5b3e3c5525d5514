//! Times the learned-graph pipeline on augmented oversamples of a config's
//! dataset and fits the log-log slope of runtime against point count.
//!
//! cargo run --release --example scaling -- [config.json] [n1,n2,...] [train_epochs] [layout_epochs]

use maple::cli::bench::{run_bench, summarize};
use maple::cli::pipeline::load_dataset;
use maple::cli::{Method, RunConfig};
use std::path::PathBuf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let path = args
        .get(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/mnist.json"));
    let mut cfg = RunConfig::from_path(&path)?;
    cfg.bench.n_grid = match args.get(2) {
        Some(s) => s.split(',').map(str::parse).collect::<Result<_, _>>()?,
        None => vec![1_000, 2_000, 4_000],
    };
    cfg.bench.train_epochs = Some(args.get(3).map_or(Ok(2), |s| s.parse())?);
    cfg.bench.layout_epochs = Some(args.get(4).map_or(Ok(100), |s| s.parse())?);
    cfg.bench.d_grid.clear();
    cfg.bench.k_grid = vec![cfg.train.k];
    cfg.bench.methods = vec![Method::Maple];

    let base = load_dataset(&cfg)?;
    let rows = run_bench(&base, &cfg)?;
    for r in &rows {
        println!("n={:>7}  {:<6} {}", r.n, r.status, r.seconds.map_or("-".into(), |s| format!("{s:.2}s")));
    }
    for s in summarize(&rows) {
        println!("{} k={}: slope {}, monotone {}", s.method, s.k, s.slope.map_or("-".into(), |v| format!("{v:.3}")), s.monotone);
    }
    Ok(())
}
