//! Runs both graph constructions through the shared layout stage on a config
//! and prints the headline layout measures side by side.
//!
//! cargo run --release --example learned_vs_baseline -- [config.json]

use maple::cli::pipeline::{load_dataset, run_method};
use maple::cli::{Method, RunConfig};
use std::path::PathBuf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/two_gaussians.json"));
    let cfg = RunConfig::from_path(&path)?;
    let ds = load_dataset(&cfg)?;
    println!("{}: {} points, {} dims", ds.source, ds.n(), ds.dim());

    let keys = ["neighborhood_hit", "knn_accuracy", "label_trustworthiness", "two_afc"];
    println!("{:<14} {:>8} {:>8} {}", "method", "edges", "seconds", keys.join("  "));
    for method in [Method::Maple, Method::BaselineUmap] {
        let run = run_method(&ds, &cfg, method, true)?;
        let report = run.report.expect("labelled dataset");
        let values: Vec<String> = keys.iter().map(|k| format!("{:.4}", report.get(k).unwrap_or(f64::NAN))).collect();
        println!("{:<14} {:>8} {:>8.2} {}", method.to_string(), run.fuzzy.n_edges(), run.timer.total(), values.join("  "));
    }
    Ok(())
}
