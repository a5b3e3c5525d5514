//! Trains the encoder on two noisy Gaussian blobs and compares the number of
//! cross-label edges in the kNN graph before and after training.
//!
//! cargo run --release --example graph_refinement -- [separation] [epochs] [lambda] [batch_size]

use maple::ingest::two_gaussians;
use maple::mmcr::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let separation: f64 = args.get(1).map_or(Ok(3.0), |s| s.parse())?;
    let epochs: usize = args.get(2).map_or(Ok(20), |s| s.parse())?;
    let lambda: f64 = args.get(3).map_or(Ok(0.5), |s| s.parse())?;
    let batch_size: usize = args.get(4).map_or(Ok(4096), |s| s.parse())?;
    for seed in 0..5 {
        let ds = two_gaussians(200, 10, separation, 0.05, seed)?;
        let labels = ds.labels.clone().expect("labels");
        let cfg = TrainConfig { epochs, seed, lambda, batch_size, ..Default::default() };
        let t = std::time::Instant::now();
        let out = train(&ds, &cfg)?;
        let first = out.log.records.first().map_or(f64::NAN, |r| r.loss);
        let last = out.log.records.last().map_or(f64::NAN, |r| r.loss);
        println!(
            "seed {seed}: cross-label edges {} -> {}, loss {first:.4} -> {last:.4} ({:.1}s)",
            out.initial_graph.cross_label_edges(&labels),
            out.graph.cross_label_edges(&labels),
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
