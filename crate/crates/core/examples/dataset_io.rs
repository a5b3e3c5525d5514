//! Builds a small image dataset of bars, round-trips it through the MPLB
//! binary format, then oversamples and upsamples it with augmentation.
//!
//! cargo run --release --example dataset_io -- [target_n] [target_dim]

use maple::ingest::{load_matrix_binary, save_matrix_binary, standardize, synth_scale, Dataset};
use maple::linalg::DenseMatrix;

const SIDE: usize = 8;

/// Horizontal bars are class 0, vertical bars class 1.
fn bars(n: usize) -> Result<Dataset, maple::ingest::IngestError> {
    let x = DenseMatrix::from_fn(n, SIDE * SIDE, |i, p| {
        let (r, c) = (p / SIDE, p % SIDE);
        let at = i / 2 % SIDE;
        let hit = if i % 2 == 0 { r == at } else { c == at };
        if hit { 1.0 } else { 0.0 }
    });
    let labels = (0..n).map(|i| (i % 2) as u32).collect();
    Dataset::new(x, Some(labels), "bars")?.with_image_shape(SIDE, SIDE)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let target_n: usize = args.get(1).map_or(Ok(256), |s| s.parse())?;
    let target_dim: usize = args.get(2).map_or(Ok(256), |s| s.parse())?;

    let ds = bars(2 * SIDE)?;
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("bars.mplb");
    save_matrix_binary(&ds, &path)?;
    let back = load_matrix_binary(&path)?;
    println!(
        "wrote {} bytes; reloaded {}x{}, identical: {}",
        std::fs::metadata(&path)?.len(),
        back.n(),
        back.dim(),
        back.x == ds.x && back.labels == ds.labels
    );

    let big = synth_scale(&back.with_image_shape(SIDE, SIDE)?, target_n, Some(target_dim), 0)?;
    println!("scaled to {} rows of {} dims, image shape {:?}", big.n(), big.dim(), big.image_shape);
    let z = standardize(&big)?;
    let means = z.x.column_means();
    let worst = means.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("standardized: largest column mean {worst:.2e}");
    Ok(())
}

