//! Scores a layout CSV (`id,x,y,label`) with the full measure suite and prints
//! the markdown table. Without an argument it scores a synthetic layout of
//! three overlapping blobs.
//!
//! cargo run --release --example layout_report -- [layout.csv]

use maple::cli::pipeline::read_layout_csv;
use maple::linalg::DenseMatrix;
use maple::metrics::{full_report, MetricsConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (y, labels) = match std::env::args().nth(1) {
        Some(path) => {
            let (y, labels) = read_layout_csv(path.as_ref())?;
            (y, labels.ok_or("layout has no label column")?)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let mut y = DenseMatrix::random_normal(600, 2, &mut rng);
            let labels: Vec<u32> = (0..600).map(|i| (i % 3) as u32).collect();
            for (i, &l) in labels.iter().enumerate() {
                y.row_mut(i)[0] += 2.5 * l as f64;
            }
            (y, labels)
        }
    };
    let cfg = MetricsConfig { n_triplets: 20_000, n_pairs: 20_000, ..Default::default() };
    let report = full_report(&y, &labels, None, &cfg)?;
    print!("{}", report.to_markdown());
    for c in &report.per_class_knn {
        println!("class {} ({} points): kNN accuracy {:.3}", c.class, c.count, c.accuracy);
    }
    Ok(())
}
