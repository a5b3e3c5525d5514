//! Thin SVD, nuclear norm and its subgradient on a random matrix, with a
//! central-difference check of one gradient entry.
//!
//! cargo run --release --example nuclear_norm -- [rows] [cols] [seed]

use maple::linalg::{nuclear_norm, nuclear_norm_with_subgradient, thin_svd, DenseMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let rows: usize = args.get(1).map_or(Ok(16), |s| s.parse())?;
    let cols: usize = args.get(2).map_or(Ok(6), |s| s.parse())?;
    let seed: u64 = args.get(3).map_or(Ok(0), |s| s.parse())?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DenseMatrix::random_normal(rows, cols, &mut rng);
    let svd = thin_svd(&a)?;
    println!("singular values: {:?}", svd.s.iter().map(|s| format!("{s:.4}")).collect::<Vec<_>>());
    println!("reconstruction error: {:.2e}", svd.reconstruct().max_abs_diff(&a));

    let (norm, grad) = nuclear_norm_with_subgradient(&a)?;
    println!("nuclear norm {norm:.6}, <A, dA> = {:.6}", maple::linalg::dot(a.as_slice(), grad.as_slice()));

    let h = 1e-6;
    let (mut up, mut down) = (a.clone(), a.clone());
    up.set(0, 0, a.get(0, 0) + h);
    down.set(0, 0, a.get(0, 0) - h);
    let fd = (nuclear_norm(&up)? - nuclear_norm(&down)?) / (2.0 * h);
    println!("d/dA[0,0]: analytic {:.8}, central difference {fd:.8}", grad.get(0, 0));
    Ok(())
}
