//! Lays out the two-Gaussian config with the learned graph and writes the
//! binary bundle the browser viewer loads, then decodes it again.
//!
//! cargo run --release --example viewer_bundle -- [out.mplv]

use maple::cli::bundle::{read_bundle, write_bundle, ViewerBundle};
use maple::cli::pipeline::{load_dataset, run_method};
use maple::cli::{Method, RunConfig};
use std::path::PathBuf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("maple_example.mplv"));
    let cfg = RunConfig::from_path(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/two_gaussians.json"))?;
    let ds = load_dataset(&cfg)?;
    let run = run_method(&ds, &cfg, Method::Maple, true)?;

    let bundle = ViewerBundle::from_run(&run.layout.y, &ds, run.report.as_ref());
    let mut bytes = Vec::new();
    write_bundle(&bundle, &mut bytes)?;
    std::fs::write(&out, &bytes)?;
    println!("{}: {} bytes, header {}", out.display(), bytes.len(), serde_json::to_string(&bundle.header())?);

    let back = read_bundle(&bytes[..])?;
    assert_eq!(back, bundle);
    println!("decoded {} points in {} dims; first row metadata {:?}", back.n, back.m, back.metadata.first());
    Ok(())
}
