//! Property suites for every module's invariants. Each suite drives a
//! deterministic proptest runner and returns the failing case on error, so the
//! invariants target and the acceptance summary share one definition.

use super::*;
use maple::encoder::{backward, embed, forward, init_params, Architecture, EncoderParams};
use maple::fuzzy::{self, FuzzyGraph, Symmetrization};
use maple::ingest::{self, Dataset};
use maple::layout::{self, LayoutConfig};
use maple::linalg::{self, DenseMatrix};
use maple::metrics;
use maple::mmcr::{self, TrainConfig};
use maple::neighbor_graph::{build_knn, NeighborGraph};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

pub type Suite = fn() -> Result<(), String>;

pub fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let config = Config {
        cases,
        failure_persistence: None,
        max_global_rejects: 100_000,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn err<E: std::fmt::Debug>(e: E) -> TestCaseError {
    TestCaseError::fail(format!("{e:?}"))
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

// ---------------------------------------------------------------- linalg

pub fn linalg_dense() -> Result<(), String> {
    run(64, (1usize..9, 1usize..9, 1usize..9, any::<u64>()), |(r, c, k, seed)| {
        let a = random_matrix(r, c, seed);
        let b = random_matrix(c, k, seed ^ 1);
        let p = a.matmul(&b).map_err(err)?;
        prop_assert_eq!(p.shape(), (r, k));
        prop_assert_eq!(p.as_slice().len(), r * k);
        for i in 0..r {
            for j in 0..k {
                let want: f64 = (0..c).map(|t| a.get(i, t) * b.get(t, j)).sum();
                prop_assert!((p.get(i, j) - want).abs() < 1e-12);
            }
        }
        prop_assert!(p.ensure_finite().is_ok());
        let t = a.transpose();
        prop_assert_eq!(t.as_slice().len(), r * c);
        prop_assert_eq!(t.transpose(), a.clone());
        prop_assert!(DenseMatrix::from_vec(r, c, vec![0.0; r * c + 1]).is_err());
        let mut bad = a.clone();
        bad.set(r - 1, c - 1, f64::NAN);
        prop_assert_eq!(bad.find_non_finite(), Some((r - 1, c - 1)));
        prop_assert!(bad.ensure_finite().is_err());
        Ok(())
    })
}

/// A matrix with a random shape, optionally of reduced rank.
fn shaped_matrix(r: usize, c: usize, rank: usize, seed: u64) -> DenseMatrix {
    if rank >= r.min(c) {
        return random_matrix(r, c, seed);
    }
    let b = random_matrix(r, rank.max(1), seed);
    let cm = random_matrix(rank.max(1), c, seed ^ 7);
    b.matmul(&cm).unwrap()
}

fn gram_error(m: &DenseMatrix) -> f64 {
    let g = m.transpose().matmul(m).unwrap();
    g.max_abs_diff(&DenseMatrix::identity(m.cols()))
}

pub fn linalg_svd() -> Result<(), String> {
    run(96, (1usize..16, 1usize..16, 1usize..16, any::<u64>()), |(r, c, rank, seed)| {
        let a = shaped_matrix(r, c, rank, seed);
        let svd = linalg::thin_svd(&a).map_err(err)?;
        let m = r.min(c);
        prop_assert_eq!(svd.u.shape(), (r, m));
        prop_assert_eq!(svd.v.shape(), (c, m));
        prop_assert_eq!(svd.s.len(), m);
        prop_assert!(gram_error(&svd.u) < 1e-8, "u not orthonormal: {}", gram_error(&svd.u));
        prop_assert!(gram_error(&svd.v) < 1e-8, "v not orthonormal: {}", gram_error(&svd.v));
        prop_assert!(svd.s.iter().all(|&s| s >= 0.0));
        prop_assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
        let rec = svd.reconstruct().sub(&a).unwrap().frobenius_norm() / a.frobenius_norm().max(1e-300);
        prop_assert!(rec < 1e-6, "reconstruction error {}", rec);
        Ok(())
    })
}

fn permutation(n: usize, seed: u64) -> DenseMatrix {
    let order = random_labels(n, n as u32, seed);
    DenseMatrix::from_fn(n, n, |i, j| if order[i] as usize == j { 1.0 } else { 0.0 })
}

pub fn linalg_nuclear_norm() -> Result<(), String> {
    run(96, (1usize..12, 1usize..12, 1usize..12, any::<u64>()), |(r, c, rank, seed)| {
        let a = shaped_matrix(r, c, rank, seed);
        let b = shaped_matrix(r, c, rank, seed ^ 3);
        let na = linalg::nuclear_norm(&a).map_err(err)?;
        let pq = permutation(r, seed).matmul(&a).unwrap().matmul(&permutation(c, seed ^ 5)).unwrap();
        prop_assert!((linalg::nuclear_norm(&pq).unwrap() - na).abs() < 1e-8);
        let nb = linalg::nuclear_norm(&b).unwrap();
        let nab = linalg::nuclear_norm(&a.add(&b).unwrap()).unwrap();
        prop_assert!(nab <= na + nb + 1e-8, "{} > {} + {}", nab, na, nb);
        let svd = linalg::thin_svd(&a).unwrap();
        let rk = svd.numerical_rank(1e-10).max(1) as f64;
        prop_assert!(na <= rk.sqrt() * a.frobenius_norm() + 1e-8);
        Ok(())
    })
}

/// Smallest gap among singular values, counting the gap to zero.
pub fn spectral_gap(a: &DenseMatrix) -> f64 {
    let s = linalg::singular_values(a).unwrap();
    let mut gap = s.last().copied().unwrap_or(0.0);
    for w in s.windows(2) {
        gap = gap.min(w[0] - w[1]);
    }
    gap
}

/// Checks the nuclear-norm subgradient entrywise against central differences
/// on `count` seeded matrices whose spectral gap exceeds 0.1. Returns the
/// worst relative error.
pub fn nuclear_subgradient_error(count: usize, first_seed: u64) -> (usize, f64) {
    let mut worst = 0.0f64;
    let mut done = 0;
    let mut seed = first_seed;
    while done < count {
        seed += 1;
        let (r, c) = (2 + (seed % 7) as usize, 2 + (seed / 7 % 7) as usize);
        let a = random_matrix(r, c, seed);
        if spectral_gap(&a) <= 0.1 {
            continue;
        }
        let g = linalg::nuclear_norm_subgradient(&a).unwrap();
        let x = a.as_slice().to_vec();
        let mut f = |v: &[f64]| linalg::nuclear_norm(&DenseMatrix::from_vec(r, c, v.to_vec()).unwrap()).unwrap();
        for i in 0..x.len() {
            let fd = central_diff(&mut f, &x, i, 1e-6);
            worst = worst.max(rel_err(g.as_slice()[i], fd, 1e-6));
        }
        done += 1;
    }
    (done, worst)
}

pub fn linalg_subgradient() -> Result<(), String> {
    let (n, worst) = nuclear_subgradient_error(30, 0);
    if worst < 1e-4 {
        Ok(())
    } else {
        Err(format!("worst relative error {worst:.3e} over {n} matrices"))
    }
}

// ---------------------------------------------------------------- ingest

pub fn ingest_order_and_alignment() -> Result<(), String> {
    run(32, (2usize..40, 1usize..6, any::<u64>()), |(n, d, seed)| {
        // first feature encodes the row id, label derives from it
        let x = DenseMatrix::from_fn(n, d, |i, j| if j == 0 { i as f64 } else { (i * 31 + j) as f64 * 0.5 });
        let labels: Vec<u32> = (0..n as u32).map(|i| i % 3).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        let mut text = String::from((0..d).map(|j| format!("f{j}")).collect::<Vec<_>>().join(",") + ",label\n");
        for i in 0..n {
            let row: Vec<String> = x.row(i).iter().map(|v| v.to_string()).collect();
            text += &format!("{},{}\n", row.join(","), labels[i]);
        }
        std::fs::write(&path, text).unwrap();
        let ds = ingest::load_csv(&path, true, Some(d)).map_err(err)?;
        prop_assert_eq!(&ds.x, &x);
        let ids = ds.labels.clone().unwrap();
        let mut ranks: Vec<u32> = labels.clone();
        ranks.sort_unstable();
        ranks.dedup();
        for i in 0..n {
            prop_assert_eq!(ranks[ids[i] as usize], labels[i]);
        }
        let bin = dir.path().join("x.mplb");
        ingest::save_matrix_binary(&ds, &bin).map_err(err)?;
        let back = ingest::load_matrix_binary(&bin).map_err(err)?;
        prop_assert_eq!(&back.x, &ds.x);
        prop_assert_eq!(&back.labels, &ds.labels);
        let sub = ds.subsample((n / 2).max(1), seed);
        for i in 0..sub.n() {
            let row = sub.x.get(i, 0) as usize;
            prop_assert_eq!(sub.labels.as_ref().unwrap()[i], ids[row]);
            prop_assert_eq!(sub.x.row(i), x.row(row));
        }
        if n >= 2 {
            let st = ingest::standardize(&ds).map_err(err)?;
            let ids_st = st.labels.unwrap();
            prop_assert_eq!(&ids_st, &ids);
            // row order survives: standardized first feature is increasing in the row id
            prop_assert!(st.x.rows_iter().collect::<Vec<_>>().windows(2).all(|w| w[0][0] < w[1][0]));
        }
        Ok(())
    })
}

pub fn ingest_standardize_idempotent() -> Result<(), String> {
    run(48, (2usize..50, 1usize..8, any::<u64>()), |(n, d, seed)| {
        let mut x = random_matrix(n, d, seed);
        x.scale(7.0);
        // a constant column
        for i in 0..n {
            x.set(i, 0, 3.0);
        }
        let ds = Dataset::new(x, None, "t").unwrap();
        let once = ingest::standardize(&ds).map_err(err)?;
        let twice = ingest::standardize(&once).map_err(err)?;
        prop_assert!(once.x.max_abs_diff(&twice.x) < 1e-10);
        Ok(())
    })
}

pub fn ingest_synth_deterministic() -> Result<(), String> {
    run(8, (1usize..4, any::<u64>(), proptest::option::of(prop_oneof![Just(49usize), Just(100)])), |(mult, seed, dim)| {
        let n = 12;
        let x = random_matrix(n, 64, seed).scaled(0.5);
        let labels: Vec<u32> = (0..n as u32).map(|i| i % 2).collect();
        let ds = Dataset::new(x, Some(labels), "t").unwrap().with_image_shape(8, 8).unwrap();
        let a = ingest::synth_scale(&ds, n * mult + 5, dim, seed).map_err(err)?;
        let b = ingest::synth_scale(&ds, n * mult + 5, dim, seed).map_err(err)?;
        let bits = |m: &DenseMatrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a.x), bits(&b.x));
        prop_assert_eq!(&a.labels, &b.labels);
        prop_assert_eq!(a.n(), n * mult + 5);
        if let Some(d) = dim {
            prop_assert_eq!(a.dim(), d);
        }
        let (h, w) = a.image_shape.unwrap();
        prop_assert_eq!(h * w, a.dim());
        Ok(())
    })
}

pub fn ingest_dataset_validation() -> Result<(), String> {
    run(32, (1usize..10, 1usize..10, 1usize..4), |(h, w, extra)| {
        let ds = Dataset::new(DenseMatrix::zeros(3, h * w), Some(vec![0, 1, 1]), "t").unwrap();
        prop_assert!(ds.clone().with_image_shape(h, w).is_ok());
        prop_assert!(ds.clone().with_image_shape(h, w + extra).is_err());
        let names: std::collections::BTreeMap<u32, String> = [(0, "a".to_string())].into();
        prop_assert!(ds.clone().with_label_names(names).is_err());
        let names: std::collections::BTreeMap<u32, String> = [(0, "a".to_string()), (1, "b".to_string())].into();
        prop_assert!(ds.clone().with_label_names(names).is_ok());
        prop_assert!(Dataset::new(DenseMatrix::zeros(3, 2), Some(vec![0, 1]), "t").is_err());
        Ok(())
    })
}

// ---------------------------------------------------------------- encoder

fn flat_params(p: &EncoderParams) -> Vec<f64> {
    let mut v = Vec::new();
    for l in &p.layers {
        v.extend_from_slice(l.weight.as_slice());
        v.extend_from_slice(&l.bias);
    }
    v
}

fn set_flat(p: &mut EncoderParams, v: &[f64]) {
    let mut off = 0;
    for l in &mut p.layers {
        let n = l.weight.as_slice().len();
        l.weight.as_mut_slice().copy_from_slice(&v[off..off + n]);
        off += n;
        let m = l.bias.len();
        l.bias.copy_from_slice(&v[off..off + m]);
        off += m;
    }
}

fn flat_grads(g: &maple::encoder::ParamGrads) -> Vec<f64> {
    let mut v = Vec::new();
    for (w, b) in &g.layers {
        v.extend_from_slice(w.as_slice());
        v.extend_from_slice(b);
    }
    v
}

/// Smallest |pre-activation| over the ReLU layers; small values put a
/// finite difference across a kink.
fn relu_margin(p: &EncoderParams, x: &DenseMatrix) -> f64 {
    let Ok(t) = forward(p, x) else {
        // an all-zero projector row cannot be normalized
        return 0.0;
    };
    let mut m = f64::INFINITY;
    for (l, pre) in t.pre.iter().enumerate() {
        if p.layers[l].activation == maple::encoder::Activation::Relu {
            m = pre.as_slice().iter().fold(m, |acc, v| acc.min(v.abs()));
        }
    }
    m
}

/// Worst relative error of backprop against central differences for a
/// scalar loss `loss(z) -> (value, dL/dz)` over every parameter.
pub fn param_gradient_error(
    p: &EncoderParams,
    x: &DenseMatrix,
    loss: &dyn Fn(&DenseMatrix) -> (f64, DenseMatrix),
) -> f64 {
    let t = forward(p, x).unwrap();
    let (_, gz) = loss(&t.z);
    let g = flat_grads(&backward(p, &t, &gz).unwrap());
    let theta = flat_params(p);
    let mut q = p.clone();
    let mut f = |v: &[f64]| {
        set_flat(&mut q, v);
        loss(&forward(&q, x).unwrap().z).0
    };
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        let fd = central_diff(&mut f, &theta, i, 1e-6);
        worst = worst.max(rel_err(g[i], fd, 1e-5));
    }
    worst
}

pub fn encoder_backward() -> Result<(), String> {
    let strat = (1usize..=10, proptest::collection::vec(1usize..=16, 1..3), 2usize..=6, 3usize..8, any::<u64>());
    run(24, strat, |(d, hidden, e, n, seed)| {
        let p = init_params(&Architecture::with_hidden(d, &hidden, e), seed).map_err(err)?;
        let x = random_matrix(n, d, seed ^ 9);
        prop_assume!(relu_margin(&p, &x) > 1e-4);
        let w = random_matrix(e, e, seed ^ 11);
        // nuclear norm of a mixed embedding plus a linear term
        let probe = |z: &DenseMatrix| {
            let m = z.matmul(&w).unwrap();
            let (v, g) = linalg::nuclear_norm_with_subgradient(&m).unwrap();
            (v + 0.3 * z.as_slice().iter().sum::<f64>(), {
                let mut gz = g.matmul(&w.transpose()).unwrap();
                gz.as_mut_slice().iter_mut().for_each(|x| *x += 0.3);
                gz
            })
        };
        let t = forward(&p, &x).unwrap();
        prop_assume!(spectral_gap(&t.z.matmul(&w).unwrap()) > 1e-3);
        let worst = param_gradient_error(&p, &x, &probe);
        prop_assert!(worst < 1e-3, "relative error {}", worst);
        Ok(())
    })
}

pub fn encoder_forward_rows() -> Result<(), String> {
    run(24, (1usize..=20, 2usize..=8, 2usize..40, any::<u64>()), |(d, e, n, seed)| {
        let arch = Architecture::with_hidden(d, &[16, 12], e);
        let p = init_params(&arch, seed).map_err(err)?;
        for (a, b) in p.layers.iter().zip(p.layers.iter().skip(1)) {
            prop_assert_eq!(a.fan_out(), b.fan_in());
        }
        prop_assert_eq!(p.layers[0].fan_in(), d);
        prop_assert_eq!(p.layers.last().unwrap().fan_out(), e);
        let x = random_matrix(n, d, seed ^ 2);
        let z = embed(&p, &x).map_err(err)?;
        prop_assert_eq!(&z, &embed(&p, &x).unwrap());
        for i in 0..n {
            let norm = z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-6);
        }
        // each row alone and in reversed order embeds the same
        let rev: Vec<usize> = (0..n).rev().collect();
        let zr = embed(&p, &x.select_rows(&rev)).unwrap();
        let t = forward(&p, &x.select_rows(&[n / 2])).unwrap();
        for (pos, &i) in rev.iter().enumerate() {
            for (a, b) in zr.row(pos).iter().zip(z.row(i)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
        for (a, b) in t.z.row(0).iter().zip(z.row(n / 2)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        Ok(())
    })
}

/// Small training config used by the suites.
pub fn small_train(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        k: 5,
        hidden: vec![32, 32],
        embed_dim: 8,
        epochs,
        batch_size: 32,
        graph_refresh_interval: 2,
        seed,
        ..TrainConfig::default()
    }
}

pub fn encoder_unit_norm_during_training() -> Result<(), String> {
    run(6, (1usize..=4, any::<u64>()), |(epochs, seed)| {
        let ds = ingest::two_gaussians(60, 6, 2.0, 0.05, seed).map_err(err)?;
        let out = mmcr::train(&ds, &small_train(seed, epochs)).map_err(err)?;
        prop_assert_eq!(out.log.records.len(), epochs);
        prop_assert!(out.params.is_finite());
        for i in 0..out.z.rows() {
            let norm = out.z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-6);
        }
        Ok(())
    })
}

// ---------------------------------------------------------------- neighbor graph

fn graph_structure(g: &NeighborGraph) -> Result<(), TestCaseError> {
    for i in 0..g.n() {
        let nb = g.neighbors(i);
        prop_assert!(!nb.contains(&i));
        let mut s = nb.to_vec();
        s.sort_unstable();
        s.dedup();
        prop_assert_eq!(s.len(), g.k());
        prop_assert!(nb.iter().all(|&j| j < g.n()));
        prop_assert!(g.dists(i).iter().all(|&d| d >= 0.0));
        prop_assert!(g.dists(i).windows(2).all(|w| w[0] <= w[1]));
    }
    Ok(())
}

pub fn neighbor_graph_oracle() -> Result<(), String> {
    run(48, (2usize..80, 1usize..10, 1usize..20, any::<bool>(), any::<u64>()), |(n, d, k, coarse, seed)| {
        let k = k.min(n - 1);
        let mut z = random_matrix(n, d, seed);
        if coarse {
            // round onto a lattice so distance ties are common
            z.as_mut_slice().iter_mut().for_each(|v| *v = (*v * 2.0).round());
        }
        let g = build_knn(&z, k).map_err(err)?;
        graph_structure(&g)?;
        let want = knn_oracle(&z, k);
        for i in 0..n {
            prop_assert_eq!(g.neighbors(i), &want[i][..]);
        }
        prop_assert_eq!(&g, &build_knn(&z, k).unwrap());
        Ok(())
    })
}

pub fn neighbor_graph_unit_rows() -> Result<(), String> {
    run(32, (5usize..60, 2usize..12, any::<u64>()), |(n, d, seed)| {
        let mut z = random_matrix(n, d, seed);
        for i in 0..n {
            let norm = z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            z.row_mut(i).iter_mut().for_each(|v| *v /= norm);
        }
        let g = build_knn(&z, 4).map_err(err)?;
        for i in 0..n {
            prop_assert!(g.dists(i).iter().all(|&x| (0.0..=2.0).contains(&x)));
        }
        Ok(())
    })
}

// ---------------------------------------------------------------- mmcr

/// One seeded full-pipeline instance: random network, fixed graph on the
/// initial embeddings, random batch. `None` when the instance is degenerate
/// (ReLU kink or near-repeated singular values within reach of the step).
pub fn pipeline_instance(seed: u64) -> Option<(EncoderParams, DenseMatrix, NeighborGraph, Vec<usize>, f64)> {
    let n = 16 + (seed % 5) as usize * 12;
    let d = 4 + (seed % 7) as usize * 4;
    let e = 3 + (seed % 3) as usize;
    let k = 2 + (seed % 3) as usize;
    let lambda = [0.0, 0.5, 2.0][(seed % 3) as usize];
    let p = init_params(&Architecture::with_hidden(d, &[12], e), seed).ok()?;
    let x = random_matrix(n, d, seed ^ 0x5eed);
    if relu_margin(&p, &x) < 1e-4 {
        return None;
    }
    let z = embed(&p, &x).ok()?;
    let g = build_knn(&z, k).ok()?;
    let mut r = rng(seed);
    let bsz = 4 + (seed % 9) as usize;
    let batch: Vec<usize> = rand::seq::index::sample(&mut r, n, bsz).into_vec();
    let mut mats = vec![mmcr::batch_centroids(&z, &g, &batch).ok()?];
    for &i in &batch {
        mats.push(maple::neighbor_graph::neighborhood_matrix(&z, &g, i).ok()?);
    }
    if mats.iter().any(|m| spectral_gap(m) < 1e-3) {
        return None;
    }
    Some((p, x, g, batch, lambda))
}

/// Full loss-to-parameter gradient check on `count` non-degenerate seeded
/// instances. Returns (instances, worst relative error).
pub fn pipeline_gradient_error(count: usize, first_seed: u64) -> (usize, f64) {
    let mut worst = 0.0f64;
    let mut done = 0;
    let mut seed = first_seed;
    while done < count {
        seed += 1;
        let Some((p, x, g, batch, lambda)) = pipeline_instance(seed) else {
            continue;
        };
        let loss = |z: &DenseMatrix| {
            let l = mmcr::mmcr_loss(z, &g, &batch, lambda).unwrap();
            (l.loss, l.grad_z)
        };
        worst = worst.max(param_gradient_error(&p, &x, &loss));
        done += 1;
    }
    (done, worst)
}

pub fn mmcr_gradient() -> Result<(), String> {
    let (n, worst) = pipeline_gradient_error(20, 1000);
    if worst < 1e-3 {
        Ok(())
    } else {
        Err(format!("worst relative error {worst:.3e} over {n} instances"))
    }
}

pub fn mmcr_loss_consistency() -> Result<(), String> {
    run(32, (8usize..40, 2usize..6, 1usize..5, 0.0f64..3.0, any::<u64>()), |(n, e, k, lambda, seed)| {
        let mut z = random_matrix(n, e, seed);
        for i in 0..n {
            let norm = z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            z.row_mut(i).iter_mut().for_each(|v| *v /= norm);
        }
        let g = build_knn(&z, k).unwrap();
        let batch: Vec<usize> = (0..n).step_by(2).collect();
        let l = mmcr::mmcr_loss(&z, &g, &batch, lambda).map_err(err)?;
        let v = mmcr::mmcr_value(&z, &g, &batch, lambda).unwrap();
        prop_assert!((l.loss - v).abs() < 1e-10);
        prop_assert!((l.loss - (lambda * l.local_term - l.centroid_term)).abs() < 1e-12);
        // centroids are neighborhood means
        let c = mmcr::batch_centroids(&z, &g, &batch).unwrap();
        for (b, &i) in batch.iter().enumerate() {
            for col in 0..e {
                let s: f64 = g.neighborhood(i).map(|j| z.get(j, col)).sum::<f64>() / (k + 1) as f64;
                prop_assert!((c.get(b, col) - s).abs() < 1e-12);
            }
        }
        prop_assert!(l.grad_z.ensure_finite().is_ok());
        Ok(())
    })
}

pub fn mmcr_train_config() -> Result<(), String> {
    let base = TrainConfig::default();
    let bad = [
        TrainConfig { k: 0, ..base.clone() },
        TrainConfig { epochs: 0, ..base.clone() },
        TrainConfig { batch_size: 1, ..base.clone() },
        TrainConfig { embed_dim: 1, ..base.clone() },
        TrainConfig { lambda: -0.1, ..base.clone() },
        TrainConfig { lambda: f64::NAN, ..base.clone() },
    ];
    if base.validate().is_err() {
        return Err("default config rejected".into());
    }
    match bad.iter().position(|c| c.validate().is_ok()) {
        Some(i) => Err(format!("invalid config #{i} accepted")),
        None => Ok(()),
    }
}

/// Two-Gaussian runs: (first-epoch loss, last-epoch loss, NH before, NH after,
/// cross edges before, cross edges after) per seed.
pub struct RefinementRun {
    pub seed: u64,
    pub loss_first: f64,
    pub loss_last: f64,
    pub nh_before: f64,
    pub nh_after: f64,
    pub cross_before: usize,
    pub cross_after: usize,
}

pub fn refinement_runs(cfg: &TrainConfig) -> Vec<RefinementRun> {
    (0..5)
        .map(|seed| {
            let ds = ingest::two_gaussians(200, 10, 3.0, 0.05, seed).unwrap();
            let labels = ds.labels.clone().unwrap();
            let out = mmcr::train(&ds, &TrainConfig { seed, ..cfg.clone() }).unwrap();
            let recs = &out.log.records;
            RefinementRun {
                seed,
                loss_first: recs[0].loss,
                loss_last: recs[recs.len() - 1].loss,
                nh_before: metrics::neighborhood_hit_graph(&out.initial_graph, &labels, cfg.k).unwrap(),
                nh_after: metrics::neighborhood_hit_graph(&out.graph, &labels, cfg.k).unwrap(),
                cross_before: out.initial_graph.cross_label_edges(&labels),
                cross_after: out.graph.cross_label_edges(&labels),
            }
        })
        .collect()
}

// ---------------------------------------------------------------- fuzzy

fn random_graph(n: usize, d: usize, k: usize, seed: u64) -> (DenseMatrix, NeighborGraph) {
    let z = random_matrix(n, d, seed);
    let g = build_knn(&z, k).unwrap();
    (z, g)
}

fn fuzzy_structure(fg: &FuzzyGraph) -> Result<(), TestCaseError> {
    prop_assert!(fg.validate().is_ok());
    let mut seen = std::collections::BTreeSet::new();
    for &(i, j, w) in &fg.edges {
        prop_assert!(i < j && j < fg.n_nodes);
        prop_assert!(w > 0.0 && w <= 1.0, "weight {}", w);
        prop_assert!(seen.insert((i, j)));
    }
    Ok(())
}

pub fn fuzzy_softmax_rows() -> Result<(), String> {
    let taus = prop_oneof![Just(0.01), Just(0.1), Just(1.0), Just(10.0)];
    run(48, (6usize..50, 2usize..8, 1usize..6, taus, any::<u64>()), |(n, d, k, tau, seed)| {
        let (mut z, _) = random_graph(n, d, k, seed);
        for i in 0..n {
            let norm = z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            z.row_mut(i).iter_mut().for_each(|v| *v /= norm);
        }
        let g = build_knn(&z, k).unwrap();
        let dw = fuzzy::softmax_weights(&z, &g, tau).map_err(err)?;
        for i in 0..n {
            prop_assert!((dw.row_sum(i) - 1.0).abs() < 1e-6);
            prop_assert_eq!(dw.targets(i), g.neighbors(i));
        }
        Ok(())
    })
}

pub fn fuzzy_symmetrize() -> Result<(), String> {
    run(48, (0.0f64..=1.0, 0.0f64..=1.0), |(a, b)| {
        let f = fuzzy::fuzzy_union(a, b);
        prop_assert_eq!(f, fuzzy::fuzzy_union(b, a));
        prop_assert!(f >= a.max(b) - 1e-15 && f <= (a + b).min(1.0) + 1e-15);
        Ok(())
    })?;
    run(32, (6usize..40, 2usize..6, 1usize..6, any::<u64>()), |(n, d, k, seed)| {
        let (z, g) = random_graph(n, d, k, seed);
        let dw = fuzzy::softmax_weights(&z, &g, 0.5).map_err(err)?;
        let directed = |i: usize, j: usize| {
            dw.targets(i).iter().position(|&t| t == j).map_or(0.0, |p| dw.weights(i)[p])
        };
        for mode in [Symmetrization::ProbabilisticOr, Symmetrization::None] {
            let fg = fuzzy::symmetrize_with(&dw, mode).map_err(err)?;
            fuzzy_structure(&fg)?;
            for &(i, j, w) in &fg.edges {
                let (a, b) = (directed(i, j), directed(j, i));
                prop_assert!(w >= a.max(b) - 1e-12 && w <= (a + b).min(1.0) + 1e-12);
                prop_assert_eq!(Some(w), fg.weight(j, i));
            }
        }
        Ok(())
    })
}

pub fn fuzzy_local_scales() -> Result<(), String> {
    run(48, (5usize..60, 1usize..8, 2usize..10, any::<bool>(), any::<u64>()), |(n, d, k, dup, seed)| {
        let k = k.min(n - 1);
        let mut z = random_matrix(n, d, seed);
        if dup {
            // duplicate rows give zero distances
            for i in (0..n).step_by(3) {
                let src = z.row((i + 1) % n).to_vec();
                z.row_mut(i).copy_from_slice(&src);
            }
        }
        let g = build_knn(&z, k).unwrap();
        let s = fuzzy::umap_local_scales(&g);
        for i in 0..n {
            let pos = g.dists(i).iter().copied().filter(|&x| x > 0.0).fold(f64::INFINITY, f64::min);
            let want = if pos.is_finite() { pos } else { 0.0 };
            prop_assert_eq!(s.rho[i], want);
            prop_assert!(s.sigma[i] > 0.0);
        }
        let fg = fuzzy::symmetrize(&fuzzy::umap_weights(&g, &s).map_err(err)?).map_err(err)?;
        fuzzy_structure(&fg)?;
        Ok(())
    })
}

/// Both graph paths produce the same type and either feeds the same layout call.
pub fn fuzzy_path_isolation() -> Result<(), String> {
    run(6, any::<u64>(), |seed| {
        let ds = ingest::two_gaussians(50, 5, 3.0, 0.0, seed).map_err(err)?;
        let out = mmcr::train(&ds, &small_train(seed, 1)).map_err(err)?;
        let learned = fuzzy::symmetrize(&fuzzy::softmax_weights(&out.z, &out.graph, 0.1).unwrap()).unwrap();
        let raw = build_knn(&ds.x, 5).unwrap();
        let base = fuzzy::symmetrize(&fuzzy::umap_weights(&raw, &fuzzy::umap_local_scales(&raw)).unwrap()).unwrap();
        let cfg = LayoutConfig { n_epochs: Some(20), seed, ..LayoutConfig::default() };
        for fg in [&learned, &base] {
            fuzzy_structure(fg)?;
            let back = FuzzyGraph::from_json(&fg.to_json()).map_err(err)?;
            prop_assert_eq!(&back, fg);
            let init = layout::spectral_init(fg, 2, seed, Some(&ds.x)).map_err(err)?;
            let lay = layout::optimize_layout(&init.y, fg, &cfg).map_err(err)?;
            prop_assert_eq!(lay.y.shape(), (50, 2));
        }
        Ok(())
    })
}

// ---------------------------------------------------------------- layout

pub fn layout_fit_ab() -> Result<(), String> {
    run(16, (0.0f64..0.9, 1.0f64..2.0), |(min_dist, spread)| {
        let (a, b) = layout::fit_ab(min_dist, spread).map_err(err)?;
        prop_assert!(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite());
        Ok(())
    })?;
    let bad = [
        LayoutConfig { out_dim: 1, ..LayoutConfig::default() },
        LayoutConfig { out_dim: 4, ..LayoutConfig::default() },
        LayoutConfig { a: Some(0.0), ..LayoutConfig::default() },
        LayoutConfig { b: Some(-1.0), ..LayoutConfig::default() },
    ];
    match bad.iter().position(|c| c.validate().is_ok()) {
        Some(i) => Err(format!("invalid layout config #{i} accepted")),
        None => Ok(()),
    }
}

pub fn layout_rigid_motion() -> Result<(), String> {
    run(48, (3usize..40, 0.0f64..std::f64::consts::TAU, -50.0f64..50.0, -50.0f64..50.0, any::<bool>(), any::<u64>()),
        |(n, angle, tx, ty, reflect, seed)| {
            let y = random_matrix(n, 2, seed).scaled(5.0);
            let mut r = rng(seed);
            let pairs: Vec<(usize, usize, f64)> = (0..3 * n)
                .map(|_| {
                    use rand::Rng;
                    let i = r.random_range(0..n);
                    let j = (i + 1 + r.random_range(0..n - 1)) % n;
                    (i, j, r.random_range(0.01..1.0))
                })
                .collect();
            let (c, s) = (angle.cos(), angle.sin());
            let flip = if reflect { -1.0 } else { 1.0 };
            let moved = DenseMatrix::from_fn(n, 2, |i, j| {
                let (x0, y0) = (y.get(i, 0), flip * y.get(i, 1));
                if j == 0 { c * x0 - s * y0 + tx } else { s * x0 + c * y0 + ty }
            });
            let (a, b) = layout::fit_ab(0.1, 1.0).unwrap();
            let ce0 = layout::cross_entropy(&y, &pairs, a, b);
            let ce1 = layout::cross_entropy(&moved, &pairs, a, b);
            prop_assert!(rel_err(ce0, ce1, 1.0) < 1e-9, "{} vs {}", ce0, ce1);
            Ok(())
        })
}

fn blob_graph(n: usize, seed: u64) -> (DenseMatrix, FuzzyGraph) {
    let ds = ingest::two_gaussians(n, 5, 4.0, 0.0, seed).unwrap();
    let g = build_knn(&ds.x, 8).unwrap();
    let fg = fuzzy::symmetrize(&fuzzy::umap_weights(&g, &fuzzy::umap_local_scales(&g)).unwrap()).unwrap();
    (ds.x, fg)
}

pub fn layout_determinism_and_objective() -> Result<(), String> {
    run(6, (40usize..150, any::<u64>()), |(n, seed)| {
        let (x, fg) = blob_graph(n, seed);
        let cfg = LayoutConfig { n_epochs: Some(60), seed, ..LayoutConfig::default() };
        let init = layout::spectral_init(&fg, 2, seed, Some(&x)).map_err(err)?;
        let a = layout::optimize_layout(&init.y, &fg, &cfg).map_err(err)?;
        let b = layout::optimize_layout(&init.y, &fg, &cfg).map_err(err)?;
        let bits = |m: &DenseMatrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a.y), bits(&b.y));
        prop_assert!(a.y.ensure_finite().is_ok());
        prop_assert_eq!(a.epochs_run, 60);
        prop_assert_eq!(a.ce_trace.len(), 60);
        prop_assert!(a.ce_trace.last() < a.ce_trace.first(), "CE {:?} -> {:?}", a.ce_trace.first(), a.ce_trace.last());
        // the trace is the probe-set objective on the same weights
        let probe = layout::probe_set(&fg, cfg.probe_edges, cfg.seed);
        let last = probe.edge_cross_entropy(&a.y, a.a, a.b);
        prop_assert!(rel_err(last, *a.ce_trace.last().unwrap(), 1e-12) < 1e-9);
        let all = probe.cross_entropy(&a.y, a.a, a.b);
        prop_assert!(rel_err(all, *a.all_pairs_ce_trace.last().unwrap(), 1e-12) < 1e-9);
        Ok(())
    })
}

// ---------------------------------------------------------------- metrics

fn rigid(y: &DenseMatrix, angle: f64, scale: f64, shift: (f64, f64)) -> DenseMatrix {
    let (c, s) = (angle.cos(), angle.sin());
    DenseMatrix::from_fn(y.rows(), 2, |i, j| {
        let (x0, y0) = (y.get(i, 0), y.get(i, 1));
        scale * if j == 0 { c * x0 - s * y0 } else { s * x0 + c * y0 } + if j == 0 { shift.0 } else { shift.1 }
    })
}

fn blobs(n: usize, classes: u32, seed: u64) -> (DenseMatrix, Vec<u32>) {
    let labels = random_labels(n, classes, seed);
    let mut y = random_matrix(n, 2, seed ^ 4);
    for i in 0..n {
        let c = labels[i] as f64;
        y.set(i, 0, y.get(i, 0) + 6.0 * c.cos() * c);
        y.set(i, 1, y.get(i, 1) + 6.0 * c.sin() * c);
    }
    (y, labels)
}

pub fn metrics_motion_invariance() -> Result<(), String> {
    run(16, (30usize..120, 2u32..5, 0.0f64..6.28, 0.2f64..20.0, any::<u64>()), |(n, classes, angle, scale, seed)| {
        let (y, labels) = blobs(n, classes, seed);
        let cfg = metrics::MetricsConfig { n_triplets: 3000, n_pairs: 3000, seed, kmeans_restarts: 3, ..Default::default() };
        let base = metrics::full_report(&y, &labels, None, &cfg).map_err(err)?;
        prop_assert!(base.validate().is_ok());
        let moved = metrics::full_report(&rigid(&y, angle, 1.0, (13.0, -7.0)), &labels, None, &cfg).map_err(err)?;
        let scaled = metrics::full_report(&rigid(&y, angle, scale, (-3.0, 2.0)), &labels, None, &cfg).map_err(err)?;
        for key in metrics::MEASURE_KEYS {
            let (a, b, c) = (base.get(key), moved.get(key), scaled.get(key));
            prop_assert_eq!(a.is_some(), b.is_some(), "{}", key);
            if let (Some(a), Some(b)) = (a, b) {
                prop_assert!(rel_err(a, b, 1.0) < 1e-6, "{} rigid: {} vs {}", key, a, b);
            }
            // CH and DB are scale free too; Hausdorff scales with the layout
            if key != "hausdorff" {
                prop_assert_eq!(a.is_some(), c.is_some(), "{}", key);
                if let (Some(a), Some(c)) = (a, c) {
                    prop_assert!(rel_err(a, c, 1.0) < 1e-6, "{} scaled: {} vs {}", key, a, c);
                }
            }
        }
        Ok(())
    })
}

pub fn metrics_label_permutation() -> Result<(), String> {
    run(32, (20usize..150, 2u32..7, any::<u64>()), |(n, classes, seed)| {
        let y = random_matrix(n, 2, seed);
        let labels = random_labels(n, classes, seed ^ 1);
        let perm = random_labels(classes as usize, classes, seed ^ 2);
        let relabeled: Vec<u32> = labels.iter().map(|&l| perm[l as usize]).collect();
        let a = metrics::knn_accuracy(&y, &labels, 10).map_err(err)?;
        let b = metrics::knn_accuracy(&y, &relabeled, 10).map_err(err)?;
        // votes are distance weighted, so on continuous coordinates no tie decides a vote
        prop_assert!((a.overall - b.overall).abs() < 1e-12);
        prop_assert_eq!(a.per_class.len(), b.per_class.len());
        for row in &a.per_class {
            let other = b.per_class.iter().find(|r| r.class == perm[row.class as usize]).unwrap();
            prop_assert_eq!(row.count, other.count);
            prop_assert!((row.accuracy - other.accuracy).abs() < 1e-12);
        }
        Ok(())
    })
}

pub fn metrics_sample_convergence() -> Result<(), String> {
    run(8, (200usize..600, 2u32..6, any::<u64>()), |(n, classes, seed)| {
        let (y, labels) = blobs(n, classes, seed);
        let y = DenseMatrix::from_fn(n, 2, |i, j| y.get(i, j) * 0.3 + random_matrix(1, 1, seed ^ i as u64).get(0, 0));
        let t1 = metrics::perceptual_2afc(&y, &labels, 20_000, seed).map_err(err)?;
        let t2 = metrics::perceptual_2afc(&y, &labels, 40_000, seed).map_err(err)?;
        prop_assert!((t1 - t2).abs() < 0.01, "2AFC {} vs {}", t1, t2);
        let a1 = metrics::perceptual_auc(&y, &labels, 20_000, seed).map_err(err)?;
        let a2 = metrics::perceptual_auc(&y, &labels, 40_000, seed).map_err(err)?;
        prop_assert!((a1 - a2).abs() < 0.01, "AUC {} vs {}", a1, a2);
        Ok(())
    })
}

pub fn metrics_small_oracles() -> Result<(), String> {
    run(128, (2usize..=30, 1u32..6, 1u32..6, any::<u64>()), |(n, cu, cv, seed)| {
        let u = random_labels(n, cu, seed);
        let v = random_labels(n, cv, seed ^ 3);
        prop_assert!((metrics::adjusted_rand(&u, &v) - ari_pairs(&u, &v)).abs() < 1e-10);
        prop_assert!((metrics::v_measure(&u, &v) - v_measure(&u, &v)).abs() < 1e-10);
        let hu = entropy(&u);
        let hv = entropy(&v);
        if hu > 0.0 || hv > 0.0 {
            prop_assert!((metrics::normalized_mutual_info(&u, &v) - nmi(&u, &v).clamp(0.0, 1.0)).abs() < 1e-10);
        }
        if hu > 0.0 && hv > 0.0 {
            let got = metrics::adjusted_mutual_info(&u, &v);
            prop_assert!(got.is_finite());
            // chance agreement equal to the mean entropy leaves 0/0
            if (hu + hv) / 2.0 - emi(&u, &v) > 1e-9 {
                prop_assert!((got - ami(&u, &v)).abs() < 1e-10, "{} vs {}", got, ami(&u, &v));
            }
        }
        Ok(())
    })
}

pub const SUITES: &[(&str, Suite)] = &[
    ("linalg dense shape and finiteness", linalg_dense),
    ("linalg thin SVD", linalg_svd),
    ("linalg nuclear norm bounds", linalg_nuclear_norm),
    ("linalg subgradient vs finite differences", linalg_subgradient),
    ("ingest order and label alignment", ingest_order_and_alignment),
    ("ingest standardize idempotent", ingest_standardize_idempotent),
    ("ingest synthetic scaling deterministic", ingest_synth_deterministic),
    ("ingest dataset validation", ingest_dataset_validation),
    ("encoder backward vs finite differences", encoder_backward),
    ("encoder forward rows", encoder_forward_rows),
    ("encoder unit norm through training", encoder_unit_norm_during_training),
    ("neighbor graph oracle and determinism", neighbor_graph_oracle),
    ("neighbor graph unit-row distances", neighbor_graph_unit_rows),
    ("mmcr pipeline gradient", mmcr_gradient),
    ("mmcr loss consistency", mmcr_loss_consistency),
    ("mmcr config validation", mmcr_train_config),
    ("fuzzy softmax rows", fuzzy_softmax_rows),
    ("fuzzy symmetrization", fuzzy_symmetrize),
    ("fuzzy local scales", fuzzy_local_scales),
    ("fuzzy path isolation", fuzzy_path_isolation),
    ("layout curve fit and config", layout_fit_ab),
    ("layout rigid-motion objective", layout_rigid_motion),
    ("layout determinism and objective", layout_determinism_and_objective),
    ("metrics rigid-motion and scale invariance", metrics_motion_invariance),
    ("metrics label permutation", metrics_label_permutation),
    ("metrics sample convergence", metrics_sample_convergence),
    ("metrics small-instance oracles", metrics_small_oracles),
];
