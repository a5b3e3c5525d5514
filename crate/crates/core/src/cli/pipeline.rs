//! End-to-end runs: dataset loading, graph construction for either method,
//! layout, evaluation, and the run directory on disk.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::bundle::{self, ViewerBundle};
use super::config::{DatasetKind, Method, RunConfig};
use super::CliError;
use crate::fuzzy::{self, FuzzyGraph, Symmetrization};
use crate::ingest::{self, Dataset};
use crate::layout::{self, InitKind, Layout};
use crate::linalg::DenseMatrix;
use crate::metrics::{self, MetricsReport};
use crate::mmcr::{self, TrainOutput};
use crate::neighbor_graph::build_knn;

pub const LAYOUT_CSV: &str = "layout.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_MD: &str = "metrics.md";
pub const TRAIN_LOG_CSV: &str = "train_log.csv";
pub const LAYOUT_LOG_CSV: &str = "layout_log.csv";
pub const FUZZY_GRAPH_JSON: &str = "fuzzy_graph.json";
pub const BUNDLE_FILE: &str = "bundle.mplv";
pub const MANIFEST_JSON: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub phase: String,
    pub seconds: f64,
}

/// Wall-clock bookkeeping per named phase.
#[derive(Debug, Default, Clone)]
pub struct Timer {
    pub phases: Vec<PhaseTiming>,
}

impl Timer {
    pub fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.phases.push(PhaseTiming {
            phase: phase.into(),
            seconds: t.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn total(&self) -> f64 {
        self.phases.iter().map(|p| p.seconds).sum()
    }

    pub fn get(&self, phase: &str) -> f64 {
        self.phases.iter().filter(|p| p.phase == phase).map(|p| p.seconds).sum()
    }
}

/// Loads and preprocesses the configured dataset.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let d = &cfg.dataset;
    let input_err = |path: &Path, e: ingest::IngestError| CliError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut ds = match d.kind {
        DatasetKind::TwoGaussians => ingest::two_gaussians(d.n, d.dim, d.separation, d.label_noise, d.seed)
            .map_err(|e| CliError::Config(e.to_string()))?,
        DatasetKind::Mplb | DatasetKind::Csv => {
            let path = d.path.as_deref().ok_or_else(|| CliError::Config("dataset.path is required".into()))?;
            if !path.exists() {
                return Err(CliError::Input {
                    path: path.to_path_buf(),
                    message: "dataset file not found".into(),
                });
            }
            let loaded = if d.kind == DatasetKind::Mplb {
                ingest::load_matrix_binary(path)
            } else {
                ingest::load_csv(path, d.has_header, d.label_column)
            };
            loaded.map_err(|e| input_err(path, e))?
        }
    };
    if let Some((h, w)) = d.image_shape {
        ds = ds.with_image_shape(h, w).map_err(|e| CliError::Config(e.to_string()))?;
    }
    if let Some(names) = &d.label_names {
        let map: BTreeMap<u32, String> = names.iter().enumerate().map(|(i, s)| (i as u32, s.clone())).collect();
        ds = ds.with_label_names(map).map_err(|e| CliError::Config(e.to_string()))?;
    }
    if let Some(n) = d.subsample {
        ds = ds.subsample(n, d.seed);
    }
    if d.standardize {
        ds = ingest::standardize(&ds).map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(ds)
}

/// Hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut hasher = Sha256::new();
    let mut f = fs::File::open(path)?;
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let got = std::io::Read::read(&mut f, &mut buf)?;
        if got == 0 {
            break;
        }
        hasher.update(&buf[..got]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn compute<E: std::fmt::Display>(phase: &'static str) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Compute {
        phase,
        message: e.to_string(),
    }
}

/// Everything a single method run produces in memory.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub method: Method,
    pub fuzzy: FuzzyGraph,
    pub init_kind: InitKind,
    pub layout: Layout,
    pub train: Option<TrainOutput>,
    pub report: Option<MetricsReport>,
    pub timer: Timer,
}

fn symmetrization(cfg: &RunConfig) -> Symmetrization {
    if cfg.fuzzy.symmetrize {
        Symmetrization::ProbabilisticOr
    } else {
        Symmetrization::None
    }
}

/// Phase 1 of the learned-graph method: train, then weight the final graph.
pub fn maple_graph(ds: &Dataset, cfg: &RunConfig, timer: &mut Timer) -> Result<(FuzzyGraph, TrainOutput), CliError> {
    let out = timer.time("train", || mmcr::train(ds, &cfg.train)).map_err(compute("train"))?;
    let fg = timer
        .time("weights", || {
            fuzzy::softmax_weights(&out.z, &out.graph, cfg.fuzzy.tau)
                .and_then(|dw| fuzzy::symmetrize_with(&dw, symmetrization(cfg)))
        })
        .map_err(compute("weights"))?;
    Ok((fg, out))
}

/// The baseline's graph: Euclidean kNN on the raw input with smooth-kNN weights.
pub fn baseline_graph(ds: &Dataset, cfg: &RunConfig, timer: &mut Timer) -> Result<FuzzyGraph, CliError> {
    let g = timer.time("knn", || build_knn(&ds.x, cfg.train.k)).map_err(compute("knn"))?;
    timer
        .time("weights", || {
            let scales = fuzzy::umap_local_scales(&g);
            fuzzy::umap_weights(&g, &scales).and_then(|dw| fuzzy::symmetrize_with(&dw, symmetrization(cfg)))
        })
        .map_err(compute("weights"))
}

/// Phase 2, shared by both methods.
pub fn embed_graph(
    fg: &FuzzyGraph,
    fallback_data: &DenseMatrix,
    cfg: &RunConfig,
    timer: &mut Timer,
) -> Result<(InitKind, Layout), CliError> {
    let init = timer
        .time("init", || layout::spectral_init(fg, cfg.layout.out_dim, cfg.layout.seed, Some(fallback_data)))
        .map_err(compute("init"))?;
    if init.fell_back() {
        log::warn!("spectral initialization fell back to {:?}", init.kind);
    }
    let lay = timer
        .time("layout", || layout::optimize_layout(&init.y, fg, &cfg.layout))
        .map_err(compute("layout"))?;
    Ok((init.kind, lay))
}

/// Runs one method end to end in memory; metrics when labels exist and
/// `with_metrics` is set.
pub fn run_method(ds: &Dataset, cfg: &RunConfig, method: Method, with_metrics: bool) -> Result<RunOutput, CliError> {
    let mut timer = Timer::default();
    let (fg, train) = match method {
        Method::Maple => {
            let (fg, t) = maple_graph(ds, cfg, &mut timer)?;
            (fg, Some(t))
        }
        Method::BaselineUmap => (baseline_graph(ds, cfg, &mut timer)?, None),
    };
    let fallback = train.as_ref().map_or(&ds.x, |t| &t.z);
    let (init_kind, lay) = embed_graph(&fg, fallback, cfg, &mut timer)?;
    let report = match (&ds.labels, with_metrics) {
        (Some(labels), true) => Some(
            timer
                .time("metrics", || metrics::full_report(&lay.y, labels, ds.label_names.as_ref(), &cfg.metrics))
                .map_err(compute("metrics"))?,
        ),
        _ => None,
    };
    Ok(RunOutput {
        method,
        fuzzy: fg,
        init_kind,
        layout: lay,
        train,
        report,
        timer,
    })
}

/// Layout rows as `id,x,y[,z...],label` with shortest round-trip floats.
pub fn layout_csv(y: &DenseMatrix, labels: Option<&[u32]>) -> String {
    let coord_names: Vec<String> = match y.cols() {
        2 => vec!["x".into(), "y".into()],
        3 => vec!["x".into(), "y".into(), "z".into()],
        m => (0..m).map(|c| format!("c{c}")).collect(),
    };
    let mut s = String::with_capacity(y.rows() * 48);
    s.push_str("id,");
    s.push_str(&coord_names.join(","));
    if labels.is_some() {
        s.push_str(",label");
    }
    s.push('\n');
    for i in 0..y.rows() {
        s.push_str(&i.to_string());
        for v in y.row(i) {
            s.push(',');
            s.push_str(&v.to_string());
        }
        if let Some(l) = labels {
            s.push(',');
            s.push_str(&l[i].to_string());
        }
        s.push('\n');
    }
    s
}

/// Parses a layout CSV written by [`layout_csv`].
pub fn read_layout_csv(path: &Path) -> Result<(DenseMatrix, Option<Vec<u32>>), CliError> {
    let bad = |m: String| CliError::Input {
        path: path.to_path_buf(),
        message: m,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let has_labels = headers.iter().last() == Some("label");
    let m = headers.len() - 1 - has_labels as usize;
    if headers.get(0) != Some("id") || m == 0 {
        return Err(bad("expected an `id,<coords>[,label]` header".into()));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        for c in 1..=m {
            let v: f64 = rec[c]
                .parse()
                .map_err(|_| bad(format!("row {}: bad coordinate `{}`", line + 1, &rec[c])))?;
            data.push(v);
        }
        if has_labels {
            let l: u32 = rec[m + 1]
                .parse()
                .map_err(|_| bad(format!("row {}: bad label `{}`", line + 1, &rec[m + 1])))?;
            labels.push(l);
        }
    }
    let n = data.len() / m;
    let y = DenseMatrix::from_vec(n, m, data).map_err(|e| bad(e.to_string()))?;
    Ok((y, has_labels.then_some(labels)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactInfo {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub source: String,
    pub n: usize,
    pub dim: usize,
    pub has_labels: bool,
    pub image_shape: Option<(usize, usize)>,
    /// Content hash of the input file, when the data came from one.
    pub input_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub method: Method,
    /// Fully resolved configuration in flat dotted form.
    pub config: serde_json::Value,
    pub dataset: DatasetInfo,
    pub init: InitKind,
    pub layout_a: f64,
    pub layout_b: f64,
    pub layout_epochs: usize,
    pub timings: Vec<PhaseTiming>,
    pub total_seconds: f64,
    pub artifacts: BTreeMap<String, ArtifactInfo>,
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<Self, CliError> {
        let path = run_dir.join(MANIFEST_JSON);
        let text = fs::read_to_string(&path).map_err(|_| CliError::MissingRunArtifacts(path.clone()))?;
        serde_json::from_str(&text).map_err(|e| CliError::Input {
            path,
            message: e.to_string(),
        })
    }

    /// The run's configuration, reparsed.
    pub fn run_config(&self) -> Result<RunConfig, CliError> {
        RunConfig::from_json(&self.config.to_string())
    }
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], artifacts: &mut BTreeMap<String, ArtifactInfo>) -> Result<(), CliError> {
    let path = dir.join(name);
    let mut f = fs::File::create(&path).map_err(|e| CliError::Output {
        path: path.clone(),
        message: e.to_string(),
    })?;
    f.write_all(bytes).map_err(|e| CliError::Output {
        path: path.clone(),
        message: e.to_string(),
    })?;
    artifacts.insert(
        name.to_string(),
        ArtifactInfo {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        },
    );
    Ok(())
}

/// Writes every artifact of a finished run plus its manifest. `timer` holds
/// the phases that ran before (loading, at least); the run's own phases and
/// the writing phase are appended.
pub fn write_run(
    dir: &Path,
    ds: &Dataset,
    cfg: &RunConfig,
    run: &RunOutput,
    input_sha256: Option<String>,
    mut timer: Timer,
) -> Result<RunManifest, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Output {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })?;
    timer.phases.extend(run.timer.phases.iter().cloned());
    let mut artifacts = BTreeMap::new();
    timer.time("write", || -> Result<(), CliError> {
        let labels = ds.labels.as_deref();
        write_file(dir, LAYOUT_CSV, layout_csv(&run.layout.y, labels).as_bytes(), &mut artifacts)?;
        let mut ce = String::from("epoch,cross_entropy,all_pairs_cross_entropy\n");
        for (e, (v, w)) in run.layout.ce_trace.iter().zip(&run.layout.all_pairs_ce_trace).enumerate() {
            ce.push_str(&format!("{},{},{}\n", e + 1, v, w));
        }
        write_file(dir, LAYOUT_LOG_CSV, ce.as_bytes(), &mut artifacts)?;
        if let Some(t) = &run.train {
            let mut buf = Vec::new();
            t.log.write_csv(&mut buf).map_err(compute("write"))?;
            write_file(dir, TRAIN_LOG_CSV, &buf, &mut artifacts)?;
        }
        if let Some(r) = &run.report {
            write_file(dir, METRICS_JSON, r.to_json().as_bytes(), &mut artifacts)?;
            write_file(dir, METRICS_MD, r.to_markdown().as_bytes(), &mut artifacts)?;
        }
        if cfg.output.fuzzy_graph {
            write_file(dir, FUZZY_GRAPH_JSON, run.fuzzy.to_json().as_bytes(), &mut artifacts)?;
        }
        if cfg.output.viewer_bundle {
            let b = ViewerBundle::from_run(&run.layout.y, ds, run.report.as_ref());
            let mut buf = Vec::new();
            bundle::write_bundle(&b, &mut buf).map_err(compute("write"))?;
            write_file(dir, BUNDLE_FILE, &buf, &mut artifacts)?;
        }
        Ok(())
    })?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        method: run.method,
        config: cfg.to_flat_json(),
        dataset: DatasetInfo {
            source: ds.source.clone(),
            n: ds.n(),
            dim: ds.dim(),
            has_labels: ds.labels.is_some(),
            image_shape: ds.image_shape,
            input_sha256,
        },
        init: run.init_kind,
        layout_a: run.layout.a,
        layout_b: run.layout.b,
        layout_epochs: run.layout.epochs_run,
        total_seconds: timer.total(),
        timings: timer.phases,
        artifacts,
    };
    let path = dir.join(MANIFEST_JSON);
    fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes")).map_err(|e| {
        CliError::Output {
            path: path.clone(),
            message: e.to_string(),
        }
    })?;
    Ok(manifest)
}

/// Loads the dataset, runs `method` and writes the run directory.
pub fn run_to_dir(cfg: &RunConfig, method: Method, out: &Path) -> Result<RunManifest, CliError> {
    let mut timer = Timer::default();
    let ds = timer.time("ingest", || load_dataset(cfg))?;
    let input_sha256 = match cfg.dataset.kind {
        DatasetKind::TwoGaussians => None,
        _ => cfg
            .dataset
            .path
            .as_deref()
            .map(|p| {
                sha256_file(p).map_err(|e| CliError::Input {
                    path: p.to_path_buf(),
                    message: e.to_string(),
                })
            })
            .transpose()?,
    };
    log::info!("{method}: {} points x {} dims from {}", ds.n(), ds.dim(), ds.source);
    let run = run_method(&ds, cfg, method, cfg.output.metrics)?;
    if let Some(r) = &run.report {
        log::info!(
            "{method}: neighborhood hit {:.4}, kNN accuracy {:.4}",
            r.get("neighborhood_hit").unwrap_or(f64::NAN),
            r.get("knn_accuracy").unwrap_or(f64::NAN)
        );
    }
    write_run(out, &ds, cfg, &run, input_sha256, timer)
}

/// Recomputes metrics for a stored layout.
pub fn eval_layout(layout_path: &Path, cfg: &RunConfig, out: &Path) -> Result<MetricsReport, CliError> {
    let (y, labels) = read_layout_csv(layout_path)?;
    let labels = labels.ok_or_else(|| CliError::Input {
        path: layout_path.to_path_buf(),
        message: "layout has no label column".into(),
    })?;
    let names: Option<BTreeMap<u32, String>> = cfg
        .dataset
        .label_names
        .as_ref()
        .map(|v| v.iter().enumerate().map(|(i, s)| (i as u32, s.clone())).collect());
    let report = metrics::full_report(&y, &labels, names.as_ref(), &cfg.metrics).map_err(compute("metrics"))?;
    fs::create_dir_all(out).map_err(|e| CliError::Output {
        path: out.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut artifacts = BTreeMap::new();
    write_file(out, METRICS_JSON, report.to_json().as_bytes(), &mut artifacts)?;
    write_file(out, METRICS_MD, report.to_markdown().as_bytes(), &mut artifacts)?;
    Ok(report)
}

/// Builds a viewer bundle from a finished run directory.
pub fn export_viewer(run_dir: &Path, out: &Path) -> Result<u64, CliError> {
    let layout_path = run_dir.join(LAYOUT_CSV);
    if !layout_path.exists() {
        return Err(CliError::MissingRunArtifacts(layout_path));
    }
    let manifest = RunManifest::load(run_dir)?;
    let cfg = manifest.run_config()?;
    let (y, _) = read_layout_csv(&layout_path)?;
    let ds = load_dataset(&cfg)?;
    if ds.n() != y.rows() {
        return Err(CliError::Input {
            path: layout_path,
            message: format!("layout has {} rows but the dataset has {}", y.rows(), ds.n()),
        });
    }
    let report = fs::read_to_string(run_dir.join(METRICS_JSON))
        .ok()
        .and_then(|s| MetricsReport::from_json(&s).ok());
    let b = ViewerBundle::from_run(&y, &ds, report.as_ref());
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::Output {
            path: parent.to_path_buf(),
            message: e.to_string(),
        })?;
    }
    let mut buf = Vec::new();
    bundle::write_bundle(&b, &mut buf).map_err(compute("export"))?;
    fs::write(out, &buf).map_err(|e| CliError::Output {
        path: PathBuf::from(out),
        message: e.to_string(),
    })?;
    Ok(buf.len() as u64)
}
