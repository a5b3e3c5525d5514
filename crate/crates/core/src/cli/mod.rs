//! Command-line front end: pipeline runs, the baseline, benchmarks, sweeps,
//! evaluation of stored layouts and viewer export.
//!
//! Exit codes: 0 on success, 1 when a computation fails, 2 for bad
//! configuration or input.

pub mod bench;
pub mod bundle;
pub mod config;
pub mod pipeline;
pub mod sweep;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::{Method, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("[config] {0}")]
    Config(String),
    #[error("[input] {}: {message}", path.display())]
    Input { path: PathBuf, message: String },
    #[error("[{phase}] {message}")]
    Compute { phase: &'static str, message: String },
    #[error("[output] {}: {message}", path.display())]
    Output { path: PathBuf, message: String },
    #[error("[input] missing run artifact {}", .0.display())]
    MissingRunArtifacts(PathBuf),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input { .. } | CliError::MissingRunArtifacts(_) => 2,
            CliError::Compute { .. } | CliError::Output { .. } => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "maple", version, about = "Learned neighbor graphs and UMAP-style layouts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (a file path for export-viewer).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for training, layout and metric sampling; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to MAPLE_THREADS, then all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the encoder, build the learned graph, lay it out and evaluate.
    Pipeline,
    /// Same layout stage on a raw-input kNN graph with smooth-kNN weights.
    BaselineUmap,
    /// Time both methods over point-count and dimension grids.
    Bench,
    /// Grid over k, lambda and seeds.
    Sweep,
    /// Recompute metrics for a stored layout CSV.
    Eval {
        /// Layout CSV with a label column.
        #[arg(long)]
        layout: PathBuf,
    },
    /// Package a finished run for the viewer.
    ExportViewer {
        /// Run directory holding layout.csv and manifest.json.
        #[arg(long)]
        run: PathBuf,
    },
}

fn configure_threads(requested: Option<usize>) -> Result<(), CliError> {
    let from_env = std::env::var("MAPLE_THREADS").ok();
    let threads = match (requested, from_env) {
        (Some(t), _) => Some(t),
        (None, Some(v)) => Some(
            v.parse::<usize>()
                .map_err(|_| CliError::Config(format!("MAPLE_THREADS must be a positive integer, got `{v}`")))?,
        ),
        (None, None) => None,
    };
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::Config("thread count must be at least 1".into()));
        }
        // a pool configured earlier in the process stays in place
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    Ok(())
}

fn load_config(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config is required for this command".into()))?;
    let mut cfg = RunConfig::from_path(path)?;
    if let Some(seed) = common.seed {
        cfg.override_seed(seed);
    }
    Ok(cfg)
}

fn out_dir(common: &CommonArgs, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Output {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })
}

/// Executes a parsed command.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    configure_threads(cli.common.threads)?;
    let common = &cli.common;
    match &cli.command {
        Command::Pipeline => {
            let cfg = load_config(common)?;
            let out = out_dir(common, "runs/maple");
            let m = pipeline::run_to_dir(&cfg, Method::Maple, &out)?;
            println!("wrote {} ({:.1}s)", out.display(), m.total_seconds);
        }
        Command::BaselineUmap => {
            let cfg = load_config(common)?;
            let out = out_dir(common, "runs/baseline_umap");
            let m = pipeline::run_to_dir(&cfg, Method::BaselineUmap, &out)?;
            println!("wrote {} ({:.1}s)", out.display(), m.total_seconds);
        }
        Command::Bench => {
            let cfg = load_config(common)?;
            let out = out_dir(common, "runs/bench");
            create_dir(&out)?;
            let base = pipeline::load_dataset(&cfg)?;
            let rows = bench::run_bench(&base, &cfg)?;
            bench::write_csv(&out.join("bench.csv"), &rows)?;
            let summary = bench::summarize(&rows);
            bench::write_csv(&out.join("bench_summary.csv"), &summary)?;
            for s in &summary {
                println!(
                    "{} sweep, {} k={} fixed={}: slope {}",
                    s.sweep,
                    s.method,
                    s.k,
                    s.fixed,
                    s.slope.map_or("-".into(), |v| format!("{v:.3}"))
                );
            }
        }
        Command::Sweep => {
            let cfg = load_config(common)?;
            let out = out_dir(common, "runs/sweep");
            create_dir(&out)?;
            let ds = pipeline::load_dataset(&cfg)?;
            let rows = sweep::run_sweep(&ds, &cfg)?;
            bench::write_csv(&out.join("runs.csv"), &rows)?;
            bench::write_csv(&out.join("summary.csv"), &sweep::summarize(&rows))?;
            println!("wrote {} rows to {}", rows.len(), out.display());
        }
        Command::Eval { layout } => {
            let cfg = match &common.config {
                Some(_) => load_config(common)?,
                None => {
                    let mut c = RunConfig::default();
                    if let Some(seed) = common.seed {
                        c.override_seed(seed);
                    }
                    c
                }
            };
            let out = out_dir(common, "runs/eval");
            let report = pipeline::eval_layout(layout, &cfg, &out)?;
            print!("{}", report.to_markdown());
        }
        Command::ExportViewer { run } => {
            let out = common.out.clone().unwrap_or_else(|| run.join(pipeline::BUNDLE_FILE));
            let bytes = pipeline::export_viewer(run, &out)?;
            println!("wrote {} ({bytes} bytes)", out.display());
        }
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error {e}");
            e.exit_code()
        }
    }
}
