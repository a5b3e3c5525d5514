//! Encoder-projector MLP producing unit-norm embeddings, with hand-written
//! reverse-mode gradients and an Adam optimizer.
//!
//! The default stack is `D -> 512 -> 2048` (encoder) followed by
//! `2048 -> 512 -> D'` (projector). Hidden layers use ReLU; the last layer is
//! linear and its output rows are divided by their L2 norm.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{read_mplb, write_mplb, ElementType, IngestError};
use crate::linalg::{gemm, DenseMatrix};

/// Rows whose pre-normalization norm falls below this cannot be normalized.
pub const NORM_EPS: f64 = 1e-12;
/// Rows per chunk for inference-only passes.
const EMBED_CHUNK: usize = 2048;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("input has {found} columns, network expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("gradient shape {found:?} does not match embedding shape {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: usize },
    #[error("projector output for row {row} has norm {norm:e}; cannot normalize")]
    DegenerateNorm { row: usize, norm: f64 },
    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EncoderError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

/// Layer widths of the network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
}

impl Architecture {
    pub const DEFAULT_HIDDEN: [usize; 3] = [512, 2048, 512];

    pub fn new(input_dim: usize, embed_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: Self::DEFAULT_HIDDEN.to_vec(),
            embed_dim,
        }
    }

    pub fn with_hidden(input_dim: usize, hidden: &[usize], embed_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: hidden.to_vec(),
            embed_dim,
        }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.hidden);
        w.push(self.embed_dim);
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moment buffers for one flat parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// Applies one Adam update; `t` is the 1-based step number.
    pub fn update(&mut self, cfg: &AdamConfig, params: &mut [f64], grads: &[f64], lr: f64, t: u64) {
        let bc1 = 1.0 - cfg.beta1.powi(t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(t as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_in x fan_out`
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }
}

/// Network weights plus optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub layers: Vec<Layer>,
    pub adam: AdamConfig,
    /// `(weight, bias)` moments per layer.
    pub moments: Vec<(AdamMoments, AdamMoments)>,
    pub step_count: u64,
    pub seed: u64,
}

impl EncoderParams {
    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn embed_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").fan_out()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.rows() * l.weight.cols() + l.bias.len())
            .sum()
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_dim: self.input_dim(),
            hidden: self.layers[..self.layers.len() - 1]
                .iter()
                .map(|l| l.fan_out())
                .collect(),
            embed_dim: self.embed_dim(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weight.find_non_finite().is_none() && l.bias.iter().all(|b| b.is_finite())
        })
    }
}

/// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases.
pub fn init_params(arch: &Architecture, seed: u64) -> Result<EncoderParams> {
    if arch.input_dim < 1 {
        return Err(EncoderError::InvalidDimension("input_dim must be >= 1".into()));
    }
    if arch.embed_dim < 2 {
        return Err(EncoderError::InvalidDimension(format!(
            "embed_dim must be >= 2, got {}",
            arch.embed_dim
        )));
    }
    if arch.hidden.contains(&0) {
        return Err(EncoderError::InvalidDimension("hidden widths must be >= 1".into()));
    }
    let widths = arch.widths();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_layers = widths.len() - 1;
    let mut layers = Vec::with_capacity(n_layers);
    let mut moments = Vec::with_capacity(n_layers);
    for (l, pair) in widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let mut weight = DenseMatrix::random_normal(fan_in, fan_out, &mut rng);
        weight.scale((2.0 / fan_in as f64).sqrt());
        layers.push(Layer {
            weight,
            bias: vec![0.0; fan_out],
            activation: if l + 1 == n_layers {
                Activation::Identity
            } else {
                Activation::Relu
            },
        });
        moments.push((AdamMoments::zeros(fan_in * fan_out), AdamMoments::zeros(fan_out)));
    }
    Ok(EncoderParams {
        layers,
        adam: AdamConfig::default(),
        moments,
        step_count: 0,
        seed,
    })
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: DenseMatrix,
    /// Pre-activation of each layer.
    pub pre: Vec<DenseMatrix>,
    /// Activation output of each layer; the last one is the raw projector output.
    pub post: Vec<DenseMatrix>,
    /// L2 norm of each raw projector row.
    pub norms: Vec<f64>,
    /// Unit-normalized embedding rows.
    pub z: DenseMatrix,
}

fn layer_forward(layer: &Layer, input: &DenseMatrix) -> DenseMatrix {
    let mut pre = DenseMatrix::zeros(input.rows(), layer.fan_out());
    gemm(1.0, input, false, &layer.weight, false, 0.0, &mut pre).expect("layer shapes");
    let cols = pre.cols();
    for row in pre.as_mut_slice().chunks_exact_mut(cols.max(1)) {
        for (v, b) in row.iter_mut().zip(&layer.bias) {
            *v += b;
        }
    }
    pre
}

fn activate(act: Activation, pre: &DenseMatrix) -> DenseMatrix {
    match act {
        Activation::Identity => pre.clone(),
        Activation::Relu => {
            let mut out = pre.clone();
            out.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            out
        }
    }
}

fn normalize_rows(raw: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>)> {
    let mut z = raw.clone();
    let mut norms = Vec::with_capacity(raw.rows());
    for i in 0..raw.rows() {
        let row = z.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm >= NORM_EPS) {
            return Err(EncoderError::DegenerateNorm { row: i, norm });
        }
        row.iter_mut().for_each(|v| *v /= norm);
        norms.push(norm);
    }
    Ok((z, norms))
}

fn check_input(p: &EncoderParams, x: &DenseMatrix) -> Result<()> {
    if x.cols() != p.input_dim() {
        return Err(EncoderError::DimensionMismatch {
            expected: p.input_dim(),
            found: x.cols(),
        });
    }
    Ok(())
}

/// Forward pass retaining intermediate activations.
pub fn forward(p: &EncoderParams, x: &DenseMatrix) -> Result<ForwardTrace> {
    check_input(p, x)?;
    let mut pre = Vec::with_capacity(p.layers.len());
    let mut post: Vec<DenseMatrix> = Vec::with_capacity(p.layers.len());
    for (l, layer) in p.layers.iter().enumerate() {
        let input = if l == 0 { x } else { &post[l - 1] };
        let a = layer_forward(layer, input);
        let h = activate(layer.activation, &a);
        if h.find_non_finite().is_some() {
            return Err(EncoderError::NonFiniteActivation { layer: l });
        }
        pre.push(a);
        post.push(h);
    }
    let (z, norms) = normalize_rows(post.last().expect("layers"))?;
    Ok(ForwardTrace {
        input: x.clone(),
        pre,
        post,
        norms,
        z,
    })
}

/// Inference-only forward pass over `x` in fixed-size row chunks.
pub fn embed(p: &EncoderParams, x: &DenseMatrix) -> Result<DenseMatrix> {
    check_input(p, x)?;
    let mut out = DenseMatrix::zeros(x.rows(), p.embed_dim());
    let mut start = 0;
    while start < x.rows() {
        let end = (start + EMBED_CHUNK).min(x.rows());
        let idx: Vec<usize> = (start..end).collect();
        let mut h = x.select_rows(&idx);
        for (l, layer) in p.layers.iter().enumerate() {
            h = activate(layer.activation, &layer_forward(layer, &h));
            if h.find_non_finite().is_some() {
                return Err(EncoderError::NonFiniteActivation { layer: l });
            }
        }
        let (z, _) = normalize_rows(&h).map_err(|e| match e {
            EncoderError::DegenerateNorm { row, norm } => EncoderError::DegenerateNorm {
                row: row + start,
                norm,
            },
            other => other,
        })?;
        out.as_mut_slice()[start * p.embed_dim()..end * p.embed_dim()]
            .copy_from_slice(z.as_slice());
        start = end;
    }
    Ok(out)
}

/// Gradients for every layer's weight and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<(DenseMatrix, Vec<f64>)>,
}

impl ParamGrads {
    pub fn zeros_like(p: &EncoderParams) -> Self {
        Self {
            layers: p
                .layers
                .iter()
                .map(|l| (DenseMatrix::zeros(l.fan_in(), l.fan_out()), vec![0.0; l.fan_out()]))
                .collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.as_slice().iter().all(|v| *v == 0.0) && b.iter().all(|v| *v == 0.0))
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.as_slice().iter().chain(b.iter()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Reverse-mode gradient of a scalar loss given `grad_z = dL/dz`.
pub fn backward(p: &EncoderParams, trace: &ForwardTrace, grad_z: &DenseMatrix) -> Result<ParamGrads> {
    if grad_z.shape() != trace.z.shape() {
        return Err(EncoderError::ShapeMismatch {
            expected: trace.z.shape(),
            found: grad_z.shape(),
        });
    }
    // through z = r / ||r||: dL/dr = (g - z (z . g)) / ||r||
    let mut g = grad_z.clone();
    for i in 0..g.rows() {
        let zi = trace.z.row(i);
        let gi = g.row_mut(i);
        let proj: f64 = zi.iter().zip(gi.iter()).map(|(a, b)| a * b).sum();
        let inv = 1.0 / trace.norms[i];
        for (gv, zv) in gi.iter_mut().zip(zi) {
            *gv = (*gv - zv * proj) * inv;
        }
    }
    let mut grads = Vec::with_capacity(p.layers.len());
    for l in (0..p.layers.len()).rev() {
        let layer = &p.layers[l];
        if layer.activation == Activation::Relu {
            for (gv, a) in g.as_mut_slice().iter_mut().zip(trace.pre[l].as_slice()) {
                if *a <= 0.0 {
                    *gv = 0.0;
                }
            }
        }
        let input = if l == 0 { &trace.input } else { &trace.post[l - 1] };
        let mut dw = DenseMatrix::zeros(layer.fan_in(), layer.fan_out());
        gemm(1.0, input, true, &g, false, 0.0, &mut dw).expect("grad shapes");
        let mut db = vec![0.0; layer.fan_out()];
        for row in g.rows_iter() {
            for (d, v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        if l > 0 {
            let mut prev = DenseMatrix::zeros(g.rows(), layer.fan_in());
            gemm(1.0, &g, false, &layer.weight, true, 0.0, &mut prev).expect("grad shapes");
            g = prev;
        }
        grads.push((dw, db));
    }
    grads.reverse();
    Ok(ParamGrads { layers: grads })
}

/// One Adam step with learning rate `lr`.
pub fn step(p: &mut EncoderParams, grads: &ParamGrads, lr: f64) -> Result<()> {
    for (l, (dw, db)) in grads.layers.iter().enumerate() {
        if dw.find_non_finite().is_some() || db.iter().any(|v| !v.is_finite()) {
            return Err(EncoderError::NonFiniteGradient { layer: l });
        }
    }
    p.step_count += 1;
    let t = p.step_count;
    let adam = p.adam;
    for ((layer, (mw, mb)), (dw, db)) in p
        .layers
        .iter_mut()
        .zip(p.moments.iter_mut())
        .zip(&grads.layers)
    {
        mw.update(&adam, layer.weight.as_mut_slice(), dw.as_slice(), lr, t);
        mb.update(&adam, &mut layer.bias, db, lr, t);
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    format: String,
    version: u32,
    layers: Vec<LayerManifest>,
    tensors: Vec<String>,
    adam: AdamConfig,
    step_count: u64,
    seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerManifest {
    fan_in: usize,
    fan_out: usize,
    activation: Activation,
}

const CHECKPOINT_FORMAT: &str = "maple-encoder-checkpoint";

/// Writes `u64 manifest_len | manifest JSON | MPLB tensor blobs`.
pub fn save_checkpoint(p: &EncoderParams, path: &Path) -> Result<()> {
    let mut tensors = Vec::new();
    let mut blobs: Vec<DenseMatrix> = Vec::new();
    for (l, (layer, (mw, mb))) in p.layers.iter().zip(&p.moments).enumerate() {
        let (fi, fo) = (layer.fan_in(), layer.fan_out());
        let row = |v: &[f64]| DenseMatrix::from_vec(1, v.len(), v.to_vec()).expect("shape");
        let mat = |v: &[f64]| DenseMatrix::from_vec(fi, fo, v.to_vec()).expect("shape");
        for (name, t) in [
            ("weight", layer.weight.clone()),
            ("bias", row(&layer.bias)),
            ("weight.adam_m", mat(&mw.m)),
            ("weight.adam_v", mat(&mw.v)),
            ("bias.adam_m", row(&mb.m)),
            ("bias.adam_v", row(&mb.v)),
        ] {
            tensors.push(format!("layer{l}.{name}"));
            blobs.push(t);
        }
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        version: 1,
        layers: p
            .layers
            .iter()
            .map(|l| LayerManifest {
                fan_in: l.fan_in(),
                fan_out: l.fan_out(),
                activation: l.activation,
            })
            .collect(),
        tensors,
        adam: p.adam,
        step_count: p.step_count,
        seed: p.seed,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| EncoderError::Checkpoint(e.to_string()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for b in &blobs {
        write_mplb(&mut w, b, None, ElementType::F64)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<EncoderParams> {
    let mut r = BufReader::new(File::open(path)?);
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 26 {
        return Err(EncoderError::Checkpoint(format!("manifest length {len} is implausible")));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let manifest: CheckpointManifest =
        serde_json::from_slice(&json).map_err(|e| EncoderError::Checkpoint(e.to_string()))?;
    if manifest.format != CHECKPOINT_FORMAT || manifest.version != 1 {
        return Err(EncoderError::Checkpoint(format!(
            "unsupported checkpoint {} v{}",
            manifest.format, manifest.version
        )));
    }
    let mut next = || -> Result<DenseMatrix> {
        read_mplb(&mut r, None)
            .map(|b| b.x)
            .map_err(|e: IngestError| EncoderError::Checkpoint(e.to_string()))
    };
    let mut layers = Vec::new();
    let mut moments = Vec::new();
    for lm in &manifest.layers {
        let weight = next()?;
        let bias = next()?.into_vec();
        let wm = next()?.into_vec();
        let wv = next()?.into_vec();
        let bm = next()?.into_vec();
        let bv = next()?.into_vec();
        if weight.shape() != (lm.fan_in, lm.fan_out) || bias.len() != lm.fan_out {
            return Err(EncoderError::Checkpoint("tensor shape disagrees with manifest".into()));
        }
        layers.push(Layer {
            weight,
            bias,
            activation: lm.activation,
        });
        moments.push((AdamMoments { m: wm, v: wv }, AdamMoments { m: bm, v: bv }));
    }
    if layers.is_empty() {
        return Err(EncoderError::Checkpoint("no layers".into()));
    }
    Ok(EncoderParams {
        layers,
        adam: manifest.adam,
        moments,
        step_count: manifest.step_count,
        seed: manifest.seed,
    })
}
