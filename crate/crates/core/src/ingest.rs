//! Dataset loading (CSV and the MPLB binary matrix format), optional
//! standardization, and synthetic up-scaling of image datasets for runtime
//! experiments.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::DenseMatrix;

pub const MPLB_MAGIC: &[u8; 4] = b"MPLB";
pub const MPLB_VERSION: u32 = 1;
const MPLB_HEADER_LEN: u64 = 4 + 4 + 8 + 8 + 1 + 1;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: u64,
        column: usize,
        message: String,
    },
    #[error("ragged rows: line {line} has {found} fields, expected {expected}")]
    RaggedRows {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("bad magic: expected \"MPLB\"")]
    BadMagic,
    #[error("file is truncated: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: u64, found: u64 },
    #[error("unsupported MPLB version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported MPLB dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("file has {0} trailing bytes after the payload")]
    TrailingData(u64),
    #[error("standardize needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("resizing requires an image shape on the dataset")]
    MissingImageShape,
    #[error("target size {target} is smaller than the source size {source_n}")]
    TargetSmallerThanSource { target: usize, source_n: usize },
    #[error("target dimension {0} is not a perfect square")]
    InvalidTargetDim(usize),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, IngestError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Element type of an MPLB payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ElementType {
    F32,
    #[default]
    F64,
}

impl ElementType {
    fn code(self) -> u8 {
        match self {
            ElementType::F32 => 0,
            ElementType::F64 => 1,
        }
    }

    fn width(self) -> u64 {
        match self {
            ElementType::F32 => 4,
            ElementType::F64 => 8,
        }
    }
}

/// A labeled high-dimensional dataset; rows are data points.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DenseMatrix,
    pub labels: Option<Vec<u32>>,
    pub label_names: Option<BTreeMap<u32, String>>,
    /// `(height, width)` of grayscale images stored row-major in each row.
    pub image_shape: Option<(usize, usize)>,
    pub source: String,
    /// Precision of the originating binary file, preserved for round trips.
    pub storage: ElementType,
}

impl Dataset {
    pub fn new(x: DenseMatrix, labels: Option<Vec<u32>>, source: impl Into<String>) -> Result<Self> {
        let ds = Self {
            x,
            labels,
            label_names: None,
            image_shape: None,
            source: source.into(),
            storage: ElementType::F64,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn with_image_shape(mut self, h: usize, w: usize) -> Result<Self> {
        self.image_shape = Some((h, w));
        self.validate()?;
        Ok(self)
    }

    pub fn with_label_names(mut self, names: BTreeMap<u32, String>) -> Result<Self> {
        self.label_names = Some(names);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(labels) = &self.labels {
            if labels.len() != self.n() {
                return Err(IngestError::Invalid(format!(
                    "{} labels for {} rows",
                    labels.len(),
                    self.n()
                )));
            }
            if let Some(names) = &self.label_names {
                if let Some(bad) = labels.iter().find(|l| !names.contains_key(l)) {
                    return Err(IngestError::Invalid(format!(
                        "label {bad} has no entry in label_names"
                    )));
                }
            }
        }
        if let Some((h, w)) = self.image_shape {
            if h * w != self.dim() {
                return Err(IngestError::Invalid(format!(
                    "image shape {h}x{w} does not match dimension {}",
                    self.dim()
                )));
            }
        }
        if let Some((row, col)) = self.x.find_non_finite() {
            return Err(IngestError::Invalid(format!(
                "non-finite value at row {row}, column {col}"
            )));
        }
        Ok(())
    }

    /// Rows `idx` in order, labels kept aligned.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(idx),
            labels: self
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
            label_names: self.label_names.clone(),
            image_shape: self.image_shape,
            source: self.source.clone(),
            storage: self.storage,
        }
    }

    /// Seeded subsample of `n` rows without replacement; original order kept.
    pub fn subsample(&self, n: usize, seed: u64) -> Self {
        if n >= self.n() {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, self.n(), n).into_vec();
        idx.sort_unstable();
        let mut out = self.subset(&idx);
        out.source = format!("{} [subsample n={n} seed={seed}]", self.source);
        out
    }

    pub fn label_name(&self, id: u32) -> String {
        self.label_names
            .as_ref()
            .and_then(|m| m.get(&id).cloned())
            .unwrap_or_else(|| id.to_string())
    }
}

/// Reads a numeric CSV. When `label_column` is set, that column becomes the
/// label vector: integer cells are used as ids directly, any other content is
/// mapped to ids in order of first appearance and recorded in `label_names`.
pub fn load_csv(path: &Path, has_header: bool, label_column: Option<usize>) -> Result<Dataset> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));

    let mut data = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    let mut width: Option<usize> = None;
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            column: 0,
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let found = record.len();
        match width {
            None => width = Some(found),
            Some(expected) if expected != found => {
                return Err(IngestError::RaggedRows {
                    line,
                    expected,
                    found,
                })
            }
            _ => {}
        }
        if let Some(lc) = label_column {
            if lc >= found {
                return Err(IngestError::Parse {
                    line,
                    column: lc,
                    message: format!("label column {lc} out of range ({found} fields)"),
                });
            }
        }
        for (column, cell) in record.iter().enumerate() {
            if Some(column) == label_column {
                raw_labels.push(cell.to_string());
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| IngestError::Parse {
                line,
                column,
                message: format!("cannot parse {cell:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(IngestError::Parse {
                    line,
                    column,
                    message: format!("non-finite value {cell:?}"),
                });
            }
            data.push(v);
        }
        rows += 1;
    }
    let cols = width.unwrap_or(0) - usize::from(label_column.is_some() && width.is_some());
    let x = DenseMatrix::from_vec(rows, cols, data)
        .map_err(|e| IngestError::Invalid(e.to_string()))?;

    let (labels, names) = if label_column.is_some() {
        let (l, n) = encode_labels(&raw_labels);
        (Some(l), n)
    } else {
        (None, None)
    };
    let mut ds = Dataset::new(x, labels, path.display().to_string())?;
    ds.label_names = names;
    Ok(ds)
}

fn encode_labels(raw: &[String]) -> (Vec<u32>, Option<BTreeMap<u32, String>>) {
    if let Ok(ids) = raw.iter().map(|s| s.parse::<u32>()).collect::<std::result::Result<Vec<_>, _>>() {
        return (ids, None);
    }
    let mut names = BTreeMap::new();
    let mut lookup: BTreeMap<&str, u32> = BTreeMap::new();
    let ids = raw
        .iter()
        .map(|s| {
            let next = lookup.len() as u32;
            *lookup.entry(s.as_str()).or_insert_with(|| {
                names.insert(next, s.clone());
                next
            })
        })
        .collect();
    (ids, Some(names))
}

/// Writes `ds` in MPLB format using `ds.storage` as the payload precision.
pub fn save_matrix_binary(ds: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    write_mplb(&mut w, &ds.x, ds.labels.as_deref(), ds.storage).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Serializes a matrix (and optional labels) as an MPLB blob.
pub fn write_mplb<W: Write>(
    w: &mut W,
    x: &DenseMatrix,
    labels: Option<&[u32]>,
    dtype: ElementType,
) -> std::io::Result<()> {
    w.write_all(MPLB_MAGIC)?;
    w.write_all(&MPLB_VERSION.to_le_bytes())?;
    w.write_all(&(x.rows() as u64).to_le_bytes())?;
    w.write_all(&(x.cols() as u64).to_le_bytes())?;
    w.write_all(&[dtype.code(), u8::from(labels.is_some())])?;
    match dtype {
        ElementType::F32 => {
            for v in x.as_slice() {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        ElementType::F64 => {
            for v in x.as_slice() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    if let Some(labels) = labels {
        for l in labels {
            w.write_all(&l.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Parsed MPLB blob.
pub struct MplbBlob {
    pub x: DenseMatrix,
    pub labels: Option<Vec<u32>>,
    pub dtype: ElementType,
}

/// Reads one MPLB blob from `r`. `available` is the number of bytes left in
/// the source, used to reject truncated files before allocating.
pub fn read_mplb<R: Read>(r: &mut R, available: Option<u64>) -> Result<MplbBlob> {
    let mut header = [0u8; MPLB_HEADER_LEN as usize];
    read_exact_or_truncated(r, &mut header, MPLB_HEADER_LEN, available)?;
    if &header[0..4] != MPLB_MAGIC {
        return Err(IngestError::BadMagic);
    }
    let version = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes"));
    if version != MPLB_VERSION {
        return Err(IngestError::UnsupportedVersion(version));
    }
    let rows = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes"));
    let cols = u64::from_le_bytes(header[16..24].try_into().expect("8 bytes"));
    let dtype = match header[24] {
        0 => ElementType::F32,
        1 => ElementType::F64,
        other => return Err(IngestError::UnsupportedDtype(other)),
    };
    let has_labels = header[25] != 0;
    let payload = rows
        .checked_mul(cols)
        .and_then(|c| c.checked_mul(dtype.width()))
        .ok_or_else(|| IngestError::Invalid("matrix shape overflows".into()))?;
    let label_bytes = if has_labels { rows * 4 } else { 0 };
    let needed = MPLB_HEADER_LEN + payload + label_bytes;
    if let Some(avail) = available {
        if avail < needed {
            return Err(IngestError::TruncatedFile {
                expected: needed,
                found: avail,
            });
        }
    }
    let (rows, cols) = (rows as usize, cols as usize);
    let mut data = Vec::with_capacity(rows * cols);
    // stream one row at a time
    let mut buf = vec![0u8; cols * dtype.width() as usize];
    for _ in 0..rows {
        read_exact_or_truncated(r, &mut buf, needed, available)?;
        match dtype {
            ElementType::F32 => data.extend(
                buf.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64),
            ),
            ElementType::F64 => data.extend(
                buf.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))),
            ),
        }
    }
    let labels = if has_labels {
        let mut lb = vec![0u8; rows * 4];
        read_exact_or_truncated(r, &mut lb, needed, available)?;
        Some(
            lb.chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect(),
        )
    } else {
        None
    };
    let x = DenseMatrix::from_vec(rows, cols, data).map_err(|e| IngestError::Invalid(e.to_string()))?;
    Ok(MplbBlob { x, labels, dtype })
}

fn read_exact_or_truncated<R: Read>(
    r: &mut R,
    buf: &mut [u8],
    expected: u64,
    available: Option<u64>,
) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => IngestError::TruncatedFile {
            expected,
            found: available.unwrap_or(0),
        },
        _ => IngestError::Io {
            path: "<stream>".into(),
            source: e,
        },
    })
}

/// Loads an MPLB file.
pub fn load_matrix_binary(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(io_err(path))?;
    let len = file.metadata().map_err(io_err(path))?.len();
    let mut r = BufReader::new(file);
    let blob = read_mplb(&mut r, Some(len))?;
    let consumed = MPLB_HEADER_LEN
        + (blob.x.rows() * blob.x.cols()) as u64 * blob.dtype.width()
        + blob.labels.as_ref().map_or(0, |l| l.len() as u64 * 4);
    if len > consumed {
        return Err(IngestError::TrailingData(len - consumed));
    }
    let mut ds = Dataset::new(blob.x, blob.labels, path.display().to_string())?;
    ds.storage = blob.dtype;
    Ok(ds)
}

/// Per-feature z-scoring with population variance; constant features map to 0.
pub fn standardize(ds: &Dataset) -> Result<Dataset> {
    let n = ds.n();
    if n < 2 {
        return Err(IngestError::TooFewRows(n));
    }
    let d = ds.dim();
    let means = ds.x.column_means();
    let mut var = vec![0.0; d];
    for row in ds.x.rows_iter() {
        for ((v, x), m) in var.iter_mut().zip(row).zip(&means) {
            *v += (x - m) * (x - m);
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / n as f64).sqrt()).collect();
    let x = DenseMatrix::from_fn(n, d, |i, j| {
        if std[j] > 0.0 {
            (ds.x.get(i, j) - means[j]) / std[j]
        } else {
            0.0
        }
    });
    let mut out = ds.clone();
    out.x = x;
    out.source = format!("{} [standardized]", ds.source);
    Ok(out)
}

/// Magnitudes of the augmentations applied to oversampled rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentParams {
    /// Gaussian noise std as a fraction of the dataset's dynamic range.
    pub noise_sigma: f64,
    /// Maximum absolute rotation, degrees.
    pub max_rotation_deg: f64,
    /// Maximum absolute brightness shift as a fraction of the dynamic range.
    pub brightness: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            noise_sigma: 0.05,
            max_rotation_deg: 15.0,
            brightness: 0.10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Augment {
    Noise,
    Brightness,
    Rotation,
    Flip,
}

/// Oversamples `ds` to `target_n` rows (augmented copies) and optionally
/// resamples every image to a `sqrt(target_dim)`-square resolution.
/// Two isotropic unit-variance Gaussian blobs in `dim` dimensions whose means
/// are `separation` apart along the all-ones direction. Rows alternate
/// between blobs; `label_noise` of the labels (rounded) are then flipped.
pub fn two_gaussians(n: usize, dim: usize, separation: f64, label_noise: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(IngestError::TooFewRows(n));
    }
    if dim == 0 {
        return Err(IngestError::Invalid("dim must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&label_noise) {
        return Err(IngestError::Invalid(format!("label_noise must lie in [0, 1], got {label_noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let shift = separation / 2.0 / (dim as f64).sqrt();
    let mut labels: Vec<u32> = (0..n).map(|i| (i % 2) as u32).collect();
    let x = DenseMatrix::from_fn(n, dim, |i, _| {
        let sign = if labels[i] == 0 { -1.0 } else { 1.0 };
        sign * shift + normal.sample(&mut rng)
    });
    let flips = (label_noise * n as f64).round() as usize;
    for i in rand::seq::index::sample(&mut rng, n, flips) {
        labels[i] = 1 - labels[i];
    }
    Dataset::new(x, Some(labels), format!("two_gaussians(n={n}, dim={dim}, sep={separation}, noise={label_noise}, seed={seed})"))
}

pub fn synth_scale(
    ds: &Dataset,
    target_n: usize,
    target_dim: Option<usize>,
    seed: u64,
) -> Result<Dataset> {
    synth_scale_with(ds, target_n, target_dim, seed, &AugmentParams::default())
}

pub fn synth_scale_with(
    ds: &Dataset,
    target_n: usize,
    target_dim: Option<usize>,
    seed: u64,
    params: &AugmentParams,
) -> Result<Dataset> {
    let n = ds.n();
    if target_n < n {
        return Err(IngestError::TargetSmallerThanSource {
            target: target_n,
            source_n: n,
        });
    }
    let side = match target_dim {
        Some(td) => {
            if ds.image_shape.is_none() {
                return Err(IngestError::MissingImageShape);
            }
            let s = (td as f64).sqrt().round() as usize;
            if s * s != td || s == 0 {
                return Err(IngestError::InvalidTargetDim(td));
            }
            Some(s)
        }
        None => None,
    };
    if target_n == n && side.is_none() {
        return Ok(ds.clone());
    }
    if n == 0 {
        return Err(IngestError::Invalid("cannot oversample an empty dataset".into()));
    }

    let (lo, hi) = ds
        .x
        .as_slice()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = if hi > lo { hi - lo } else { 1.0 };
    let choices: &[Augment] = if ds.image_shape.is_some() {
        &[Augment::Noise, Augment::Rotation, Augment::Flip, Augment::Brightness]
    } else {
        &[Augment::Noise, Augment::Brightness]
    };
    let noise = Normal::new(0.0, params.noise_sigma * range)
        .map_err(|e| IngestError::Invalid(e.to_string()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = ds.dim();
    let mut data = Vec::with_capacity(target_n * d);
    data.extend_from_slice(ds.x.as_slice());
    let mut labels = ds.labels.clone();
    for r in n..target_n {
        let src = (r - n) % n;
        let row = ds.x.row(src);
        let op = choices[rng.random_range(0..choices.len())];
        let mut out: Vec<f64> = match op {
            Augment::Noise => row.iter().map(|v| v + noise.sample(&mut rng)).collect(),
            Augment::Brightness => {
                let shift = rng.random_range(-params.brightness..=params.brightness) * range;
                row.iter().map(|v| v + shift).collect()
            }
            Augment::Rotation => {
                let (h, w) = ds.image_shape.expect("image op requires shape");
                let deg = rng.random_range(-params.max_rotation_deg..=params.max_rotation_deg);
                rotate_image(row, h, w, deg.to_radians(), lo)
            }
            Augment::Flip => {
                let (h, w) = ds.image_shape.expect("image op requires shape");
                (0..h)
                    .flat_map(|y| (0..w).rev().map(move |x| row[y * w + x]))
                    .collect()
            }
        };
        out.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
        data.extend_from_slice(&out);
        if let Some(l) = labels.as_mut() {
            l.push(l[src]);
        }
    }
    let mut x = DenseMatrix::from_vec(target_n, d, data).expect("shape");
    let mut image_shape = ds.image_shape;
    if let (Some(s), Some((h, w))) = (side, ds.image_shape) {
        let mut resized = Vec::with_capacity(target_n * s * s);
        for row in x.rows_iter() {
            resized.extend(resize_bilinear(row, h, w, s, s));
        }
        x = DenseMatrix::from_vec(target_n, s * s, resized).expect("shape");
        image_shape = Some((s, s));
    }
    Ok(Dataset {
        x,
        labels,
        label_names: ds.label_names.clone(),
        image_shape,
        source: format!(
            "{} [synth n={target_n} dim={} seed={seed}]",
            ds.source,
            target_dim.map_or("native".to_string(), |t| t.to_string())
        ),
        storage: ds.storage,
    })
}

/// Bilinear sample with out-of-range reads returning `fill`.
fn sample_bilinear(img: &[f64], h: usize, w: usize, y: f64, x: f64, fill: f64) -> f64 {
    let y0 = y.floor();
    let x0 = x.floor();
    let (fy, fx) = (y - y0, x - x0);
    let px = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            fill
        } else {
            img[yy as usize * w + xx as usize]
        }
    };
    let top = px(y0, x0) * (1.0 - fx) + px(y0, x0 + 1.0) * fx;
    let bottom = px(y0 + 1.0, x0) * (1.0 - fx) + px(y0 + 1.0, x0 + 1.0) * fx;
    top * (1.0 - fy) + bottom * fy
}

fn rotate_image(img: &[f64], h: usize, w: usize, angle: f64, fill: f64) -> Vec<f64> {
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (s, c) = angle.sin_cos();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            // inverse rotation maps output pixels back to source coordinates
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            let sy = c * dy - s * dx + cy;
            let sx = s * dy + c * dx + cx;
            out.push(sample_bilinear(img, h, w, sy, sx, fill));
        }
    }
    out
}

/// Half-pixel-centered bilinear resampling with edge clamping.
pub fn resize_bilinear(img: &[f64], h: usize, w: usize, nh: usize, nw: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(nh * nw);
    let sy = h as f64 / nh as f64;
    let sx = w as f64 / nw as f64;
    for y in 0..nh {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for x in 0..nw {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            let top = img[y0 * w + x0] * (1.0 - tx) + img[y0 * w + x1] * tx;
            let bottom = img[y1 * w + x0] * (1.0 - tx) + img[y1 * w + x1] * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}
