//! Single-file viewer bundle (`MPLV`). See `docs/viewer-bundle.md` for the
//! byte layout.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Dataset;
use crate::linalg::DenseMatrix;
use crate::metrics::MetricsReport;
use crate::neighbor_graph::build_knn;

pub const BUNDLE_MAGIC: &[u8; 4] = b"MPLV";
pub const BUNDLE_VERSION: u32 = 1;
/// Neighborhood size for the per-point hit rate stored as metadata.
const POINT_HIT_K: usize = 15;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("bad magic: expected \"MPLV\"")]
    BadMagic,
    #[error("unsupported bundle version {0}")]
    UnsupportedVersion(u32),
    #[error("bundle is truncated in the {0} block")]
    Truncated(&'static str),
    #[error("bad header: {0}")]
    Header(String),
    #[error("{0} trailing bytes after the last block")]
    Trailing(u64),
    #[error("invalid bundle: {0}")]
    Invalid(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BundleError>;

/// The JSON header that precedes the binary blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleHeader {
    pub n: usize,
    pub m: usize,
    pub has_labels: bool,
    /// Label id (decimal string) to display name.
    pub label_names: BTreeMap<String, String>,
    pub has_images: bool,
    pub image_shape: Option<(usize, usize)>,
    /// `[lo, hi]` of the original pixel values; byte `q` maps back to `lo + q (hi - lo) / 255`.
    pub pixel_range: Option<(f64, f64)>,
    pub metadata_keys: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewerBundle {
    pub n: usize,
    pub m: usize,
    /// Row-major `n x m`.
    pub coords: Vec<f32>,
    pub labels: Option<Vec<u32>>,
    pub label_names: BTreeMap<u32, String>,
    pub image_shape: Option<(usize, usize)>,
    pub pixel_range: Option<(f64, f64)>,
    /// Row-major `n x (h w)`.
    pub pixels: Option<Vec<u8>>,
    pub metadata_keys: Vec<String>,
    /// `n` rows of `metadata_keys.len()` strings.
    pub metadata: Vec<Vec<String>>,
}

/// Maps values in `[lo, hi]` to bytes.
pub fn quantize(v: f64, lo: f64, hi: f64) -> u8 {
    if hi <= lo {
        return 0;
    }
    (((v - lo) / (hi - lo)) * 255.0).round().clamp(0.0, 255.0) as u8
}

impl ViewerBundle {
    /// Bundle for a layout of `ds`. Metadata carries the row id and, with
    /// labels, each point's neighborhood hit rate.
    pub fn from_run(y: &DenseMatrix, ds: &Dataset, report: Option<&MetricsReport>) -> Self {
        let n = y.rows();
        let coords = y.as_slice().iter().map(|&v| v as f32).collect();
        let (pixels, pixel_range) = match ds.image_shape {
            Some(_) => {
                let (lo, hi) = ds
                    .x
                    .as_slice()
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
                let px = ds.x.as_slice().iter().map(|&v| quantize(v, lo, hi)).collect();
                (Some(px), Some((lo, hi)))
            }
            None => (None, None),
        };
        let mut metadata_keys = vec!["id".to_string()];
        let mut metadata: Vec<Vec<String>> = (0..n).map(|i| vec![i.to_string()]).collect();
        if let Some(labels) = &ds.labels {
            let k = report
                .map(|r| r.config.neighborhood_hit_k)
                .unwrap_or(POINT_HIT_K)
                .min(n.saturating_sub(1));
            if k > 0 {
                if let Ok(g) = build_knn(y, k) {
                    metadata_keys.push("neighborhood_hit".into());
                    for (i, row) in metadata.iter_mut().enumerate() {
                        let hits = g.neighbors(i).iter().filter(|&&j| labels[j] == labels[i]).count();
                        row.push(format!("{:.4}", hits as f64 / k as f64));
                    }
                }
            }
        }
        let mut label_names = ds.label_names.clone().unwrap_or_default();
        if let (Some(labels), true) = (&ds.labels, label_names.is_empty()) {
            for &l in labels {
                label_names.entry(l).or_insert_with(|| l.to_string());
            }
        }
        Self {
            n,
            m: y.cols(),
            coords,
            labels: ds.labels.clone(),
            label_names,
            image_shape: ds.image_shape,
            pixel_range,
            pixels,
            metadata_keys,
            metadata,
        }
    }

    pub fn header(&self) -> BundleHeader {
        BundleHeader {
            n: self.n,
            m: self.m,
            has_labels: self.labels.is_some(),
            label_names: self.label_names.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            has_images: self.pixels.is_some(),
            image_shape: self.image_shape.filter(|_| self.pixels.is_some()),
            pixel_range: self.pixel_range.filter(|_| self.pixels.is_some()),
            metadata_keys: self.metadata_keys.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.coords.len() != self.n * self.m {
            return Err(BundleError::Invalid("coordinate count is not n * m".into()));
        }
        if self.labels.as_ref().is_some_and(|l| l.len() != self.n) {
            return Err(BundleError::Invalid("label count is not n".into()));
        }
        if let Some(px) = &self.pixels {
            let (h, w) = self
                .image_shape
                .ok_or_else(|| BundleError::Invalid("pixels without an image shape".into()))?;
            if px.len() != self.n * h * w {
                return Err(BundleError::Invalid("pixel count is not n * h * w".into()));
            }
        }
        if self.metadata.len() != self.n || self.metadata.iter().any(|r| r.len() != self.metadata_keys.len()) {
            return Err(BundleError::Invalid("metadata is not n rows of one value per key".into()));
        }
        Ok(())
    }

    /// Exact size in bytes once written.
    pub fn encoded_len(&self) -> usize {
        let header = padded_header(&self.header()).len();
        let meta: usize = self.metadata.iter().flatten().map(|s| 4 + s.len()).sum();
        12 + header
            + 4 * self.coords.len()
            + self.labels.as_ref().map_or(0, |l| 4 * l.len())
            + self.pixels.as_ref().map_or(0, Vec::len)
            + meta
    }
}

/// Header JSON padded with spaces so the first binary block starts on a
/// 4-byte boundary.
fn padded_header(h: &BundleHeader) -> Vec<u8> {
    let mut json = serde_json::to_vec(h).expect("header serializes");
    while (12 + json.len()) % 4 != 0 {
        json.push(b' ');
    }
    json
}

pub fn write_bundle<W: Write>(b: &ViewerBundle, mut w: W) -> Result<()> {
    b.validate()?;
    let header = padded_header(&b.header());
    w.write_all(BUNDLE_MAGIC)?;
    w.write_all(&BUNDLE_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    let mut buf = Vec::with_capacity(b.coords.len() * 4);
    for v in &b.coords {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(l) = &b.labels {
        for v in l {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    if let Some(px) = &b.pixels {
        w.write_all(px)?;
    }
    for row in &b.metadata {
        for s in row {
            w.write_all(&(s.len() as u32).to_le_bytes())?;
            w.write_all(s.as_bytes())?;
        }
    }
    Ok(())
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], block: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => BundleError::Truncated(block),
        _ => BundleError::Io(e),
    })
}

pub fn read_bundle<R: Read>(mut r: R) -> Result<ViewerBundle> {
    let mut pre = [0u8; 12];
    read_exact_or(&mut r, &mut pre, "preamble")?;
    if &pre[..4] != BUNDLE_MAGIC {
        return Err(BundleError::BadMagic);
    }
    let version = u32::from_le_bytes(pre[4..8].try_into().expect("4 bytes"));
    if version != BUNDLE_VERSION {
        return Err(BundleError::UnsupportedVersion(version));
    }
    let hlen = u32::from_le_bytes(pre[8..12].try_into().expect("4 bytes")) as usize;
    let mut hbuf = vec![0u8; hlen];
    read_exact_or(&mut r, &mut hbuf, "header")?;
    let h: BundleHeader = serde_json::from_slice(&hbuf).map_err(|e| BundleError::Header(e.to_string()))?;

    let mut coords_raw = vec![0u8; 4 * h.n * h.m];
    read_exact_or(&mut r, &mut coords_raw, "coordinates")?;
    let coords = coords_raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let labels = if h.has_labels {
        let mut raw = vec![0u8; 4 * h.n];
        read_exact_or(&mut r, &mut raw, "labels")?;
        Some(raw.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    } else {
        None
    };
    let pixels = if h.has_images {
        let (ih, iw) = h
            .image_shape
            .ok_or_else(|| BundleError::Header("has_images without image_shape".into()))?;
        let mut px = vec![0u8; h.n * ih * iw];
        read_exact_or(&mut r, &mut px, "pixels")?;
        Some(px)
    } else {
        None
    };
    let mut metadata = Vec::with_capacity(h.n);
    for _ in 0..h.n {
        let mut row = Vec::with_capacity(h.metadata_keys.len());
        for _ in &h.metadata_keys {
            let mut len = [0u8; 4];
            read_exact_or(&mut r, &mut len, "metadata")?;
            let mut s = vec![0u8; u32::from_le_bytes(len) as usize];
            read_exact_or(&mut r, &mut s, "metadata")?;
            row.push(String::from_utf8(s).map_err(|e| BundleError::Invalid(e.to_string()))?);
        }
        metadata.push(row);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(BundleError::Trailing(rest.len() as u64));
    }
    let mut label_names = BTreeMap::new();
    for (k, v) in h.label_names {
        let id: u32 = k
            .parse()
            .map_err(|_| BundleError::Header(format!("label id `{k}` is not an integer")))?;
        label_names.insert(id, v);
    }
    let b = ViewerBundle {
        n: h.n,
        m: h.m,
        coords,
        labels,
        label_names,
        image_shape: h.image_shape,
        pixel_range: h.pixel_range,
        pixels,
        metadata_keys: h.metadata_keys,
        metadata,
    };
    b.validate()?;
    Ok(b)
}
