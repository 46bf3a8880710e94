//! Data matrices: synthetic construction, centering, the bias reduction, and
//! IDX ingestion.

use std::path::Path;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::error::{invalid, shape, Result};
use crate::spectra::{self, ensure_finite, haar_with, Matrix, SpectralDecomposition, Vector};

/// Data matrix `X` (m features × n samples) with its gram matrix and SVD cached.
#[derive(Debug, Clone)]
pub struct DataMatrix {
    x: Matrix,
    centered: bool,
    svd: SpectralDecomposition,
    gram: Matrix,
    gram_eigen: OnceLock<(Vector, Matrix)>,
}

impl DataMatrix {
    pub fn new(x: Matrix) -> Result<Self> {
        Self::build(x, false)
    }

    fn build(x: Matrix, centered: bool) -> Result<Self> {
        ensure_finite(&x)?;
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(invalid("data matrix must be non-empty"));
        }
        let gram = &x * x.transpose();
        let gram = (&gram + gram.transpose()) * 0.5;
        let svd = spectra::svd(&x)?;
        Ok(DataMatrix { x, centered, svd, gram, gram_eigen: OnceLock::new() })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn m(&self) -> usize {
        self.x.nrows()
    }

    pub fn n(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn svd(&self) -> &SpectralDecomposition {
        &self.svd
    }

    /// `XXᵀ`.
    pub fn gram(&self) -> &Matrix {
        &self.gram
    }

    /// Squared singular values, padded with zeros up to length m.
    pub fn sigma_squared(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.svd.values.iter().map(|s| s * s).collect();
        out.resize(self.m(), 0.0);
        out
    }

    /// Full eigendecomposition of the gram matrix (eigenvalues descending).
    pub fn gram_eigen(&self) -> &(Vector, Matrix) {
        self.gram_eigen.get_or_init(|| spectra::symmetric_eigen(&self.gram))
    }

    /// Position of the first pair of (relatively) coincident singular values.
    pub fn repeated_singular_values(&self, rtol: f64) -> Option<(usize, usize)> {
        let s = self.sigma_squared();
        s.windows(2)
            .position(|w| (w[0] - w[1]).abs() <= rtol * w[0].abs().max(f64::MIN_POSITIVE))
            .map(|i| (i, i + 1))
    }
}

fn validate_spectrum(m: usize, n: usize, spectrum: &[f64]) -> Result<()> {
    if spectrum.len() > m.min(n) {
        return Err(invalid(format!(
            "spectrum has {} values but min(m, n) = {}",
            spectrum.len(),
            m.min(n)
        )));
    }
    if spectrum.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(invalid("spectrum values must be positive and finite"));
    }
    if spectrum.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid("spectrum must be strictly descending"));
    }
    Ok(())
}

/// `X = U diag(spectrum) Vᵀ` with Haar-random `U` (m×m) and `V` (n×n).
pub fn synthetic(m: usize, n: usize, spectrum: &[f64], seed: u64) -> Result<DataMatrix> {
    if m == 0 || n == 0 {
        return Err(invalid("synthetic data needs m, n >= 1"));
    }
    validate_spectrum(m, n, spectrum)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = haar_with(m, &mut rng);
    let v = haar_with(n, &mut rng);
    let r = spectrum.len();
    let mut scaled = u.columns(0, r).into_owned();
    for (j, s) in spectrum.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*s);
    }
    DataMatrix::new(scaled * v.columns(0, r).transpose())
}

/// σ_i = count, count-1, ..., 1.
pub fn descending_spectrum(count: usize) -> Vec<f64> {
    (1..=count).rev().map(|i| i as f64).collect()
}

pub fn row_means(x: &Matrix) -> Vector {
    let n = x.ncols().max(1) as f64;
    Vector::from_iterator(x.nrows(), x.row_iter().map(|r| r.sum() / n))
}

/// `X̄ = X − μ e_nᵀ`.
pub fn mean_center(x: &Matrix) -> Result<DataMatrix> {
    if x.ncols() == 0 {
        return Err(invalid("mean_center needs at least one column"));
    }
    ensure_finite(x)?;
    let mu = row_means(x);
    let mut centered = x.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mu;
    }
    DataMatrix::build(centered, true)
}

fn check_params(w1: &Matrix, w2: &Matrix, m: usize) -> Result<()> {
    if w1.ncols() != m || w2.nrows() != m || w1.nrows() != w2.ncols() {
        return Err(shape(format!(
            "encoder {}x{} / decoder {}x{} do not fit data with m = {m}",
            w1.nrows(),
            w1.ncols(),
            w2.nrows(),
            w2.ncols()
        )));
    }
    Ok(())
}

/// Optimal output bias `b = (I − W2W1)μ` for uncentered `X`.
pub fn optimal_bias(w1: &Matrix, w2: &Matrix, x: &Matrix) -> Result<Vector> {
    check_params(w1, w2, x.nrows())?;
    let mu = row_means(x);
    let mapped = w2 * (w1 * &mu);
    Ok(mu - mapped)
}

/// `‖X − W2W1X − b e_nᵀ‖²_F`.
pub fn bias_loss(w1: &Matrix, w2: &Matrix, b: &Vector, x: &Matrix) -> Result<f64> {
    check_params(w1, w2, x.nrows())?;
    if b.len() != x.nrows() {
        return Err(shape("bias length must equal m"));
    }
    let mut residual = x - w2 * (w1 * x);
    for mut col in residual.column_iter_mut() {
        col -= b;
    }
    Ok(residual.norm_squared())
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("bad magic 0x{found:08x} at offset {offset}")]
    BadMagic { found: u32, offset: usize },
    #[error("truncated payload at offset {offset}: need {needed} bytes, have {available}")]
    Truncated { offset: usize, needed: usize, available: usize },
    #[error("dimension overflow at offset {offset}")]
    DimensionOverflow { offset: usize },
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdxKind {
    Images,
    Labels,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxHeader {
    pub kind: IdxKind,
    /// Item count first, then per-item dimensions.
    pub dims: Vec<usize>,
    pub payload_offset: usize,
    pub payload_len: usize,
}

/// Decoded IDX file. Images are one column per item (rows·cols × count)
/// scaled to [0, 1]; labels are a 1 × count row of raw label values.
#[derive(Debug, Clone)]
pub struct IdxArray {
    pub header: IdxHeader,
    pub matrix: Matrix,
}

fn read_u32(bytes: &[u8], offset: usize) -> std::result::Result<u32, IdxError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(IdxError::Truncated {
            offset,
            needed: 4,
            available: bytes.len().saturating_sub(offset),
        })
}

pub fn read_idx_header(bytes: &[u8]) -> std::result::Result<IdxHeader, IdxError> {
    let magic = read_u32(bytes, 0)?;
    let (kind, ndims) = match magic {
        IDX_IMAGES_MAGIC => (IdxKind::Images, 3),
        IDX_LABELS_MAGIC => (IdxKind::Labels, 1),
        found => return Err(IdxError::BadMagic { found, offset: 0 }),
    };
    let mut dims = Vec::with_capacity(ndims);
    let mut total: usize = 1;
    for d in 0..ndims {
        let offset = 4 + 4 * d;
        let dim = read_u32(bytes, offset)? as usize;
        total = total.checked_mul(dim).ok_or(IdxError::DimensionOverflow { offset })?;
        dims.push(dim);
    }
    let payload_offset = 4 + 4 * ndims;
    Ok(IdxHeader { kind, dims, payload_offset, payload_len: total })
}

pub fn parse_idx(bytes: &[u8]) -> std::result::Result<IdxArray, IdxError> {
    let header = read_idx_header(bytes)?;
    let start = header.payload_offset;
    let available = bytes.len().saturating_sub(start);
    if available < header.payload_len {
        return Err(IdxError::Truncated { offset: start, needed: header.payload_len, available });
    }
    let payload = &bytes[start..start + header.payload_len];
    let count = header.dims[0];
    let matrix = match header.kind {
        IdxKind::Images => {
            let per_item = header.dims[1] * header.dims[2];
            Matrix::from_iterator(per_item, count, payload.iter().map(|p| f64::from(*p) / 255.0))
        }
        IdxKind::Labels => Matrix::from_iterator(1, count, payload.iter().map(|p| f64::from(*p))),
    };
    Ok(IdxArray { header, matrix })
}

pub fn load_idx(path: impl AsRef<Path>) -> std::result::Result<IdxArray, IdxError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)
        .map_err(|source| IdxError::Io { path: path.display().to_string(), source })?;
    parse_idx(&bytes)
}

/// Serialize an unsigned-byte image file (`pixels` item-major, row-major per item).
pub fn encode_idx_images(pixels: &[u8], count: usize, rows: usize, cols: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}
