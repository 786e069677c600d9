//! Document vectors: the on-disk vector format, row normalization, the PCA
//! analysis space, and clients for external embedding/rerank services.

mod hashing;
mod http;
mod projection;
mod service;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use hashing::HashingEmbedder;
pub use http::{HttpEmbeddingClient, HttpServiceConfig};
pub use projection::{fit_projection, ProjectionModel};
pub use service::{
    cosine_to_unit, fetch_embeddings, rank_candidates, EmbeddingService, RankCandidate, RankResult, ServiceError,
};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("row count {rows} does not match id count {ids}")]
    RowMismatch { rows: usize, ids: usize },
    #[error("vector file holds {bytes} bytes, expected {expected} for {rows}x{dim} f32")]
    SizeMismatch { bytes: usize, expected: usize, rows: usize, dim: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("row {row} ({id}) contains a non-finite entry")]
    NonFinite { row: usize, id: String },
    #[error("row {row} ({id}) has zero norm and cannot be normalized")]
    ZeroRow { row: usize, id: String },
    #[error("invalid projection rank r={r}: need 1 <= r <= min(N={n}, p={p})")]
    InvalidRank { r: usize, n: usize, p: usize },
    #[error("projection needs at least two rows, got {0}")]
    TooFewRows(usize),
    #[error("rank request needs at least one candidate")]
    EmptyCandidates,
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Service(#[from] ServiceError),
}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// Rows in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix::new(idx.len(), self.cols, data)
    }

    /// Little-endian bytes of the matrix rounded to f32.
    pub fn to_f32_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
    }

    pub fn to_f64_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|&v| v.to_le_bytes()).collect()
    }

    pub fn from_f64_le_bytes(rows: usize, cols: usize, bytes: &[u8]) -> Option<Matrix> {
        if bytes.len() != rows * cols * 8 {
            return None;
        }
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Some(Matrix::new(rows, cols, data))
    }

    pub fn from_f32_le_bytes(rows: usize, cols: usize, bytes: &[u8]) -> Option<Matrix> {
        if bytes.len() != rows * cols * 4 {
            return None;
        }
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        Some(Matrix::new(rows, cols, data))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; `None` when either vector has zero norm.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(dot(a, b) / (na * nb))
}

/// Mean of the selected rows.
pub fn centroid(m: &Matrix, rows: &[usize]) -> Vec<f64> {
    let mut c = vec![0.0; m.cols()];
    for &i in rows {
        for (acc, v) in c.iter_mut().zip(m.row(i)) {
            *acc += v;
        }
    }
    let n = rows.len().max(1) as f64;
    c.iter_mut().for_each(|v| *v /= n);
    c
}

/// Sidecar manifest describing a vector file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VectorManifest {
    pub n: usize,
    pub p: usize,
    pub encoder_name: String,
    pub normalized: bool,
}

/// Row-aligned document vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub ids: Vec<String>,
    pub vectors: Matrix,
    pub normalized: bool,
    pub encoder_name: String,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, vectors: Matrix, encoder_name: impl Into<String>) -> Result<Self, EmbeddingError> {
        if ids.len() != vectors.rows() {
            return Err(EmbeddingError::RowMismatch { rows: vectors.rows(), ids: ids.len() });
        }
        for (row, v) in vectors.iter_rows().enumerate() {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EmbeddingError::NonFinite { row, id: ids[row].clone() });
            }
        }
        Ok(Self { ids, vectors, normalized: false, encoder_name: encoder_name.into() })
    }

    pub fn from_f32_rows(
        ids: Vec<String>,
        rows: &[Vec<f32>],
        encoder_name: impl Into<String>,
    ) -> Result<Self, EmbeddingError> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(EmbeddingError::DimensionMismatch { expected: dim, found: r.len() });
            }
            data.extend(r.iter().map(|&v| v as f64));
        }
        Self::new(ids, Matrix::new(rows.len(), dim, data), encoder_name)
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// L2-normalize every row in place.
    pub fn normalize(&mut self) -> Result<(), EmbeddingError> {
        for row in 0..self.vectors.rows() {
            let n = norm(self.vectors.row(row));
            if n == 0.0 {
                return Err(EmbeddingError::ZeroRow { row, id: self.ids[row].clone() });
            }
            self.vectors.row_mut(row).iter_mut().for_each(|v| *v /= n);
        }
        self.normalized = true;
        Ok(())
    }

    /// Write `path` (f32 little-endian, row-major) plus its manifest sidecar.
    pub fn write(&self, path: &Path) -> Result<(), EmbeddingError> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(&self.vectors.to_f32_le_bytes())?;
        out.flush()?;
        let manifest = VectorManifest {
            n: self.len(),
            p: self.dim(),
            encoder_name: self.encoder_name.clone(),
            normalized: self.normalized,
        };
        std::fs::write(manifest_path(path), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }
}

/// `vectors.f32` -> `vectors.f32.json`
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Load a vector file and align it with `ids`. Normalizes rows when asked,
/// unless the manifest already marks the file as normalized.
pub fn load_vectors(path: &Path, ids: &[String], normalize: bool) -> Result<EmbeddingMatrix, EmbeddingError> {
    let manifest: VectorManifest = serde_json::from_reader(BufReader::new(File::open(manifest_path(path))?))?;
    if manifest.n != ids.len() {
        return Err(EmbeddingError::RowMismatch { rows: manifest.n, ids: ids.len() });
    }
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let vectors = Matrix::from_f32_le_bytes(manifest.n, manifest.p, &bytes).ok_or(EmbeddingError::SizeMismatch {
        bytes: bytes.len(),
        expected: manifest.n * manifest.p * 4,
        rows: manifest.n,
        dim: manifest.p,
    })?;
    let mut m = EmbeddingMatrix::new(ids.to_vec(), vectors, manifest.encoder_name)?;
    m.normalized = manifest.normalized;
    if normalize && !m.normalized {
        m.normalize()?;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn write_then_load_preserves_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.f32");
        let m = Matrix::from_rows(&[vec![1.0, 0.0, 0.0, 2.0], vec![0.5, 0.5, 0.0, 0.0], vec![0.0, 0.0, 3.0, 0.0]]);
        EmbeddingMatrix::new(ids(3), m.clone(), "enc").unwrap().write(&path).unwrap();
        let back = load_vectors(&path, &ids(3), false).unwrap();
        assert_eq!(back.vectors, m);
        assert_eq!(back.encoder_name, "enc");
        let normed = load_vectors(&path, &ids(3), true).unwrap();
        for r in normed.vectors.iter_rows() {
            assert!((norm(r) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn wide_vectors_report_dimension() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wide.f32");
        let m = Matrix::new(2, 1024, (0..2048).map(|i| (i % 7) as f64 + 1.0).collect());
        EmbeddingMatrix::new(ids(2), m, "qwen").unwrap().write(&path).unwrap();
        assert_eq!(load_vectors(&path, &ids(2), true).unwrap().dim(), 1024);
    }

    #[test]
    fn nan_row_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.f32");
        let mut data = [1.0f32; 8];
        data[5] = f32::NAN;
        std::fs::write(&path, data.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<_>>()).unwrap();
        let manifest = VectorManifest { n: 2, p: 4, encoder_name: "e".into(), normalized: false };
        std::fs::write(manifest_path(&path), serde_json::to_vec(&manifest).unwrap()).unwrap();
        let err = load_vectors(&path, &ids(2), false).unwrap_err();
        assert!(matches!(err, EmbeddingError::NonFinite { row: 1, .. }), "{err}");
        assert!(err.to_string().contains("p1"));
    }

    #[test]
    fn count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.f32");
        EmbeddingMatrix::new(ids(2), Matrix::zeros(2, 3), "e").unwrap().write(&path).unwrap();
        assert!(matches!(load_vectors(&path, &ids(3), false), Err(EmbeddingError::RowMismatch { .. })));
        std::fs::write(&path, [0u8; 5]).unwrap();
        assert!(matches!(load_vectors(&path, &ids(2), false), Err(EmbeddingError::SizeMismatch { .. })));
    }
}
