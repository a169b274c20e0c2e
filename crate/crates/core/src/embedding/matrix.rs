//! Dense row-major `f32` embedding matrices and their on-disk format.
//!
//! Layout of an embedding file (all integers little-endian, no padding):
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `ADSK`                  |
//! | 4      | 4    | version, `u32`, always 1      |
//! | 8      | 4    | dim, `u32`                    |
//! | 12     | 8    | count, `u64`                  |
//! | 20     | 4·dim·count | row-major `f32` payload |

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ADSK";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

/// Row-major matrix of finite `f32` values with a fixed row dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    count: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    /// Wraps `data` as rows of length `dim`.
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("embedding dimension must be at least 1".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::Data(format!(
                "payload length {} is not a multiple of dim {}",
                data.len(),
                dim
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        let count = data.len() / dim;
        Ok(Self { dim, count, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(dim * rows.len());
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::Data(format!(
                    "row {} has length {}, expected {}",
                    i,
                    row.len(),
                    dim
                )));
            }
            data.extend_from_slice(row);
        }
        Self::new(dim, data)
    }

    /// Converts `f64` rows, rounding each value to `f32`.
    pub fn from_f64_rows<R: AsRef<[f64]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let rows: Vec<Vec<f32>> = rows
            .iter()
            .map(|r| r.as_ref().iter().map(|&v| v as f32).collect())
            .collect();
        Self::from_rows(dim, &rows)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    /// Returns a copy with every row scaled to unit L2 norm.
    ///
    /// Zero rows cannot be normalized and are rejected.
    pub fn normalized(&self) -> Result<Self> {
        let mut data = Vec::with_capacity(self.data.len());
        for (i, row) in self.rows().enumerate() {
            data.extend(normalize_row(row).map_err(|_| {
                Error::Data(format!("row {i} has zero norm and cannot be normalized"))
            })?);
        }
        Ok(Self {
            dim: self.dim,
            count: self.count,
            data,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.count as u64).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Format("bad magic, expected \"ADSK\"".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        if dim == 0 {
            return Err(Error::Format("header declares dim = 0".into()));
        }
        let payload_len = usize::try_from(count)
            .ok()
            .and_then(|c| c.checked_mul(dim))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("dim {dim} x count {count} overflows")))?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() < payload_len {
            return Err(Error::Format(format!(
                "truncated payload: expected {payload_len} bytes, found {}",
                payload.len()
            )));
        }
        if payload.len() > payload_len {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload",
                payload.len() - payload_len
            )));
        }
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(dim, data)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&self.to_bytes())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::Format(format!("read failed: {e}")))?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity computed in `f64`, clamped to `[-1, 1]`.
///
/// Returns 0 when either vector is zero.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let denom = (dot(a, a) * dot(b, b)).sqrt();
    if denom == 0.0 {
        return 0.0;
    }
    (dot(a, b) / denom).clamp(-1.0, 1.0)
}

pub fn normalize_row(row: &[f32]) -> Result<Vec<f32>> {
    let n = norm(row);
    if n == 0.0 {
        return Err(Error::Data("zero vector cannot be normalized".into()));
    }
    Ok(row.iter().map(|&v| (v as f64 / n) as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EmbeddingMatrix {
        EmbeddingMatrix::new(4, (0..8).map(|i| i as f32 * 0.5 - 1.0).collect()).unwrap()
    }

    #[test]
    fn header_and_shape() {
        let m = sample();
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..4], b"ADSK");
        assert_eq!(bytes.len(), HEADER_LEN + 32);
        let back = EmbeddingMatrix::from_bytes(&bytes).unwrap();
        assert_eq!(back.dim(), 4);
        assert_eq!(back.count(), 2);
        assert_eq!(back, m);
    }

    #[test]
    fn truncated_payload_is_format_error() {
        let bytes = sample().to_bytes();
        let err = EmbeddingMatrix::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
        let err = EmbeddingMatrix::from_bytes(&bytes[..10]).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn bad_magic_version_and_trailing_bytes() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(EmbeddingMatrix::from_bytes(&bytes), Err(Error::Format(_))));

        let mut bytes = sample().to_bytes();
        bytes[4] = 2;
        assert!(matches!(EmbeddingMatrix::from_bytes(&bytes), Err(Error::Format(_))));

        let mut bytes = sample().to_bytes();
        bytes.push(0);
        assert!(matches!(EmbeddingMatrix::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn nan_payload_is_data_error() {
        let mut bytes = sample().to_bytes();
        bytes[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(EmbeddingMatrix::from_bytes(&bytes), Err(Error::Data(_))));
        bytes[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(EmbeddingMatrix::from_bytes(&bytes), Err(Error::Data(_))));
    }

    #[test]
    fn zero_dim_rejected() {
        assert!(EmbeddingMatrix::new(0, vec![]).is_err());
        let mut bytes = EmbeddingMatrix::new(1, vec![]).unwrap().to_bytes();
        bytes[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(EmbeddingMatrix::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn empty_matrix_round_trips() {
        let m = EmbeddingMatrix::new(3, vec![]).unwrap();
        assert!(m.is_empty());
        assert_eq!(EmbeddingMatrix::from_bytes(&m.to_bytes()).unwrap(), m);
    }

    #[test]
    fn normalization() {
        let m = EmbeddingMatrix::from_rows(2, &[[2.0f32, 0.0], [3.0, 4.0]]).unwrap();
        let n = m.normalized().unwrap();
        assert_eq!(n.row(0), &[1.0, 0.0]);
        assert!((norm(n.row(1)) - 1.0).abs() < 1e-6);
        let z = EmbeddingMatrix::from_rows(2, &[[0.0f32, 0.0]]).unwrap();
        assert!(matches!(z.normalized(), Err(Error::Data(_))));
    }

    #[test]
    fn cosine_handles_zero_and_clamps() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert_eq!(cosine(&[1.0, 1.0], &[1.0, 1.0]), 1.0);
        assert!(cosine(&[1.0, 0.0], &[-2.0, 0.0]) >= -1.0);
    }
}
