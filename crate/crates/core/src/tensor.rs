//! Flat little-endian `f32` matrix files.
//!
//! Layout: 8-byte magic `PHNTSR01`, `rows: u32`, `cols: u32`, then
//! `rows * cols` row-major `f32` values. Posterior grids store
//! `cols = vocab + 1` with the blank in the last column; feature matrices
//! store one row per 20 ms frame.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"PHNTSR01";
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic")]
    BadMagic,
    #[error("expected {expected} payload bytes, found {found}")]
    BadLength { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix shape");
        Matrix { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
            return Err(TensorError::BadMagic);
        }
        let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let payload = &bytes[HEADER_LEN..];
        let expected = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or(TensorError::BadLength { expected: usize::MAX, found: payload.len() })?;
        if payload.len() != expected {
            return Err(TensorError::BadLength {
                expected,
                found: payload.len(),
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Matrix { rows, cols, data })
    }

    pub fn read(path: &Path) -> Result<Self, TensorError> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Writes via a temporary sibling file and rename.
    pub fn write(&self, path: &Path) -> Result<(), TensorError> {
        write_atomic(path, &self.to_bytes())?;
        Ok(())
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}
