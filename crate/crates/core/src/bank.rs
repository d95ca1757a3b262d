//! The stacked training embeddings and their LWNK container.
//!
//! Layout (little-endian): `"LWNK"`, `u32` version=1, `u16`-prefixed category,
//! `u16`-prefixed embedding fingerprint, `u32` N, C, H1, W1, then
//! N*C*H1*W1 `f32` in (member, channel, row, column) order.

use std::path::Path;

use crate::binio::{self, LeWriter, FORMAT_VERSION};
use crate::embedding::EmbeddingTensor;
use crate::error::{Error, Result};

pub const BANK_MAGIC: &[u8; 4] = b"LWNK";

/// Training embeddings stacked into one `(N, C, H1, W1)` block. Immutable
/// once built.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBank {
    category: String,
    fingerprint: String,
    len: usize,
    dims: (usize, usize, usize),
    data: Vec<f32>,
}

impl EmbeddingBank {
    pub fn from_embeddings(
        category: impl Into<String>,
        fingerprint: impl Into<String>,
        embeddings: &[EmbeddingTensor],
    ) -> Result<Self> {
        let first = embeddings.first().ok_or(Error::EmptyBank)?;
        let dims = first.dims();
        let mut data = Vec::with_capacity(embeddings.len() * dims.0 * dims.1 * dims.2);
        for e in embeddings {
            if e.dims() != dims {
                return Err(Error::Shape(format!(
                    "embedding {:?} has dims {:?}, bank expects {:?}",
                    e.image_id,
                    e.dims(),
                    dims
                )));
            }
            data.extend_from_slice(e.data());
        }
        Ok(Self { category: category.into(), fingerprint: fingerprint.into(), len: embeddings.len(), dims, data })
    }

    /// Builds a bank from an already stacked `(N, C, H1, W1)` buffer.
    pub fn from_raw(
        category: impl Into<String>,
        fingerprint: impl Into<String>,
        len: usize,
        dims: (usize, usize, usize),
        data: Vec<f32>,
    ) -> Result<Self> {
        if len == 0 {
            return Err(Error::EmptyBank);
        }
        let (c, h, w) = dims;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!("bank dims must be positive, got {dims:?}")));
        }
        if data.len() != len * c * h * w {
            return Err(Error::Corrupt(format!(
                "bank of {len} x {dims:?} needs {} values, got {}",
                len * c * h * w,
                data.len()
            )));
        }
        Ok(Self { category: category.into(), fingerprint: fingerprint.into(), len, dims, data })
    }

    pub fn category(&self) -> &str {
        &self.category
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Number of stacked training embeddings.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `(C, H1, W1)` shared by every member.
    pub fn patch_dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    /// Member `m` as a `(C, H1, W1)` row-major slice.
    pub fn member(&self, m: usize) -> &[f32] {
        let n = self.dims.0 * self.dims.1 * self.dims.2;
        &self.data[m * n..(m + 1) * n]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(index) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { layer: 0, index });
        }
        let mut w = LeWriter::default();
        w.bytes(BANK_MAGIC);
        w.u32(FORMAT_VERSION);
        w.short_str(&self.category, "category")?;
        w.short_str(&self.fingerprint, "fingerprint")?;
        w.dim(self.len, "N")?;
        w.dim(self.dims.0, "C")?;
        w.dim(self.dims.1, "H1")?;
        w.dim(self.dims.2, "W1")?;
        binio::atomic_write_parts(path, &w.into_inner(), &self.data)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let (category, fingerprint, len, dims, mut r) = open_bank(path.as_ref())?;
        let data = r.f32s(len * dims.0 * dims.1 * dims.2, "bank payload")?;
        r.expect_end()?;
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { layer: 0, index });
        }
        Self::from_raw(category, fingerprint, len, dims, data)
    }

    /// Reads only the fingerprint stored in a bank file.
    pub fn read_fingerprint(path: impl AsRef<Path>) -> Result<String> {
        Ok(open_bank(path.as_ref())?.1)
    }
}

type BankHead = (String, String, usize, (usize, usize, usize), binio::LeReader<std::io::BufReader<std::fs::File>>);

fn open_bank(path: &Path) -> Result<BankHead> {
    let mut r = binio::open(path)?;
    r.magic(BANK_MAGIC)?;
    let category = r.short_str("category")?;
    let fingerprint = r.short_str("fingerprint")?;
    let len = r.dim("N")?;
    let dims = (r.dim("C")?, r.dim("H1")?, r.dim("W1")?);
    Ok((category, fingerprint, len, dims, r))
}
