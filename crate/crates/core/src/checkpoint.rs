//! Versioned binary container for trained parameters.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "SMLP"            4 bytes magic
//! version           u16
//! kind_len          u8, followed by kind_len ASCII bytes ("deepmil", "varmil", "tilesup", "enc")
//! nu                u32   hidden width
//! dim               u32   feature dimension H
//! n_matrices        u32
//! n_matrices × { rows u32, cols u32, rows*cols f64 }   in declaration order
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::{DenseMatrix, Param};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SMLP";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub nu: u32,
    pub dim: u32,
    pub matrices: Vec<DenseMatrix>,
}

impl Checkpoint {
    pub fn from_params<'a>(
        kind: &str,
        nu: usize,
        dim: usize,
        params: impl IntoIterator<Item = &'a Param>,
    ) -> Self {
        Self {
            kind: kind.to_string(),
            nu: nu as u32,
            dim: dim as u32,
            matrices: params.into_iter().map(|p| p.value.clone()).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(self.kind.len() as u8);
        out.extend_from_slice(self.kind.as_bytes());
        out.extend_from_slice(&self.nu.to_le_bytes());
        out.extend_from_slice(&self.dim.to_le_bytes());
        out.extend_from_slice(&(self.matrices.len() as u32).to_le_bytes());
        for m in &self.matrices {
            out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::format(path, "bad magic, expected SMLP"));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(path, format!("unsupported version {version}")));
        }
        let kind_len = r.take(1)?[0] as usize;
        let kind = std::str::from_utf8(r.take(kind_len)?)
            .map_err(|_| Error::format(path, "kind tag is not ASCII"))?
            .to_string();
        let nu = u32::from_le_bytes(r.array()?);
        let dim = u32::from_le_bytes(r.array()?);
        let count = u32::from_le_bytes(r.array()?) as usize;
        let mut matrices = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let rows = u32::from_le_bytes(r.array()?) as usize;
            let cols = u32::from_le_bytes(r.array()?) as usize;
            let n = rows
                .checked_mul(cols)
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| Error::format(path, "matrix larger than the remaining file"))?;
            let data = (0..n)
                .map(|_| r.array().map(f64::from_le_bytes))
                .collect::<Result<Vec<_>>>()?;
            matrices.push(
                DenseMatrix::from_vec(rows, cols, data)
                    .map_err(|e| Error::format(path, e.to_string()))?,
            );
        }
        if r.remaining() != 0 {
            return Err(Error::format(path, "trailing bytes after last matrix"));
        }
        Ok(Self {
            kind,
            nu,
            dim,
            matrices,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn expect_kind(&self, kinds: &[&str]) -> Result<()> {
        if kinds.contains(&self.kind.as_str()) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "checkpoint kind `{}` where one of {kinds:?} was expected",
                self.kind
            )))
        }
    }

    /// Copies stored matrices into `params`, checking count and shapes.
    pub fn load_into<'a>(&self, params: impl IntoIterator<Item = &'a mut Param>) -> Result<()> {
        let params: Vec<&mut Param> = params.into_iter().collect();
        if params.len() != self.matrices.len() {
            return Err(Error::shape(
                "checkpoint",
                format!("{} matrices", params.len()),
                format!("{} matrices", self.matrices.len()),
            ));
        }
        for (p, m) in params.into_iter().zip(&self.matrices) {
            if p.shape() != m.shape() {
                return Err(Error::shape(
                    "checkpoint",
                    format!("{} {:?}", p.name, p.shape()),
                    format!("{:?}", m.shape()),
                ));
            }
            p.value = m.clone();
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(self.path, "truncated file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            kind: "varmil".into(),
            nu: 4,
            dim: 3,
            matrices: vec![
                DenseMatrix::from_vec(2, 2, vec![1.0, -2.5, 3.25, 1e-300]).unwrap(),
                DenseMatrix::from_vec(1, 3, vec![0.1, 0.2, 0.3]).unwrap(),
            ],
        }
    }

    #[test]
    fn roundtrip_bit_exact() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..4], b"SMLP");
        assert_eq!(Checkpoint::from_bytes(&bytes, Path::new("x")).unwrap(), c);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let mut bytes = sample().to_bytes();
        let p = Path::new("x");
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1], p).is_err());
        bytes.push(0);
        assert!(Checkpoint::from_bytes(&bytes, p).is_err());
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bytes, p),
            Err(Error::Format { .. })
        ));
    }
}
