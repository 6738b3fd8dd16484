//! Binary parameter checkpoints.
//!
//! Layout: magic `OPTDCKPT`, format version (u32 LE), dimension (u64 LE),
//! 32-byte model-layout digest, then `dim` little-endian f64 values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::num::ParamVector;

pub const MAGIC: &[u8; 8] = b"OPTDCKPT";
pub const VERSION: u32 = 1;
const HEADER: usize = 8 + 4 + 8 + 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub digest: [u8; 32],
    pub params: ParamVector,
}

impl Checkpoint {
    pub fn new(digest: [u8; 32], params: ParamVector) -> Self {
        Checkpoint { digest, params }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER + 8 * self.params.dim());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.params.dim() as u64).to_le_bytes());
        out.extend_from_slice(&self.digest);
        for v in self.params.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER {
            return Err(Error::Checkpoint(format!("truncated header ({} bytes)", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("bad magic tag".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let dim = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let digest: [u8; 32] = bytes[20..52].try_into().expect("32 bytes");
        let body = &bytes[HEADER..];
        if (body.len() as u64) != dim.saturating_mul(8) {
            return Err(Error::Checkpoint(format!(
                "header says {dim} values but body holds {} bytes",
                body.len()
            )));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Checkpoint {
            digest,
            params: ParamVector::from(values),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Loads and checks the layout against the expected model.
    pub fn load_for(path: impl AsRef<Path>, dim: usize, digest: &[u8; 32]) -> Result<ParamVector> {
        let ck = Self::load(path)?;
        if ck.params.dim() != dim {
            return Err(Error::Checkpoint(format!(
                "dimension mismatch: expected {dim}, file has {}",
                ck.params.dim()
            )));
        }
        if &ck.digest != digest {
            return Err(Error::Checkpoint("model digest mismatch".into()));
        }
        Ok(ck.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bitwise(values in proptest::collection::vec(any::<f64>(), 1..50), tag in any::<u8>()) {
            let ck = Checkpoint::new([tag; 32], ParamVector::from(values));
            let bytes = ck.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn mismatches_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        Checkpoint::new([1; 32], ParamVector::from(vec![1.0, 2.0]))
            .save(&path)
            .unwrap();
        assert!(Checkpoint::load_for(&path, 2, &[1; 32]).is_ok());
        assert!(matches!(
            Checkpoint::load_for(&path, 3, &[1; 32]),
            Err(Error::Checkpoint(_))
        ));
        assert!(matches!(
            Checkpoint::load_for(&path, 2, &[2; 32]),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let good = Checkpoint::new([0; 32], ParamVector::from(vec![1.0])).to_bytes();
        assert!(Checkpoint::from_bytes(&good[..good.len() - 1]).is_err());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut bad = good;
        bad[8] = 9;
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }
}
