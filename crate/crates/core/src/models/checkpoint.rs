//! Versioned binary checkpoint container.
//!
//! Layout: 8-byte magic, little-endian `u32` format version, then a bincode
//! payload. Floating-point values are stored bit-exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::ModelTriple;
use crate::error::{Error, Result};
use crate::nn::Adam;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EQGCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume training: networks and specs, both optimizers,
/// the epoch counter, the RNG state, and caller-defined extra state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<S = ()> {
    pub triple: ModelTriple,
    pub d_optimizer: Adam,
    pub ge_optimizer: Adam,
    pub epoch: u64,
    pub rng: ChaCha8Rng,
    pub extra: S,
}

impl<S: Serialize + DeserializeOwned> Checkpoint<S> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let payload = bincode::serialize(self).map_err(|e| Error::format("checkpoint", e.to_string()))?;
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::format("checkpoint", "bad magic header"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(
                "checkpoint",
                format!("unsupported version {version}, expected {CHECKPOINT_VERSION}"),
            ));
        }
        bincode::deserialize(&bytes[12..]).map_err(|e| Error::format("checkpoint", e.to_string()))
    }

    /// Writes to a temporary sibling and renames, so a crash never leaves a torn file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile { path: path.to_path_buf() });
        }
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_triple, SpecSet};
    use crate::nn::{AdamConfig, Module};
    use rand::{RngCore, SeedableRng};

    #[test]
    fn round_trip_is_bit_exact() {
        let triple = build_triple(&SpecSet::toy((1, 2, 2), 3, 5), 7).unwrap();
        let d_opt = Adam::new(AdamConfig::default(), &triple.discriminator.params());
        let ge_opt = Adam::new(AdamConfig::default(), &triple.generator.params());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        rng.next_u64();
        let ckpt = Checkpoint {
            triple,
            d_optimizer: d_opt,
            ge_optimizer: ge_opt,
            epoch: 12,
            rng,
            extra: vec![1.5f64, f64::MIN_POSITIVE],
        };
        let bytes = ckpt.to_bytes().unwrap();
        let back: Checkpoint<Vec<f64>> = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let mut a = ckpt.rng.clone();
        let mut b = back.rng.clone();
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(Checkpoint::<()>::from_bytes(b"not a checkpoint").is_err());
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            Checkpoint::<()>::load(&dir.path().join("none.ckpt")),
            Err(Error::MissingFile { .. })
        ));
    }
}
