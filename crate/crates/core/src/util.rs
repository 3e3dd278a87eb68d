//! Seed derivation, hashing and atomic file writes shared by the pipeline stages.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{AsdError, Result};

/// Derives a named sub-seed from the experiment seed.
///
/// Every random stream in the crate (corpus, init, batching, gmm, ...) is
/// keyed by a name and an index so that streams never overlap and adding a
/// new consumer does not perturb existing ones.
pub fn derive_seed(seed: u64, name: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((name.len() as u64).to_le_bytes());
    hasher.update(name.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng_for(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, name, index))
}

/// Hex SHA-256 prefix (16 hex chars) of arbitrary bytes.
pub fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| AsdError::io(parent, e))?;
        }
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| AsdError::Config(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    fs::write(&tmp, bytes).map_err(|e| AsdError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| AsdError::io(path, e))?;
    Ok(())
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_name_and_index() {
        let a = derive_seed(7, "corpus", 0);
        assert_eq!(a, derive_seed(7, "corpus", 0));
        assert_ne!(a, derive_seed(7, "corpus", 1));
        assert_ne!(a, derive_seed(7, "init", 0));
        assert_ne!(a, derive_seed(8, "corpus", 0));
    }

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.txt");
        write_atomic(&path, b"hello").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"hello");
        let names: Vec<_> = fs::read_dir(path.parent().unwrap())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names.len(), 1);
    }
}
