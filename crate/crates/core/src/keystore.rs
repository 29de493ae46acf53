//! Local key files: `public.json` plus one `share-<i>.json` per teacher.

use std::fs;
use std::path::{Path, PathBuf};

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::paillier::{PaillierError, PublicKey, SecretKeyShare, ThresholdConfig, ThresholdKeys};

#[derive(Debug, Error)]
pub enum KeystoreError {
    #[error("{0} already exists (pass --force to overwrite)")]
    Exists(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Crypto(#[from] PaillierError),
}

#[derive(Serialize, Deserialize)]
struct PublicFile {
    key_bits: u64,
    n_parties: usize,
    threshold: usize,
    modulus: String,
}

#[derive(Serialize, Deserialize)]
struct ShareFile {
    index: usize,
    n_parties: usize,
    threshold: usize,
    share: String,
}

pub fn public_path(dir: &Path) -> PathBuf {
    dir.join("public.json")
}

pub fn share_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("share-{index}.json"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> KeystoreError + '_ {
    move |source| KeystoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes all key files, refusing to replace existing ones unless `force`.
pub fn write_keys(dir: &Path, keys: &ThresholdKeys, force: bool) -> Result<Vec<PathBuf>, KeystoreError> {
    let mut targets = vec![public_path(dir)];
    targets.extend(keys.shares.iter().map(|s| share_path(dir, s.index())));
    if !force {
        if let Some(existing) = targets.iter().find(|p| p.exists()) {
            return Err(KeystoreError::Exists(existing.clone()));
        }
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let (n_parties, threshold) = (keys.config.n_parties(), keys.config.threshold());
    let public = PublicFile {
        key_bits: keys.public.bit_length(),
        n_parties,
        threshold,
        modulus: keys.public.modulus().to_str_radix(16),
    };
    let path = &targets[0];
    fs::write(path, serde_json::to_string_pretty(&public).expect("serializable") + "\n").map_err(io_err(path))?;
    for (share, path) in keys.shares.iter().zip(&targets[1..]) {
        let (index, hex) = share.to_file_repr();
        let file = ShareFile {
            index,
            n_parties,
            threshold,
            share: hex,
        };
        fs::write(path, serde_json::to_string_pretty(&file).expect("serializable") + "\n").map_err(io_err(path))?;
    }
    Ok(targets)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, KeystoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| KeystoreError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Reads the public key and every share file present for indices `1..=N`.
pub fn read_keys(dir: &Path) -> Result<ThresholdKeys, KeystoreError> {
    let path = public_path(dir);
    let public: PublicFile = read_json(&path)?;
    let format_err = |message: &str| KeystoreError::Format {
        path: path.clone(),
        message: message.to_string(),
    };
    let modulus = BigUint::parse_bytes(public.modulus.as_bytes(), 16).ok_or_else(|| format_err("bad modulus"))?;
    let pk = PublicKey::from_modulus(modulus);
    if pk.bit_length() != public.key_bits {
        return Err(format_err("modulus size does not match key_bits"));
    }
    let config = ThresholdConfig::new(public.n_parties, public.threshold)?;
    let mut shares = Vec::new();
    for index in 1..=public.n_parties {
        let path = share_path(dir, index);
        if !path.exists() {
            continue;
        }
        let file: ShareFile = read_json(&path)?;
        if file.index != index || file.n_parties != public.n_parties || file.threshold != public.threshold {
            return Err(KeystoreError::Format {
                path,
                message: "share does not match the public key".to_string(),
            });
        }
        let share = SecretKeyShare::from_file_repr(index, &file.share).ok_or_else(|| KeystoreError::Format {
            path: path.clone(),
            message: "bad share encoding".to_string(),
        })?;
        shares.push(share);
    }
    Ok(ThresholdKeys {
        public: pk,
        shares,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paillier::deal_threshold_keys;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn write_read_and_overwrite_guard() {
        let dir = tempfile::tempdir().unwrap();
        let keys = deal_threshold_keys(512, 5, 3, &mut ChaCha20Rng::seed_from_u64(3)).unwrap();
        let written = write_keys(dir.path(), &keys, false).unwrap();
        assert_eq!(written.len(), 6);
        assert!(matches!(write_keys(dir.path(), &keys, false), Err(KeystoreError::Exists(_))));
        write_keys(dir.path(), &keys, true).unwrap();

        let loaded = read_keys(dir.path()).unwrap();
        assert_eq!(loaded.public, keys.public);
        assert_eq!(loaded.shares, keys.shares);
        assert_eq!(loaded.config, keys.config);

        std::fs::remove_file(share_path(dir.path(), 2)).unwrap();
        assert_eq!(read_keys(dir.path()).unwrap().shares.len(), 4);
    }
}
