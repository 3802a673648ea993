//! Run fingerprints: a SHA-256 over the resolved configuration and the
//! digests of every input file.

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Serialize)]
struct Material<'a, C: Serialize> {
    command: &'a str,
    config: &'a C,
    inputs: &'a [(String, String)],
}

/// Fingerprint of `command` run with `config` on inputs given as
/// `(role, digest)` pairs.
pub fn fingerprint<C: Serialize>(command: &str, config: &C, inputs: &[(String, String)]) -> String {
    let material = Material {
        command,
        config,
        inputs,
    };
    let json = serde_json::to_vec(&material).expect("configs serialize");
    sha256_hex(&json)
}
