//! On-disk formats: JSONL datasets and predictions, JSON checkpoints,
//! reports and pixmaps.

pub mod checkpoint;
pub mod dataset;
pub mod ppm;
pub mod predictions;

use std::collections::BTreeSet;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, Result};

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("values serialize");
    out.push(b'\n');
    out
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_bytes(path, &to_json_bytes(value))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Format {
        path: path.into(),
        line: e.line(),
        detail: e.to_string(),
    })
}

pub fn jsonl_bytes<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("values serialize");
        out.push(b'\n');
    }
    out
}

/// Parses one JSON value per non-blank line. Object keys outside `known`
/// are ignored with one warning per key. Returns each item with its
/// 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path, known: &[&str]) -> Result<Vec<(usize, T)>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut warned = BTreeSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |detail: String| CliError::Format {
            path: path.into(),
            line: line_no,
            detail,
        };
        let value: Value =
            serde_json::from_str(line).map_err(|e| err(format!("invalid JSON: {}", e)))?;
        if let Value::Object(map) = &value {
            for key in map.keys() {
                if !known.contains(&key.as_str()) && warned.insert(key.clone()) {
                    log::warn!(
                        "{}:{}: ignoring unknown field {:?}",
                        path.display(),
                        line_no,
                        key
                    );
                }
            }
        }
        let item = serde_json::from_value(value).map_err(|e| err(e.to_string()))?;
        out.push((line_no, item));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize, Deserialize, Debug, PartialEq)]
    struct Row {
        a: u32,
    }

    #[test]
    fn jsonl_reports_line_numbers_and_skips_blank_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.jsonl");
        std::fs::write(&path, "{\"a\":1}\n\n{\"a\":2,\"extra\":true}\n{\"b\":3}\n").unwrap();
        match read_jsonl::<Row>(&path, &["a"]) {
            Err(CliError::Format { line, detail, .. }) => {
                assert_eq!(line, 4);
                assert!(detail.contains("missing field"));
            }
            other => panic!("unexpected {:?}", other),
        }
        std::fs::write(&path, "{\"a\":1}\n\n{\"a\":2,\"extra\":true}\n").unwrap();
        let rows = read_jsonl::<Row>(&path, &["a"]).unwrap();
        assert_eq!(rows, vec![(1, Row { a: 1 }), (3, Row { a: 2 })]);
    }
}
