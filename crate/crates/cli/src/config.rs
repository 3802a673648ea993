//! Settings resolution: built-in defaults, then an optional JSON config
//! file, then command-line flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, Result};

pub fn read_config_file(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::invalid(path, format!("config is not JSON: {}", e)))?;
    if !value.is_object() {
        return Err(CliError::invalid(path, "config must be a JSON object"));
    }
    Ok(value)
}

fn overlay(base: &mut Value, top: &Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(k) {
                    Some(slot) => overlay(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, t) => *b = t.clone(),
    }
}

/// Merges `file` and then `flags` over `defaults`. Keys of the file that
/// the settings do not know are ignored with a warning. `flags` should
/// skip unset options when serialized.
pub fn resolve<T, F>(defaults: &T, file: Option<&Value>, flags: &F) -> Result<T>
where
    T: Serialize + DeserializeOwned,
    F: Serialize,
{
    let mut merged = serde_json::to_value(defaults).expect("settings serialize");
    if let Some(file) = file {
        let known = merged.as_object().expect("settings are a struct").clone();
        let mut filtered = serde_json::Map::new();
        for (k, v) in file.as_object().into_iter().flatten() {
            if known.contains_key(k) {
                filtered.insert(k.clone(), v.clone());
            } else {
                log::warn!("ignoring unknown config key {:?}", k);
            }
        }
        overlay(&mut merged, &Value::Object(filtered));
    }
    overlay(
        &mut merged,
        &serde_json::to_value(flags).expect("flags serialize"),
    );
    serde_json::from_value(merged).map_err(|e| CliError::Usage(format!("invalid settings: {}", e)))
}
