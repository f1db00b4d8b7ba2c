//! VO configuration files: TOML whose keys override the defaults.

use std::path::Path;

use toml::Value;

use superprim::{Error, VoConfig};

use crate::commands::CliError;

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Dotted paths of `over` that do not appear in `known`.
fn unknown_keys(known: &Value, over: &Value, prefix: &str, out: &mut Vec<String>) {
    let (Value::Table(k), Value::Table(o)) = (known, over) else {
        return;
    };
    for (key, v) in o {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match k.get(key) {
            Some(kv) => unknown_keys(kv, v, &path, out),
            None => out.push(path),
        }
    }
}

pub fn parse_vo_config(text: &str) -> Result<VoConfig, CliError> {
    let bad = |m: String| CliError::Data(Error::Format {
        field: "config".into(),
        message: m,
    });
    let over: Value = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
    let mut merged = Value::try_from(VoConfig::default()).map_err(|e| bad(e.to_string()))?;
    merge(&mut merged, over.clone());
    let cfg: VoConfig = merged.try_into().map_err(|e: toml::de::Error| bad(e.to_string()))?;
    let known = Value::try_from(&cfg).map_err(|e| bad(e.to_string()))?;
    let mut unknown = Vec::new();
    unknown_keys(&known, &over, "", &mut unknown);
    if !unknown.is_empty() {
        return Err(bad(format!("unknown keys: {}", unknown.join(", "))));
    }
    Ok(cfg)
}

pub fn load_vo_config(path: &Path) -> Result<VoConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Data(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })?;
    parse_vo_config(&text)
}
