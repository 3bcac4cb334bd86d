//! Layered configuration: built-in defaults, then a sectioned TOML file,
//! then command-line overrides.
//!
//! ```toml
//! [model]
//! d_model = 64
//!
//! [training]
//! seed = 7
//! ```

use std::path::Path;

use opcap_core::PipelineConfig;
use serde::Deserialize;
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::io::read_text;

/// Section of every configuration key.
pub const SECTIONS: &[(&str, &[&str])] = &[
    ("model", &["d_model", "n_layers", "n_heads", "ffn_dim", "max_caption_len"]),
    ("encoder", &["m", "feature_dim"]),
    ("detection", &["detect_threshold", "o_max", "dedupe", "crop_pad"]),
    ("attributes", &["k", "attr_min_prob", "attr_hidden"]),
    ("training", &["dropout_p", "learning_rate", "batch_size", "grad_clip", "seed"]),
    ("vocab", &["min_freq"]),
];

fn section_of(key: &str) -> Option<&'static str> {
    SECTIONS.iter().find(|(_, keys)| keys.contains(&key)).map(|(s, _)| *s)
}

/// Parses one `key=value` override. The key may carry its section
/// (`model.d_model`). Values are read as TOML scalars, falling back to a
/// bare string.
pub fn parse_override(raw: &str) -> Result<(String, Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{raw}` is not key=value")))?;
    let key = key.trim();
    let bare = match key.split_once('.') {
        Some((section, k)) => {
            if section_of(k) != Some(section) {
                return Err(Error::Config(format!("unknown key `{key}`")));
            }
            k
        }
        None => key,
    };
    if section_of(bare).is_none() {
        return Err(Error::Config(format!("unknown key `{key}`")));
    }
    let value = value.trim();
    let parsed = format!("v = {value}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(value.to_string()));
    Ok((bare.to_string(), parsed))
}

/// Flattens a sectioned TOML document, rejecting unknown sections, keys
/// in the wrong section and top-level scalars.
pub fn flatten_file(text: &str, origin: &Path) -> Result<Table> {
    let doc: Table = text.parse().map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", origin.display())))?;
    let mut flat = Table::new();
    for (section, body) in doc {
        let Value::Table(body) = body else {
            return Err(Error::Config(format!(
                "{}: `{section}` must be inside a section",
                origin.display()
            )));
        };
        for (key, value) in body {
            match section_of(&key) {
                Some(s) if s == section => {
                    flat.insert(key, value);
                }
                Some(s) => {
                    return Err(Error::Config(format!(
                        "{}: `{key}` belongs in [{s}], found in [{section}]",
                        origin.display()
                    )))
                }
                None => return Err(Error::Config(format!("{}: unknown key `{section}.{key}`", origin.display()))),
            }
        }
    }
    Ok(flat)
}

/// Resolves the effective configuration. Precedence, highest first:
/// `seed`, `overrides`, the file at `path`, defaults.
pub fn resolve(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<PipelineConfig> {
    let mut flat = match path {
        Some(p) => flatten_file(&read_text(p)?, p)?,
        None => Table::new(),
    };
    for raw in overrides {
        let (k, v) = parse_override(raw)?;
        flat.insert(k, v);
    }
    if let Some(s) = seed {
        let s = i64::try_from(s).map_err(|_| Error::Config(format!("seed {s} is too large")))?;
        flat.insert("seed".into(), Value::Integer(s));
    }
    let cfg = PipelineConfig::deserialize(Value::Table(flat)).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(cfg)
}

/// Renders `cfg` in the sectioned file format; `resolve` reads it back
/// unchanged.
pub fn to_toml(cfg: &PipelineConfig) -> String {
    let Ok(Value::Table(flat)) = Value::try_from(cfg) else {
        unreachable!("config serializes to a table")
    };
    let mut doc = Table::new();
    for (section, keys) in SECTIONS {
        let body: Table = keys.iter().map(|k| (k.to_string(), flat[*k].clone())).collect();
        doc.insert(section.to_string(), Value::Table(body));
    }
    toml::to_string(&doc).expect("config renders as TOML")
}
