//! Settings resolution: defaults, then the JSON config file, then flags.

use std::fmt;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

/// Bad invocation or configuration; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Flag overrides as (dotted key path, value) pairs.
#[derive(Debug, Default)]
pub struct Overrides(Vec<(&'static str, Value)>);

impl Overrides {
    pub fn set<T: Serialize>(&mut self, key: &'static str, value: Option<T>) -> &mut Self {
        if let Some(v) = value {
            self.0.push((key, serde_json::to_value(v).expect("flag values serialize")));
        }
        self
    }
}

pub fn read_config_file(path: &Path) -> Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    match serde_json::from_str::<Value>(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(usage(format!("config {} must be a JSON object", path.display()))),
        Err(e) => Err(usage(format!("config {}: {e}", path.display()))),
    }
}

/// Objects merge key by key, except tagged ones (with a `kind` key), which
/// are replaced whole.
fn overlay(base: &mut Map<String, Value>, layer: Map<String, Value>, origin: &str) -> Result<()> {
    for (k, v) in layer {
        match base.get_mut(&k) {
            None => return Err(usage(format!("unknown key `{k}` in {origin}"))),
            Some(Value::Object(inner)) if v.is_object() && v.get("kind").is_none() => {
                let Value::Object(v) = v else { unreachable!() };
                overlay(inner, v, origin)?;
            }
            Some(slot) => *slot = v,
        }
    }
    Ok(())
}

fn set_path(root: &mut Map<String, Value>, path: &str, value: Value) {
    let mut parts = path.split('.').peekable();
    let mut cur = root;
    while let Some(p) = parts.next() {
        if parts.peek().is_none() {
            cur.insert(p.to_string(), value);
            return;
        }
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Object(Map::new()))
            .as_object_mut()
            .expect("override path runs through objects");
    }
}

/// Merges the layers and deserializes. Returns the settings together with
/// their canonical JSON form.
pub fn resolve<T>(defaults: &T, config: Option<&Path>, flags: Overrides) -> Result<(T, Value)>
where
    T: Serialize + DeserializeOwned,
{
    let Value::Object(mut merged) = serde_json::to_value(defaults)? else {
        panic!("settings must serialize to an object");
    };
    if let Some(path) = config {
        overlay(&mut merged, read_config_file(path)?, &format!("config {}", path.display()))?;
    }
    for (key, value) in flags.0 {
        set_path(&mut merged, key, value);
    }
    let settings: T = serde_json::from_value(Value::Object(merged)).map_err(|e| usage(format!("invalid settings: {e}")))?;
    let canonical = canonicalize(serde_json::to_value(&settings)?);
    Ok((settings, canonical))
}

/// Recursively sorts object keys.
pub fn canonicalize(v: Value) -> Value {
    match v {
        Value::Object(m) => {
            let mut entries: Vec<(String, Value)> = m.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k, canonicalize(v))).collect())
        }
        Value::Array(a) => Value::Array(a.into_iter().map(canonicalize).collect()),
        other => other,
    }
}

/// SHA-256 of the compact canonical JSON.
pub fn config_hash(v: &Value) -> String {
    let text = serde_json::to_string(&canonicalize(v.clone())).expect("json values serialize");
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn require<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| usage(format!("missing required setting `{flag}` (flag or config key)")))
}
