//! Flat key/value settings: config file overlaid by flags, then typed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::Failure;

pub type Settings = Map<String, Value>;

fn object(v: Value) -> Settings {
    match v {
        Value::Object(m) => m,
        _ => Map::new(),
    }
}

/// Reads a TOML config file, rejecting keys outside `allowed`.
pub fn read_config_file(path: &Path, allowed: &Settings) -> Result<Settings, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read config file {}: {e}", path.display())))?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| Failure::Config(format!("config file {}: {}", path.display(), e.message())))?;
    let mut out = Map::new();
    for (key, value) in table {
        if !allowed.contains_key(&key) {
            return Err(Failure::Config(format!("unknown config key `{key}` in {}", path.display())));
        }
        let value = serde_json::to_value(&value).map_err(|e| Failure::Config(format!("config key `{key}`: {e}")))?;
        out.insert(key, value);
    }
    Ok(out)
}

/// File values overlaid by the flags that were given.
pub fn collect(config: Option<&Path>, flags: Value, template: Value) -> Result<Settings, Failure> {
    let allowed = object(template);
    let mut settings = match config {
        Some(path) => read_config_file(path, &allowed)?,
        None => Map::new(),
    };
    for (key, value) in object(flags) {
        if !value.is_null() {
            settings.insert(key, value);
        }
    }
    Ok(settings)
}

/// Overlays every key of `base` that `settings` carries and deserializes.
pub fn overlay<T: Serialize + DeserializeOwned>(base: &T, settings: &Settings) -> Result<T, Failure> {
    let mut value = object(serde_json::to_value(base).expect("config serializes"));
    for (key, slot) in value.iter_mut() {
        if let Some(given) = settings.get(key) {
            *slot = given.clone();
        }
    }
    serde_json::from_value(Value::Object(value)).map_err(|e| Failure::Config(e.to_string()))
}

/// Copies every field of a typed config into the resolved settings.
pub fn record<T: Serialize>(resolved: &mut Settings, typed: &T) {
    resolved.extend(object(serde_json::to_value(typed).expect("config serializes")));
}

pub fn get<T: DeserializeOwned>(settings: &Settings, key: &str) -> Result<Option<T>, Failure> {
    match settings.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| Failure::Config(format!("`{key}`: {e}"))),
    }
}

pub fn get_or<T: DeserializeOwned>(settings: &Settings, key: &str, default: T) -> Result<T, Failure> {
    Ok(get(settings, key)?.unwrap_or(default))
}

pub fn path(settings: &Settings, key: &str) -> Result<Option<PathBuf>, Failure> {
    get::<PathBuf>(settings, key)
}

pub fn require_path(settings: &Settings, key: &str) -> Result<PathBuf, Failure> {
    path(settings, key)?.ok_or_else(|| Failure::Config(format!("`{key}` is required")))
}

/// Splits a comma-separated list, dropping blanks.
pub fn list(text: &str) -> Vec<String> {
    text.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}
