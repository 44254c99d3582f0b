//! JSON run configuration with dotted-path overrides.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;

/// Current schema version of every command configuration.
pub const SCHEMA_VERSION: u32 = 1;

/// Loads `path` (or the defaults), applies `key=value` overrides and
/// deserializes the result. Unknown fields are rejected.
pub fn load<T>(path: Option<&Path>, overrides: &[String]) -> Result<T, CliError>
where
    T: DeserializeOwned + Serialize + Default,
{
    let mut value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => serde_json::to_value(T::default())
            .map_err(|e| CliError::Config(format!("default config: {e}")))?,
    };
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let out: T = serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(out)
}

/// Checks the `schema_version` field of a loaded configuration.
pub fn check_schema(found: u32) -> Result<(), CliError> {
    if found != SCHEMA_VERSION {
        return Err(CliError::Config(format!(
            "unsupported schema_version {found} (expected {SCHEMA_VERSION})"
        )));
    }
    Ok(())
}

/// Sets `a.b.c=value`. The value is parsed as JSON and falls back to a
/// plain string. Missing intermediate objects are created.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {spec:?} is not key=value")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Config(format!("bad override key {key:?}")));
    }
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if cur.is_null() {
            *cur = Value::Object(Map::new());
        }
        let obj = cur.as_object_mut().ok_or_else(|| {
            CliError::Config(format!(
                "override {key:?}: {} is not an object",
                parts[..i].join(".")
            ))
        })?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("loop returns on the last key")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;
    use serde_json::json;

    #[derive(Debug, Default, Serialize, Deserialize, PartialEq)]
    #[serde(default, deny_unknown_fields)]
    struct Inner {
        x: f64,
        name: String,
    }

    #[derive(Debug, Default, Serialize, Deserialize, PartialEq)]
    #[serde(default, deny_unknown_fields)]
    struct Outer {
        n: u32,
        inner: Inner,
        list: Vec<f64>,
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let sets = [
            "n=3".to_string(),
            "inner.x=2.5".to_string(),
            "inner.name=abc".to_string(),
            "list=[1,2]".to_string(),
        ];
        let c: Outer = load(None, &sets).unwrap();
        assert_eq!(c.n, 3);
        assert_eq!(c.inner.x, 2.5);
        assert_eq!(c.inner.name, "abc");
        assert_eq!(c.list, vec![1.0, 2.0]);
    }

    #[test]
    fn unknown_fields_and_bad_specs_are_config_errors() {
        assert!(load::<Outer>(None, &["nope=1".into()]).is_err());
        assert!(load::<Outer>(None, &["inner.y=1".into()]).is_err());
        assert!(load::<Outer>(None, &["n".into()]).is_err());
        assert!(load::<Outer>(None, &["n..x=1".into()]).is_err());
        let mut v = json!({"n": 1});
        assert!(apply_override(&mut v, "n.x=1").is_err());
    }
}
