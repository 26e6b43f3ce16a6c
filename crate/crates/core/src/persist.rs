//! Versioned JSON envelopes shared by every persisted model type.

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Serialize)]
struct EnvelopeRef<'a, T> {
    format: &'a str,
    version: u32,
    model: &'a T,
}

pub(crate) fn to_text<T: Serialize>(format: &str, version: u32, model: &T) -> String {
    serde_json::to_string_pretty(&EnvelopeRef { format, version, model }).expect("model serializes")
}

fn corrupt(e: serde_json::Error) -> Error {
    Error::Corrupt {
        path: Default::default(),
        reason: e.to_string(),
    }
}

pub(crate) fn from_text<T: DeserializeOwned>(format: &str, version: u32, text: &str) -> Result<T> {
    let mut value: serde_json::Value = serde_json::from_str(text).map_err(corrupt)?;
    let found = format!(
        "{}/{}",
        value.get("format").and_then(|v| v.as_str()).unwrap_or("?"),
        value.get("version").and_then(|v| v.as_u64()).unwrap_or(0)
    );
    let expected = format!("{format}/{version}");
    if found != expected {
        return Err(Error::Version { expected, found });
    }
    let model = value
        .get_mut("model")
        .map(serde_json::Value::take)
        .ok_or_else(|| Error::Corrupt {
            path: Default::default(),
            reason: "missing model".into(),
        })?;
    serde_json::from_value(model).map_err(corrupt)
}
