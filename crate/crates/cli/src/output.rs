//! Output plumbing: canonical JSON rendering, the instance fingerprint, the
//! result envelope, and file-or-stdout writing. Identical configs always
//! fingerprint identically and identical runs print byte-identical output.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, SCHEMA_VERSION};

/// Render a JSON value deterministically: keys sorted, floats printed in
/// exponent form with 17 significant digits so equal values byte-match
/// across platforms.
pub fn canonical_json(value: &Value, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(num) => {
            if let Some(i) = num.as_i64() {
                let _ = write!(out, "{i}");
            } else if let Some(u) = num.as_u64() {
                let _ = write!(out, "{u}");
            } else {
                let _ = write!(out, "{:.16e}", num.as_f64().unwrap_or(f64::NAN));
            }
        }
        Value::String(s) => {
            out.push_str(&serde_json::to_string(s).expect("strings always serialize"))
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                canonical_json(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(key).expect("strings always serialize"));
                out.push(':');
                canonical_json(&map[key.as_str()], out);
            }
            out.push('}');
        }
    }
}

/// SHA-256 over the canonical JSON of the instance-defining config parts.
/// Command parameters (samples, seeds, sweep axes) do not enter the hash.
pub fn instance_fingerprint(cfg: &RunConfig) -> Result<String, String> {
    let mut doc = Map::new();
    let parts: [(&str, Value); 7] = [
        ("space", to_value(&cfg.space)?),
        ("prior", to_value(&cfg.prior)?),
        ("score", to_value(&cfg.score)?),
        ("allocation", to_value(&cfg.allocation)?),
        ("n", to_value(&cfg.n)?),
        ("B", to_value(&cfg.budget)?),
        ("c", to_value(&cfg.fine)?),
    ];
    for (key, value) in parts {
        doc.insert(key.to_string(), value);
    }
    let mut text = String::new();
    canonical_json(&Value::Object(doc), &mut text);
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

fn to_value<T: serde::Serialize>(value: &T) -> Result<Value, String> {
    serde_json::to_value(value).map_err(|e| e.to_string())
}

/// The common output document around every command's result.
pub fn envelope(command: &str, fingerprint: &str, seed: Option<u64>, result: Value) -> Value {
    let mut doc = Map::new();
    doc.insert("schema".into(), Value::from(SCHEMA_VERSION));
    doc.insert("command".into(), Value::from(command));
    doc.insert("instance_fingerprint".into(), Value::from(fingerprint));
    if let Some(s) = seed {
        doc.insert("seed".into(), Value::from(s));
    }
    doc.insert("result".into(), result);
    Value::Object(doc)
}

pub fn render_json(value: &Value) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("values always serialize");
    text.push('\n');
    text
}

pub fn write_output(text: &str, out: Option<&Path>) -> Result<(), String> {
    match out {
        Some(path) => fs::write(path, text)
            .map_err(|e| format!("cannot write {}: {e}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| format!("cannot write to stdout: {e}"))
        }
    }
}
