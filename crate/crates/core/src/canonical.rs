//! Canonical text forms: sorted-key JSON with fixed float formatting, and
//! SHA-256 digests over the resulting bytes.

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Decimal digits used for every float written to annotation files.
pub const FLOAT_DECIMALS: usize = 6;

pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}

/// Rounds `x` to the value that a six-decimal text rendering parses back to.
pub fn round6(x: f64) -> f64 {
    format!("{:.*}", FLOAT_DECIMALS, x)
        .parse()
        .expect("formatted float parses")
}

/// Serializes `value` as single-line JSON with keys sorted and floats
/// rendered with exactly six decimals. Integers stay integers.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let value = serde_json::to_value(value)
        .map_err(|e| Error::InvalidArgument(format!("unserializable value: {e}")))?;
    let mut out = String::new();
    write_value(&value, &mut out);
    Ok(out)
}

fn write_value(value: &Value, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                let f = n.as_f64().unwrap_or(0.0);
                // -0.000000 and 0.000000 must hash identically
                let f = if f == 0.0 { 0.0 } else { f };
                out.push_str(&format!("{:.*}", FLOAT_DECIMALS, f));
            } else {
                out.push_str(&n.to_string());
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(key.clone()).to_string());
                out.push(':');
                write_value(&map[key], out);
            }
            out.push('}');
        }
    }
}

/// Formats a float with 9 significant digits in scientific notation.
pub fn sig9(x: f64) -> String {
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{:.8e}", x)
}
