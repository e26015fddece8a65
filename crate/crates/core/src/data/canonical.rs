//! Canonical text forms: 17-significant-digit floats and key-sorted JSON.

use std::fmt::Write as _;

use serde_json::Value;

/// Formats a finite float with 17 significant digits, which round-trips
/// every `f64` exactly. `-0.0` is written as `0.0`.
pub fn format_f64(x: f64) -> String {
    debug_assert!(x.is_finite());
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x:.16e}")
}

/// Serializes a JSON value with sorted object keys, two-space indentation
/// and 17-significant-digit floats. The same value always yields the same
/// bytes.
pub fn to_canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, value, 0);
    out.push('\n');
    out
}

fn write_value(out: &mut String, value: &Value, depth: usize) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                write!(out, "{u}").unwrap();
            } else if let Some(i) = n.as_i64() {
                write!(out, "{i}").unwrap();
            } else {
                out.push_str(&format_f64(n.as_f64().expect("JSON numbers are finite")));
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("strings serialize")),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            // numeric arrays stay on one line
            if items.iter().all(Value::is_number) {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    write_value(out, item, depth + 1);
                }
                out.push(']');
                return;
            }
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                indent(out, depth + 1);
                write_value(out, item, depth + 1);
                if i + 1 < items.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            indent(out, depth);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, key) in keys.iter().enumerate() {
                indent(out, depth + 1);
                out.push_str(&serde_json::to_string(key).expect("keys serialize"));
                out.push_str(": ");
                write_value(out, &map[key.as_str()], depth + 1);
                if i + 1 < keys.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            indent(out, depth);
            out.push('}');
        }
    }
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn floats_use_seventeen_digits() {
        assert_eq!(format_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(format_f64(-0.0), "0.0000000000000000e0");
        assert_eq!(format_f64(1.0), "1.0000000000000000e0");
        for x in [0.1, 1.0 / 3.0, 5e-324, f64::MAX, -1234.5678e-200] {
            assert_eq!(format_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn keys_are_sorted_and_output_parses() {
        let v = json!({"b": 1, "a": [0.5, 2], "c": {"z": "q", "y": null}});
        let s = to_canonical_json(&v);
        assert!(s.find("\"a\"").unwrap() < s.find("\"b\"").unwrap());
        assert!(s.find("\"y\"").unwrap() < s.find("\"z\"").unwrap());
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["a"][0].as_f64(), Some(0.5));
        assert_eq!(back["b"].as_u64(), Some(1));
    }
}
