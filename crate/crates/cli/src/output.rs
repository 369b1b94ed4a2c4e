//! Report emission. Floats are written with 17 significant digits so that
//! reports round-trip bit-exactly; non-finite values become `null`.

use std::fmt::Write;

use elmd::sim::PathBundle;
use serde::Serialize;
use serde_json::Value;

use crate::CliError;

/// Formats a float with 17 significant digits.
pub fn float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "null".to_string()
    }
}

/// Pretty JSON with keys in sorted order and fixed float formatting.
pub fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let v = serde_json::to_value(value).map_err(|e| CliError::Output(e.to_string()))?;
    let mut out = String::new();
    write_value(&mut out, &v, 0);
    out.push('\n');
    Ok(out)
}

fn indent(out: &mut String, level: usize) {
    out.extend(std::iter::repeat_n("  ", level));
}

fn write_value(out: &mut String, v: &Value, level: usize) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => match (n.as_u64(), n.as_i64()) {
            (Some(u), _) => write!(out, "{u}").unwrap(),
            (None, Some(i)) => write!(out, "{i}").unwrap(),
            _ => out.push_str(&float(n.as_f64().unwrap_or(f64::NAN))),
        },
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) if items.iter().all(|i| !i.is_array() && !i.is_object()) => {
            out.push('[');
            for (k, item) in items.iter().enumerate() {
                if k > 0 {
                    out.push_str(", ");
                }
                write_value(out, item, level);
            }
            out.push(']');
        }
        Value::Array(items) => {
            out.push_str("[\n");
            for (k, item) in items.iter().enumerate() {
                indent(out, level + 1);
                write_value(out, item, level + 1);
                out.push_str(if k + 1 < items.len() { ",\n" } else { "\n" });
            }
            indent(out, level);
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            out.push_str("{\n");
            for (k, (key, item)) in map.iter().enumerate() {
                indent(out, level + 1);
                write!(out, "{}: ", Value::String(key.clone())).unwrap();
                write_value(out, item, level + 1);
                out.push_str(if k + 1 < map.len() { ",\n" } else { "\n" });
            }
            indent(out, level);
            out.push('}');
        }
    }
}

/// Plain CSV table; cells are written as given.
pub fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

pub const PATH_HEADER: [&str; 5] = ["path", "time", "asset", "value", "process"];

/// One row per path, recorded time and process. `asset` is the asset index
/// for `S` and empty for `D`, `Z` and `Zbar`.
pub fn path_dump(bundle: &PathBundle) -> String {
    let mut out = PATH_HEADER.join(",");
    out.push('\n');
    let grid = bundle.grid();
    for (p, data) in bundle.paths().iter().enumerate() {
        for (r, &k) in bundle.recorded().iter().enumerate() {
            let t = float(grid.time(k));
            for i in 0..bundle.assets() {
                writeln!(out, "{p},{t},{i},{},S", float(bundle.asset(p, r, i))).unwrap();
            }
            for (name, series) in [("D", &data.density), ("Z", &data.deflator), ("Zbar", &data.numeraire)] {
                if let Some(v) = series.get(r) {
                    writeln!(out, "{p},{t},,{},{name}", float(*v)).unwrap();
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 2.0f64.sqrt(), 1e-300, -123456.789] {
            assert_eq!(float(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(float(f64::NAN), "null");
        assert_eq!(float(0.4), "4.0000000000000002e-1");
    }

    #[test]
    fn json_layout() {
        #[derive(Serialize)]
        struct R {
            b: Vec<f64>,
            a: Option<f64>,
            n: usize,
            s: &'static str,
        }
        let s = to_json(&R { b: vec![1.0, f64::INFINITY], a: None, n: 3, s: "x\"y" }).unwrap();
        assert_eq!(
            s,
            "{\n  \"a\": null,\n  \"b\": [1.0000000000000000e0, null],\n  \"n\": 3,\n  \"s\": \"x\\\"y\"\n}\n"
        );
    }
}
