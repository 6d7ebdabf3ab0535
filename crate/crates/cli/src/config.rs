use std::ffi::OsString;
use std::path::Path;

use serde_json::Value;

const SUBCOMMANDS: [&str; 6] = ["eval", "fit", "predict", "classify", "simulate", "report"];

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

fn scalar(key: &str, v: &Value) -> Result<Option<String>, String> {
    match v {
        Value::Null => Ok(None),
        Value::String(s) => Ok(Some(s.clone())),
        Value::Number(n) => Ok(Some(n.to_string())),
        Value::Bool(_) | Value::Array(_) | Value::Object(_) => {
            Err(format!("config key `{key}`: expected a string or number inside a list"))
        }
    }
}

/// Turns a JSON object into flags, e.g. `{"max_k": 100, "strict": true}`
/// into `--max-k 100 --strict`. Keys already given on the command line are
/// skipped so that explicit flags win.
pub fn config_flags(config: &Value, given: &[OsString]) -> Result<Vec<OsString>, String> {
    let Value::Object(map) = config else {
        return Err("config file must hold a JSON object".into());
    };
    let mut out = Vec::new();
    for (key, value) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" {
            continue;
        }
        let present = given.iter().any(|a| {
            let a = a.to_string_lossy();
            a == flag || a.starts_with(&format!("{flag}="))
        });
        if present {
            continue;
        }
        match value {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => out.push(flag.into()),
            Value::Array(items) => {
                let parts = items
                    .iter()
                    .map(|v| scalar(key, v))
                    .collect::<Result<Vec<_>, _>>()?;
                let parts: Vec<String> = parts.into_iter().flatten().collect();
                if !parts.is_empty() {
                    out.push(flag.into());
                    out.push(parts.join(",").into());
                }
            }
            Value::Object(_) => return Err(format!("config key `{key}`: nested objects are not flags")),
            v => {
                out.push(flag.into());
                out.push(scalar(key, v)?.unwrap_or_default().into());
            }
        }
    }
    Ok(out)
}

/// Splices flags from `--config <file>` in after the subcommand name.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| format!("config {} is not valid JSON: {e}", path.display()))?;
    let Some(pos) = args
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()))
    else {
        return Ok(args);
    };
    let flags = config_flags(&value, &args[pos + 1..])?;
    let mut out = args[..=pos].to_vec();
    out.extend(flags);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}
