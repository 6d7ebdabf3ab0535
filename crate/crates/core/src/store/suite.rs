use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};
use crate::oracles::{sha256_hex, TaskInstance};

/// A task suite file. The document is either a bare array of instances or
/// an object with an `instances` array; other top-level fields are kept.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Suite {
    pub instances: Vec<TaskInstance>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SuiteDocument {
    List(Vec<Value>),
    Object(Map<String, Value>),
}

fn line_of(text: &str, needle: &str, nth: usize) -> Option<usize> {
    let pos = text.match_indices(needle).nth(nth)?.0;
    Some(text[..pos].bytes().filter(|&b| b == b'\n').count() + 1)
}

/// Parses suite JSON. Schema errors name the offending field and line.
pub fn parse_suite(text: &str, path: Option<&Path>) -> Result<Suite> {
    let schema = |field: String, line: Option<usize>, message: String| Error::Schema {
        path: path.map(Path::to_path_buf),
        field,
        line,
        message,
    };
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: SuiteDocument = match serde_path_to_error::deserialize(de) {
        Ok(d) => d,
        Err(e) => {
            let line = e.inner().line();
            return Err(schema(e.path().to_string(), Some(line), e.inner().to_string()));
        }
    };
    let (items, extra, prefix) = match doc {
        SuiteDocument::List(items) => (items, Map::new(), ""),
        SuiteDocument::Object(mut map) => {
            let items = match map.remove("instances") {
                Some(Value::Array(items)) => items,
                Some(_) => return Err(schema("instances".into(), line_of(text, "\"instances\"", 0), "expected an array".into())),
                None => return Err(schema("instances".into(), None, "missing field".into())),
            };
            (items, map, "instances")
        }
    };
    let mut instances = Vec::with_capacity(items.len());
    let mut seen = BTreeSet::new();
    for (i, item) in items.into_iter().enumerate() {
        let here = if prefix.is_empty() { format!("[{i}]") } else { format!("{prefix}[{i}]") };
        let id_hint = item.get("instance_id").and_then(Value::as_str).map(|s| format!("\"{s}\""));
        let locate = |nth: usize| id_hint.as_deref().and_then(|h| line_of(text, h, nth));
        let inst: TaskInstance = serde_path_to_error::deserialize(item).map_err(|e| {
            let inner = e.path().to_string();
            let field = if inner == "." { here.clone() } else { format!("{here}.{inner}") };
            schema(field, locate(0), e.inner().to_string())
        })?;
        inst.validate()
            .map_err(|e| schema(format!("{here}"), locate(0), e.to_string()))?;
        if !seen.insert(inst.instance_id.clone()) {
            return Err(schema(
                format!("{here}.instance_id"),
                locate(1),
                format!("duplicate instance_id {}", inst.instance_id),
            ));
        }
        instances.push(inst);
    }
    Ok(Suite { instances, extra })
}

/// Loads a suite and returns it with the SHA-256 digest of the file bytes.
pub fn load_suite(path: impl AsRef<Path>) -> Result<(Suite, String)> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Schema {
        path: Some(path.to_path_buf()),
        field: ".".into(),
        line: None,
        message: format!("not UTF-8: {e}"),
    })?;
    Ok((parse_suite(text, Some(path))?, sha256_hex(&bytes)))
}

/// Writes a suite as pretty JSON and returns its digest.
pub fn save_suite(path: impl AsRef<Path>, suite: &Suite) -> Result<String> {
    let mut bytes = serde_json::to_vec_pretty(suite)?;
    bytes.push(b'\n');
    write_atomic(path.as_ref(), &bytes)?;
    Ok(sha256_hex(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{SyntheticModel, VerifierSpec};

    #[test]
    fn empty_suites() {
        assert!(parse_suite("[]", None).unwrap().instances.is_empty());
        assert!(parse_suite("{\"instances\": []}", None).unwrap().instances.is_empty());
    }

    #[test]
    fn round_trip_keeps_unknown_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("suite.json");
        let mut a = TaskInstance::new("q1", "What is 2+2?", VerifierSpec::substring(["4"]));
        a.extra.insert("source".into(), Value::from("arith"));
        let b = TaskInstance::synthetic("q2", SyntheticModel::Fixed { p: 0.25 });
        let mut suite = Suite {
            instances: vec![a, b],
            extra: Map::new(),
        };
        suite.extra.insert("name".into(), Value::from("demo"));
        let digest = save_suite(&path, &suite).unwrap();
        let (loaded, d2) = load_suite(&path).unwrap();
        assert_eq!(loaded, suite);
        assert_eq!(digest, d2);
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(b' ');
        std::fs::write(&path, bytes).unwrap();
        assert_ne!(load_suite(&path).unwrap().1, digest);
    }

    #[test]
    fn errors_name_field_and_line() {
        let text = "[\n  {\"instance_id\": \"a\", \"prompt\": \"p\", \"verifier\": {\"kind\": \"exact-substring\", \"targets\": [\"x\"]}},\n  {\"instance_id\": \"b\", \"prompt\": 5}\n]";
        match parse_suite(text, None) {
            Err(Error::Schema { field, line, .. }) => {
                assert_eq!(field, "[1].prompt");
                assert_eq!(line, Some(3));
            }
            other => panic!("{other:?}"),
        }
        let dup = "{\"instances\": [\n{\"instance_id\": \"a\", \"prompt\": \"p\", \"verifier\": {\"kind\": \"exact-substring\", \"targets\": [\"x\"]}},\n{\"instance_id\": \"a\", \"prompt\": \"p\", \"verifier\": {\"kind\": \"exact-substring\", \"targets\": [\"x\"]}}\n]}";
        match parse_suite(dup, None) {
            Err(Error::Schema { field, line, .. }) => {
                assert_eq!(field, "instances[1].instance_id");
                assert_eq!(line, Some(3));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_suite("[1,", None), Err(Error::Schema { line: Some(1), .. })));
    }
}
