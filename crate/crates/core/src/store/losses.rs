use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};

pub const LOSS_COLUMNS: [&str; 3] = ["instance_id", "model_id", "loss"];

/// Meaning of the `loss` column, recorded in run manifests.
pub const LOSS_CONVENTION: &str = "loss = summed natural-log negative log-likelihood of the reference answer";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub instance_id: String,
    pub model_id: String,
    pub loss: f64,
    /// Values of any extra columns, keyed by header.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTable {
    pub records: Vec<LossRecord>,
    /// Extra column names in file order.
    pub extra_columns: Vec<String>,
}

impl LossTable {
    pub fn get(&self, instance_id: &str, model_id: &str) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.instance_id == instance_id && r.model_id == model_id)
            .map(|r| r.loss)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<&str> = LOSS_COLUMNS
            .iter()
            .copied()
            .chain(self.extra_columns.iter().map(String::as_str))
            .collect();
        w.write_record(&header).map_err(csv_io)?;
        for r in &self.records {
            let mut row = vec![r.instance_id.clone(), r.model_id.clone(), format!("{}", r.loss)];
            for c in &self.extra_columns {
                row.push(r.extra.get(c).cloned().unwrap_or_default());
            }
            w.write_record(&row).map_err(csv_io)?;
        }
        w.into_inner().map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::InvalidConfig(format!("csv: {e}"))
}

/// Parses a loss table with header `instance_id,model_id,loss` (any column
/// order, extra columns kept). Losses must be finite and nonnegative and
/// each (instance, model) pair may appear once.
pub fn parse_losses(bytes: &[u8], path: Option<&Path>) -> Result<LossTable> {
    let schema = |field: &str, line: Option<u64>, message: String| Error::Schema {
        path: path.map(Path::to_path_buf),
        field: field.to_string(),
        line: line.map(|l| l as usize),
        message,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| schema("header", Some(1), e.to_string()))?
        .clone();
    let mut col = BTreeMap::new();
    for name in LOSS_COLUMNS {
        let i = header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| schema(name, Some(1), "missing column".into()))?;
        col.insert(name, i);
    }
    let extra_columns: Vec<String> = header
        .iter()
        .filter(|h| !LOSS_COLUMNS.contains(h))
        .map(str::to_string)
        .collect();
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line());
            schema("row", line, e.to_string())
        })?;
        let line = row.position().map(|p| p.line());
        let get = |name: &str| row.get(col[name]).unwrap_or("").to_string();
        let instance_id = get("instance_id");
        let model_id = get("model_id");
        if instance_id.is_empty() {
            return Err(schema("instance_id", line, "must not be empty".into()));
        }
        if model_id.is_empty() {
            return Err(schema("model_id", line, "must not be empty".into()));
        }
        let loss: f64 = get("loss")
            .parse()
            .map_err(|e| schema("loss", line, format!("not a number: {e}")))?;
        if !(loss >= 0.0 && loss.is_finite()) {
            return Err(schema("loss", line, format!("must be finite and nonnegative, got {loss}")));
        }
        if !seen.insert((instance_id.clone(), model_id.clone())) {
            return Err(schema(
                "instance_id",
                line,
                format!("duplicate row for ({instance_id}, {model_id})"),
            ));
        }
        let extra = header
            .iter()
            .zip(row.iter())
            .filter(|(h, _)| !LOSS_COLUMNS.contains(h))
            .map(|(h, v)| (h.to_string(), v.to_string()))
            .collect();
        records.push(LossRecord {
            instance_id,
            model_id,
            loss,
            extra,
        });
    }
    Ok(LossTable { records, extra_columns })
}

pub fn load_losses(path: impl AsRef<Path>) -> Result<LossTable> {
    let path = path.as_ref();
    parse_losses(&read_bytes(path)?, Some(path))
}

pub fn save_losses(path: impl AsRef<Path>, table: &LossTable) -> Result<()> {
    write_atomic(path.as_ref(), &table.to_csv()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_keeps_extra_columns() {
        let text = "model_id,instance_id,loss,note\nm1,q1,2.5,easy\nm2,q1,1.25,\n";
        let t = parse_losses(text.as_bytes(), None).unwrap();
        assert_eq!(t.records.len(), 2);
        assert_eq!(t.get("q1", "m2"), Some(1.25));
        assert_eq!(t.extra_columns, vec!["note".to_string()]);
        assert_eq!(t.records[0].extra["note"], "easy");
        let again = parse_losses(&t.to_csv().unwrap(), None).unwrap();
        assert_eq!(again, t);
    }

    #[test]
    fn rejects_bad_rows() {
        let neg = "instance_id,model_id,loss\nq1,m1,1.0\nq2,m1,-0.5\n";
        match parse_losses(neg.as_bytes(), None) {
            Err(Error::Schema { field, line, .. }) => assert_eq!((field.as_str(), line), ("loss", Some(3))),
            other => panic!("{other:?}"),
        }
        assert!(parse_losses(b"instance_id,loss\nq1,1.0\n", None).is_err());
        assert!(parse_losses(b"instance_id,model_id,loss\nq1,m1,abc\n", None).is_err());
        assert!(parse_losses(b"instance_id,model_id,loss\nq1,m1,1\nq1,m1,2\n", None).is_err());
        assert!(parse_losses(b"instance_id,model_id,loss\n", None).unwrap().records.is_empty());
    }
}
