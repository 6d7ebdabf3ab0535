use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{TrialEvent, TrialSink};
use crate::oracles::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialVerdict {
    Pass,
    Fail,
    Error,
}

/// One line of a run's trial log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub run_id: String,
    pub instance_id: String,
    pub model_id: String,
    pub trial_index: u64,
    /// Retry number for this index; only the last attempt can be decisive.
    #[serde(default)]
    pub attempt: u32,
    pub seed: u64,
    pub verdict: TrialVerdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
    pub output_hash: String,
    pub latency_ms: u64,
    pub timestamp: String,
}

impl TrialRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| Error::Schema {
            path: None,
            field: field.to_string(),
            line: None,
            message: message.to_string(),
        };
        if self.instance_id.is_empty() {
            return Err(bad("instance_id", "must not be empty"));
        }
        if self.output_hash.len() != 64 || !self.output_hash.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(bad("output_hash", "must be 64 hex digits"));
        }
        if (self.verdict == TrialVerdict::Error) != self.error_code.is_some() {
            return Err(bad("error_code", "required exactly when verdict is error"));
        }
        Ok(())
    }

    pub fn passed(&self) -> Option<bool> {
        match self.verdict {
            TrialVerdict::Pass => Some(true),
            TrialVerdict::Fail => Some(false),
            TrialVerdict::Error => None,
        }
    }

    fn from_event(run_id: &str, model_id: &str, e: &TrialEvent<'_>) -> Self {
        let (verdict, error_code, error_message, output_hash, latency_ms) = match e.result {
            Ok(o) => (
                if o.passed { TrialVerdict::Pass } else { TrialVerdict::Fail },
                None,
                None,
                o.output_hash.clone(),
                o.latency_ms,
            ),
            Err(err) => (
                TrialVerdict::Error,
                Some(err.code.clone()),
                Some(err.message.clone()),
                sha256_hex(b""),
                0,
            ),
        };
        TrialRecord {
            run_id: run_id.to_string(),
            instance_id: e.instance_id.to_string(),
            model_id: model_id.to_string(),
            trial_index: e.trial_index,
            attempt: e.attempt,
            seed: e.seed,
            verdict,
            error_code,
            error_message,
            output_hash,
            latency_ms,
            timestamp: utc_now(),
        }
    }
}

pub(crate) fn utc_now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// What was dropped from a log whose last line was incomplete.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoveredTail {
    pub line: usize,
    pub bytes_dropped: u64,
}

/// Reads every record of a trial log. A final line that is unterminated or
/// does not parse is reported instead of failing; corruption anywhere else
/// is an error.
pub fn read_trial_log(path: &Path) -> Result<(Vec<TrialRecord>, Option<RecoveredTail>, u64)> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), None, 0)),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut good_len = 0u64;
    let mut line_no = 0usize;
    let mut buf = Vec::new();
    let mut pending_error: Option<(usize, String)> = None;
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        if let Some((line, message)) = pending_error.take() {
            return Err(Error::CorruptLog {
                path: path.to_path_buf(),
                line,
                message,
            });
        }
        let terminated = buf.last() == Some(&b'\n');
        let parsed = std::str::from_utf8(&buf)
            .map_err(|e| e.to_string())
            .and_then(|s| serde_json::from_str::<TrialRecord>(s.trim_end()).map_err(|e| e.to_string()));
        match parsed {
            Ok(rec) if terminated => {
                records.push(rec);
                good_len += n as u64;
            }
            Ok(_) => pending_error = Some((line_no, "unterminated line".into())),
            Err(message) => pending_error = Some((line_no, message)),
        }
    }
    let total = std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
    let recovered = pending_error.map(|(line, _)| RecoveredTail {
        line,
        bytes_dropped: total - good_len,
    });
    Ok((records, recovered, good_len))
}

/// Append-only JSONL trial log for one run, doubling as the estimator's
/// [`TrialSink`].
///
/// Records are buffered and made durable (flushed and synced) by
/// [`TrialLog::sync`], which the estimator triggers before returning each
/// estimate. [`TrialLog::append_trial`] syncs every record.
pub struct TrialLog {
    path: PathBuf,
    run_id: String,
    model_id: String,
    writer: BufWriter<File>,
    decided: BTreeMap<String, BTreeMap<u64, bool>>,
    lines: u64,
    recovered: Option<RecoveredTail>,
}

impl std::fmt::Debug for TrialLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrialLog")
            .field("path", &self.path)
            .field("run_id", &self.run_id)
            .field("lines", &self.lines)
            .finish()
    }
}

impl TrialLog {
    /// Opens or creates the log, dropping an incomplete final line.
    pub fn open(path: impl AsRef<Path>, run_id: &str, model_id: &str) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let (records, recovered, good_len) = read_trial_log(&path)?;
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .write(true)
            .truncate(false)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        if let Some(tail) = &recovered {
            log::warn!(
                "{}: dropping incomplete line {} ({} bytes)",
                path.display(),
                tail.line,
                tail.bytes_dropped
            );
            file.set_len(good_len).map_err(|e| Error::io(&path, e))?;
            file.sync_data().map_err(|e| Error::io(&path, e))?;
        }
        file.seek(SeekFrom::End(0)).map_err(|e| Error::io(&path, e))?;
        let mut decided: BTreeMap<String, BTreeMap<u64, bool>> = BTreeMap::new();
        for rec in &records {
            if let Some(v) = rec.passed() {
                decided.entry(rec.instance_id.clone()).or_default().insert(rec.trial_index, v);
            }
        }
        Ok(TrialLog {
            path,
            run_id: run_id.to_string(),
            model_id: model_id.to_string(),
            writer: BufWriter::new(file),
            decided,
            lines: records.len() as u64,
            recovered,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> u64 {
        self.lines
    }

    pub fn is_empty(&self) -> bool {
        self.lines == 0
    }

    pub fn recovered_tail(&self) -> Option<&RecoveredTail> {
        self.recovered.as_ref()
    }

    /// Decisive verdicts recorded so far for `instance_id`.
    pub fn known(&self, instance_id: &str) -> BTreeMap<u64, bool> {
        self.decided.get(instance_id).cloned().unwrap_or_default()
    }

    /// Buffers one record. A second pass or fail at an index that already
    /// has one is rejected and nothing is written.
    pub fn append(&mut self, record: &TrialRecord) -> Result<()> {
        record.validate()?;
        if let Some(v) = record.passed() {
            let seen = self.decided.entry(record.instance_id.clone()).or_default();
            if seen.contains_key(&record.trial_index) {
                return Err(Error::DuplicateTrial {
                    instance_id: record.instance_id.clone(),
                    trial_index: record.trial_index,
                });
            }
            seen.insert(record.trial_index, v);
        }
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        self.writer.write_all(&line).map_err(|e| Error::io(&self.path, e))?;
        self.lines += 1;
        Ok(())
    }

    /// Appends one record and makes it durable before returning.
    pub fn append_trial(&mut self, record: &TrialRecord) -> Result<()> {
        self.append(record)?;
        self.sync()
    }

    pub fn sync(&mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))?;
        self.writer.get_ref().sync_data().map_err(|e| Error::io(&self.path, e))
    }
}

impl TrialSink for TrialLog {
    fn record(&mut self, event: TrialEvent<'_>) -> Result<()> {
        let rec = TrialRecord::from_event(&self.run_id, &self.model_id, &event);
        self.append(&rec)
    }

    fn flush(&mut self) -> Result<()> {
        self.sync()
    }

    fn log_ref(&self, instance_id: &str) -> String {
        let name = self.path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        format!("{name}#{instance_id}")
    }
}

impl Drop for TrialLog {
    fn drop(&mut self) {
        let _ = self.writer.flush();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(index: u64, verdict: TrialVerdict) -> TrialRecord {
        TrialRecord {
            run_id: "run".into(),
            instance_id: "i1".into(),
            model_id: "m".into(),
            trial_index: index,
            attempt: 0,
            seed: index * 7,
            verdict,
            error_code: (verdict == TrialVerdict::Error).then(|| "timeout".to_string()),
            error_message: None,
            output_hash: sha256_hex(b"x"),
            latency_ms: 3,
            timestamp: "2024-01-01T00:00:00.000Z".into(),
        }
    }

    fn line_count(p: &Path) -> usize {
        std::fs::read_to_string(p).unwrap().lines().count()
    }

    #[test]
    fn append_and_reject_duplicate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trials.jsonl");
        let mut log = TrialLog::open(&path, "run", "m").unwrap();
        log.append_trial(&record(0, TrialVerdict::Fail)).unwrap();
        assert_eq!(line_count(&path), 1);
        let before = std::fs::read(&path).unwrap();
        assert!(matches!(
            log.append_trial(&record(0, TrialVerdict::Pass)),
            Err(Error::DuplicateTrial { trial_index: 0, .. })
        ));
        assert_eq!(std::fs::read(&path).unwrap(), before);
        // an errored attempt may precede the decisive one
        log.append_trial(&record(1, TrialVerdict::Error)).unwrap();
        log.append_trial(&record(1, TrialVerdict::Pass)).unwrap();
        assert_eq!(line_count(&path), 3);
    }

    #[test]
    fn ten_thousand_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trials.jsonl");
        let written: Vec<TrialRecord> = (0..10_000)
            .map(|i| record(i, if i % 13 == 0 { TrialVerdict::Pass } else { TrialVerdict::Fail }))
            .collect();
        {
            let mut log = TrialLog::open(&path, "run", "m").unwrap();
            for r in &written {
                log.append(r).unwrap();
            }
            log.sync().unwrap();
        }
        assert_eq!(line_count(&path), 10_000);
        let (read, recovered, _) = read_trial_log(&path).unwrap();
        assert!(recovered.is_none());
        assert_eq!(read, written);
    }

    #[test]
    fn garbage_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trials.jsonl");
        {
            let mut log = TrialLog::open(&path, "run", "m").unwrap();
            for i in 0..3 {
                log.append(&record(i, TrialVerdict::Fail)).unwrap();
            }
        }
        let good = std::fs::read(&path).unwrap();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"run_id\": \"run\", \"inst").unwrap();
        drop(f);
        let log = TrialLog::open(&path, "run", "m").unwrap();
        assert_eq!(log.recovered_tail().unwrap().line, 4);
        assert_eq!(log.len(), 3);
        assert_eq!(std::fs::read(&path).unwrap(), good);
    }

    #[test]
    fn corruption_before_tail_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trials.jsonl");
        let ok = serde_json::to_string(&record(1, TrialVerdict::Fail)).unwrap();
        std::fs::write(&path, format!("garbage\n{ok}\n")).unwrap();
        assert!(matches!(TrialLog::open(&path, "run", "m"), Err(Error::CorruptLog { line: 1, .. })));
    }

    #[test]
    fn record_validation() {
        let mut r = record(0, TrialVerdict::Error);
        r.error_code = None;
        assert!(r.validate().is_err());
        let mut r = record(0, TrialVerdict::Pass);
        r.output_hash = "abc".into();
        assert!(r.validate().is_err());
    }
}
