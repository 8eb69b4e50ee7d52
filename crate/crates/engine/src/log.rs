use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use uuid::Uuid;

/// One line of the engine's JSONL event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    /// RFC 3339 timestamp with microseconds.
    pub ts: String,
    pub level: String,
    pub event: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<Uuid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qber: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    pub detail: serde_json::Value,
}

impl LogRecord {
    pub fn new(level: &str, event: &str) -> Self {
        Self {
            ts: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true),
            level: level.into(),
            event: event.into(),
            request_id: None,
            link: None,
            qber: None,
            duration_s: None,
            detail: serde_json::Value::Object(Default::default()),
        }
    }

    pub fn info(event: &str) -> Self {
        Self::new("info", event)
    }

    pub fn request(mut self, id: Uuid) -> Self {
        self.request_id = Some(id);
        self
    }

    pub fn link(mut self, link: impl Into<String>) -> Self {
        self.link = Some(link.into());
        self
    }

    pub fn qber(mut self, qber: f64) -> Self {
        self.qber = Some(qber);
        self
    }

    pub fn duration(mut self, duration_s: f64) -> Self {
        self.duration_s = Some(duration_s);
        self
    }

    pub fn detail(mut self, detail: serde_json::Value) -> Self {
        self.detail = detail;
        self
    }
}

enum Sink {
    File(BufWriter<File>),
    Stderr,
    Memory(Arc<Mutex<Vec<LogRecord>>>),
}

/// Append-only event log. Falls back to stderr when the file cannot be
/// written.
pub struct EventLog {
    sink: Mutex<Sink>,
}

impl EventLog {
    pub fn open(path: &Path) -> Self {
        let sink = match OpenOptions::new().create(true).append(true).open(path) {
            Ok(file) => Sink::File(BufWriter::new(file)),
            Err(e) => {
                eprintln!("cannot open event log {}: {e}; logging to stderr", path.display());
                Sink::Stderr
            }
        };
        Self { sink: Mutex::new(sink) }
    }

    pub fn stderr() -> Self {
        Self {
            sink: Mutex::new(Sink::Stderr),
        }
    }

    /// A log kept in memory, for tests.
    pub fn memory() -> (Self, Arc<Mutex<Vec<LogRecord>>>) {
        let records = Arc::new(Mutex::new(Vec::new()));
        let log = Self {
            sink: Mutex::new(Sink::Memory(records.clone())),
        };
        (log, records)
    }

    pub fn record(&self, record: LogRecord) {
        let mut sink = self.sink.lock().unwrap();
        match &mut *sink {
            Sink::Memory(records) => records.lock().unwrap().push(record),
            Sink::File(out) => {
                let line = serde_json::to_string(&record).expect("log records serialize");
                let written = writeln!(out, "{line}").and_then(|_| out.flush());
                if let Err(e) = written {
                    eprintln!("event log unwritable ({e}); switching to stderr");
                    eprintln!("{line}");
                    *sink = Sink::Stderr;
                }
            }
            Sink::Stderr => {
                let line = serde_json::to_string(&record).expect("log records serialize");
                eprintln!("{line}");
            }
        }
    }
}

impl EventLog {
    /// Reads a JSONL event log, skipping lines that do not parse.
    pub fn read(path: &Path) -> std::io::Result<Vec<LogRecord>> {
        let text = std::fs::read_to_string(path)?;
        Ok(text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_log_is_jsonl() {
        let dir = std::env::temp_dir().join(format!("qdnet-log-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("engine.jsonl");
        let log = EventLog::open(&path);
        log.record(LogRecord::info("received").request(Uuid::nil()).link("A-B"));
        log.record(LogRecord::info("round_completed").qber(0.25).duration(0.02));
        let records = EventLog::read(&path).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].event, "received");
        assert_eq!(records[1].qber, Some(0.25));
        let raw = std::fs::read_to_string(&path).unwrap();
        let first: serde_json::Value = serde_json::from_str(raw.lines().next().unwrap()).unwrap();
        for field in ["ts", "level", "event", "request_id", "link", "detail"] {
            assert!(first.get(field).is_some(), "missing {field}");
        }
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn unwritable_path_falls_back() {
        let log = EventLog::open(Path::new("/nonexistent-dir/engine.jsonl"));
        log.record(LogRecord::info("ready"));
    }
}
