//! Structured per-stage event logs: `<run>/logs/<stage>.jsonl`, one JSON
//! object per line with sorted keys. Content is deterministic; wall-clock
//! timings go to a separate `timing.json` per stage.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{Map, Value};

use crate::formats::FormatError;

pub struct StageLog {
    stage: String,
    path: PathBuf,
    out: BufWriter<File>,
    started: Instant,
}

impl StageLog {
    /// Starts a fresh log for `stage`, replacing any earlier one.
    pub fn create(run_dir: &Path, stage: &str) -> Result<Self, FormatError> {
        let dir = run_dir.join("logs");
        std::fs::create_dir_all(&dir).map_err(|e| FormatError::io(&dir, e))?;
        let path = dir.join(format!("{stage}.jsonl"));
        let file = File::create(&path).map_err(|e| FormatError::io(&path, e))?;
        Ok(Self {
            stage: stage.to_string(),
            path,
            out: BufWriter::new(file),
            started: Instant::now(),
        })
    }

    /// Appends `{"stage", "event", ...fields}`. `fields` must be an object
    /// or null.
    pub fn event(&mut self, event: &str, fields: Value) {
        let mut m = match fields {
            Value::Object(m) => m,
            _ => Map::new(),
        };
        m.insert("stage".into(), Value::from(self.stage.as_str()));
        m.insert("event".into(), Value::from(event));
        let line = Value::Object(m).to_string();
        if let Err(e) = writeln!(self.out, "{line}") {
            log::warn!("{}: {e}", self.path.display());
        }
        log::debug!("{line}");
    }

    pub fn elapsed_seconds(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }
}

impl Drop for StageLog {
    fn drop(&mut self) {
        let _ = self.out.flush();
    }
}

/// Reads every event of a stage log.
pub fn read_events(run_dir: &Path, stage: &str) -> Result<Vec<Value>, FormatError> {
    let path = run_dir.join("logs").join(format!("{stage}.jsonl"));
    let text = std::fs::read_to_string(&path).map_err(|e| FormatError::io(&path, e))?;
    text.lines()
        .map(|l| serde_json::from_str(l).map_err(|e| FormatError::malformed(&path, e.to_string())))
        .collect()
}
