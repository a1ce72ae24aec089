//! JSON-lines training logs, one `{step, loss, lr, queue_fill}` object per
//! step. A stage may append one closing `{"summary": ...}` line.

use std::path::Path;

use chanrep_core::repr::StepRecord;
use serde::{Deserialize, Serialize};

use crate::error::{read_string, write, HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub queue_fill: Option<usize>,
}

impl From<&StepRecord> for LogLine {
    fn from(r: &StepRecord) -> Self {
        Self { step: r.step, loss: r.loss, lr: r.lr, queue_fill: r.queue_fill }
    }
}

pub fn render(records: &[StepRecord], summary: Option<serde_json::Value>) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&LogLine::from(r)).expect("plain record"));
        out.push('\n');
    }
    if let Some(s) = summary {
        out.push_str(&serde_json::json!({ "summary": s }).to_string());
        out.push('\n');
    }
    out
}

pub fn save(path: &Path, records: &[StepRecord], summary: Option<serde_json::Value>) -> Result<()> {
    write(path, render(records, summary).as_bytes())
}

/// Step records and the optional summary of a log file.
pub fn load(path: &Path) -> Result<(Vec<LogLine>, Option<serde_json::Value>)> {
    let text = read_string(path)?;
    let mut lines = Vec::new();
    let mut summary = None;
    for (i, l) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: serde_json::Value = serde_json::from_str(l).map_err(|e| HarnessError::format(path, format!("line {}: {e}", i + 1)))?;
        if let Some(s) = v.get("summary") {
            summary = Some(s.clone());
        } else {
            lines.push(serde_json::from_value(v).map_err(|e| HarnessError::format(path, format!("line {}: {e}", i + 1)))?);
        }
    }
    Ok((lines, summary))
}
