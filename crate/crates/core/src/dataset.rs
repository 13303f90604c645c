//! Newline-delimited session records.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::game::SessionRecord;

/// Longest accepted record line in bytes.
pub const MAX_LINE_BYTES: usize = 1 << 20;

/// Parses and validates one record line.
pub fn parse_session_line(line: &str) -> Result<SessionRecord> {
    if line.len() > MAX_LINE_BYTES {
        return Err(Error::Validation("record line too long".into()));
    }
    let record: SessionRecord = serde_json::from_str(line)?;
    record.validate()?;
    Ok(record)
}

pub fn session_line(record: &SessionRecord) -> Result<String> {
    Ok(serde_json::to_string(record)?)
}

/// Reads every record, skipping blank lines. Errors carry the 1-based line
/// number.
pub fn read_sessions(path: &Path) -> Result<Vec<SessionRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_session_line(&line).map_err(|e| Error::Dataset {
            line: k + 1,
            reason: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Writes `records` to `path`, replacing any existing file.
pub fn write_sessions(path: &Path, records: &[SessionRecord]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        r.validate()?;
        writeln!(w, "{}", session_line(r)?).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Appends one validated record as a single write.
pub fn append_session(path: &Path, record: &SessionRecord) -> Result<()> {
    record.validate()?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut line = session_line(record)?;
    line.push('\n');
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    file.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Records of one iteration of the outer loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub iteration: usize,
    pub sessions: Vec<SessionRecord>,
}

impl Dataset {
    /// Every record validates and both stages were played by `mechanism_id`.
    pub fn validate(&self, mechanism_id: &str) -> Result<()> {
        for s in &self.sessions {
            s.validate()?;
            if s.mechanism_a != mechanism_id || s.mechanism_b != mechanism_id {
                return Err(Error::Validation(format!(
                    "group {} was not played by {mechanism_id}",
                    s.group_id
                )));
            }
        }
        Ok(())
    }

    /// Records usable for MODEL: bot-filled groups are left out unless
    /// `include_bots`.
    pub fn training_sessions(&self, include_bots: bool) -> impl Iterator<Item = &SessionRecord> {
        self.sessions
            .iter()
            .filter(move |s| include_bots || s.bot_seats.is_empty())
    }
}
