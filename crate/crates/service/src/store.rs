//! JSON-lines event log with an fsync after every append.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{Result, ServiceError};
use crate::events::Event;

pub const LOG_FILE: &str = "events.jsonl";

#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
}

impl EventLog {
    /// Opens (creating if needed) the log in `dir` and returns its events.
    ///
    /// A torn final line, left by a crash mid-append, is dropped and
    /// truncated away; a malformed line elsewhere is an error.
    pub fn open(dir: &Path) -> Result<(Self, Vec<Event>)> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(LOG_FILE);
        let mut events = Vec::new();
        let mut valid_len = 0u64;
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            let lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
            let last = lines.len().saturating_sub(1);
            for (k, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    valid_len += line.len() as u64 + 1;
                    continue;
                }
                match serde_json::from_str::<Event>(line) {
                    Ok(e) => {
                        events.push(e);
                        valid_len += line.len() as u64 + 1;
                    }
                    Err(e) if k == last => {
                        log::warn!("dropping torn final log line: {e}");
                    }
                    Err(e) => {
                        return Err(ServiceError::Corrupt(format!("line {}: {e}", k + 1)));
                    }
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        if file.metadata()?.len() > valid_len {
            file.set_len(valid_len)?;
        }
        Ok((Self { path, file }, events))
    }

    pub fn append(&mut self, event: &Event) -> Result<()> {
        let mut line = serde_json::to_vec(event)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
