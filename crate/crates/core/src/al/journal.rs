use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::Category;
use crate::error::{Error, Result};

/// One human label, as persisted in the session journal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub iteration: usize,
    pub pair_id: usize,
    pub left_id: String,
    pub right_id: String,
    pub category: Category,
    pub label: u8,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

pub(crate) fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Appends entries as JSON lines, flushing after every batch.
#[derive(Debug)]
pub struct JournalWriter {
    path: PathBuf,
    file: File,
}

impl JournalWriter {
    /// Opens for appending, cutting off a torn final line first.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let io = |e| Error::io(&path, e);
        if let Ok(bytes) = std::fs::read(&path) {
            if !bytes.is_empty() && bytes.last() != Some(&b'\n') {
                let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
                OpenOptions::new()
                    .write(true)
                    .open(&path)
                    .and_then(|f| f.set_len(keep as u64))
                    .map_err(io)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        Ok(JournalWriter { path, file })
    }

    pub fn append(&mut self, entries: &[JournalEntry]) -> Result<()> {
        let mut buf = Vec::new();
        for e in entries {
            serde_json::to_writer(&mut buf, e)?;
            buf.push(b'\n');
        }
        self.file
            .write_all(&buf)
            .and_then(|_| self.file.sync_data())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads a journal. A missing file is an empty journal; a torn final line
/// left by an interrupted write is skipped.
pub fn read_journal(path: impl AsRef<Path>) -> Result<Vec<JournalEntry>> {
    let path = path.as_ref();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(e) => out.push(e),
            Err(e) if i + 1 == lines.len() => {
                log::warn!("{}: ignoring torn final line: {e}", path.display());
            }
            Err(e) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    message: format!("line {}: {e}", i + 1),
                })
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(i: usize) -> JournalEntry {
        JournalEntry {
            iteration: i,
            pair_id: 10 + i,
            left_id: format!("a{i}"),
            right_id: format!("b{i}"),
            category: Category::UncertainNegative,
            label: (i % 2) as u8,
            timestamp: 1_700_000_000,
        }
    }

    #[test]
    fn append_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        assert!(read_journal(&path).unwrap().is_empty());
        JournalWriter::open(&path)
            .unwrap()
            .append(&[entry(0), entry(1)])
            .unwrap();
        JournalWriter::open(&path).unwrap().append(&[entry(2)]).unwrap();
        assert_eq!(read_journal(&path).unwrap(), vec![entry(0), entry(1), entry(2)]);
    }

    #[test]
    fn torn_tail_is_skipped_but_corruption_is_not() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        JournalWriter::open(&path).unwrap().append(&[entry(0)]).unwrap();
        std::fs::OpenOptions::new()
            .append(true)
            .open(&path)
            .unwrap()
            .write_all(b"{\"iteration\":1,\"pa")
            .unwrap();
        assert_eq!(read_journal(&path).unwrap(), vec![entry(0)]);
        JournalWriter::open(&path).unwrap().append(&[entry(1)]).unwrap();
        assert_eq!(read_journal(&path).unwrap(), vec![entry(0), entry(1)]);
        std::fs::write(&path, "garbage\n{}\n").unwrap();
        assert!(matches!(read_journal(&path), Err(Error::Parse { .. })));
    }
}
