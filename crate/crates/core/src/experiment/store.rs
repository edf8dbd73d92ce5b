//! Append-only JSONL run store.
//!
//! `<dir>/run.jsonl` holds one JSON object per line, tagged by `kind`.
//! `<dir>/manifest.json` is a snapshot of the manifest the run was started
//! with. Writers hold an exclusive OS lock on `<dir>/run.lock`, which the OS
//! releases if the process dies.

use std::fs::{self, File, OpenOptions, TryLockError};
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::manifest::ExperimentManifest;
use crate::providers::SessionRecord;
use crate::tqp::{ParseErrorKind, TqpEvaluation, Warning};

pub const STORE_FILE: &str = "run.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = "run.lock";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("run store {0} is locked by another writer")]
    Locked(PathBuf),
    #[error("run store {0} not found")]
    Missing(PathBuf),
    #[error("{path}:{line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One line of `run.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StoreEntry {
    SubjectSession {
        condition: String,
        response_index: u32,
        session: SessionRecord,
    },
    EvaluatorSession {
        evaluator_id: String,
        condition: String,
        response_index: u32,
        eval_index: u32,
        subject_record_id: String,
        session: SessionRecord,
    },
    ParsedEval {
        /// Id of the evaluator session that was parsed.
        record_id: String,
        evaluator_id: String,
        condition: String,
        response_index: u32,
        eval_index: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        evaluation: Option<TqpEvaluation>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<ParseErrorKind>,
        #[serde(default)]
        warnings: Vec<Warning>,
    },
}

impl StoreEntry {
    pub fn kind(&self) -> &'static str {
        match self {
            StoreEntry::SubjectSession { .. } => "subject_session",
            StoreEntry::EvaluatorSession { .. } => "evaluator_session",
            StoreEntry::ParsedEval { .. } => "parsed_eval",
        }
    }

    pub fn session(&self) -> Option<&SessionRecord> {
        match self {
            StoreEntry::SubjectSession { session, .. }
            | StoreEntry::EvaluatorSession { session, .. } => Some(session),
            StoreEntry::ParsedEval { .. } => None,
        }
    }
}

/// Decodes one store line.
pub fn decode_entry(line: &str) -> Result<StoreEntry, serde_json::Error> {
    serde_json::from_str(line)
}

/// Reads every complete entry. A final line without a trailing newline is a
/// write cut short by a crash and is ignored; any other bad line is an error.
pub fn read_entries(dir: &Path) -> Result<Vec<StoreEntry>, StoreError> {
    let path = dir.join(STORE_FILE);
    if !dir.is_dir() {
        return Err(StoreError::Missing(dir.to_path_buf()));
    }
    let file = match File::open(&path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(&path)(e)),
    };
    let mut reader = BufReader::new(file);
    let mut entries = Vec::new();
    let mut buf = String::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf).map_err(io_err(&path))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        if !buf.ends_with('\n') {
            break;
        }
        let line = buf.trim_end();
        if line.is_empty() {
            continue;
        }
        let entry = decode_entry(line).map_err(|e| StoreError::Corrupt {
            path: path.clone(),
            line: line_no,
            message: e.to_string(),
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

pub fn read_manifest(dir: &Path) -> Result<ExperimentManifest, StoreError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| {
        if e.kind() == io::ErrorKind::NotFound {
            StoreError::Missing(path.clone())
        } else {
            io_err(&path)(e)
        }
    })?;
    serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
        path: path.clone(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Exclusive appender for one run directory.
#[derive(Debug)]
pub struct StoreWriter {
    dir: PathBuf,
    file: File,
    _lock: File,
    appended: usize,
}

impl StoreWriter {
    /// Locks the directory and opens `run.jsonl` for appending, dropping any
    /// torn trailing line left by an interrupted writer.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let lock_path = dir.join(LOCK_FILE);
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(io_err(&lock_path))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(TryLockError::WouldBlock) => return Err(StoreError::Locked(dir.to_path_buf())),
            Err(TryLockError::Error(e)) => return Err(io_err(&lock_path)(e)),
        }
        let path = dir.join(STORE_FILE);
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        truncate_torn_tail(&mut file).map_err(io_err(&path))?;
        Ok(StoreWriter {
            dir: dir.to_path_buf(),
            file,
            _lock: lock,
            appended: 0,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Entries appended through this writer.
    pub fn appended(&self) -> usize {
        self.appended
    }

    pub fn append(&mut self, entry: &StoreEntry) -> Result<(), StoreError> {
        let path = self.dir.join(STORE_FILE);
        let mut line = serde_json::to_string(entry).expect("store entries always serialize");
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .map_err(io_err(&path))?;
        self.file.sync_data().map_err(io_err(&path))?;
        self.appended += 1;
        Ok(())
    }

    pub fn write_manifest(&self, manifest: &ExperimentManifest) -> Result<(), StoreError> {
        let path = self.dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(manifest).expect("manifest always serializes");
        text.push('\n');
        fs::write(&path, text).map_err(io_err(&path))
    }
}

fn truncate_torn_tail(file: &mut File) -> io::Result<()> {
    let len = file.metadata()?.len();
    if len == 0 {
        return Ok(());
    }
    file.seek(SeekFrom::Start(0))?;
    let mut bytes = Vec::with_capacity(len as usize);
    file.read_to_end(&mut bytes)?;
    if bytes.last() == Some(&b'\n') {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    file.set_len(keep as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parsed(eval_index: u32) -> StoreEntry {
        StoreEntry::ParsedEval {
            record_id: format!("r{eval_index}"),
            evaluator_id: "gpt4o".into(),
            condition: "TIPc".into(),
            response_index: 1,
            eval_index,
            evaluation: None,
            error: Some(ParseErrorKind::MissingScore),
            warnings: vec![],
        }
    }

    #[test]
    fn append_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut w = StoreWriter::open(dir.path()).unwrap();
            w.append(&parsed(1)).unwrap();
            w.append(&parsed(2)).unwrap();
            assert_eq!(w.appended(), 2);
        }
        let entries = read_entries(dir.path()).unwrap();
        assert_eq!(entries, vec![parsed(1), parsed(2)]);
        let line = fs::read_to_string(dir.path().join(STORE_FILE)).unwrap();
        assert!(line.starts_with(r#"{"kind":"parsed_eval""#));
    }

    #[test]
    fn second_writer_is_locked_out() {
        let dir = tempfile::tempdir().unwrap();
        let _w = StoreWriter::open(dir.path()).unwrap();
        assert!(matches!(
            StoreWriter::open(dir.path()),
            Err(StoreError::Locked(_))
        ));
        // readers are never blocked
        assert!(read_entries(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn torn_tail_is_ignored_then_repaired() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut w = StoreWriter::open(dir.path()).unwrap();
            w.append(&parsed(1)).unwrap();
        }
        let path = dir.path().join(STORE_FILE);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"kind":"parsed_eval","record_"#).unwrap();
        drop(f);
        assert_eq!(read_entries(dir.path()).unwrap().len(), 1);
        {
            let mut w = StoreWriter::open(dir.path()).unwrap();
            w.append(&parsed(2)).unwrap();
        }
        assert_eq!(
            read_entries(dir.path()).unwrap(),
            vec![parsed(1), parsed(2)]
        );
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(STORE_FILE), "not json\n{}\n").unwrap();
        assert!(matches!(
            read_entries(dir.path()),
            Err(StoreError::Corrupt { line: 1, .. })
        ));
        assert!(matches!(
            read_entries(&dir.path().join("absent")),
            Err(StoreError::Missing(_))
        ));
    }
}
