use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde_json::Value;

use super::AuditError;
use crate::strategy::StrategyRegistry;

/// Minimal append/scan persistence for serialized audit records, one record
/// per entry. Implementations never rewrite or drop existing entries.
pub trait LedgerStore: Send {
    fn append(&mut self, entry: &str) -> Result<(), AuditError>;
    fn scan(&self) -> Result<Vec<String>, AuditError>;
    fn backend(&self) -> &'static str;
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    entries: Vec<String>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl LedgerStore for MemoryStore {
    fn append(&mut self, entry: &str) -> Result<(), AuditError> {
        self.entries.push(entry.to_string());
        Ok(())
    }

    fn scan(&self) -> Result<Vec<String>, AuditError> {
        Ok(self.entries.clone())
    }

    fn backend(&self) -> &'static str {
        "memory"
    }
}

/// Newline-delimited JSON file.
#[derive(Debug)]
pub struct FileStore {
    path: PathBuf,
    file: File,
}

impl FileStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, AuditError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .read(true)
            .open(&path)
            .map_err(|e| AuditError::Persistence(format!("{}: {e}", path.display())))?;
        Ok(Self { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl LedgerStore for FileStore {
    fn append(&mut self, entry: &str) -> Result<(), AuditError> {
        if entry.contains('\n') {
            return Err(AuditError::Persistence("record contains a newline".into()));
        }
        let mut line = String::with_capacity(entry.len() + 1);
        line.push_str(entry);
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| AuditError::Persistence(format!("{}: {e}", self.path.display())))
    }

    fn scan(&self) -> Result<Vec<String>, AuditError> {
        let file = File::open(&self.path)
            .map_err(|e| AuditError::Persistence(format!("{}: {e}", self.path.display())))?;
        let mut out = Vec::new();
        for chunk in BufReader::new(file).split(b'\n') {
            let bytes =
                chunk.map_err(|e| AuditError::Persistence(format!("{}: {e}", self.path.display())))?;
            if bytes.is_empty() {
                continue;
            }
            // Invalid UTF-8 is kept (lossily) so verification can flag the entry.
            out.push(String::from_utf8_lossy(&bytes).into_owned());
        }
        Ok(out)
    }

    fn backend(&self) -> &'static str {
        "file"
    }
}

/// `memory` (no parameters) and `file` (`{"path": "..."}`).
pub fn builtin_stores() -> StrategyRegistry<dyn LedgerStore> {
    let mut reg: StrategyRegistry<dyn LedgerStore> = StrategyRegistry::new("ledger store");
    reg.register("memory", |_| Ok(Box::new(MemoryStore::new())))
        .expect("fresh registry");
    reg.register("file", |params| {
        let path = params
            .get("path")
            .and_then(Value::as_str)
            .ok_or("missing string parameter 'path'")?;
        FileStore::open(path)
            .map(|s| Box::new(s) as Box<dyn LedgerStore>)
            .map_err(|e| e.to_string())
    })
    .expect("fresh registry");
    reg
}
