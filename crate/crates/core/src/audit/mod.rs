//! Append-only, SHA-256 hash-chained audit ledger.
//!
//! Each record's hash covers a length-framed encoding of every other field,
//! including the previous record's hash. Record 0 chains from 32 zero bytes.

mod store;

use std::ops::Range;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canonical::{canonical_json, hex32, FramedWriter};
use crate::clock::{Clock, SystemClock};
use crate::policy::{Effect, PolicyDecision};

pub use store::{builtin_stores, FileStore, LedgerStore, MemoryStore};

pub const GENESIS: [u8; 32] = [0u8; 32];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AuditError {
    #[error("ledger persistence failure: {0}")]
    Persistence(String),
    #[error("requested range {start}..{end} exceeds ledger length {len}")]
    RangeOutOfBounds { start: u64, end: u64, len: u64 },
    #[error("ledger entry {0} is not a readable record")]
    Corrupt(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditDecision {
    pub effect: Effect,
    pub reason: String,
}

impl AuditDecision {
    pub fn allow(reason: impl Into<String>) -> Self {
        Self {
            effect: Effect::Allow,
            reason: reason.into(),
        }
    }

    pub fn deny(reason: impl Into<String>) -> Self {
        Self {
            effect: Effect::Deny,
            reason: reason.into(),
        }
    }
}

impl From<&PolicyDecision> for AuditDecision {
    fn from(d: &PolicyDecision) -> Self {
        Self {
            effect: d.effect(),
            reason: d.reason().to_string(),
        }
    }
}

/// Caller-supplied content of a record; sequencing and hashing are added by
/// [`Ledger::append`].
#[derive(Debug, Clone, PartialEq)]
pub struct RecordFields {
    pub intent: String,
    pub plan_digest: [u8; 32],
    pub decision: AuditDecision,
    pub tool_name: String,
    pub args: Value,
    pub mutation_summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    pub intent: String,
    #[serde(with = "hex32")]
    pub plan_digest: [u8; 32],
    pub decision: AuditDecision,
    pub tool_name: String,
    pub args: Value,
    pub mutation_summary: String,
    #[serde(with = "hex32")]
    pub prev_hash: [u8; 32],
    #[serde(with = "hex32")]
    pub hash: [u8; 32],
}

impl AuditRecord {
    /// Hash preimage: every field but `hash`, in fixed order, length-framed.
    pub fn preimage(&self) -> FramedWriter {
        let mut w = FramedWriter::new();
        w.u64(self.seq)
            .str(&self.timestamp.to_rfc3339_opts(SecondsFormat::Nanos, true))
            .str(&self.intent)
            .bytes(&self.plan_digest)
            .str(&self.decision.effect.to_string())
            .str(&self.decision.reason)
            .str(&self.tool_name)
            .str(&canonical_json(&self.args))
            .str(&self.mutation_summary)
            .bytes(&self.prev_hash);
        w
    }

    pub fn compute_hash(&self) -> [u8; 32] {
        self.preimage().sha256()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ChainStatus {
    Valid,
    BrokenAt { seq: u64 },
}

struct Inner {
    store: Box<dyn LedgerStore>,
    next_seq: u64,
    last_hash: [u8; 32],
}

/// Single-writer ledger. Appends, verification and export all go through one
/// lock, so readers always observe a complete prefix.
pub struct Ledger {
    inner: Mutex<Inner>,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for Ledger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.lock().expect("ledger lock poisoned");
        f.debug_struct("Ledger")
            .field("backend", &inner.store.backend())
            .field("len", &inner.next_seq)
            .finish()
    }
}

impl Ledger {
    pub fn in_memory() -> Self {
        Self::open(Box::new(MemoryStore::new()), Arc::new(SystemClock))
            .expect("memory store cannot fail to scan")
    }

    /// Opens a ledger over an existing store, continuing the chain from its
    /// last entry.
    pub fn open(store: Box<dyn LedgerStore>, clock: Arc<dyn Clock>) -> Result<Self, AuditError> {
        let entries = store.scan()?;
        let next_seq = entries.len() as u64;
        let last_hash = entries
            .last()
            .and_then(|e| serde_json::from_str::<AuditRecord>(e).ok())
            .map_or(GENESIS, |r| r.hash);
        Ok(Self {
            inner: Mutex::new(Inner {
                store,
                next_seq,
                last_hash,
            }),
            clock,
        })
    }

    pub fn append(&self, fields: RecordFields) -> Result<AuditRecord, AuditError> {
        let mut inner = self.inner.lock().expect("ledger lock poisoned");
        let mut record = AuditRecord {
            seq: inner.next_seq,
            timestamp: self.clock.now(),
            intent: fields.intent,
            plan_digest: fields.plan_digest,
            decision: fields.decision,
            tool_name: fields.tool_name,
            args: fields.args,
            mutation_summary: fields.mutation_summary,
            prev_hash: inner.last_hash,
            hash: [0; 32],
        };
        record.hash = record.compute_hash();
        let line = serde_json::to_string(&record)
            .map_err(|e| AuditError::Persistence(e.to_string()))?;
        inner.store.append(&line)?;
        inner.next_seq += 1;
        inner.last_hash = record.hash;
        Ok(record)
    }

    pub fn len(&self) -> u64 {
        self.inner.lock().expect("ledger lock poisoned").next_seq
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn backend(&self) -> &'static str {
        self.inner.lock().expect("ledger lock poisoned").store.backend()
    }

    /// Re-reads every stored entry, recomputes hashes and linkage, and reports
    /// the first entry that fails.
    pub fn verify_chain(&self) -> Result<ChainStatus, AuditError> {
        let entries = {
            let inner = self.inner.lock().expect("ledger lock poisoned");
            inner.store.scan()?
        };
        Ok(verify_entries(&entries))
    }

    pub fn export(&self, range: Range<u64>) -> Result<Vec<AuditRecord>, AuditError> {
        let entries = {
            let inner = self.inner.lock().expect("ledger lock poisoned");
            inner.store.scan()?
        };
        let len = entries.len() as u64;
        if range.start > range.end || range.end > len {
            return Err(AuditError::RangeOutOfBounds {
                start: range.start,
                end: range.end,
                len,
            });
        }
        entries[range.start as usize..range.end as usize]
            .iter()
            .enumerate()
            .map(|(i, e)| {
                serde_json::from_str(e).map_err(|_| AuditError::Corrupt(range.start + i as u64))
            })
            .collect()
    }

    pub fn export_all(&self) -> Result<Vec<AuditRecord>, AuditError> {
        let len = self.len();
        self.export(0..len)
    }
}

pub fn verify_entries(entries: &[String]) -> ChainStatus {
    let mut prev = GENESIS;
    for (i, entry) in entries.iter().enumerate() {
        let seq = i as u64;
        let Ok(record) = serde_json::from_str::<AuditRecord>(entry) else {
            return ChainStatus::BrokenAt { seq };
        };
        if record.seq != seq || record.prev_hash != prev || record.compute_hash() != record.hash {
            return ChainStatus::BrokenAt { seq };
        }
        prev = record.hash;
    }
    ChainStatus::Valid
}
