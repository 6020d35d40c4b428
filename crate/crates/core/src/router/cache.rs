use std::num::NonZeroUsize;
use std::sync::RwLock;

use chrono::{DateTime, Utc};
use lru::LruCache;

use super::{cosine_similarity, TermVector};

pub const DEFAULT_CACHE_CAPACITY: usize = 1_024;

#[derive(Debug, Clone)]
pub struct CacheEntry<R> {
    /// Entries are only matched against lookups in the same partition.
    pub partition: String,
    pub intent_vector: TermVector,
    pub response: R,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheHit<R> {
    pub response: R,
    pub similarity: f64,
}

/// Bounded LRU cache keyed by intent similarity.
///
/// Lookups scan every entry in the partition and return the most similar one
/// at or above the threshold. The cache is an optimization only; a racing
/// insert may or may not be visible to a concurrent lookup.
#[derive(Debug)]
pub struct CognitiveCache<R> {
    entries: RwLock<LruCache<u64, CacheEntry<R>>>,
    next_id: std::sync::atomic::AtomicU64,
}

impl<R: Clone> CognitiveCache<R> {
    pub fn new(capacity: usize) -> Self {
        let cap = NonZeroUsize::new(capacity.max(1)).expect("capacity is at least one");
        Self {
            entries: RwLock::new(LruCache::new(cap)),
            next_id: std::sync::atomic::AtomicU64::new(0),
        }
    }

    pub fn insert(&self, entry: CacheEntry<R>) {
        let id = self
            .next_id
            .fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        self.entries
            .write()
            .expect("cache lock poisoned")
            .put(id, entry);
    }

    pub fn lookup(&self, intent: &TermVector, threshold: f64) -> Option<CacheHit<R>> {
        self.lookup_in("", intent, threshold)
    }

    pub fn lookup_in(
        &self,
        partition: &str,
        intent: &TermVector,
        threshold: f64,
    ) -> Option<CacheHit<R>> {
        let (id, hit) = {
            let guard = self.entries.read().expect("cache lock poisoned");
            let mut best: Option<(u64, f64, &CacheEntry<R>)> = None;
            for (id, entry) in guard.iter() {
                if entry.partition != partition {
                    continue;
                }
                let sim = cosine_similarity(intent, &entry.intent_vector);
                if sim >= threshold && best.as_ref().is_none_or(|(_, s, _)| sim > *s) {
                    best = Some((*id, sim, entry));
                }
            }
            let (id, similarity, entry) = best?;
            (
                id,
                CacheHit {
                    response: entry.response.clone(),
                    similarity,
                },
            )
        };
        // Promotion is best-effort; skip it rather than block behind an insert.
        if let Ok(mut guard) = self.entries.try_write() {
            guard.promote(&id);
        }
        Some(hit)
    }

    /// Drops every entry, e.g. after a store mutation made cached results stale.
    pub fn clear(&self) {
        self.entries.write().expect("cache lock poisoned").clear();
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<R: Clone> Default for CognitiveCache<R> {
    fn default() -> Self {
        Self::new(DEFAULT_CACHE_CAPACITY)
    }
}
