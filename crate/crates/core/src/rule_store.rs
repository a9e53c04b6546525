//! Learned-rules tier: exact lookup keyed by [`ConditionKey`], confidence
//! bookkeeping and threshold invalidation.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::hash::BuildHasher;
use core::sync::atomic::{AtomicU64, Ordering};

use foldhash::fast::FixedState;
use hashbrown::HashTable;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::condition_keys::ConditionKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedRule {
    pub key: ConditionKey,
    pub solution: String,
    pub confidence: f64,
    pub failure_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvalidationConfig {
    pub theta: u32,
    pub decay: f64,
    pub restore: f64,
}

impl Default for InvalidationConfig {
    fn default() -> Self {
        Self { theta: 2, decay: 0.5, restore: 0.25 }
    }
}

impl InvalidationConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.theta == 0 {
            return Err(ConfigError("theta must be at least 1"));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(ConfigError("decay must lie strictly between 0 and 1"));
        }
        if self.restore.is_nan() || self.restore <= 0.0 || !self.restore.is_finite() {
            return Err(ConfigError("restore must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("invalid invalidation config: {0}")]
pub struct ConfigError(pub &'static str);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InvalidationOutcome {
    Retained { new_confidence: f64 },
    Invalidated,
    NotTracked,
}

/// Raised by a [`RuleSink`] when the backing medium rejects a write.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("rule persistence failed: {0}")]
pub struct StorageError(pub String);

/// A persistence failure during a mutation. The in-memory store has already
/// been updated; `outcome` reports what happened to the rule.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{source}")]
pub struct PersistFailure<T> {
    pub outcome: T,
    pub source: StorageError,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LoadError {
    #[error("rule `{key}`: key is not in canonical form (expected `{canonical}`)")]
    NonCanonicalKey { key: String, canonical: String },
    #[error("rule `{key}`: {reason}")]
    BadKey { key: String, reason: String },
    #[error("rule `{key}`: confidence {value} outside [0, 1]")]
    Confidence { key: String, value: String },
    #[error("rule `{key}`: failure_count {count} reaches theta {theta}")]
    FailureCount { key: String, count: u32, theta: u32 },
}

/// Serialized form of one rule. The key lives in the enclosing map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleEntry {
    pub solution: String,
    pub confidence: f64,
    pub failure_count: u32,
}

/// Sorted `key text → entry` map, the on-disk shape of a store.
pub type RulesSnapshot = BTreeMap<String, RuleEntry>;

/// Destination for store snapshots. File-backed sinks live in the std crate.
pub trait RuleSink: Send {
    fn save(&mut self, snapshot: &RulesSnapshot) -> Result<(), StorageError>;
}

pub struct RuleStore {
    table: HashTable<LearnedRule>,
    hasher: FixedState,
    sink: Option<Box<dyn RuleSink>>,
    persist_every: u32,
    pending: u32,
    lookups: AtomicU64,
    comparisons: AtomicU64,
}

impl core::fmt::Debug for RuleStore {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("RuleStore")
            .field("rules", &self.table.len())
            .field("has_sink", &self.sink.is_some())
            .finish()
    }
}

impl Default for RuleStore {
    fn default() -> Self {
        Self::new()
    }
}

// Clones are detached from the sink: a cloned store is a scratch copy
// (evaluation rollouts, replays) and must not write to the original file.
impl Clone for RuleStore {
    fn clone(&self) -> Self {
        Self {
            table: self.table.clone(),
            hasher: self.hasher,
            sink: None,
            persist_every: self.persist_every,
            pending: 0,
            lookups: AtomicU64::new(0),
            comparisons: AtomicU64::new(0),
        }
    }
}

impl RuleStore {
    pub fn new() -> Self {
        Self {
            table: HashTable::new(),
            hasher: FixedState::default(),
            sink: None,
            persist_every: 1,
            pending: 0,
            lookups: AtomicU64::new(0),
            comparisons: AtomicU64::new(0),
        }
    }

    /// Attaches a sink. Learns and confidence updates are flushed every
    /// `persist_every` mutations (clamped to at least 1); invalidations
    /// always flush immediately.
    pub fn with_sink(mut self, sink: Box<dyn RuleSink>, persist_every: u32) -> Self {
        self.sink = Some(sink);
        self.persist_every = persist_every.max(1);
        self
    }

    pub fn detach_sink(&mut self) -> Option<Box<dyn RuleSink>> {
        self.sink.take()
    }

    fn hash(&self, key: &ConditionKey) -> u64 {
        self.hasher.hash_one(key.as_str())
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Inserts or overwrites the rule for `key` at full confidence.
    pub fn learn(&mut self, key: ConditionKey, solution: &str) -> Result<(), PersistFailure<()>> {
        let h = self.hash(&key);
        let rule = LearnedRule {
            key,
            solution: String::from(solution),
            confidence: 1.0,
            failure_count: 0,
        };
        match self.table.find_mut(h, |r| r.key == rule.key) {
            Some(slot) => *slot = rule,
            None => {
                let hasher = self.hasher;
                self.table
                    .insert_unique(h, rule, move |r| hasher.hash_one(r.key.as_str()));
            }
        }
        self.mutated(false, ())
    }

    pub fn lookup_exact(&self, key: &ConditionKey) -> Option<&LearnedRule> {
        self.lookups.fetch_add(1, Ordering::Relaxed);
        let h = self.hash(key);
        self.table.find(h, |r| {
            self.comparisons.fetch_add(1, Ordering::Relaxed);
            &r.key == key
        })
    }

    /// Key comparisons performed by [`lookup_exact`](Self::lookup_exact)
    /// and the number of lookups since construction or the last reset.
    pub fn probe_stats(&self) -> (u64, u64) {
        (
            self.comparisons.load(Ordering::Relaxed),
            self.lookups.load(Ordering::Relaxed),
        )
    }

    pub fn reset_probe_stats(&self) {
        self.comparisons.store(0, Ordering::Relaxed);
        self.lookups.store(0, Ordering::Relaxed);
    }

    pub fn record_failure(
        &mut self,
        key: &ConditionKey,
        cfg: &InvalidationConfig,
    ) -> Result<InvalidationOutcome, PersistFailure<InvalidationOutcome>> {
        let h = self.hash(key);
        let Ok(entry) = self.table.find_entry(h, |r| &r.key == key) else {
            return Ok(InvalidationOutcome::NotTracked);
        };
        let rule = entry.into_mut();
        rule.failure_count += 1;
        rule.confidence = (rule.confidence * cfg.decay).clamp(0.0, 1.0);
        if rule.failure_count >= cfg.theta {
            if let Ok(entry) = self.table.find_entry(h, |r| &r.key == key) {
                entry.remove();
            }
            self.mutated(true, InvalidationOutcome::Invalidated)
        } else {
            let new_confidence = rule.confidence;
            self.mutated(false, InvalidationOutcome::Retained { new_confidence })
        }
    }

    /// Resets the failure streak and restores confidence, capped at 1.
    /// Untracked keys are ignored.
    pub fn record_success(
        &mut self,
        key: &ConditionKey,
        cfg: &InvalidationConfig,
    ) -> Result<(), PersistFailure<()>> {
        let h = self.hash(key);
        match self.table.find_mut(h, |r| &r.key == key) {
            Some(rule) => {
                rule.failure_count = 0;
                rule.confidence = (rule.confidence + cfg.restore).min(1.0);
                self.mutated(false, ())
            }
            None => Ok(()),
        }
    }

    fn mutated<T>(&mut self, force: bool, outcome: T) -> Result<T, PersistFailure<T>> {
        if self.sink.is_none() {
            return Ok(outcome);
        }
        self.pending += 1;
        if !force && self.pending < self.persist_every {
            return Ok(outcome);
        }
        match self.persist() {
            Ok(()) => Ok(outcome),
            Err(source) => Err(PersistFailure { outcome, source }),
        }
    }

    /// Writes the current snapshot to the sink, if any.
    pub fn persist(&mut self) -> Result<(), StorageError> {
        let snapshot = self.snapshot();
        if let Some(sink) = self.sink.as_mut() {
            sink.save(&snapshot)?;
        }
        self.pending = 0;
        Ok(())
    }

    pub fn snapshot(&self) -> RulesSnapshot {
        self.table
            .iter()
            .map(|r| {
                (
                    String::from(r.key.as_str()),
                    RuleEntry {
                        solution: r.solution.clone(),
                        confidence: r.confidence,
                        failure_count: r.failure_count,
                    },
                )
            })
            .collect()
    }

    /// Rebuilds a store from a snapshot, checking every invariant the live
    /// store maintains.
    pub fn from_snapshot(snapshot: &RulesSnapshot, cfg: &InvalidationConfig) -> Result<Self, LoadError> {
        let mut store = Self::new();
        for (text, entry) in snapshot {
            let key = ConditionKey::parse(text).map_err(|e| LoadError::BadKey {
                key: text.clone(),
                reason: alloc::format!("{e}"),
            })?;
            if key.as_str() != text {
                return Err(LoadError::NonCanonicalKey {
                    key: text.clone(),
                    canonical: String::from(key.as_str()),
                });
            }
            if !(0.0..=1.0).contains(&entry.confidence) {
                return Err(LoadError::Confidence {
                    key: text.clone(),
                    value: alloc::format!("{}", entry.confidence),
                });
            }
            if entry.failure_count >= cfg.theta {
                return Err(LoadError::FailureCount {
                    key: text.clone(),
                    count: entry.failure_count,
                    theta: cfg.theta,
                });
            }
            let h = store.hash(&key);
            let hasher = store.hasher;
            store.table.insert_unique(
                h,
                LearnedRule {
                    key,
                    solution: entry.solution.clone(),
                    confidence: entry.confidence,
                    failure_count: entry.failure_count,
                },
                move |r| hasher.hash_one(r.key.as_str()),
            );
        }
        Ok(store)
    }

    /// Rules in key order.
    pub fn rules(&self) -> Vec<&LearnedRule> {
        let mut out: Vec<&LearnedRule> = self.table.iter().collect();
        out.sort_by(|a, b| a.key.cmp(&b.key));
        out
    }
}
