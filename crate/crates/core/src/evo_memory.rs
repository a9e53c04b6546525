//! Growing constraint history: per-key forbidden options with HARD / SOFT /
//! TRANSIENT classification, cross-episode partial progress and procedural
//! records of successful recoveries.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::condition_keys::ConditionKey;
use crate::{new_map, Map};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ConstraintClass {
    Transient,
    Soft,
    Hard,
}

impl ConstraintClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ConstraintClass::Hard => "HARD",
            ConstraintClass::Soft => "SOFT",
            ConstraintClass::Transient => "TRANSIENT",
        }
    }
}

/// Word lists used by [`classify_error`]. A code is split on `_`, `-` and
/// whitespace; the first table containing any word wins, checked in the
/// order hard, soft, transient.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorKeywords {
    pub hard: Vec<String>,
    pub soft: Vec<String>,
    pub transient: Vec<String>,
}

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|w| w.to_string()).collect()
}

impl Default for ErrorKeywords {
    fn default() -> Self {
        Self {
            hard: words(&[
                "CLOSED", "CLOSURE", "STRIKE", "BLOCKED", "UNAVAILABLE", "HOLD", "REJECTED",
                "DEPRECATED", "DENIED", "INVALID", "SUSPENDED", "EMBARGO", "REVOKED", "FORBIDDEN",
                "CANCELLED", "SOLDOUT",
            ]),
            soft: words(&[
                "CONGESTION", "CONGESTED", "BUSY", "OVERBOOKED", "QUOTA", "RATE", "THROTTLED",
                "DELAY", "DELAYED", "BACKLOG", "WAITLIST", "LIMITED",
            ]),
            transient: words(&["TIMEOUT", "RETRY", "TEMPORARY", "GLITCH", "RESET"]),
        }
    }
}

impl ErrorKeywords {
    /// Adds extra words to each table, keeping existing ones.
    pub fn extended(mut self, hard: &[&str], soft: &[&str], transient: &[&str]) -> Self {
        self.hard.extend(words(hard));
        self.soft.extend(words(soft));
        self.transient.extend(words(transient));
        self
    }
}

pub fn classify_error(error_code: &str, tables: &ErrorKeywords) -> ConstraintClass {
    let upper = error_code.to_uppercase();
    let parts: Vec<&str> = upper
        .split(|c: char| c == '_' || c == '-' || c.is_whitespace())
        .filter(|w| !w.is_empty())
        .collect();
    let hit = |table: &[String]| parts.iter().any(|p| table.iter().any(|w| w == p));
    if hit(&tables.hard) {
        ConstraintClass::Hard
    } else if hit(&tables.soft) {
        ConstraintClass::Soft
    } else {
        ConstraintClass::Transient
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruningMode {
    pub random_fallback: bool,
    pub soft_retriable: bool,
    pub disable_exhausted_exit: bool,
}

/// Logical time: episode index and step within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct LogicalTime {
    pub episode: u64,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
struct FailureLog {
    options: BTreeMap<String, ConstraintClass>,
    last_updated: LogicalTime,
}

impl FailureLog {
    fn insert(&mut self, option: &str, class: ConstraintClass, at: LogicalTime) -> bool {
        self.last_updated = at;
        match self.options.get_mut(option) {
            Some(existing) if *existing >= class => false,
            Some(existing) => {
                *existing = class;
                true
            }
            None => {
                self.options.insert(option.to_string(), class);
                true
            }
        }
    }
}

/// A recovery that worked: after an error of `trigger_class` on a key, the
/// `recovery` option succeeded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcedureRecord {
    pub trigger_class: ConstraintClass,
    pub key: ConditionKey,
    pub recovery: Vec<String>,
    pub uses: u32,
}

/// One key's entry in the partial-progress file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgressEntry {
    pub failed_options: Vec<String>,
    pub classes: Vec<ConstraintClass>,
    #[serde(default)]
    pub last_updated: u64,
}

/// Sorted `key text → entry` map.
pub type PartialProgress = BTreeMap<String, ProgressEntry>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProgressError {
    #[error("key `{key}`: {reason}")]
    BadKey { key: String, reason: String },
    #[error("key `{key}`: {options} failed options but {classes} classes")]
    LengthMismatch { key: String, options: usize, classes: usize },
    #[error("key `{key}`: option `{option}` recorded with both {first} and {second}")]
    ConflictingClass { key: String, option: String, first: &'static str, second: &'static str },
}

/// Evo-Memory: H(t) = F_episode ∪ F_cross plus transient counters and
/// procedural memory.
#[derive(Debug, Clone, Default)]
pub struct EvoMemory {
    episode: Map<ConditionKey, FailureLog>,
    cross: Map<ConditionKey, FailureLog>,
    transient: Map<ConditionKey, BTreeMap<String, u32>>,
    procedures: Vec<ProcedureRecord>,
    clock: LogicalTime,
}

impl EvoMemory {
    pub fn new() -> Self {
        Self {
            episode: new_map(),
            cross: new_map(),
            transient: new_map(),
            procedures: Vec::new(),
            clock: LogicalTime::default(),
        }
    }

    pub fn now(&self) -> LogicalTime {
        self.clock
    }

    pub fn tick(&mut self) {
        self.clock.step += 1;
    }

    /// Folds the episode set into the cross-episode set and starts a new
    /// episode.
    pub fn end_episode(&mut self) {
        for (key, log) in self.episode.drain() {
            let target = self.cross.entry(key).or_default();
            for (opt, class) in log.options {
                target.insert(&opt, class, log.last_updated);
            }
        }
        self.clock.episode += 1;
        self.clock.step = 0;
    }

    pub fn record_failed_option(&mut self, key: &ConditionKey, option: &str, class: ConstraintClass) {
        let at = self.clock;
        if class == ConstraintClass::Transient {
            *self
                .transient
                .entry(key.clone())
                .or_default()
                .entry(option.to_string())
                .or_insert(0) += 1;
            return;
        }
        self.episode.entry(key.clone()).or_default().insert(option, class, at);
    }

    fn class_of(&self, key: &ConditionKey, option: &str) -> Option<ConstraintClass> {
        let a = self.episode.get(key).and_then(|l| l.options.get(option)).copied();
        let b = self.cross.get(key).and_then(|l| l.options.get(option)).copied();
        a.max(b)
    }

    pub fn is_forbidden(&self, key: &ConditionKey, option: &str, mode: &PruningMode) -> bool {
        match self.class_of(key, option) {
            Some(ConstraintClass::Hard) => true,
            Some(ConstraintClass::Soft) => !mode.soft_retriable,
            _ => false,
        }
    }

    /// `all_options` minus forbidden ones, in input order. Empty means the
    /// option space is exhausted for this key.
    pub fn remaining_options<'a>(
        &self,
        key: &ConditionKey,
        all_options: &'a [String],
        mode: &PruningMode,
    ) -> Vec<&'a str> {
        all_options
            .iter()
            .map(String::as_str)
            .filter(|o| !self.is_forbidden(key, o, mode))
            .collect()
    }

    /// Recorded (option, class) pairs for a key, across both sets.
    pub fn failures_for(&self, key: &ConditionKey) -> Vec<(String, ConstraintClass)> {
        let mut merged: BTreeMap<String, ConstraintClass> = BTreeMap::new();
        for log in [self.cross.get(key), self.episode.get(key)].into_iter().flatten() {
            for (o, &c) in &log.options {
                let e = merged.entry(o.clone()).or_insert(c);
                *e = (*e).max(c);
            }
        }
        merged.into_iter().collect()
    }

    pub fn transient_count(&self, key: &ConditionKey, option: &str) -> u32 {
        self.transient.get(key).and_then(|m| m.get(option)).copied().unwrap_or(0)
    }

    /// |H(t)|: number of distinct (key, option) HARD/SOFT entries.
    pub fn history_len(&self) -> usize {
        let mut n = 0;
        for (key, log) in &self.episode {
            n += log.options.len();
            if let Some(cross) = self.cross.get(key) {
                n += cross.options.keys().filter(|o| !log.options.contains_key(*o)).count();
            }
        }
        for (key, log) in &self.cross {
            if !self.episode.contains_key(key) {
                n += log.options.len();
            }
        }
        n
    }

    /// Drops everything recorded for `key`. Called when the key's rule is
    /// invalidated: the mapping changed, so old failures are stale too.
    pub fn forget_key(&mut self, key: &ConditionKey) {
        self.episode.remove(key);
        self.cross.remove(key);
        self.transient.remove(key);
    }

    pub fn record_procedure(&mut self, key: &ConditionKey, trigger_class: ConstraintClass, recovery: &str) {
        if let Some(p) = self
            .procedures
            .iter_mut()
            .find(|p| &p.key == key && p.trigger_class == trigger_class)
        {
            p.recovery = alloc::vec![recovery.to_string()];
            p.uses += 1;
            return;
        }
        self.procedures.push(ProcedureRecord {
            trigger_class,
            key: key.clone(),
            recovery: alloc::vec![recovery.to_string()],
            uses: 1,
        });
    }

    pub fn find_procedure(&self, key: &ConditionKey, trigger_class: ConstraintClass) -> Option<&ProcedureRecord> {
        self.procedures.iter().find(|p| &p.key == key && p.trigger_class == trigger_class)
    }

    pub fn procedures(&self) -> &[ProcedureRecord] {
        &self.procedures
    }

    /// Everything in H(t), keyed by canonical key text.
    pub fn save_partial_progress(&self) -> PartialProgress {
        let mut out = PartialProgress::new();
        let mut keys: Vec<&ConditionKey> = self.cross.keys().chain(self.episode.keys()).collect();
        keys.sort();
        keys.dedup();
        for key in keys {
            let failures = self.failures_for(key);
            let last = [self.cross.get(key), self.episode.get(key)]
                .into_iter()
                .flatten()
                .map(|l| l.last_updated.episode)
                .max()
                .unwrap_or(0);
            out.insert(
                key.as_str().to_string(),
                ProgressEntry {
                    failed_options: failures.iter().map(|(o, _)| o.clone()).collect(),
                    classes: failures.iter().map(|(_, c)| *c).collect(),
                    last_updated: last,
                },
            );
        }
        out
    }

    /// Merges a saved progress map into F_cross.
    pub fn load_partial_progress(&mut self, progress: &PartialProgress) -> Result<(), ProgressError> {
        let mut staged: Vec<(ConditionKey, &ProgressEntry)> = Vec::new();
        for (text, entry) in progress {
            let key = ConditionKey::parse(text)
                .map_err(|e| ProgressError::BadKey { key: text.clone(), reason: alloc::format!("{e}") })?;
            if entry.failed_options.len() != entry.classes.len() {
                return Err(ProgressError::LengthMismatch {
                    key: text.clone(),
                    options: entry.failed_options.len(),
                    classes: entry.classes.len(),
                });
            }
            let mut seen: BTreeMap<&str, ConstraintClass> = BTreeMap::new();
            for (o, &c) in entry.failed_options.iter().zip(&entry.classes) {
                if let Some(&prev) = seen.get(o.as_str()) {
                    if prev != c {
                        return Err(ProgressError::ConflictingClass {
                            key: text.clone(),
                            option: o.clone(),
                            first: prev.as_str(),
                            second: c.as_str(),
                        });
                    }
                }
                seen.insert(o, c);
            }
            staged.push((key, entry));
        }
        for (key, entry) in staged {
            let at = LogicalTime { episode: entry.last_updated, step: 0 };
            let log = self.cross.entry(key.clone()).or_default();
            for (o, &c) in entry.failed_options.iter().zip(&entry.classes) {
                if c == ConstraintClass::Transient {
                    continue;
                }
                log.insert(o, c, at);
            }
            if log.options.is_empty() {
                self.cross.remove(&key);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::SeededRng;
    use alloc::format;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::seq::IndexedRandom;
    use rand::{Rng, SeedableRng};

    fn key(s: &str) -> ConditionKey {
        ConditionKey::parse(s).unwrap()
    }

    fn opts(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("opt{i}")).collect()
    }

    #[test]
    fn classification_examples() {
        let t = ErrorKeywords::default();
        assert_eq!(classify_error("PORT_CLOSED_STRIKE", &t), ConstraintClass::Hard);
        assert_eq!(classify_error("ROUTE_CONGESTION", &t), ConstraintClass::Soft);
        assert_eq!(classify_error("GATEWAY_TIMEOUT", &t), ConstraintClass::Transient);
        assert_eq!(classify_error("SOMETHING_ODD", &t), ConstraintClass::Transient);
        // Hard wins when both appear.
        assert_eq!(classify_error("busy-closed", &t), ConstraintClass::Hard);
    }

    #[test]
    fn forbidden_semantics() {
        let mut m = EvoMemory::new();
        let k = key("ASIA+FAST");
        let strict = PruningMode::default();
        let lenient = PruningMode { soft_retriable: true, ..strict };
        m.record_failed_option(&k, "a", ConstraintClass::Hard);
        m.record_failed_option(&k, "b", ConstraintClass::Soft);
        m.record_failed_option(&k, "c", ConstraintClass::Transient);
        assert!(m.is_forbidden(&k, "a", &strict) && m.is_forbidden(&k, "a", &lenient));
        assert!(m.is_forbidden(&k, "b", &strict) && !m.is_forbidden(&k, "b", &lenient));
        assert!(!m.is_forbidden(&k, "c", &strict));
        assert_eq!(m.transient_count(&k, "c"), 1);
        assert!(!m.is_forbidden(&k, "d", &strict));
        assert!(!m.is_forbidden(&key("OTHER"), "a", &strict));
        // Idempotent.
        let before = m.history_len();
        m.record_failed_option(&k, "a", ConstraintClass::Hard);
        assert_eq!(m.history_len(), before);
        assert_eq!(before, 2);
    }

    #[test]
    fn remaining_preserves_order() {
        let mut m = EvoMemory::new();
        let k = key("X");
        let all = opts(4);
        let mode = PruningMode::default();
        assert_eq!(m.remaining_options(&k, &all, &mode), vec!["opt0", "opt1", "opt2", "opt3"]);
        m.record_failed_option(&k, "opt2", ConstraintClass::Hard);
        m.record_failed_option(&k, "opt0", ConstraintClass::Soft);
        assert_eq!(m.remaining_options(&k, &all, &mode), vec!["opt1", "opt3"]);
        m.record_failed_option(&k, "opt1", ConstraintClass::Hard);
        m.record_failed_option(&k, "opt3", ConstraintClass::Hard);
        assert!(m.remaining_options(&k, &all, &mode).is_empty());
    }

    #[test]
    fn cross_episode_persistence() {
        let mode = PruningMode::default();
        let k = key("ASIA+SAFE");
        let mut a = EvoMemory::new();
        a.record_failed_option(&k, "x", ConstraintClass::Hard);
        a.end_episode();
        a.record_failed_option(&k, "y", ConstraintClass::Soft);
        assert!(a.is_forbidden(&k, "x", &mode));
        let saved = a.save_partial_progress();
        assert_eq!(saved["ASIA+SAFE"].failed_options, vec!["x", "y"]);

        // Restart.
        let mut b = EvoMemory::new();
        b.load_partial_progress(&saved).unwrap();
        assert!(b.is_forbidden(&k, "x", &mode) && b.is_forbidden(&k, "y", &mode));
        assert_eq!(b.save_partial_progress(), saved);

        let mut empty = EvoMemory::new();
        empty.load_partial_progress(&PartialProgress::new()).unwrap();
        assert_eq!(empty.history_len(), 0);
    }

    #[test]
    fn union_of_episode_and_cross() {
        let k = key("K");
        let mut m = EvoMemory::new();
        m.record_failed_option(&k, "a", ConstraintClass::Hard);
        m.end_episode();
        m.record_failed_option(&k, "a", ConstraintClass::Hard);
        m.record_failed_option(&k, "b", ConstraintClass::Hard);
        assert_eq!(m.history_len(), 2);
        assert_eq!(m.failures_for(&k).len(), 2);
    }

    #[test]
    fn malformed_progress_rejected() {
        let mut m = EvoMemory::new();
        let bad = BTreeMap::from([(
            String::from("K"),
            ProgressEntry { failed_options: vec!["a".into()], classes: vec![], last_updated: 0 },
        )]);
        assert!(matches!(m.load_partial_progress(&bad), Err(ProgressError::LengthMismatch { .. })));
        let bad = BTreeMap::from([(
            String::from("K"),
            ProgressEntry {
                failed_options: vec!["a".into(), "a".into()],
                classes: vec![ConstraintClass::Hard, ConstraintClass::Soft],
                last_updated: 0,
            },
        )]);
        assert!(m.load_partial_progress(&bad).is_err());
        assert_eq!(m.history_len(), 0);
    }

    #[test]
    fn forget_and_procedures() {
        let k = key("K");
        let mut m = EvoMemory::new();
        m.record_failed_option(&k, "a", ConstraintClass::Hard);
        m.end_episode();
        m.forget_key(&k);
        assert_eq!(m.history_len(), 0);
        m.record_procedure(&k, ConstraintClass::Hard, "b");
        m.record_procedure(&k, ConstraintClass::Hard, "c");
        let p = m.find_procedure(&k, ConstraintClass::Hard).unwrap();
        assert_eq!((p.recovery.as_slice(), p.uses), (&[String::from("c")][..], 2));
        assert!(m.find_procedure(&k, ConstraintClass::Soft).is_none());
    }

    // Randomized episodes against a fixed hidden answer per key: an agent
    // that only ever executes from remaining_options never repeats a
    // recorded HARD/SOFT failure, and exhaustion ends a HARD-only search
    // within |options| attempts.
    #[test]
    fn zero_repeat_over_random_episodes() {
        let mode = PruningMode::default();
        let mut rng = SeededRng::seed_from_u64(2024);
        let all = opts(8);
        let keys: Vec<ConditionKey> = (0..12).map(|i| key(&format!("K{i}"))).collect();
        let answers: Vec<Option<usize>> =
            (0..keys.len()).map(|i| if i % 4 == 0 { None } else { Some(i % 8) }).collect();
        let mut m = EvoMemory::new();
        let mut executed_failures: BTreeMap<(usize, String), ()> = BTreeMap::new();
        for _ in 0..10_000 {
            let ki = rng.random_range(0..keys.len());
            let k = &keys[ki];
            let mut attempts = 0;
            let mut last_len = m.history_len();
            loop {
                let remaining = m.remaining_options(k, &all, &mode);
                let Some(&choice) = remaining.choose(&mut rng) else { break };
                attempts += 1;
                assert!(
                    !executed_failures.contains_key(&(ki, choice.to_string())),
                    "repeated failed option {choice} for {k}"
                );
                if answers[ki] == Some(all.iter().position(|o| o == choice).unwrap()) {
                    break;
                }
                let class = if rng.random_bool(0.5) { ConstraintClass::Hard } else { ConstraintClass::Soft };
                m.record_failed_option(k, choice, class);
                executed_failures.insert((ki, choice.to_string()), ());
                let len = m.history_len();
                assert!(len >= last_len);
                last_len = len;
            }
            assert!(attempts <= all.len());
            if rng.random_bool(0.3) {
                m.end_episode();
            }
        }
    }

    proptest! {
        #[test]
        fn progress_roundtrip(
            entries in prop::collection::vec(("[A-D]{1,2}", "[a-e]", prop_oneof![Just(ConstraintClass::Hard), Just(ConstraintClass::Soft)]), 0..30)
        ) {
            let mut m = EvoMemory::new();
            for (k, o, c) in &entries {
                m.record_failed_option(&key(k), o, *c);
            }
            let saved = m.save_partial_progress();
            let mut n = EvoMemory::new();
            n.load_partial_progress(&saved).unwrap();
            prop_assert_eq!(n.save_partial_progress(), saved);
            let mode = PruningMode::default();
            for (k, o, _) in &entries {
                prop_assert!(n.is_forbidden(&key(k), o, &mode));
            }
        }
    }
}
