//! Deterministic rule memory and test-time adaptation engine.
//!
//! The crate is `no_std` and only needs `alloc`. Everything here is pure
//! computation over in-memory state: canonical condition keys, the
//! learned-rule store with threshold invalidation, the forbidden-option
//! history, hybrid retrieval, tier-based constraint stacking, ensemble
//! conflict detection with Beta source reliabilities, the Pareto-guided
//! prompt optimizer, the hidden constraint-satisfaction benchmark domains,
//! the agent loop and the closed-form theory oracles.
//!
//! File formats, the experiment harness and the command line live in the
//! `precept` companion crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod agent;
pub mod compass;
pub mod composition;
pub mod condition_keys;
pub mod conflict;
pub mod envs;
pub mod evo_memory;
pub mod retrieval;
pub mod rule_store;
pub mod theory;

mod fnv;
pub mod md5;

pub use condition_keys::{ConditionKey, ConditionToken, KeyError, Tier, TierTable};
pub use rule_store::{InvalidationConfig, InvalidationOutcome, LearnedRule, RuleStore};

/// Seeded generator used everywhere randomness is needed.
///
/// ChaCha8 has a stable, platform-independent output stream, which keeps
/// seeded runs byte-identical across machines.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Hash map with a fixed-seed hasher so iteration order is reproducible.
pub type Map<K, V> = hashbrown::HashMap<K, V, foldhash::fast::FixedState>;

/// Hash set counterpart of [`Map`].
pub type Set<T> = hashbrown::HashSet<T, foldhash::fast::FixedState>;

pub fn new_map<K, V>() -> Map<K, V> {
    Map::with_hasher(foldhash::fast::FixedState::default())
}

pub fn new_set<T>() -> Set<T> {
    Set::with_hasher(foldhash::fast::FixedState::default())
}
