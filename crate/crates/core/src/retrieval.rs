//! Knowledge records, the exact → vector → Jaccard rule cascade, atomic
//! precept retrieval and dual-mode retrieval across all four knowledge tiers.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::condition_keys::{ConditionKey, ConditionToken, Tier, TierTable};
use crate::conflict::{ConflictEngine, ConflictVerdict, Winner};
use crate::fnv::fnv1a64;
use crate::rule_store::{LearnedRule, RuleStore};
use crate::{new_map, Map};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Static,
    Dynamic,
    Episodic,
    Rule,
}

impl Source {
    pub fn default_prior(self) -> f64 {
        match self {
            Source::Static => 0.9,
            Source::Dynamic => 0.8,
            Source::Rule => 1.0,
            // Episodic priors are task dependent; this is the starting value.
            Source::Episodic => 0.7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Observations {
    pub confirmations: u32,
    pub failures: u32,
}

impl Observations {
    pub fn total(&self) -> u32 {
        self.confirmations + self.failures
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeRecord {
    pub id: String,
    pub source: Source,
    pub key_codes: Vec<ConditionToken>,
    pub content: String,
    #[serde(default)]
    pub recommendation: Option<String>,
    pub confidence_prior: f64,
    /// Logical day the record was written.
    #[serde(default)]
    pub timestamp: u64,
    #[serde(default)]
    pub observations: Observations,
}

impl KnowledgeRecord {
    pub fn new(id: &str, source: Source, key_codes: &[ConditionToken], content: &str) -> Self {
        let mut codes = key_codes.to_vec();
        codes.sort();
        codes.dedup();
        Self {
            id: id.to_string(),
            source,
            key_codes: codes,
            content: content.to_string(),
            recommendation: None,
            confidence_prior: source.default_prior(),
            timestamp: 0,
            observations: Observations::default(),
        }
    }

    pub fn with_recommendation(mut self, option: &str) -> Self {
        self.recommendation = Some(option.to_string());
        self
    }

    pub fn at(mut self, day: u64) -> Self {
        self.timestamp = day;
        self
    }

    pub fn key(&self) -> Option<ConditionKey> {
        ConditionKey::from_tokens(self.key_codes.clone()).ok()
    }

    /// The prior scaled by the observed confirmation ratio once any
    /// outcome has been observed.
    pub fn effective_confidence(&self) -> f64 {
        let n = self.observations.total();
        if n == 0 {
            self.confidence_prior
        } else {
            self.confidence_prior * f64::from(self.observations.confirmations) / f64::from(n)
        }
    }

    pub fn shares_code_with(&self, other: &KnowledgeRecord) -> bool {
        self.key_codes.iter().any(|c| other.key_codes.binary_search(c).is_ok())
    }

    /// True when one record's key codes are contained in the other's, i.e.
    /// both speak about the same scenario or one generalizes the other.
    pub fn same_scope(&self, other: &KnowledgeRecord) -> bool {
        let sub = |a: &[ConditionToken], b: &[ConditionToken]| a.iter().all(|c| b.binary_search(c).is_ok());
        !self.key_codes.is_empty()
            && !other.key_codes.is_empty()
            && (sub(&self.key_codes, &other.key_codes) || sub(&other.key_codes, &self.key_codes))
    }
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Bag of hashed lowercase word tokens, L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    pub dimension: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dimension: 64 }
    }
}

pub fn text_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '_'))
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
}

impl Embedder for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let dim = self.dimension.max(1);
        let mut v = alloc::vec![0.0; dim];
        for tok in text_tokens(text) {
            v[(fnv1a64(tok.as_bytes()) % dim as u64) as usize] += 1.0;
        }
        let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

/// Cosine similarity; zero vectors score 0 against everything.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = libm::sqrt(a.iter().map(|x| x * x).sum::<f64>());
    let nb = libm::sqrt(b.iter().map(|x| x * x).sum::<f64>());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

pub fn jaccard(a: &ConditionKey, b: &ConditionKey) -> f64 {
    jaccard_tokens(a.decompose(), b.decompose())
}

/// Jaccard over two sorted, deduplicated token slices. Two empty sets score 0.
pub fn jaccard_tokens(a: &[ConditionToken], b: &[ConditionToken]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            core::cmp::Ordering::Less => i += 1,
            core::cmp::Ordering::Greater => j += 1,
            core::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn key_description(key: &ConditionKey) -> String {
    let parts: Vec<&str> = key.decompose().iter().map(|t| t.as_str()).collect();
    parts.join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub vector: f64,
    pub jaccard: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { vector: 0.80, jaccard: 0.34 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TierUsed {
    Exact,
    Vector,
    Jaccard,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Rule(LearnedRule),
    Record(KnowledgeRecord),
}

impl Payload {
    pub fn solution(&self) -> Option<&str> {
        match self {
            Payload::Rule(r) => Some(&r.solution),
            Payload::Record(r) => r.recommendation.as_deref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub tier_used: TierUsed,
    pub payload: Option<Payload>,
    pub score: f64,
}

impl RetrievalResult {
    fn none() -> Self {
        Self { tier_used: TierUsed::None, payload: None, score: 0.0 }
    }
}

/// Candidate set for the vector and Jaccard tiers: every stored rule plus
/// every knowledge record that carries a recommendation.
fn fuzzy_candidates<'a>(store: &'a RuleStore, kb: &'a [KnowledgeRecord]) -> Vec<(ConditionKey, Payload)> {
    let mut out: Vec<(ConditionKey, Payload)> =
        store.rules().into_iter().map(|r| (r.key.clone(), Payload::Rule(r.clone()))).collect();
    for rec in kb {
        if rec.recommendation.is_none() {
            continue;
        }
        if let Some(k) = rec.key() {
            out.push((k, Payload::Record(rec.clone())));
        }
    }
    out
}

fn best_by(cands: Vec<(ConditionKey, Payload, f64)>, threshold: f64) -> Option<(Payload, f64)> {
    let mut best: Option<(ConditionKey, Payload, f64)> = None;
    for (k, p, s) in cands {
        if s < threshold {
            continue;
        }
        let better = match &best {
            None => true,
            Some((bk, bp, bs)) => {
                s > *bs
                    || (s == *bs
                        && (matches!(p, Payload::Rule(_)) && matches!(bp, Payload::Record(_))
                            || (matches!(p, Payload::Rule(_)) == matches!(bp, Payload::Rule(_)) && k < *bk)))
            }
        };
        if better {
            best = Some((k, p, s));
        }
    }
    best.map(|(_, p, s)| (p, s))
}

/// Exact hash lookup, then best cosine over rule descriptions, then best
/// Jaccard over key token sets. The first tier with a hit wins.
pub fn get_rule_hybrid(
    key: &ConditionKey,
    store: &RuleStore,
    kb: &[KnowledgeRecord],
    embedder: &dyn Embedder,
    thresholds: &Thresholds,
) -> RetrievalResult {
    if let Some(rule) = store.lookup_exact(key) {
        return RetrievalResult { tier_used: TierUsed::Exact, payload: Some(Payload::Rule(rule.clone())), score: 1.0 };
    }
    let cands = fuzzy_candidates(store, kb);
    if cands.is_empty() {
        return RetrievalResult::none();
    }
    let q = embedder.embed(&key_description(key));
    let scored: Vec<_> = cands
        .iter()
        .map(|(k, p)| (k.clone(), p.clone(), cosine(&q, &embedder.embed(&key_description(k)))))
        .collect();
    if let Some((p, s)) = best_by(scored, thresholds.vector) {
        return RetrievalResult { tier_used: TierUsed::Vector, payload: Some(p), score: s };
    }
    let scored: Vec<_> = cands.into_iter().map(|(k, p)| {
        let s = jaccard(key, &k);
        (k, p, s)
    }).collect();
    if let Some((p, s)) = best_by(scored, thresholds.jaccard) {
        return RetrievalResult { tier_used: TierUsed::Jaccard, payload: Some(p), score: s };
    }
    RetrievalResult::none()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicPrecept {
    pub token: ConditionToken,
    pub tier: Tier,
    pub solution_hint: String,
    #[serde(default)]
    pub conflicted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct StoredPrecept {
    hint: String,
    tier: Tier,
    // Number of times the token was re-learned with a different solution.
    revisions: u32,
}

/// Atomic precepts keyed by single condition token.
#[derive(Debug, Clone)]
pub struct PreceptStore {
    precepts: Map<ConditionToken, StoredPrecept>,
    tiers: TierTable,
}

impl PreceptStore {
    pub fn new(tiers: TierTable) -> Self {
        Self { precepts: new_map(), tiers }
    }

    pub fn tiers(&self) -> &TierTable {
        &self.tiers
    }

    pub fn len(&self) -> usize {
        self.precepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.precepts.is_empty()
    }

    /// Stores a precept from a verified single-condition solution. Keys
    /// with more than one token carry no atomic evidence and are ignored.
    pub fn learn_from(&mut self, key: &ConditionKey, solution: &str) -> bool {
        if key.len() != 1 {
            return false;
        }
        let token = key.decompose()[0].clone();
        self.store(token, alloc::format!("solution:{solution}"));
        true
    }

    pub fn store(&mut self, token: ConditionToken, hint: String) {
        let tier = self.tiers.tier_of(&token);
        match self.precepts.get_mut(&token) {
            Some(p) if p.hint != hint => {
                p.hint = hint;
                p.tier = tier;
                p.revisions += 1;
            }
            Some(_) => {}
            None => {
                self.precepts.insert(token, StoredPrecept { hint, tier, revisions: 0 });
            }
        }
    }

    pub fn get(&self, token: &ConditionToken) -> Option<AtomicPrecept> {
        self.precepts.get(token).map(|p| AtomicPrecept {
            token: token.clone(),
            tier: p.tier,
            solution_hint: p.hint.clone(),
            conflicted: false,
        })
    }

    pub fn revisions(&self, token: &ConditionToken) -> u32 {
        self.precepts.get(token).map_or(0, |p| p.revisions)
    }
}

/// Pairwise check over retrieved atomic precepts. Returns whether each side
/// of the pair should be flagged.
pub trait PreceptConflictCheck {
    fn check(&self, store: &PreceptStore, a: &AtomicPrecept, b: &AtomicPrecept) -> (bool, bool);
}

/// Default check: two precepts with different solutions conflict; the side
/// whose solution has been revised (unstable evidence) is flagged.
#[derive(Debug, Clone, Copy, Default)]
pub struct RevisionConflictCheck;

impl PreceptConflictCheck for RevisionConflictCheck {
    fn check(&self, store: &PreceptStore, a: &AtomicPrecept, b: &AtomicPrecept) -> (bool, bool) {
        if a.solution_hint == b.solution_hint {
            return (false, false);
        }
        (store.revisions(&a.token) > 0, store.revisions(&b.token) > 0)
    }
}

pub fn retrieve_atomic_precepts(
    key: &ConditionKey,
    store: &PreceptStore,
    check: &dyn PreceptConflictCheck,
) -> Vec<AtomicPrecept> {
    let mut found: Vec<AtomicPrecept> = key.decompose().iter().filter_map(|t| store.get(t)).collect();
    for i in 0..found.len() {
        for j in (i + 1)..found.len() {
            let (fa, fb) = check.check(store, &found[i], &found[j]);
            found[i].conflicted |= fa;
            found[j].conflicted |= fb;
        }
    }
    found
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualModeConfig {
    pub static_top_k: usize,
    pub dynamic_top_k: usize,
    pub semantic_threshold: f64,
}

impl Default for DualModeConfig {
    fn default() -> Self {
        Self { static_top_k: 3, dynamic_top_k: 5, semantic_threshold: 0.2 }
    }
}

pub struct DualModeStores<'a> {
    pub static_kb: &'a [KnowledgeRecord],
    pub dynamic: &'a [KnowledgeRecord],
    pub episodic: &'a [KnowledgeRecord],
    pub rules: &'a RuleStore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextItem {
    pub source: Source,
    pub payload: Payload,
    pub score: f64,
    pub demoted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectedConflict {
    pub static_id: String,
    pub dynamic_id: String,
    pub verdict: ConflictVerdict,
    pub winner: Winner,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MergedContext {
    pub items: Vec<ContextItem>,
    pub conflicts: Vec<DetectedConflict>,
}

impl MergedContext {
    /// Recommended option of the best-ranked, non-demoted item.
    pub fn top_hint(&self) -> Option<&str> {
        self.items.iter().filter(|i| !i.demoted).find_map(|i| i.payload.solution())
    }
}

fn rank(source: Source) -> u8 {
    match source {
        Source::Rule => 0,
        Source::Dynamic => 1,
        Source::Episodic => 2,
        Source::Static => 3,
    }
}

fn semantic_top_k<'a, F>(
    records: &'a [KnowledgeRecord],
    query: &[f64],
    embedder: &dyn Embedder,
    k: usize,
    threshold: f64,
    filter: F,
) -> Vec<(&'a KnowledgeRecord, f64)>
where
    F: Fn(&KnowledgeRecord) -> bool,
{
    let mut scored: Vec<(&KnowledgeRecord, f64)> = records
        .iter()
        .filter(|r| filter(r))
        .map(|r| (r, cosine(query, &embedder.embed(&r.content))))
        .filter(|(_, s)| *s >= threshold)
        .collect();
    // Highest score first; newer, then id order on ties.
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(b.0.timestamp.cmp(&a.0.timestamp))
            .then(a.0.id.cmp(&b.0.id))
    });
    scored.truncate(k);
    scored
}

/// Gathers from all four tiers, runs the ensemble detector on every
/// static–dynamic pair, hands triggered pairs to the engine for
/// resolution, then ranks rule > dynamic > episodic > static with conflict
/// losers moved to the end.
pub fn retrieve_with_dual_mode(
    key: &ConditionKey,
    task_text: &str,
    stores: &DualModeStores<'_>,
    embedder: &dyn Embedder,
    cfg: &DualModeConfig,
    engine: &mut ConflictEngine,
) -> MergedContext {
    let query = embedder.embed(task_text);
    let statics = semantic_top_k(stores.static_kb, &query, embedder, cfg.static_top_k, cfg.semantic_threshold, |_| true);
    let key_codes = key.decompose();
    let dynamics = semantic_top_k(stores.dynamic, &query, embedder, cfg.dynamic_top_k, cfg.semantic_threshold, |r| {
        r.key_codes.iter().any(|c| key_codes.binary_search(c).is_ok())
    });
    let episodic: Vec<&KnowledgeRecord> =
        stores.episodic.iter().filter(|r| r.key().as_ref() == Some(key)).collect();

    let mut items: Vec<ContextItem> = Vec::new();
    if let Some(rule) = stores.rules.lookup_exact(key) {
        items.push(ContextItem { source: Source::Rule, payload: Payload::Rule(rule.clone()), score: 1.0, demoted: false });
    }
    for (r, s) in &dynamics {
        items.push(ContextItem { source: Source::Dynamic, payload: Payload::Record((*r).clone()), score: *s, demoted: false });
    }
    for r in &episodic {
        items.push(ContextItem { source: Source::Episodic, payload: Payload::Record((*r).clone()), score: 1.0, demoted: false });
    }
    for (r, s) in &statics {
        items.push(ContextItem { source: Source::Static, payload: Payload::Record((*r).clone()), score: *s, demoted: false });
    }

    let mut conflicts = Vec::new();
    let mut losers: Vec<String> = Vec::new();
    let all_dynamic: Vec<&KnowledgeRecord> = stores.dynamic.iter().collect();
    for (s, _) in &statics {
        for (d, _) in &dynamics {
            let verdict = engine.detect(s, d);
            if !verdict.triggered {
                continue;
            }
            let Ok(res) = engine.resolve(&verdict, s, d, &all_dynamic) else { continue };
            engine.update_posteriors(&res);
            losers.push(match res.winner {
                Winner::Static => d.id.clone(),
                Winner::Dynamic => s.id.clone(),
            });
            conflicts.push(DetectedConflict {
                static_id: s.id.clone(),
                dynamic_id: d.id.clone(),
                verdict,
                winner: res.winner,
            });
        }
    }
    for item in &mut items {
        if let Payload::Record(r) = &item.payload {
            item.demoted = losers.contains(&r.id);
        }
    }
    items.sort_by_key(|i| (i.demoted, rank(i.source)));
    MergedContext { items, conflicts }
}

/// Boxed default embedder, handy for config-driven construction.
pub fn default_embedder() -> Box<dyn Embedder> {
    Box::new(HashEmbedder::default())
}
