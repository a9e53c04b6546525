//! Static-vs-dynamic conflict handling: a weighted six-method detector with
//! a single-vote circuit breaker, strategy selection, and Beta source
//! reliabilities sampled by Thompson draws.

use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::{text_tokens, KnowledgeRecord};
use crate::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Nli,
    Semantic,
    Temporal,
    Evidence,
    Recommendation,
    Llm,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Nli,
        Method::Semantic,
        Method::Temporal,
        Method::Evidence,
        Method::Recommendation,
        Method::Llm,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorVote {
    pub method: Method,
    pub is_conflict: bool,
    pub confidence: f64,
}

impl DetectorVote {
    fn abstain(method: Method) -> Self {
        Self { method, is_conflict: false, confidence: 0.0 }
    }

    fn fire(method: Method, confidence: f64) -> Self {
        Self { method, is_conflict: true, confidence: confidence.clamp(0.0, 1.0) }
    }
}

/// Per-method values indexed in [`Method::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerMethod<T> {
    pub nli: T,
    pub semantic: T,
    pub temporal: T,
    pub evidence: T,
    pub recommendation: T,
    pub llm: T,
}

impl<T: Copy> PerMethod<T> {
    pub fn get(&self, m: Method) -> T {
        match m {
            Method::Nli => self.nli,
            Method::Semantic => self.semantic,
            Method::Temporal => self.temporal,
            Method::Evidence => self.evidence,
            Method::Recommendation => self.recommendation,
            Method::Llm => self.llm,
        }
    }

    pub fn set(&mut self, m: Method, v: T) {
        match m {
            Method::Nli => self.nli = v,
            Method::Semantic => self.semantic = v,
            Method::Temporal => self.temporal = v,
            Method::Evidence => self.evidence = v,
            Method::Recommendation => self.recommendation = v,
            Method::Llm => self.llm = v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    /// Raw scoring coefficients; normalized at score time.
    pub weights: PerMethod<f64>,
    pub enabled: PerMethod<bool>,
    pub trigger_threshold: f64,
    pub breaker_confidence: f64,
    /// Static knowledge older than this many logical days is stale.
    pub stale_days: u64,
    pub evidence_min_observations: u32,
    /// Fraction of same-key dynamic records a dynamic record must disagree
    /// with to count as an outlier.
    pub anomaly_fraction: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            weights: PerMethod { nli: 0.30, semantic: 0.30, temporal: 0.15, evidence: 0.15, recommendation: 0.50, llm: 0.10 },
            enabled: PerMethod { nli: true, semantic: true, temporal: true, evidence: true, recommendation: true, llm: false },
            trigger_threshold: 0.30,
            breaker_confidence: 0.60,
            stale_days: 30,
            evidence_min_observations: 3,
            anomaly_fraction: 0.75,
        }
    }
}

impl EnsembleConfig {
    pub fn all_enabled() -> Self {
        let mut c = Self::default();
        c.enabled.llm = true;
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictVerdict {
    pub weighted_score: f64,
    pub triggered: bool,
    pub breaker_method: Option<Method>,
    pub severity: Severity,
    pub votes: Vec<DetectorVote>,
}

/// Combines votes with normalized weights. Votes from disabled methods are
/// dropped; every enabled method counts in the denominator, including
/// abstainers and methods that returned no vote.
pub fn score_votes(votes: &[DetectorVote], cfg: &EnsembleConfig) -> ConflictVerdict {
    let den: f64 = Method::ALL.iter().filter(|m| cfg.enabled.get(**m)).map(|m| cfg.weights.get(*m)).sum();
    let mut num = 0.0;
    let mut breaker = None;
    let mut kept = Vec::new();
    for v in votes {
        if !cfg.enabled.get(v.method) {
            continue;
        }
        let w = cfg.weights.get(v.method);
        if v.is_conflict {
            num += w * v.confidence;
            if breaker.is_none() && v.confidence >= cfg.breaker_confidence {
                breaker = Some(v.method);
            }
        }
        kept.push(*v);
    }
    let weighted_score = if den > 0.0 { (num / den).clamp(0.0, 1.0) } else { 0.0 };
    let severity = if weighted_score < 0.3 {
        Severity::Low
    } else if weighted_score < 0.6 {
        Severity::Medium
    } else {
        Severity::High
    };
    ConflictVerdict {
        weighted_score,
        triggered: weighted_score >= cfg.trigger_threshold || breaker.is_some(),
        breaker_method: breaker,
        severity,
        votes: kept,
    }
}

/// Replaceable voter for the text-level methods (nli, semantic, llm).
pub trait PairVoter: Send + Sync {
    fn vote(&self, static_rec: &KnowledgeRecord, dynamic_rec: &KnowledgeRecord) -> DetectorVote;
}

const DISMISSIVE: [&str; 6] =
    ["can be ignored", "proceed normally", "no action needed", "not required", "safe to ignore", "no special handling"];
const ACTIVE: [&str; 5] = ["strategy is", "solution:", "solution is", "use ", "switch to"];

/// Pulls an option name out of phrases like "strategy is X" or "solution: X".
pub fn suggested_option(content: &str) -> Option<String> {
    let lower = content.to_lowercase();
    for marker in ["strategy is", "solution:", "solution is", "use ", "switch to"] {
        if let Some(pos) = lower.find(marker) {
            let rest = &lower[pos + marker.len()..];
            if let Some(word) = rest
                .split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '_'))
                .find(|w| !w.is_empty())
            {
                return Some(word.to_string());
            }
        }
    }
    None
}

pub fn recommendation_conflict(static_rec: &KnowledgeRecord, dynamic_rec: &KnowledgeRecord) -> DetectorVote {
    let m = Method::Recommendation;
    if !static_rec.same_scope(dynamic_rec) {
        return DetectorVote::abstain(m);
    }
    let s_text = static_rec.content.to_lowercase();
    let d_text = dynamic_rec.content.to_lowercase();
    if DISMISSIVE.iter().any(|p| s_text.contains(p)) && ACTIVE.iter().any(|p| d_text.contains(p)) {
        return DetectorVote::fire(m, 0.9);
    }
    if let (Some(a), Some(b)) = (&static_rec.recommendation, &dynamic_rec.recommendation) {
        return if a.eq_ignore_ascii_case(b) { DetectorVote::abstain(m) } else { DetectorVote::fire(m, 1.0) };
    }
    match (suggested_option(&static_rec.content), suggested_option(&dynamic_rec.content)) {
        (Some(a), Some(b)) if a != b => DetectorVote::fire(m, 0.8),
        _ => DetectorVote::abstain(m),
    }
}

fn disagree(a: &KnowledgeRecord, b: &KnowledgeRecord) -> bool {
    match (&a.recommendation, &b.recommendation) {
        (Some(x), Some(y)) => !x.eq_ignore_ascii_case(y),
        _ => match (suggested_option(&a.content), suggested_option(&b.content)) {
            (Some(x), Some(y)) => x != y,
            _ => false,
        },
    }
}

pub fn temporal_vote(static_rec: &KnowledgeRecord, dynamic_rec: &KnowledgeRecord, now: u64, stale_days: u64) -> DetectorVote {
    let age = now.saturating_sub(static_rec.timestamp);
    if age > stale_days && static_rec.same_scope(dynamic_rec) && disagree(static_rec, dynamic_rec) {
        // Grows from ~0.5 just past the cutoff to 1.0 at twice the cutoff.
        DetectorVote::fire(Method::Temporal, age as f64 / (2.0 * stale_days.max(1) as f64))
    } else {
        DetectorVote::abstain(Method::Temporal)
    }
}

fn support(r: &KnowledgeRecord) -> f64 {
    let n = r.observations.total();
    if n == 0 {
        0.5
    } else {
        f64::from(r.observations.confirmations) / f64::from(n)
    }
}

pub fn evidence_vote(static_rec: &KnowledgeRecord, dynamic_rec: &KnowledgeRecord, min_obs: u32) -> DetectorVote {
    let n = static_rec.observations.total() + dynamic_rec.observations.total();
    if n < min_obs || !static_rec.same_scope(dynamic_rec) || !disagree(static_rec, dynamic_rec) {
        return DetectorVote::abstain(Method::Evidence);
    }
    let gap = (support(dynamic_rec) - support(static_rec)).abs();
    if gap > 0.0 {
        DetectorVote::fire(Method::Evidence, gap)
    } else {
        DetectorVote::abstain(Method::Evidence)
    }
}

const ANTONYMS: [(&str, &str); 10] = [
    ("safe", "unsafe"),
    ("open", "closed"),
    ("available", "unavailable"),
    ("reliable", "unreliable"),
    ("recommended", "deprecated"),
    ("use", "avoid"),
    ("allowed", "blocked"),
    ("valid", "invalid"),
    ("fast", "slow"),
    ("active", "inactive"),
];

/// Keyword contradiction over a shipped antonym table.
#[derive(Debug, Clone, Copy, Default)]
pub struct AntonymVoter;

impl PairVoter for AntonymVoter {
    fn vote(&self, s: &KnowledgeRecord, d: &KnowledgeRecord) -> DetectorVote {
        if !s.shares_code_with(d) {
            return DetectorVote::abstain(Method::Semantic);
        }
        let sw: Vec<String> = text_tokens(&s.content).collect();
        let dw: Vec<String> = text_tokens(&d.content).collect();
        let has = |ws: &[String], w: &str| ws.iter().any(|x| x == w);
        let hits = ANTONYMS
            .iter()
            .filter(|(a, b)| (has(&sw, a) && has(&dw, b)) || (has(&sw, b) && has(&dw, a)))
            .count();
        match hits {
            0 => DetectorVote::abstain(Method::Semantic),
            1 => DetectorVote::fire(Method::Semantic, 0.5),
            _ => DetectorVote::fire(Method::Semantic, 0.8),
        }
    }
}

const NEGATIONS: [&str; 7] = ["not", "never", "no", "don't", "avoid", "ignore", "without"];

/// Negation asymmetry between texts that share topic words.
#[derive(Debug, Clone, Copy, Default)]
pub struct NegationVoter;

impl PairVoter for NegationVoter {
    fn vote(&self, s: &KnowledgeRecord, d: &KnowledgeRecord) -> DetectorVote {
        let sw: Vec<String> = text_tokens(&s.content).collect();
        let dw: Vec<String> = text_tokens(&d.content).collect();
        let neg = |ws: &[String]| ws.iter().any(|w| NEGATIONS.contains(&w.as_str()));
        let shared = sw.iter().filter(|w| w.len() > 2 && !NEGATIONS.contains(&w.as_str()) && dw.contains(w)).count();
        if shared >= 2 && neg(&sw) != neg(&dw) {
            DetectorVote::fire(Method::Nli, 0.5)
        } else {
            DetectorVote::abstain(Method::Nli)
        }
    }
}

/// Placeholder adjudicator used when the llm method is enabled without a
/// real backend. Always abstains.
#[derive(Debug, Clone, Copy, Default)]
pub struct AbstainVoter;

impl PairVoter for AbstainVoter {
    fn vote(&self, _: &KnowledgeRecord, _: &KnowledgeRecord) -> DetectorVote {
        DetectorVote::abstain(Method::Llm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceReliability {
    pub alpha: f64,
    pub beta: f64,
}

impl SourceReliability {
    pub const STATIC_PRIOR: Self = Self { alpha: 5.0, beta: 5.0 };
    pub const DYNAMIC_PRIOR: Self = Self { alpha: 5.0, beta: 3.0 };

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }
}

pub fn sample_beta(alpha: f64, beta: f64, rng: &mut SeededRng) -> f64 {
    let dist = Beta::new(alpha, beta).expect("alpha and beta must be positive and finite");
    dist.sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Winner {
    Static,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Anomaly,
    Recency,
    Evidence,
    Bayesian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub winner: Winner,
    pub strategy: Strategy,
    pub draws: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ResolveError {
    #[error("conflict verdict was not triggered")]
    NotTriggered,
}

/// One line of the conflict audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictAudit {
    pub static_id: String,
    pub dynamic_id: String,
    pub votes: Vec<DetectorVote>,
    pub score: f64,
    pub strategy: Strategy,
    pub winner: Winner,
    pub static_after: SourceReliability,
    pub dynamic_after: SourceReliability,
}

#[derive(Clone)]
pub struct ConflictEngine {
    pub cfg: EnsembleConfig,
    rng: SeededRng,
    pub static_reliability: SourceReliability,
    pub dynamic_reliability: SourceReliability,
    /// Logical day used for staleness.
    pub now: u64,
    nli: Arc<dyn PairVoter>,
    semantic: Arc<dyn PairVoter>,
    llm: Arc<dyn PairVoter>,
    resolutions: u64,
    audit: Vec<ConflictAudit>,
    pending: Option<(String, String, ConflictVerdict)>,
}

impl core::fmt::Debug for ConflictEngine {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("ConflictEngine")
            .field("static", &self.static_reliability)
            .field("dynamic", &self.dynamic_reliability)
            .field("resolutions", &self.resolutions)
            .finish()
    }
}

impl ConflictEngine {
    pub fn new(cfg: EnsembleConfig, rng: SeededRng) -> Self {
        Self {
            cfg,
            rng,
            static_reliability: SourceReliability::STATIC_PRIOR,
            dynamic_reliability: SourceReliability::DYNAMIC_PRIOR,
            now: 0,
            nli: Arc::new(NegationVoter),
            semantic: Arc::new(AntonymVoter),
            llm: Arc::new(AbstainVoter),
            resolutions: 0,
            audit: Vec::new(),
            pending: None,
        }
    }

    pub fn with_voter(mut self, method: Method, voter: Arc<dyn PairVoter>) -> Self {
        match method {
            Method::Nli => self.nli = voter,
            Method::Semantic => self.semantic = voter,
            Method::Llm => self.llm = voter,
            _ => {}
        }
        self
    }

    pub fn resolutions(&self) -> u64 {
        self.resolutions
    }

    pub fn audit(&self) -> &[ConflictAudit] {
        &self.audit
    }

    pub fn take_audit(&mut self) -> Vec<ConflictAudit> {
        core::mem::take(&mut self.audit)
    }

    pub fn votes(&self, s: &KnowledgeRecord, d: &KnowledgeRecord) -> Vec<DetectorVote> {
        let mut out = Vec::with_capacity(6);
        for m in Method::ALL {
            if !self.cfg.enabled.get(m) {
                continue;
            }
            out.push(match m {
                Method::Nli => self.nli.vote(s, d),
                Method::Semantic => self.semantic.vote(s, d),
                Method::Temporal => temporal_vote(s, d, self.now, self.cfg.stale_days),
                Method::Evidence => evidence_vote(s, d, self.cfg.evidence_min_observations),
                Method::Recommendation => recommendation_conflict(s, d),
                Method::Llm => self.llm.vote(s, d),
            });
        }
        out
    }

    pub fn detect(&self, s: &KnowledgeRecord, d: &KnowledgeRecord) -> ConflictVerdict {
        score_votes(&self.votes(s, d), &self.cfg)
    }

    fn is_anomaly(&self, d: &KnowledgeRecord, pool: &[&KnowledgeRecord]) -> bool {
        let Some(rec) = &d.recommendation else { return false };
        let peers: Vec<&&KnowledgeRecord> = pool
            .iter()
            .filter(|r| r.id != d.id && r.key_codes == d.key_codes && r.recommendation.is_some())
            .collect();
        if peers.is_empty() {
            return false;
        }
        let disagreeing = peers.iter().filter(|r| r.recommendation.as_deref() != Some(rec.as_str())).count();
        disagreeing as f64 / peers.len() as f64 >= self.cfg.anomaly_fraction
    }

    /// Picks a strategy in the order anomaly, recency, evidence, bayesian
    /// and returns the winner. `dynamic_pool` is the full dynamic store,
    /// used for the outlier check.
    pub fn resolve(
        &mut self,
        verdict: &ConflictVerdict,
        s: &KnowledgeRecord,
        d: &KnowledgeRecord,
        dynamic_pool: &[&KnowledgeRecord],
    ) -> Result<Resolution, ResolveError> {
        if !verdict.triggered {
            return Err(ResolveError::NotTriggered);
        }
        let res = if self.is_anomaly(d, dynamic_pool) {
            Resolution { winner: Winner::Static, strategy: Strategy::Anomaly, draws: None }
        } else if self.now.saturating_sub(s.timestamp) > self.cfg.stale_days {
            Resolution { winner: Winner::Dynamic, strategy: Strategy::Recency, draws: None }
        } else if let Some(w) = self.evidence_winner(s, d) {
            Resolution { winner: w, strategy: Strategy::Evidence, draws: None }
        } else {
            let ts = sample_beta(self.static_reliability.alpha, self.static_reliability.beta, &mut self.rng);
            let td = sample_beta(self.dynamic_reliability.alpha, self.dynamic_reliability.beta, &mut self.rng);
            let winner = if td * d.effective_confidence() >= ts * s.effective_confidence() {
                Winner::Dynamic
            } else {
                Winner::Static
            };
            Resolution { winner, strategy: Strategy::Bayesian, draws: Some((ts, td)) }
        };
        self.pending = Some((s.id.clone(), d.id.clone(), verdict.clone()));
        Ok(res)
    }

    fn evidence_winner(&self, s: &KnowledgeRecord, d: &KnowledgeRecord) -> Option<Winner> {
        let n = s.observations.total() + d.observations.total();
        if n < self.cfg.evidence_min_observations {
            return None;
        }
        let (cs, cd) = (s.effective_confidence(), d.effective_confidence());
        if cd > cs {
            Some(Winner::Dynamic)
        } else if cs > cd {
            Some(Winner::Static)
        } else {
            None
        }
    }

    /// Conjugate update: the winner gains a success, the loser a failure.
    pub fn update_posteriors(&mut self, res: &Resolution) {
        match res.winner {
            Winner::Dynamic => {
                self.dynamic_reliability.alpha += 1.0;
                self.static_reliability.beta += 1.0;
            }
            Winner::Static => {
                self.static_reliability.alpha += 1.0;
                self.dynamic_reliability.beta += 1.0;
            }
        }
        self.resolutions += 1;
        if let Some((static_id, dynamic_id, verdict)) = self.pending.take() {
            self.audit.push(ConflictAudit {
                static_id,
                dynamic_id,
                votes: verdict.votes,
                score: verdict.weighted_score,
                strategy: res.strategy,
                winner: res.winner,
                static_after: self.static_reliability,
                dynamic_after: self.dynamic_reliability,
            });
        }
    }
}

/// Two-armed Thompson sampler over Bernoulli rewards.
#[derive(Debug, Clone)]
pub struct ThompsonSelector {
    pub arms: [SourceReliability; 2],
}

impl ThompsonSelector {
    pub fn new(priors: [SourceReliability; 2]) -> Self {
        Self { arms: priors }
    }

    pub fn select(&self, rng: &mut SeededRng) -> usize {
        let a = sample_beta(self.arms[0].alpha, self.arms[0].beta, rng);
        let b = sample_beta(self.arms[1].alpha, self.arms[1].beta, rng);
        usize::from(b > a)
    }

    pub fn observe(&mut self, arm: usize, reward: bool) {
        if reward {
            self.arms[arm].alpha += 1.0;
        } else {
            self.arms[arm].beta += 1.0;
        }
    }
}

/// Draws a Bernoulli outcome with success probability `p`.
pub fn bernoulli(p: f64, rng: &mut SeededRng) -> bool {
    rng.random::<f64>() < p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condition_keys::{ConditionKey, ConditionToken};
    use crate::retrieval::Source;
    use alloc::format;
    use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, proptest};
    use rand::SeedableRng;

    fn toks(s: &str) -> Vec<ConditionToken> {
        ConditionKey::parse(s).unwrap().decompose().to_vec()
    }

    fn rec(id: &str, src: Source, codes: &str, text: &str, opt: Option<&str>) -> KnowledgeRecord {
        let r = KnowledgeRecord::new(id, src, &toks(codes), text);
        match opt {
            Some(o) => r.with_recommendation(o),
            None => r,
        }
    }

    fn vote(m: Method, c: f64) -> DetectorVote {
        DetectorVote { method: m, is_conflict: true, confidence: c }
    }

    fn quiet(m: Method) -> DetectorVote {
        DetectorVote::abstain(m)
    }

    #[test]
    fn weighted_score_examples() {
        let cfg = EnsembleConfig::all_enabled();
        let only_rec: Vec<_> = Method::ALL
            .iter()
            .map(|&m| if m == Method::Recommendation { vote(m, 1.0) } else { quiet(m) })
            .collect();
        let v = score_votes(&only_rec, &cfg);
        assert!((v.weighted_score - 1.0 / 3.0).abs() < 1e-12);
        assert!(v.triggered);

        // 0.10·0.5 / 1.5 = 1/30
        let only_llm: Vec<_> =
            Method::ALL.iter().map(|&m| if m == Method::Llm { vote(m, 0.5) } else { quiet(m) }).collect();
        let v = score_votes(&only_llm, &cfg);
        assert!((v.weighted_score - 1.0 / 30.0).abs() < 1e-12);
        assert!(!v.triggered && v.breaker_method.is_none());

        let none: Vec<_> = Method::ALL.iter().map(|&m| quiet(m)).collect();
        let v = score_votes(&none, &cfg);
        assert_eq!((v.weighted_score, v.triggered), (0.0, false));
        assert_eq!(v.severity, Severity::Low);
    }

    #[test]
    fn breaker_uses_raw_confidence() {
        let cfg = EnsembleConfig::default();
        // Temporal alone at 0.6: weighted 0.15·0.6/1.4 ≈ 0.064, still fires.
        let v = score_votes(&[vote(Method::Temporal, 0.6)], &cfg);
        assert!(v.weighted_score < 0.30 && v.triggered);
        assert_eq!(v.breaker_method, Some(Method::Temporal));
        let v = score_votes(&[vote(Method::Temporal, 0.59)], &cfg);
        assert!(!v.triggered);
    }

    #[test]
    fn recommendation_patterns() {
        let s = rec("s", Source::Static, "ASIA+FAST", "Customs holds can be ignored", None);
        let d = rec("d", Source::Dynamic, "ASIA+FAST", "the strategy is ningbo", None);
        assert!(recommendation_conflict(&s, &d).is_conflict);

        let s = rec("s", Source::Static, "STRIPE+EU", "payments", Some("paypal"));
        let d = rec("d", Source::Dynamic, "STRIPE+EU", "payments", Some("stripe"));
        assert!(recommendation_conflict(&s, &d).is_conflict);

        let d2 = rec("d", Source::Dynamic, "STRIPE+EU", "payments", Some("paypal"));
        assert!(!recommendation_conflict(&s, &d2).is_conflict);

        let s3 = rec("s", Source::Static, "A+B", "use hamburg", None);
        let d3 = rec("d", Source::Dynamic, "A+B", "solution: rotterdam", None);
        assert_eq!(recommendation_conflict(&s3, &d3).confidence, 0.8);

        // Different scenarios do not contradict each other.
        let other = rec("d", Source::Dynamic, "STRIPE+US", "payments", Some("stripe"));
        assert!(!recommendation_conflict(&s, &other).is_conflict);
    }

    #[test]
    fn temporal_and_evidence_votes() {
        let s = rec("s", Source::Static, "A", "x", Some("p")).at(0);
        let d = rec("d", Source::Dynamic, "A", "y", Some("q")).at(31);
        assert!(temporal_vote(&s, &d, 31, 30).is_conflict);
        assert!(!temporal_vote(&s, &d, 30, 30).is_conflict);

        let mut s2 = s.clone();
        s2.observations.failures = 1;
        let mut d2 = d.clone();
        d2.observations.confirmations = 1;
        let v = evidence_vote(&s2, &d2, 3);
        assert_eq!((v.is_conflict, v.confidence), (false, 0.0));
        d2.observations.confirmations = 2;
        let v = evidence_vote(&s2, &d2, 3);
        assert!(v.is_conflict && (v.confidence - 1.0).abs() < 1e-12);
    }

    #[test]
    fn semantic_vote_from_table() {
        let s = rec("s", Source::Static, "A", "the northern port is open", None);
        let d = rec("d", Source::Dynamic, "A", "the northern port is closed", None);
        let v = AntonymVoter.vote(&s, &d);
        assert!(v.is_conflict);
        assert!(ANTONYMS.contains(&("open", "closed")));
        let d = rec("d", Source::Dynamic, "A", "the northern port is open", None);
        assert!(!AntonymVoter.vote(&s, &d).is_conflict);
    }

    #[test]
    fn resolution_strategies() {
        let mut e = ConflictEngine::new(EnsembleConfig::default(), SeededRng::seed_from_u64(3));
        let s = rec("s", Source::Static, "A", "x", Some("p")).at(0);
        let d = rec("d", Source::Dynamic, "A", "y", Some("q")).at(40);
        e.now = 40;
        let v = e.detect(&s, &d);
        assert!(v.triggered);
        let r = e.resolve(&v, &s, &d, &[&d]).unwrap();
        assert_eq!((r.strategy, r.winner), (Strategy::Recency, Winner::Dynamic));

        // Outlier dynamic record.
        e.now = 0;
        let peers: Vec<KnowledgeRecord> =
            (0..4).map(|i| rec(&format!("p{i}"), Source::Dynamic, "A", "z", Some("p"))).collect();
        let mut pool: Vec<&KnowledgeRecord> = peers.iter().collect();
        pool.push(&d);
        let r = e.resolve(&v, &s, &d, &pool).unwrap();
        assert_eq!((r.strategy, r.winner), (Strategy::Anomaly, Winner::Static));

        let mut quiet_verdict = v.clone();
        quiet_verdict.triggered = false;
        assert_eq!(e.resolve(&quiet_verdict, &s, &d, &[]), Err(ResolveError::NotTriggered));
    }

    #[test]
    fn posterior_updates() {
        let mut e = ConflictEngine::new(EnsembleConfig::default(), SeededRng::seed_from_u64(0));
        assert_eq!(e.static_reliability.mean(), 0.5);
        assert_eq!(e.dynamic_reliability.mean(), 0.625);
        let r = Resolution { winner: Winner::Dynamic, strategy: Strategy::Bayesian, draws: None };
        e.update_posteriors(&r);
        assert!((e.dynamic_reliability.mean() - 6.0 / 9.0).abs() < 1e-12);
        assert!((e.static_reliability.mean() - 5.0 / 11.0).abs() < 1e-12);
        let mut last = e.static_reliability.mean();
        for _ in 1..20 {
            e.update_posteriors(&r);
            assert!(e.static_reliability.mean() < last);
            last = e.static_reliability.mean();
        }
        assert!((last - 5.0 / 30.0).abs() < 1e-12);
        let total = e.static_reliability.alpha
            + e.static_reliability.beta
            + e.dynamic_reliability.alpha
            + e.dynamic_reliability.beta;
        assert_eq!(total, 18.0 + 2.0 * 20.0);
    }

    #[test]
    fn beta_sampling() {
        let mut rng = SeededRng::seed_from_u64(11);
        let n = 100_000;
        let m1: f64 = (0..n).map(|_| sample_beta(1.0, 1.0, &mut rng)).sum::<f64>() / n as f64;
        assert!((m1 - 0.5).abs() < 0.01);
        let m2: f64 = (0..n).map(|_| sample_beta(5.0, 3.0, &mut rng)).sum::<f64>() / n as f64;
        assert!((m2 - 0.625).abs() < 0.01);
        let mut a = SeededRng::seed_from_u64(5);
        let mut b = SeededRng::seed_from_u64(5);
        for _ in 0..100 {
            assert_eq!(sample_beta(2.0, 7.0, &mut a), sample_beta(2.0, 7.0, &mut b));
        }
    }

    // Integer-parameter Beta(a, b) is the a-th smallest of a+b−1 uniforms.
    fn order_stat_beta(a: usize, b: usize, rng: &mut SeededRng) -> f64 {
        let mut u: Vec<f64> = (0..a + b - 1).map(|_| rng.random::<f64>()).collect();
        u.sort_by(|x, y| x.partial_cmp(y).unwrap());
        u[a - 1]
    }

    #[test]
    fn prior_only_bayesian_matches_oracle() {
        // P(θ_d > θ_s) for Beta(5,3) vs Beta(5,5), by quadrature: 0.7141608.
        const EXPECTED: f64 = 0.714_160_8;
        let mut oracle_rng = SeededRng::seed_from_u64(99);
        let n = 100_000;
        let oracle = (0..n)
            .filter(|_| order_stat_beta(5, 3, &mut oracle_rng) > order_stat_beta(5, 5, &mut oracle_rng))
            .count() as f64
            / n as f64;
        assert!((oracle - EXPECTED).abs() < 0.006, "oracle {oracle}");

        let mut e = ConflictEngine::new(EnsembleConfig::default(), SeededRng::seed_from_u64(1234));
        let s = rec("s", Source::Static, "A", "x", Some("p"));
        let mut d = rec("d", Source::Dynamic, "A", "y", Some("q"));
        d.confidence_prior = s.confidence_prior;
        let v = e.detect(&s, &d);
        let mut dyn_wins = 0;
        for _ in 0..n {
            let r = e.resolve(&v, &s, &d, &[]).unwrap();
            assert_eq!(r.strategy, Strategy::Bayesian);
            dyn_wins += usize::from(r.winner == Winner::Dynamic);
        }
        let frac = dyn_wins as f64 / n as f64;
        assert!((frac - EXPECTED).abs() < 0.006, "{frac}");
        assert_eq!(e.resolutions(), 0);
    }

    #[test]
    fn adversarial_collapse_is_bounded() {
        // Dynamic always right: the static record's evidence confidence is 0.
        let mut e = ConflictEngine::new(EnsembleConfig::default(), SeededRng::seed_from_u64(8));
        let mut s = rec("s", Source::Static, "A", "x", Some("p"));
        s.observations.failures = 1;
        let mut d = rec("d", Source::Dynamic, "A", "y", Some("q"));
        d.observations.confirmations = 1;
        let mut steps = 0;
        while !(e.static_reliability.mean() < 0.10 && e.dynamic_reliability.mean() > 0.90) {
            let v = e.detect(&s, &d);
            let r = e.resolve(&v, &s, &d, &[&d]).unwrap();
            assert_eq!(r.winner, Winner::Dynamic);
            e.update_posteriors(&r);
            steps += 1;
            assert!(steps <= 41);
        }
        // 5/(10+n) < 0.1 first holds at n = 41.
        assert_eq!(steps, 41);
        assert_eq!(e.audit().len(), 41);
    }

    #[test]
    fn thompson_regret_is_sublinear() {
        let mut rng = SeededRng::seed_from_u64(77);
        let p = [0.45, 0.60];
        let mut t = ThompsonSelector::new([SourceReliability { alpha: 1.0, beta: 1.0 }; 2]);
        let horizon = 10_000;
        let mut regret = 0.0;
        let mut checkpoints = Vec::new();
        for step in 1..=horizon {
            let arm = t.select(&mut rng);
            regret += p[1] - p[arm];
            let r = bernoulli(p[arm], &mut rng);
            t.observe(arm, r);
            if step == 1_000 || step == horizon {
                checkpoints.push(regret / step as f64);
            }
        }
        assert!(checkpoints[1] < 0.02, "{checkpoints:?}");
        assert!(checkpoints[1] < checkpoints[0]);
    }

    proptest! {
        #[test]
        fn score_bounded(confs in prop::collection::vec((any::<bool>(), 0.0f64..=1.0), 6)) {
            let votes: Vec<_> = Method::ALL.iter().zip(&confs)
                .map(|(&m, &(c, x))| DetectorVote { method: m, is_conflict: c, confidence: x })
                .collect();
            for cfg in [EnsembleConfig::default(), EnsembleConfig::all_enabled()] {
                let v = score_votes(&votes, &cfg);
                prop_assert!((0.0..=1.0).contains(&v.weighted_score));
                let breaker = votes.iter().any(|x| cfg.enabled.get(x.method) && x.is_conflict && x.confidence >= 0.6);
                prop_assert_eq!(v.triggered, v.weighted_score >= 0.30 || breaker);
                if breaker { prop_assert!(v.triggered); }
            }
        }

        #[test]
        fn mass_conservation(wins in prop::collection::vec(any::<bool>(), 0..60)) {
            let mut e = ConflictEngine::new(EnsembleConfig::default(), SeededRng::seed_from_u64(0));
            for w in &wins {
                let winner = if *w { Winner::Dynamic } else { Winner::Static };
                e.update_posteriors(&Resolution { winner, strategy: Strategy::Bayesian, draws: None });
            }
            let total = e.static_reliability.alpha + e.static_reliability.beta
                + e.dynamic_reliability.alpha + e.dynamic_reliability.beta;
            prop_assert_eq!(total, 18.0 + 2.0 * wins.len() as f64);
        }
    }
}
