//! Dual-frequency outer loop.
//!
//! High frequency: constant-time action gating over a snapshot of memory.
//! Low frequency: on a trigger, mutate a front member's prompt, evaluate the
//! child through the agent pipeline and keep a bi-objective Pareto front of
//! (success rate, step efficiency).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::condition_keys::ConditionKey;
use crate::evo_memory::{ConstraintClass, EvoMemory, PruningMode};
use crate::rule_store::RuleStore;
use crate::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    ToolUse,
    Retrieval,
    Reasoning,
    Verification,
}

impl Dimension {
    /// Also the tie-break order.
    pub const ALL: [Dimension; 4] = [Dimension::ToolUse, Dimension::Retrieval, Dimension::Reasoning, Dimension::Verification];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dimension::ToolUse => "tool_use",
            Dimension::Retrieval => "retrieval",
            Dimension::Reasoning => "reasoning",
            Dimension::Verification => "verification",
        })
    }
}

/// Keyword → weight lists per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternTables {
    pub tables: [Vec<(String, f64)>; 4],
}

fn weighted(words: &[&str], w: f64) -> Vec<(String, f64)> {
    words.iter().map(|s| (s.to_string(), w)).collect()
}

impl Default for PatternTables {
    fn default() -> Self {
        Self {
            tables: [
                weighted(&["route", "book", "sync", "connect", "call", "execute", "ship", "shipment", "api", "itinerary"], 1.0),
                weighted(&["lookup", "find", "search", "retrieve", "records", "history", "accounts", "knowledge"], 1.0),
                weighted(&["conditions", "compose", "constraints", "plan", "choose", "tradeoff", "with"], 0.5),
                weighted(&["verify", "check", "audit", "secure", "safe", "hipaa", "auth", "validate"], 1.0),
            ],
        }
    }
}

/// Per-domain run outcomes feeding the confidence adjustment.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityHistory {
    runs: BTreeMap<String, (u32, u32)>,
}

impl ComplexityHistory {
    pub fn observe(&mut self, domain: &str, success: bool) {
        let e = self.runs.entry(domain.to_string()).or_insert((0, 0));
        e.0 += 1;
        e.1 += success as u32;
    }

    /// Laplace-smoothed success rate; 0.5 for an unseen domain.
    pub fn confidence(&self, domain: &str) -> f64 {
        let (n, s) = self.runs.get(domain).copied().unwrap_or((0, 0));
        (1.0 + s as f64) / (2.0 + n as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityEstimate {
    pub dimension_scores: [f64; 4],
    pub dominant_dimension: Dimension,
    pub estimated_steps: u32,
    pub confidence: f64,
}

impl ComplexityEstimate {
    pub fn score(&self, d: Dimension) -> f64 {
        self.dimension_scores[d.index()]
    }
}

pub fn analyze_complexity(
    task_text: &str,
    tables: &PatternTables,
    history: &ComplexityHistory,
    domain: &str,
) -> ComplexityEstimate {
    let words: Vec<String> = task_text
        .split(|c: char| !c.is_alphanumeric() && c != '_' && c != '-')
        .filter(|w| !w.is_empty())
        .map(|w| w.to_ascii_lowercase())
        .collect();
    let mut scores = [0.0; 4];
    for d in Dimension::ALL {
        for (kw, w) in &tables.tables[d.index()] {
            let hits = words.iter().filter(|x| x.eq_ignore_ascii_case(kw)).count();
            scores[d.index()] += w * hits as f64;
        }
    }
    let mut dominant = Dimension::ToolUse;
    for d in Dimension::ALL {
        if scores[d.index()] > scores[dominant.index()] {
            dominant = d;
        }
    }
    let total: f64 = scores.iter().sum();
    ComplexityEstimate {
        dimension_scores: scores,
        dominant_dimension: dominant,
        estimated_steps: 2 + libm::round(total) as u32,
        confidence: history.confidence(domain),
    }
}

pub const MIN_ROLLOUTS: u32 = 1;
pub const MAX_ROLLOUTS: u32 = 15;
pub const SKIP_SCORE: f64 = 0.98;
pub const DIVERSITY_THRESHOLD: f64 = 0.7;
pub const DIVERSITY_ROLLOUTS: u32 = 5;
pub const CONSISTENCY_BAND: f64 = 0.9;
pub const CONSISTENCY_ROLLOUTS: u32 = 3;
pub const RECOVERY_INCREMENT: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Focus {
    Skip,
    Consistency,
    Diversity,
    Explore,
    Recovery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutPlan {
    pub count: u32,
    pub focus: Focus,
}

/// Checks run in order: early stop, diversity, consistency, then a
/// complexity-scaled exploration budget.
pub fn allocate_rollouts(
    score: f64,
    diversity_score: f64,
    complexity: &ComplexityEstimate,
    failed_before: bool,
) -> RolloutPlan {
    if score >= SKIP_SCORE {
        return RolloutPlan { count: 1, focus: Focus::Skip };
    }
    if diversity_score < DIVERSITY_THRESHOLD {
        return RolloutPlan { count: DIVERSITY_ROLLOUTS, focus: Focus::Diversity };
    }
    if score >= CONSISTENCY_BAND {
        return RolloutPlan { count: CONSISTENCY_ROLLOUTS, focus: Focus::Consistency };
    }
    let base = complexity.estimated_steps.div_ceil(2).clamp(MIN_ROLLOUTS, MAX_ROLLOUTS);
    if failed_before {
        RolloutPlan { count: (base + RECOVERY_INCREMENT).min(MAX_ROLLOUTS), focus: Focus::Recovery }
    } else {
        RolloutPlan { count: base, focus: Focus::Explore }
    }
}

/// 1 / (1 + s̄ / s_max) with s_max = 1 + max_retries.
pub fn step_efficiency(avg_steps: f64, max_retries: u32) -> f64 {
    1.0 / (1.0 + avg_steps / (1.0 + max_retries as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub success: bool,
    pub steps: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: u32,
    pub prompt_text: String,
    pub success_rate: f64,
    pub step_efficiency: f64,
    pub rollouts_used: u32,
    pub dominant_dimension: Dimension,
}

pub const SUCCESS_WEIGHT: f64 = 0.7;
pub const EFFICIENCY_WEIGHT: f64 = 0.3;

impl Candidate {
    /// Metrics come only from recorded runs.
    pub fn from_runs(id: u32, prompt_text: &str, runs: &[RunMetrics], max_retries: u32, dim: Dimension) -> Self {
        let n = runs.len().max(1) as f64;
        let successes = runs.iter().filter(|r| r.success).count() as f64;
        let avg_steps = runs.iter().map(|r| r.steps as f64).sum::<f64>() / n;
        Self {
            id,
            prompt_text: prompt_text.to_string(),
            success_rate: successes / n,
            step_efficiency: step_efficiency(avg_steps, max_retries),
            rollouts_used: runs.len() as u32,
            dominant_dimension: dim,
        }
    }

    pub fn weighted_score(&self) -> f64 {
        SUCCESS_WEIGHT * self.success_rate + EFFICIENCY_WEIGHT * self.step_efficiency
    }

    /// ≥ on both objectives and > on at least one.
    pub fn dominates(&self, other: &Candidate) -> bool {
        self.success_rate >= other.success_rate
            && self.step_efficiency >= other.step_efficiency
            && (self.success_rate > other.success_rate || self.step_efficiency > other.step_efficiency)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParetoFront {
    members: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Admission {
    Discarded,
    Added { removed: Vec<u32> },
}

impl ParetoFront {
    pub fn members(&self) -> &[Candidate] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn ids(&self) -> Vec<u32> {
        self.members.iter().map(|c| c.id).collect()
    }

    pub fn insert(&mut self, child: Candidate) -> Admission {
        if self.members.iter().any(|m| m.dominates(&child)) {
            return Admission::Discarded;
        }
        let removed: Vec<u32> = self.members.iter().filter(|m| child.dominates(m)).map(|m| m.id).collect();
        self.members.retain(|m| !child.dominates(m));
        self.members.push(child);
        Admission::Added { removed }
    }

    /// Distinct behavioural phenotypes over front size; 1.0 when empty.
    pub fn diversity(&self) -> f64 {
        if self.members.is_empty() {
            return 1.0;
        }
        let mut dims: Vec<Dimension> = self.members.iter().map(|c| c.dominant_dimension).collect();
        dims.sort();
        dims.dedup();
        dims.len() as f64 / self.members.len().min(Dimension::ALL.len()) as f64
    }
}

/// The non-dominated subset, in input order.
pub fn pareto_front(candidates: &[Candidate]) -> ParetoFront {
    let mut front = ParetoFront::default();
    for c in candidates {
        front.insert(c.clone());
    }
    front
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompassError {
    #[error("cannot select a winner from an empty front")]
    EmptyFront,
}

const TIE_EPS: f64 = 1e-12;

pub fn select_compilation_winner(front: &[Candidate]) -> Result<&Candidate, CompassError> {
    let mut best: Option<&Candidate> = None;
    for c in front {
        best = Some(match best {
            None => c,
            Some(b) => {
                let (sc, sb) = (c.weighted_score(), b.weighted_score());
                let better = if (sc - sb).abs() <= TIE_EPS * sc.abs().max(sb.abs()).max(1.0) {
                    c.success_rate > b.success_rate || (c.success_rate == b.success_rate && c.id < b.id)
                } else {
                    sc > sb
                };
                if better {
                    c
                } else {
                    b
                }
            }
        });
    }
    best.ok_or(CompassError::EmptyFront)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerEvent {
    NewRule,
    GoalFailure,
    PhaseChange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    Block,
    Pivot,
    FastPath,
    Proceed,
}

/// Logical checks only: hash lookups into the failure log and rule table.
pub fn hifreq_evaluate_action(
    evo: &EvoMemory,
    rules: &RuleStore,
    key: &ConditionKey,
    proposed: Option<&str>,
    mode: &PruningMode,
) -> Action {
    if let Some(opt) = proposed {
        if evo.is_forbidden(key, opt, mode) {
            return Action::Block;
        }
    }
    if rules.lookup_exact(key).is_some() {
        return Action::FastPath;
    }
    if !evo.failures_for(key).is_empty() {
        return Action::Pivot;
    }
    Action::Proceed
}

/// What the mutator sees of recent execution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub domain: String,
    pub task_text: String,
    pub last_failure: Option<(ConditionKey, String, ConstraintClass)>,
    pub top_rules: Vec<(ConditionKey, String)>,
    pub failed_before: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("mutation failed: {0}")]
pub struct MutationError(pub String);

pub trait Mutator {
    fn mutate(&mut self, parent: &Candidate, trajectory: &TrajectorySummary) -> Result<String, MutationError>;
}

/// Injects the latest failure's constraint and the top rules into the
/// parent prompt.
#[derive(Debug, Clone)]
pub struct TemplateMutator {
    pub max_rules: usize,
}

impl Default for TemplateMutator {
    fn default() -> Self {
        Self { max_rules: 3 }
    }
}

impl Mutator for TemplateMutator {
    fn mutate(&mut self, parent: &Candidate, t: &TrajectorySummary) -> Result<String, MutationError> {
        let mut out = parent.prompt_text.clone();
        if let Some((key, opt, class)) = &t.last_failure {
            let line = format!("\nAVOID {opt} for {key} ({})", class.as_str());
            if !out.contains(&line) {
                out.push_str(&line);
            }
        }
        for (key, sol) in t.top_rules.iter().take(self.max_rules) {
            let line = format!("\nPREFER {sol} for {key}");
            if !out.contains(&line) {
                out.push_str(&line);
            }
        }
        if out == parent.prompt_text {
            return Err(MutationError("no new constraint to inject".into()));
        }
        Ok(out)
    }
}

/// Runs a prompt through the agent pipeline on isolated environment copies.
pub trait Evaluator {
    fn evaluate(&mut self, prompt: &str, rollouts: u32) -> Vec<RunMetrics>;
    fn max_retries(&self) -> u32;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionRecord {
    pub trigger: TriggerEvent,
    pub parent_id: Option<u32>,
    pub child_id: Option<u32>,
    pub metrics: Option<(f64, f64)>,
    pub front_ids_after: Vec<u32>,
    pub note: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvolveStatus {
    Waiting,
    Discarded,
    Added,
    MutationFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompassConfig {
    pub evolution_interval: u32,
    pub parent_temperature: f64,
    pub min_score: f64,
    pub compilation_batch: usize,
}

impl Default for CompassConfig {
    fn default() -> Self {
        Self { evolution_interval: 2, parent_temperature: 0.5, min_score: 0.6, compilation_batch: 5 }
    }
}

/// Low-frequency state: one evolution at a time per agent.
#[derive(Debug, Clone)]
pub struct CompassLoop {
    pub cfg: CompassConfig,
    pub base_prompt: String,
    pub tables: PatternTables,
    pub history: ComplexityHistory,
    front: ParetoFront,
    compiled: Option<Candidate>,
    cache: BTreeMap<(String, u32), Vec<RunMetrics>>,
    cache_misses: u64,
    tasks_since: u32,
    next_id: u32,
    rng: SeededRng,
    log: Vec<EvolutionRecord>,
}

impl CompassLoop {
    pub fn new(base_prompt: &str, cfg: CompassConfig, rng: SeededRng) -> Self {
        Self {
            cfg,
            base_prompt: base_prompt.to_string(),
            tables: PatternTables::default(),
            history: ComplexityHistory::default(),
            front: ParetoFront::default(),
            compiled: None,
            cache: BTreeMap::new(),
            cache_misses: 0,
            tasks_since: 0,
            next_id: 0,
            rng,
            log: Vec::new(),
        }
    }

    pub fn front(&self) -> &ParetoFront {
        &self.front
    }

    pub fn log(&self) -> &[EvolutionRecord] {
        &self.log
    }

    pub fn cache_misses(&self) -> u64 {
        self.cache_misses
    }

    pub fn note_task(&mut self, domain: &str, success: bool) {
        self.tasks_since += 1;
        self.history.observe(domain, success);
    }

    fn evaluate_cached(&mut self, evaluator: &mut dyn Evaluator, prompt: &str, rollouts: u32) -> Vec<RunMetrics> {
        let k = (prompt.to_string(), rollouts);
        if let Some(m) = self.cache.get(&k) {
            return m.clone();
        }
        self.cache_misses += 1;
        let m = evaluator.evaluate(prompt, rollouts);
        self.cache.insert(k, m.clone());
        m
    }

    fn fresh_id(&mut self) -> u32 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn pick_parent(&mut self) -> Option<Candidate> {
        let members = self.front.members();
        if members.is_empty() {
            return None;
        }
        let t = self.cfg.parent_temperature;
        let top = members.iter().map(|c| c.weighted_score()).fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = members.iter().map(|c| libm::exp((c.weighted_score() - top) / t)).collect();
        let total: f64 = w.iter().sum();
        let mut u = self.rng.random::<f64>() * total;
        for (c, wi) in members.iter().zip(&w) {
            if u < *wi {
                return Some(c.clone());
            }
            u -= wi;
        }
        members.last().cloned()
    }

    /// Runs one evolution cycle if the interval has elapsed.
    pub fn evolve_on_trigger(
        &mut self,
        event: TriggerEvent,
        trajectory: &TrajectorySummary,
        mutator: &mut dyn Mutator,
        evaluator: &mut dyn Evaluator,
    ) -> EvolveStatus {
        if self.tasks_since < self.cfg.evolution_interval {
            return EvolveStatus::Waiting;
        }
        self.tasks_since = 0;
        let complexity = analyze_complexity(&trajectory.task_text, &self.tables, &self.history, &trajectory.domain);
        if self.front.is_empty() {
            let base = self.base_prompt.clone();
            let plan = allocate_rollouts(0.0, 1.0, &complexity, false);
            let runs = self.evaluate_cached(evaluator, &base, plan.count);
            let id = self.fresh_id();
            let dim = analyze_complexity(&base, &self.tables, &self.history, &trajectory.domain).dominant_dimension;
            self.front.insert(Candidate::from_runs(id, &base, &runs, evaluator.max_retries(), dim));
        }
        let parent = self.pick_parent().expect("front seeded");
        let prompt = match mutator.mutate(&parent, trajectory) {
            Ok(p) => p,
            Err(e) => {
                self.log.push(EvolutionRecord {
                    trigger: event,
                    parent_id: Some(parent.id),
                    child_id: None,
                    metrics: None,
                    front_ids_after: self.front.ids(),
                    note: e.to_string(),
                });
                return EvolveStatus::MutationFailed;
            }
        };
        let plan = allocate_rollouts(parent.weighted_score(), self.front.diversity(), &complexity, trajectory.failed_before);
        let runs = self.evaluate_cached(evaluator, &prompt, plan.count);
        let id = self.fresh_id();
        let dim = analyze_complexity(&prompt, &self.tables, &self.history, &trajectory.domain).dominant_dimension;
        let child = Candidate::from_runs(id, &prompt, &runs, evaluator.max_retries(), dim);
        let metrics = Some((child.success_rate, child.step_efficiency));
        let status = match self.front.insert(child) {
            Admission::Discarded => EvolveStatus::Discarded,
            Admission::Added { .. } => EvolveStatus::Added,
        };
        self.compile();
        self.log.push(EvolutionRecord {
            trigger: event,
            parent_id: Some(parent.id),
            child_id: Some(id),
            metrics,
            front_ids_after: self.front.ids(),
            note: format!("{status:?}").to_lowercase(),
        });
        status
    }

    /// Picks the compiled prompt from the best `compilation_batch` members.
    pub fn compile(&mut self) {
        let mut batch: Vec<Candidate> = self.front.members().to_vec();
        batch.sort_by(|a, b| b.weighted_score().total_cmp(&a.weighted_score()).then(a.id.cmp(&b.id)));
        batch.truncate(self.cfg.compilation_batch);
        self.compiled = select_compilation_winner(&batch).ok().cloned();
    }

    pub fn compiled(&self) -> Option<&Candidate> {
        self.compiled.as_ref()
    }

    /// The active prompt. Rule lines are rebuilt from the store on every
    /// call, so invalidated rules drop out without any bookkeeping.
    pub fn get_evolved_prompt(&self, rules: &RuleStore, include_rules: bool) -> String {
        let mut prompt = select_prompt(self.compiled.as_ref(), self.front.members(), self.cfg.min_score)
            .unwrap_or(&self.base_prompt)
            .to_string();
        if include_rules {
            append_rules(&mut prompt, rules);
        }
        prompt
    }
}

/// Compiled winner above the threshold, else the front's best success rate.
pub fn select_prompt<'a>(compiled: Option<&'a Candidate>, front: &'a [Candidate], min_score: f64) -> Option<&'a str> {
    if let Some(w) = compiled {
        if w.weighted_score() > min_score {
            return Some(&w.prompt_text);
        }
    }
    front
        .iter()
        .fold(None::<&Candidate>, |best, c| match best {
            Some(b) if b.success_rate >= c.success_rate => Some(b),
            _ => Some(c),
        })
        .map(|c| c.prompt_text.as_str())
}

pub fn rule_line(key: &ConditionKey, solution: &str) -> String {
    format!("RULE {key} => {solution}")
}

pub fn append_rules(prompt: &mut String, rules: &RuleStore) {
    for r in rules.rules() {
        prompt.push('\n');
        prompt.push_str(&rule_line(&r.key, &r.solution));
    }
}
