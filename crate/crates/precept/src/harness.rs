//! Desk-scale experiment drivers with simulated reasoners.
//!
//! Every experiment runs a training phase (β passes over the training keys)
//! followed by its test regime, once per seed and domain, for a primary
//! PRECEPT arm and a comparator arm. Seeds own all their state, so they run
//! on separate threads and are gathered back in seed order.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use precept_core::agent::{
    Agent, AgentConfig, EpisodeResult, RuleEvent, SimulatedPreceptReasoner, SimulatedVerbalParams,
    TestMode, TraceRecord, VerbalAgent,
};
use precept_core::compass::EvolutionRecord;
use precept_core::conflict::{ConflictAudit, Winner};
use precept_core::envs::{drift_changed_fraction, make_domain_with, DomainName, DomainSpec, HiddenCSP};
use precept_core::{ConditionKey, SeededRng};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum ExperimentId {
    MainComparison = 1,
    Compositional = 2,
    TrainingSize = 3,
    ContinuousLearning = 4,
    Persistence = 5,
    StaticKnowledge = 6,
    Drift = 7,
    CompassMatched = 8,
    CompassOod = 9,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 9] = [
        Self::MainComparison,
        Self::Compositional,
        Self::TrainingSize,
        Self::ContinuousLearning,
        Self::Persistence,
        Self::StaticKnowledge,
        Self::Drift,
        Self::CompassMatched,
        Self::CompassOod,
    ];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn slug(self) -> &'static str {
        match self {
            Self::MainComparison => "main_comparison",
            Self::Compositional => "compositional",
            Self::TrainingSize => "training_size",
            Self::ContinuousLearning => "continuous_learning",
            Self::Persistence => "persistence",
            Self::StaticKnowledge => "static_knowledge",
            Self::Drift => "drift",
            Self::CompassMatched => "compass_matched",
            Self::CompassOod => "compass_ood",
        }
    }

    /// Resolves a number, slug or legacy driver-script name. The legacy
    /// rule-drift driver served both persistence and drift; which one is
    /// meant depends on whether the salts differ.
    pub fn resolve(name: &str, salts_differ: bool) -> Result<Self, HarnessError> {
        let n = name.trim().to_ascii_lowercase();
        let n = n.strip_suffix(".py").unwrap_or(&n);
        let n = n.strip_prefix("run_").unwrap_or(n);
        let n = n.strip_prefix("exp").map(|r| r.trim_start_matches(['-', '_'])).unwrap_or(n);
        if let Ok(k) = n.parse::<u8>() {
            return Self::try_from(k).map_err(|_| HarnessError::UnknownExperiment(name.to_string()));
        }
        let legacy = [
            ("1_main_comparison", Self::MainComparison),
            ("6_compositional_generalization", Self::Compositional),
            ("3_training_size_ablation", Self::TrainingSize),
            ("4_continuous_learning", Self::ContinuousLearning),
            ("2_static_knowledge_ablation", Self::StaticKnowledge),
            ("8_compass_ablation", Self::CompassMatched),
            ("9_compass_stress", Self::CompassOod),
        ];
        if let Some((_, id)) = legacy.iter().find(|(s, _)| *s == n) {
            return Ok(*id);
        }
        if n == "7_rule_drift" || n == "rule_drift" {
            return Ok(if salts_differ { Self::Drift } else { Self::Persistence });
        }
        Self::ALL
            .into_iter()
            .find(|id| id.slug() == n)
            .ok_or_else(|| HarnessError::UnknownExperiment(name.to_string()))
    }
}

impl TryFrom<u8> for ExperimentId {
    type Error = String;
    fn try_from(k: u8) -> Result<Self, String> {
        Self::ALL.get((k as usize).wrapping_sub(1)).copied().ok_or_else(|| format!("no experiment {k}"))
    }
}

impl From<ExperimentId> for u8 {
    fn from(id: ExperimentId) -> u8 {
        id.number()
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl FromStr for ExperimentId {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, HarnessError> {
        Self::resolve(s, true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkMode {
    Off,
    Adversarial,
}

impl FromStr for SkMode {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s.to_ascii_lowercase().as_str() {
            "off" => Ok(Self::Off),
            "adversarial" | "on" => Ok(Self::Adversarial),
            _ => Err(HarnessError::Config(format!("sk must be off or adversarial, got `{s}`"))),
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Format(#[from] formats::FormatError),
}

/// Seeds used when none are given.
pub const DEFAULT_SEEDS: [u64; 10] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub domains: Vec<DomainName>,
    pub n_conditions: usize,
    pub beta: u32,
    /// None picks the experiment's per-domain budget.
    pub max_retries: Option<u32>,
    pub seeds: Vec<u64>,
    pub test_mode: TestMode,
    pub train_salt: u64,
    pub test_salt: u64,
    pub sk: SkMode,
    pub compass_outer: bool,
    pub prompt_baking: bool,
    /// Sequential encounters per test key.
    pub test_encounters: u32,
    pub verbal: SimulatedVerbalParams,
}

impl ExperimentConfig {
    pub fn preset(experiment: ExperimentId) -> Self {
        use DomainName::*;
        use ExperimentId::*;
        let mut c = Self {
            experiment,
            domains: vec![Integration, Logistics],
            n_conditions: 5,
            beta: 3,
            max_retries: None,
            seeds: DEFAULT_SEEDS.to_vec(),
            test_mode: TestMode::Matched,
            train_salt: 0,
            test_salt: 0,
            sk: SkMode::Off,
            compass_outer: true,
            prompt_baking: true,
            test_encounters: 1,
            verbal: SimulatedVerbalParams { p: 0.75, p_forget: 0.2, prior_bias: 0.3 },
        };
        match experiment {
            MainComparison => {
                c.domains = vec![Integration, Booking, Logistics];
                c.test_mode = TestMode::Both;
            }
            ContinuousLearning => {
                c.beta = 1;
                c.test_encounters = 4;
            }
            Persistence => c.test_encounters = 4,
            Drift => {
                c.test_salt = 1;
                c.test_encounters = 4;
            }
            StaticKnowledge => c.sk = SkMode::Adversarial,
            CompassMatched => c.domains = vec![Integration],
            CompassOod => {
                c.domains = vec![Integration];
                c.prompt_baking = false;
            }
            Compositional | TrainingSize => {}
        }
        c
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.seeds.len() {
            return bad("seed list has duplicates".into());
        }
        if self.domains.is_empty() {
            return bad("no domains".into());
        }
        if self.beta == 0 {
            return bad("beta must be at least 1".into());
        }
        if self.test_encounters == 0 {
            return bad("test_encounters must be at least 1".into());
        }
        match self.experiment {
            ExperimentId::Persistence if self.train_salt != self.test_salt => {
                return bad(format!(
                    "experiment 5 (persistence) needs train_salt == test_salt, got {} and {}",
                    self.train_salt, self.test_salt
                ))
            }
            ExperimentId::Drift if self.train_salt == self.test_salt => {
                return bad(format!("experiment 7 (drift) needs differing salts, both are {}", self.train_salt))
            }
            _ => {}
        }
        for d in &self.domains {
            make_domain_with(*d, self.n_conditions).map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        self.verbal.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    /// Retry budget for `domain`: continuous learning gives logistics 2
    /// retries (4 unambiguous ports), everything else 4.
    pub fn retries_for(&self, domain: DomainName) -> u32 {
        self.max_retries.unwrap_or(match (self.experiment, domain) {
            (ExperimentId::ContinuousLearning, DomainName::Logistics) => 2,
            _ => 4,
        })
    }
}

/// Which system an arm runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArmKind {
    Precept { sk: SkMode, compass_outer: bool },
    Verbal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub name: String,
    pub kind: ArmKind,
}

/// The primary arm and its comparator. Static-knowledge runs compare the
/// SK setting against its opposite, outer-loop runs compare outer loop on
/// and off, everything else compares with the simulated verbal baseline.
pub fn arms(cfg: &ExperimentConfig) -> [Arm; 2] {
    let primary = Arm {
        name: "precept".into(),
        kind: ArmKind::Precept { sk: cfg.sk, compass_outer: cfg.compass_outer },
    };
    let comparator = match cfg.experiment {
        ExperimentId::StaticKnowledge => {
            let sk = if cfg.sk == SkMode::Off { SkMode::Adversarial } else { SkMode::Off };
            let label = if sk == SkMode::Off { "precept_sk_off" } else { "precept_sk_adversarial" };
            Arm { name: label.into(), kind: ArmKind::Precept { sk, compass_outer: cfg.compass_outer } }
        }
        ExperimentId::CompassMatched | ExperimentId::CompassOod => {
            let on = !cfg.compass_outer;
            let label = if on { "precept_outer_on" } else { "precept_outer_off" };
            Arm { name: label.into(), kind: ArmKind::Precept { sk: cfg.sk, compass_outer: on } }
        }
        _ => Arm { name: "verbal".into(), kind: ArmKind::Verbal },
    };
    [primary, comparator]
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub episodes: u32,
    pub p1: f64,
    pub pt: f64,
    pub avg_steps: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    n: u32,
    first: u32,
    ok: u32,
    steps: u64,
}

impl Tally {
    fn add(&mut self, success: bool, first_try: bool, steps: u32) {
        self.n += 1;
        self.first += first_try as u32;
        self.ok += success as u32;
        self.steps += u64::from(steps);
    }

    fn metrics(&self) -> Metrics {
        let n = f64::from(self.n.max(1));
        Metrics {
            episodes: self.n,
            p1: f64::from(self.first) / n,
            pt: f64::from(self.ok) / n,
            avg_steps: self.steps as f64 / n,
        }
    }
}

/// What happened to one key's trained rule during the test phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaleRule {
    pub key: String,
    pub stale_solution: String,
    /// First test encounter after which the stale solution was no longer
    /// served by exact lookup.
    pub removed_at: Option<u32>,
    /// Encounter where an explicit invalidation happened, if any.
    pub invalidated_at: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub domain: DomainName,
    pub arm: String,
    pub seed: u64,
    pub test: Metrics,
    /// Encounter-indexed ("enc1", …) or regime-split ("matched",
    /// "unseen", "2way", "3way") test metrics.
    pub groups: BTreeMap<String, Metrics>,
    pub conflicts: u64,
    pub static_wins: u64,
    pub static_posterior: f64,
    pub dynamic_posterior: f64,
    pub invalidations: u32,
    pub probes: u32,
    pub evolutions: usize,
    pub stale_rules: Vec<StaleRule>,
    /// Test episodes whose exact rule was served on the first attempt.
    pub matched_fast_path: u32,
    #[serde(skip)]
    pub trace: Vec<TraceRecord>,
    #[serde(skip)]
    pub evolution_log: Vec<EvolutionRecord>,
    #[serde(skip)]
    pub audit: Vec<ConflictAudit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainInfo {
    pub domain: DomainName,
    pub e: usize,
    pub options: usize,
    pub valid_options: usize,
    /// Fraction of shipped keys whose answer differs between the salts.
    pub changed_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultSet {
    pub config: ExperimentConfig,
    pub arms: Vec<String>,
    pub domains: Vec<DomainInfo>,
    pub seeds: Vec<SeedResult>,
}

impl ResultSet {
    pub fn for_arm<'a>(&'a self, domain: DomainName, arm: &'a str) -> impl Iterator<Item = &'a SeedResult> + 'a {
        self.seeds.iter().filter(move |r| r.domain == domain && r.arm == arm)
    }
}

fn harness_rng(seed: u64, lane: u64) -> SeededRng {
    let mut r = SeededRng::seed_from_u64(seed);
    r.set_stream(lane);
    r
}

fn single(token: &precept_core::ConditionToken) -> ConditionKey {
    ConditionKey::from_tokens(vec![token.clone()]).expect("one token")
}

fn combinations(spec: &DomainSpec, k: usize) -> Vec<ConditionKey> {
    let v = &spec.vocab;
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    if k == 0 || k > v.len() {
        return out;
    }
    loop {
        out.push(ConditionKey::from_tokens(idx.iter().map(|&i| v[i].clone()).collect()).expect("distinct tokens"));
        let mut i = k;
        while i > 0 && idx[i - 1] == v.len() - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Test tasks in play order, each with its group label and encounter.
struct Plan {
    train_keys: Vec<ConditionKey>,
    test: Vec<(String, ConditionKey, u32)>,
    restart: bool,
}

fn plan(cfg: &ExperimentConfig, spec: &DomainSpec, seed: u64) -> Plan {
    let mut rng = harness_rng(seed, 11);
    let mut test = Vec::new();
    let (train_keys, restart) = match cfg.experiment {
        ExperimentId::Compositional => (spec.vocab.iter().map(single).collect(), false),
        ExperimentId::Persistence | ExperimentId::Drift => (spec.unique_keys.clone(), true),
        _ => (spec.unique_keys.clone(), false),
    };
    match cfg.experiment {
        ExperimentId::Compositional => {
            for (label, k) in [("2way", 2), ("3way", 3)] {
                let mut keys = combinations(spec, k);
                keys.shuffle(&mut rng);
                for enc in 1..=cfg.test_encounters {
                    test.extend(keys.iter().map(|key| (label.to_string(), key.clone(), enc)));
                }
            }
        }
        ExperimentId::CompassOod => {
            for enc in 1..=cfg.test_encounters {
                let mut keys = spec.holdout_keys.clone();
                keys.shuffle(&mut rng);
                test.extend(keys.into_iter().map(|k| ("unseen".to_string(), k, enc)));
            }
        }
        _ => {
            for enc in 1..=cfg.test_encounters {
                let mut keys: Vec<(String, ConditionKey)> =
                    spec.unique_keys.iter().map(|k| ("matched".to_string(), k.clone())).collect();
                if cfg.test_mode == TestMode::Both {
                    keys.extend(spec.holdout_keys.iter().map(|k| ("unseen".to_string(), k.clone())));
                }
                keys.shuffle(&mut rng);
                test.extend(keys.into_iter().map(|(g, k)| (g, k, enc)));
            }
        }
    }
    Plan { train_keys, test, restart }
}

fn environments(cfg: &ExperimentConfig, spec: &DomainSpec) -> (HiddenCSP, HiddenCSP) {
    if cfg.experiment == ExperimentId::Compositional {
        (HiddenCSP::tier_composed(spec.clone(), cfg.train_salt), HiddenCSP::tier_composed(spec.clone(), cfg.test_salt))
    } else {
        (HiddenCSP::new(spec.clone(), cfg.train_salt), HiddenCSP::new(spec.clone(), cfg.test_salt))
    }
}

pub fn agent_config(cfg: &ExperimentConfig, domain: DomainName, compass_outer: bool) -> AgentConfig {
    let compositional = cfg.experiment == ExperimentId::Compositional;
    AgentConfig {
        max_retries: cfg.retries_for(domain),
        compositional,
        atomic_storage: compositional,
        test_mode: cfg.test_mode,
        compass_outer,
        prompt_baking: cfg.prompt_baking,
        ..AgentConfig::default()
    }
}

/// Simulates a process restart: rules and partial progress go through
/// their file formats, the knowledge stores persist as a vector database
/// would, and the agent's generators are re-derived.
pub fn restart(agent: &Agent, spec: &DomainSpec, seed: u64) -> Result<Agent, HarnessError> {
    let rules_text = formats::rules_to_json(&agent.rules);
    let progress_text = formats::progress_to_json(&agent.evo);
    let mut fresh = Agent::new(agent.cfg.clone(), spec, seed ^ 0x5eed_0000_0000_0001);
    fresh.rules = formats::rules_from_json(&rules_text, &agent.cfg.invalidation)?;
    formats::progress_from_json(&progress_text, &mut fresh.evo)?;
    fresh.static_kb = agent.static_kb.clone();
    fresh.dynamic = agent.dynamic.clone();
    fresh.episodic = agent.episodic.clone();
    fresh.precepts = agent.precepts.clone();
    fresh.engine.static_reliability = agent.engine.static_reliability;
    fresh.engine.dynamic_reliability = agent.engine.dynamic_reliability;
    Ok(fresh)
}

fn precept_seed(
    cfg: &ExperimentConfig,
    spec: &DomainSpec,
    seed: u64,
    arm: &Arm,
    sk: SkMode,
    compass_outer: bool,
) -> Result<SeedResult, HarnessError> {
    let (train_env, test_env) = environments(cfg, spec);
    let p = plan(cfg, spec, seed);
    let mut agent = Agent::new(agent_config(cfg, spec.name, compass_outer), spec, seed);
    if sk == SkMode::Adversarial {
        agent.static_kb = train_env.generate_adversarial_sk();
    }
    let mut reasoner = SimulatedPreceptReasoner::deterministic();
    let mut events: Vec<RuleEvent> = Vec::new();
    let mut probes = 0;
    let mut order_rng = harness_rng(seed, 12);
    for pass in 0..cfg.beta {
        let mut keys = p.train_keys.clone();
        keys.shuffle(&mut order_rng);
        for key in &keys {
            let r = agent.run_task(&train_env, &train_env.task(key, pass), &mut reasoner);
            probes += r.probes;
            events.extend(r.rule_events);
        }
    }
    if p.restart {
        let trace = agent.take_trace();
        let log: Vec<EvolutionRecord> = agent.compass().map(|c| c.log().to_vec()).unwrap_or_default();
        let audit = agent.engine.take_audit();
        agent = restart(&agent, spec, seed)?;
        // Keep the pre-restart history in the outputs.
        let mut r = finish_precept(cfg, spec, seed, arm, agent, &test_env, &p, reasoner, events, probes)?;
        let mut t = trace;
        t.extend(r.trace);
        r.trace = t;
        let mut l = log;
        l.extend(r.evolution_log);
        r.evolution_log = l;
        let mut a = audit;
        a.extend(r.audit);
        r.audit = a;
        return Ok(r);
    }
    finish_precept(cfg, spec, seed, arm, agent, &test_env, &p, reasoner, events, probes)
}

#[allow(clippy::too_many_arguments)]
fn finish_precept(
    cfg: &ExperimentConfig,
    spec: &DomainSpec,
    seed: u64,
    arm: &Arm,
    mut agent: Agent,
    test_env: &HiddenCSP,
    p: &Plan,
    mut reasoner: SimulatedPreceptReasoner,
    mut events: Vec<RuleEvent>,
    mut probes: u32,
) -> Result<SeedResult, HarnessError> {
    let mut stale: Vec<StaleRule> = Vec::new();
    for r in agent.rules.rules() {
        if test_env.knows(&r.key) && test_env.solution_for(&r.key).ok() != Some(r.solution.as_str()) {
            stale.push(StaleRule {
                key: r.key.as_str().to_string(),
                stale_solution: r.solution.clone(),
                removed_at: None,
                invalidated_at: None,
            });
        }
    }
    let mut total = Tally::default();
    let mut groups: BTreeMap<String, Tally> = BTreeMap::new();
    let mut fast = 0;
    let curves = matches!(
        cfg.experiment,
        ExperimentId::ContinuousLearning | ExperimentId::Persistence | ExperimentId::Drift
    ) || cfg.test_encounters > 1;
    for (group, key, enc) in &p.test {
        let served = agent.rules.lookup_exact(key).map(|r| r.solution.clone());
        let r: EpisodeResult = agent.run_task(test_env, &test_env.task(key, *enc), &mut reasoner);
        if served.is_some() && r.attempts.first() == served.as_ref() {
            fast += 1;
        }
        total.add(r.success, r.first_try, r.steps);
        groups.entry(group.clone()).or_default().add(r.success, r.first_try, r.steps);
        if curves {
            groups.entry(format!("enc{enc}")).or_default().add(r.success, r.first_try, r.steps);
        }
        probes += r.probes;
        for s in stale.iter_mut().filter(|s| s.key == key.as_str()) {
            let invalidated = r.rule_events.iter().any(|e| matches!(e, RuleEvent::Invalidated { .. }));
            if invalidated && s.invalidated_at.is_none() {
                s.invalidated_at = Some(*enc);
            }
            let still = agent.rules.lookup_exact(key).is_some_and(|x| x.solution == s.stale_solution);
            if !still && s.removed_at.is_none() {
                s.removed_at = Some(*enc);
            }
        }
        events.extend(r.rule_events);
    }
    let conflicts = events.iter().filter(|e| matches!(e, RuleEvent::ConflictResolved { .. })).count() as u64;
    let static_wins = events
        .iter()
        .filter(|e| matches!(e, RuleEvent::ConflictResolved { winner: Winner::Static, .. }))
        .count() as u64;
    let invalidations = events.iter().filter(|e| matches!(e, RuleEvent::Invalidated { .. })).count() as u32;
    let evolution_log: Vec<EvolutionRecord> = agent.compass().map(|c| c.log().to_vec()).unwrap_or_default();
    Ok(SeedResult {
        domain: spec.name,
        arm: arm.name.clone(),
        seed,
        test: total.metrics(),
        groups: groups.into_iter().map(|(k, v)| (k, v.metrics())).collect(),
        conflicts,
        static_wins,
        static_posterior: agent.engine.static_reliability.mean(),
        dynamic_posterior: agent.engine.dynamic_reliability.mean(),
        invalidations,
        probes,
        evolutions: evolution_log.iter().filter(|r| r.child_id.is_some()).count(),
        stale_rules: stale,
        matched_fast_path: fast,
        trace: agent.take_trace(),
        evolution_log,
        audit: agent.engine.take_audit(),
    })
}

fn verbal_seed(cfg: &ExperimentConfig, spec: &DomainSpec, seed: u64, arm: &Arm) -> Result<SeedResult, HarnessError> {
    let (train_env, test_env) = environments(cfg, spec);
    let p = plan(cfg, spec, seed);
    let mut agent = VerbalAgent::new(cfg.verbal, cfg.retries_for(spec.name), seed)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut order_rng = harness_rng(seed, 12);
    for pass in 0..cfg.beta {
        let mut keys = p.train_keys.clone();
        keys.shuffle(&mut order_rng);
        for key in &keys {
            agent.run_task(&train_env, &train_env.task(key, pass));
        }
    }
    let mut total = Tally::default();
    let mut groups: BTreeMap<String, Tally> = BTreeMap::new();
    for (group, key, enc) in &p.test {
        let r = agent.run_task(&test_env, &test_env.task(key, *enc));
        total.add(r.success, r.first_try, r.steps);
        groups.entry(group.clone()).or_default().add(r.success, r.first_try, r.steps);
        if cfg.test_encounters > 1 {
            groups.entry(format!("enc{enc}")).or_default().add(r.success, r.first_try, r.steps);
        }
    }
    Ok(SeedResult {
        domain: spec.name,
        arm: arm.name.clone(),
        seed,
        test: total.metrics(),
        groups: groups.into_iter().map(|(k, v)| (k, v.metrics())).collect(),
        conflicts: 0,
        static_wins: 0,
        static_posterior: f64::NAN,
        dynamic_posterior: f64::NAN,
        invalidations: 0,
        probes: 0,
        evolutions: 0,
        stale_rules: Vec::new(),
        matched_fast_path: 0,
        trace: Vec::new(),
        evolution_log: Vec::new(),
        audit: Vec::new(),
    })
}

pub fn run_seed(cfg: &ExperimentConfig, spec: &DomainSpec, seed: u64, arm: &Arm) -> Result<SeedResult, HarnessError> {
    match arm.kind {
        ArmKind::Precept { sk, compass_outer } => precept_seed(cfg, spec, seed, arm, sk, compass_outer),
        ArmKind::Verbal => verbal_seed(cfg, spec, seed, arm),
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultSet, HarnessError> {
    cfg.validate()?;
    let arms = arms(cfg);
    let mut seeds = Vec::new();
    let mut domains = Vec::new();
    for &d in &cfg.domains {
        let spec = make_domain_with(d, cfg.n_conditions).map_err(|e| HarnessError::Config(e.to_string()))?;
        domains.push(DomainInfo {
            domain: d,
            e: spec.e(),
            options: spec.options.len(),
            valid_options: spec.valid_options.len(),
            changed_fraction: drift_changed_fraction(&spec, cfg.train_salt, cfg.test_salt),
        });
        for arm in &arms {
            let spec = &spec;
            let per_seed: Vec<Result<SeedResult, HarnessError>> = std::thread::scope(|s| {
                let handles: Vec<_> =
                    cfg.seeds.iter().map(|&seed| s.spawn(move || run_seed(cfg, spec, seed, arm))).collect();
                handles.into_iter().map(|h| h.join().expect("seed thread panicked")).collect()
            });
            for r in per_seed {
                seeds.push(r?);
            }
        }
    }
    Ok(ResultSet { config: cfg.clone(), arms: arms.iter().map(|a| a.name.clone()).collect(), domains, seeds })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(exp: ExperimentId) -> ExperimentConfig {
        let mut c = ExperimentConfig::preset(exp);
        c.seeds = vec![0, 1];
        c.domains = vec![DomainName::Logistics];
        c
    }

    #[test]
    fn ids_and_aliases() {
        for id in ExperimentId::ALL {
            assert_eq!(ExperimentId::resolve(&id.number().to_string(), true).unwrap(), id);
            assert_eq!(ExperimentId::resolve(id.slug(), true).unwrap(), id);
        }
        assert_eq!(ExperimentId::resolve("run_exp6_compositional_generalization.py", true).unwrap(), ExperimentId::Compositional);
        assert_eq!(ExperimentId::resolve("exp2_static_knowledge_ablation", true).unwrap(), ExperimentId::StaticKnowledge);
        assert_eq!(ExperimentId::resolve("run_exp7_rule_drift", false).unwrap(), ExperimentId::Persistence);
        assert_eq!(ExperimentId::resolve("run_exp7_rule_drift", true).unwrap(), ExperimentId::Drift);
        assert_eq!(ExperimentId::resolve("exp-4", true).unwrap(), ExperimentId::ContinuousLearning);
        assert!(ExperimentId::resolve("10", true).is_err());
        assert!(ExperimentId::resolve("nope", true).is_err());
    }

    #[test]
    fn salt_invariants() {
        let mut c = small(ExperimentId::Persistence);
        c.test_salt = 1;
        assert!(matches!(c.validate(), Err(HarnessError::Config(_))));
        let mut c = small(ExperimentId::Drift);
        c.test_salt = 0;
        assert!(matches!(run_experiment(&c), Err(HarnessError::Config(_))));
    }

    #[test]
    fn empty_seeds_rejected() {
        let mut c = small(ExperimentId::TrainingSize);
        c.seeds.clear();
        assert!(c.validate().is_err());
    }

    #[test]
    fn continuous_learning_budget() {
        let c = ExperimentConfig::preset(ExperimentId::ContinuousLearning);
        assert_eq!(c.retries_for(DomainName::Logistics), 2);
        assert_eq!(c.retries_for(DomainName::Integration), 4);
        assert_eq!(ExperimentConfig::preset(ExperimentId::Drift).retries_for(DomainName::Logistics), 4);
    }

    #[test]
    fn combinations_count() {
        let spec = precept_core::envs::make_domain(DomainName::Logistics);
        assert_eq!(combinations(&spec, 2).len(), 28);
        assert_eq!(combinations(&spec, 3).len(), 56);
    }

    #[test]
    fn every_experiment_runs() {
        for id in ExperimentId::ALL {
            let mut c = small(id);
            if id == ExperimentId::CompassMatched || id == ExperimentId::CompassOod {
                c.domains = vec![DomainName::Integration];
            }
            let r = run_experiment(&c).unwrap();
            assert_eq!(r.seeds.len(), 2 * c.domains.len() * 2, "{id}");
            for s in &r.seeds {
                assert!(s.test.episodes > 0);
                assert!((0.0..=1.0).contains(&s.test.p1) && s.test.p1 <= s.test.pt);
            }
        }
    }

    #[test]
    fn seeds_are_independent_of_each_other() {
        let mut a = small(ExperimentId::Drift);
        a.seeds = vec![3, 5];
        let mut b = a.clone();
        b.seeds = vec![5];
        let ra = run_experiment(&a).unwrap();
        let rb = run_experiment(&b).unwrap();
        let pick = |r: &ResultSet| {
            r.seeds.iter().find(|s| s.seed == 5 && s.arm == "precept").map(|s| (s.test, s.groups.clone())).unwrap()
        };
        assert_eq!(pick(&ra), pick(&rb));
    }
}
