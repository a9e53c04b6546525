//! The seven-phase execution loop, pluggable reasoners and the simulated
//! verbal-memory baseline.
//!
//! The verbal baseline is a theory-validation instrument with the
//! per-condition recall model of the bounds in `theory`. It is not a
//! re-implementation of any published reflection or experience agent.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compass::{
    append_rules, hifreq_evaluate_action, Action, CompassConfig, CompassLoop, Evaluator, RunMetrics, TemplateMutator,
    TrajectorySummary, TriggerEvent,
};
use crate::composition::{compose, OutcomeKind};
use crate::condition_keys::{ConditionKey, ConditionToken};
use crate::conflict::{ConflictEngine, EnsembleConfig, Winner};
use crate::envs::{parse_task, DomainSpec, HiddenCSP, TaskInstance};
use crate::evo_memory::{classify_error, ConstraintClass, EvoMemory, PruningMode};
use crate::retrieval::{
    get_rule_hybrid, retrieve_atomic_precepts, retrieve_with_dual_mode, DualModeConfig, DualModeStores,
    HashEmbedder, KnowledgeRecord, Payload, PreceptStore, RevisionConflictCheck, Source, Thresholds, TierUsed,
};
use crate::rule_store::{InvalidationConfig, InvalidationOutcome, RuleStore};
use crate::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestMode {
    Matched,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub max_retries: u32,
    pub pruning: PruningMode,
    pub compositional: bool,
    pub atomic_storage: bool,
    pub probing: bool,
    pub test_mode: TestMode,
    pub hybrid_retrieval: bool,
    pub dual_mode: bool,
    pub compass_outer: bool,
    /// Whether current rules are appended to the reasoner prompt.
    pub prompt_baking: bool,
    pub invalidation: InvalidationConfig,
    pub thresholds: Thresholds,
    pub dual: DualModeConfig,
    pub ensemble: EnsembleConfig,
    pub compass: CompassConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            max_retries: 4,
            pruning: PruningMode::default(),
            compositional: false,
            atomic_storage: false,
            probing: false,
            test_mode: TestMode::Matched,
            hybrid_retrieval: true,
            dual_mode: true,
            compass_outer: true,
            prompt_baking: true,
            invalidation: InvalidationConfig::default(),
            thresholds: Thresholds::default(),
            dual: DualModeConfig::default(),
            ensemble: EnsembleConfig::default(),
            compass: CompassConfig::default(),
        }
    }
}

pub struct ReasonerInput<'a> {
    pub task: &'a TaskInstance,
    pub key: &'a ConditionKey,
    pub hint: Option<&'a str>,
    pub remaining: &'a [&'a str],
    pub prompt: &'a str,
    pub attempt: u32,
}

/// Proposals are always re-validated by the agent before execution.
pub trait Reasoner {
    /// `None` signals that the reasoner considers the space exhausted.
    fn propose(&mut self, input: &ReasonerInput<'_>, rng: &mut SeededRng) -> Option<String>;
    /// A fresh copy for isolated evaluation rollouts.
    fn fork(&self) -> Box<dyn Reasoner>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exploration {
    /// Environment option order; fully deterministic.
    OptionOrder,
    /// Uniform over the remaining options from the seeded generator.
    Uniform,
}

pub fn simulated_precept_reasoner(input: &ReasonerInput<'_>, exploration: Exploration, rng: &mut SeededRng) -> Option<String> {
    if let Some(h) = input.hint {
        if input.remaining.contains(&h) {
            return Some(h.to_string());
        }
    }
    match exploration {
        Exploration::OptionOrder => input.remaining.first().map(|s| s.to_string()),
        Exploration::Uniform => input.remaining.choose(rng).map(|s| s.to_string()),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimulatedPreceptReasoner {
    pub exploration: Exploration,
}

impl SimulatedPreceptReasoner {
    pub fn deterministic() -> Self {
        Self { exploration: Exploration::OptionOrder }
    }

    pub fn uniform() -> Self {
        Self { exploration: Exploration::Uniform }
    }
}

impl Reasoner for SimulatedPreceptReasoner {
    fn propose(&mut self, input: &ReasonerInput<'_>, rng: &mut SeededRng) -> Option<String> {
        simulated_precept_reasoner(input, self.exploration, rng)
    }

    fn fork(&self) -> Box<dyn Reasoner> {
        Box::new(*self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum RuleEvent {
    Learned { key: String, solution: String },
    Invalidated { key: String, solution: String },
    ConflictResolved { static_id: String, dynamic_id: String, winner: Winner },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub key: ConditionKey,
    pub success: bool,
    pub first_try: bool,
    pub steps: u32,
    pub attempts: Vec<String>,
    pub rule_events: Vec<RuleEvent>,
    pub probes: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Parse,
    Gate,
    Retrieve,
    Derive,
    Execute,
    Learn,
    Update,
    Probe,
}

/// One line of the episode trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub episode: u64,
    pub phase: Phase,
    pub key: String,
    pub action: String,
    pub outcome: String,
    pub rule_events: Vec<RuleEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeEvidence {
    pub key: ConditionKey,
    pub option: String,
    pub class: ConstraintClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("invalid parameter: {0}")]
    BadParams(&'static str),
}

/// PRECEPT agent state for one seed.
#[derive(Debug, Clone)]
pub struct Agent {
    pub cfg: AgentConfig,
    pub rules: RuleStore,
    pub evo: EvoMemory,
    pub precepts: PreceptStore,
    pub static_kb: Vec<KnowledgeRecord>,
    pub dynamic: Vec<KnowledgeRecord>,
    pub episodic: Vec<KnowledgeRecord>,
    pub engine: ConflictEngine,
    compass: Option<CompassLoop>,
    domain: String,
    rng: SeededRng,
    embedder: HashEmbedder,
    episodes: u64,
    trace: Vec<TraceRecord>,
    probes: Vec<ProbeEvidence>,
    seen_tasks: Vec<TaskInstance>,
    prompt_override: Option<String>,
    base_prompt: String,
}

fn stream(seed: u64, lane: u64) -> SeededRng {
    let mut r = SeededRng::seed_from_u64(seed);
    r.set_stream(lane);
    r
}

impl Agent {
    pub fn new(cfg: AgentConfig, spec: &DomainSpec, seed: u64) -> Self {
        let base_prompt = format!("Solve {} tasks. Choose exactly one option.", spec.name);
        let compass = cfg
            .compass_outer
            .then(|| CompassLoop::new(&base_prompt, cfg.compass.clone(), stream(seed, 2)));
        Self {
            rules: RuleStore::new(),
            evo: EvoMemory::new(),
            precepts: PreceptStore::new(spec.tier_table()),
            static_kb: Vec::new(),
            dynamic: Vec::new(),
            episodic: Vec::new(),
            engine: ConflictEngine::new(cfg.ensemble, stream(seed, 1)),
            compass,
            domain: spec.name.to_string(),
            rng: stream(seed, 0),
            embedder: HashEmbedder::default(),
            episodes: 0,
            trace: Vec::new(),
            probes: Vec::new(),
            seen_tasks: Vec::new(),
            prompt_override: None,
            base_prompt,
            cfg,
        }
    }

    pub fn with_static_knowledge(mut self, records: Vec<KnowledgeRecord>) -> Self {
        self.static_kb = records;
        self
    }

    pub fn compass(&self) -> Option<&CompassLoop> {
        self.compass.as_ref()
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        core::mem::take(&mut self.trace)
    }

    pub fn probe_log(&self) -> &[ProbeEvidence] {
        &self.probes
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    /// The prompt the reasoner sees: evolved (or base) plus current rules.
    pub fn current_prompt(&self) -> String {
        let bake = self.cfg.prompt_baking;
        if let Some(p) = &self.prompt_override {
            let mut out = p.clone();
            if bake {
                append_rules(&mut out, &self.rules);
            }
            return out;
        }
        match &self.compass {
            Some(c) => c.get_evolved_prompt(&self.rules, bake),
            None => {
                let mut out = self.base_prompt.clone();
                if bake {
                    append_rules(&mut out, &self.rules);
                }
                out
            }
        }
    }

    fn log(&mut self, episode: u64, phase: Phase, key: &ConditionKey, action: &str, outcome: &str, ev: &[RuleEvent]) {
        self.trace.push(TraceRecord {
            episode,
            phase,
            key: key.as_str().to_string(),
            action: action.to_string(),
            outcome: outcome.to_string(),
            rule_events: ev.to_vec(),
        });
    }

    /// A rule's solution failed: count it against the rule; on
    /// invalidation, drop the key's stale failure history and keep only
    /// the failure that just happened.
    fn rule_failed(&mut self, key: &ConditionKey, solution: &str, class: ConstraintClass, events: &mut Vec<RuleEvent>) {
        let outcome = self.rules.record_failure(key, &self.cfg.invalidation).unwrap_or_else(|e| e.outcome);
        if outcome == InvalidationOutcome::Invalidated {
            self.evo.forget_key(key);
            events.push(RuleEvent::Invalidated { key: key.as_str().to_string(), solution: solution.to_string() });
        }
        self.evo.record_failed_option(key, solution, class);
    }

    fn observe_records(&mut self, key: &ConditionKey, option: &str, success: bool) {
        for r in self.static_kb.iter_mut().chain(self.dynamic.iter_mut()).chain(self.episodic.iter_mut()) {
            if r.key().as_ref() == Some(key) && r.recommendation.as_deref() == Some(option) {
                if success {
                    r.observations.confirmations += 1;
                } else {
                    r.observations.failures += 1;
                }
            }
        }
    }

    /// Reveals the class of one failed option tried this episode that has
    /// not been probed yet. No evidence when nothing has failed.
    pub fn execute_probe(&mut self, env: &HiddenCSP, key: &ConditionKey, tried: &[String]) -> Option<ProbeEvidence> {
        for opt in tried {
            if self.probes.iter().any(|p| &p.key == key && &p.option == opt) {
                continue;
            }
            let Ok(Some(class)) = env.probe(key, opt) else { continue };
            self.evo.record_failed_option(key, opt, class);
            let ev = ProbeEvidence { key: key.clone(), option: opt.clone(), class };
            self.probes.push(ev.clone());
            return Some(ev);
        }
        None
    }

    fn context_hint(&self, key: &ConditionKey, items: &[crate::retrieval::ContextItem]) -> Option<String> {
        // Only records about this exact scenario that have never failed and
        // whose option is still allowed count as hints.
        items.iter().filter(|i| !i.demoted).find_map(|i| match &i.payload {
            Payload::Rule(r) if &r.key == key => Some(r.solution.clone()),
            Payload::Record(r)
                if r.key().as_ref() == Some(key)
                    && r.observations.failures == 0
                    && r.recommendation.as_deref().is_some_and(|o| !self.evo.is_forbidden(key, o, &self.cfg.pruning)) =>
            {
                r.recommendation.clone()
            }
            _ => None,
        })
    }

    pub fn run_task(&mut self, env: &HiddenCSP, task: &TaskInstance, reasoner: &mut dyn Reasoner) -> EpisodeResult {
        let ep = self.episodes;
        self.episodes += 1;
        self.engine.now = ep;
        let mut events: Vec<RuleEvent> = Vec::new();
        let mut steps = 0u32;
        let mut probes = 0u32;

        // 1. Parse.
        let key = parse_task(&task.description, &env.spec.vocab).unwrap_or_else(|| task.key.clone());
        self.log(ep, Phase::Parse, &key, "parse", key.as_str(), &[]);
        if !self.seen_tasks.iter().any(|t| t.key == key) {
            self.seen_tasks.push(task.clone());
        }

        // 2. Gate the exact rule before trusting it.
        let mut rule_sol = self.rules.lookup_exact(&key).map(|r| r.solution.clone());
        let gate = hifreq_evaluate_action(&self.evo, &self.rules, &key, rule_sol.as_deref(), &self.cfg.pruning);
        if gate == Action::Block {
            let sol = rule_sol.take().expect("block implies a proposal");
            let class = self
                .evo
                .failures_for(&key)
                .into_iter()
                .find(|(o, _)| *o == sol)
                .map_or(ConstraintClass::Hard, |(_, c)| c);
            let before = events.len();
            self.rule_failed(&key, &sol, class, &mut events);
            let new = events[before..].to_vec();
            self.log(ep, Phase::Gate, &key, &sol, "block", &new);
        } else {
            let g = format!("{gate:?}").to_lowercase();
            self.log(ep, Phase::Gate, &key, rule_sol.as_deref().unwrap_or("-"), &g, &[]);
        }
        if gate == Action::Pivot && self.cfg.probing {
            let tried: Vec<String> = self.evo.failures_for(&key).into_iter().map(|(o, _)| o).collect();
            if self.execute_probe(env, &key, &tried).is_some() {
                probes += 1;
            }
        }

        // 3. Retrieval (one step).
        steps += 1;
        let mut hint: Option<String> = None;
        let mut source = "none";
        if self.cfg.dual_mode {
            let stores = DualModeStores {
                static_kb: &self.static_kb,
                dynamic: &self.dynamic,
                episodic: &self.episodic,
                rules: &self.rules,
            };
            let merged =
                retrieve_with_dual_mode(&key, &task.description, &stores, &self.embedder, &self.cfg.dual, &mut self.engine);
            for c in &merged.conflicts {
                events.push(RuleEvent::ConflictResolved {
                    static_id: c.static_id.clone(),
                    dynamic_id: c.dynamic_id.clone(),
                    winner: c.winner,
                });
            }
            if rule_sol.is_none() {
                if let Some(h) = self.context_hint(&key, &merged.items) {
                    hint = Some(h);
                    source = "context";
                }
            }
        }
        if rule_sol.is_none() && hint.is_none() && self.cfg.compositional {
            let atoms = retrieve_atomic_precepts(&key, &self.precepts, &RevisionConflictCheck);
            let out = compose(&atoms);
            if out.kind != OutcomeKind::None {
                hint = out.solution;
                source = if out.kind == OutcomeKind::Direct { "compose_direct" } else { "compose_synth" };
            }
        }
        if rule_sol.is_none() && hint.is_none() && self.cfg.hybrid_retrieval {
            let r = get_rule_hybrid(&key, &self.rules, &self.dynamic, &self.embedder, &self.cfg.thresholds);
            if r.tier_used != TierUsed::None && r.tier_used != TierUsed::Exact {
                hint = r.payload.as_ref().and_then(|p| p.solution()).map(str::to_string);
                source = if r.tier_used == TierUsed::Vector { "vector" } else { "jaccard" };
            }
        }
        let retrieved = events.clone();
        self.log(ep, Phase::Retrieve, &key, source, hint.as_deref().unwrap_or("-"), &retrieved);

        // 4-5. Derive and execute, retrying over the remaining options.
        let prompt = self.current_prompt();
        let mut attempts: Vec<String> = Vec::new();
        let mut first_failure: Option<ConstraintClass> = None;
        let mut last_failure: Option<(String, ConstraintClass)> = None;
        let mut success = false;
        let mut fast = rule_sol.clone();
        while attempts.len() as u32 <= self.cfg.max_retries {
            let remaining = self.evo.remaining_options(&key, &env.spec.options, &self.cfg.pruning);
            let chosen = if let Some(sol) = fast.take() {
                self.log(ep, Phase::Derive, &key, &sol, "fast_path", &[]);
                Some(sol)
            } else if remaining.is_empty() {
                if self.cfg.pruning.random_fallback {
                    env.spec.options.choose(&mut self.rng).cloned()
                } else {
                    None
                }
            } else {
                let input = ReasonerInput {
                    task,
                    key: &key,
                    hint: hint.as_deref(),
                    remaining: &remaining,
                    prompt: &prompt,
                    attempt: attempts.len() as u32,
                };
                let proposal = reasoner.propose(&input, &mut self.rng);
                // Validation filter: never execute an unknown or forbidden option.
                match proposal {
                    Some(p) if remaining.contains(&p.as_str()) => Some(p),
                    Some(p) => {
                        self.log(ep, Phase::Derive, &key, &p, "rejected", &[]);
                        remaining.first().map(|s| s.to_string())
                    }
                    None if self.cfg.pruning.disable_exhausted_exit => remaining.first().map(|s| s.to_string()),
                    None => None,
                }
            };
            let Some(opt) = chosen else {
                self.log(ep, Phase::Derive, &key, "-", "exhausted", &[]);
                break;
            };
            steps += 1;
            self.evo.tick();
            let out = env.execute(task, &opt).unwrap_or(crate::envs::ExecutionOutcome {
                success: false,
                error_code: Some("INVALID_OPTION".to_string()),
            });
            attempts.push(opt.clone());
            if out.success {
                self.log(ep, Phase::Execute, &key, &opt, "success", &[]);
                success = true;
                break;
            }
            let code = out.error_code.unwrap_or_default();
            let class = classify_error(&code, &env.spec.error_keywords());
            let mut ev = Vec::new();
            if rule_sol.as_deref() == Some(opt.as_str()) {
                self.rule_failed(&key, &opt, class, &mut ev);
                rule_sol = None;
            } else {
                self.evo.record_failed_option(&key, &opt, class);
            }
            self.observe_records(&key, &opt, false);
            if hint.as_deref() == Some(opt.as_str()) {
                hint = None;
            }
            first_failure.get_or_insert(class);
            last_failure = Some((opt.clone(), class));
            self.log(ep, Phase::Execute, &key, &opt, &code, &ev);
            events.extend(ev);
        }

        // 6. Learn from the outcome.
        if success {
            let opt = attempts.last().expect("success has an attempt").clone();
            let _ = self.rules.record_success(&key, &self.cfg.invalidation);
            let known = self.rules.lookup_exact(&key).map(|r| r.solution == opt).unwrap_or(false);
            let mut ev = Vec::new();
            if !known {
                let _ = self.rules.learn(key.clone(), &opt);
                ev.push(RuleEvent::Learned { key: key.as_str().to_string(), solution: opt.clone() });
            }
            self.observe_records(&key, &opt, true);
            self.log(ep, Phase::Learn, &key, &opt, if known { "confirmed" } else { "learned" }, &ev);
            events.extend(ev);

            // 7. Knowledge update.
            self.upsert_experience(&key, task, &opt, ep);
            if let Some(class) = first_failure {
                self.evo.record_procedure(&key, class, &opt);
                self.upsert_record(Source::Episodic, &key, &format!("{}: recovered with solution: {opt}", task.description), &opt, ep);
            }
            if self.cfg.atomic_storage {
                self.precepts.learn_from(&key, &opt);
            }
            self.log(ep, Phase::Update, &key, &opt, "stored", &[]);
        } else if self.cfg.probing {
            if self.execute_probe(env, &key, &attempts).is_some() {
                probes += 1;
            }
            self.log(ep, Phase::Probe, &key, "probe", &format!("{probes}"), &[]);
        }
        self.evo.end_episode();

        let result = EpisodeResult {
            key: key.clone(),
            success,
            first_try: success && attempts.len() == 1,
            steps,
            attempts,
            rule_events: events,
            probes,
        };
        self.outer_loop(env, &result, task, last_failure, reasoner);
        result
    }

    fn upsert_experience(&mut self, key: &ConditionKey, task: &TaskInstance, opt: &str, day: u64) {
        let content = format!("{}: the solution is {opt}", task.description);
        self.upsert_record(Source::Dynamic, key, &content, opt, day);
    }

    /// One record per (key, option); repeats refresh the timestamp.
    fn upsert_record(&mut self, source: Source, key: &ConditionKey, content: &str, opt: &str, day: u64) {
        let store = match source {
            Source::Episodic => &mut self.episodic,
            _ => &mut self.dynamic,
        };
        if let Some(r) = store
            .iter_mut()
            .find(|r| r.key().as_ref() == Some(key) && r.recommendation.as_deref() == Some(opt))
        {
            r.timestamp = day;
            return;
        }
        let tag = match source {
            Source::Episodic => "ep",
            _ => "dyn",
        };
        let id = format!("{tag}-{}-{}", key.as_str(), opt);
        let mut rec = KnowledgeRecord::new(&id, source, key.decompose(), content).with_recommendation(opt).at(day);
        rec.observations.confirmations = 1;
        store.push(rec);
    }

    fn outer_loop(
        &mut self,
        env: &HiddenCSP,
        result: &EpisodeResult,
        task: &TaskInstance,
        last_failure: Option<(String, ConstraintClass)>,
        reasoner: &dyn Reasoner,
    ) {
        let Some(mut lp) = self.compass.take() else { return };
        lp.note_task(&self.domain, result.success);
        let trigger = if !result.success {
            Some(TriggerEvent::GoalFailure)
        } else if result.rule_events.iter().any(|e| matches!(e, RuleEvent::Learned { .. })) {
            Some(TriggerEvent::NewRule)
        } else {
            None
        };
        if let Some(event) = trigger {
            let trajectory = TrajectorySummary {
                domain: self.domain.clone(),
                task_text: task.description.clone(),
                last_failure: last_failure.map(|(o, c)| (result.key.clone(), o, c)),
                top_rules: self.rules.rules().into_iter().take(3).map(|r| (r.key.clone(), r.solution.clone())).collect(),
                failed_before: result.attempts.len() > 1 || !result.success,
            };
            let mut evaluator = PipelineEvaluator::new(self, env, reasoner.fork());
            let mut mutator = TemplateMutator::default();
            // Evolution records go to the compass log, never the episode trace.
            lp.evolve_on_trigger(event, &trajectory, &mut mutator, &mut evaluator);
        }
        self.compass = Some(lp);
    }
}

/// Evaluates a prompt by replaying known tasks on an isolated copy of the
/// agent (its stores, memory and generator are cloned, so the live agent
/// is untouched).
pub struct PipelineEvaluator<'a> {
    snapshot: Agent,
    env: &'a HiddenCSP,
    tasks: Vec<TaskInstance>,
    reasoner: Box<dyn Reasoner>,
}

impl<'a> PipelineEvaluator<'a> {
    pub fn new(agent: &Agent, env: &'a HiddenCSP, reasoner: Box<dyn Reasoner>) -> Self {
        let mut snapshot = agent.clone();
        snapshot.compass = None;
        snapshot.trace.clear();
        let tasks = agent.seen_tasks.clone();
        Self { snapshot, env, tasks, reasoner }
    }
}

impl Evaluator for PipelineEvaluator<'_> {
    fn evaluate(&mut self, prompt: &str, rollouts: u32) -> Vec<RunMetrics> {
        let mut copy = self.snapshot.clone();
        copy.prompt_override = Some(prompt.to_string());
        let mut reasoner = self.reasoner.fork();
        (0..rollouts as usize)
            .filter_map(|i| self.tasks.get(i % self.tasks.len().max(1)))
            .map(|t| {
                let r = copy.run_task(self.env, t, reasoner.as_mut());
                RunMetrics { success: r.success, steps: r.steps }
            })
            .collect()
    }

    fn max_retries(&self) -> u32 {
        self.snapshot.cfg.max_retries
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulatedVerbalParams {
    pub p: f64,
    pub p_forget: f64,
    pub prior_bias: f64,
}

impl SimulatedVerbalParams {
    pub fn validate(&self) -> Result<(), AgentError> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(AgentError::BadParams("p must be in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.p_forget) {
            return Err(AgentError::BadParams("p_forget must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.prior_bias) {
            return Err(AgentError::BadParams("prior_bias must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Whole-key associations written on success.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VerbalMemory {
    pub solutions: BTreeMap<ConditionKey, String>,
}

impl VerbalMemory {
    pub fn learn(&mut self, key: &ConditionKey, solution: &str) {
        self.solutions.insert(key.clone(), solution.to_string());
    }

    /// Solutions of every stored key containing `token`.
    fn associations(&self, token: &ConditionToken) -> impl Iterator<Item = &str> {
        let token = token.clone();
        self.solutions.iter().filter(move |(k, _)| k.contains(&token)).map(|(_, s)| s.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchKind {
    Full,
    Partial,
    Miss,
    /// A previously failed option came back (forgetting).
    Forgot,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerbalProposal {
    pub option: String,
    pub kind: MatchKind,
    pub decoy_substituted: bool,
}

/// One proposal of the verbal baseline.
///
/// With |F| failed options, a retry re-proposes one of them (uniformly)
/// with probability min(1, |F|·p_forget). Otherwise each condition token
/// is recalled with probability p: all recalled applies the stored
/// solution, none recalled explores, and a partial recall takes the
/// majority answer among the recalled tokens' associations.
pub fn simulated_verbal_baseline(
    key: &ConditionKey,
    spec: &DomainSpec,
    memory: &VerbalMemory,
    failed: &[String],
    params: &SimulatedVerbalParams,
    rng: &mut SeededRng,
) -> VerbalProposal {
    if !failed.is_empty() && rng.random::<f64>() < (failed.len() as f64 * params.p_forget).min(1.0) {
        let opt = failed.choose(rng).expect("non-empty").clone();
        return VerbalProposal { option: opt, kind: MatchKind::Forgot, decoy_substituted: false };
    }
    let recalled: Vec<&ConditionToken> = key.decompose().iter().filter(|_| rng.random::<f64>() < params.p).collect();
    let (kind, mut choice) = if recalled.len() == key.len() {
        (MatchKind::Full, memory.solutions.get(key).cloned())
    } else if recalled.is_empty() {
        (MatchKind::Miss, None)
    } else {
        let mut votes: BTreeMap<&str, u32> = BTreeMap::new();
        for t in &recalled {
            for s in memory.associations(t) {
                *votes.entry(s).or_insert(0) += 1;
            }
        }
        let top = votes.values().copied().max().unwrap_or(0);
        let leaders: Vec<&str> = votes.iter().filter(|(_, v)| **v == top).map(|(s, _)| *s).collect();
        (MatchKind::Partial, leaders.choose(rng).map(|s| s.to_string()))
    };
    if choice.as_ref().is_some_and(|c| failed.contains(c)) {
        choice = None;
    }
    let mut option = match choice {
        Some(c) => c,
        None => {
            let open: Vec<&String> = spec.options.iter().filter(|o| !failed.contains(o)).collect();
            match open.choose(rng) {
                Some(o) => (*o).clone(),
                None => spec.options.choose(rng).expect("options").clone(),
            }
        }
    };
    let mut decoy_substituted = false;
    if let Some(d) = spec.decoy_for(&option) {
        if rng.random::<f64>() < params.prior_bias {
            option = d.to_string();
            decoy_substituted = true;
        }
    }
    VerbalProposal { option, kind, decoy_substituted }
}

/// Episode runner for the verbal baseline.
#[derive(Debug, Clone)]
pub struct VerbalAgent {
    pub params: SimulatedVerbalParams,
    pub memory: VerbalMemory,
    pub max_retries: u32,
    rng: SeededRng,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerbalEpisode {
    pub success: bool,
    pub first_try: bool,
    pub steps: u32,
    pub wasted_retries: u32,
    pub kinds: Vec<MatchKind>,
}

impl VerbalAgent {
    pub fn new(params: SimulatedVerbalParams, max_retries: u32, seed: u64) -> Result<Self, AgentError> {
        params.validate()?;
        Ok(Self { params, memory: VerbalMemory::default(), max_retries, rng: stream(seed, 7) })
    }

    pub fn run_task(&mut self, env: &HiddenCSP, task: &TaskInstance) -> VerbalEpisode {
        let mut failed: Vec<String> = Vec::new();
        let mut kinds = Vec::new();
        let mut wasted = 0;
        let mut steps = 1;
        let mut attempts = 0;
        while attempts <= self.max_retries {
            let prop = simulated_verbal_baseline(&task.key, &env.spec, &self.memory, &failed, &self.params, &mut self.rng);
            kinds.push(prop.kind);
            attempts += 1;
            steps += 1;
            if failed.contains(&prop.option) {
                wasted += 1;
            }
            let ok = env.execute(task, &prop.option).map(|o| o.success).unwrap_or(false);
            if ok {
                self.memory.learn(&task.key, &prop.option);
                return VerbalEpisode { success: true, first_try: attempts == 1, steps, wasted_retries: wasted, kinds };
            }
            if !failed.contains(&prop.option) {
                failed.push(prop.option);
            }
        }
        VerbalEpisode { success: false, first_try: false, steps, wasted_retries: wasted, kinds }
    }
}

/// Controlled wasted-retry scenario: |F| fixed failed options, `r`
/// retries, each retry counted as wasted when it re-proposes a member of F.
pub fn wasted_retry_trial(f: usize, p_forget: f64, r: u32, rng: &mut SeededRng) -> u32 {
    let mut wasted = 0;
    for _ in 0..r {
        if f > 0 && rng.random::<f64>() < (f as f64 * p_forget).min(1.0) {
            wasted += 1;
        }
    }
    wasted
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_domain, DomainName};
    use alloc::vec;

    fn cfg_plain() -> AgentConfig {
        AgentConfig { compass_outer: false, ..AgentConfig::default() }
    }

    fn train(agent: &mut Agent, env: &HiddenCSP, passes: usize, r: &mut dyn Reasoner) -> Vec<EpisodeResult> {
        let mut out = Vec::new();
        for pass in 0..passes {
            for k in env.spec.unique_keys.clone() {
                out.push(agent.run_task(env, &env.task(&k, pass as u32 + 1), r));
            }
        }
        out
    }

    #[test]
    fn exact_rule_fast_path_is_two_steps() {
        let env = HiddenCSP::new(make_domain(DomainName::Logistics), 0);
        let mut a = Agent::new(cfg_plain(), &env.spec, 1);
        let mut r = SimulatedPreceptReasoner::deterministic();
        train(&mut a, &env, 1, &mut r);
        for k in env.spec.unique_keys.clone() {
            let res = a.run_task(&env, &env.task(&k, 2), &mut r);
            assert!(res.success && res.first_try);
            assert_eq!(res.steps, 2);
        }
    }

    #[test]
    fn successful_episodes_take_at_least_two_steps() {
        let env = HiddenCSP::new(make_domain(DomainName::Booking), 3);
        let mut a = Agent::new(cfg_plain(), &env.spec, 3);
        let mut r = SimulatedPreceptReasoner::uniform();
        for res in train(&mut a, &env, 3, &mut r) {
            assert!(!res.first_try || res.success);
            if res.success {
                assert!(res.steps >= 2);
            }
            assert_eq!(res.steps as usize, 1 + res.attempts.len());
        }
    }

    #[test]
    fn stale_rule_invalidated_and_relearned() {
        let spec = make_domain(DomainName::Logistics);
        let old = HiddenCSP::new(spec.clone(), 0);
        let new = HiddenCSP::new(spec.clone(), 1);
        let mut a = Agent::new(AgentConfig { max_retries: 0, ..cfg_plain() }, &spec, 0);
        let mut r = SimulatedPreceptReasoner::deterministic();
        // max_retries 0 leaves a single attempt per episode.
        for _ in 0..4 {
            train(&mut a, &old, 1, &mut r);
        }
        let k = spec
            .unique_keys
            .iter()
            .find(|k| old.solution_for(k).unwrap() != new.solution_for(k).unwrap())
            .expect("some key changes")
            .clone();
        let stale = old.solution_for(&k).unwrap().to_string();
        assert_eq!(a.rules.lookup_exact(&k).unwrap().solution, stale);
        let e1 = a.run_task(&new, &new.task(&k, 1), &mut r);
        assert!(!e1.success);
        assert_eq!(a.rules.lookup_exact(&k).unwrap().confidence, 0.5);
        let e2 = a.run_task(&new, &new.task(&k, 2), &mut r);
        assert!(e2.rule_events.iter().any(|e| matches!(e, RuleEvent::Invalidated { .. })));
        // Blocked, not re-executed.
        assert!(!e2.attempts.contains(&stale));
        let mut n = 2;
        while a.rules.lookup_exact(&k).is_none() {
            n += 1;
            a.run_task(&new, &new.task(&k, n), &mut r);
            assert!(n < 10);
        }
        assert_eq!(a.rules.lookup_exact(&k).unwrap().solution, new.solution_for(&k).unwrap());
    }

    #[test]
    fn exhausted_options_fire_probe() {
        let spec = make_domain(DomainName::Logistics);
        let env = HiddenCSP::new(spec.clone(), 0);
        let k = spec.unique_keys[0].clone();
        let answer = env.solution_for(&k).unwrap().to_string();
        let mut a = Agent::new(AgentConfig { probing: true, max_retries: 0, ..cfg_plain() }, &spec, 0);
        // Pre-forbid every option except the answer, then forbid the answer
        // through a fake record so nothing remains.
        for o in &spec.options {
            let class = if *o == answer { ConstraintClass::Soft } else { ConstraintClass::Hard };
            a.evo.record_failed_option(&k, o, class);
        }
        a.evo.end_episode();
        let res = a.run_task(&env, &env.task(&k, 1), &mut SimulatedPreceptReasoner::deterministic());
        assert!(!res.success);
        assert!(res.attempts.is_empty());
        // Nothing was tried this episode, but the pivot probe reveals one
        // recorded failure.
        assert_eq!(res.probes, 1);
        assert_eq!(a.probe_log().len(), 1);
    }

    #[test]
    fn probe_semantics() {
        let spec = make_domain(DomainName::Logistics);
        let env = HiddenCSP::new(spec.clone(), 0);
        let k = spec.unique_keys[1].clone();
        let mut a = Agent::new(cfg_plain(), &spec, 0);
        assert_eq!(a.execute_probe(&env, &k, &[]), None);
        let answer = env.solution_for(&k).unwrap();
        let wrong = spec.options.iter().find(|o| *o != answer).unwrap().clone();
        let ev = a.execute_probe(&env, &k, &[wrong.clone()]).unwrap();
        assert!(a.evo.is_forbidden(&k, &wrong, &PruningMode::default()) || ev.class == ConstraintClass::Transient);
        assert_eq!(a.execute_probe(&env, &k, &[wrong]), None);
        assert_eq!(a.probe_log().len(), 1);
    }

    #[test]
    fn reasoner_examples() {
        let env = HiddenCSP::new(make_domain(DomainName::Logistics), 0);
        let k = env.spec.unique_keys[0].clone();
        let t = env.task(&k, 1);
        let remaining = ["hamburg", "rotterdam", "singapore"];
        let mut rng = SeededRng::seed_from_u64(5);
        let input = |hint| ReasonerInput { task: &t, key: &k, hint, remaining: &remaining, prompt: "", attempt: 0 };
        assert_eq!(simulated_precept_reasoner(&input(Some("rotterdam")), Exploration::Uniform, &mut rng).as_deref(), Some("rotterdam"));
        // A forbidden hint is ignored.
        let p = simulated_precept_reasoner(&input(Some("ningbo")), Exploration::Uniform, &mut rng).unwrap();
        assert!(remaining.contains(&p.as_str()));
        let mut counts = [0u32; 3];
        for _ in 0..3000 {
            let p = simulated_precept_reasoner(&input(None), Exploration::Uniform, &mut rng).unwrap();
            counts[remaining.iter().position(|r| *r == p).unwrap()] += 1;
        }
        assert!(counts.iter().all(|c| (900..1100).contains(c)), "{counts:?}");
        let mut a = SeededRng::seed_from_u64(9);
        let mut b = SeededRng::seed_from_u64(9);
        assert_eq!(
            simulated_precept_reasoner(&input(None), Exploration::Uniform, &mut a),
            simulated_precept_reasoner(&input(None), Exploration::Uniform, &mut b)
        );
    }

    #[test]
    fn deterministic_replay() {
        let env = HiddenCSP::new(make_domain(DomainName::Integration), 4);
        let run = || {
            let mut a = Agent::new(AgentConfig::default(), &env.spec, 77)
                .with_static_knowledge(env.generate_adversarial_sk());
            let mut r = SimulatedPreceptReasoner::uniform();
            let res = train(&mut a, &env, 3, &mut r);
            (res, a.take_trace(), a.compass().map(|c| c.log().to_vec()))
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn verbal_limit_case_is_perfect_memory() {
        let spec = make_domain(DomainName::Integration);
        let env = HiddenCSP::new(spec.clone(), 0);
        let params = SimulatedVerbalParams { p: 1.0, p_forget: 0.0, prior_bias: 0.0 };
        let mut v = VerbalAgent::new(params, 20, 1).unwrap();
        for k in &spec.unique_keys {
            let ep = v.run_task(&env, &env.task(k, 1));
            assert!(ep.success);
            assert_eq!(ep.wasted_retries, 0);
        }
        for k in &spec.unique_keys {
            let ep = v.run_task(&env, &env.task(k, 2));
            assert!(ep.first_try);
            assert_eq!(ep.kinds, vec![MatchKind::Full]);
        }
    }

    #[test]
    fn verbal_partial_match_rate() {
        // N = 10 tokens, p = 0.75: partial recall ≈ 1 − p^10 − 0.25^10.
        let spec = make_domain_with_vocab(12);
        let key = spec.unique_keys[0].clone();
        let memory = VerbalMemory::default();
        let params = SimulatedVerbalParams { p: 0.75, p_forget: 0.0, prior_bias: 0.0 };
        let mut rng = SeededRng::seed_from_u64(11);
        let trials = 100_000;
        let partial = (0..trials)
            .filter(|_| simulated_verbal_baseline(&key, &spec, &memory, &[], &params, &mut rng).kind == MatchKind::Partial)
            .count();
        let rate = partial as f64 / trials as f64;
        let expected = 1.0 - libm::pow(0.75, 10.0) - libm::pow(0.25, 10.0);
        assert!((rate - expected).abs() < 0.01, "{rate} vs {expected}");

        let one = make_domain_one_token();
        let k1 = one.unique_keys[0].clone();
        assert!((0..10_000).all(|_| simulated_verbal_baseline(&k1, &one, &memory, &[], &params, &mut rng).kind != MatchKind::Partial));
    }

    fn make_domain_with_vocab(n: usize) -> DomainSpec {
        let mut spec = make_domain(DomainName::Booking);
        spec.unique_keys = crate::envs::generate_keys("t", &spec.vocab, n.min(10), 1, 0, &[]).unwrap();
        spec
    }

    fn make_domain_one_token() -> DomainSpec {
        crate::envs::make_domain_with(DomainName::Logistics, 1).unwrap()
    }

    #[test]
    fn decoy_substitution() {
        let spec = make_domain(DomainName::Integration);
        let env = HiddenCSP::new(spec.clone(), 0);
        let k = spec.unique_keys[0].clone();
        let mut mem = VerbalMemory::default();
        mem.learn(&k, env.solution_for(&k).unwrap());
        let params = SimulatedVerbalParams { p: 1.0, p_forget: 0.0, prior_bias: 1.0 };
        let mut rng = SeededRng::seed_from_u64(0);
        let p = simulated_verbal_baseline(&k, &spec, &mem, &[], &params, &mut rng);
        assert!(p.decoy_substituted);
        assert_eq!(Some(p.option.as_str()), spec.decoy_for(env.solution_for(&k).unwrap()));
    }

    #[test]
    fn wasted_retries_match_expectation() {
        let mut rng = SeededRng::seed_from_u64(3);
        let (f, pf, r) = (3usize, 0.1, 5u32);
        let trials = 40_000;
        let total: u64 = (0..trials).map(|_| wasted_retry_trial(f, pf, r, &mut rng) as u64).sum();
        let mean = total as f64 / trials as f64;
        let expected = f as f64 * pf * r as f64;
        // Binomial(5, 0.3): sd = sqrt(1.05); 4σ band on the mean.
        let sd = libm::sqrt(r as f64 * 0.3 * 0.7 / trials as f64);
        assert!((mean - expected).abs() < 4.0 * sd, "{mean} vs {expected}");
        assert_eq!(wasted_retry_trial(3, 0.0, 5, &mut rng), 0);
    }

    #[test]
    fn bad_params_rejected() {
        let p = SimulatedVerbalParams { p: 0.0, p_forget: 0.0, prior_bias: 0.0 };
        assert!(VerbalAgent::new(p, 4, 0).is_err());
        let p = SimulatedVerbalParams { p: 0.5, p_forget: 1.5, prior_bias: 0.0 };
        assert!(p.validate().is_err());
    }
}
