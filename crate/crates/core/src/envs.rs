//! Hidden constraint-satisfaction benchmark domains.
//!
//! Each domain maps condition keys to one of its valid options through a
//! salted MD5 digest, so solutions cannot be deduced from the condition
//! tokens. Failures return codes from a small fixed pool that carry no hint
//! about the right answer.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::condition_keys::{ConditionKey, ConditionToken, Tier, TierTable};
use crate::evo_memory::{classify_error, ConstraintClass, ErrorKeywords};
use crate::md5::prefix_u32;
use crate::retrieval::{KnowledgeRecord, Source};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainName {
    Logistics,
    Booking,
    Integration,
}

impl DomainName {
    pub const ALL: [DomainName; 3] = [DomainName::Logistics, DomainName::Booking, DomainName::Integration];

    pub fn as_str(self) -> &'static str {
        match self {
            DomainName::Logistics => "logistics",
            DomainName::Booking => "booking",
            DomainName::Integration => "integration",
        }
    }
}

impl fmt::Display for DomainName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DomainName {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, EnvError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "logistics" => Ok(DomainName::Logistics),
            "booking" => Ok(DomainName::Booking),
            "integration" => Ok(DomainName::Integration),
            other => Err(EnvError::UnknownDomain(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("unknown domain `{0}`")]
    UnknownDomain(String),
    #[error("key `{0}` is not part of this domain")]
    UnknownKey(String),
    #[error("option `{0}` is not offered by this domain")]
    UnknownOption(String),
    #[error("cannot build {wanted} distinct keys of {n} conditions from {vocab} tokens")]
    KeySpace { wanted: usize, n: usize, vocab: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: DomainName,
    pub vocab: Vec<ConditionToken>,
    pub unique_keys: Vec<ConditionKey>,
    /// Extra keys never seen in training, for unmatched test modes.
    pub holdout_keys: Vec<ConditionKey>,
    pub options: Vec<String>,
    pub valid_options: Vec<String>,
    pub error_pool: Vec<String>,
    /// `(decoy, genuine)` pairs: base brand names that look right but are
    /// wrong, next to the suffixed option that is actually valid.
    #[serde(default)]
    pub decoys: Vec<(String, String)>,
    /// Domain additions to the standard tier table.
    #[serde(skip)]
    pub tier_extension: Vec<(ConditionToken, Tier)>,
    pub task_verb: String,
}

impl DomainSpec {
    pub fn e(&self) -> usize {
        self.unique_keys.len()
    }

    pub fn n_conditions(&self) -> usize {
        self.unique_keys.first().map_or(0, |k| k.len())
    }

    pub fn tier_table(&self) -> TierTable {
        let mut t = TierTable::standard();
        for (tok, tier) in &self.tier_extension {
            t.insert(tok.clone(), *tier).expect("domain tiers agree with the standard table");
        }
        t
    }

    pub fn error_keywords(&self) -> ErrorKeywords {
        ErrorKeywords::default()
    }

    pub fn decoy_for(&self, genuine: &str) -> Option<&str> {
        self.decoys.iter().find(|(_, g)| g == genuine).map(|(d, _)| d.as_str())
    }

    pub fn is_option(&self, o: &str) -> bool {
        self.options.iter().any(|x| x == o)
    }
}

fn toks(list: &[&str]) -> Vec<ConditionToken> {
    list.iter().map(|t| ConditionToken::new(t).expect("static token")).collect()
}

fn strings(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// Picks `count` distinct keys of `n` tokens. Key i ranks the vocabulary by
/// md5("keygen:<domain>:<i>[#<retry>]:<token>") and takes the `n` lowest.
pub fn generate_keys(
    domain: &str,
    vocab: &[ConditionToken],
    n: usize,
    count: usize,
    start_index: usize,
    avoid: &[ConditionKey],
) -> Result<Vec<ConditionKey>, EnvError> {
    if n == 0 || n > vocab.len() {
        return Err(EnvError::KeySpace { wanted: count, n, vocab: vocab.len() });
    }
    let mut seen: BTreeSet<ConditionKey> = avoid.iter().cloned().collect();
    let mut out = Vec::with_capacity(count);
    for i in start_index..start_index + count {
        let mut retry = 0u32;
        loop {
            if retry > 10_000 {
                return Err(EnvError::KeySpace { wanted: count, n, vocab: vocab.len() });
            }
            let tag = if retry == 0 { format!("{i}") } else { format!("{i}#{retry}") };
            let mut ranked: Vec<(u32, &ConditionToken)> = vocab
                .iter()
                .map(|t| (prefix_u32(format!("keygen:{domain}:{tag}:{t}").as_bytes()), t))
                .collect();
            ranked.sort();
            let key = ConditionKey::from_tokens(ranked.iter().take(n).map(|(_, t)| (*t).clone()).collect())
                .expect("n > 0");
            if seen.insert(key.clone()) {
                out.push(key);
                break;
            }
            retry += 1;
        }
    }
    Ok(out)
}

pub fn make_domain(name: DomainName) -> DomainSpec {
    make_domain_with(name, 5).expect("default key space is large enough")
}

/// Builds a domain whose keys have `n_conditions` tokens each.
pub fn make_domain_with(name: DomainName, n_conditions: usize) -> Result<DomainSpec, EnvError> {
    let (vocab, e, options, valid, pool, decoys, ext, verb): (
        Vec<ConditionToken>,
        usize,
        Vec<String>,
        Vec<String>,
        Vec<String>,
        Vec<(String, String)>,
        Vec<(ConditionToken, Tier)>,
        &str,
    ) = match name {
        DomainName::Logistics => (
            toks(&["ASIA", "EURO", "AMER", "INTL", "FAST", "ECON", "SAFE", "BULK"]),
            4,
            strings(&["ningbo", "hamburg", "rotterdam", "singapore"]),
            strings(&["ningbo", "hamburg", "rotterdam", "singapore"]),
            strings(&[
                "PORT_CLOSED_STRIKE",
                "CUSTOMS_HOLD",
                "BERTH_UNAVAILABLE",
                "ROUTE_CONGESTION",
                "CUSTOMS_DELAY",
                "YARD_BUSY",
            ]),
            Vec::new(),
            alloc::vec![(ConditionToken::new("AMER").unwrap(), Tier::Compliance)],
            "Route the shipment",
        ),
        DomainName::Integration => (
            toks(&["AUTH", "SECURE", "AUDIT", "HIPAA", "EURO", "SPEED", "COST", "BULK", "WEBHOOK", "SYNC"]),
            6,
            strings(&[
                "salesforce",
                "salesforce-backup",
                "hubspot",
                "hubspot-v2",
                "stripe",
                "paypal",
                "twilio",
                "sendgrid",
                "slack",
                "zendesk",
                "shopify",
                "mailchimp",
                "quickbooks",
                "jira",
                "github",
            ]),
            strings(&["salesforce-backup", "hubspot-v2"]),
            strings(&[
                "OAUTH_TOKEN_REJECTED",
                "ENDPOINT_DEPRECATED",
                "SCOPE_DENIED",
                "API_QUOTA_EXCEEDED",
                "UPSTREAM_BUSY",
                "RATE_THROTTLED",
            ]),
            alloc::vec![
                ("salesforce".to_string(), "salesforce-backup".to_string()),
                ("hubspot".to_string(), "hubspot-v2".to_string()),
            ],
            Vec::new(),
            "Connect the accounts",
        ),
        DomainName::Booking => (
            toks(&[
                "CANCEL", "RISK", "INTL", "ASIA", "EURO", "AUDIT", "FAST", "ECON", "BULK", "COST", "REDEYE", "LAYOVER",
                "GROUP",
            ]),
            17,
            (100..120).map(|i| format!("fl-{i}")).collect(),
            strings(&["fl-103", "fl-111", "fl-117"]),
            strings(&[
                "FARE_CLASS_CLOSED",
                "SEAT_UNAVAILABLE",
                "BOOKING_REJECTED",
                "INVENTORY_DELAY",
                "CARRIER_BUSY",
                "WAITLIST_QUEUE",
            ]),
            Vec::new(),
            Vec::new(),
            "Book the itinerary",
        ),
    };
    let unique_keys = generate_keys(name.as_str(), &vocab, n_conditions, e, 0, &[])?;
    // Holdouts are best effort: tiny key spaces (N = 1) may have none left.
    let holdout_keys = generate_keys(name.as_str(), &vocab, n_conditions, e, e, &unique_keys).unwrap_or_default();
    Ok(DomainSpec {
        name,
        vocab,
        unique_keys,
        holdout_keys,
        options,
        valid_options: valid,
        error_pool: pool,
        decoys,
        tier_extension: ext,
        task_verb: verb.to_string(),
    })
}

/// How a key's hidden answer is computed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mapping {
    /// valid_options[md5("<salt>:<key>")[..8] mod |valid|] for listed keys.
    Md5,
    /// Any key over the vocabulary: the answer of its highest-tier token
    /// (itself an Md5 answer of the one-token key). Ties between tokens at
    /// the top tier are settled by the Md5 rule over the tied answers.
    TierComposed(TierTable),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HiddenCSP {
    pub spec: DomainSpec,
    pub salt: u64,
    pub mapping: Mapping,
}

pub fn md5_index(salt: u64, key: &ConditionKey, modulus: usize) -> usize {
    let word = prefix_u32(format!("{salt}:{}", key.as_str()).as_bytes());
    (word as usize) % modulus
}

impl HiddenCSP {
    pub fn new(spec: DomainSpec, salt: u64) -> Self {
        Self { spec, salt, mapping: Mapping::Md5 }
    }

    pub fn tier_composed(spec: DomainSpec, salt: u64) -> Self {
        let tiers = spec.tier_table();
        Self { spec, salt, mapping: Mapping::TierComposed(tiers) }
    }

    pub fn knows(&self, key: &ConditionKey) -> bool {
        match &self.mapping {
            Mapping::Md5 => self.spec.unique_keys.contains(key) || self.spec.holdout_keys.contains(key),
            Mapping::TierComposed(_) => key.decompose().iter().all(|t| self.spec.vocab.contains(t)),
        }
    }

    pub fn solution_for(&self, key: &ConditionKey) -> Result<&str, EnvError> {
        if !self.knows(key) {
            return Err(EnvError::UnknownKey(key.as_str().to_string()));
        }
        let valid = &self.spec.valid_options;
        match &self.mapping {
            Mapping::Md5 => Ok(&valid[md5_index(self.salt, key, valid.len())]),
            Mapping::TierComposed(tiers) => {
                let top = key.decompose().iter().map(|t| tiers.tier_of(t)).max().expect("non-empty key");
                let mut answers: Vec<&str> = key
                    .decompose()
                    .iter()
                    .filter(|t| tiers.tier_of(t) == top)
                    .map(|t| {
                        let atom = ConditionKey::from_tokens(alloc::vec![(*t).clone()]).expect("one token");
                        valid[md5_index(self.salt, &atom, valid.len())].as_str()
                    })
                    .collect();
                answers.sort();
                answers.dedup();
                if answers.len() == 1 {
                    Ok(answers[0])
                } else {
                    Ok(answers[md5_index(self.salt, key, answers.len())])
                }
            }
        }
    }

    pub fn task(&self, key: &ConditionKey, encounter_index: u32) -> TaskInstance {
        let words: Vec<&str> = key.decompose().iter().map(|t| t.as_str()).collect();
        TaskInstance {
            key: key.clone(),
            description: format!("{} with conditions {}", self.spec.task_verb, words.join(" ")),
            encounter_index,
        }
    }

    fn error_code(&self, key: &ConditionKey, chosen: &str) -> &str {
        let pool = &self.spec.error_pool;
        let i = prefix_u32(format!("err:{}|{chosen}", key.as_str()).as_bytes()) as usize % pool.len();
        &pool[i]
    }

    pub fn execute(&self, task: &TaskInstance, chosen: &str) -> Result<ExecutionOutcome, EnvError> {
        if !self.spec.is_option(chosen) {
            return Err(EnvError::UnknownOption(chosen.to_string()));
        }
        let answer = self.solution_for(&task.key)?;
        if answer == chosen {
            Ok(ExecutionOutcome { success: true, error_code: None })
        } else {
            Ok(ExecutionOutcome { success: false, error_code: Some(self.error_code(&task.key, chosen).to_string()) })
        }
    }

    /// Diagnostic probe: the constraint class behind a failing option, or
    /// `None` when the option would succeed.
    pub fn probe(&self, key: &ConditionKey, option: &str) -> Result<Option<ConstraintClass>, EnvError> {
        if !self.spec.is_option(option) {
            return Err(EnvError::UnknownOption(option.to_string()));
        }
        if self.solution_for(key)? == option {
            return Ok(None);
        }
        Ok(Some(classify_error(self.error_code(key, option), &self.spec.error_keywords())))
    }

    /// One static record per training key, each recommending the next valid
    /// option after the real answer (so always in-vocabulary and wrong).
    pub fn generate_adversarial_sk(&self) -> Vec<KnowledgeRecord> {
        let valid = &self.spec.valid_options;
        self.spec
            .unique_keys
            .iter()
            .enumerate()
            .map(|(i, key)| {
                let answer = self.solution_for(key).expect("unique keys are known");
                let pos = valid.iter().position(|v| v == answer).expect("answer is valid");
                let wrong = &valid[(pos + 1) % valid.len()];
                let words: Vec<&str> = key.decompose().iter().map(|t| t.as_str()).collect();
                KnowledgeRecord::new(
                    &format!("sk-{}-{i}", self.spec.name),
                    Source::Static,
                    key.decompose(),
                    &format!(
                        "{} with conditions {}: field guidance says the strategy is {wrong}",
                        self.spec.task_verb,
                        words.join(" ")
                    ),
                )
                .with_recommendation(wrong)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub key: ConditionKey,
    pub description: String,
    pub encounter_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub success: bool,
    pub error_code: Option<String>,
}

/// Fraction of the domain's unique keys whose answer differs between two
/// salts.
pub fn drift_changed_fraction(spec: &DomainSpec, salt_a: u64, salt_b: u64) -> f64 {
    if spec.unique_keys.is_empty() {
        return 0.0;
    }
    let a = HiddenCSP::new(spec.clone(), salt_a);
    let b = HiddenCSP::new(spec.clone(), salt_b);
    let changed = spec
        .unique_keys
        .iter()
        .filter(|k| a.solution_for(k).ok() != b.solution_for(k).ok())
        .count();
    changed as f64 / spec.unique_keys.len() as f64
}

/// Expected changed fraction under a uniform mapping over `v` options.
pub fn expected_drift_fraction(v: usize) -> f64 {
    if v == 0 {
        0.0
    } else {
        1.0 - 1.0 / v as f64
    }
}

/// Rule-based task parser: every description word that is a vocabulary
/// token becomes a condition.
pub fn parse_task(description: &str, vocab: &[ConditionToken]) -> Option<ConditionKey> {
    let found: Vec<ConditionToken> = description
        .split(|c: char| c.is_whitespace() || c == ',' || c == ':' || c == ';')
        .filter_map(|w| ConditionToken::new(w).ok())
        .filter(|t| vocab.contains(t))
        .collect();
    ConditionKey::from_tokens(found).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domain_shapes() {
        let l = make_domain(DomainName::Logistics);
        assert_eq!((l.e(), l.options.len(), l.valid_options.len()), (4, 4, 4));
        let b = make_domain(DomainName::Booking);
        assert_eq!((b.e(), b.options.len()), (17, 20));
        assert!((2..=3).contains(&b.valid_options.len()));
        let i = make_domain(DomainName::Integration);
        assert_eq!((i.e(), i.options.len(), i.valid_options.len()), (6, 15, 2));
        assert!(i.is_option("salesforce") && i.is_option("salesforce-backup"));
        assert_eq!(i.decoy_for("hubspot-v2"), Some("hubspot"));
        for d in [&l, &b, &i] {
            assert_eq!(d.n_conditions(), 5);
            assert_eq!(d.error_pool.len(), 6);
            assert!(d.valid_options.iter().all(|v| d.is_option(v)));
            let all: BTreeSet<_> = d.unique_keys.iter().chain(&d.holdout_keys).collect();
            assert_eq!(all.len(), d.unique_keys.len() + d.holdout_keys.len());
        }
        assert!("LOGISTICS".parse::<DomainName>().is_ok());
        assert!("space".parse::<DomainName>().is_err());
    }

    #[test]
    fn error_pools_are_hard_or_soft() {
        for name in DomainName::ALL {
            let d = make_domain(name);
            for code in &d.error_pool {
                assert_ne!(classify_error(code, &d.error_keywords()), ConstraintClass::Transient, "{code}");
            }
        }
    }

    #[test]
    fn mapping_is_deterministic_and_checked() {
        let csp = HiddenCSP::new(make_domain(DomainName::Logistics), 0);
        for k in &csp.spec.unique_keys {
            assert_eq!(csp.solution_for(k).unwrap(), csp.solution_for(k).unwrap());
        }
        let stranger = ConditionKey::parse("ASIA").unwrap();
        assert!(matches!(csp.solution_for(&stranger), Err(EnvError::UnknownKey(_))));
    }

    #[test]
    fn execute_semantics() {
        let csp = HiddenCSP::new(make_domain(DomainName::Booking), 0);
        let key = csp.spec.unique_keys[3].clone();
        let task = csp.task(&key, 1);
        let answer = csp.solution_for(&key).unwrap().to_string();
        assert_eq!(csp.execute(&task, &answer).unwrap(), ExecutionOutcome { success: true, error_code: None });
        let wrong: Vec<&String> = csp.spec.options.iter().filter(|o| **o != answer).collect();
        let first = csp.execute(&task, wrong[0]).unwrap();
        assert!(!first.success);
        assert_eq!(first, csp.execute(&task, wrong[0]).unwrap());
        assert!(csp.spec.error_pool.contains(first.error_code.as_ref().unwrap()));
        // 19 wrong options over 6 codes: some share a code.
        let codes: BTreeSet<String> =
            wrong.iter().map(|o| csp.execute(&task, o).unwrap().error_code.unwrap()).collect();
        assert!(codes.len() < wrong.len());
        assert!(csp.execute(&task, "teleport").is_err());
    }

    #[test]
    fn task_descriptions_parse_back() {
        for name in DomainName::ALL {
            let csp = HiddenCSP::new(make_domain(name), 0);
            for k in &csp.spec.unique_keys {
                let t = csp.task(k, 1);
                assert_eq!(parse_task(&t.description, &csp.spec.vocab).as_ref(), Some(k));
            }
        }
    }

    #[test]
    fn adversarial_sk_is_wrong_and_stable() {
        for name in DomainName::ALL {
            let csp = HiddenCSP::new(make_domain(name), 0);
            let sk = csp.generate_adversarial_sk();
            assert_eq!(sk.len(), csp.spec.e());
            for (rec, key) in sk.iter().zip(&csp.spec.unique_keys) {
                let rec_opt = rec.recommendation.as_deref().unwrap();
                assert_ne!(rec_opt, csp.solution_for(key).unwrap());
                assert!(csp.spec.is_option(rec_opt));
                assert!(rec.content.contains("strategy is"));
            }
            assert_eq!(sk, csp.generate_adversarial_sk());
        }
    }

    #[test]
    fn drift_fraction_basics() {
        for name in DomainName::ALL {
            let d = make_domain(name);
            assert_eq!(drift_changed_fraction(&d, 3, 3), 0.0);
        }
        assert_eq!(expected_drift_fraction(4), 0.75);
        assert_eq!(expected_drift_fraction(2), 0.5);
    }

    // Averaged over many salt pairs the changed fraction approaches 1 − 1/v.
    #[test]
    fn drift_fraction_matches_uniform_oracle() {
        for name in DomainName::ALL {
            let d = make_domain(name);
            let pairs = 400u64;
            let mean: f64 = (0..pairs).map(|s| drift_changed_fraction(&d, 2 * s, 2 * s + 1)).sum::<f64>() / pairs as f64;
            let expected = expected_drift_fraction(d.valid_options.len());
            // Per-pair variance ≤ 0.25 / E; generous 4σ band.
            let sd = libm::sqrt(expected * (1.0 - expected) / (d.e() as f64 * pairs as f64));
            assert!((mean - expected).abs() < 4.0 * sd, "{name}: {mean} vs {expected}");
        }
    }

    #[test]
    fn majority_vote_trap_exists() {
        for name in DomainName::ALL {
            let csp = HiddenCSP::new(make_domain(name), 0);
            let keys = &csp.spec.unique_keys;
            let mut found = false;
            for i in 0..keys.len() {
                for j in (i + 1)..keys.len() {
                    let shared = keys[i].decompose().iter().filter(|t| keys[j].contains(t)).count();
                    if shared >= 2 && csp.solution_for(&keys[i]).unwrap() != csp.solution_for(&keys[j]).unwrap() {
                        found = true;
                    }
                }
            }
            assert!(found, "{name}");
        }
    }

    // Relabeling valid options moves answers only through the index table.
    #[test]
    fn no_semantic_leakage() {
        let spec = make_domain(DomainName::Logistics);
        let mut renamed = spec.clone();
        renamed.valid_options = spec.valid_options.iter().map(|o| format!("x-{o}")).collect();
        renamed.options = renamed.valid_options.clone();
        let a = HiddenCSP::new(spec.clone(), 0);
        let b = HiddenCSP::new(renamed, 0);
        for k in &spec.unique_keys {
            assert_eq!(format!("x-{}", a.solution_for(k).unwrap()), b.solution_for(k).unwrap());
        }
    }

    #[test]
    fn tier_composed_mapping() {
        let csp = HiddenCSP::tier_composed(make_domain(DomainName::Logistics), 0);
        let atom = |t: &str| csp.solution_for(&ConditionKey::parse(t).unwrap()).unwrap().to_string();
        // SAFE is tier 3, so it decides any composite it appears in.
        let k = ConditionKey::parse("SAFE+FAST+ASIA").unwrap();
        assert_eq!(csp.solution_for(&k).unwrap(), atom("SAFE"));
        let k = ConditionKey::parse("FAST+EURO").unwrap();
        assert_eq!(csp.solution_for(&k).unwrap(), atom("EURO"));
        assert!(csp.solution_for(&ConditionKey::parse("NOPE").unwrap()).is_err());
    }

    #[test]
    fn probe_reveals_class() {
        let csp = HiddenCSP::new(make_domain(DomainName::Logistics), 0);
        let k = csp.spec.unique_keys[0].clone();
        let answer = csp.solution_for(&k).unwrap().to_string();
        assert_eq!(csp.probe(&k, &answer).unwrap(), None);
        let wrong = csp.spec.options.iter().find(|o| **o != answer).unwrap();
        assert!(csp.probe(&k, wrong).unwrap().is_some());
    }

    #[test]
    fn small_condition_counts() {
        let d = make_domain_with(DomainName::Logistics, 1).unwrap();
        assert_eq!(d.n_conditions(), 1);
        assert!(make_domain_with(DomainName::Logistics, 9).is_err());
    }
}
