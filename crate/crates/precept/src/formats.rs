//! On-disk formats: tier tables, rule files, partial progress, static KBs,
//! domain manifests, golden mappings and line-delimited logs.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use precept_core::compass::EvolutionRecord;
use precept_core::conflict::ConflictAudit;
use precept_core::envs::{DomainName, DomainSpec, HiddenCSP};
use precept_core::evo_memory::{EvoMemory, PartialProgress};
use precept_core::retrieval::KnowledgeRecord;
use precept_core::rule_store::{RuleEntry, RulesSnapshot};
use precept_core::agent::TraceRecord;
use precept_core::{ConditionKey, ConditionToken, InvalidationConfig, RuleStore, Tier, TierTable};
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn at_line(line: usize, reason: impl fmt::Display) -> FormatError {
    FormatError::Line { line, reason: reason.to_string() }
}

fn json_err(e: serde_json::Error) -> FormatError {
    at_line(e.line(), e)
}

/// 1-based line of the first occurrence of `needle` at or after `from`.
fn line_of(text: &str, needle: &str, nth: usize) -> usize {
    let mut start = 0;
    let mut found = 0;
    for _ in 0..=nth {
        match text[start..].find(needle) {
            Some(i) => {
                found = start + i;
                start = found + needle.len();
            }
            None => return 0,
        }
    }
    text[..found].matches('\n').count() + 1
}

/// Pretty JSON with a trailing newline. Maps are BTreeMaps everywhere, so
/// the output is canonical.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("in-memory values serialize");
    s.push('\n');
    s
}

// Tier table: `TOKEN<TAB>TIER`, `#` comments and blank lines ignored.

pub fn parse_tier_table(text: &str) -> Result<TierTable, FormatError> {
    let mut table = TierTable::empty();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let Some((tok, tier)) = raw.split_once('\t') else {
            return Err(at_line(line, "expected TOKEN<TAB>TIER"));
        };
        let token = ConditionToken::new(tok.trim()).map_err(|e| at_line(line, e))?;
        let level: u8 = tier.trim().parse().map_err(|_| at_line(line, format!("tier `{}` is not an integer", tier.trim())))?;
        let tier = Tier::try_from(level).map_err(|e| at_line(line, e))?;
        table.insert(token, tier).map_err(|e| at_line(line, e))?;
    }
    Ok(table)
}

pub fn write_tier_table(table: &TierTable) -> String {
    table.iter().map(|(t, tier)| format!("{}\t{}\n", t.as_str(), tier.level())).collect()
}

// Rules file. serde_json keeps the last of duplicated map keys, so the
// top-level map is collected by hand.

struct Entries(Vec<(String, RuleEntry)>);

impl<'de> Deserialize<'de> for Entries {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Entries;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map from condition key to rule")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Entries, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, RuleEntry>()? {
                    out.push((k, v));
                }
                Ok(Entries(out))
            }
        }
        d.deserialize_map(V)
    }
}

pub fn rules_to_json(store: &RuleStore) -> String {
    canonical_json(&store.snapshot())
}

pub fn rules_from_json(text: &str, cfg: &InvalidationConfig) -> Result<RuleStore, FormatError> {
    let Entries(entries) = serde_json::from_str(text).map_err(json_err)?;
    let mut snapshot = RulesSnapshot::new();
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for (k, v) in &entries {
        let quoted = serde_json::to_string(k).expect("string");
        let n = seen.entry(k).or_insert(0);
        if *n > 0 {
            return Err(at_line(line_of(text, &quoted, *n), format!("duplicate rule key `{k}`")));
        }
        *n += 1;
        snapshot.insert(k.clone(), v.clone());
    }
    RuleStore::from_snapshot(&snapshot, cfg).map_err(|e| {
        let key = match &e {
            precept_core::rule_store::LoadError::NonCanonicalKey { key, .. }
            | precept_core::rule_store::LoadError::BadKey { key, .. }
            | precept_core::rule_store::LoadError::Confidence { key, .. }
            | precept_core::rule_store::LoadError::FailureCount { key, .. } => key.clone(),
        };
        at_line(line_of(text, &serde_json::to_string(&key).expect("string"), 0), e)
    })
}

// Partial progress.

pub fn progress_to_json(evo: &EvoMemory) -> String {
    canonical_json(&evo.save_partial_progress())
}

pub fn progress_from_json(text: &str, evo: &mut EvoMemory) -> Result<(), FormatError> {
    let progress: PartialProgress = serde_json::from_str(text).map_err(json_err)?;
    evo.load_partial_progress(&progress).map_err(|e| FormatError::Invalid(e.to_string()))
}

// Static knowledge base: a JSON list of records.

pub fn static_kb_to_json(records: &[KnowledgeRecord]) -> String {
    canonical_json(&records)
}

pub fn static_kb_from_json(text: &str) -> Result<Vec<KnowledgeRecord>, FormatError> {
    let records: Vec<KnowledgeRecord> = serde_json::from_str(text).map_err(json_err)?;
    for r in &records {
        let mut sorted = r.key_codes.clone();
        sorted.sort();
        sorted.dedup();
        if sorted != r.key_codes {
            return Err(FormatError::Invalid(format!("record `{}`: key_codes must be sorted and distinct", r.id)));
        }
    }
    Ok(records)
}

// Domain manifest.

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainManifest {
    pub name: DomainName,
    pub vocab: Vec<ConditionToken>,
    pub unique_keys: Vec<ConditionKey>,
    pub options: Vec<String>,
    pub valid_options: Vec<String>,
    pub error_pool: Vec<String>,
}

impl From<&DomainSpec> for DomainManifest {
    fn from(s: &DomainSpec) -> Self {
        Self {
            name: s.name,
            vocab: s.vocab.clone(),
            unique_keys: s.unique_keys.clone(),
            options: s.options.clone(),
            valid_options: s.valid_options.clone(),
            error_pool: s.error_pool.clone(),
        }
    }
}

pub fn manifest_to_json(spec: &DomainSpec) -> String {
    canonical_json(&DomainManifest::from(spec))
}

pub fn manifest_from_json(text: &str) -> Result<DomainManifest, FormatError> {
    let m: DomainManifest = serde_json::from_str(text).map_err(json_err)?;
    if let Some(v) = m.valid_options.iter().find(|v| !m.options.contains(v)) {
        return Err(FormatError::Invalid(format!("valid option `{v}` is not an option")));
    }
    Ok(m)
}

// Golden mapping: one row per (domain, salt, key).

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GoldenRow {
    pub domain: String,
    pub salt: u64,
    pub key: String,
    pub expected: String,
}

pub fn golden_rows(spec: &DomainSpec, salts: &[u64]) -> Vec<GoldenRow> {
    let mut rows = Vec::new();
    for &salt in salts {
        let env = HiddenCSP::new(spec.clone(), salt);
        for key in spec.unique_keys.iter().chain(&spec.holdout_keys) {
            rows.push(GoldenRow {
                domain: spec.name.as_str().to_string(),
                salt,
                key: key.as_str().to_string(),
                expected: env.solution_for(key).expect("shipped key").to_string(),
            });
        }
    }
    rows
}

pub fn read_goldens(text: &str) -> Result<Vec<GoldenRow>, FormatError> {
    let mut rdr = csv::ReaderBuilder::new().delimiter(b'\t').from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, r) in rdr.deserialize().enumerate() {
        rows.push(r.map_err(|e| at_line(i + 2, e))?);
    }
    Ok(rows)
}

// Line-delimited logs.

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), FormatError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r).map_err(|e| FormatError::Invalid(e.to_string()))?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, FormatError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| at_line(i + 1, e)))
        .collect()
}

pub fn write_trace(path: &Path, trace: &[TraceRecord]) -> Result<(), FormatError> {
    write_jsonl(path, trace)
}

pub fn write_evolution_log(path: &Path, log: &[EvolutionRecord]) -> Result<(), FormatError> {
    write_jsonl(path, log)
}

pub fn write_conflict_audit(path: &Path, audit: &[ConflictAudit]) -> Result<(), FormatError> {
    write_jsonl(path, audit)
}

/// File-backed rule sink: every flush rewrites the canonical rules file.
pub struct JsonRuleSink {
    pub path: std::path::PathBuf,
}

impl precept_core::rule_store::RuleSink for JsonRuleSink {
    fn save(&mut self, snapshot: &RulesSnapshot) -> Result<(), precept_core::rule_store::StorageError> {
        fs::write(&self.path, canonical_json(snapshot))
            .map_err(|e| precept_core::rule_store::StorageError(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use precept_core::envs::make_domain;

    fn key(s: &str) -> ConditionKey {
        ConditionKey::parse(s).unwrap()
    }

    #[test]
    fn tier_table_round_trips_and_defaults() {
        let t = parse_tier_table("# tiers\nSAFE\t3\n\nASIA\t2\n").unwrap();
        assert_eq!(t.tier_of(&ConditionToken::new("SAFE").unwrap()), Tier::Safety);
        assert_eq!(t.tier_of(&ConditionToken::new("ZZZ").unwrap()), Tier::Preferences);
        assert_eq!(parse_tier_table(&write_tier_table(&t)).unwrap(), t);
    }

    #[test]
    fn tier_table_errors_name_the_line() {
        let e = parse_tier_table("SAFE\t3\nASIA 2\n").unwrap_err();
        assert!(e.to_string().starts_with("line 2:"), "{e}");
        let e = parse_tier_table("SAFE\t3\nSAFE\t2\n").unwrap_err();
        assert!(e.to_string().starts_with("line 2:"), "{e}");
        let e = parse_tier_table("SAFE\t9\n").unwrap_err();
        assert!(e.to_string().starts_with("line 1:"), "{e}");
    }

    #[test]
    fn rules_file_is_sorted_and_reloads() {
        let mut s = RuleStore::new();
        s.learn(key("B+A"), "x").unwrap();
        s.learn(key("C"), "y").unwrap();
        let text = rules_to_json(&s);
        assert!(text.find("\"A+B\"").unwrap() < text.find("\"C\"").unwrap());
        let back = rules_from_json(&text, &InvalidationConfig::default()).unwrap();
        assert_eq!(back.snapshot(), s.snapshot());
        assert_eq!(rules_to_json(&back), text);
    }

    #[test]
    fn duplicate_rule_key_is_rejected_with_line() {
        let text = "{\n  \"A\": {\"solution\": \"x\", \"confidence\": 1.0, \"failure_count\": 0},\n  \"A\": {\"solution\": \"y\", \"confidence\": 1.0, \"failure_count\": 0}\n}\n";
        let e = rules_from_json(text, &InvalidationConfig::default()).unwrap_err();
        assert_eq!(e.to_string(), "line 3: duplicate rule key `A`");
    }

    #[test]
    fn malformed_rules_name_the_line() {
        let text = "{\n  \"A\": {\"solution\": \"x\", \"confidence\": 1.0, \"failure_count\": 0},\n  \"B\": {\"solution\": \"y\"\n}\n";
        match rules_from_json(text, &InvalidationConfig::default()).unwrap_err() {
            FormatError::Line { line, .. } => assert!(line >= 3),
            e => panic!("{e}"),
        }
        let text = "{\n  \"B+A\": {\"solution\": \"x\", \"confidence\": 1.0, \"failure_count\": 0}\n}\n";
        let e = rules_from_json(text, &InvalidationConfig::default()).unwrap_err();
        assert!(e.to_string().starts_with("line 2:"), "{e}");
    }

    #[test]
    fn progress_round_trip() {
        use precept_core::evo_memory::ConstraintClass;
        let mut evo = EvoMemory::new();
        evo.record_failed_option(&key("A+B"), "x", ConstraintClass::Hard);
        evo.record_failed_option(&key("C"), "y", ConstraintClass::Soft);
        evo.end_episode();
        let text = progress_to_json(&evo);
        let mut fresh = EvoMemory::new();
        progress_from_json(&text, &mut fresh).unwrap();
        assert_eq!(fresh.failures_for(&key("A+B")), evo.failures_for(&key("A+B")));
        assert!(progress_from_json("{\"A\": {\"failed_options\": [\"x\"], \"classes\": []}}", &mut fresh).is_err());
    }

    #[test]
    fn static_kb_and_manifest_round_trip() {
        let spec = make_domain(DomainName::Logistics);
        let sk = HiddenCSP::new(spec.clone(), 0).generate_adversarial_sk();
        assert_eq!(static_kb_from_json(&static_kb_to_json(&sk)).unwrap(), sk);
        let m = manifest_from_json(&manifest_to_json(&spec)).unwrap();
        assert_eq!(m, DomainManifest::from(&spec));
        let text = manifest_to_json(&spec);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let fields: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(fields, ["error_pool", "name", "options", "unique_keys", "valid_options", "vocab"]);
    }

    #[test]
    fn unsorted_static_codes_rejected() {
        let text = r#"[{"id":"s","source":"static","key_codes":["B","A"],"content":"c","confidence_prior":0.9}]"#;
        assert!(static_kb_from_json(text).is_err());
    }

    #[test]
    fn jsonl_errors_name_the_line() {
        let e = read_jsonl::<GoldenRow>("{\"domain\":\"a\",\"salt\":0,\"key\":\"A\",\"expected\":\"x\"}\nnot json\n").unwrap_err();
        assert!(e.to_string().starts_with("line 2:"), "{e}");
    }
}
