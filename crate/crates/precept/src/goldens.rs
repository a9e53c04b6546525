//! Checks against the committed golden files (see `scripts/gen_goldens.py`).

use precept_core::envs::{make_domain, DomainName, HiddenCSP};
use precept_core::ConditionKey;
use serde::Deserialize;

use crate::formats::{golden_rows, read_goldens, FormatError, GoldenRow};
use crate::stats;

pub const MAPPING_TSV: &str = include_str!("../goldens/mapping.tsv");
pub const STATS_FIXTURE: &str = include_str!("../goldens/stats_fixture.json");
pub const GOLDEN_SALTS: [u64; 2] = [0, 1];

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub row: GoldenRow,
    pub actual: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappingCheck {
    pub rows: usize,
    pub mismatches: Vec<Mismatch>,
    /// Shipped (domain, salt, key) triples missing from the golden file.
    pub missing: Vec<GoldenRow>,
}

impl MappingCheck {
    pub fn ok(&self) -> bool {
        self.rows > 0 && self.mismatches.is_empty() && self.missing.is_empty()
    }
}

pub fn check_mapping(text: &str) -> Result<MappingCheck, FormatError> {
    let golden = read_goldens(text)?;
    let mut mismatches = Vec::new();
    for row in &golden {
        let domain: DomainName = row.domain.parse().map_err(|e| FormatError::Invalid(format!("{e}")))?;
        let env = HiddenCSP::new(make_domain(domain), row.salt);
        let key = ConditionKey::parse(&row.key).map_err(|e| FormatError::Invalid(format!("{e}")))?;
        let actual = env.solution_for(&key).map(str::to_string).unwrap_or_else(|e| format!("<{e}>"));
        if actual != row.expected {
            mismatches.push(Mismatch { row: row.clone(), actual });
        }
    }
    let mut missing = Vec::new();
    for d in DomainName::ALL {
        for r in golden_rows(&make_domain(d), &GOLDEN_SALTS) {
            if !golden.iter().any(|g| g.domain == r.domain && g.salt == r.salt && g.key == r.key) {
                missing.push(r);
            }
        }
    }
    Ok(MappingCheck { rows: golden.len(), mismatches, missing })
}

#[derive(Debug, Deserialize)]
pub struct StatsFixture {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub t: f64,
    pub p: f64,
    pub cohens_d: f64,
    pub ci95_halfwidth_a: f64,
    pub t_critical: std::collections::BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsCheck {
    /// (quantity, expected, actual)
    pub values: Vec<(String, f64, f64)>,
    pub tolerance: f64,
}

impl StatsCheck {
    pub fn ok(&self) -> bool {
        self.values.iter().all(|(_, e, a)| (e - a).abs() <= self.tolerance * e.abs().max(1.0))
    }
}

pub fn check_stats(text: &str) -> Result<StatsCheck, FormatError> {
    let f: StatsFixture = serde_json::from_str(text).map_err(|e| FormatError::Invalid(e.to_string()))?;
    let bad = |e: stats::StatsError| FormatError::Invalid(e.to_string());
    let (t, p) = stats::paired_t(&f.a, &f.b).map_err(bad)?;
    let mut values = vec![
        ("t".to_string(), f.t, t),
        ("p".to_string(), f.p, p),
        ("cohens_d".to_string(), f.cohens_d, stats::cohens_d(&f.a, &f.b).map_err(bad)?),
        ("ci95_halfwidth".to_string(), f.ci95_halfwidth_a, stats::ci95_halfwidth(&f.a).map_err(bad)?),
    ];
    for (df, v) in &f.t_critical {
        let df: f64 = df.parse().map_err(|_| FormatError::Invalid(format!("bad df `{df}`")))?;
        values.push((format!("t_critical(df={df})"), *v, stats::t_critical(df)));
    }
    Ok(StatsCheck { values, tolerance: 1e-9 })
}
