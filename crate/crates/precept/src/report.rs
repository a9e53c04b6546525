//! CSV and markdown report emission.
//!
//! `results.csv` columns, in order:
//! experiment, domain, arm, seed, episodes, p1, pt, avg_steps, conflicts,
//! static_wins, static_posterior, dynamic_posterior, invalidations, probes,
//! evolutions.
//!
//! `curves.csv` columns: experiment, domain, arm, seed, group, episodes, p1,
//! pt, avg_steps. Groups are encounter indices (`enc1` …) or regime splits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use precept_core::envs::{expected_drift_fraction, DomainName};
use thiserror::Error;

use crate::formats::{self, canonical_json, FormatError};
use crate::harness::{ResultSet, SeedResult};
use crate::stats::{self, StatsSummary};

pub const RESULT_COLUMNS: [&str; 15] = [
    "experiment",
    "domain",
    "arm",
    "seed",
    "episodes",
    "p1",
    "pt",
    "avg_steps",
    "conflicts",
    "static_wins",
    "static_posterior",
    "dynamic_posterior",
    "invalidations",
    "probes",
    "evolutions",
];

pub const CURVE_COLUMNS: [&str; 9] = ["experiment", "domain", "arm", "seed", "group", "episodes", "p1", "pt", "avg_steps"];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("nothing to report: the result set has no seeds")]
    Empty,
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Format(#[from] FormatError),
}

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.6}")
    } else {
        String::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    P1,
    Pt,
    Steps,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::P1, Metric::Pt, Metric::Steps];

    pub fn name(self) -> &'static str {
        match self {
            Metric::P1 => "P1",
            Metric::Pt => "Pt",
            Metric::Steps => "avg steps",
        }
    }

    pub fn of(self, r: &SeedResult) -> f64 {
        match self {
            Metric::P1 => r.test.p1,
            Metric::Pt => r.test.pt,
            Metric::Steps => r.test.avg_steps,
        }
    }
}

/// Primary arm vs comparator on one domain and metric. The family is every
/// (domain, metric) comparison the experiment reports.
pub fn compare(results: &ResultSet, domain: DomainName, metric: Metric) -> Option<StatsSummary> {
    let a: Vec<f64> = results.for_arm(domain, &results.arms[0]).map(|r| metric.of(r)).collect();
    let b: Vec<f64> = results.for_arm(domain, &results.arms[1]).map(|r| metric.of(r)).collect();
    stats::stats(&a, &b, results.domains.len() * Metric::ALL.len()).ok()
}

fn mean_ci(xs: &[f64]) -> String {
    if xs.is_empty() {
        return "-".into();
    }
    match stats::ci95_halfwidth(xs) {
        Ok(h) => format!("{:.3} ± {:.3}", stats::mean(xs), h),
        Err(_) => format!("{:.3}", stats::mean(xs)),
    }
}

fn p_text(p: f64) -> String {
    if p < 1e-3 {
        "<0.001".into()
    } else {
        format!("{p:.3}")
    }
}

fn d_text(d: f64) -> String {
    if d.is_finite() {
        format!("{d:.2}")
    } else if d > 0.0 {
        "+inf".into()
    } else {
        "-inf".into()
    }
}

pub fn results_csv(results: &ResultSet) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULT_COLUMNS)?;
    for r in &results.seeds {
        w.write_record([
            results.config.experiment.to_string(),
            r.domain.to_string(),
            r.arm.clone(),
            r.seed.to_string(),
            r.test.episodes.to_string(),
            num(r.test.p1),
            num(r.test.pt),
            num(r.test.avg_steps),
            r.conflicts.to_string(),
            r.static_wins.to_string(),
            num(r.static_posterior),
            num(r.dynamic_posterior),
            r.invalidations.to_string(),
            r.probes.to_string(),
            r.evolutions.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?).expect("csv is utf-8"))
}

pub fn curves_csv(results: &ResultSet) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CURVE_COLUMNS)?;
    for r in &results.seeds {
        for (g, m) in &r.groups {
            w.write_record([
                results.config.experiment.to_string(),
                r.domain.to_string(),
                r.arm.clone(),
                r.seed.to_string(),
                g.clone(),
                m.episodes.to_string(),
                num(m.p1),
                num(m.pt),
                num(m.avg_steps),
            ])?;
        }
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?).expect("csv is utf-8"))
}

pub fn summary_markdown(results: &ResultSet) -> String {
    let cfg = &results.config;
    let mut s = String::new();
    let _ = writeln!(s, "# Experiment {} ({})\n", cfg.experiment, cfg.experiment.slug());
    let seeds: Vec<String> = cfg.seeds.iter().map(u64::to_string).collect();
    let _ = writeln!(s, "- seeds: {}", seeds.join(", "));
    let _ = writeln!(
        s,
        "- beta {}, N {}, test mode {:?}, salts {} -> {}, sk {:?}, outer loop {}, prompt baking {}, encounters {}",
        cfg.beta,
        cfg.n_conditions,
        cfg.test_mode,
        cfg.train_salt,
        cfg.test_salt,
        cfg.sk,
        if cfg.compass_outer { "on" } else { "off" },
        if cfg.prompt_baking { "on" } else { "off" },
        cfg.test_encounters
    );
    let _ = writeln!(s, "- arms: {} vs {}", results.arms[0], results.arms[1]);
    for info in &results.domains {
        let _ = writeln!(s, "\n## {}\n", info.domain);
        let _ = writeln!(
            s,
            "E = {}, |options| = {}, |valid| = {}, max retries = {}, changed fraction {:.3} (1 - 1/v = {:.3})\n",
            info.e,
            info.options,
            info.valid_options,
            cfg.retries_for(info.domain),
            info.changed_fraction,
            expected_drift_fraction(info.valid_options)
        );
        let _ = writeln!(s, "| arm | P1 | Pt | avg steps | conflicts | static wins | invalidations |");
        let _ = writeln!(s, "|---|---|---|---|---|---|---|");
        for arm in &results.arms {
            let rows: Vec<&SeedResult> = results.for_arm(info.domain, arm).collect();
            let col = |m: Metric| mean_ci(&rows.iter().map(|r| m.of(r)).collect::<Vec<_>>());
            let _ = writeln!(
                s,
                "| {arm} | {} | {} | {} | {} | {} | {} |",
                col(Metric::P1),
                col(Metric::Pt),
                col(Metric::Steps),
                rows.iter().map(|r| r.conflicts).sum::<u64>(),
                rows.iter().map(|r| r.static_wins).sum::<u64>(),
                rows.iter().map(|r| u64::from(r.invalidations)).sum::<u64>(),
            );
        }
        let _ = writeln!(s, "\n| metric | diff | Cohen's d | paired p | Bonferroni p |");
        let _ = writeln!(s, "|---|---|---|---|---|");
        for m in Metric::ALL {
            match compare(results, info.domain, m) {
                Some(st) => {
                    let _ = writeln!(
                        s,
                        "| {} | {:+.3} | {} | {} | {} |",
                        m.name(),
                        st.mean - st.comparator_mean,
                        d_text(st.cohens_d),
                        p_text(st.p_paired),
                        p_text(st.p_bonferroni)
                    );
                }
                None => {
                    let _ = writeln!(s, "| {} | - | - | - | - |", m.name());
                }
            }
        }
        let mut groups: Vec<&String> =
            results.for_arm(info.domain, &results.arms[0]).flat_map(|r| r.groups.keys()).collect();
        groups.sort();
        groups.dedup();
        if !groups.is_empty() {
            let _ = writeln!(s, "\n| group | arm | P1 | Pt | avg steps |");
            let _ = writeln!(s, "|---|---|---|---|---|");
            for g in groups {
                for arm in &results.arms {
                    let ms: Vec<_> = results.for_arm(info.domain, arm).filter_map(|r| r.groups.get(g)).collect();
                    if ms.is_empty() {
                        continue;
                    }
                    let col = |f: fn(&crate::harness::Metrics) -> f64| mean_ci(&ms.iter().map(|m| f(m)).collect::<Vec<_>>());
                    let _ = writeln!(s, "| {g} | {arm} | {} | {} | {} |", col(|m| m.p1), col(|m| m.pt), col(|m| m.avg_steps));
                }
            }
        }
    }
    s
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf, ReportError> {
    fs::write(&path, text).map_err(|source| ReportError::Io { path: path.clone(), source })?;
    Ok(path)
}

/// Writes CSVs, the markdown summary, the config and per-seed logs under
/// `out`. Returns the written paths in a fixed order.
pub fn emit_report(results: &ResultSet, out: &Path) -> Result<Vec<PathBuf>, ReportError> {
    if results.seeds.is_empty() || results.config.seeds.is_empty() {
        return Err(ReportError::Empty);
    }
    fs::create_dir_all(out).map_err(|source| ReportError::Io { path: out.to_path_buf(), source })?;
    let mut paths = vec![
        write(out.join("config.json"), &canonical_json(&results.config))?,
        write(out.join("results.csv"), &results_csv(results)?)?,
        write(out.join("curves.csv"), &curves_csv(results)?)?,
        write(out.join("summary.md"), &summary_markdown(results))?,
    ];
    let logs = out.join("logs");
    fs::create_dir_all(&logs).map_err(|source| ReportError::Io { path: logs.clone(), source })?;
    for r in &results.seeds {
        if r.trace.is_empty() {
            continue;
        }
        let stem = format!("{}_{}_{}", r.domain, r.arm, r.seed);
        let p = logs.join(format!("{stem}.trace.jsonl"));
        formats::write_trace(&p, &r.trace)?;
        paths.push(p);
        let p = logs.join(format!("{stem}.evolution.jsonl"));
        formats::write_evolution_log(&p, &r.evolution_log)?;
        paths.push(p);
        let p = logs.join(format!("{stem}.conflicts.jsonl"));
        formats::write_conflict_audit(&p, &r.audit)?;
        paths.push(p);
    }
    Ok(paths)
}
