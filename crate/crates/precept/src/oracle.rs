//! Theory oracle runs and their CSV report.

use precept_core::theory::{monte_carlo_validate, Bound, McReport, TheoryError, TheoryParams};
use serde_json::Value;
use thiserror::Error;

pub const ORACLE_COLUMNS: [&str; 7] = ["bound", "params", "analytic", "empirical", "abs_error", "ci95", "trials"];

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("bad parameter `{0}`: expected name=value")]
    Syntax(String),
    #[error("unknown parameter `{0}`")]
    Unknown(String),
    #[error("parameter `{name}`: {reason}")]
    Value { name: String, reason: String },
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Applies `name=value` overrides (comma or whitespace separated) to `base`.
pub fn parse_params(base: TheoryParams, text: &str) -> Result<TheoryParams, OracleError> {
    let mut v = serde_json::to_value(base).expect("params serialize");
    let obj = v.as_object_mut().expect("params are a struct");
    for item in text.split([',', ' ']).filter(|s| !s.is_empty()) {
        let (name, value) = item.split_once('=').ok_or_else(|| OracleError::Syntax(item.into()))?;
        let name = name.trim();
        let slot = obj.get_mut(name).ok_or_else(|| OracleError::Unknown(name.into()))?;
        let parsed: Value = serde_json::from_str(value.trim())
            .map_err(|e| OracleError::Value { name: name.into(), reason: e.to_string() })?;
        *slot = parsed;
    }
    let p: TheoryParams = serde_json::from_value(v).map_err(|e| OracleError::Value { name: "params".into(), reason: e.to_string() })?;
    p.validate()?;
    Ok(p)
}

pub fn params_text(p: &TheoryParams) -> String {
    let v = serde_json::to_value(p).expect("params serialize");
    v.as_object()
        .expect("struct")
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn run(bounds: &[Bound], params: &TheoryParams, trials: u64, seed: u64) -> Result<Vec<McReport>, OracleError> {
    bounds.iter().map(|&b| monte_carlo_validate(b, params, trials, seed).map_err(OracleError::from)).collect()
}

pub fn oracle_csv(reports: &[McReport], params: &TheoryParams) -> Result<String, OracleError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ORACLE_COLUMNS)?;
    let pt = params_text(params);
    for r in reports {
        w.write_record([
            r.bound.id().to_string(),
            pt.clone(),
            format!("{:.9}", r.analytic),
            format!("{:.9}", r.empirical),
            format!("{:.9}", r.abs_error),
            format!("{:.9}", r.ci95),
            r.trials.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?).expect("utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_and_validate() {
        let p = parse_params(TheoryParams::anchors(), "n=3, p=0.9").unwrap();
        assert_eq!((p.n, p.p), (3, 0.9));
        assert!(matches!(parse_params(TheoryParams::anchors(), "zzz=1"), Err(OracleError::Unknown(_))));
        assert!(matches!(parse_params(TheoryParams::anchors(), "n"), Err(OracleError::Syntax(_))));
        assert!(parse_params(TheoryParams::anchors(), "p=1.5").is_err());
        assert!(parse_params(TheoryParams::anchors(), "n=-1").is_err());
    }

    #[test]
    fn csv_has_fixed_columns() {
        let p = TheoryParams::anchors();
        let r = run(&[Bound::PartialMatch], &p, 10_000, 1).unwrap();
        let text = oracle_csv(&r, &p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), ORACLE_COLUMNS.join(","));
        assert!(lines.next().unwrap().starts_with("B.6,"));
    }
}
