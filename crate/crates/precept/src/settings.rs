//! Layered run settings: command-line flags over a TOML file over the
//! experiment preset.

use std::path::{Path, PathBuf};

use precept_core::agent::{SimulatedVerbalParams, TestMode};
use precept_core::envs::DomainName;
use serde::Deserialize;

use crate::harness::{ExperimentConfig, ExperimentId, HarnessError, SkMode};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    pub experiment: Option<String>,
    pub domains: Option<Vec<DomainName>>,
    pub n_conditions: Option<usize>,
    pub beta: Option<u32>,
    pub max_retries: Option<u32>,
    pub seeds: Option<Vec<u64>>,
    pub test_mode: Option<TestMode>,
    pub train_salt: Option<u64>,
    pub test_salt: Option<u64>,
    pub sk: Option<SkMode>,
    pub compass_outer: Option<bool>,
    pub prompt_baking: Option<bool>,
    pub test_encounters: Option<u32>,
    pub verbal: Option<SimulatedVerbalParams>,
    pub out: Option<PathBuf>,
}

macro_rules! overlay {
    ($low:expr, $high:expr, $($f:ident),*) => {
        RunSettings { $($f: $high.$f.or($low.$f)),* }
    };
}

impl RunSettings {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Fields set in `high` win.
    pub fn under(self, high: RunSettings) -> RunSettings {
        overlay!(
            self,
            high,
            experiment,
            domains,
            n_conditions,
            beta,
            max_retries,
            seeds,
            test_mode,
            train_salt,
            test_salt,
            sk,
            compass_outer,
            prompt_baking,
            test_encounters,
            verbal,
            out
        )
    }

    pub fn resolve(self) -> Result<(ExperimentConfig, PathBuf), HarnessError> {
        let name = self.experiment.ok_or_else(|| HarnessError::Config("no experiment given".into()))?;
        let salts_differ = self.train_salt.unwrap_or(0) != self.test_salt.unwrap_or(0);
        let id = ExperimentId::resolve(&name, salts_differ)?;
        let mut c = ExperimentConfig::preset(id);
        if let Some(v) = self.domains {
            c.domains = v;
        }
        if let Some(v) = self.n_conditions {
            c.n_conditions = v;
        }
        if let Some(v) = self.beta {
            c.beta = v;
        }
        if self.max_retries.is_some() {
            c.max_retries = self.max_retries;
        }
        if let Some(v) = self.seeds {
            c.seeds = v;
        }
        if let Some(v) = self.test_mode {
            c.test_mode = v;
        }
        if let Some(v) = self.train_salt {
            c.train_salt = v;
        }
        if let Some(v) = self.test_salt {
            c.test_salt = v;
        }
        if let Some(v) = self.sk {
            c.sk = v;
        }
        if let Some(v) = self.compass_outer {
            c.compass_outer = v;
        }
        if let Some(v) = self.prompt_baking {
            c.prompt_baking = v;
        }
        if let Some(v) = self.test_encounters {
            c.test_encounters = v;
        }
        if let Some(v) = self.verbal {
            c.verbal = v;
        }
        c.validate()?;
        let out = self.out.unwrap_or_else(|| PathBuf::from(format!("results/exp{}_{}", id, id.slug())));
        Ok((c, out))
    }
}

/// `0,1,5` or `0-9` or a mix (`0-3,42`).
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, HarnessError> {
    let bad = || HarnessError::Config(format!("bad seed list `{text}`"));
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

/// `all`, one name, or a comma list.
pub fn parse_domains(text: &str) -> Result<Vec<DomainName>, HarnessError> {
    if text.trim().eq_ignore_ascii_case("all") {
        return Ok(DomainName::ALL.to_vec());
    }
    text.split(',')
        .map(|s| s.trim().parse::<DomainName>().map_err(|e| HarnessError::Config(e.to_string())))
        .collect()
}

pub fn parse_on_off(text: &str) -> Result<bool, HarnessError> {
    match text.to_ascii_lowercase().as_str() {
        "on" | "enabled" | "true" => Ok(true),
        "off" | "disabled" | "false" => Ok(false),
        _ => Err(HarnessError::Config(format!("expected on or off, got `{text}`"))),
    }
}
