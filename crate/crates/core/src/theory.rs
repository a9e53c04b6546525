//! Closed-form bounds and their Monte Carlo validators.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use libm::pow;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::wasted_retry_trial;
use crate::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryParams {
    pub w: u32,
    pub b: u32,
    pub t: u32,
    pub e: u32,
    pub beta: u32,
    pub r: u32,
    pub options: u32,
    pub p: f64,
    pub alpha_precept: f64,
    pub alpha_verbal: f64,
    pub theta: u32,
    pub d_precept: f64,
    pub d_verbal: f64,
    pub n: u32,
    pub failed: u32,
    pub p_forget: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TheoryError {
    #[error("invalid parameter: {0}")]
    BadParams(&'static str),
    #[error("unknown bound `{0}`")]
    UnknownBound(alloc::string::String),
    #[error("at least 10000 trials are required, got {0}")]
    TooFewTrials(u64),
}

impl TheoryParams {
    /// Illustrative anchors: α = 0.85 / 0.50, p = 0.75, d = 0.95 / 0.60.
    pub fn anchors() -> Self {
        Self {
            w: 0,
            b: 1,
            t: 12,
            e: 4,
            beta: 3,
            r: 4,
            options: 4,
            p: 0.75,
            alpha_precept: 0.85,
            alpha_verbal: 0.50,
            theta: 2,
            d_precept: 0.95,
            d_verbal: 0.60,
            n: 10,
            failed: 3,
            p_forget: 0.2,
        }
    }

    /// Training length under the controlled protocol: T = β·E.
    pub fn controlled(mut self) -> Self {
        self.t = self.beta * self.e;
        self
    }

    pub fn validate(&self) -> Result<(), TheoryError> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !(unit(self.p) && unit(self.alpha_precept) && unit(self.alpha_verbal) && unit(self.p_forget)) {
            return Err(TheoryError::BadParams("probabilities must lie in [0, 1]"));
        }
        if !(unit(self.d_precept) && unit(self.d_verbal)) {
            return Err(TheoryError::BadParams("detection accuracies must lie in [0, 1]"));
        }
        if self.e == 0 {
            return Err(TheoryError::BadParams("E must be at least 1"));
        }
        if self.w + self.b == 0 {
            return Err(TheoryError::BadParams("W + B must be positive"));
        }
        if self.n == 0 {
            return Err(TheoryError::BadParams("N must be at least 1"));
        }
        Ok(())
    }
}

/// Probability a given key was drawn at least once in T uniform draws.
pub fn coverage(t: u32, e: u32) -> f64 {
    1.0 - pow(1.0 - 1.0 / e as f64, t as f64)
}

/// Chance that uniform exploration over `options` hits the answer within
/// `r` draws with replacement. A modelling choice, not a derived quantity.
pub fn p_learn(r: u32, options: u32) -> f64 {
    if options == 0 {
        return 0.0;
    }
    1.0 - pow(1.0 - 1.0 / options as f64, r as f64)
}

pub fn first_try(params: &TheoryParams, p_learn: f64, alpha: f64) -> f64 {
    let total = (params.w + params.b) as f64;
    params.w as f64 / total + params.b as f64 / total * coverage(params.t, params.e) * p_learn * alpha
}

pub fn degradation(alpha1: f64, p: f64, n: u32) -> f64 {
    alpha1 * pow(p, n as f64 - 1.0)
}

pub fn effectiveness_ratio(alpha_p: f64, alpha_v: f64, p: f64, n: u32) -> f64 {
    alpha_p / degradation(alpha_v, p, n)
}

pub fn stale_persist(d: f64, theta: u32) -> f64 {
    pow(1.0 - d, theta as f64)
}

pub fn resilience_ratio(d_v: f64, d_p: f64, theta: u32) -> f64 {
    stale_persist(d_v, theta) / stale_persist(d_p, theta)
}

pub fn partial_match(p: f64, n: u32) -> f64 {
    1.0 - pow(p, n as f64) - pow(1.0 - p, n as f64)
}

pub fn wasted_retries(f: u32, p_forget: f64, r: u32) -> f64 {
    f as f64 * p_forget * r as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Bound {
    Coverage,
    FirstTry,
    Degradation,
    Ratio,
    StalePersist,
    Resilience,
    PartialMatch,
    WastedRetries,
}

impl Bound {
    pub const ALL: [Bound; 8] = [
        Bound::Coverage,
        Bound::FirstTry,
        Bound::Degradation,
        Bound::Ratio,
        Bound::StalePersist,
        Bound::Resilience,
        Bound::PartialMatch,
        Bound::WastedRetries,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Bound::Coverage => "coverage",
            Bound::FirstTry => "B.1",
            Bound::Degradation => "B.2",
            Bound::Ratio => "B.3",
            Bound::StalePersist => "B.4",
            Bound::Resilience => "B.5",
            Bound::PartialMatch => "B.6",
            Bound::WastedRetries => "B.8",
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Bound {
    type Err = TheoryError;

    fn from_str(s: &str) -> Result<Self, TheoryError> {
        let t = s.trim().to_ascii_lowercase();
        Ok(match t.as_str() {
            "coverage" | "b.0" => Bound::Coverage,
            "b.1" | "b1" | "first_try" => Bound::FirstTry,
            "b.2" | "b2" | "degradation" => Bound::Degradation,
            "b.3" | "b3" | "ratio" => Bound::Ratio,
            "b.4" | "b4" | "stale_persist" => Bound::StalePersist,
            "b.5" | "b5" | "resilience" => Bound::Resilience,
            "b.6" | "b6" | "partial_match" => Bound::PartialMatch,
            "b.8" | "b8" | "wasted_retries" => Bound::WastedRetries,
            _ => return Err(TheoryError::UnknownBound(s.into())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub bound: Bound,
    pub analytic: f64,
    pub empirical: f64,
    pub abs_error: f64,
    /// Normal-approximation 95% half-width of the empirical estimate.
    pub ci95: f64,
    pub trials: u64,
}

impl McReport {
    pub fn within_ci(&self) -> bool {
        self.abs_error <= self.ci95
    }
}

/// Running mean and variance (Welford).
#[derive(Default)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn ci95(&self) -> f64 {
        if self.n < 2 {
            return f64::INFINITY;
        }
        1.959964 * libm::sqrt(self.m2 / (self.n - 1) as f64 / self.n as f64)
    }
}

fn bern(rng: &mut SeededRng, p: f64) -> bool {
    rng.random::<f64>() < p
}

/// Simulates the process behind `bound` and compares with the closed form.
pub fn monte_carlo_validate(bound: Bound, params: &TheoryParams, trials: u64, seed: u64) -> Result<McReport, TheoryError> {
    params.validate()?;
    if trials < 10_000 {
        return Err(TheoryError::TooFewTrials(trials));
    }
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut m = Moments::default();
    let p = params;
    let (analytic, empirical, ci95) = match bound {
        Bound::Coverage => {
            for _ in 0..trials {
                let hit = (0..p.t).any(|_| rng.random_range(0..p.e) == 0);
                m.push(hit as u8 as f64);
            }
            (coverage(p.t, p.e), m.mean, m.ci95())
        }
        Bound::FirstTry => {
            let pl = p_learn(p.r, p.options);
            for _ in 0..trials {
                let white = rng.random_range(0..p.w + p.b) < p.w;
                let ok = white || {
                    let target = rng.random_range(0..p.e);
                    let seen = (0..p.t).any(|_| rng.random_range(0..p.e) == target);
                    // Exploration: R uniform draws with replacement over the options.
                    let learned = seen && (0..p.r).any(|_| rng.random_range(0..p.options) == 0);
                    learned && bern(&mut rng, p.alpha_precept)
                };
                m.push(ok as u8 as f64);
            }
            (first_try(p, pl, p.alpha_precept), m.mean, m.ci95())
        }
        Bound::Degradation => {
            for _ in 0..trials {
                let ok = bern(&mut rng, p.alpha_verbal) && (1..p.n).all(|_| bern(&mut rng, p.p));
                m.push(ok as u8 as f64);
            }
            (degradation(p.alpha_verbal, p.p, p.n), m.mean, m.ci95())
        }
        Bound::Ratio => {
            let mut v = Moments::default();
            for _ in 0..trials {
                m.push(bern(&mut rng, p.alpha_precept) as u8 as f64);
                let ok = bern(&mut rng, p.alpha_verbal) && (1..p.n).all(|_| bern(&mut rng, p.p));
                v.push(ok as u8 as f64);
            }
            let ratio = m.mean / v.mean;
            // Delta method on a ratio of independent means.
            let rel = libm::sqrt(libm::pow(m.ci95() / m.mean, 2.0) + libm::pow(v.ci95() / v.mean, 2.0));
            (effectiveness_ratio(p.alpha_precept, p.alpha_verbal, p.p, p.n), ratio, ratio * rel)
        }
        Bound::StalePersist => {
            for _ in 0..trials {
                let undetected = (0..p.theta).all(|_| !bern(&mut rng, p.d_precept));
                m.push(undetected as u8 as f64);
            }
            (stale_persist(p.d_precept, p.theta), m.mean, m.ci95())
        }
        Bound::Resilience => {
            let mut v = Moments::default();
            for _ in 0..trials {
                m.push((0..p.theta).all(|_| !bern(&mut rng, p.d_verbal)) as u8 as f64);
                v.push((0..p.theta).all(|_| !bern(&mut rng, p.d_precept)) as u8 as f64);
            }
            let ratio = m.mean / v.mean;
            let rel = libm::sqrt(libm::pow(m.ci95() / m.mean, 2.0) + libm::pow(v.ci95() / v.mean, 2.0));
            (resilience_ratio(p.d_verbal, p.d_precept, p.theta), ratio, ratio * rel)
        }
        Bound::PartialMatch => {
            for _ in 0..trials {
                let hits = (0..p.n).filter(|_| bern(&mut rng, p.p)).count() as u32;
                m.push((hits > 0 && hits < p.n) as u8 as f64);
            }
            (partial_match(p.p, p.n), m.mean, m.ci95())
        }
        Bound::WastedRetries => {
            for _ in 0..trials {
                m.push(wasted_retry_trial(p.failed as usize, p.p_forget, p.r, &mut rng) as f64);
            }
            (wasted_retries(p.failed, p.p_forget, p.r), m.mean, m.ci95())
        }
    };
    Ok(McReport { bound, analytic, empirical, abs_error: (analytic - empirical).abs(), ci95, trials })
}

/// Ratio at the corners of the anchor box α_P ∈ [lo, hi], α_V ∈ [lo, hi].
pub fn anchor_sweep(p: f64, n: u32, alpha_p: (f64, f64), alpha_v: (f64, f64)) -> (f64, f64) {
    let corners: Vec<f64> = [alpha_p.0, alpha_p.1]
        .iter()
        .flat_map(|ap| [alpha_v.0, alpha_v.1].map(|av| effectiveness_ratio(*ap, av, p, n)))
        .collect();
    let lo = corners.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = corners.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn round1(x: f64) -> f64 {
        libm::round(x * 10.0) / 10.0
    }

    #[test]
    fn coverage_examples() {
        assert_eq!(coverage(0, 5), 0.0);
        assert_eq!(coverage(1, 1), 1.0);
        assert!((coverage(12, 4) - (1.0 - libm::pow(0.75, 12.0))).abs() < 1e-15);
        assert!((coverage(12, 4) - 0.968_323_648).abs() < 1e-9);
    }

    #[test]
    fn first_try_examples() {
        let mut p = TheoryParams::anchors();
        p.w = 3;
        p.b = 0;
        assert_eq!(first_try(&p, 0.7, 0.85), 1.0);
        p.b = 2;
        assert_eq!(first_try(&p, 0.7, 0.0), 0.6);
    }

    #[test]
    fn degradation_examples() {
        assert_eq!(degradation(0.5, 0.75, 1), 0.5);
        assert!((degradation(0.5, 0.75, 10) - 0.037_54).abs() < 1e-4);
        assert_eq!(degradation(0.5, 1.0, 7), 0.5);
    }

    #[test]
    fn ratio_at_anchors() {
        assert_eq!(round1(effectiveness_ratio(0.85, 0.50, 0.75, 1)), 1.7);
        assert_eq!(round1(effectiveness_ratio(0.85, 0.50, 0.75, 3)), 3.0);
        assert_eq!(round1(effectiveness_ratio(0.85, 0.50, 0.75, 10)), 22.6);
    }

    #[test]
    fn stale_and_resilience() {
        assert!((stale_persist(0.95, 2) - 0.0025).abs() < 1e-15);
        assert!((stale_persist(0.60, 2) - 0.16).abs() < 1e-15);
        assert_eq!(stale_persist(1.0, 2), 0.0);
        assert!((resilience_ratio(0.60, 0.95, 2) - 64.0).abs() < 1e-9);
        assert_eq!(resilience_ratio(0.7, 0.7, 2), 1.0);
        assert!((resilience_ratio(0.60, 0.95, 1) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn partial_match_examples() {
        assert!((partial_match(0.75, 10) - 0.9437).abs() < 5e-5);
        assert_eq!(partial_match(0.3, 1), 0.0);
        assert_eq!(partial_match(0.5, 2), 0.5);
        // Enumerate the four outcomes of two conditions.
        let mut mixed = 0.0;
        for a in [true, false] {
            for b in [true, false] {
                if a != b {
                    mixed += 0.25;
                }
            }
        }
        assert_eq!(mixed, partial_match(0.5, 2));
    }

    #[test]
    fn wasted_examples() {
        assert!((wasted_retries(3, 0.2, 5) - 3.0).abs() < 1e-12);
        assert_eq!(wasted_retries(4, 0.0, 9), 0.0);
    }

    #[test]
    fn anchor_sensitivity() {
        let (lo, hi) = anchor_sweep(0.75, 5, (0.75, 0.95), (0.40, 0.60));
        assert_eq!((libm::round(lo * 100.0) / 100.0, libm::round(hi * 100.0) / 100.0), (3.95, 7.51));
        let (lo, hi) = anchor_sweep(0.75, 10, (0.75, 0.95), (0.40, 0.60));
        assert_eq!((libm::round(lo * 100.0) / 100.0, libm::round(hi * 100.0) / 100.0), (16.65, 31.63));
    }

    #[test]
    fn validators_agree() {
        let mut p = TheoryParams::anchors();
        p.w = 2;
        p.b = 3;
        for b in Bound::ALL {
            let r = monte_carlo_validate(b, &p, 100_000, 7).unwrap();
            // Allow 1.5 CI half-widths so one unlucky draw in eight does
            // not flake; the CI itself is reported alongside.
            assert!(r.abs_error <= 1.5 * r.ci95, "{b}: {r:?}");
        }
    }

    #[test]
    fn validator_rejects_small_runs_and_bad_params() {
        let p = TheoryParams::anchors();
        assert_eq!(monte_carlo_validate(Bound::PartialMatch, &p, 10, 0), Err(TheoryError::TooFewTrials(10)));
        let mut bad = p;
        bad.p = 1.5;
        assert!(monte_carlo_validate(Bound::PartialMatch, &bad, 10_000, 0).is_err());
        assert_eq!("B.6".parse::<Bound>().unwrap(), Bound::PartialMatch);
        assert!("B.9".parse::<Bound>().is_err());
    }

    #[test]
    fn controlled_training_length() {
        let p = TheoryParams { beta: 3, e: 6, ..TheoryParams::anchors() }.controlled();
        assert_eq!(p.t, 18);
    }

    proptest! {
        #[test]
        fn ratio_increasing_in_n(p in 0.01f64..0.99, n in 1u32..40) {
            prop_assert!(effectiveness_ratio(0.85, 0.5, p, n + 1) > effectiveness_ratio(0.85, 0.5, p, n));
        }

        #[test]
        fn partial_match_partition(p in 0.0f64..=1.0, n in 1u32..30) {
            let total = partial_match(p, n) + libm::pow(p, n as f64) + libm::pow(1.0 - p, n as f64);
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn coverage_monotone(t in 0u32..500, e in 1u32..50) {
            prop_assert!(coverage(t + 1, e) >= coverage(t, e));
            prop_assert!(coverage(t, e) <= 1.0);
        }
    }
}
