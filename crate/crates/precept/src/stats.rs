//! Summary statistics for per-seed experiment metrics.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("need at least 2 samples, got {0}")]
    TooFew(usize),
    #[error("paired samples differ in length ({0} vs {1})")]
    Unpaired(usize, usize),
    #[error("non-finite sample")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub ci95_halfwidth: f64,
    pub comparator_mean: f64,
    pub cohens_d: f64,
    pub t: f64,
    pub p_paired: f64,
    pub p_bonferroni: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1).
pub fn sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() as f64 - 1.0)).sqrt()
}

/// Two-sided 97.5% quantile of Student's t with `df` degrees of freedom.
pub fn t_critical(df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df).expect("df > 0").inverse_cdf(0.975)
}

fn check(xs: &[f64]) -> Result<(), StatsError> {
    if xs.len() < 2 {
        return Err(StatsError::TooFew(xs.len()));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

pub fn ci95_halfwidth(xs: &[f64]) -> Result<f64, StatsError> {
    check(xs)?;
    let s = sd(xs);
    if s == 0.0 {
        return Ok(0.0);
    }
    Ok(t_critical(xs.len() as f64 - 1.0) * s / (xs.len() as f64).sqrt())
}

/// Paired t statistic and two-sided p-value. Identical pairs give (0, 1);
/// a constant non-zero difference gives an infinite t and p = 0.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<(f64, f64), StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::Unpaired(a.len(), b.len()));
    }
    check(a)?;
    check(b)?;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let md = mean(&d);
    let sdd = sd(&d);
    if sdd == 0.0 {
        return Ok(if md == 0.0 { (0.0, 1.0) } else { (md.signum() * f64::INFINITY, 0.0) });
    }
    let t = md / (sdd / (d.len() as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, d.len() as f64 - 1.0).expect("df > 0");
    let p = 2.0 * dist.cdf(-t.abs());
    Ok((t, p.clamp(0.0, 1.0)))
}

/// Cohen's d with the pooled standard deviation. Zero spread gives 0 for
/// equal means and a signed infinity otherwise.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    check(a)?;
    check(b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sd(a).powi(2), sd(b).powi(2));
    let pooled = (((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0)).sqrt();
    let diff = mean(a) - mean(b);
    if pooled == 0.0 {
        return Ok(if diff == 0.0 { 0.0 } else { diff.signum() * f64::INFINITY });
    }
    Ok(diff / pooled)
}

pub fn bonferroni(p: f64, m: usize) -> f64 {
    (p * m.max(1) as f64).min(1.0)
}

/// `samples` against a paired `comparator`, Bonferroni-corrected over a
/// family of `family` comparisons.
pub fn stats(samples: &[f64], comparator: &[f64], family: usize) -> Result<StatsSummary, StatsError> {
    let ci = ci95_halfwidth(samples)?;
    let (t, p) = paired_t(samples, comparator)?;
    Ok(StatsSummary {
        n: samples.len(),
        mean: mean(samples),
        sd: sd(samples),
        ci95_halfwidth: ci,
        comparator_mean: mean(comparator),
        cohens_d: cohens_d(samples, comparator)?,
        t,
        p_paired: p,
        p_bonferroni: bonferroni(p, family),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn published_critical_values() {
        for (df, v) in [(8.0, 2.306), (9.0, 2.262), (29.0, 2.045)] {
            assert!((t_critical(df) - v).abs() < 5e-4, "df {df}: {}", t_critical(df));
        }
    }

    #[test]
    fn identical_samples_are_no_difference() {
        let a = [0.2, 0.4, 0.9, 0.1];
        let s = stats(&a, &a, 3).unwrap();
        assert_eq!((s.cohens_d, s.p_paired, s.p_bonferroni), (0.0, 1.0, 1.0));
    }

    #[test]
    fn constant_vector_has_zero_ci() {
        assert_eq!(ci95_halfwidth(&[0.5; 10]).unwrap(), 0.0);
    }

    #[test]
    fn fewer_than_two_is_an_error() {
        assert_eq!(stats(&[1.0], &[1.0], 1).unwrap_err(), StatsError::TooFew(1));
        assert_eq!(stats(&[], &[], 1).unwrap_err(), StatsError::TooFew(0));
    }

    #[test]
    fn hand_computed_small_case() {
        // a − b = (1, 2, 3): mean 2, sd 1, t = 2√3, df 2.
        let (t, p) = paired_t(&[2.0, 4.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((t - 2.0 * 3f64.sqrt()).abs() < 1e-12);
        // Two-sided tail of t(2): 1 − t/√(t²+2).
        let exact = 1.0 - t / (t * t + 2.0).sqrt();
        assert!((p - exact).abs() < 1e-9, "{p} vs {exact}");
        // Pooled sd of (2,4,6) and (1,2,3) is √2.5.
        let d = cohens_d(&[2.0, 4.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((d - 2.0 / 2.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn bonferroni_caps_at_one() {
        assert_eq!(bonferroni(0.02, 3), 0.06);
        assert_eq!(bonferroni(0.5, 3), 1.0);
    }

    proptest! {
        #[test]
        fn p_in_unit_interval_and_symmetric(a in prop::collection::vec(0.0f64..1.0, 2..12), shift in -0.5f64..0.5) {
            let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x + shift + (i % 3) as f64 * 0.01).collect();
            let (t1, p1) = paired_t(&a, &b).unwrap();
            let (t2, p2) = paired_t(&b, &a).unwrap();
            prop_assert!((0.0..=1.0).contains(&p1));
            prop_assert!((p1 - p2).abs() < 1e-12);
            prop_assert!(t1 == -t2 || (t1 == 0.0 && t2 == 0.0));
        }
    }
}
