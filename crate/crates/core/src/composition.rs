//! Atomic constraint stacking: the highest-tier fast path and the
//! constraint stack handed to synthesis when tiers tie.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::retrieval::AtomicPrecept;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintStack {
    /// Tier descending; equal tiers keep input order.
    pub precepts: Vec<AtomicPrecept>,
    /// Unflagged precepts at the maximal tier.
    pub tie_group: Vec<AtomicPrecept>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    Direct,
    Synthesize,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositionOutcome {
    pub kind: OutcomeKind,
    pub solution: Option<String>,
    pub stack: Option<ConstraintStack>,
}

impl CompositionOutcome {
    fn none() -> Self {
        Self { kind: OutcomeKind::None, solution: None, stack: None }
    }
}

/// `solution:ningbo` → `ningbo`; `solution:LLM->hamburg->singapore` →
/// `hamburg` (first non-empty segment that is not `llm`).
pub fn parse_solution_hint(hint: &str) -> Option<String> {
    let rest = match hint.split_once(':') {
        Some((_, r)) => r,
        None => hint,
    };
    let chosen = if rest.contains("->") {
        rest.split("->").map(str::trim).find(|s| !s.is_empty() && !s.eq_ignore_ascii_case("llm"))?
    } else {
        rest.trim()
    };
    (!chosen.is_empty()).then(|| chosen.to_string())
}

/// Resolves a composite from its retrieved atomic precepts.
///
/// Flagged precepts stay in the stack for context but do not count toward
/// the guard or the maximal-tier uniqueness test.
pub fn compose(precepts: &[AtomicPrecept]) -> CompositionOutcome {
    let active = precepts.iter().filter(|p| !p.conflicted).count();
    if active <= 1 {
        return CompositionOutcome::none();
    }
    let mut sorted: Vec<AtomicPrecept> = precepts.to_vec();
    // Stable: equal tiers keep input order.
    sorted.sort_by_key(|p| core::cmp::Reverse(p.tier));
    let top = sorted.iter().filter(|p| !p.conflicted).map(|p| p.tier).max().expect("active > 1");
    let tie_group: Vec<AtomicPrecept> =
        sorted.iter().filter(|p| !p.conflicted && p.tier == top).cloned().collect();
    if tie_group.len() == 1 {
        if let Some(sol) = parse_solution_hint(&tie_group[0].solution_hint) {
            return CompositionOutcome { kind: OutcomeKind::Direct, solution: Some(sol), stack: None };
        }
    }
    let solution = synthesize(&tie_group);
    CompositionOutcome {
        kind: OutcomeKind::Synthesize,
        solution,
        stack: Some(ConstraintStack { precepts: sorted, tie_group }),
    }
}

/// Deterministic synthesis stand-in: the lexicographically smallest
/// parseable solution in the tie group.
pub fn synthesize(tie_group: &[AtomicPrecept]) -> Option<String> {
    tie_group.iter().filter_map(|p| parse_solution_hint(&p.solution_hint)).min()
}

/// 2^n − 1 non-empty subsets; `None` when it does not fit in a u64 (n > 62
/// is treated as overflow for headroom).
pub fn coverage_count(n_atoms: u32) -> Option<u64> {
    if n_atoms > 62 {
        None
    } else {
        Some((1u64 << n_atoms) - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condition_keys::{ConditionKey, ConditionToken, Tier, TierTable};
    use crate::retrieval::{retrieve_atomic_precepts, PreceptStore, RevisionConflictCheck};
    use alloc::format;
    use alloc::vec;
    use proptest::prelude::*;

    fn p(tok: &str, tier: Tier, hint: &str) -> AtomicPrecept {
        AtomicPrecept {
            token: ConditionToken::new(tok).unwrap(),
            tier,
            solution_hint: hint.to_string(),
            conflicted: false,
        }
    }

    #[test]
    fn hint_parsing() {
        assert_eq!(parse_solution_hint("solution:ningbo").as_deref(), Some("ningbo"));
        assert_eq!(parse_solution_hint("solution:LLM->hamburg->singapore").as_deref(), Some("hamburg"));
        assert_eq!(parse_solution_hint(""), None);
        assert_eq!(parse_solution_hint("  rotterdam "), Some("rotterdam".into()));
        assert_eq!(parse_solution_hint("solution:"), None);
        assert_eq!(parse_solution_hint("solution:llm->"), None);
    }

    #[test]
    fn compose_examples() {
        let out = compose(&[p("FAST", Tier::Preferences, "solution:express"), p("SAFE", Tier::Safety, "solution:secure-route")]);
        assert_eq!(out.kind, OutcomeKind::Direct);
        assert_eq!(out.solution.as_deref(), Some("secure-route"));

        let out = compose(&[p("ASIA", Tier::Compliance, "solution:ningbo"), p("EURO", Tier::Compliance, "solution:hamburg")]);
        assert_eq!(out.kind, OutcomeKind::Synthesize);
        let stack = out.stack.unwrap();
        assert_eq!(stack.tie_group.len(), 2);
        assert_eq!(out.solution.as_deref(), Some("hamburg"));

        assert_eq!(compose(&[p("SAFE", Tier::Safety, "solution:x")]).kind, OutcomeKind::None);
        assert_eq!(compose(&[]).kind, OutcomeKind::None);
    }

    #[test]
    fn flagged_precepts_leave_uniqueness_test() {
        let mut a = p("SAFE", Tier::Safety, "solution:a");
        let b = p("AUTH", Tier::Safety, "solution:b");
        let c = p("FAST", Tier::Preferences, "solution:c");
        a.conflicted = true;
        let out = compose(&[a.clone(), b.clone(), c.clone()]);
        assert_eq!((out.kind, out.solution.as_deref()), (OutcomeKind::Direct, Some("b")));
        // Guard counts survivors only.
        assert_eq!(compose(&[a, b]).kind, OutcomeKind::None);
    }

    #[test]
    fn bad_hint_falls_back_to_synthesis() {
        let out = compose(&[p("SAFE", Tier::Safety, "solution:"), p("FAST", Tier::Preferences, "solution:x")]);
        assert_eq!(out.kind, OutcomeKind::Synthesize);
        assert_eq!(out.stack.unwrap().precepts.len(), 2);
    }

    #[test]
    fn coverage_values() {
        assert_eq!(coverage_count(8), Some(255));
        assert_eq!(coverage_count(1), Some(1));
        assert_eq!(coverage_count(0), Some(0));
        assert_eq!(coverage_count(62), Some((1u64 << 62) - 1));
        assert_eq!(coverage_count(63), None);
    }

    // Eight atoms from the standard table: every composite of two or more
    // atoms resolves.
    #[test]
    fn exhaustive_eight_atom_coverage() {
        let atoms = ["SAFE", "AUTH", "ASIA", "EURO", "HIPAA", "FAST", "ECON", "BULK"];
        let mut store = PreceptStore::new(TierTable::standard());
        for a in atoms {
            store.learn_from(&ConditionKey::parse(a).unwrap(), &format!("sol-{}", a.to_lowercase()));
        }
        let mut resolved = 0;
        for mask in 1u32..256 {
            let toks: Vec<&str> = (0..8).filter(|i| mask & (1 << i) != 0).map(|i| atoms[i]).collect();
            let key = ConditionKey::parse(&toks.join("+")).unwrap();
            let ps = retrieve_atomic_precepts(&key, &store, &RevisionConflictCheck);
            assert_eq!(ps.len(), toks.len());
            let out = compose(&ps);
            if toks.len() >= 2 {
                assert_ne!(out.kind, OutcomeKind::None, "{key}");
                assert!(out.solution.is_some());
            } else {
                assert_eq!(out.kind, OutcomeKind::None);
            }
            resolved += 1;
        }
        assert_eq!(resolved, coverage_count(8).unwrap());
    }

    fn tier() -> impl Strategy<Value = Tier> {
        prop_oneof![Just(Tier::Preferences), Just(Tier::Compliance), Just(Tier::Safety)]
    }

    proptest! {
        #[test]
        fn permutation_invariant(spec in prop::collection::vec((tier(), "[a-z]{1,5}", any::<bool>()), 0..7), seed in any::<u64>()) {
            let ps: Vec<AtomicPrecept> = spec.iter().enumerate().map(|(i, (t, s, f))| {
                let mut x = p(&format!("T{i}"), *t, &format!("solution:{s}"));
                x.conflicted = *f;
                x
            }).collect();
            let base = compose(&ps);
            prop_assert_eq!(&compose(&ps), &base);
            let mut shuffled = ps.clone();
            if !shuffled.is_empty() {
                let n = shuffled.len();
                shuffled.rotate_left((seed as usize) % n);
                if seed & 1 == 1 { shuffled.reverse(); }
            }
            let other = compose(&shuffled);
            prop_assert_eq!(other.kind, base.kind);
            prop_assert_eq!(other.solution, base.solution);
        }
    }

    #[test]
    fn stack_order_is_stable() {
        let out = compose(&vec![
            p("A", Tier::Compliance, "solution:z"),
            p("B", Tier::Safety, "solution:y"),
            p("C", Tier::Compliance, "solution:x"),
            p("D", Tier::Safety, "solution:w"),
        ]);
        let order: Vec<&str> = out.stack.as_ref().unwrap().precepts.iter().map(|p| p.token.as_str()).collect();
        assert_eq!(order, ["B", "D", "A", "C"]);
        assert_eq!(out.solution.as_deref(), Some("w"));
    }
}
