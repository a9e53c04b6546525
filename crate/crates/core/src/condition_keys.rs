//! Canonical condition keys and the semantic tier table.
//!
//! A [`ConditionKey`] is the universal index for learned rules, atomic
//! precepts and forbidden-option sets: an uppercase, deduplicated,
//! lexicographically sorted set of tokens joined with `+`.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Reserved separator between tokens of a composite key.
pub const SEPARATOR: char = '+';

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeyError {
    #[error("condition key has no tokens")]
    Empty,
    #[error("condition token `{0}` contains the reserved '+' separator")]
    ReservedSeparator(String),
    #[error("tier {tier} for token `{token}` is outside 1..=3")]
    BadTier { token: String, tier: u8 },
    #[error("token `{token}` mapped to both tier {first} and tier {second}")]
    AmbiguousTier { token: String, first: u8, second: u8 },
}

/// A single uppercase condition symbol such as `ASIA` or `SAFE`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConditionToken(String);

impl ConditionToken {
    /// Trims and uppercases `raw`. Blank input and input containing `+`
    /// are rejected.
    pub fn new(raw: &str) -> Result<Self, KeyError> {
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            return Err(KeyError::Empty);
        }
        if trimmed.contains(SEPARATOR) {
            return Err(KeyError::ReservedSeparator(trimmed.to_string()));
        }
        Ok(Self(trimmed.to_uppercase()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ConditionToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for ConditionToken {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for ConditionToken {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        ConditionToken::new(&raw).map_err(serde::de::Error::custom)
    }
}

/// Canonical composite key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConditionKey {
    // `text` first so the derived ordering is plain string order.
    text: String,
    tokens: Vec<ConditionToken>,
}

/// Builds the canonical key for a bag of raw tokens.
///
/// Blank entries are dropped; the result is uppercased, deduplicated and
/// sorted, so any permutation of the input yields the same key.
pub fn canonicalize<I, S>(raw_tokens: I) -> Result<ConditionKey, KeyError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut tokens = Vec::new();
    for raw in raw_tokens {
        let raw = raw.as_ref();
        if raw.trim().is_empty() {
            continue;
        }
        tokens.push(ConditionToken::new(raw)?);
    }
    ConditionKey::from_tokens(tokens)
}

impl ConditionKey {
    pub fn from_tokens(mut tokens: Vec<ConditionToken>) -> Result<Self, KeyError> {
        if tokens.is_empty() {
            return Err(KeyError::Empty);
        }
        tokens.sort();
        tokens.dedup();
        let mut text = String::new();
        for (i, t) in tokens.iter().enumerate() {
            if i > 0 {
                text.push(SEPARATOR);
            }
            text.push_str(t.as_str());
        }
        Ok(Self { text, tokens })
    }

    /// Parses `A+B+C` text (in any order or case) into a canonical key.
    pub fn parse(text: &str) -> Result<Self, KeyError> {
        canonicalize(text.split(SEPARATOR))
    }

    /// The sorted token list; its length is the condition count N.
    pub fn decompose(&self) -> &[ConditionToken] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn contains(&self, token: &ConditionToken) -> bool {
        self.tokens.binary_search(token).is_ok()
    }

    /// True when every token of `self` is also in `other`.
    pub fn is_subset_of(&self, other: &ConditionKey) -> bool {
        self.tokens.iter().all(|t| other.contains(t))
    }
}

impl fmt::Display for ConditionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl Serialize for ConditionKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.text)
    }
}

impl<'de> Deserialize<'de> for ConditionKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        ConditionKey::parse(&raw).map_err(serde::de::Error::custom)
    }
}

/// Semantic priority class of a condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Tier {
    Preferences = 1,
    Compliance = 2,
    Safety = 3,
}

impl Tier {
    pub fn level(self) -> u8 {
        self as u8
    }
}

impl TryFrom<u8> for Tier {
    type Error = KeyError;

    fn try_from(level: u8) -> Result<Self, KeyError> {
        match level {
            1 => Ok(Tier::Preferences),
            2 => Ok(Tier::Compliance),
            3 => Ok(Tier::Safety),
            other => Err(KeyError::BadTier { token: String::new(), tier: other }),
        }
    }
}

impl From<Tier> for u8 {
    fn from(t: Tier) -> u8 {
        t.level()
    }
}

/// Token → tier mapping. Unmapped tokens fall back to [`Tier::Preferences`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TierTable {
    entries: BTreeMap<ConditionToken, Tier>,
}

const SAFETY: [&str; 5] = ["SAFE", "SECURE", "RISK", "CANCEL", "AUTH"];
const COMPLIANCE: [&str; 5] = ["ASIA", "EURO", "INTL", "HIPAA", "AUDIT"];
const PREFERENCES: [&str; 5] = ["FAST", "ECON", "BULK", "SPEED", "COST"];

impl TierTable {
    /// An empty table: every token is tier 1.
    pub fn empty() -> Self {
        Self::default()
    }

    /// The stock safety / compliance / preferences hierarchy.
    pub fn standard() -> Self {
        let mut table = Self::empty();
        for (tokens, tier) in [
            (&SAFETY, Tier::Safety),
            (&COMPLIANCE, Tier::Compliance),
            (&PREFERENCES, Tier::Preferences),
        ] {
            for t in tokens.iter() {
                table
                    .insert(ConditionToken::new(t).expect("static token"), tier)
                    .expect("static table is unambiguous");
            }
        }
        table
    }

    /// Builds a table, rejecting any token listed under two different tiers.
    pub fn from_entries<I>(entries: I) -> Result<Self, KeyError>
    where
        I: IntoIterator<Item = (ConditionToken, Tier)>,
    {
        let mut table = Self::empty();
        for (token, tier) in entries {
            table.insert(token, tier)?;
        }
        Ok(table)
    }

    /// Adds one entry. Re-adding the same tier is a no-op; a different tier
    /// is an error.
    pub fn insert(&mut self, token: ConditionToken, tier: Tier) -> Result<(), KeyError> {
        match self.entries.get(&token) {
            Some(&existing) if existing != tier => Err(KeyError::AmbiguousTier {
                token: token.0,
                first: existing.level(),
                second: tier.level(),
            }),
            Some(_) => Ok(()),
            None => {
                self.entries.insert(token, tier);
                Ok(())
            }
        }
    }

    /// Merges a domain extension into this table under the same ambiguity rule.
    pub fn extend_with(&mut self, other: &TierTable) -> Result<(), KeyError> {
        for (token, &tier) in &other.entries {
            self.insert(token.clone(), tier)?;
        }
        Ok(())
    }

    pub fn tier_of(&self, token: &ConditionToken) -> Tier {
        self.entries.get(token).copied().unwrap_or(Tier::Preferences)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ConditionToken, Tier)> {
        self.entries.iter().map(|(t, &tier)| (t, tier))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
