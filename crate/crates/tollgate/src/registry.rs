//! Candidate model registry: identities, families, and unit prices.
//!
//! The registry is the only source of cost data for routing and evaluation.
//! Prices are stored as exact scaled decimals so cost comparisons never
//! depend on binary-float rounding.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Nanodollars carried per price unit: 10^9 units per dollar.
const PRICE_SCALE: i64 = 1_000_000_000;
const PRICE_DECIMALS: u32 = 9;

/// Exact decimal price per 1,000 tokens, stored as integer nanodollars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Price(i64);

impl Price {
    pub fn from_nanos(nanos: i64) -> Self {
        Price(nanos)
    }

    pub fn nanos(self) -> i64 {
        self.0
    }

    pub fn as_dollars(self) -> f64 {
        self.0 as f64 / PRICE_SCALE as f64
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }

    /// Parse a decimal literal such as `0.00025`, exactly, up to 9 decimals.
    pub fn parse_decimal(s: &str) -> Result<Self> {
        let t = s.trim();
        let bad = || Error::InvalidPrice(s.to_owned());
        let (neg, digits) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t.strip_prefix('+').unwrap_or(t)),
        };
        if digits.is_empty() {
            return Err(bad());
        }
        let (int_part, frac_part) = match digits.split_once('.') {
            Some((i, f)) => (i, f),
            None => (digits, ""),
        };
        if frac_part.len() > PRICE_DECIMALS as usize {
            return Err(bad());
        }
        if !int_part.chars().all(|c| c.is_ascii_digit())
            || !frac_part.chars().all(|c| c.is_ascii_digit())
            || (int_part.is_empty() && frac_part.is_empty())
        {
            return Err(bad());
        }
        let int_val: i64 = if int_part.is_empty() {
            0
        } else {
            int_part.parse().map_err(|_| bad())?
        };
        let mut frac_val: i64 = 0;
        if !frac_part.is_empty() {
            frac_val = frac_part.parse().map_err(|_| bad())?;
            frac_val *= 10i64.pow(PRICE_DECIMALS - frac_part.len() as u32);
        }
        let nanos = int_val
            .checked_mul(PRICE_SCALE)
            .and_then(|v| v.checked_add(frac_val))
            .ok_or_else(bad)?;
        Ok(Price(if neg { -nanos } else { nanos }))
    }

    /// Convert a float price, rounding to the nearest nanodollar.
    pub fn from_f64(v: f64) -> Result<Self> {
        if !v.is_finite() {
            return Err(Error::InvalidPrice(v.to_string()));
        }
        let scaled = v * PRICE_SCALE as f64;
        if scaled.abs() > i64::MAX as f64 / 2.0 {
            return Err(Error::InvalidPrice(v.to_string()));
        }
        Ok(Price(scaled.round() as i64))
    }
}

impl fmt::Display for Price {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let neg = self.0 < 0;
        let abs = self.0.unsigned_abs();
        let int = abs / PRICE_SCALE as u64;
        let frac = abs % PRICE_SCALE as u64;
        if neg {
            write!(f, "-")?;
        }
        if frac == 0 {
            return write!(f, "{int}");
        }
        let frac = format!("{frac:09}");
        write!(f, "{}.{}", int, frac.trim_end_matches('0'))
    }
}

impl Serialize for Price {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Price {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Str(String),
            Float(f64),
            Int(i64),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Str(s) => Price::parse_decimal(&s).map_err(D::Error::custom),
            Raw::Float(v) => Price::from_f64(v).map_err(D::Error::custom),
            Raw::Int(v) => Ok(Price(v.saturating_mul(PRICE_SCALE))),
        }
    }
}

/// One routable model endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelCandidate {
    pub id: String,
    pub family: String,
    pub display_name: String,
    /// Price per 1,000 input tokens.
    pub input_price_per_1k: Price,
    /// Price per 1,000 output tokens.
    pub output_price_per_1k: Price,
}

impl ModelCandidate {
    /// Scalar used to rank candidates by cost at decision time:
    /// `input_price * input_weight + output_price * output_weight`,
    /// exact in integer arithmetic.
    pub fn decision_cost(&self, input_weight: u64, output_weight: u64) -> i128 {
        self.input_price_per_1k.nanos() as i128 * input_weight as i128
            + self.output_price_per_1k.nanos() as i128 * output_weight as i128
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RegistryDoc {
    #[serde(default = "default_version")]
    version: u64,
    candidates: Vec<ModelCandidate>,
}

fn default_version() -> u64 {
    1
}

/// Immutable, insertion-ordered collection of model candidates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registry {
    version: u64,
    candidates: Vec<ModelCandidate>,
    by_id: HashMap<String, usize>,
}

impl Registry {
    pub fn new(version: u64, candidates: Vec<ModelCandidate>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::EmptyRegistry);
        }
        let mut by_id = HashMap::with_capacity(candidates.len());
        for (idx, cand) in candidates.iter().enumerate() {
            if cand.input_price_per_1k.is_negative() || cand.output_price_per_1k.is_negative() {
                return Err(Error::NegativePrice(cand.id.clone()));
            }
            if by_id.insert(cand.id.clone(), idx).is_some() {
                return Err(Error::DuplicateCandidate(cand.id.clone()));
            }
        }
        Ok(Registry {
            version,
            candidates,
            by_id,
        })
    }

    /// Parse a TOML registry document.
    pub fn from_toml(doc: &str) -> Result<Self> {
        let doc: RegistryDoc = toml::from_str(doc)?;
        Registry::new(doc.version, doc.candidates)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Registry::from_toml(&std::fs::read_to_string(path)?)
    }

    /// The bundled default registry.
    pub fn bundled() -> Self {
        Registry::from_toml(include_str!("../data/registry.toml"))
            .expect("bundled registry must parse")
    }

    pub fn to_toml(&self) -> Result<String> {
        let doc = RegistryDoc {
            version: self.version,
            candidates: self.candidates.clone(),
        };
        Ok(toml::to_string(&doc)?)
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// All candidates in insertion order.
    pub fn candidates(&self) -> &[ModelCandidate] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    /// Lookup by id; fails loudly for unregistered ids.
    pub fn get(&self, id: &str) -> Result<&ModelCandidate> {
        self.by_id
            .get(id)
            .map(|&i| &self.candidates[i])
            .ok_or_else(|| Error::UnknownCandidate(id.to_owned()))
    }

    /// Position in insertion order, used as the final routing tie-break.
    pub fn position(&self, id: &str) -> Result<usize> {
        self.by_id
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownCandidate(id.to_owned()))
    }

    pub fn find_by_display_name(&self, name: &str) -> Option<&ModelCandidate> {
        self.candidates.iter().find(|c| c.display_name == name)
    }

    /// Stable-ordered candidates of one family; empty if the family is unknown.
    pub fn candidates_of_family(&self, family: &str) -> Vec<&ModelCandidate> {
        self.candidates
            .iter()
            .filter(|c| c.family == family)
            .collect()
    }

    pub fn family_ids(&self, family: &str) -> Vec<String> {
        self.candidates_of_family(family)
            .into_iter()
            .map(|c| c.id.clone())
            .collect()
    }

    /// A new registry value with one more candidate and a bumped version.
    pub fn with_candidate(&self, candidate: ModelCandidate) -> Result<Self> {
        let mut candidates = self.candidates.clone();
        candidates.push(candidate);
        Registry::new(self.version + 1, candidates)
    }
}
