//! Tolerance-gated routing: turn a tolerance into a quality threshold,
//! filter the candidate set, and pick the cheapest survivor.
//!
//! The gate maps τ ∈ [0, 1] onto [r̂_min, r̂_max] per the configured
//! strategy; routing is a pure function of estimates, config, and registry.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::estimator::{EstimatorParameters, QualityEstimates};
use crate::registry::Registry;

/// How the gate picks its reference maximum and minimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Per-prompt max, min pinned at 0. The default.
    DynamicMax,
    /// Per-prompt max and per-prompt min.
    DynamicMinmax,
    /// Per-prompt max, calibrated global min.
    StaticDynamic,
    /// Calibrated global max and min.
    Static,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::DynamicMax => "dynamic_max",
            Strategy::DynamicMinmax => "dynamic_minmax",
            Strategy::StaticDynamic => "static_dynamic",
            Strategy::Static => "static",
        }
    }
}

/// Gate and selection settings.
///
/// Ties in decision cost break by higher predicted reward, then registry
/// order; the order is total, so decisions are reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RouterConfig {
    pub strategy: Strategy,
    /// Calibrated mean per-prompt max estimate; the static strategy needs it.
    pub static_max: Option<f64>,
    /// Calibrated mean per-prompt min estimate; static and static_dynamic need it.
    pub static_min: Option<f64>,
    /// Safety margin subtracted from the threshold, floored at 0.
    pub safety_margin: f64,
    /// Expected token counts that turn per-1K prices into a decision cost.
    pub weight_input_tokens: u64,
    pub weight_output_tokens: u64,
}

impl Default for RouterConfig {
    fn default() -> Self {
        RouterConfig {
            strategy: Strategy::DynamicMax,
            static_max: None,
            static_min: None,
            safety_margin: 0.0,
            weight_input_tokens: 1,
            weight_output_tokens: 1,
        }
    }
}

impl RouterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.safety_margin >= 0.0 && self.safety_margin.is_finite()) {
            return Err(Error::Config("safety_margin must be finite and >= 0".into()));
        }
        if self.weight_input_tokens == 0 && self.weight_output_tokens == 0 {
            return Err(Error::Config("cost weights must not both be zero".into()));
        }
        match self.strategy {
            Strategy::Static => {
                if self.static_max.is_none() {
                    return Err(Error::MissingStaticStat {
                        strategy: "static",
                        stat: "static_max",
                    });
                }
                if self.static_min.is_none() {
                    return Err(Error::MissingStaticStat {
                        strategy: "static",
                        stat: "static_min",
                    });
                }
            }
            Strategy::StaticDynamic if self.static_min.is_none() => {
                return Err(Error::MissingStaticStat {
                    strategy: "static_dynamic",
                    stat: "static_min",
                });
            }
            _ => {}
        }
        let lo = self.static_min.unwrap_or(0.0);
        let hi = self.static_max.unwrap_or(1.0);
        if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi > 1.0 || lo > hi {
            return Err(Error::InvalidStaticStats);
        }
        Ok(())
    }

    fn decision_cost(&self, registry: &Registry, id: &str) -> Result<i128> {
        Ok(registry
            .get(id)?
            .decision_cost(self.weight_input_tokens, self.weight_output_tokens))
    }
}

/// One routing outcome. Serializes to the stable wire document shared by
/// the CLI and the service.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingDecision {
    pub selected: String,
    pub threshold: f64,
    /// Candidate ids clearing the threshold, in registry order.
    pub feasible: Vec<String>,
    pub fallback_used: bool,
    pub tolerance: f64,
    pub estimates: QualityEstimates,
    pub registry_version: u64,
}

/// Wire shape; field order is the byte-stability contract.
#[derive(Serialize, Deserialize)]
struct DecisionDoc {
    prompt_id: String,
    selected_model: String,
    threshold: f64,
    feasible: Vec<String>,
    fallback_used: bool,
    tolerance: f64,
    predicted_qualities: BTreeMap<String, f64>,
    estimator_version: String,
    registry_version: u64,
}

impl From<&RoutingDecision> for DecisionDoc {
    fn from(d: &RoutingDecision) -> Self {
        DecisionDoc {
            prompt_id: d.estimates.prompt_id.clone(),
            selected_model: d.selected.clone(),
            threshold: d.threshold,
            feasible: d.feasible.clone(),
            fallback_used: d.fallback_used,
            tolerance: d.tolerance,
            predicted_qualities: d.estimates.estimates.iter().cloned().collect(),
            estimator_version: d.estimates.estimator_version.clone(),
            registry_version: d.registry_version,
        }
    }
}

impl Serialize for RoutingDecision {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DecisionDoc::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for RoutingDecision {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = DecisionDoc::deserialize(d)?;
        Ok(RoutingDecision {
            selected: doc.selected_model,
            threshold: doc.threshold,
            feasible: doc.feasible,
            fallback_used: doc.fallback_used,
            tolerance: doc.tolerance,
            estimates: QualityEstimates {
                prompt_id: doc.prompt_id,
                estimates: doc.predicted_qualities.into_iter().collect(),
                estimator_version: doc.estimator_version,
            },
            registry_version: doc.registry_version,
        })
    }
}

impl RoutingDecision {
    /// Compact JSON; two decisions from identical inputs serialize to
    /// identical bytes.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(doc: &str) -> Result<Self> {
        Ok(serde_json::from_str(doc)?)
    }
}

fn check_tolerance(tolerance: f64) -> Result<()> {
    if !(tolerance.is_finite() && (0.0..=1.0).contains(&tolerance)) {
        return Err(Error::InvalidTolerance(tolerance));
    }
    Ok(())
}

fn check_estimates(estimates: &QualityEstimates) -> Result<()> {
    if estimates.estimates.is_empty() {
        return Err(Error::EmptyCandidateSet);
    }
    for (id, r) in &estimates.estimates {
        if !r.is_finite() {
            return Err(Error::Config(format!("non-finite estimate for '{id}'")));
        }
    }
    Ok(())
}

/// Threshold from tolerance: r̂_max − τ·(r̂_max − r̂_min) − margin, floored
/// at 0. A static min above the per-prompt max raises the threshold past
/// every estimate; routing then falls back to the predicted best.
pub fn gate_threshold(
    estimates: &QualityEstimates,
    tolerance: f64,
    config: &RouterConfig,
) -> Result<f64> {
    check_tolerance(tolerance)?;
    config.validate()?;
    check_estimates(estimates)?;
    let (rmax, rmin) = match config.strategy {
        Strategy::DynamicMax => (estimates.max_value(), 0.0),
        Strategy::DynamicMinmax => (estimates.max_value(), estimates.min_value()),
        Strategy::StaticDynamic => (estimates.max_value(), config.static_min.unwrap()),
        Strategy::Static => (config.static_max.unwrap(), config.static_min.unwrap()),
    };
    Ok((rmax - tolerance * (rmax - rmin) - config.safety_margin).max(0.0))
}

/// Route one prompt's estimates: filter by the gate, fall back to the
/// predicted-best set when nothing clears it, then take the cheapest.
pub fn route(
    estimates: &QualityEstimates,
    tolerance: f64,
    config: &RouterConfig,
    registry: &Registry,
) -> Result<RoutingDecision> {
    let threshold = gate_threshold(estimates, tolerance, config)?;
    let mut rows: Vec<(usize, &str, f64, i128)> = Vec::with_capacity(estimates.estimates.len());
    let mut seen = HashSet::new();
    for (id, r) in &estimates.estimates {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateCandidate(id.clone()));
        }
        rows.push((
            registry.position(id)?,
            id,
            *r,
            config.decision_cost(registry, id)?,
        ));
    }
    rows.sort_by_key(|row| row.0);

    let mut feasible: Vec<&(usize, &str, f64, i128)> =
        rows.iter().filter(|row| row.2 >= threshold).collect();
    let fallback_used = feasible.is_empty();
    if fallback_used {
        let best = rows
            .iter()
            .map(|row| row.2)
            .fold(f64::NEG_INFINITY, f64::max);
        feasible = rows.iter().filter(|row| row.2 == best).collect();
    }
    // min_by keeps the first of equals, so registry order breaks final ties.
    let selected = feasible
        .iter()
        .min_by(|a, b| a.3.cmp(&b.3).then(b.2.total_cmp(&a.2)))
        .expect("feasible set is nonempty")
        .1
        .to_owned();

    Ok(RoutingDecision {
        selected,
        threshold,
        feasible: feasible.iter().map(|row| row.1.to_owned()).collect(),
        fallback_used,
        tolerance,
        estimates: estimates.clone(),
        registry_version: registry.version(),
    })
}

/// Encode, predict, and route each `(id, prompt)` pair; errors carry the
/// offending prompt id.
pub fn route_batch(
    prompts: &[(String, String)],
    params: &EstimatorParameters,
    tolerance: f64,
    config: &RouterConfig,
    registry: &Registry,
    encoder: &Encoder,
) -> Result<Vec<RoutingDecision>> {
    let ids = params.candidate_ids();
    let mut out = Vec::with_capacity(prompts.len());
    for (pid, text) in prompts {
        let go = || -> Result<RoutingDecision> {
            let emb = encoder.encode(pid, text)?;
            let est = params.predict_all(&emb, &ids)?;
            route(&est, tolerance, config, registry)
        };
        out.push(go().map_err(|e| e.for_prompt(pid))?);
    }
    Ok(out)
}
