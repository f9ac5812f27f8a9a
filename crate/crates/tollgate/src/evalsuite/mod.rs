//! Evaluation suite: prediction metrics, routing metrics, the normalized
//! cost model, baseline policies, and report assembly.
//!
//! Everything here folds over immutable decisions, so two runs with the
//! same seeds produce bit-identical reports.

mod curve;
mod metrics;
mod policy;
mod report;

pub use curve::{sweep_curve, sweep_prepared, CurvePoint, QualityCostCurve};
pub use metrics::{bounded_arqgc, mae, rel_arqgc, top_k_accuracy, top_k_f1, TopKF1};
pub use policy::{
    train_classifier, ClassifierConfig, ClassifierModel, Policy, PreparedPolicy,
};
pub use report::{
    csr_at_quality, evaluate, write_artifacts, CsrPoint, EvalConfig, EvaluationReport,
};

use crate::dataset::DatasetSplit;
use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::router::RoutingDecision;

/// Prices plus the token weights that rank candidates by decision cost.
/// Realized token counts always come from dataset labels.
#[derive(Debug, Clone, Copy)]
pub struct CostModel<'a> {
    pub registry: &'a Registry,
    pub weight_input_tokens: u64,
    pub weight_output_tokens: u64,
}

impl<'a> CostModel<'a> {
    pub fn new(registry: &'a Registry) -> Self {
        CostModel {
            registry,
            weight_input_tokens: 1,
            weight_output_tokens: 1,
        }
    }

    pub fn with_weights(registry: &'a Registry, input: u64, output: u64) -> Self {
        CostModel {
            registry,
            weight_input_tokens: input,
            weight_output_tokens: output,
        }
    }

    pub fn decision_cost(&self, candidate_id: &str) -> Result<i128> {
        Ok(self
            .registry
            .get(candidate_id)?
            .decision_cost(self.weight_input_tokens, self.weight_output_tokens))
    }

    /// Cheapest of the given candidates; ties go to registry order.
    pub fn cheapest(&self, candidate_ids: &[String]) -> Result<String> {
        let mut best: Option<(i128, usize, &String)> = None;
        for id in candidate_ids {
            let key = (self.decision_cost(id)?, self.registry.position(id)?);
            if best.is_none_or(|(c, p, _)| (key.0, key.1) < (c, p)) {
                best = Some((key.0, key.1, id));
            }
        }
        best.map(|(_, _, id)| id.clone())
            .ok_or(Error::EmptyCandidateSet)
    }
}

/// Normalized cost over a batch of decisions: exact integer token-price
/// sums for the input and output terms, divided only at the end.
///
/// Returns dollars per 1,000 tokens; routing every prompt to one model
/// yields exactly that model's input price plus output price.
pub fn normalized_cost(
    decisions: &[RoutingDecision],
    split: &DatasetSplit,
    cost_model: &CostModel,
) -> Result<f64> {
    if decisions.is_empty() {
        return Err(Error::EmptyInput("decisions"));
    }
    if decisions.len() != split.len() {
        return Err(Error::LengthMismatch(decisions.len(), split.len()));
    }
    let mut num_in: i128 = 0;
    let mut den_in: u128 = 0;
    let mut num_out: i128 = 0;
    let mut den_out: u128 = 0;
    for (decision, rec) in decisions.iter().zip(&split.records) {
        let cand = cost_model.registry.get(&decision.selected)?;
        let l = rec.input_tokens;
        let o = rec.output_tokens(&decision.selected)?;
        num_in += l as i128 * cand.input_price_per_1k.nanos() as i128;
        den_in += l as u128;
        num_out += o as i128 * cand.output_price_per_1k.nanos() as i128;
        den_out += o as u128;
    }
    if den_in == 0 || den_out == 0 {
        return Err(Error::DegenerateTokenTotals);
    }
    let nanos = num_in as f64 / den_in as f64 + num_out as f64 / den_out as f64;
    Ok(nanos / 1e9)
}

/// Mean realized label reward of the selected candidates.
pub fn mean_selected_quality(
    decisions: &[RoutingDecision],
    split: &DatasetSplit,
) -> Result<f64> {
    if decisions.is_empty() {
        return Err(Error::EmptyInput("decisions"));
    }
    if decisions.len() != split.len() {
        return Err(Error::LengthMismatch(decisions.len(), split.len()));
    }
    let mut total = 0.0;
    for (decision, rec) in decisions.iter().zip(&split.records) {
        total += rec.reward(&decision.selected)?;
    }
    Ok(total / decisions.len() as f64)
}

/// Candidate with the highest mean label reward; ties go to registry order.
pub fn strongest_candidate(split: &DatasetSplit, registry: &Registry) -> Result<String> {
    extreme_candidate(split, registry, true)
}

/// Candidate with the lowest mean label reward.
pub fn weakest_candidate(split: &DatasetSplit, registry: &Registry) -> Result<String> {
    extreme_candidate(split, registry, false)
}

fn extreme_candidate(split: &DatasetSplit, registry: &Registry, max: bool) -> Result<String> {
    let family = split.family()?;
    let ids = registry.family_ids(family);
    if ids.is_empty() {
        return Err(Error::UnknownFamily(family.to_owned()));
    }
    let mut best: Option<(f64, String)> = None;
    for id in ids {
        let mut total = 0.0;
        for rec in &split.records {
            total += rec.reward(&id)?;
        }
        let mean = total / split.len() as f64;
        let better = match &best {
            None => true,
            Some((b, _)) => {
                if max {
                    mean > *b
                } else {
                    mean < *b
                }
            }
        };
        if better {
            best = Some((mean, id));
        }
    }
    Ok(best.expect("nonempty family").1)
}
