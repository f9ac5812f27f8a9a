//! Whole-split evaluation: curve, areas, prediction metrics, cost savings
//! at quality operating points, and artifact files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetSplit;
use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::router::RouterConfig;

use super::curve::{sweep_prepared, QualityCostCurve};
use super::metrics::{bounded_arqgc, mae, rel_arqgc, top_k_accuracy, top_k_f1};
use super::policy::{Policy, PreparedPolicy};
use super::{mean_selected_quality, normalized_cost, strongest_candidate, CostModel};

/// Evaluation settings; the defaults match the reported setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub router: RouterConfig,
    /// Sweep grid; must start at 0 and end at 1.
    pub tau_grid: Vec<f64>,
    /// Quality operating points as fractions of the strongest candidate.
    pub csr_targets: Vec<f64>,
    /// Dense grid used to find the cheapest tolerance per target.
    pub csr_grid_points: usize,
    /// Top-k cutoffs; empty means every valid k for the family.
    pub top_k: Vec<usize>,
    /// Seed for the random reference policy.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            router: RouterConfig::default(),
            tau_grid: (0..=20).map(|i| i as f64 / 20.0).collect(),
            csr_targets: vec![1.0, 0.95],
            csr_grid_points: 201,
            top_k: vec![],
            seed: 0,
        }
    }
}

/// Cost savings at one quality operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrPoint {
    /// Required fraction of the strongest candidate's mean quality.
    pub target_fraction: f64,
    /// Largest grid tolerance whose realized quality clears the target.
    pub tolerance: f64,
    /// (strongest cost - achieved cost) / strongest cost.
    pub csr: f64,
    /// Share of records routed to a cost-minimal label-argmax candidate.
    pub routing_accuracy: f64,
    /// Fraction of records per candidate; every family member appears.
    pub route_shares: BTreeMap<String, f64>,
    pub achieved_quality: f64,
    pub target_quality: f64,
    /// False when even tolerance 0 misses the target; the point then
    /// reports the tolerance-0 numbers.
    pub target_met: bool,
}

/// Everything evaluate() measures, serializable as the report artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub family: String,
    pub policy: String,
    pub dataset_fingerprint: String,
    pub seed: u64,
    pub records: usize,
    /// Prediction metrics are present only for score-bearing policies.
    pub mae: Option<f64>,
    pub top_k_accuracy: BTreeMap<usize, f64>,
    pub top_k_f1: BTreeMap<usize, f64>,
    pub top_k_f1_macro: BTreeMap<usize, f64>,
    pub b_arqgc: f64,
    pub rel_arqgc: f64,
    pub b_arqgc_oracle: f64,
    pub b_arqgc_random: f64,
    /// Dollars per 1K tokens at tolerance 0, the quality-first default.
    pub normalized_cost: f64,
    /// Keyed by the target fraction's decimal form.
    pub csr_at: BTreeMap<String, CsrPoint>,
    pub clamp_events: usize,
    /// Set once write_artifacts() has produced the curve CSV.
    pub curve_file: Option<String>,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Cheapest tolerance that still clears `target` times the strongest
/// candidate's mean quality, found by scanning a dense grid downward.
pub fn csr_at_quality(
    prepared: &PreparedPolicy,
    split: &DatasetSplit,
    cost_model: &CostModel,
    target: f64,
    grid_points: usize,
) -> Result<CsrPoint> {
    if !(target.is_finite() && target > 0.0 && target <= 1.0) {
        return Err(Error::Config(format!(
            "csr target must be in (0, 1], got {target}"
        )));
    }
    if grid_points < 2 {
        return Err(Error::Config("csr grid needs at least 2 points".into()));
    }
    let registry = cost_model.registry;
    let strong_id = strongest_candidate(split, registry)?;
    let strong: Vec<_> = split
        .records
        .iter()
        .map(|_| strong_id.clone())
        .collect();
    let v_best = fixed_cost(&strong, split, cost_model)?;
    if v_best <= 0.0 {
        return Err(Error::Config(
            "strongest candidate has zero cost; csr is undefined".into(),
        ));
    }
    let q_best = {
        let mut total = 0.0;
        for rec in &split.records {
            total += rec.reward(&strong_id)?;
        }
        total / split.len() as f64
    };
    let target_quality = target * q_best;

    let mut chosen = None;
    for i in (0..grid_points).rev() {
        let tol = i as f64 / (grid_points - 1) as f64;
        let decisions = prepared.decide(tol)?;
        let quality = mean_selected_quality(&decisions, split)?;
        if quality >= target_quality {
            chosen = Some((tol, decisions, quality, true));
            break;
        }
        if i == 0 {
            chosen = Some((tol, decisions, quality, false));
        }
    }
    let (tolerance, decisions, achieved_quality, target_met) = chosen.unwrap();

    let cost = normalized_cost(&decisions, split, cost_model)?;
    let family_ids = registry.family_ids(split.family()?);
    let mut route_counts: BTreeMap<String, usize> =
        family_ids.iter().map(|id| (id.clone(), 0)).collect();
    let mut correct = 0usize;
    for (decision, rec) in decisions.iter().zip(&split.records) {
        *route_counts.entry(decision.selected.clone()).or_insert(0) += 1;
        // A pick is correct when it is a cost-minimal member of the
        // label-argmax set.
        let best = rec
            .labels
            .values()
            .map(|l| l.reward)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut min_cost = i128::MAX;
        for (id, label) in &rec.labels {
            if label.reward == best {
                min_cost = min_cost.min(cost_model.decision_cost(id)?);
            }
        }
        let sel = &decision.selected;
        if rec.labels.get(sel).is_some_and(|l| l.reward == best)
            && cost_model.decision_cost(sel)? == min_cost
        {
            correct += 1;
        }
    }

    let n = decisions.len() as f64;
    Ok(CsrPoint {
        target_fraction: target,
        tolerance,
        csr: (v_best - cost) / v_best,
        routing_accuracy: correct as f64 / n,
        route_shares: route_counts
            .into_iter()
            .map(|(id, c)| (id, c as f64 / n))
            .collect(),
        achieved_quality,
        target_quality,
        target_met,
    })
}

/// Normalized cost of routing record i to `choices[i]`.
fn fixed_cost(choices: &[String], split: &DatasetSplit, cm: &CostModel) -> Result<f64> {
    use crate::estimator::QualityEstimates;
    use crate::router::RoutingDecision;
    let decisions: Vec<_> = choices
        .iter()
        .zip(&split.records)
        .map(|(id, rec)| RoutingDecision {
            selected: id.clone(),
            threshold: 0.0,
            feasible: vec![id.clone()],
            fallback_used: false,
            tolerance: 0.0,
            estimates: QualityEstimates {
                prompt_id: rec.id.clone(),
                estimates: vec![],
                estimator_version: "fixed".into(),
            },
            registry_version: cm.registry.version(),
        })
        .collect();
    normalized_cost(&decisions, split, cm)
}

/// Run the full suite for one policy, computing the oracle and random
/// references on the same split so relative areas are self-consistent.
pub fn evaluate(
    policy: &Policy,
    split: &DatasetSplit,
    registry: &Registry,
    config: &EvalConfig,
) -> Result<(EvaluationReport, QualityCostCurve)> {
    let cm = CostModel::with_weights(
        registry,
        config.router.weight_input_tokens,
        config.router.weight_output_tokens,
    );
    let prepared = policy.prepare(split, registry)?;
    let curve = sweep_prepared(&prepared, split, &config.tau_grid, &cm)?;
    let b = bounded_arqgc(&curve)?;

    let oracle = Policy::Oracle {
        config: config.router.clone(),
    }
    .prepare(split, registry)?;
    let b_oracle = bounded_arqgc(&sweep_prepared(&oracle, split, &config.tau_grid, &cm)?)?;
    let random = Policy::UniformRandom { seed: config.seed }.prepare(split, registry)?;
    let b_random = bounded_arqgc(&sweep_prepared(&random, split, &config.tau_grid, &cm)?)?;
    let rel = rel_arqgc(b, b_oracle, b_random)?;

    let mut report = EvaluationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        family: split.family()?.to_owned(),
        policy: prepared.name().to_owned(),
        dataset_fingerprint: split.fingerprint(),
        seed: config.seed,
        records: split.len(),
        mae: None,
        top_k_accuracy: BTreeMap::new(),
        top_k_f1: BTreeMap::new(),
        top_k_f1_macro: BTreeMap::new(),
        b_arqgc: b,
        rel_arqgc: rel,
        b_arqgc_oracle: b_oracle,
        b_arqgc_random: b_random,
        normalized_cost: {
            let decisions = prepared.decide(0.0)?;
            normalized_cost(&decisions, split, &cm)?
        },
        csr_at: BTreeMap::new(),
        clamp_events: curve.clamp_events,
        curve_file: None,
    };

    if let Some(estimates) = prepared.estimates() {
        report.mae = Some(mae(estimates, split)?);
        let n = registry.family_ids(split.family()?).len();
        let ks: Vec<usize> = if config.top_k.is_empty() {
            (1..n).collect()
        } else {
            config.top_k.clone()
        };
        for k in ks {
            report
                .top_k_accuracy
                .insert(k, top_k_accuracy(estimates, split, registry, k)?);
            let f1 = top_k_f1(estimates, split, registry, k)?;
            report.top_k_f1.insert(k, f1.mean);
            report.top_k_f1_macro.insert(k, f1.macro_f1);
        }
    }

    for &target in &config.csr_targets {
        let point = csr_at_quality(&prepared, split, &cm, target, config.csr_grid_points)?;
        report.csr_at.insert(format!("{target}"), point);
    }

    Ok((report, curve))
}

/// Write `<policy>_report.json` and `<policy>_curve.csv` into `dir`,
/// recording the CSV name in the report first.
pub fn write_artifacts(
    report: &mut EvaluationReport,
    curve: &QualityCostCurve,
    dir: &Path,
) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let stem: String = report
        .policy
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '_' || c == '-' { c } else { '-' })
        .collect();
    let csv_path = dir.join(format!("{stem}_curve.csv"));
    let json_path = dir.join(format!("{stem}_report.json"));
    curve.write_csv(&csv_path)?;
    report.curve_file = Some(format!("{stem}_curve.csv"));
    std::fs::write(&json_path, serde_json::to_string_pretty(report)?)?;
    Ok((json_path, csv_path))
}
