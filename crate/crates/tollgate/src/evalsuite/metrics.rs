//! Prediction and curve metrics with brute-force-checkable definitions.

use crate::dataset::DatasetSplit;
use crate::error::{Error, Result};
use crate::estimator::QualityEstimates;
use crate::registry::Registry;

use super::curve::QualityCostCurve;

/// Mean absolute error over every (record, candidate) pair.
pub fn mae(estimates: &[QualityEstimates], split: &DatasetSplit) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::EmptyInput("estimates"));
    }
    if estimates.len() != split.len() {
        return Err(Error::LengthMismatch(estimates.len(), split.len()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (est, rec) in estimates.iter().zip(&split.records) {
        for (id, r) in &est.estimates {
            total += (r - rec.reward(id)?).abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyInput("estimate values"));
    }
    Ok(total / count as f64)
}

/// Candidate ids ordered by value descending; ties by registry order so
/// "exact order" is well-defined on both sides.
fn ranked(pairs: &[(String, f64)], registry: &Registry) -> Result<Vec<String>> {
    let mut rows: Vec<(usize, &str, f64)> = Vec::with_capacity(pairs.len());
    for (id, v) in pairs {
        rows.push((registry.position(id)?, id, *v));
    }
    rows.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    Ok(rows.into_iter().map(|(_, id, _)| id.to_owned()).collect())
}

fn label_pairs(rec: &crate::dataset::PromptRecord) -> Vec<(String, f64)> {
    rec.labels
        .iter()
        .map(|(id, l)| (id.clone(), l.reward))
        .collect()
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if n < 2 || k == 0 || k > n - 1 {
        return Err(Error::KOutOfRange { k, n });
    }
    Ok(())
}

/// Fraction of records whose predicted top-k matches the label top-k in
/// exact positional order.
pub fn top_k_accuracy(
    estimates: &[QualityEstimates],
    split: &DatasetSplit,
    registry: &Registry,
    k: usize,
) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::EmptyInput("estimates"));
    }
    if estimates.len() != split.len() {
        return Err(Error::LengthMismatch(estimates.len(), split.len()));
    }
    let mut hits = 0usize;
    for (est, rec) in estimates.iter().zip(&split.records) {
        check_k(k, est.estimates.len())?;
        let pred = ranked(&est.estimates, registry)?;
        let truth = ranked(&label_pairs(rec), registry)?;
        if pred[..k] == truth[..k] {
            hits += 1;
        }
    }
    Ok(hits as f64 / estimates.len() as f64)
}

/// Top-k F1 scores: the per-record set-overlap mean, and a macro mean
/// over candidate identities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopKF1 {
    /// Mean over records of |pred ∩ true| / k (precision = recall there).
    pub mean: f64,
    /// Mean per-candidate F1 of top-k membership, over candidates that
    /// appear in at least one top-k set.
    pub macro_f1: f64,
}

pub fn top_k_f1(
    estimates: &[QualityEstimates],
    split: &DatasetSplit,
    registry: &Registry,
    k: usize,
) -> Result<TopKF1> {
    if estimates.is_empty() {
        return Err(Error::EmptyInput("estimates"));
    }
    if estimates.len() != split.len() {
        return Err(Error::LengthMismatch(estimates.len(), split.len()));
    }
    let mut overlap_total = 0.0;
    let mut counts: std::collections::BTreeMap<String, (usize, usize, usize)> =
        std::collections::BTreeMap::new();
    for (est, rec) in estimates.iter().zip(&split.records) {
        check_k(k, est.estimates.len())?;
        let pred = ranked(&est.estimates, registry)?;
        let truth = ranked(&label_pairs(rec), registry)?;
        let pred_set: std::collections::HashSet<&String> = pred[..k].iter().collect();
        let truth_set: std::collections::HashSet<&String> = truth[..k].iter().collect();
        overlap_total += pred_set.intersection(&truth_set).count() as f64 / k as f64;
        for id in pred_set.union(&truth_set) {
            let entry = counts.entry((*id).clone()).or_insert((0, 0, 0));
            match (pred_set.contains(*id), truth_set.contains(*id)) {
                (true, true) => entry.0 += 1,
                (true, false) => entry.1 += 1,
                (false, true) => entry.2 += 1,
                (false, false) => unreachable!(),
            }
        }
    }
    let mut f1_sum = 0.0;
    for (tp, fp, fng) in counts.values() {
        f1_sum += 2.0 * *tp as f64 / (2 * tp + fp + fng) as f64;
    }
    Ok(TopKF1 {
        mean: overlap_total / estimates.len() as f64,
        macro_f1: f1_sum / counts.len() as f64,
    })
}

/// Area under the normalized quality-cost curve: trapezoids over the
/// points' α, flat extension to α = 0 and α = 1, clamped to [0, 1].
pub fn bounded_arqgc(curve: &QualityCostCurve) -> Result<f64> {
    if curve.points.len() < 2 {
        return Err(Error::EmptyInput("curve points"));
    }
    let mut pts: Vec<(f64, f64)> = curve
        .points
        .iter()
        .map(|p| (p.alpha, p.quality_norm))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let first = pts.first().unwrap();
    let last = pts.last().unwrap();
    let mut area = first.0 * first.1 + (1.0 - last.0) * last.1;
    for pair in pts.windows(2) {
        area += (pair[1].0 - pair[0].0) * (pair[0].1 + pair[1].1) / 2.0;
    }
    Ok(area.clamp(0.0, 1.0))
}

/// Place a policy's area between the random and oracle areas; oracle maps
/// to exactly 1 and random to exactly 0.
pub fn rel_arqgc(policy_value: f64, oracle_value: f64, random_value: f64) -> Result<f64> {
    if !(oracle_value > random_value) {
        return Err(Error::DegenerateBaselineSpread);
    }
    Ok((policy_value - random_value) / (oracle_value - random_value))
}
