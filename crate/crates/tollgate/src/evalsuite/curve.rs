//! Quality-cost sweeps. Every curve carries the two static anchor points
//! (cheapest and strongest candidate) so normalized areas are comparable
//! across policies.

use std::path::Path;

use crate::dataset::DatasetSplit;
use crate::error::{Error, Result};
use crate::estimator::QualityEstimates;
use crate::router::RoutingDecision;

use super::policy::{Policy, PreparedPolicy};
use super::{mean_selected_quality, normalized_cost, strongest_candidate, CostModel};

/// One evaluated operating point; anchor points carry no tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub tolerance: Option<f64>,
    /// Dollars per 1K tokens.
    pub cost: f64,
    /// Mean realized label reward.
    pub quality: f64,
    /// Cost position between the anchors, clamped to [0, 1].
    pub alpha: f64,
    /// Quality position between the anchor qualities, clamped to [0, 1].
    pub quality_norm: f64,
}

/// A policy's trade-off curve plus the anchor statistics that define its
/// normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityCostCurve {
    /// Sorted by cost ascending, one point per distinct cost.
    pub points: Vec<CurvePoint>,
    pub cost_cheapest: f64,
    pub cost_strongest: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// Raw α or normalized-quality values that fell outside [0, 1].
    pub clamp_events: usize,
}

impl QualityCostCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tolerance,cost,quality,alpha,quality_norm\n");
        for p in &self.points {
            match p.tolerance {
                Some(t) => out.push_str(&format!(
                    "{t},{},{},{},{}\n",
                    p.cost, p.quality, p.alpha, p.quality_norm
                )),
                None => out.push_str(&format!(
                    ",{},{},{},{}\n",
                    p.cost, p.quality, p.alpha, p.quality_norm
                )),
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("tolerance grid"));
    }
    for t in grid {
        if !(t.is_finite() && (0.0..=1.0).contains(t)) {
            return Err(Error::InvalidTolerance(*t));
        }
    }
    if grid[0] != 0.0 || *grid.last().unwrap() != 1.0 {
        return Err(Error::Config(
            "tolerance grid must start at 0 and end at 1".into(),
        ));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("tolerance grid must be ascending".into()));
    }
    Ok(())
}

fn static_decisions(split: &DatasetSplit, id: &str, version: u64) -> Vec<RoutingDecision> {
    split
        .records
        .iter()
        .map(|rec| RoutingDecision {
            selected: id.to_owned(),
            threshold: 0.0,
            feasible: vec![id.to_owned()],
            fallback_used: false,
            tolerance: 0.0,
            estimates: QualityEstimates {
                prompt_id: rec.id.clone(),
                estimates: vec![],
                estimator_version: "anchor".into(),
            },
            registry_version: version,
        })
        .collect()
}

/// Prepare the policy once, then sweep it over the grid.
pub fn sweep_curve(
    policy: &Policy,
    split: &DatasetSplit,
    grid: &[f64],
    cost_model: &CostModel,
) -> Result<QualityCostCurve> {
    let prepared = policy.prepare(split, cost_model.registry)?;
    sweep_prepared(&prepared, split, grid, cost_model)
}

/// Evaluate a prepared policy at every grid tolerance, append the two
/// anchors, and normalize cost and quality between them.
pub fn sweep_prepared(
    prepared: &PreparedPolicy,
    split: &DatasetSplit,
    grid: &[f64],
    cost_model: &CostModel,
) -> Result<QualityCostCurve> {
    validate_grid(grid)?;
    let registry = cost_model.registry;
    let family = split.family()?;
    let cheap_id = cost_model.cheapest(&registry.family_ids(family))?;
    let strong_id = strongest_candidate(split, registry)?;

    // (tolerance, cost, quality) triples; anchors last.
    let mut raw = Vec::with_capacity(grid.len() + 2);
    for &tol in grid {
        let decisions = prepared.decide(tol)?;
        raw.push((
            Some(tol),
            normalized_cost(&decisions, split, cost_model)?,
            mean_selected_quality(&decisions, split)?,
        ));
    }
    let anchor = |id: &str| -> Result<(f64, f64)> {
        let decisions = static_decisions(split, id, registry.version());
        Ok((
            normalized_cost(&decisions, split, cost_model)?,
            mean_selected_quality(&decisions, split)?,
        ))
    };
    let (cost_cheapest, q_min) = anchor(&cheap_id)?;
    let (cost_strongest, q_max) = anchor(&strong_id)?;
    raw.push((None, cost_cheapest, q_min));
    raw.push((None, cost_strongest, q_max));

    if q_max <= q_min {
        return Err(Error::DegenerateQualityRange);
    }
    if cost_strongest <= cost_cheapest {
        return Err(Error::DegenerateCostRange);
    }

    let mut clamp_events = 0;
    let mut clamp = |x: f64| {
        if !(0.0..=1.0).contains(&x) {
            clamp_events += 1;
        }
        x.clamp(0.0, 1.0)
    };
    let mut points: Vec<CurvePoint> = raw
        .into_iter()
        .map(|(tolerance, cost, quality)| CurvePoint {
            tolerance,
            cost,
            quality,
            alpha: clamp((cost - cost_cheapest) / (cost_strongest - cost_cheapest)),
            quality_norm: clamp((quality - q_min) / (q_max - q_min)),
        })
        .collect();

    // Best quality per distinct cost: sort cost asc / quality desc, then
    // keep the first of each equal-cost run.
    points.sort_by(|a, b| a.cost.total_cmp(&b.cost).then(b.quality.total_cmp(&a.quality)));
    points.dedup_by(|a, b| a.cost == b.cost);

    Ok(QualityCostCurve {
        points,
        cost_cheapest,
        cost_strongest,
        q_min,
        q_max,
        clamp_events,
    })
}
