//! Routing policies under one roof: the trained estimator, the oracle,
//! and the reference baselines, all emitting router-shaped decisions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetSplit;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::estimator::{EstimatorParameters, QualityEstimates};
use crate::registry::Registry;
use crate::router::{route, RouterConfig, RoutingDecision};

use super::{strongest_candidate, CostModel};

/// A binary gate in the RouteLLM style: predicts whether the cheapest
/// candidate is within `margin` of the best, from encoder features alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub cheap: String,
    pub strong: String,
    pub margin: f64,
    pub encoder_id: String,
}

impl ClassifierModel {
    /// Probability that the cheap candidate suffices for this prompt.
    pub fn probability(&self, embedding: &[f64]) -> Result<f64> {
        if embedding.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                found: embedding.len(),
                context: " in classifier input".into(),
            });
        }
        let z: f64 = self
            .weights
            .iter()
            .zip(embedding)
            .map(|(w, x)| w * x)
            .sum::<f64>()
            + self.bias;
        Ok(1.0 / (1.0 + (-z).exp()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    /// Cheap counts as good enough when best - cheap <= margin.
    pub margin: f64,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            margin: 0.05,
            epochs: 200,
            learning_rate: 0.5,
        }
    }
}

/// Full-batch logistic regression; the objective is convex, so zero init
/// keeps it deterministic without a seed.
pub fn train_classifier(
    split: &DatasetSplit,
    registry: &Registry,
    encoder: &Encoder,
    cost_model: &CostModel,
    config: &ClassifierConfig,
) -> Result<ClassifierModel> {
    if split.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.margin < 0.0 {
        return Err(Error::Config("margin must be >= 0".into()));
    }
    if !(config.learning_rate > 0.0) {
        return Err(Error::Config("learning_rate must be > 0".into()));
    }
    let family = split.family()?;
    let ids = registry.family_ids(family);
    let cheap = cost_model.cheapest(&ids)?;
    let strong = strongest_candidate(split, registry)?;
    let d = encoder.dim();

    let mut xs = Vec::with_capacity(split.len());
    let mut ys = Vec::with_capacity(split.len());
    for rec in &split.records {
        xs.push(encoder.encode(&rec.id, &rec.prompt)?.values);
        let best = rec
            .labels
            .values()
            .map(|l| l.reward)
            .fold(f64::NEG_INFINITY, f64::max);
        ys.push(if best - rec.reward(&cheap)? <= config.margin {
            1.0
        } else {
            0.0
        });
    }

    let n = xs.len() as f64;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut grad = vec![0.0; d];
    for _ in 0..config.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        for (x, y) in xs.iter().zip(&ys) {
            let z: f64 = w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() + b;
            let err = 1.0 / (1.0 + (-z).exp()) - y;
            for (g, xi) in grad.iter_mut().zip(x) {
                *g += err * xi / n;
            }
            gb += err / n;
        }
        for (wi, g) in w.iter_mut().zip(&grad) {
            *wi -= config.learning_rate * g;
        }
        b -= config.learning_rate * gb;
    }

    Ok(ClassifierModel {
        weights: w,
        bias: b,
        cheap,
        strong,
        margin: config.margin,
        encoder_id: encoder.id(),
    })
}

/// A routing policy to evaluate. Estimator and oracle react to tolerance;
/// the rest ignore it, giving single-point curves.
pub enum Policy<'a> {
    /// The trained predictor behind the production gate.
    Estimator {
        params: &'a EstimatorParameters,
        encoder: &'a Encoder,
        config: RouterConfig,
    },
    /// True labels pushed through the same gate.
    Oracle { config: RouterConfig },
    /// Always one candidate.
    StaticCandidate { id: String },
    /// Uniform over the family, seeded.
    UniformRandom { seed: u64 },
    /// Random with prescribed route shares.
    BudgetAwareRandom {
        shares: Vec<(String, f64)>,
        seed: u64,
    },
    /// Binary cheap-or-strong gate; tolerance maps to its threshold.
    Classifier {
        model: &'a ClassifierModel,
        encoder: &'a Encoder,
    },
}

impl Policy<'_> {
    pub fn name(&self) -> String {
        match self {
            Policy::Estimator { .. } => "estimator".into(),
            Policy::Oracle { .. } => "oracle".into(),
            Policy::StaticCandidate { id } => format!("static-{id}"),
            Policy::UniformRandom { .. } => "random".into(),
            Policy::BudgetAwareRandom { .. } => "budget_aware_random".into(),
            Policy::Classifier { .. } => "binary_classifier".into(),
        }
    }

    /// Whether decisions carry per-candidate quality scores, which is
    /// what the prediction metrics need.
    pub fn has_scores(&self) -> bool {
        matches!(self, Policy::Estimator { .. } | Policy::Oracle { .. })
    }

    /// Do the per-record work that does not depend on tolerance once:
    /// embeddings and predictions, random draws, classifier probabilities.
    pub fn prepare<'r>(
        &self,
        split: &DatasetSplit,
        registry: &'r Registry,
    ) -> Result<PreparedPolicy<'r>> {
        if split.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let family = split.family()?;
        let family_ids = registry.family_ids(family);
        if family_ids.is_empty() {
            return Err(Error::UnknownFamily(family.to_owned()));
        }
        let kind = match self {
            Policy::Estimator {
                params,
                encoder,
                config,
            } => {
                let ids = params.candidate_ids();
                let mut estimates = Vec::with_capacity(split.len());
                for rec in &split.records {
                    let emb = encoder
                        .encode(&rec.id, &rec.prompt)
                        .map_err(|e| e.for_prompt(&rec.id))?;
                    estimates.push(
                        params
                            .predict_all(&emb, &ids)
                            .map_err(|e| e.for_prompt(&rec.id))?,
                    );
                }
                PreparedKind::Gated {
                    estimates,
                    config: config.clone(),
                }
            }
            Policy::Oracle { config } => {
                let mut estimates = Vec::with_capacity(split.len());
                for rec in &split.records {
                    let pairs: Vec<(String, f64)> = family_ids
                        .iter()
                        .map(|id| Ok((id.clone(), rec.reward(id)?)))
                        .collect::<Result<_>>()?;
                    estimates.push(QualityEstimates {
                        prompt_id: rec.id.clone(),
                        estimates: pairs,
                        estimator_version: "oracle".into(),
                    });
                }
                PreparedKind::Gated {
                    estimates,
                    config: config.clone(),
                }
            }
            Policy::StaticCandidate { id } => {
                registry.position(id)?;
                if !family_ids.contains(id) {
                    return Err(Error::UnknownCandidate(id.clone()));
                }
                PreparedKind::Fixed {
                    choices: vec![id.clone(); split.len()],
                    choice_set: vec![id.clone()],
                }
            }
            Policy::UniformRandom { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let choices = (0..split.len())
                    .map(|_| family_ids[rng.gen_range(0..family_ids.len())].clone())
                    .collect();
                PreparedKind::Fixed {
                    choices,
                    choice_set: family_ids.clone(),
                }
            }
            Policy::BudgetAwareRandom { shares, seed } => {
                if shares.is_empty() {
                    return Err(Error::EmptyInput("route shares"));
                }
                let total: f64 = shares.iter().map(|(_, s)| *s).sum();
                if shares.iter().any(|(_, s)| *s < 0.0) || (total - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!(
                        "route shares must be nonnegative and sum to 1 (got {total})"
                    )));
                }
                for (id, _) in shares {
                    registry.position(id)?;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let choices = (0..split.len())
                    .map(|_| {
                        let u: f64 = rng.gen();
                        let mut acc = 0.0;
                        for (id, s) in shares {
                            acc += s;
                            if u < acc {
                                return id.clone();
                            }
                        }
                        shares.last().unwrap().0.clone()
                    })
                    .collect();
                PreparedKind::Fixed {
                    choices,
                    choice_set: shares.iter().map(|(id, _)| id.clone()).collect(),
                }
            }
            Policy::Classifier { model, encoder } => {
                registry.position(&model.cheap)?;
                registry.position(&model.strong)?;
                let mut probs = Vec::with_capacity(split.len());
                for rec in &split.records {
                    let emb = encoder
                        .encode(&rec.id, &rec.prompt)
                        .map_err(|e| e.for_prompt(&rec.id))?;
                    probs.push((rec.id.clone(), model.probability(&emb.values)?));
                }
                let mut set = vec![model.cheap.clone(), model.strong.clone()];
                set.sort_by_key(|id| registry.position(id).unwrap());
                set.dedup();
                PreparedKind::Thresholded {
                    probs,
                    cheap: model.cheap.clone(),
                    strong: model.strong.clone(),
                    choice_set: set,
                }
            }
        };
        Ok(PreparedPolicy {
            registry,
            name: self.name(),
            record_ids: split.records.iter().map(|r| r.id.clone()).collect(),
            kind,
        })
    }
}

enum PreparedKind {
    Gated {
        estimates: Vec<QualityEstimates>,
        config: RouterConfig,
    },
    Fixed {
        choices: Vec<String>,
        choice_set: Vec<String>,
    },
    Thresholded {
        probs: Vec<(String, f64)>,
        cheap: String,
        strong: String,
        choice_set: Vec<String>,
    },
}

/// A policy bound to one split; `decide` replays it at any tolerance.
pub struct PreparedPolicy<'r> {
    registry: &'r Registry,
    name: String,
    record_ids: Vec<String>,
    kind: PreparedKind,
}

impl PreparedPolicy<'_> {
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Per-record quality scores, when the policy has real ones.
    pub fn estimates(&self) -> Option<&[QualityEstimates]> {
        match &self.kind {
            PreparedKind::Gated { estimates, .. } => Some(estimates),
            _ => None,
        }
    }

    fn bare_decision(&self, rec_id: &str, selected: &str, set: &[String], tol: f64) -> RoutingDecision {
        RoutingDecision {
            selected: selected.to_owned(),
            threshold: 0.0,
            feasible: set.to_vec(),
            fallback_used: false,
            tolerance: tol,
            estimates: QualityEstimates {
                prompt_id: rec_id.to_owned(),
                estimates: vec![],
                estimator_version: self.name.clone(),
            },
            registry_version: self.registry.version(),
        }
    }

    pub fn decide(&self, tolerance: f64) -> Result<Vec<RoutingDecision>> {
        if !(tolerance.is_finite() && (0.0..=1.0).contains(&tolerance)) {
            return Err(Error::InvalidTolerance(tolerance));
        }
        match &self.kind {
            PreparedKind::Gated { estimates, config } => estimates
                .iter()
                .map(|est| route(est, tolerance, config, self.registry))
                .collect(),
            PreparedKind::Fixed {
                choices,
                choice_set,
            } => Ok(self
                .record_ids
                .iter()
                .zip(choices)
                .map(|(rid, sel)| self.bare_decision(rid, sel, choice_set, tolerance))
                .collect()),
            PreparedKind::Thresholded {
                probs,
                cheap,
                strong,
                choice_set,
            } => {
                // τ = 0 demands certainty before cheaping out; τ = 1 never
                // pays for the strong candidate.
                let cut = 1.0 - tolerance;
                Ok(probs
                    .iter()
                    .map(|(rid, p)| {
                        let sel = if *p >= cut { cheap } else { strong };
                        self.bare_decision(rid, sel, choice_set, tolerance)
                    })
                    .collect())
            }
        }
    }
}
