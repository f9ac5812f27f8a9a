//! Training losses over one record's prediction vector, with analytic
//! gradients with respect to the predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which loss shapes the estimator's training signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Pointwise regression to the reward labels.
    #[default]
    Mse,
    /// Pairwise ranking: ordered pairs must be separated by a margin.
    Hinge,
    /// Listwise: cross-entropy between tempered label and prediction
    /// distributions.
    Listnet,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::Hinge => "hinge",
            LossKind::Listnet => "listnet",
        })
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "hinge" => Ok(LossKind::Hinge),
            "listnet" => Ok(LossKind::Listnet),
            other => Err(Error::Config(format!(
                "unknown loss '{other}' (expected mse, hinge, or listnet)"
            ))),
        }
    }
}

/// Loss hyperparameters. Rewards live in [0, 1], so the ListNet softmax
/// needs a small temperature to avoid a nearly uniform target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossHyper {
    pub hinge_margin: f64,
    pub listnet_temperature: f64,
}

impl Default for LossHyper {
    fn default() -> Self {
        LossHyper {
            hinge_margin: 0.05,
            listnet_temperature: 0.05,
        }
    }
}

/// Loss value and its gradient with respect to `predictions`.
///
/// - mse: mean over candidates of (r̂ - r)².
/// - hinge: mean over ordered pairs (a, b) with r_a > r_b of
///   max(0, margin - (r̂_a - r̂_b)); zero pairs give loss 0.
/// - listnet: cross-entropy between softmax(labels/T) and
///   softmax(predictions/T).
pub fn loss(
    kind: LossKind,
    predictions: &[f64],
    labels: &[f64],
    hyper: &LossHyper,
) -> Result<(f64, Vec<f64>)> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch(predictions.len(), labels.len()));
    }
    if predictions.is_empty() {
        return Err(Error::EmptyInput("predictions"));
    }
    let n = predictions.len();
    match kind {
        LossKind::Mse => {
            let mut value = 0.0;
            let mut grad = vec![0.0; n];
            for i in 0..n {
                let diff = predictions[i] - labels[i];
                value += diff * diff;
                grad[i] = 2.0 * diff / n as f64;
            }
            Ok((value / n as f64, grad))
        }
        LossKind::Hinge => {
            let margin = hyper.hinge_margin;
            let mut terms = Vec::new();
            for a in 0..n {
                for b in 0..n {
                    if labels[a] > labels[b] {
                        terms.push((a, b, margin - (predictions[a] - predictions[b])));
                    }
                }
            }
            let mut grad = vec![0.0; n];
            if terms.is_empty() {
                return Ok((0.0, grad));
            }
            let p = terms.len() as f64;
            let mut value = 0.0;
            for (a, b, t) in terms {
                if t > 0.0 {
                    value += t;
                    grad[a] -= 1.0 / p;
                    grad[b] += 1.0 / p;
                }
            }
            Ok((value / p, grad))
        }
        LossKind::Listnet => {
            let t = hyper.listnet_temperature;
            let q = softmax_scaled(labels, t);
            let s = softmax_scaled(predictions, t);
            // Cross-entropy via log-sum-exp for stability.
            let max_p = predictions.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_z = predictions
                .iter()
                .map(|p| ((p - max_p) / t).exp())
                .sum::<f64>()
                .ln();
            let mut value = 0.0;
            let mut grad = vec![0.0; n];
            for i in 0..n {
                let log_s = (predictions[i] - max_p) / t - log_z;
                value -= q[i] * log_s;
                grad[i] = (s[i] - q[i]) / t;
            }
            Ok((value, grad))
        }
    }
}

fn softmax_scaled(values: &[f64], temperature: f64) -> Vec<f64> {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values
        .iter()
        .map(|v| ((v - max) / temperature).exp())
        .collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
