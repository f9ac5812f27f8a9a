//! Seeded mini-batch gradient descent for the core estimator.
//!
//! Single-threaded and bit-reproducible: the only randomness is the
//! parameter init and the per-epoch shuffle, both driven by one ChaCha
//! stream seeded from the config.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    backward_net, cache_forward, loss, prompt_part, value_forward, EstimatorParameters, LossHyper,
    LossKind, DEFAULT_D_PRIME, DEFAULT_HIDDEN,
};
use crate::dataset::DatasetSplit;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::registry::Registry;

/// Training hyperparameters. Defaults suit the bundled synthetic data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// 0 disables momentum.
    pub momentum: f64,
    pub hinge_margin: f64,
    pub listnet_temperature: f64,
    /// Evaluate dev MAE every this many epochs; 0 disables.
    pub eval_every: usize,
    pub d_prime: usize,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Mse,
            learning_rate: 0.5,
            batch_size: 32,
            epochs: 20,
            seed: 0,
            momentum: 0.9,
            hinge_margin: 0.05,
            listnet_temperature: 0.05,
            eval_every: 1,
            d_prime: DEFAULT_D_PRIME,
            hidden: DEFAULT_HIDDEN,
        }
    }
}

impl TrainConfig {
    pub fn hyper(&self) -> LossHyper {
        LossHyper {
            hinge_margin: self.hinge_margin,
            listnet_temperature: self.listnet_temperature,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.hinge_margin < 0.0 {
            return Err(Error::Config("hinge_margin must be >= 0".into()));
        }
        if !(self.listnet_temperature > 0.0) {
            return Err(Error::Config("listnet_temperature must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_mae: Option<f64>,
}

/// Machine-readable training log, one entry per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub family: String,
    pub loss: LossKind,
    pub seed: u64,
    pub steps: u64,
    pub epochs: Vec<EpochStats>,
}

/// Cached per-record training inputs: prompt embedding and the label
/// vector aligned with the estimator's candidate order.
struct Prepared {
    embeddings: Vec<Vec<f64>>,
    labels: Vec<Vec<f64>>,
}

fn prepare(
    split: &DatasetSplit,
    registry: &Registry,
    encoder: &Encoder,
    candidate_ids: &[String],
) -> Result<Prepared> {
    let mut embeddings = Vec::with_capacity(split.len());
    let mut labels = Vec::with_capacity(split.len());
    for rec in &split.records {
        rec.validate(registry)
            .map_err(|e| e.for_prompt(&rec.id))?;
        embeddings.push(encoder.encode(&rec.id, &rec.prompt)?.values);
        let row: Vec<f64> = candidate_ids
            .iter()
            .map(|cid| rec.reward(cid))
            .collect::<Result<_>>()
            .map_err(|e| e.for_prompt(&rec.id))?;
        labels.push(row);
    }
    Ok(Prepared { embeddings, labels })
}

/// Train a fresh estimator for the split's family.
pub fn train(
    split: &DatasetSplit,
    registry: &Registry,
    encoder: &Encoder,
    config: &TrainConfig,
    dev: Option<&DatasetSplit>,
) -> Result<(EstimatorParameters, TrainLog)> {
    config.validate()?;
    if split.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let family = split.family()?.to_owned();
    let mut params = EstimatorParameters::init(
        registry,
        &family,
        encoder,
        config.d_prime,
        config.hidden,
        config.seed,
    )?;
    params.meta.loss = config.loss;
    let candidate_ids = params.candidate_ids();
    let data = prepare(split, registry, encoder, &candidate_ids)?;
    let dev_data = dev
        .map(|d| prepare(d, registry, encoder, &candidate_ids))
        .transpose()?;

    let l = params.core_layout();
    let mut flat = params.read_core_flat();
    let mut velocity = vec![0.0; l.total];
    let mut grad = vec![0.0; l.total];
    let hyper = config.hyper();
    // Reuse the init RNG stream so the whole run hangs off one seed.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let n = split.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut step: u64 = 0;
    let mut log = TrainLog {
        family: family.clone(),
        loss: config.loss,
        seed: config.seed,
        steps: 0,
        epochs: Vec::with_capacity(config.epochs),
    };

    for epoch in 0..config.epochs {
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            let scale = 1.0 / batch.len() as f64;
            for &ri in batch {
                let p = &data.embeddings[ri];
                let v = l.net.view(&flat, l.d, l.dp, l.h);
                let pp = prompt_part(&v, p);
                let mut preds = Vec::with_capacity(l.k);
                let mut cached = Vec::with_capacity(l.k);
                for j in 0..l.k {
                    let (z1, r) = cache_forward(&v, &pp, &flat[l.ident(j)]);
                    preds.push(r);
                    cached.push(z1);
                }
                let (value, dpred) = loss(config.loss, &preds, &data.labels[ri], &hyper)?;
                batch_loss += value * scale;
                let mut de = vec![0.0; l.dp];
                for j in 0..l.k {
                    de.iter_mut().for_each(|x| *x = 0.0);
                    let e = flat[l.ident(j)].to_vec();
                    backward_net(
                        &v,
                        p,
                        &e,
                        &cached[j],
                        preds[j],
                        dpred[j] * scale,
                        Some((&mut grad, &l.net)),
                        None,
                        Some(&mut de),
                    );
                    let start = l.ident(j).start;
                    for (t, g) in de.iter().enumerate() {
                        grad[start + t] += g;
                    }
                }
            }
            step += 1;
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            for i in 0..l.total {
                velocity[i] = config.momentum * velocity[i] - config.learning_rate * grad[i];
                flat[i] += velocity[i];
            }
            epoch_loss += batch_loss * batch.len() as f64;
        }
        let dev_mae = match (&dev_data, config.eval_every) {
            (Some(devd), every) if every > 0 && (epoch + 1) % every == 0 => {
                Some(flat_mae(&flat, &l, devd))
            }
            _ => None,
        };
        log.epochs.push(EpochStats {
            epoch: epoch + 1,
            train_loss: epoch_loss / n as f64,
            dev_mae,
        });
    }

    params.write_core_flat(&flat);
    params.meta.steps = step;
    params.refresh_version();
    log.steps = step;
    Ok((params, log))
}

/// MAE over all (record, candidate) pairs, evaluated on the flat params.
fn flat_mae(flat: &[f64], l: &super::CoreLayout, data: &Prepared) -> f64 {
    let v = l.net.view(flat, l.d, l.dp, l.h);
    let mut total = 0.0;
    let mut count = 0usize;
    for (p, labels) in data.embeddings.iter().zip(&data.labels) {
        let pp = prompt_part(&v, p);
        for (j, label) in labels.iter().enumerate() {
            let r = value_forward(&v, &pp, &flat[l.ident(j)]);
            total += (r - label).abs();
            count += 1;
        }
    }
    total / count as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthesize, DifficultyModel, RewardProfile, SynthConfig, TokenRange};
    use crate::encoder::EncoderSpec;

    fn small_synth(n: usize, seed: u64) -> (DatasetSplit, Registry) {
        let reg = Registry::bundled();
        let config = SynthConfig {
            family: "nova".into(),
            n,
            seed,
            prompt_words: 24,
            input_tokens: TokenRange { min: 20, max: 60 },
            output_tokens: TokenRange { min: 20, max: 60 },
            difficulty: DifficultyModel::DifficultyLinked {
                profiles: vec![
                    RewardProfile {
                        intercept: 0.95,
                        slope: 0.1,
                    },
                    RewardProfile {
                        intercept: 0.9,
                        slope: 0.8,
                    },
                ],
                noise: 0.02,
            },
            id_prefix: None,
        };
        (synthesize(&config, &reg).unwrap(), reg)
    }

    fn enc(d: usize) -> Encoder {
        Encoder::from_spec(&EncoderSpec::hashed(d)).unwrap()
    }

    fn quick_config(epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            seed,
            d_prime: 8,
            hidden: 16,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (split, reg) = small_synth(50, 1);
        let encoder = enc(16);
        let (trained, log) = train(&split, &reg, &encoder, &quick_config(0, 3), None).unwrap();
        let init = EstimatorParameters::init(&reg, "nova", &encoder, 8, 16, 3).unwrap();
        assert_eq!(trained.predictor, init.predictor);
        assert_eq!(trained.identities, init.identities);
        assert_eq!(trained.meta.steps, 0);
        assert!(log.epochs.is_empty());
    }

    #[test]
    fn same_seed_gives_bit_identical_parameters() {
        let (split, reg) = small_synth(80, 2);
        let encoder = enc(16);
        let (a, _) = train(&split, &reg, &encoder, &quick_config(3, 7), None).unwrap();
        let (b, _) = train(&split, &reg, &encoder, &quick_config(3, 7), None).unwrap();
        assert_eq!(a, b);
        let (c, _) = train(&split, &reg, &encoder, &quick_config(3, 8), None).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn loss_decreases_on_learnable_data() {
        let (split, reg) = small_synth(200, 5);
        let encoder = enc(32);
        let config = TrainConfig {
            epochs: 8,
            seed: 1,
            d_prime: 8,
            hidden: 32,
            ..TrainConfig::default()
        };
        let (_, log) = train(&split, &reg, &encoder, &config, Some(&split)).unwrap();
        let first = log.epochs.first().unwrap().train_loss;
        let last = log.epochs.last().unwrap().train_loss;
        assert!(last < first, "loss did not improve: {first} -> {last}");
        assert!(log.epochs.iter().all(|e| e.dev_mae.is_some()));
    }

    #[test]
    fn empty_split_rejected() {
        let reg = Registry::bundled();
        let split = DatasetSplit::new("train", vec![]).unwrap();
        assert!(matches!(
            train(&split, &reg, &enc(8), &quick_config(1, 0), None).unwrap_err(),
            Error::EmptyDataset
        ));
    }

    #[test]
    fn exploding_learning_rate_aborts_with_step() {
        let (split, reg) = small_synth(40, 3);
        // After the first explosive update the W2 dot product mixes +inf and
        // -inf terms, so the next loss is NaN and training must stop.
        let config = TrainConfig {
            learning_rate: 1e200,
            epochs: 10,
            seed: 0,
            d_prime: 4,
            hidden: 8,
            ..TrainConfig::default()
        };
        match train(&split, &reg, &enc(8), &config, None) {
            Err(Error::NonFiniteLoss { step }) => assert!(step >= 2),
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let (split, reg) = small_synth(10, 1);
        let mut config = quick_config(1, 0);
        config.learning_rate = 0.0;
        assert!(train(&split, &reg, &enc(8), &config, None).is_err());
        let mut config = quick_config(1, 0);
        config.listnet_temperature = 0.0;
        assert!(train(&split, &reg, &enc(8), &config, None).is_err());
    }
}
