//! Frozen-core extension: onboard one new candidate by training small
//! adapters and a fresh head while the existing estimator stays
//! byte-identical.
//!
//! Trainable: the residual PE adapter, the linear LIE adapter, the new
//! candidate's head and identity embedding. Frozen: the core predictor and
//! all old identity embeddings. Old-candidate predictions flow through the
//! adapters into the frozen core, and a consistency penalty keeps them near
//! the frozen model's outputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    backward_net, cache_forward, fan_uniform, lie_forward, normal, pe_forward, prompt_part,
    EstimatorParameters, Extension, LieView, NetSegs, NetView, PeView, PredictorParameters, Seg,
};
use crate::dataset::DatasetSplit;
use crate::encoder::Encoder;
use crate::error::{Error, Result};

/// Adapter-training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterConfig {
    /// Hidden width of the residual PE adapter.
    pub hidden: usize,
    /// Share of each batch drawn from new-candidate data; the rest comes
    /// from old data for the consistency penalty.
    pub mixture_new: f64,
    /// Consistency weight lambda.
    pub consistency_weight: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig {
            hidden: 32,
            mixture_new: 0.7,
            consistency_weight: 1.0,
            steps: 300,
            batch_size: 32,
            learning_rate: 0.2,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl AdapterConfig {
    fn validate(&self) -> Result<()> {
        if !(self.mixture_new > 0.0 && self.mixture_new < 1.0) {
            return Err(Error::Config(
                "mixture_new must lie strictly between 0 and 1".into(),
            ));
        }
        if self.consistency_weight < 0.0 {
            return Err(Error::Config("consistency_weight must be >= 0".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::Config("hidden and batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Flat layout of the adapter training phase.
#[derive(Debug, Clone, Copy)]
struct AdapterLayout {
    d: usize,
    dp: usize,
    h: usize,
    ah: usize,
    pe_u1: Seg,
    pe_c1: Seg,
    pe_u2: Seg,
    pe_c2: Seg,
    lie_a: Seg,
    lie_b: Seg,
    head: NetSegs,
    nident: Seg,
    total: usize,
}

impl AdapterLayout {
    fn new(d: usize, dp: usize, h: usize, ah: usize) -> Self {
        let pe_u1 = Seg { start: 0, len: ah * d };
        let pe_c1 = Seg { start: pe_u1.start + pe_u1.len, len: ah };
        let pe_u2 = Seg { start: pe_c1.start + pe_c1.len, len: d * ah };
        let pe_c2 = Seg { start: pe_u2.start + pe_u2.len, len: d };
        let lie_a = Seg { start: pe_c2.start + pe_c2.len, len: dp * dp };
        let lie_b = Seg { start: lie_a.start + lie_a.len, len: dp };
        let (head, end) = NetSegs::new(lie_b.start + lie_b.len, h, d + dp);
        let nident = Seg { start: end, len: dp };
        AdapterLayout {
            d,
            dp,
            h,
            ah,
            pe_u1,
            pe_c1,
            pe_u2,
            pe_c2,
            lie_a,
            lie_b,
            head,
            nident,
            total: end + dp,
        }
    }

    fn pe_view<'a>(&self, flat: &'a [f64]) -> PeView<'a> {
        PeView {
            d: self.d,
            ah: self.ah,
            u1: &flat[self.pe_u1.range()],
            c1: &flat[self.pe_c1.range()],
            u2: &flat[self.pe_u2.range()],
            c2: &flat[self.pe_c2.range()],
        }
    }

    fn lie_view<'a>(&self, flat: &'a [f64]) -> LieView<'a> {
        LieView {
            dp: self.dp,
            a: &flat[self.lie_a.range()],
            b: &flat[self.lie_b.range()],
        }
    }
}

fn read_flat(ext: &Extension, l: &AdapterLayout) -> Vec<f64> {
    let mut flat = vec![0.0; l.total];
    flat[l.pe_u1.range()].copy_from_slice(&ext.pe_u1);
    flat[l.pe_c1.range()].copy_from_slice(&ext.pe_c1);
    flat[l.pe_u2.range()].copy_from_slice(&ext.pe_u2);
    flat[l.pe_c2.range()].copy_from_slice(&ext.pe_c2);
    flat[l.lie_a.range()].copy_from_slice(&ext.lie_a);
    flat[l.lie_b.range()].copy_from_slice(&ext.lie_b);
    flat[l.head.w1.range()].copy_from_slice(&ext.head.w1);
    flat[l.head.b1.range()].copy_from_slice(&ext.head.b1);
    flat[l.head.w2.range()].copy_from_slice(&ext.head.w2);
    flat[l.head.b2.start] = ext.head.b2;
    flat[l.nident.range()].copy_from_slice(&ext.new_identity);
    flat
}

fn write_flat(ext: &mut Extension, l: &AdapterLayout, flat: &[f64]) {
    ext.pe_u1.copy_from_slice(&flat[l.pe_u1.range()]);
    ext.pe_c1.copy_from_slice(&flat[l.pe_c1.range()]);
    ext.pe_u2.copy_from_slice(&flat[l.pe_u2.range()]);
    ext.pe_c2.copy_from_slice(&flat[l.pe_c2.range()]);
    ext.lie_a.copy_from_slice(&flat[l.lie_a.range()]);
    ext.lie_b.copy_from_slice(&flat[l.lie_b.range()]);
    ext.head.w1.copy_from_slice(&flat[l.head.w1.range()]);
    ext.head.b1.copy_from_slice(&flat[l.head.b1.range()]);
    ext.head.w2.copy_from_slice(&flat[l.head.w2.range()]);
    ext.head.b2 = flat[l.head.b2.start];
    ext.new_identity.copy_from_slice(&flat[l.nident.range()]);
}

/// Identity-initialized adapters: zero residual on the prompt path,
/// A = I and b = 0 on the identity path, seeded fresh head and identity.
fn init_extension(
    frozen: &EstimatorParameters,
    new_candidate: &str,
    ah: usize,
    rng: &mut ChaCha8Rng,
) -> Extension {
    let (d, dp, h) = (frozen.d, frozen.d_prime, frozen.hidden);
    let mut pe_u1 = vec![0.0; ah * d];
    fan_uniform(rng, d, ah, &mut pe_u1);
    let mut lie_a = vec![0.0; dp * dp];
    for t in 0..dp {
        lie_a[t * dp + t] = 1.0;
    }
    let mut head = PredictorParameters::zeros(h, d + dp);
    fan_uniform(rng, d + dp, h, &mut head.w1);
    fan_uniform(rng, h, 1, &mut head.w2);
    Extension {
        new_candidate: new_candidate.to_owned(),
        pe_u1,
        pe_c1: vec![0.0; ah],
        pe_u2: vec![0.0; d * ah], // zero residual: exact identity at step 0
        pe_c2: vec![0.0; d],
        pe_hidden: ah,
        lie_a,
        lie_b: vec![0.0; dp],
        head,
        new_identity: (0..dp).map(|_| 0.1 * normal(rng)).collect(),
    }
}

/// Cached training inputs for the adapter phase.
struct AdapterData {
    /// New-candidate records: (prompt embedding, new-candidate reward).
    new: Vec<(Vec<f64>, f64)>,
    /// Old records: (prompt embedding, frozen predictions per old candidate).
    old: Vec<(Vec<f64>, Vec<f64>)>,
    /// Frozen old identity embeddings, candidate order.
    old_idents: Vec<Vec<f64>>,
}

/// Batch objective and its gradient over the adapter flat vector:
/// mean squared error on the new candidate over the new portion, plus
/// lambda times the mean squared drift from frozen predictions over the
/// old portion. Used by the training loop and the gradient tests.
#[allow(clippy::too_many_arguments)]
fn batch_gradient(
    flat: &[f64],
    l: &AdapterLayout,
    core: &NetView,
    data: &AdapterData,
    new_batch: &[usize],
    old_batch: &[usize],
    lambda: f64,
    grad: &mut [f64],
) -> f64 {
    let pe = l.pe_view(flat);
    let lie = l.lie_view(flat);
    let head = l.head.view(flat, l.d, l.dp, l.h);
    let new_ident = &flat[l.nident.range()];
    let k_old = data.old_idents.len();
    let mut loss = 0.0;

    let mut d_padj = vec![0.0; l.d];
    let mut d_e = vec![0.0; l.dp];

    // New portion: supervised on the new candidate through the fresh head.
    let scale_new = 1.0 / new_batch.len().max(1) as f64;
    for &ri in new_batch {
        let (p, label) = &data.new[ri];
        let (za, p_adj) = pe_forward(&pe, p);
        let e_new = lie_forward(&lie, new_ident);
        let head_pp = prompt_part(&head, &p_adj);
        let (z1, r) = cache_forward(&head, &head_pp, &e_new);
        let diff = r - label;
        loss += diff * diff * scale_new;
        let dldr = 2.0 * diff * scale_new;
        d_padj.iter_mut().for_each(|x| *x = 0.0);
        d_e.iter_mut().for_each(|x| *x = 0.0);
        backward_net(
            &head,
            &p_adj,
            &e_new,
            &z1,
            r,
            dldr,
            Some((grad, &l.head)),
            Some(&mut d_padj),
            Some(&mut d_e),
        );
        backward_lie(flat, l, new_ident, &d_e, true, grad);
        backward_pe(flat, l, p, &za, &d_padj, grad);
    }

    // Old portion: consistency against the frozen model through the
    // adapted path; gradients stop at the frozen core boundary.
    if lambda > 0.0 && !old_batch.is_empty() {
        let scale_old = lambda / (old_batch.len() * k_old) as f64;
        let mut d_padj_total = vec![0.0; l.d];
        for &ri in old_batch {
            let (p, frozen_preds) = &data.old[ri];
            let (za, p_adj) = pe_forward(&pe, p);
            let core_pp = prompt_part(core, &p_adj);
            d_padj_total.iter_mut().for_each(|x| *x = 0.0);
            for (j, e_raw) in data.old_idents.iter().enumerate() {
                let e_adj = lie_forward(&lie, e_raw);
                let (z1, r) = cache_forward(core, &core_pp, &e_adj);
                let diff = r - frozen_preds[j];
                loss += diff * diff * scale_old;
                let dldr = 2.0 * diff * scale_old;
                d_e.iter_mut().for_each(|x| *x = 0.0);
                backward_net(
                    core,
                    &p_adj,
                    &e_adj,
                    &z1,
                    r,
                    dldr,
                    None,
                    Some(&mut d_padj_total),
                    Some(&mut d_e),
                );
                backward_lie(flat, l, e_raw, &d_e, false, grad);
            }
            backward_pe(flat, l, p, &za, &d_padj_total, grad);
        }
    }
    loss
}

/// Gradient of the LIE adapter given d(e'); optionally flows into the new
/// identity embedding (the only trainable input on that path).
fn backward_lie(
    flat: &[f64],
    l: &AdapterLayout,
    e_in: &[f64],
    d_e_out: &[f64],
    into_new_identity: bool,
    grad: &mut [f64],
) {
    let dp = l.dp;
    let a = &flat[l.lie_a.range()];
    for t in 0..dp {
        let g = d_e_out[t];
        if g == 0.0 {
            continue;
        }
        grad[l.lie_b.start + t] += g;
        let row = l.lie_a.start + t * dp;
        for (u, ev) in e_in.iter().enumerate() {
            grad[row + u] += g * ev;
        }
    }
    if into_new_identity {
        for u in 0..dp {
            let mut acc = 0.0;
            for (t, g) in d_e_out.iter().enumerate() {
                acc += a[t * dp + u] * g;
            }
            grad[l.nident.start + u] += acc;
        }
    }
}

/// Gradient of the residual PE adapter given d(p').
fn backward_pe(
    flat: &[f64],
    l: &AdapterLayout,
    p: &[f64],
    za: &[f64],
    d_padj: &[f64],
    grad: &mut [f64],
) {
    let (d, ah) = (l.d, l.ah);
    let u2 = &flat[l.pe_u2.range()];
    let mut d_za = vec![0.0; ah];
    for t in 0..d {
        let g = d_padj[t];
        if g == 0.0 {
            continue;
        }
        grad[l.pe_c2.start + t] += g;
        for s in 0..ah {
            if za[s] > 0.0 {
                grad[l.pe_u2.start + t * ah + s] += g * za[s];
                d_za[s] += g * u2[t * ah + s];
            }
        }
    }
    for s in 0..ah {
        if d_za[s] == 0.0 {
            continue;
        }
        grad[l.pe_c1.start + s] += d_za[s];
        let row = l.pe_u1.start + s * d;
        for (t, pv) in p.iter().enumerate() {
            grad[row + t] += d_za[s] * pv;
        }
    }
}

/// Extend a trained estimator with one new candidate. The returned value
/// carries the frozen core untouched plus trained adapters; at step 0 the
/// adapted path reproduces frozen predictions exactly.
pub fn extend_with_adapter(
    frozen: &EstimatorParameters,
    new_candidate: &str,
    new_data: &DatasetSplit,
    old_data: &DatasetSplit,
    encoder: &Encoder,
    config: &AdapterConfig,
) -> Result<EstimatorParameters> {
    config.validate()?;
    if frozen.extension.is_some() {
        return Err(Error::Config(
            "estimator already extended; stacked adapters are not supported".into(),
        ));
    }
    if frozen.covers(new_candidate) {
        return Err(Error::CandidateAlreadyPresent(new_candidate.to_owned()));
    }
    if new_data.is_empty() {
        return Err(Error::EmptyInput("new_data"));
    }
    if old_data.is_empty() {
        return Err(Error::EmptyInput("old_data"));
    }
    frozen.check_encoder(encoder)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut ext = init_extension(frozen, new_candidate, config.hidden, &mut rng);

    // Cache embeddings, labels, and frozen predictions once.
    let core = NetView::from_predictor(&frozen.predictor, frozen.d, frozen.d_prime);
    let old_idents: Vec<Vec<f64>> = frozen
        .identities
        .iter()
        .map(|i| i.values.clone())
        .collect();
    let mut new_recs = Vec::with_capacity(new_data.len());
    for rec in &new_data.records {
        let label = rec.reward(new_candidate).map_err(|e| e.for_prompt(&rec.id))?;
        let emb = encoder.encode(&rec.id, &rec.prompt)?;
        new_recs.push((emb.values, label));
    }
    let mut old_recs = Vec::with_capacity(old_data.len());
    for rec in &old_data.records {
        let emb = encoder.encode(&rec.id, &rec.prompt)?;
        let pp = prompt_part(&core, &emb.values);
        let frozen_preds: Vec<f64> = old_idents
            .iter()
            .map(|e| super::value_forward(&core, &pp, e))
            .collect();
        old_recs.push((emb.values, frozen_preds));
    }
    let data = AdapterData {
        new: new_recs,
        old: old_recs,
        old_idents,
    };

    let l = AdapterLayout::new(frozen.d, frozen.d_prime, frozen.hidden, config.hidden);
    let mut flat = read_flat(&ext, &l);
    let mut velocity = vec![0.0; l.total];
    let mut grad = vec![0.0; l.total];
    let n_new_per_batch = ((config.mixture_new * config.batch_size as f64).round() as usize)
        .clamp(1, config.batch_size.saturating_sub(1).max(1));
    let n_old_per_batch = config.batch_size - n_new_per_batch;

    for step in 1..=config.steps as u64 {
        let new_batch: Vec<usize> = (0..n_new_per_batch)
            .map(|_| rng.gen_range(0..data.new.len()))
            .collect();
        let old_batch: Vec<usize> = (0..n_old_per_batch)
            .map(|_| rng.gen_range(0..data.old.len()))
            .collect();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let loss = batch_gradient(
            &flat,
            &l,
            &core,
            &data,
            &new_batch,
            &old_batch,
            config.consistency_weight,
            &mut grad,
        );
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        for i in 0..l.total {
            velocity[i] = config.momentum * velocity[i] - config.learning_rate * grad[i];
            flat[i] += velocity[i];
        }
    }
    write_flat(&mut ext, &l, &flat);

    let mut extended = frozen.clone();
    for ident in &mut extended.identities {
        ident.trainable = false;
    }
    extended.extension = Some(ext);
    extended.meta.steps += config.steps as u64;
    extended.refresh_version();
    Ok(extended)
}
