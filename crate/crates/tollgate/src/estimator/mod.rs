//! The quality estimator R(x, c): per-candidate identity embeddings fused
//! with the prompt embedding by a 2-layer feed-forward network with a
//! sigmoid head, one estimator per model family.
//!
//! Prediction: r̂ = σ(W2·ReLU(W1·[p; e_c] + b1) + b2). Training, the
//! three losses, adapter-based extension, and the parameter file format
//! live in the submodules.

// Index loops in the forward and backward passes mirror the tensor
// shapes; iterator-with-enumerate forms read worse here.
#![allow(clippy::needless_range_loop)]

mod adapter;
mod io;
mod loss;
mod train;

pub use adapter::{extend_with_adapter, AdapterConfig};
pub use io::{load_params, save_params};
pub use loss::{loss, LossHyper, LossKind};
pub use train::{train, EpochStats, TrainConfig, TrainLog};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::{Encoder, PromptEmbedding};
use crate::error::{Error, Result};
use crate::registry::Registry;

/// Default identity-embedding dimension d'.
pub const DEFAULT_D_PRIME: usize = 128;
/// Default hidden width of the fusion network.
pub const DEFAULT_HIDDEN: usize = 256;

/// Learnable per-candidate identity embedding e_c.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityEmbedding {
    pub candidate_id: String,
    pub values: Vec<f64>,
    /// Cleared when the estimator is extended: frozen identities must stay
    /// byte-identical through adapter training.
    pub trainable: bool,
}

/// Dense 2-layer network: W1 (hidden × input), b1, W2 (1 × hidden), b2.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorParameters {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub hidden: usize,
    pub input_dim: usize,
}

impl PredictorParameters {
    fn zeros(hidden: usize, input_dim: usize) -> Self {
        PredictorParameters {
            w1: vec![0.0; hidden * input_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
            hidden,
            input_dim,
        }
    }
}

/// Residual 2-layer adapter on the prompt embedding plus a linear adapter
/// on identity embeddings, with a fresh head and identity for the new
/// candidate. The core network and old identities stay frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct Extension {
    pub new_candidate: String,
    /// p' = p + U2·ReLU(U1·p + c1) + c2; U2 and c2 start at zero.
    pub pe_u1: Vec<f64>,
    pub pe_c1: Vec<f64>,
    pub pe_u2: Vec<f64>,
    pub pe_c2: Vec<f64>,
    pub pe_hidden: usize,
    /// e' = A·e + b; A starts as the identity matrix, b at zero.
    pub lie_a: Vec<f64>,
    pub lie_b: Vec<f64>,
    pub head: PredictorParameters,
    pub new_identity: Vec<f64>,
}

/// Training provenance carried with the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub loss: LossKind,
    pub seed: u64,
    pub steps: u64,
}

/// Everything needed to predict quality for one family's candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorParameters {
    pub family: String,
    pub encoder_id: String,
    pub d: usize,
    pub d_prime: usize,
    pub hidden: usize,
    pub identities: Vec<IdentityEmbedding>,
    pub predictor: PredictorParameters,
    pub extension: Option<Extension>,
    pub meta: TrainMeta,
    /// Content digest, recomputed whenever the tensors change.
    pub version: String,
}

/// Predicted rewards for one prompt, in request order.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityEstimates {
    pub prompt_id: String,
    pub estimates: Vec<(String, f64)>,
    pub estimator_version: String,
}

impl QualityEstimates {
    pub fn get(&self, candidate_id: &str) -> Option<f64> {
        self.estimates
            .iter()
            .find(|(id, _)| id == candidate_id)
            .map(|(_, v)| *v)
    }

    pub fn max_value(&self) -> f64 {
        self.estimates
            .iter()
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.estimates
            .iter()
            .map(|(_, v)| *v)
            .fold(f64::INFINITY, f64::min)
    }

    /// All candidates attaining the maximum estimate, in request order.
    pub fn argmax_ids(&self) -> Vec<&str> {
        let max = self.max_value();
        self.estimates
            .iter()
            .filter(|(_, v)| *v == max)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Standard normal draw via Box-Muller on two uniforms.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn fan_uniform(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, out: &mut [f64]) {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in out {
        *v = rng.gen_range(-a..a);
    }
}

impl EstimatorParameters {
    /// Fresh, seeded parameters for one family. W1/W2 use fan-based uniform
    /// init, biases start at zero, identity embeddings at N(0, 0.01).
    pub fn init(
        registry: &Registry,
        family: &str,
        encoder: &Encoder,
        d_prime: usize,
        hidden: usize,
        seed: u64,
    ) -> Result<Self> {
        let candidate_ids = registry.family_ids(family);
        if candidate_ids.is_empty() {
            return Err(Error::UnknownFamily(family.to_owned()));
        }
        if d_prime == 0 || hidden == 0 {
            return Err(Error::Config("d_prime and hidden must be >= 1".into()));
        }
        let d = encoder.dim();
        let input_dim = d + d_prime;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut predictor = PredictorParameters::zeros(hidden, input_dim);
        fan_uniform(&mut rng, input_dim, hidden, &mut predictor.w1);
        fan_uniform(&mut rng, hidden, 1, &mut predictor.w2);
        let identities = candidate_ids
            .into_iter()
            .map(|candidate_id| IdentityEmbedding {
                candidate_id,
                values: (0..d_prime).map(|_| 0.1 * normal(&mut rng)).collect(),
                trainable: true,
            })
            .collect();
        let mut params = EstimatorParameters {
            family: family.to_owned(),
            encoder_id: encoder.id(),
            d,
            d_prime,
            hidden,
            identities,
            predictor,
            extension: None,
            meta: TrainMeta {
                loss: LossKind::Mse,
                seed,
                steps: 0,
            },
            version: String::new(),
        };
        params.refresh_version();
        Ok(params)
    }

    /// Candidates this estimator can score, extension included.
    pub fn candidate_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .identities
            .iter()
            .map(|i| i.candidate_id.clone())
            .collect();
        if let Some(ext) = &self.extension {
            ids.push(ext.new_candidate.clone());
        }
        ids
    }

    pub fn covers(&self, candidate_id: &str) -> bool {
        self.identities
            .iter()
            .any(|i| i.candidate_id == candidate_id)
            || self
                .extension
                .as_ref()
                .is_some_and(|e| e.new_candidate == candidate_id)
    }

    fn index_of(&self, candidate_id: &str) -> Option<usize> {
        self.identities
            .iter()
            .position(|i| i.candidate_id == candidate_id)
    }

    /// The estimator must be used with the encoder it was trained for.
    pub fn check_encoder(&self, encoder: &Encoder) -> Result<()> {
        if encoder.dim() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: encoder.dim(),
                context: " between estimator and encoder".into(),
            });
        }
        if encoder.id() != self.encoder_id {
            return Err(Error::Config(format!(
                "estimator was trained with encoder '{}' but got '{}'",
                self.encoder_id,
                encoder.id()
            )));
        }
        Ok(())
    }

    /// Recompute the content digest after any tensor change.
    pub fn refresh_version(&mut self) {
        let mut hasher = Sha256::new();
        hasher.update(io::to_bytes(self));
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(12);
        for b in digest.iter().take(6) {
            hex.push_str(&format!("{b:02x}"));
        }
        self.version = hex;
    }

    /// r̂ for one candidate; identical to the corresponding `predict_all`
    /// entry by construction.
    pub fn predict(&self, embedding: &PromptEmbedding, candidate_id: &str) -> Result<f64> {
        let ids = [candidate_id.to_owned()];
        Ok(self.predict_all(embedding, &ids)?.estimates[0].1)
    }

    /// r̂ for every requested candidate, sharing the prompt-side work
    /// across candidates. Output order matches the request order.
    pub fn predict_all(
        &self,
        embedding: &PromptEmbedding,
        candidate_ids: &[String],
    ) -> Result<QualityEstimates> {
        if candidate_ids.is_empty() {
            return Err(Error::EmptyCandidateSet);
        }
        if embedding.values.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: embedding.values.len(),
                context: " in prompt embedding".into(),
            });
        }
        let p = &embedding.values;
        let core = NetView::from_predictor(&self.predictor, self.d, self.d_prime);
        let mut estimates = Vec::with_capacity(candidate_ids.len());
        match &self.extension {
            None => {
                let pp = prompt_part(&core, p);
                for cid in candidate_ids {
                    let j = self
                        .index_of(cid)
                        .ok_or_else(|| Error::UnknownCandidate(cid.clone()))?;
                    let r = value_forward(&core, &pp, &self.identities[j].values);
                    estimates.push((cid.clone(), r));
                }
            }
            Some(ext) => {
                let pe = ext.pe_view();
                let lie = ext.lie_view();
                let (_, p_adj) = pe_forward(&pe, p);
                let head = NetView::from_predictor(&ext.head, self.d, self.d_prime);
                let core_pp = prompt_part(&core, &p_adj);
                let head_pp = prompt_part(&head, &p_adj);
                for cid in candidate_ids {
                    let r = if *cid == ext.new_candidate {
                        let e = lie_forward(&lie, &ext.new_identity);
                        value_forward(&head, &head_pp, &e)
                    } else {
                        let j = self
                            .index_of(cid)
                            .ok_or_else(|| Error::UnknownCandidate(cid.clone()))?;
                        let e = lie_forward(&lie, &self.identities[j].values);
                        value_forward(&core, &core_pp, &e)
                    };
                    estimates.push((cid.clone(), r));
                }
            }
        }
        Ok(QualityEstimates {
            prompt_id: embedding.prompt_id.clone(),
            estimates,
            estimator_version: self.version.clone(),
        })
    }
}

// ---------------------------------------------------------------------------
// Shared forward/backward math over borrowed tensors. Both the struct-based
// prediction path and the flat-vector training path go through these, so the
// gradient check exercises exactly the arithmetic used everywhere.

/// Borrowed view of one 2-layer net's tensors.
pub(crate) struct NetView<'a> {
    pub d: usize,
    pub dp: usize,
    pub h: usize,
    pub w1: &'a [f64],
    pub b1: &'a [f64],
    pub w2: &'a [f64],
    pub b2: f64,
}

impl<'a> NetView<'a> {
    pub(crate) fn from_predictor(p: &'a PredictorParameters, d: usize, dp: usize) -> Self {
        NetView {
            d,
            dp,
            h: p.hidden,
            w1: &p.w1,
            b1: &p.b1,
            w2: &p.w2,
            b2: p.b2,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// b1 + W1[:, :d]·p, computed once per prompt and shared across candidates.
pub(crate) fn prompt_part(v: &NetView, p: &[f64]) -> Vec<f64> {
    let cols = v.d + v.dp;
    (0..v.h)
        .map(|i| v.b1[i] + dot(&v.w1[i * cols..i * cols + v.d], p))
        .collect()
}

/// Finish the forward pass for one candidate without caching activations.
pub(crate) fn value_forward(v: &NetView, pp: &[f64], e: &[f64]) -> f64 {
    let cols = v.d + v.dp;
    let mut z2 = v.b2;
    for i in 0..v.h {
        let z1 = pp[i] + dot(&v.w1[i * cols + v.d..i * cols + cols], e);
        if z1 > 0.0 {
            z2 += v.w2[i] * z1;
        }
    }
    sigmoid(z2)
}

/// Forward pass caching pre-activations for the backward pass.
pub(crate) fn cache_forward(v: &NetView, pp: &[f64], e: &[f64]) -> (Vec<f64>, f64) {
    let cols = v.d + v.dp;
    let mut z1 = Vec::with_capacity(v.h);
    let mut z2 = v.b2;
    for i in 0..v.h {
        let z = pp[i] + dot(&v.w1[i * cols + v.d..i * cols + cols], e);
        if z > 0.0 {
            z2 += v.w2[i] * z;
        }
        z1.push(z);
    }
    (z1, sigmoid(z2))
}

/// Offsets of one tensor inside a flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Seg {
    pub start: usize,
    pub len: usize,
}

impl Seg {
    fn new(start: usize, len: usize) -> Self {
        Seg { start, len }
    }

    pub(crate) fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Segments of a 2-layer net inside a flat vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct NetSegs {
    pub w1: Seg,
    pub b1: Seg,
    pub w2: Seg,
    pub b2: Seg,
}

impl NetSegs {
    fn new(start: usize, h: usize, input_dim: usize) -> (Self, usize) {
        let w1 = Seg::new(start, h * input_dim);
        let b1 = Seg::new(w1.start + w1.len, h);
        let w2 = Seg::new(b1.start + b1.len, h);
        let b2 = Seg::new(w2.start + w2.len, 1);
        let end = b2.start + 1;
        (NetSegs { w1, b1, w2, b2 }, end)
    }

    pub(crate) fn view<'a>(&self, flat: &'a [f64], d: usize, dp: usize, h: usize) -> NetView<'a> {
        NetView {
            d,
            dp,
            h,
            w1: &flat[self.w1.range()],
            b1: &flat[self.b1.range()],
            w2: &flat[self.w2.range()],
            b2: flat[self.b2.start],
        }
    }
}

/// Flat layout of the core training phase: predictor then identities.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CoreLayout {
    pub d: usize,
    pub dp: usize,
    pub h: usize,
    pub k: usize,
    pub net: NetSegs,
    pub idents: Seg,
    pub total: usize,
}

impl CoreLayout {
    pub(crate) fn new(d: usize, dp: usize, h: usize, k: usize) -> Self {
        let (net, end) = NetSegs::new(0, h, d + dp);
        let idents = Seg::new(end, k * dp);
        CoreLayout {
            d,
            dp,
            h,
            k,
            net,
            idents,
            total: end + idents.len,
        }
    }

    pub(crate) fn ident(&self, j: usize) -> std::ops::Range<usize> {
        let start = self.idents.start + j * self.dp;
        start..start + self.dp
    }
}

impl EstimatorParameters {
    pub(crate) fn core_layout(&self) -> CoreLayout {
        CoreLayout::new(self.d, self.d_prime, self.hidden, self.identities.len())
    }

    pub(crate) fn read_core_flat(&self) -> Vec<f64> {
        let l = self.core_layout();
        let mut flat = vec![0.0; l.total];
        flat[l.net.w1.range()].copy_from_slice(&self.predictor.w1);
        flat[l.net.b1.range()].copy_from_slice(&self.predictor.b1);
        flat[l.net.w2.range()].copy_from_slice(&self.predictor.w2);
        flat[l.net.b2.start] = self.predictor.b2;
        for (j, ident) in self.identities.iter().enumerate() {
            flat[l.ident(j)].copy_from_slice(&ident.values);
        }
        flat
    }

    pub(crate) fn write_core_flat(&mut self, flat: &[f64]) {
        let l = self.core_layout();
        debug_assert_eq!(flat.len(), l.total);
        self.predictor.w1.copy_from_slice(&flat[l.net.w1.range()]);
        self.predictor.b1.copy_from_slice(&flat[l.net.b1.range()]);
        self.predictor.w2.copy_from_slice(&flat[l.net.w2.range()]);
        self.predictor.b2 = flat[l.net.b2.start];
        for j in 0..self.identities.len() {
            let rng = l.ident(j);
            self.identities[j].values.copy_from_slice(&flat[rng]);
        }
    }
}

/// Backward pass through one 2-layer net for one candidate.
///
/// `params` writes parameter gradients (skip for a frozen net); `d_p` and
/// `d_e` accumulate input gradients when the caller needs them.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_net(
    v: &NetView,
    p_in: &[f64],
    e_in: &[f64],
    z1: &[f64],
    r: f64,
    dldr: f64,
    params: Option<(&mut [f64], &NetSegs)>,
    mut d_p: Option<&mut [f64]>,
    mut d_e: Option<&mut [f64]>,
) {
    let cols = v.d + v.dp;
    let dz2 = dldr * r * (1.0 - r);
    let mut dz1 = vec![0.0; v.h];
    for i in 0..v.h {
        if z1[i] > 0.0 {
            dz1[i] = dz2 * v.w2[i];
        }
    }
    if let Some((g, segs)) = params {
        g[segs.b2.start] += dz2;
        for i in 0..v.h {
            if z1[i] > 0.0 {
                g[segs.w2.start + i] += dz2 * z1[i];
            }
            if dz1[i] != 0.0 {
                g[segs.b1.start + i] += dz1[i];
                let row = segs.w1.start + i * cols;
                for (t, pv) in p_in.iter().enumerate() {
                    g[row + t] += dz1[i] * pv;
                }
                for (t, ev) in e_in.iter().enumerate() {
                    g[row + v.d + t] += dz1[i] * ev;
                }
            }
        }
    }
    if d_p.is_some() || d_e.is_some() {
        for i in 0..v.h {
            if dz1[i] == 0.0 {
                continue;
            }
            let row = i * cols;
            if let Some(dp_out) = d_p.as_deref_mut() {
                for t in 0..v.d {
                    dp_out[t] += dz1[i] * v.w1[row + t];
                }
            }
            if let Some(de_out) = d_e.as_deref_mut() {
                for t in 0..v.dp {
                    de_out[t] += dz1[i] * v.w1[row + v.d + t];
                }
            }
        }
    }
}

// Adapter-path forward helpers, shared by prediction and adapter training.

/// Borrowed view of the PE adapter tensors.
pub(crate) struct PeView<'a> {
    pub d: usize,
    pub ah: usize,
    pub u1: &'a [f64],
    pub c1: &'a [f64],
    pub u2: &'a [f64],
    pub c2: &'a [f64],
}

/// Borrowed view of the LIE adapter tensors.
pub(crate) struct LieView<'a> {
    pub dp: usize,
    pub a: &'a [f64],
    pub b: &'a [f64],
}

impl Extension {
    pub(crate) fn pe_view(&self) -> PeView<'_> {
        PeView {
            d: self.pe_c2.len(),
            ah: self.pe_hidden,
            u1: &self.pe_u1,
            c1: &self.pe_c1,
            u2: &self.pe_u2,
            c2: &self.pe_c2,
        }
    }

    pub(crate) fn lie_view(&self) -> LieView<'_> {
        LieView {
            dp: self.lie_b.len(),
            a: &self.lie_a,
            b: &self.lie_b,
        }
    }
}

/// PE adapter: returns (hidden pre-activations, adjusted prompt embedding).
pub(crate) fn pe_forward(v: &PeView, p: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut za = Vec::with_capacity(v.ah);
    for s in 0..v.ah {
        za.push(v.c1[s] + dot(&v.u1[s * v.d..(s + 1) * v.d], p));
    }
    let mut p_adj = Vec::with_capacity(v.d);
    for t in 0..v.d {
        let mut acc = p[t] + v.c2[t];
        for s in 0..v.ah {
            if za[s] > 0.0 {
                acc += v.u2[t * v.ah + s] * za[s];
            }
        }
        p_adj.push(acc);
    }
    (za, p_adj)
}

/// LIE adapter: e' = A·e + b.
pub(crate) fn lie_forward(v: &LieView, e: &[f64]) -> Vec<f64> {
    (0..v.dp)
        .map(|t| v.b[t] + dot(&v.a[t * v.dp..(t + 1) * v.dp], e))
        .collect()
}

/// Central finite-difference check of the full analytic parameter gradient
/// for one sample. Returns the max relative error across all parameters.
/// `labels` are aligned with the estimator's candidate order.
pub fn gradient_check(
    params: &EstimatorParameters,
    embedding: &PromptEmbedding,
    labels: &[f64],
    kind: LossKind,
    hyper: &LossHyper,
    epsilon: f64,
) -> Result<f64> {
    if epsilon <= 0.0 {
        return Err(Error::Config("epsilon must be > 0".into()));
    }
    if params.extension.is_some() {
        return Err(Error::Config(
            "gradient_check covers the core phase; extended estimators are checked in adapter training tests".into(),
        ));
    }
    if labels.len() != params.identities.len() {
        return Err(Error::LengthMismatch(labels.len(), params.identities.len()));
    }
    let l = params.core_layout();
    let mut flat = params.read_core_flat();
    let p = &embedding.values;

    let eval = |flat: &[f64]| -> Result<f64> {
        let v = l.net.view(flat, l.d, l.dp, l.h);
        let pp = prompt_part(&v, p);
        let preds: Vec<f64> = (0..l.k)
            .map(|j| value_forward(&v, &pp, &flat[l.ident(j)]))
            .collect();
        Ok(loss(kind, &preds, labels, hyper)?.0)
    };

    // Analytic gradient through the shared backward pass.
    let mut analytic = vec![0.0; l.total];
    {
        let v = l.net.view(&flat, l.d, l.dp, l.h);
        let pp = prompt_part(&v, p);
        let mut cached = Vec::with_capacity(l.k);
        let mut preds = Vec::with_capacity(l.k);
        for j in 0..l.k {
            let (z1, r) = cache_forward(&v, &pp, &flat[l.ident(j)]);
            preds.push(r);
            cached.push((z1, r));
        }
        let (_, dpred) = loss(kind, &preds, labels, hyper)?;
        let mut de = vec![0.0; l.dp];
        for j in 0..l.k {
            let (z1, r) = &cached[j];
            de.iter_mut().for_each(|x| *x = 0.0);
            let e = flat[l.ident(j)].to_vec();
            backward_net(
                &v,
                p,
                &e,
                z1,
                *r,
                dpred[j],
                Some((&mut analytic, &l.net)),
                None,
                Some(&mut de),
            );
            for (t, g) in de.iter().enumerate() {
                analytic[l.ident(j).start + t] += g;
            }
        }
    }

    let mut max_rel = 0.0f64;
    for i in 0..l.total {
        let orig = flat[i];
        flat[i] = orig + epsilon;
        let hi = eval(&flat)?;
        flat[i] = orig - epsilon;
        let lo = eval(&flat)?;
        flat[i] = orig;
        let numeric = (hi - lo) / (2.0 * epsilon);
        let denom = (numeric.abs() + analytic[i].abs()).max(1e-6);
        max_rel = max_rel.max(((numeric - analytic[i]) / denom).abs());
    }
    Ok(max_rel)
}
