//! Versioned on-disk parameter format.
//!
//! Layout: magic `TGPM`, u32 LE format version, u64 LE header length, a
//! JSON header (family, dims, candidate list, training metadata, adapter
//! shape), then all tensors as little-endian f64 in a fixed order:
//! W1, b1, W2, b2, identities in candidate order, then, if extended,
//! PE U1/c1/U2/c2, LIE A/b, head W1/b1/W2/b2, and the new identity.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::Registry;

use super::{
    EstimatorParameters, Extension, IdentityEmbedding, LossKind, PredictorParameters, TrainMeta,
};

const MAGIC: &[u8; 4] = b"TGPM";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    family: String,
    encoder_id: String,
    d: usize,
    d_prime: usize,
    hidden: usize,
    candidates: Vec<String>,
    loss: LossKind,
    seed: u64,
    steps: u64,
    extension: Option<ExtHeader>,
}

#[derive(Serialize, Deserialize)]
struct ExtHeader {
    new_candidate: String,
    pe_hidden: usize,
}

fn push_tensor(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Canonical byte serialization; also the input of the version digest.
pub(crate) fn to_bytes(params: &EstimatorParameters) -> Vec<u8> {
    let header = Header {
        family: params.family.clone(),
        encoder_id: params.encoder_id.clone(),
        d: params.d,
        d_prime: params.d_prime,
        hidden: params.hidden,
        candidates: params
            .identities
            .iter()
            .map(|i| i.candidate_id.clone())
            .collect(),
        loss: params.meta.loss,
        seed: params.meta.seed,
        steps: params.meta.steps,
        extension: params.extension.as_ref().map(|e| ExtHeader {
            new_candidate: e.new_candidate.clone(),
            pe_hidden: e.pe_hidden,
        }),
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    push_tensor(&mut out, &params.predictor.w1);
    push_tensor(&mut out, &params.predictor.b1);
    push_tensor(&mut out, &params.predictor.w2);
    push_tensor(&mut out, &[params.predictor.b2]);
    for ident in &params.identities {
        push_tensor(&mut out, &ident.values);
    }
    if let Some(ext) = &params.extension {
        push_tensor(&mut out, &ext.pe_u1);
        push_tensor(&mut out, &ext.pe_c1);
        push_tensor(&mut out, &ext.pe_u2);
        push_tensor(&mut out, &ext.pe_c2);
        push_tensor(&mut out, &ext.lie_a);
        push_tensor(&mut out, &ext.lie_b);
        push_tensor(&mut out, &ext.head.w1);
        push_tensor(&mut out, &ext.head.b1);
        push_tensor(&mut out, &ext.head.w2);
        push_tensor(&mut out, &[ext.head.b2]);
        push_tensor(&mut out, &ext.new_identity);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::ParamsCorrupt("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn tensor(&mut self, len: usize) -> Result<Vec<f64>> {
        let raw = self.take(len * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }
}

pub(crate) fn from_bytes(bytes: &[u8], registry: &Registry) -> Result<EstimatorParameters> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::ParamsCorrupt("bad magic".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::ParamsVersion {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let header_len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
    let header: Header = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| Error::ParamsCorrupt(format!("bad header: {e}")))?;
    if header.d == 0 || header.d_prime == 0 || header.hidden == 0 || header.candidates.is_empty() {
        return Err(Error::ParamsCorrupt("degenerate dimensions".into()));
    }
    for cid in &header.candidates {
        let cand = registry.get(cid)?;
        if cand.family != header.family {
            return Err(Error::ParamsCorrupt(format!(
                "candidate '{cid}' is not in family '{}'",
                header.family
            )));
        }
    }
    let input_dim = header.d + header.d_prime;
    let predictor = PredictorParameters {
        w1: r.tensor(header.hidden * input_dim)?,
        b1: r.tensor(header.hidden)?,
        w2: r.tensor(header.hidden)?,
        b2: r.tensor(1)?[0],
        hidden: header.hidden,
        input_dim,
    };
    let extended = header.extension.is_some();
    let identities: Vec<IdentityEmbedding> = header
        .candidates
        .iter()
        .map(|cid| {
            Ok(IdentityEmbedding {
                candidate_id: cid.clone(),
                values: r.tensor(header.d_prime)?,
                trainable: !extended,
            })
        })
        .collect::<Result<_>>()?;
    let extension = match &header.extension {
        None => None,
        Some(eh) => {
            registry.get(&eh.new_candidate)?;
            Some(Extension {
                new_candidate: eh.new_candidate.clone(),
                pe_u1: r.tensor(eh.pe_hidden * header.d)?,
                pe_c1: r.tensor(eh.pe_hidden)?,
                pe_u2: r.tensor(header.d * eh.pe_hidden)?,
                pe_c2: r.tensor(header.d)?,
                pe_hidden: eh.pe_hidden,
                lie_a: r.tensor(header.d_prime * header.d_prime)?,
                lie_b: r.tensor(header.d_prime)?,
                head: PredictorParameters {
                    w1: r.tensor(header.hidden * input_dim)?,
                    b1: r.tensor(header.hidden)?,
                    w2: r.tensor(header.hidden)?,
                    b2: r.tensor(1)?[0],
                    hidden: header.hidden,
                    input_dim,
                },
                new_identity: r.tensor(header.d_prime)?,
            })
        }
    };
    if r.pos != bytes.len() {
        return Err(Error::ParamsCorrupt("trailing data".into()));
    }
    let mut params = EstimatorParameters {
        family: header.family,
        encoder_id: header.encoder_id,
        d: header.d,
        d_prime: header.d_prime,
        hidden: header.hidden,
        identities,
        predictor,
        extension,
        meta: TrainMeta {
            loss: header.loss,
            seed: header.seed,
            steps: header.steps,
        },
        version: String::new(),
    };
    params.refresh_version();
    Ok(params)
}

pub fn save_params(params: &EstimatorParameters, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(params))?;
    Ok(())
}

/// Load parameters, validating every referenced candidate against the
/// registry. The caller should also run `check_encoder` before predicting.
pub fn load_params(path: impl AsRef<Path>, registry: &Registry) -> Result<EstimatorParameters> {
    from_bytes(&std::fs::read(path)?, registry)
}
