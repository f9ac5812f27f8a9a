//! Prompt featurizers.
//!
//! Two providers sit behind one interface: a hashed n-gram featurizer that
//! needs no model downloads, and a precomputed store for injecting real
//! transformer embeddings. Both produce fixed-dimension f64 vectors.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default output dimension.
pub const DEFAULT_DIM: usize = 768;
/// Default hash seed for the n-gram featurizer.
pub const DEFAULT_SEED: u64 = 17;

/// A fixed-dimension embedding of one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbedding {
    pub values: Vec<f64>,
    pub encoder_id: String,
    pub prompt_id: String,
}

/// Declarative encoder configuration; serializable so artifacts can pin it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderSpec {
    /// Word unigrams + bigrams + char trigrams, signed-hashed into d buckets.
    HashedNgram { d: usize, seed: u64 },
    /// Lookup table of externally computed vectors, keyed by prompt id.
    Precomputed { path: String },
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec::HashedNgram {
            d: DEFAULT_DIM,
            seed: DEFAULT_SEED,
        }
    }
}

impl EncoderSpec {
    pub fn hashed(d: usize) -> Self {
        EncoderSpec::HashedNgram {
            d,
            seed: DEFAULT_SEED,
        }
    }
}

/// A ready-to-use encoder. Immutable after construction; `encode` is pure.
#[derive(Debug, Clone)]
pub enum Encoder {
    HashedNgram { d: usize, seed: u64 },
    Precomputed(EmbeddingStore),
}

impl Encoder {
    pub fn from_spec(spec: &EncoderSpec) -> Result<Self> {
        match spec {
            EncoderSpec::HashedNgram { d, seed } => {
                if *d == 0 {
                    return Err(Error::Config("encoder dimension must be >= 1".into()));
                }
                Ok(Encoder::HashedNgram { d: *d, seed: *seed })
            }
            EncoderSpec::Precomputed { path } => {
                Ok(Encoder::Precomputed(EmbeddingStore::load(path)?))
            }
        }
    }

    /// Output dimension d.
    pub fn dim(&self) -> usize {
        match self {
            Encoder::HashedNgram { d, .. } => *d,
            Encoder::Precomputed(store) => store.dim(),
        }
    }

    /// Stable identifier recorded in artifacts that depend on this encoder.
    pub fn id(&self) -> String {
        match self {
            Encoder::HashedNgram { d, seed } => format!("hashed-ngram/d={d}/seed={seed}"),
            Encoder::Precomputed(store) => format!("precomputed/d={}", store.dim()),
        }
    }

    /// Embed one prompt. Hashed output is L2-normalized; the empty prompt
    /// maps to the zero vector.
    pub fn encode(&self, prompt_id: &str, prompt: &str) -> Result<PromptEmbedding> {
        let values = match self {
            Encoder::HashedNgram { d, seed } => hashed_ngram_features(prompt, *d, *seed),
            Encoder::Precomputed(store) => store.get(prompt_id)?.to_vec(),
        };
        Ok(PromptEmbedding {
            values,
            encoder_id: self.id(),
            prompt_id: prompt_id.to_owned(),
        })
    }

    /// Elementwise `encode`, order preserved; first failure is tagged with
    /// the offending prompt id.
    pub fn encode_batch(&self, prompts: &[(String, String)]) -> Result<Vec<PromptEmbedding>> {
        prompts
            .iter()
            .map(|(id, text)| self.encode(id, text).map_err(|e| e.for_prompt(id)))
            .collect()
    }
}

/// 64-bit FNV-1a over a namespace byte and the token bytes, folded with the
/// configured seed so different seeds give unrelated feature layouts.
fn fnv1a(seed: u64, namespace: u8, token: &str) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = OFFSET ^ seed;
    h = (h ^ namespace as u64).wrapping_mul(PRIME);
    for b in token.as_bytes() {
        h = (h ^ *b as u64).wrapping_mul(PRIME);
    }
    h
}

fn hashed_ngram_features(prompt: &str, d: usize, seed: u64) -> Vec<f64> {
    let mut acc = vec![0.0f64; d];
    let lowered = prompt.to_lowercase();
    let words: Vec<&str> = lowered.split_whitespace().collect();
    if words.is_empty() {
        return acc; // empty prompt: zero vector by contract
    }
    let mut bump = |h: u64| {
        let idx = (h % d as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        acc[idx] += sign;
    };
    for w in &words {
        bump(fnv1a(seed, b'u', w));
    }
    let mut pair = String::new();
    for win in words.windows(2) {
        pair.clear();
        let _ = write!(pair, "{}\u{1f}{}", win[0], win[1]);
        bump(fnv1a(seed, b'b', &pair));
    }
    // Char trigrams over the whitespace-collapsed text, spaces included.
    let joined = words.join(" ");
    let chars: Vec<char> = joined.chars().collect();
    let mut tri = String::new();
    for win in chars.windows(3) {
        tri.clear();
        tri.extend(win.iter());
        bump(fnv1a(seed, b'c', &tri));
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut acc {
            *v /= norm;
        }
    }
    acc
}

const STORE_MAGIC: &str = "tollgate-embeddings";
const STORE_VERSION: u32 = 1;

/// In-memory table of precomputed embeddings with O(1) lookup by prompt id.
///
/// On-disk layout (text, one record per line):
/// ```text
/// tollgate-embeddings v1 d=<dim> count=<n>
/// <prompt_id>\t<f64> <f64> ... (d values)
/// ```
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dim: usize,
    rows: HashMap<String, Vec<f64>>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore {
            dim,
            rows: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn insert(&mut self, prompt_id: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: values.len(),
                context: format!(" for prompt '{prompt_id}'"),
            });
        }
        self.rows.insert(prompt_id.to_owned(), values);
        Ok(())
    }

    pub fn get(&self, prompt_id: &str) -> Result<&[f64]> {
        self.rows
            .get(prompt_id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownPromptId(prompt_id.to_owned()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| Error::Config("embedding store: empty file".into()))?;
        let (dim, count) = parse_store_header(&header)?;
        let mut store = EmbeddingStore::new(dim);
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (id, rest) = line.split_once('\t').ok_or_else(|| {
                Error::Config(format!("embedding store: row {}: missing tab", row + 1))
            })?;
            let values: Vec<f64> = rest
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| {
                        Error::Config(format!("embedding store: row {}: bad float", row + 1))
                    })
                })
                .collect::<Result<_>>()?;
            if values.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: values.len(),
                    context: format!(" in embedding store row {}", row + 1),
                });
            }
            store.rows.insert(id.to_owned(), values);
        }
        if store.rows.len() != count {
            return Err(Error::Config(format!(
                "embedding store: header count {} but {} rows",
                count,
                store.rows.len()
            )));
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            out,
            "{STORE_MAGIC} v{STORE_VERSION} d={} count={}",
            self.dim,
            self.rows.len()
        )?;
        // Sort ids so saved stores are byte-stable.
        let mut ids: Vec<&String> = self.rows.keys().collect();
        ids.sort();
        for id in ids {
            let vals: Vec<String> = self.rows[id].iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{id}\t{}", vals.join(" "))?;
        }
        out.flush()?;
        Ok(())
    }
}

fn parse_store_header(header: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("embedding store: bad header '{header}'"));
    let mut parts = header.split_whitespace();
    if parts.next() != Some(STORE_MAGIC) {
        return Err(bad());
    }
    let version = parts.next().ok_or_else(bad)?;
    if version != format!("v{STORE_VERSION}") {
        return Err(Error::Config(format!(
            "embedding store: unsupported version '{version}'"
        )));
    }
    let dim = parts
        .next()
        .and_then(|t| t.strip_prefix("d="))
        .and_then(|t| t.parse().ok())
        .ok_or_else(bad)?;
    let count = parts
        .next()
        .and_then(|t| t.strip_prefix("count="))
        .and_then(|t| t.parse().ok())
        .ok_or_else(bad)?;
    Ok((dim, count))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hashed(d: usize) -> Encoder {
        Encoder::from_spec(&EncoderSpec::hashed(d)).unwrap()
    }

    #[test]
    fn same_prompt_same_vector() {
        let enc = hashed(64);
        let a = enc.encode("p1", "what is the capital of France?").unwrap();
        let b = enc.encode("p1", "what is the capital of France?").unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn empty_prompt_is_zero_vector() {
        let enc = hashed(32);
        let e = enc.encode("p0", "").unwrap();
        assert_eq!(e.values, vec![0.0; 32]);
        let ws = enc.encode("p0", " \t\n").unwrap();
        assert_eq!(ws.values, vec![0.0; 32]);
    }

    #[test]
    fn nonempty_prompt_has_unit_norm() {
        let enc = hashed(128);
        for text in ["hello", "a longer prompt with several words", "x y z"] {
            let e = enc.encode("p", text).unwrap();
            let norm = e.values.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9, "norm {norm} for {text:?}");
        }
    }

    #[test]
    fn cosine_with_self_is_one() {
        let enc = hashed(96);
        let e = enc.encode("p", "self similarity check").unwrap();
        let dot: f64 = e.values.iter().map(|v| v * v).sum();
        let norm = dot.sqrt();
        assert!((dot / (norm * norm) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn seed_changes_embedding_not_contract() {
        let a = Encoder::from_spec(&EncoderSpec::HashedNgram { d: 64, seed: 1 }).unwrap();
        let b = Encoder::from_spec(&EncoderSpec::HashedNgram { d: 64, seed: 2 }).unwrap();
        let ea = a.encode("p", "seed sensitivity").unwrap();
        let eb = b.encode("p", "seed sensitivity").unwrap();
        assert_ne!(ea.values, eb.values);
        assert_eq!(ea.values.len(), eb.values.len());
    }

    #[test]
    fn batch_matches_single_encode() {
        let enc = hashed(48);
        let prompts: Vec<(String, String)> = (0..3)
            .map(|i| (format!("p{i}"), format!("prompt number {i}")))
            .collect();
        let batch = enc.encode_batch(&prompts).unwrap();
        assert_eq!(batch.len(), 3);
        for (i, (id, text)) in prompts.iter().enumerate() {
            assert_eq!(batch[i], enc.encode(id, text).unwrap());
        }
        assert!(enc.encode_batch(&[]).unwrap().is_empty());
    }

    #[test]
    fn store_round_trip_and_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.tsv");
        let mut store = EmbeddingStore::new(4);
        store.insert("a", vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        store.insert("b", vec![0.5, -0.25, 0.0, 1e-3]).unwrap();
        store.save(&path).unwrap();
        let loaded = EmbeddingStore::load(&path).unwrap();
        assert_eq!(loaded.dim(), 4);
        assert_eq!(loaded.get("a").unwrap(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(loaded.get("b").unwrap(), &[0.5, -0.25, 0.0, 1e-3]);
        assert!(matches!(
            loaded.get("missing").unwrap_err(),
            Error::UnknownPromptId(_)
        ));
    }

    #[test]
    fn store_rejects_mixed_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");
        std::fs::write(
            &path,
            "tollgate-embeddings v1 d=2 count=2\na\t1 2\nb\t1 2 3\n",
        )
        .unwrap();
        let err = EmbeddingStore::load(&path).unwrap_err();
        match err {
            Error::DimensionMismatch {
                expected, found, ..
            } => {
                assert_eq!((expected, found), (2, 3));
                assert!(err.to_string().contains("row 2"));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn precomputed_encoder_serves_stored_vectors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.tsv");
        let mut store = EmbeddingStore::new(3);
        store.insert("q1", vec![0.1, 0.2, 0.3]).unwrap();
        store.save(&path).unwrap();
        let enc = Encoder::from_spec(&EncoderSpec::Precomputed {
            path: path.to_string_lossy().into_owned(),
        })
        .unwrap();
        assert_eq!(enc.dim(), 3);
        let e = enc.encode("q1", "text is ignored here").unwrap();
        assert_eq!(e.values, vec![0.1, 0.2, 0.3]);
        assert!(enc.encode("q2", "whatever").is_err());
    }

    #[test]
    fn spec_serde_round_trip() {
        let spec = EncoderSpec::HashedNgram { d: 96, seed: 5 };
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<EncoderSpec>(&json).unwrap(), spec);
    }
}
