//! Reward-labeled routing datasets: JSONL ingest, validation, synthesis,
//! and seeded splitting.
//!
//! One record carries reward labels for every candidate of one family, so
//! evaluation can assume a complete label vector per record. Partially
//! labeled records are rejected, not imputed.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::registry::Registry;

/// Current JSONL schema version; every line must carry `"v": 1`.
pub const SCHEMA_VERSION: u32 = 1;

/// Per-candidate supervision: realized reward and response length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateLabel {
    /// Reward-model score in [0, 1].
    pub reward: f64,
    /// Realized response length in tokens.
    pub output_tokens: u64,
}

/// One dataset row: a prompt plus labels for all candidates of its family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub prompt: String,
    pub family: String,
    pub input_tokens: u64,
    /// Keyed by candidate id; BTreeMap keeps serialization byte-stable.
    pub labels: BTreeMap<String, CandidateLabel>,
    #[serde(default = "schema_version")]
    pub v: u32,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

impl PromptRecord {
    /// Check invariants against a registry: schema version, reward range,
    /// and exact label coverage of the family's candidates.
    pub fn validate(&self, registry: &Registry) -> Result<()> {
        if self.v != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema version {} (expected {})",
                self.v, SCHEMA_VERSION
            )));
        }
        if self.labels.is_empty() {
            return Err(Error::Config("labels must be non-empty".into()));
        }
        for (cid, label) in &self.labels {
            if !registry.contains(cid) {
                return Err(Error::UnknownCandidate(cid.clone()));
            }
            if !label.reward.is_finite() || !(0.0..=1.0).contains(&label.reward) {
                return Err(Error::Config(format!(
                    "reward out of range for candidate '{cid}': {}",
                    label.reward
                )));
            }
        }
        // Records must label every candidate of their family.
        let family_ids = registry.family_ids(&self.family);
        if family_ids.is_empty() {
            return Err(Error::UnknownFamily(self.family.clone()));
        }
        for cid in &family_ids {
            if !self.labels.contains_key(cid) {
                return Err(Error::Config(format!(
                    "missing label for family candidate '{cid}'"
                )));
            }
        }
        if self.labels.len() != family_ids.len() {
            let extra = self
                .labels
                .keys()
                .find(|cid| !family_ids.contains(cid))
                .cloned()
                .unwrap_or_default();
            return Err(Error::Config(format!(
                "label for '{extra}' outside family '{}'",
                self.family
            )));
        }
        Ok(())
    }

    /// Reward for one candidate; total over the record's family by the
    /// coverage invariant.
    pub fn reward(&self, candidate_id: &str) -> Result<f64> {
        self.labels
            .get(candidate_id)
            .map(|l| l.reward)
            .ok_or_else(|| Error::UnknownCandidate(candidate_id.to_owned()))
    }

    pub fn output_tokens(&self, candidate_id: &str) -> Result<u64> {
        self.labels
            .get(candidate_id)
            .map(|l| l.output_tokens)
            .ok_or_else(|| Error::UnknownCandidate(candidate_id.to_owned()))
    }
}

/// An immutable, ordered list of validated records.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    /// Conventionally one of `train`, `dev`, `test`, or a custom tag.
    pub name: String,
    pub records: Vec<PromptRecord>,
}

impl DatasetSplit {
    pub fn new(name: impl Into<String>, records: Vec<PromptRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for rec in &records {
            if !seen.insert(rec.id.as_str()) {
                return Err(Error::DuplicateRecord(rec.id.clone()));
            }
        }
        Ok(DatasetSplit {
            name: name.into(),
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Family shared by all records; splits are single-family by contract.
    pub fn family(&self) -> Result<&str> {
        let first = self.records.first().ok_or(Error::EmptyDataset)?;
        Ok(&first.family)
    }

    /// SHA-256 over the canonical JSONL serialization; identifies the exact
    /// data a report was computed on.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for rec in &self.records {
            hasher.update(serde_json::to_string(rec).expect("record serializes"));
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for b in digest {
            hex.push_str(&format!("{b:02x}"));
        }
        hex
    }
}

/// Load a JSONL split, validating every line against the registry.
/// Errors carry 1-based line numbers.
pub fn load_jsonl(path: impl AsRef<Path>, registry: &Registry) -> Result<DatasetSplit> {
    let name = path
        .as_ref()
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "custom".into());
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut family: Option<String> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let at = |msg: String| Error::DatasetLine { line: lineno, msg };
        let rec: PromptRecord =
            serde_json::from_str(&line).map_err(|e| at(format!("malformed record: {e}")))?;
        rec.validate(registry).map_err(|e| at(e.to_string()))?;
        match &family {
            None => family = Some(rec.family.clone()),
            Some(f) if *f != rec.family => {
                return Err(at(format!(
                    "family '{}' differs from split family '{f}'",
                    rec.family
                )));
            }
            _ => {}
        }
        records.push(rec);
    }
    DatasetSplit::new(name, records)
}

/// Write a split as JSONL with stable field order; `load_jsonl` of the
/// output reproduces the split exactly.
pub fn write_jsonl(split: &DatasetSplit, path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for rec in &split.records {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Inclusive token-count range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenRange {
    pub min: u64,
    pub max: u64,
}

impl TokenRange {
    fn sample(&self, rng: &mut ChaCha8Rng) -> u64 {
        if self.min >= self.max {
            self.min
        } else {
            rng.gen_range(self.min..=self.max)
        }
    }
}

/// How synthetic rewards relate to the latent prompt difficulty z ~ U\[0,1\].
///
/// Entries are aligned with the registry's family order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum DifficultyModel {
    /// Rewards independent of difficulty: reward_c ~ U(mean_c - spread,
    /// mean_c + spread), clipped to [0, 1].
    UniformIndependent { means: Vec<f64>, spread: f64 },
    /// Rewards fall linearly with difficulty:
    /// reward_c = clip(intercept_c - slope_c * z + U(-noise, noise)).
    DifficultyLinked {
        profiles: Vec<RewardProfile>,
        noise: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardProfile {
    pub intercept: f64,
    pub slope: f64,
}

/// Synthetic dataset recipe. Deterministic for a fixed seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub family: String,
    pub n: usize,
    pub seed: u64,
    /// Words per generated prompt; more words give the featurizer a less
    /// noisy view of the latent difficulty.
    #[serde(default = "default_prompt_words")]
    pub prompt_words: usize,
    pub input_tokens: TokenRange,
    pub output_tokens: TokenRange,
    pub difficulty: DifficultyModel,
    /// Record id prefix; defaults to `s<seed>-` so splits generated with
    /// different seeds never collide.
    #[serde(default)]
    pub id_prefix: Option<String>,
}

fn default_prompt_words() -> usize {
    96
}

impl SynthConfig {
    pub fn from_toml(doc: &str) -> Result<Self> {
        Ok(toml::from_str(doc)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        SynthConfig::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Bundled demo recipe used by docs and the end-to-end tests.
    pub fn bundled_demo() -> Self {
        SynthConfig::from_toml(include_str!("../data/synth_demo.toml"))
            .expect("bundled synth config must parse")
    }

    fn validate(&self, registry: &Registry) -> Result<usize> {
        if self.n == 0 {
            return Err(Error::EmptySynthesis);
        }
        let family_size = registry.candidates_of_family(&self.family).len();
        if family_size == 0 {
            return Err(Error::UnknownFamily(self.family.clone()));
        }
        let per_candidate = match &self.difficulty {
            DifficultyModel::UniformIndependent { means, spread } => {
                if !means.iter().all(|m| (0.0..=1.0).contains(m)) {
                    return Err(Error::Config("means must lie in [0, 1]".into()));
                }
                if *spread < 0.0 {
                    return Err(Error::Config("spread must be >= 0".into()));
                }
                means.len()
            }
            DifficultyModel::DifficultyLinked { profiles, noise } => {
                if *noise < 0.0 {
                    return Err(Error::Config("noise must be >= 0".into()));
                }
                profiles.len()
            }
        };
        if per_candidate != family_size {
            return Err(Error::Config(format!(
                "difficulty model covers {per_candidate} candidates but family '{}' has {family_size}",
                self.family
            )));
        }
        if self.input_tokens.min > self.input_tokens.max
            || self.output_tokens.min > self.output_tokens.max
        {
            return Err(Error::Config("token range min exceeds max".into()));
        }
        Ok(family_size)
    }
}

// Disjoint syllable sets for the easy and hard vocabularies, so character
// trigrams carry difficulty signal alongside whole words.
const EASY_SYLLABLES: [&str; 12] = [
    "ba", "de", "ki", "lo", "mu", "na", "po", "ri", "su", "ta", "ve", "zo",
];
const HARD_SYLLABLES: [&str; 12] = [
    "bryn", "chu", "dex", "fyg", "gra", "hyx", "jel", "kwo", "pli", "qua", "wurz", "yfe",
];

fn build_pool(syllables: &[&str]) -> Vec<String> {
    let mut pool = Vec::with_capacity(syllables.len() * syllables.len());
    for a in syllables {
        for b in syllables {
            pool.push(format!("{a}{b}"));
        }
    }
    pool
}

/// Generate a labeled split from a recipe. Prompt text is drawn from two
/// fixed word pools with the hard-pool probability equal to the record's
/// latent difficulty, so featurizers can recover the difficulty signal.
pub fn synthesize(config: &SynthConfig, registry: &Registry) -> Result<DatasetSplit> {
    config.validate(registry)?;
    let candidates = registry.candidates_of_family(&config.family);
    let easy_pool = build_pool(&EASY_SYLLABLES);
    let hard_pool = build_pool(&HARD_SYLLABLES);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let prefix = config
        .id_prefix
        .clone()
        .unwrap_or_else(|| format!("s{}-", config.seed));
    let mut records = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let z: f64 = rng.gen();
        let mut words = Vec::with_capacity(config.prompt_words);
        for _ in 0..config.prompt_words {
            let pool = if rng.gen::<f64>() < z {
                &hard_pool
            } else {
                &easy_pool
            };
            words.push(pool[rng.gen_range(0..pool.len())].as_str());
        }
        let input_tokens = config.input_tokens.sample(&mut rng);
        let mut labels = BTreeMap::new();
        for (c_idx, cand) in candidates.iter().enumerate() {
            let raw = match &config.difficulty {
                DifficultyModel::UniformIndependent { means, spread } => {
                    means[c_idx] + (rng.gen::<f64>() * 2.0 - 1.0) * spread
                }
                DifficultyModel::DifficultyLinked { profiles, noise } => {
                    let p = profiles[c_idx];
                    p.intercept - p.slope * z + (rng.gen::<f64>() * 2.0 - 1.0) * noise
                }
            };
            labels.insert(
                cand.id.clone(),
                CandidateLabel {
                    reward: raw.clamp(0.0, 1.0),
                    output_tokens: config.output_tokens.sample(&mut rng),
                },
            );
        }
        records.push(PromptRecord {
            id: format!("{prefix}{i:06}"),
            prompt: words.join(" "),
            family: config.family.clone(),
            input_tokens,
            labels,
            v: SCHEMA_VERSION,
        });
    }
    DatasetSplit::new("synthetic", records)
}

/// Shuffle records with the seed and cut into train/dev/test by fractions.
/// Fractions must be positive and sum to 1 within 1e-9.
pub fn split_dataset(
    records: Vec<PromptRecord>,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(DatasetSplit, DatasetSplit, DatasetSplit)> {
    let (f1, f2, f3) = fractions;
    let sum = f1 + f2 + f3;
    if f1 <= 0.0 || f2 <= 0.0 || f3 <= 0.0 || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::BadFractions(sum));
    }
    let n = records.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates, explicit so the assignment is stable across platforms.
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let n_train = (f1 * n as f64).round() as usize;
    let n_dev = ((f2 * n as f64).round() as usize).min(n - n_train);
    let mut shuffled: Vec<Option<PromptRecord>> = records.into_iter().map(Some).collect();
    let mut take = |idxs: &[usize]| -> Vec<PromptRecord> {
        idxs.iter()
            .map(|&i| shuffled[i].take().expect("index visited once"))
            .collect()
    };
    let train = take(&order[..n_train]);
    let dev = take(&order[n_train..n_train + n_dev]);
    let test = take(&order[n_train + n_dev..]);
    Ok((
        DatasetSplit::new("train", train)?,
        DatasetSplit::new("dev", dev)?,
        DatasetSplit::new("test", test)?,
    ))
}
