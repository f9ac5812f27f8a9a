//! End-to-end decision latency: encode, predict, route, one request at a
//! time, reported as P50/P90/P99 per (token length, candidate count) cell.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, EncoderSpec};
use crate::error::{Error, Result};
use crate::estimator::EstimatorParameters;
use crate::registry::{ModelCandidate, Price, Registry};
use crate::router::{route, RouterConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// Whitespace-token prompt lengths to measure.
    pub token_lengths: Vec<usize>,
    /// Candidate-set sizes; each gets its own synthetic family.
    pub candidate_counts: Vec<usize>,
    pub warmup: usize,
    pub iters: usize,
    pub encoder_dim: usize,
    pub d_prime: usize,
    pub hidden: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            token_lengths: vec![500, 1000],
            candidate_counts: vec![5, 10],
            warmup: 100,
            iters: 1000,
            encoder_dim: 768,
            d_prime: 128,
            hidden: 256,
            tolerance: 0.5,
            seed: 0,
        }
    }
}

/// Latencies in microseconds for one measurement cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub token_length: usize,
    pub candidate_count: usize,
    pub p50_us: f64,
    pub p90_us: f64,
    pub p99_us: f64,
    /// VmHWM from /proc/self/status; None where unavailable.
    pub peak_rss_bytes: Option<u64>,
    pub warmup: usize,
    pub iters: usize,
}

/// Deterministic prompt with exactly `tokens` whitespace tokens, drawn
/// from a small cycling vocabulary so hashing sees realistic variety.
pub fn prompt_of_tokens(tokens: usize) -> String {
    let mut out = String::with_capacity(tokens * 7);
    for i in 0..tokens {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&format!("tok{}q{}", i % 97, (i * 31) % 113));
    }
    out
}

/// Nearest-rank percentile of an ascending-sorted sample, q in (0, 1].
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = (q * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Peak resident set size in bytes, read from the kernel's VmHWM line.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

fn bench_registry(count: usize) -> Result<Registry> {
    let candidates = (0..count)
        .map(|i| ModelCandidate {
            id: format!("bench-c{i}"),
            family: "bench".into(),
            display_name: format!("Bench C{i}"),
            input_price_per_1k: Price::from_nanos(100_000 + 37 * i as i64),
            output_price_per_1k: Price::from_nanos(400_000 + 53 * i as i64),
        })
        .collect();
    Registry::new(1, candidates)
}

/// Measure one cell with caller-supplied artifacts. Timing wraps only the
/// pure decision path: encode, predict for every candidate, route.
pub fn run_cell(
    params: &EstimatorParameters,
    encoder: &Encoder,
    registry: &Registry,
    prompt: &str,
    config: &BenchConfig,
) -> Result<BenchReport> {
    if config.iters == 0 {
        return Err(Error::Config("iters must be > 0".into()));
    }
    let router = RouterConfig::default();
    let ids = params.candidate_ids();
    let mut samples = Vec::with_capacity(config.iters);
    for i in 0..config.warmup + config.iters {
        let start = Instant::now();
        let embedding = encoder.encode("bench", prompt)?;
        let estimates = params.predict_all(&embedding, &ids)?;
        let decision = route(&estimates, config.tolerance, &router, registry)?;
        let elapsed = start.elapsed();
        // Keep the decision observable so the loop cannot be elided.
        std::hint::black_box(&decision);
        if i >= config.warmup {
            samples.push(elapsed.as_secs_f64() * 1e6);
        }
    }
    samples.sort_by(f64::total_cmp);
    Ok(BenchReport {
        token_length: prompt.split_whitespace().count(),
        candidate_count: ids.len(),
        p50_us: percentile(&samples, 0.50),
        p90_us: percentile(&samples, 0.90),
        p99_us: percentile(&samples, 0.99),
        peak_rss_bytes: peak_rss_bytes(),
        warmup: config.warmup,
        iters: config.iters,
    })
}

/// Run the full grid on synthetic families: freshly initialized estimator
/// weights cost exactly as much to evaluate as trained ones.
pub fn run(config: &BenchConfig) -> Result<Vec<BenchReport>> {
    if config.token_lengths.is_empty() || config.candidate_counts.is_empty() {
        return Err(Error::EmptyInput("bench grid"));
    }
    let encoder = Encoder::from_spec(&EncoderSpec::hashed(config.encoder_dim))?;
    let mut reports = Vec::new();
    for &count in &config.candidate_counts {
        let registry = bench_registry(count)?;
        let params = EstimatorParameters::init(
            &registry,
            "bench",
            &encoder,
            config.d_prime,
            config.hidden,
            config.seed,
        )?;
        for &tokens in &config.token_lengths {
            let prompt = prompt_of_tokens(tokens);
            reports.push(run_cell(&params, &encoder, &registry, &prompt, config)?);
        }
    }
    Ok(reports)
}
