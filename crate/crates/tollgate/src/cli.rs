//! Command-line surface: train, route, evaluate, bench, serve.
//!
//! Exit codes follow convention: 0 success, 1 runtime error, 2 usage
//! error (the latter produced by the argument parser itself).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bench::{self, BenchConfig};
use crate::dataset::{self, DatasetSplit, SynthConfig};
use crate::encoder::{Encoder, EncoderSpec};
use crate::error::{Error, Result};
use crate::estimator::{load_params, save_params, train, LossKind, TrainConfig};
use crate::evalsuite::{evaluate, write_artifacts, EvalConfig, Policy};
use crate::registry::Registry;
use crate::router::RouterConfig;
use crate::service::{decide, RouteRequest, Service, ServiceConfig, ServiceState};

/// Optional TOML settings file; every section falls back to defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub router: RouterConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
    pub service: ServiceConfig,
}

impl AppConfig {
    pub fn load(path: Option<&Path>) -> Result<AppConfig> {
        match path {
            None => Ok(AppConfig::default()),
            Some(p) => Ok(toml::from_str(&std::fs::read_to_string(p)?)?),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "tollgate",
    version,
    about = "Quality-gated, cost-optimal prompt routing"
)]
pub struct Cli {
    /// TOML settings file; TOLLGATE_CONFIG overrides the default path.
    #[arg(long, global = true, env = "TOLLGATE_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a quality estimator and write the parameter artifact.
    Train(TrainArgs),
    /// Route one prompt and print the response document.
    Route(RouteArgs),
    /// Evaluate routing policies and write report/curve artifacts.
    Evaluate(EvaluateArgs),
    /// Measure end-to-end decision latency.
    Bench(BenchArgs),
    /// Run the JSON-over-HTTP routing service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct DataSource {
    /// Labeled JSONL dataset.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Synthesis config TOML; pass the flag alone for the bundled demo.
    #[arg(long, num_args = 0..=1, default_missing_value = "bundled")]
    pub synth: Option<String>,
}

impl DataSource {
    fn load(&self, registry: &Registry) -> Result<DatasetSplit> {
        match (&self.dataset, &self.synth) {
            (Some(path), _) => dataset::load_jsonl(path, registry),
            (None, Some(spec)) => {
                let config = if spec == "bundled" {
                    SynthConfig::bundled_demo()
                } else {
                    SynthConfig::from_path(spec)?
                };
                dataset::synthesize(&config, registry)
            }
            (None, None) => Err(Error::Config("no dataset source given".into())),
        }
    }
}

fn load_registry(path: Option<&Path>) -> Result<Registry> {
    match path {
        Some(p) => Registry::from_path(p),
        None => Ok(Registry::bundled()),
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataSource,
    /// Candidate registry TOML; omit for the bundled registry.
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Held-out JSONL split for per-epoch dev MAE.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Hashed featurizer dimension.
    #[arg(long, default_value_t = 64)]
    pub encoder_dim: usize,
    /// Parameter artifact output path.
    #[arg(long, default_value = "params.tgpm")]
    pub out: PathBuf,
    /// Machine-readable training log output path.
    #[arg(long, default_value = "train_log.json")]
    pub log: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the configured epoch count.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Override the configured loss: mse, hinge, or listnet.
    #[arg(long)]
    pub loss: Option<LossKind>,
}

#[derive(Debug, Args)]
pub struct RouteArgs {
    #[arg(long)]
    pub prompt: String,
    /// 0 demands maximum quality; 1 permits maximum saving.
    #[arg(long, default_value_t = 0.0)]
    pub tolerance: f64,
    /// Trained parameter artifact.
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub registry: Option<PathBuf>,
    #[arg(long, default_value = "")]
    pub prompt_id: String,
    #[arg(long)]
    pub request_id: Option<String>,
    /// Restrict routing to these candidates (repeatable).
    #[arg(long)]
    pub candidate: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataSource,
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Parameter artifact; required by the estimator policy.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Policy to evaluate (repeatable): estimator, oracle, random,
    /// static:CANDIDATE_ID.
    #[arg(long = "policy", default_values_t = [String::from("oracle"), String::from("random")])]
    pub policies: Vec<String>,
    #[arg(long, default_value = "eval_out")]
    pub out_dir: PathBuf,
    /// Override the configured evaluation seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated prompt lengths in whitespace tokens.
    #[arg(long, value_delimiter = ',')]
    pub token_lengths: Vec<usize>,
    /// Comma-separated candidate-set sizes.
    #[arg(long, value_delimiter = ',')]
    pub candidate_counts: Vec<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub encoder_dim: Option<usize>,
    /// Also write the report set to this JSON file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Trained parameter artifact.
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Bind address, e.g. 127.0.0.1:8080; port 0 picks a free port.
    #[arg(long)]
    pub addr: Option<String>,
    #[arg(long)]
    pub concurrency: Option<usize>,
}

/// Execute a parsed command; errors map to exit code 1 in the binary.
pub fn run(cli: Cli) -> Result<()> {
    let config = AppConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Train(args) => run_train(args, config),
        Command::Route(args) => run_route(args, config),
        Command::Evaluate(args) => run_evaluate(args, config),
        Command::Bench(args) => run_bench(args, config),
        Command::Serve(args) => run_serve(args, config),
    }
}

fn run_train(args: TrainArgs, config: AppConfig) -> Result<()> {
    let mut train_config = config.train;
    if let Some(seed) = args.seed {
        train_config.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        train_config.epochs = epochs;
    }
    if let Some(loss) = args.loss {
        train_config.loss = loss;
    }
    let registry = load_registry(args.registry.as_deref())?;
    let split = args.data.load(&registry)?;
    let dev = args
        .dev
        .as_deref()
        .map(|p| dataset::load_jsonl(p, &registry))
        .transpose()?;
    let encoder = Encoder::from_spec(&EncoderSpec::hashed(args.encoder_dim))?;
    let (params, log) = train(&split, &registry, &encoder, &train_config, dev.as_ref())?;
    save_params(&params, &args.out)?;
    std::fs::write(&args.log, serde_json::to_string_pretty(&log)?)?;
    let summary = serde_json::json!({
        "params_file": args.out,
        "log_file": args.log,
        "family": params.family,
        "estimator_version": params.version,
        "epochs": log.epochs.len(),
        "final_train_loss": log.epochs.last().map(|e| e.train_loss),
    });
    println!("{summary}");
    Ok(())
}

fn state_from_artifacts(
    params_path: &Path,
    registry_path: Option<&Path>,
    router: RouterConfig,
) -> Result<ServiceState> {
    let registry = load_registry(registry_path)?;
    let params = load_params(params_path, &registry)?;
    let encoder = Encoder::from_spec(&EncoderSpec::hashed(params.d))?;
    params.check_encoder(&encoder)?;
    Ok(ServiceState {
        params,
        encoder,
        registry,
        router,
    })
}

fn run_route(args: RouteArgs, config: AppConfig) -> Result<()> {
    let state = state_from_artifacts(&args.params, args.registry.as_deref(), config.router)?;
    let request = RouteRequest {
        prompt: args.prompt,
        tolerance: Some(args.tolerance),
        family: None,
        candidates: if args.candidate.is_empty() {
            None
        } else {
            Some(args.candidate)
        },
        prompt_id: Some(args.prompt_id),
        request_id: args.request_id,
    };
    let response = decide(&state, &request)?;
    println!("{}", serde_json::to_string(&response)?);
    Ok(())
}

fn run_evaluate(args: EvaluateArgs, config: AppConfig) -> Result<()> {
    let mut eval_config = config.eval;
    eval_config.router = config.router.clone();
    if let Some(seed) = args.seed {
        eval_config.seed = seed;
    }
    let registry = load_registry(args.registry.as_deref())?;
    let split = args.data.load(&registry)?;
    let loaded = args
        .params
        .as_deref()
        .map(|p| -> Result<_> {
            let params = load_params(p, &registry)?;
            let encoder = Encoder::from_spec(&EncoderSpec::hashed(params.d))?;
            params.check_encoder(&encoder)?;
            Ok((params, encoder))
        })
        .transpose()?;

    for name in &args.policies {
        let policy = match name.as_str() {
            "estimator" => {
                let (params, encoder) = loaded.as_ref().ok_or_else(|| {
                    Error::Config("the estimator policy needs --params".into())
                })?;
                Policy::Estimator {
                    params,
                    encoder,
                    config: eval_config.router.clone(),
                }
            }
            "oracle" => Policy::Oracle {
                config: eval_config.router.clone(),
            },
            "random" => Policy::UniformRandom {
                seed: eval_config.seed,
            },
            other => match other.strip_prefix("static:") {
                Some(id) => Policy::StaticCandidate { id: id.to_owned() },
                None => {
                    return Err(Error::Config(format!("unknown policy '{other}'")));
                }
            },
        };
        let (mut report, curve) = evaluate(&policy, &split, &registry, &eval_config)?;
        let (report_path, curve_path) = write_artifacts(&mut report, &curve, &args.out_dir)?;
        let line = serde_json::json!({
            "policy": report.policy,
            "report_file": report_path,
            "curve_file": curve_path,
            "dataset_fingerprint": report.dataset_fingerprint,
            "b_arqgc": report.b_arqgc,
            "rel_arqgc": report.rel_arqgc,
        });
        println!("{line}");
    }
    Ok(())
}

fn run_bench(args: BenchArgs, config: AppConfig) -> Result<()> {
    let mut bench_config = config.bench;
    if !args.token_lengths.is_empty() {
        bench_config.token_lengths = args.token_lengths;
    }
    if !args.candidate_counts.is_empty() {
        bench_config.candidate_counts = args.candidate_counts;
    }
    if let Some(warmup) = args.warmup {
        bench_config.warmup = warmup;
    }
    if let Some(iters) = args.iters {
        bench_config.iters = iters;
    }
    if let Some(dim) = args.encoder_dim {
        bench_config.encoder_dim = dim;
    }
    let reports = bench::run(&bench_config)?;
    for report in &reports {
        println!("{}", serde_json::to_string(report)?);
    }
    if let Some(path) = args.out {
        std::fs::write(path, serde_json::to_string_pretty(&reports)?)?;
    }
    Ok(())
}

fn run_serve(args: ServeArgs, config: AppConfig) -> Result<()> {
    let state = state_from_artifacts(&args.params, args.registry.as_deref(), config.router)?;
    let mut service_config = config.service;
    if let Some(addr) = args.addr {
        service_config.addr = addr;
    }
    if let Some(concurrency) = args.concurrency {
        service_config.concurrency = concurrency;
    }
    let service = Service::start(&service_config, state)?;
    // One machine-readable line so callers can discover the bound port.
    println!(
        "{}",
        serde_json::json!({ "listening": service.addr().to_string() })
    );
    loop {
        std::thread::park();
    }
}
