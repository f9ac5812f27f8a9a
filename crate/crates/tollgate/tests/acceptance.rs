//! Acceptance gate: ten end-to-end criteria, each reported as one
//! pass/fail line. Derived quantities are checked against independent
//! brute-force implementations written in this file, not against the
//! library's own helpers.

// `ensure!` negates its condition, so NaN takes the failing branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::HashSet;
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tollgate::bench::{self, BenchConfig};
use tollgate::dataset::{
    synthesize, CandidateLabel, DatasetSplit, DifficultyModel, PromptRecord, SynthConfig,
    TokenRange,
};
use tollgate::encoder::{Encoder, EncoderSpec};
use tollgate::estimator::{
    extend_with_adapter, loss, save_params, train, AdapterConfig, EstimatorParameters, LossHyper,
    LossKind, QualityEstimates, TrainConfig, TrainLog,
};
use tollgate::evalsuite::{
    bounded_arqgc, csr_at_quality, mae, normalized_cost, rel_arqgc, sweep_curve, top_k_accuracy,
    top_k_f1, train_classifier, ClassifierConfig, CostModel, CurvePoint, Policy, QualityCostCurve,
};
use tollgate::registry::{ModelCandidate, Price, Registry};
use tollgate::router::{route, RouterConfig, Strategy};
use tollgate::service::{RouteRequest, Service, ServiceConfig, ServiceState};

type Check = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !($cond) {
            return Err(format!($($msg)+));
        }
    };
}

fn lib<T>(r: tollgate::Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn grid21() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

// ---------------------------------------------------------------- c1

fn random_registry(rng: &mut ChaCha8Rng, n: usize) -> Registry {
    // A small price pool makes exact cost ties common enough to exercise
    // the tie-break chain.
    let pool = [5_000i64, 120_000, 2_400_000];
    let price = |rng: &mut ChaCha8Rng| {
        if rng.gen_bool(0.5) {
            Price::from_nanos(pool[rng.gen_range(0..pool.len())])
        } else {
            Price::from_nanos(rng.gen_range(1..=10_000_000))
        }
    };
    let candidates = (0..n)
        .map(|j| ModelCandidate {
            id: format!("c{j}"),
            family: "f".into(),
            display_name: format!("C{j}"),
            input_price_per_1k: price(rng),
            output_price_per_1k: price(rng),
        })
        .collect();
    Registry::new(1, candidates).unwrap()
}

fn random_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            if rng.gen_bool(0.3) {
                rng.gen_range(0..=10) as f64 / 10.0
            } else {
                rng.gen()
            }
        })
        .collect()
}

/// Straight-line reference router: threshold formula, filter, argmax
/// fallback, then lexicographic (cost, -estimate, position) minimum.
fn brute_route(
    values: &[f64],
    tolerance: f64,
    config: &RouterConfig,
    registry: &Registry,
) -> (usize, f64, Vec<usize>, bool) {
    let rmax = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let rmin = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let (hi, lo) = match config.strategy {
        Strategy::DynamicMax => (rmax, 0.0),
        Strategy::DynamicMinmax => (rmax, rmin),
        Strategy::StaticDynamic => (rmax, config.static_min.unwrap()),
        Strategy::Static => (config.static_max.unwrap(), config.static_min.unwrap()),
    };
    let threshold = (hi - tolerance * (hi - lo) - config.safety_margin).max(0.0);
    let costs: Vec<i128> = (0..values.len())
        .map(|i| {
            registry
                .get(&format!("c{i}"))
                .unwrap()
                .decision_cost(config.weight_input_tokens, config.weight_output_tokens)
        })
        .collect();
    let mut feasible: Vec<usize> = (0..values.len())
        .filter(|&i| values[i] >= threshold)
        .collect();
    let fallback = feasible.is_empty();
    if fallback {
        feasible = (0..values.len()).filter(|&i| values[i] == rmax).collect();
    }
    let selected = *feasible
        .iter()
        .min_by(|&&a, &&b| costs[a].cmp(&costs[b]).then(values[b].total_cmp(&values[a])))
        .unwrap();
    (selected, threshold, feasible, fallback)
}

fn c01_routing_law() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for instance in 0..1000 {
        let n = rng.gen_range(2..=10);
        let registry = random_registry(&mut rng, n);
        let values = random_values(&mut rng, n);
        let estimates = QualityEstimates {
            prompt_id: format!("p{instance}"),
            estimates: (0..n).map(|i| (format!("c{i}"), values[i])).collect(),
            estimator_version: "t".into(),
        };
        let smin = rng.gen::<f64>() * 0.5;
        let smax = smin + (1.0 - smin) * rng.gen::<f64>();
        let strategy = match instance % 4 {
            0 => Strategy::DynamicMax,
            1 => Strategy::DynamicMinmax,
            2 => Strategy::StaticDynamic,
            _ => Strategy::Static,
        };
        let config = RouterConfig {
            strategy,
            static_max: Some(smax),
            static_min: Some(smin),
            safety_margin: [0.0, 0.05, 0.3][rng.gen_range(0..3)],
            weight_input_tokens: rng.gen_range(0..=500),
            weight_output_tokens: rng.gen_range(1..=500),
        };

        let taus = [0.0, rng.gen(), rng.gen(), 1.0];
        for &tau in &taus {
            let got = lib(route(&estimates, tau, &config, &registry))?;
            let (sel, th, feas, fb) = brute_route(&values, tau, &config, &registry);
            ensure!(
                got.selected == format!("c{sel}"),
                "instance {instance} tau {tau}: selected {} vs brute c{sel}",
                got.selected
            );
            ensure!(
                got.threshold == th,
                "instance {instance}: threshold {} vs brute {th}",
                got.threshold
            );
            let feas_ids: Vec<String> = feas.iter().map(|i| format!("c{i}")).collect();
            ensure!(got.feasible == feas_ids, "instance {instance}: feasible set differs");
            ensure!(got.fallback_used == fb, "instance {instance}: fallback flag differs");
        }

        // The tolerance-endpoint laws, under the default gate with no margin.
        let plain = RouterConfig {
            strategy: Strategy::DynamicMax,
            safety_margin: 0.0,
            weight_input_tokens: config.weight_input_tokens,
            weight_output_tokens: config.weight_output_tokens,
            ..RouterConfig::default()
        };
        let rmax = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let cost = |id: &str| {
            registry
                .get(id)
                .unwrap()
                .decision_cost(plain.weight_input_tokens, plain.weight_output_tokens)
        };
        let at0 = lib(route(&estimates, 0.0, &plain, &registry))?;
        let sel0 = estimates.estimates.iter().find(|(id, _)| *id == at0.selected).unwrap();
        ensure!(sel0.1 == rmax, "instance {instance}: tau=0 picked a non-max estimate");
        let at1 = lib(route(&estimates, 1.0, &plain, &registry))?;
        let min_cost = (0..n).map(|i| cost(&format!("c{i}"))).min().unwrap();
        ensure!(
            cost(&at1.selected) == min_cost,
            "instance {instance}: tau=1 not cost-minimal"
        );

        // Feasible sets grow with tolerance whenever the gate span is
        // ordered, i.e. every strategy except a static floor above the
        // per-prompt maximum.
        if strategy != Strategy::StaticDynamic {
            let (mut t1, mut t2) = (rng.gen::<f64>(), rng.gen::<f64>());
            if t1 > t2 {
                std::mem::swap(&mut t1, &mut t2);
            }
            let d1 = lib(route(&estimates, t1, &config, &registry))?;
            let d2 = lib(route(&estimates, t2, &config, &registry))?;
            let s2: HashSet<&String> = d2.feasible.iter().collect();
            ensure!(
                d1.feasible.iter().all(|id| s2.contains(id)),
                "instance {instance}: feasible set not monotone between {t1} and {t2}"
            );
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.1}s, limit 10s");
    Ok("1000 instances x 4 tolerances match the reference router exactly".into())
}

// ---------------------------------------------------------------- c2

fn naive_ranked(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

fn naive_bounded(points: &[(f64, f64)]) -> f64 {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut area = 0.0;
    for w in pts.windows(2).rev() {
        area += (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0;
    }
    area += pts[0].0 * pts[0].1;
    let last = pts.last().unwrap();
    area += (1.0 - last.0) * last.1;
    area.clamp(0.0, 1.0)
}

fn point_curve(points: &[(f64, f64)]) -> QualityCostCurve {
    QualityCostCurve {
        points: points
            .iter()
            .map(|&(alpha, quality_norm)| CurvePoint {
                tolerance: None,
                cost: alpha,
                quality: quality_norm,
                alpha,
                quality_norm,
            })
            .collect(),
        cost_cheapest: 0.0,
        cost_strongest: 1.0,
        q_min: 0.0,
        q_max: 1.0,
        clamp_events: 0,
    }
}

fn c02_metric_oracles() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let tol = 1e-9;
    for instance in 0..200 {
        let k = rng.gen_range(2..=5);
        let m = rng.gen_range(4..=10);
        let registry = random_registry(&mut rng, k);
        let ids: Vec<String> = (0..k).map(|j| format!("c{j}")).collect();

        let mut records = Vec::with_capacity(m);
        let mut labels = Vec::with_capacity(m);
        for i in 0..m {
            let row = random_values(&mut rng, k);
            let mut map = std::collections::BTreeMap::new();
            for (id, r) in ids.iter().zip(&row) {
                map.insert(
                    id.clone(),
                    CandidateLabel {
                        reward: *r,
                        output_tokens: rng.gen_range(1..=300),
                    },
                );
            }
            records.push(PromptRecord {
                id: format!("p{i}"),
                prompt: "x".into(),
                family: "f".into(),
                input_tokens: rng.gen_range(1..=300),
                labels: map,
                v: 1,
            });
            labels.push(row);
        }
        let split = lib(DatasetSplit::new("t", records))?;
        let preds: Vec<Vec<f64>> = (0..m).map(|_| random_values(&mut rng, k)).collect();
        let estimates: Vec<QualityEstimates> = preds
            .iter()
            .enumerate()
            .map(|(i, row)| QualityEstimates {
                prompt_id: format!("p{i}"),
                estimates: ids.iter().cloned().zip(row.iter().cloned()).collect(),
                estimator_version: "t".into(),
            })
            .collect();

        let got_mae = lib(mae(&estimates, &split))?;
        let mut total = 0.0;
        for i in 0..m {
            for j in 0..k {
                total += (preds[i][j] - labels[i][j]).abs();
            }
        }
        let want_mae = total / (m * k) as f64;
        ensure!((got_mae - want_mae).abs() <= tol, "instance {instance}: mae off");

        for kk in 1..k {
            let got_acc = lib(top_k_accuracy(&estimates, &split, &registry, kk))?;
            let got_f1 = lib(top_k_f1(&estimates, &split, &registry, kk))?;
            let mut hits = 0usize;
            let mut overlap = 0.0;
            let mut tally: std::collections::BTreeMap<usize, (usize, usize, usize)> =
                std::collections::BTreeMap::new();
            for i in 0..m {
                let p = naive_ranked(&preds[i]);
                let t = naive_ranked(&labels[i]);
                if p[..kk] == t[..kk] {
                    hits += 1;
                }
                let ps: HashSet<usize> = p[..kk].iter().copied().collect();
                let ts: HashSet<usize> = t[..kk].iter().copied().collect();
                overlap += ps.intersection(&ts).count() as f64 / kk as f64;
                for &j in ps.union(&ts) {
                    let e = tally.entry(j).or_insert((0, 0, 0));
                    match (ps.contains(&j), ts.contains(&j)) {
                        (true, true) => e.0 += 1,
                        (true, false) => e.1 += 1,
                        (false, true) => e.2 += 1,
                        (false, false) => unreachable!(),
                    }
                }
            }
            let want_acc = hits as f64 / m as f64;
            let want_mean = overlap / m as f64;
            let mut f1_sum = 0.0;
            for (tp, fp, fng) in tally.values() {
                f1_sum += 2.0 * *tp as f64 / (2 * tp + fp + fng) as f64;
            }
            let want_macro = f1_sum / tally.len() as f64;
            ensure!((got_acc - want_acc).abs() <= tol, "instance {instance}: top-{kk} accuracy off");
            ensure!((got_f1.mean - want_mean).abs() <= tol, "instance {instance}: top-{kk} f1 off");
            ensure!(
                (got_f1.macro_f1 - want_macro).abs() <= tol,
                "instance {instance}: top-{kk} macro f1 off"
            );
        }

        // Normalized cost of a random assignment, in plain f64 arithmetic.
        let selections: Vec<usize> = (0..m).map(|_| rng.gen_range(0..k)).collect();
        let decisions: Vec<_> = split
            .records
            .iter()
            .zip(&selections)
            .map(|(rec, &j)| tollgate::router::RoutingDecision {
                selected: ids[j].clone(),
                threshold: 0.0,
                feasible: vec![ids[j].clone()],
                fallback_used: false,
                tolerance: 0.0,
                estimates: QualityEstimates {
                    prompt_id: rec.id.clone(),
                    estimates: vec![],
                    estimator_version: "t".into(),
                },
                registry_version: 1,
            })
            .collect();
        let cm = CostModel::new(&registry);
        let got_cost = lib(normalized_cost(&decisions, &split, &cm))?;
        let (mut num_in, mut den_in, mut num_out, mut den_out) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for (rec, &j) in split.records.iter().zip(&selections) {
            let cand = registry.get(&ids[j]).unwrap();
            let l = rec.input_tokens as f64;
            let o = rec.labels[&ids[j]].output_tokens as f64;
            num_in += l * cand.input_price_per_1k.nanos() as f64;
            den_in += l;
            num_out += o * cand.output_price_per_1k.nanos() as f64;
            den_out += o;
        }
        let want_cost = (num_in / den_in + num_out / den_out) / 1e9;
        ensure!((got_cost - want_cost).abs() <= tol, "instance {instance}: normalized cost off");

        let pts: Vec<(f64, f64)> = (0..rng.gen_range(2..=8))
            .map(|_| (rng.gen(), rng.gen()))
            .collect();
        let got_area = lib(bounded_arqgc(&point_curve(&pts)))?;
        let want_area = naive_bounded(&pts);
        ensure!((got_area - want_area).abs() <= tol, "instance {instance}: bounded area off");

        let r = rng.gen::<f64>() * 0.5;
        let o = r + 0.01 + rng.gen::<f64>() * 0.5;
        let p = rng.gen::<f64>();
        let got_rel = lib(rel_arqgc(p, o, r))?;
        ensure!(
            (got_rel - (p - r) / (o - r)).abs() <= tol,
            "instance {instance}: relative area off"
        );
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "took {secs:.1}s, limit 30s");
    Ok("6 metrics match brute force within 1e-9 on 200 instances".into())
}

// ---------------------------------------------------------------- c3

fn uniform_synth(n: usize, seed: u64, means: Vec<f64>, registry: &Registry) -> tollgate::Result<DatasetSplit> {
    synthesize(
        &SynthConfig {
            family: "nova".into(),
            n,
            seed,
            prompt_words: 12,
            input_tokens: TokenRange { min: 50, max: 150 },
            output_tokens: TokenRange { min: 50, max: 150 },
            difficulty: DifficultyModel::UniformIndependent {
                means,
                spread: 0.1,
            },
            id_prefix: None,
        },
        registry,
    )
}

fn c03_random_calibration() -> Check {
    let started = Instant::now();
    let registry = Registry::bundled();
    let split = lib(uniform_synth(10_000, 30, vec![0.8, 0.4], &registry))?;
    let cm = CostModel::new(&registry);
    let curve = lib(sweep_curve(
        &Policy::UniformRandom { seed: 0 },
        &split,
        &grid21(),
        &cm,
    ))?;
    let area = lib(bounded_arqgc(&curve))?;
    ensure!(
        (0.45..=0.55).contains(&area),
        "uniform-random area {area:.4} outside [0.45, 0.55]"
    );
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1}s, limit 60s");
    Ok(format!(
        "uniform-random routing scores {area:.4} on independent-uniform rewards, N=10000"
    ))
}

// ------------------------------------------------------------- c4/c5

struct Trained {
    registry: Registry,
    encoder: Encoder,
    train_split: DatasetSplit,
    test_split: DatasetSplit,
    params: EstimatorParameters,
    log: TrainLog,
    train_secs: f64,
}

/// One reference training run on the bundled family, shared by the
/// dominance and learning criteria.
fn trained() -> std::result::Result<&'static Trained, String> {
    static CELL: OnceLock<std::result::Result<Trained, String>> = OnceLock::new();
    CELL.get_or_init(|| {
        let registry = Registry::bundled();
        let encoder = lib(Encoder::from_spec(&EncoderSpec::hashed(64)))?;
        let train_split = lib(synthesize(&SynthConfig::bundled_demo(), &registry))?;
        let mut test_config = SynthConfig::bundled_demo();
        test_config.n = 500;
        test_config.seed = 8;
        let test_split = lib(synthesize(&test_config, &registry))?;
        let started = Instant::now();
        let (params, log) = lib(train(
            &train_split,
            &registry,
            &encoder,
            &TrainConfig::default(),
            None,
        ))?;
        Ok(Trained {
            registry,
            encoder,
            train_split,
            test_split,
            params,
            log,
            train_secs: started.elapsed().as_secs_f64(),
        })
    })
    .as_ref()
    .map_err(Clone::clone)
}

fn c04_oracle_dominance() -> Check {
    let shared = trained()?;
    let registry = &shared.registry;
    let split = &shared.test_split;
    let cm = CostModel::new(registry);
    let g = grid21();
    let area = |policy: &Policy| -> std::result::Result<f64, String> {
        lib(bounded_arqgc(&lib(sweep_curve(policy, split, &g, &cm))?))
    };

    let family_ids = registry.family_ids("llama");
    let shares: Vec<(String, f64)> = family_ids
        .iter()
        .cloned()
        .zip([0.3, 0.1, 0.2, 0.25, 0.15])
        .collect();
    let classifier = lib(train_classifier(
        &shared.train_split,
        registry,
        &shared.encoder,
        &cm,
        &ClassifierConfig::default(),
    ))?;
    let cheapest = lib(cm.cheapest(&family_ids))?;
    let strongest = lib(tollgate::evalsuite::strongest_candidate(split, registry))?;

    let oracle_area = area(&Policy::Oracle { config: RouterConfig::default() })?;
    let random_area = area(&Policy::UniformRandom { seed: 0 })?;
    let mut rivals = vec![("random".to_owned(), random_area)];
    let rest: Vec<Policy> = vec![
        Policy::Estimator {
            params: &shared.params,
            encoder: &shared.encoder,
            config: RouterConfig::default(),
        },
        Policy::BudgetAwareRandom { shares, seed: 0 },
        Policy::StaticCandidate { id: cheapest },
        Policy::StaticCandidate { id: strongest.clone() },
        Policy::Classifier { model: &classifier, encoder: &shared.encoder },
    ];
    for policy in &rest {
        rivals.push((policy.name(), area(policy)?));
    }
    for (name, value) in &rivals {
        ensure!(
            oracle_area >= *value,
            "oracle {oracle_area:.6} below {name} {value:.6}"
        );
    }
    let rel = lib(rel_arqgc(oracle_area, oracle_area, random_area))?;
    ensure!(rel == 1.0, "oracle relative area {rel} is not exactly 1");

    let strongest_policy = Policy::StaticCandidate { id: strongest };
    let prepared = lib(strongest_policy.prepare(split, registry))?;
    let csr = lib(csr_at_quality(&prepared, split, &cm, 1.0, 201))?;
    ensure!(csr.csr == 0.0, "always-strongest csr {} is not exactly 0", csr.csr);

    let best_rival = rivals
        .iter()
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(format!(
        "oracle {oracle_area:.4} tops {} policies (best rival {best_rival:.4}); rel(oracle)=1; csr(strongest)=0",
        rivals.len()
    ))
}

fn c05_estimator_learning() -> Check {
    let shared = trained()?;
    let policy = Policy::Estimator {
        params: &shared.params,
        encoder: &shared.encoder,
        config: RouterConfig::default(),
    };
    let prepared = lib(policy.prepare(&shared.test_split, &shared.registry))?;
    let estimates = prepared.estimates().ok_or("estimator policy lost its scores")?;
    let test_mae = lib(mae(estimates, &shared.test_split))?;
    let top1 = lib(top_k_accuracy(estimates, &shared.test_split, &shared.registry, 1))?;
    let epochs = shared.log.epochs.len();
    ensure!(test_mae < 0.08, "test mae {test_mae:.4} not below 0.08");
    ensure!(top1 > 0.85, "top-1 accuracy {top1:.4} not above 0.85");
    ensure!(epochs <= 20, "{epochs} epochs exceeds 20");
    ensure!(
        shared.train_secs < 120.0,
        "training took {:.1}s, limit 120s",
        shared.train_secs
    );
    Ok(format!(
        "test mae {test_mae:.4}, top-1 {top1:.4} after {epochs} epochs in {:.1}s",
        shared.train_secs
    ))
}

// ---------------------------------------------------------------- c6

fn c06_gradient_correctness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let hyper = LossHyper::default();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for kind in [LossKind::Mse, LossKind::Hinge, LossKind::Listnet] {
        for _ in 0..10 {
            let n = 5;
            let preds: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
            let labels: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
            let (_, grad) = lib(loss(kind, &preds, &labels, &hyper))?;
            for i in 0..n {
                let mut plus = preds.clone();
                plus[i] += h;
                let mut minus = preds.clone();
                minus[i] -= h;
                let (vp, _) = lib(loss(kind, &plus, &labels, &hyper))?;
                let (vm, _) = lib(loss(kind, &minus, &labels, &hyper))?;
                let fd = (vp - vm) / (2.0 * h);
                let diff = (grad[i] - fd).abs();
                // Inactive hinge terms have an analytic gradient of exactly
                // zero while the central difference returns roundoff noise,
                // so the bound needs an absolute term next to the relative one.
                let tol = 1e-7 + 1e-4 * grad[i].abs().max(fd.abs());
                worst = worst.max(diff / grad[i].abs().max(fd.abs()).max(1.0));
                ensure!(
                    diff <= tol,
                    "{kind:?} coordinate {i}: analytic {} vs fd {fd}, diff {diff:.2e} over tol {tol:.2e}",
                    grad[i]
                );
            }
        }
    }
    Ok(format!(
        "3 losses x 10 points: max scaled gradient deviation {worst:.2e}"
    ))
}

// ---------------------------------------------------------------- c7

fn c07_loss_ablation() -> Check {
    // The bundled recipe with its label noise raised to 0.2: ranking the
    // candidates is then hard enough that calibrated magnitudes matter,
    // which is the regime the ablation is about.
    let registry = Registry::bundled();
    let encoder = lib(Encoder::from_spec(&EncoderSpec::hashed(64)))?;
    let noisy = |n: usize, seed: u64| -> tollgate::Result<DatasetSplit> {
        let mut config = SynthConfig::bundled_demo();
        config.n = n;
        config.seed = seed;
        if let DifficultyModel::DifficultyLinked { noise, .. } = &mut config.difficulty {
            *noise = 0.2;
        }
        synthesize(&config, &registry)
    };
    let train_split = lib(noisy(2000, 7))?;
    let test_split = lib(noisy(500, 8))?;
    let cm = CostModel::new(&registry);
    let g = grid21();
    let area_of = |loss: LossKind| -> std::result::Result<f64, String> {
        let config = TrainConfig { loss, seed: 0, ..TrainConfig::default() };
        let (params, _) = lib(train(&train_split, &registry, &encoder, &config, None))?;
        let policy = Policy::Estimator {
            params: &params,
            encoder: &encoder,
            config: RouterConfig::default(),
        };
        lib(bounded_arqgc(&lib(sweep_curve(&policy, &test_split, &g, &cm))?))
    };
    let mse = area_of(LossKind::Mse)?;
    let hinge = area_of(LossKind::Hinge)?;
    let oracle = lib(bounded_arqgc(&lib(sweep_curve(
        &Policy::Oracle { config: RouterConfig::default() },
        &test_split,
        &g,
        &cm,
    ))?))?;
    ensure!(mse >= hinge, "mse {mse:.6} below hinge {hinge:.6}");
    ensure!(
        oracle >= mse && oracle >= hinge,
        "oracle {oracle:.6} dominated on the ablation split"
    );
    Ok(format!("mse {mse:.4} >= hinge {hinge:.4}, oracle {oracle:.4} on one fixed seed"))
}

// ---------------------------------------------------------------- c8

fn c08_adapter_contract() -> Check {
    let registry = Registry::bundled();
    let encoder = lib(Encoder::from_spec(&EncoderSpec::hashed(32)))?;
    let old_train = lib(uniform_synth(400, 1, vec![0.8, 0.4], &registry))?;
    let old_heldout = lib(uniform_synth(150, 11, vec![0.8, 0.4], &registry))?;
    let config = TrainConfig {
        epochs: 10,
        seed: 5,
        d_prime: 16,
        hidden: 32,
        ..TrainConfig::default()
    };
    let (frozen, _) = lib(train(&old_train, &registry, &encoder, &config, None))?;
    let micro = ModelCandidate {
        id: "nova-micro".into(),
        family: "nova".into(),
        display_name: "Nova Micro".into(),
        input_price_per_1k: lib(Price::parse_decimal("0.00003"))?,
        output_price_per_1k: lib(Price::parse_decimal("0.00012"))?,
    };
    let extended_registry = lib(registry.with_candidate(micro))?;
    let new_data = lib(uniform_synth(300, 2, vec![0.8, 0.4, 0.6], &extended_registry))?;

    let old_ids = frozen.candidate_ids();
    let extend = |steps: usize, lambda: f64| -> std::result::Result<EstimatorParameters, String> {
        lib(extend_with_adapter(
            &frozen,
            "nova-micro",
            &new_data,
            &old_train,
            &encoder,
            &AdapterConfig {
                consistency_weight: lambda,
                steps,
                seed: 3,
                ..AdapterConfig::default()
            },
        ))
    };
    let drift_of = |extended: &EstimatorParameters| -> std::result::Result<f64, String> {
        let mut total = 0.0;
        let mut count = 0usize;
        for rec in &old_heldout.records {
            let emb = lib(encoder.encode(&rec.id, &rec.prompt))?;
            let before = lib(frozen.predict_all(&emb, &old_ids))?;
            let after = lib(extended.predict_all(&emb, &old_ids))?;
            for (b, a) in before.estimates.iter().zip(&after.estimates) {
                total += (a.1 - b.1).abs();
                count += 1;
            }
        }
        Ok(total / count as f64)
    };

    let untrained = extend(0, 1.0)?;
    for rec in &old_heldout.records {
        let emb = lib(encoder.encode(&rec.id, &rec.prompt))?;
        let before = lib(frozen.predict_all(&emb, &old_ids))?;
        let after = lib(untrained.predict_all(&emb, &old_ids))?;
        for (b, a) in before.estimates.iter().zip(&after.estimates) {
            ensure!(
                b.1.to_bits() == a.1.to_bits(),
                "step-0 adapter changed an old prediction: {} vs {}",
                b.1,
                a.1
            );
        }
    }

    let trained_adapter = extend(300, 1.0)?;
    let bits = |v: &[f64]| -> Vec<u64> { v.iter().map(|x| x.to_bits()).collect() };
    ensure!(
        bits(&trained_adapter.predictor.w1) == bits(&frozen.predictor.w1)
            && bits(&trained_adapter.predictor.b1) == bits(&frozen.predictor.b1)
            && bits(&trained_adapter.predictor.w2) == bits(&frozen.predictor.w2)
            && trained_adapter.predictor.b2.to_bits() == frozen.predictor.b2.to_bits(),
        "core predictor blocks changed during adapter training"
    );
    for (a, b) in trained_adapter.identities.iter().zip(&frozen.identities) {
        ensure!(
            bits(&a.values) == bits(&b.values),
            "identity block {} changed during adapter training",
            a.candidate_id
        );
    }

    let d1 = drift_of(&trained_adapter)?;
    let d0 = drift_of(&extend(300, 0.0)?)?;
    let d10 = drift_of(&extend(300, 10.0)?)?;
    ensure!(d1 < 0.02, "held-out drift {d1:.4} not below 0.02");
    ensure!(
        d0 >= d1 && d1 >= d10,
        "drift not non-increasing in lambda: {d0:.4}, {d1:.4}, {d10:.4}"
    );
    Ok(format!(
        "step-0 identity exact, frozen blocks byte-stable, drift {d0:.4} >= {d1:.4} >= {d10:.4}"
    ))
}

// ---------------------------------------------------------------- c9

fn c09_latency() -> Check {
    let config = BenchConfig {
        token_lengths: vec![1000],
        candidate_counts: vec![5, 10],
        warmup: 100,
        iters: 1000,
        ..BenchConfig::default()
    };
    let reports = lib(bench::run(&config))?;
    ensure!(reports.len() == 2, "expected 2 cells, got {}", reports.len());
    let five = &reports[0];
    let ten = &reports[1];
    ensure!(
        five.candidate_count == 5 && ten.candidate_count == 10,
        "unexpected cell order"
    );
    ensure!(
        ten.p99_us < 10_000.0,
        "p99 at 10 candidates is {:.0}us, limit 10ms",
        ten.p99_us
    );
    ensure!(
        ten.p50_us < 1.5 * five.p50_us,
        "p50 grew {:.0}us -> {:.0}us, more than 50%",
        five.p50_us,
        ten.p50_us
    );
    Ok(format!(
        "1000-token prompts: p50 {:.0}us at 5 candidates -> {:.0}us at 10, p99 {:.0}us",
        five.p50_us, ten.p50_us, ten.p99_us
    ))
}

// --------------------------------------------------------------- c10

fn http_request(addr: std::net::SocketAddr, head: &str, body: &str) -> std::result::Result<(u16, String), String> {
    use std::io::{Read, Write};
    let mut stream = std::net::TcpStream::connect(addr).map_err(|e| e.to_string())?;
    let message = format!(
        "{head}\r\nHost: localhost\r\nConnection: close\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(message.as_bytes()).map_err(|e| e.to_string())?;
    let mut response = String::new();
    stream.read_to_string(&mut response).map_err(|e| e.to_string())?;
    let status: u16 = response
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format!("bad response: {response:?}"))?;
    let payload = response
        .split_once("\r\n\r\n")
        .map(|(_, b)| b.to_owned())
        .unwrap_or_default();
    Ok((status, payload))
}

/// The decision document is the bytes between the fixed neighbor keys of
/// the response wrapper, so equality here is byte equality on the wire.
fn decision_bytes(response: &str) -> std::result::Result<&str, String> {
    let start = response
        .find("\"decision\":")
        .ok_or_else(|| format!("no decision in {response:?}"))?
        + "\"decision\":".len();
    let end = response
        .find(",\"latency_us\":")
        .ok_or_else(|| format!("no latency in {response:?}"))?;
    Ok(&response[start..end])
}

fn c10_interface_parity() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let registry = Registry::bundled();
    let encoder = lib(Encoder::from_spec(&EncoderSpec::hashed(32)))?;
    let params = lib(EstimatorParameters::init(&registry, "nova", &encoder, 8, 16, 7))?;
    let params_path = dir.path().join("params.tgpm");
    lib(save_params(&params, &params_path))?;

    let state = ServiceState {
        params: lib(tollgate::estimator::load_params(&params_path, &registry))?,
        encoder,
        registry,
        router: RouterConfig::default(),
    };
    let service = lib(Service::start(
        &ServiceConfig { addr: "127.0.0.1:0".into(), concurrency: 4 },
        state,
    ))?;
    let addr = service.addr();

    let words = ["route", "draft", "report", "sort", "plan", "check", "cost", "token"];
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    for i in 0..100 {
        let prompt: Vec<&str> = (0..rng.gen_range(3..20))
            .map(|_| words[rng.gen_range(0..words.len())])
            .collect();
        let prompt = prompt.join(" ");
        let tolerance = match i % 5 {
            0 => 0.0,
            1 => 1.0,
            _ => rng.gen(),
        };
        let candidates: Option<Vec<String>> = match i % 4 {
            0 => None,
            1 => Some(vec!["nova-pro".into(), "nova-lite".into()]),
            2 => Some(vec!["nova-lite".into(), "nova-pro".into()]),
            _ => Some(vec![["nova-pro", "nova-lite"][rng.gen_range(0..2)].into()]),
        };
        let prompt_id = if rng.gen_bool(0.5) { format!("q{i}") } else { String::new() };

        let mut cli = std::process::Command::new(env!("CARGO_BIN_EXE_tollgate"));
        cli.env_remove("TOLLGATE_CONFIG").args([
            "route",
            "--prompt",
            &prompt,
            "--tolerance",
            &tolerance.to_string(),
            "--params",
            params_path.to_str().unwrap(),
            "--prompt-id",
            &prompt_id,
        ]);
        if let Some(subset) = &candidates {
            for id in subset {
                cli.args(["--candidate", id]);
            }
        }
        let output = cli.output().map_err(|e| e.to_string())?;
        ensure!(
            output.status.success(),
            "request {i}: cli failed: {}",
            String::from_utf8_lossy(&output.stderr)
        );
        let cli_response = String::from_utf8_lossy(&output.stdout);

        let body = serde_json::to_string(&RouteRequest {
            prompt,
            tolerance: Some(tolerance),
            family: None,
            candidates,
            prompt_id: Some(prompt_id),
            request_id: None,
        })
        .map_err(|e| e.to_string())?;
        let (status, service_response) = http_request(addr, "POST /route HTTP/1.1", &body)?;
        ensure!(status == 200, "request {i}: service returned {status}");

        let cli_decision = decision_bytes(cli_response.trim())?;
        let service_decision = decision_bytes(&service_response)?;
        ensure!(
            cli_decision == service_decision,
            "request {i}: decisions differ:\n{cli_decision}\n{service_decision}"
        );
    }

    // Malformed traffic: every response is a clean client error and the
    // service keeps answering afterwards.
    let malformed = [
        ("POST /route HTTP/1.1", "this is not json"),
        ("POST /route HTTP/1.1", "{\"prompt\":\"\"}"),
        ("POST /route HTTP/1.1", "{\"prompt\":\"x\",\"tolerance\":7.5}"),
        ("POST /route HTTP/1.1", "{\"prompt\":\"x\",\"family\":\"claude\"}"),
        ("POST /route HTTP/1.1", "{\"prompt\":\"x\",\"candidates\":[]}"),
        ("POST /route HTTP/1.1", "{\"prompt\":\"x\",\"candidates\":[\"gpt-9\"]}"),
        ("PUT /route HTTP/1.1", "{}"),
        ("GET /missing HTTP/1.1", ""),
    ];
    for (head, body) in malformed {
        let (status, _) = http_request(addr, head, body)?;
        ensure!(
            (400..500).contains(&status),
            "{head} {body:?} answered {status}, expected a 4xx"
        );
    }
    let (status, health) = http_request(addr, "GET /health HTTP/1.1", "")?;
    ensure!(status == 200 && health.contains("\"ok\""), "health check failed after malformed traffic");
    Ok("100 randomized requests byte-identical across cli and service; malformed traffic handled".into())
}

// ------------------------------------------------------------ harness

type Criterion = (&'static str, fn() -> Check);

#[test]
fn acceptance() {
    let criteria: Vec<Criterion> = vec![
        ("routing law", c01_routing_law),
        ("metric oracle equivalence", c02_metric_oracles),
        ("random-baseline calibration", c03_random_calibration),
        ("oracle dominance and anchors", c04_oracle_dominance),
        ("estimator learning", c05_estimator_learning),
        ("gradient correctness", c06_gradient_correctness),
        ("loss ablation direction", c07_loss_ablation),
        ("adapter contract", c08_adapter_contract),
        ("decision latency", c09_latency),
        ("interface parity", c10_interface_parity),
    ];
    // Write straight to stdout so the per-criterion report is visible
    // in a plain `cargo test` run, not only under --nocapture.
    let mut out = std::io::stdout().lock();
    let mut failures = Vec::new();
    for (index, (name, check)) in criteria.iter().enumerate() {
        let number = index + 1;
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let reason = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(reason)
        });
        let secs = started.elapsed().as_secs_f64();
        let line = match outcome {
            Ok(detail) => format!("criterion {number:02} pass ({secs:.1}s) {name}: {detail}"),
            Err(reason) => {
                failures.push(format!("{number:02} {name}: {reason}"));
                format!("criterion {number:02} FAIL ({secs:.1}s) {name}: {reason}")
            }
        };
        writeln!(out, "{line}").expect("stdout");
    }
    drop(out);
    assert!(failures.is_empty(), "failed criteria:\n{}", failures.join("\n"));
}
