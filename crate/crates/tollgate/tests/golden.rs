//! Golden artifact compatibility: the checked-in parameter file and
//! embedding store must keep loading and reproducing the same numbers
//! across refactors of the on-disk formats.

use std::path::PathBuf;

use tollgate::encoder::{EmbeddingStore, Encoder, EncoderSpec};
use tollgate::estimator::{load_params, save_params, EstimatorParameters};
use tollgate::registry::Registry;
use tollgate::router::{route, RouterConfig};

const GOLDEN_PROMPT: &str = "write a short note about routing costs";
const GOLDEN_VERSION: &str = "d8236dc52651";
const GOLDEN_PRO: f64 = 0.4326269790847554;
const GOLDEN_LITE: f64 = 0.4317084076999181;
const GOLDEN_SELECTED: &str = "nova-lite";
const GOLDEN_THRESHOLD: f64 = 0.2163134895423777;

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

fn fixtures() -> (Registry, Encoder) {
    let registry = Registry::bundled();
    let encoder = Encoder::from_spec(&EncoderSpec::hashed(8)).unwrap();
    (registry, encoder)
}

fn store_rows() -> Vec<(&'static str, Vec<f64>)> {
    vec![
        ("p1", vec![0.25, -0.5, 0.125, 1.0]),
        ("p2", vec![0.1, 0.2, 0.30000000000000004, -0.75]),
        ("p3", vec![1e-9, -1e9, 0.0, 42.5]),
    ]
}

/// Rebuild the golden files after an intentional format change, then
/// update the pinned constants from its output:
/// cargo test -p tollgate --test golden -- --ignored --nocapture
#[test]
#[ignore]
fn regenerate_golden_artifacts() {
    let (registry, encoder) = fixtures();
    std::fs::create_dir_all(data_dir()).unwrap();
    let params = EstimatorParameters::init(&registry, "nova", &encoder, 4, 4, 42).unwrap();
    save_params(&params, data_dir().join("golden_params.tgpm")).unwrap();
    let mut store = EmbeddingStore::new(4);
    for (id, values) in store_rows() {
        store.insert(id, values).unwrap();
    }
    store.save(data_dir().join("golden_store.tges")).unwrap();

    let embedding = encoder.encode("golden", GOLDEN_PROMPT).unwrap();
    let estimates = params.predict_all(&embedding, &params.candidate_ids()).unwrap();
    let decision = route(&estimates, 0.5, &RouterConfig::default(), &registry).unwrap();
    println!("version: {}", params.version);
    for (id, value) in &estimates.estimates {
        println!("{id}: {value:?}");
    }
    println!("selected: {}", decision.selected);
    println!("threshold: {:?}", decision.threshold);
}

#[test]
fn golden_params_load_and_reproduce_pinned_predictions() {
    let (registry, encoder) = fixtures();
    let params = load_params(data_dir().join("golden_params.tgpm"), &registry).unwrap();
    assert_eq!(params.family, "nova");
    assert_eq!(params.d, 8);
    assert_eq!(params.d_prime, 4);
    assert_eq!(params.hidden, 4);
    assert_eq!(params.version, GOLDEN_VERSION);
    params.check_encoder(&encoder).unwrap();

    let embedding = encoder.encode("golden", GOLDEN_PROMPT).unwrap();
    let estimates = params.predict_all(&embedding, &params.candidate_ids()).unwrap();
    let by_id: std::collections::BTreeMap<&str, f64> = estimates
        .estimates
        .iter()
        .map(|(id, v)| (id.as_str(), *v))
        .collect();
    // Tolerance instead of equality: predictions pass through libm's exp.
    assert!((by_id["nova-pro"] - GOLDEN_PRO).abs() < 1e-12);
    assert!((by_id["nova-lite"] - GOLDEN_LITE).abs() < 1e-12);

    let decision = route(&estimates, 0.5, &RouterConfig::default(), &registry).unwrap();
    assert_eq!(decision.selected, GOLDEN_SELECTED);
    assert!((decision.threshold - GOLDEN_THRESHOLD).abs() < 1e-12);
}

#[test]
fn golden_store_rows_are_exact() {
    let path = data_dir().join("golden_store.tges");
    let store = EmbeddingStore::load(&path).unwrap();
    assert_eq!(store.dim(), 4);
    assert_eq!(store.len(), 3);
    for (id, values) in store_rows() {
        assert_eq!(store.get(id).unwrap(), values.as_slice(), "{id}");
    }

    let encoder = Encoder::from_spec(&EncoderSpec::Precomputed {
        path: path.to_string_lossy().into_owned(),
    })
    .unwrap();
    let embedding = encoder.encode("p2", "text is ignored for precomputed").unwrap();
    assert_eq!(embedding.values, store_rows()[1].1);
    assert!(encoder.encode("missing", "x").is_err());
}
