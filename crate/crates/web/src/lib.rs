//! Interactive demos over synthetic data, compiled to WebAssembly.
//!
//! Each operation has a plain Rust entry point returning a serializable
//! result and a `#[wasm_bindgen]` wrapper that hands JSON to the page.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sensevar::bias::position_similarity;
use sensevar::metrics::{enumerate_pairs, layer_sweep, sim_rand, RandomConfig};
use sensevar::synth::{
    position_bias_fixture, position_rows, sense_fixture, store_for, PositionFixtureConfig, SenseFixtureConfig,
};
use sensevar::wsd::fit_threshold_scores;
use sensevar::{Aggregation, Buckets, EmbeddingStore, MetricsError, Relation, SamplerConfig, Variant, WordIdentity};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Store(#[from] sensevar::embstore::StoreError),
    #[error(transparent)]
    Wsd(#[from] sensevar::wsd::WsdError),
}

fn check(ok: bool, msg: &str) -> Result<(), DemoError> {
    if ok {
        Ok(())
    } else {
        Err(DemoError::Invalid(msg.into()))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PositionBucket {
    pub bucket: String,
    pub original: Option<f64>,
    pub shifted: Option<f64>,
}

/// Same-position similarity per position bucket, before and after moving
/// the anchor `shift` tokens to the right.
pub fn position_profile(anchor_weight: f64, shift: u32, seed: u64) -> Result<Vec<PositionBucket>, DemoError> {
    check((0.0..=1.0).contains(&anchor_weight), "anchor weight must lie in [0, 1]")?;
    check(shift <= 16, "shift must be at most 16")?;
    let cfg = PositionFixtureConfig { anchor_weight, noise_weight: 1.0 - anchor_weight, seed, ..Default::default() };
    let f = position_bias_fixture(&cfg);
    let (_, bytes) = store_for(&f.corpus, "demo", 1, cfg.dim, Variant::Plain, position_rows(&f.corpus, &cfg, shift))?;
    let shifted = EmbeddingStore::from_bytes(bytes)?;
    let profile = |s: &EmbeddingStore| {
        position_similarity(s, &f.corpus, &Buckets::positions(), SamplerConfig::default(), 1, Aggregation::Micro)
    };
    let (a, b) = (profile(&f.store())?, profile(&shifted)?);
    Ok(a.buckets
        .iter()
        .zip(&b.buckets)
        .map(|(x, y)| PositionBucket { bucket: x.bucket.clone(), original: x.mean_cosine, shifted: y.mean_cosine })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct ThresholdCurve {
    pub thresholds: Vec<f64>,
    /// Accuracy on the fit sample at each grid threshold.
    pub fit_curve: Vec<f64>,
    pub fitted: f64,
    pub fit_accuracy: f64,
    pub held_out_accuracy: f64,
    pub bayes_threshold: f64,
    pub bayes_accuracy: f64,
}

fn draw(mu_neg: f64, mu_pos: f64, sd: f64, n: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let (neg, pos) = (Normal::new(mu_neg, sd).unwrap(), Normal::new(mu_pos, sd).unwrap());
    (0..n)
        .map(|i| {
            let g = i % 2 == 1;
            let c: f64 = if g { pos.sample(rng) } else { neg.sample(rng) };
            (c.clamp(-1.0, 1.0), g)
        })
        .unzip()
}

fn accuracy(t: f64, cos: &[f64], gold: &[bool]) -> f64 {
    cos.iter().zip(gold).filter(|(&c, &g)| (c > t) == g).count() as f64 / cos.len() as f64
}

/// Fits a cosine threshold on `n` cosines from two Gaussians and scores it
/// on a large held-out draw next to the midpoint rule.
pub fn threshold_curve(mu_neg: f64, mu_pos: f64, sd: f64, n: usize, seed: u64) -> Result<ThresholdCurve, DemoError> {
    check(mu_neg < mu_pos, "different-meaning mean must be below same-meaning mean")?;
    check(sd > 0.0 && sd.is_finite(), "spread must be positive")?;
    check((2..=100_000).contains(&n), "sample size must be between 2 and 100000")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cos, gold) = draw(mu_neg, mu_pos, sd, n, &mut rng);
    let (held_c, held_g) = draw(mu_neg, mu_pos, sd, 20_000, &mut rng);
    let (fitted, fit_accuracy) = fit_threshold_scores(&cos, &gold)?;
    let thresholds: Vec<f64> = (0..=200).map(|k| -1.0 + k as f64 * 0.01).collect();
    let bayes_threshold = (mu_neg + mu_pos) / 2.0;
    Ok(ThresholdCurve {
        fit_curve: thresholds.iter().map(|&t| accuracy(t, &cos, &gold)).collect(),
        thresholds,
        fitted,
        fit_accuracy,
        held_out_accuracy: accuracy(fitted, &held_c, &held_g),
        bayes_threshold,
        bayes_accuracy: accuracy(bayes_threshold, &held_c, &held_g),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerRow {
    pub layer: u32,
    pub sim_ss: Option<f64>,
    pub sim_ds: Option<f64>,
    pub sim_rand: f64,
}

/// Sense similarity per layer on a synthetic corpus whose vectors share a
/// common direction of weight `anisotropy`.
pub fn sense_layers(anisotropy: f64, noise: f64, seed: u64) -> Result<Vec<LayerRow>, DemoError> {
    check((0.0..=10.0).contains(&anisotropy), "anisotropy must lie in [0, 10]")?;
    check(noise > 0.0 && noise <= 10.0, "noise must lie in (0, 10]")?;
    let cfg = SenseFixtureConfig { anisotropy, noise, seed, ..Default::default() };
    let f = sense_fixture(&cfg);
    let store = f.store();
    let layers: Vec<u32> = store.hidden_layers().collect();
    let sweep = |rel| -> Result<Vec<Option<f64>>, DemoError> {
        let pairs = enumerate_pairs(&f.corpus, rel, None, SamplerConfig::default(), WordIdentity::Surface)?;
        Ok(layer_sweep(&store, &f.corpus, &pairs, &layers, Aggregation::Micro)?
            .iter()
            .map(|r| r.global.sim_value)
            .collect())
    };
    let (ss, ds) = (sweep(Relation::SameWordSameSense)?, sweep(Relation::DiffWordSameSense)?);
    layers
        .iter()
        .enumerate()
        .map(|(i, &layer)| {
            let rand = sim_rand(&store, &f.corpus, &RandomConfig { seed, ..Default::default() }, layer)?.value;
            Ok(LayerRow { layer, sim_ss: ss[i], sim_ds: ds[i], sim_rand: rand })
        })
        .collect()
}

fn to_js<T: Serialize>(r: Result<T, DemoError>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = positionProfile)]
pub fn position_profile_js(anchor_weight: f64, shift: u32, seed: u32) -> Result<String, JsError> {
    to_js(position_profile(anchor_weight, shift, seed.into()))
}

#[wasm_bindgen(js_name = thresholdCurve)]
pub fn threshold_curve_js(mu_neg: f64, mu_pos: f64, sd: f64, n: u32, seed: u32) -> Result<String, JsError> {
    to_js(threshold_curve(mu_neg, mu_pos, sd, n as usize, seed.into()))
}

#[wasm_bindgen(js_name = senseLayers)]
pub fn sense_layers_js(anisotropy: f64, noise: f64, seed: u32) -> Result<String, JsError> {
    to_js(sense_layers(anisotropy, noise, seed.into()))
}
