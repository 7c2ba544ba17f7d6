//! Three interactive operations for the static page in `www/`:
//! power iteration on a grouped cBN vector, effective-number class weights
//! for a long-tailed spec, and a short toy training run returning
//! per-class samples.
//!
//! The plain functions are target independent; the `wasm_bindgen`
//! wrappers at the bottom flatten their results into `Float64Array`s.

use gsr_core::condgen::Architecture;
use gsr_core::data::{make_ring_mixture, sample_dataset, LongTailSpec};
use gsr_core::regularizers::{effective_number_weights, RegConfig, Variant};
use gsr_core::spectral::{self, iteration_complexity, oracle, sigma_max_power, PowerIterState};
use gsr_core::train::{run_training, AdamConfig, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Width of the demo cBN vector.
pub const DEMO_WIDTH: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct GroupingTrace {
    pub n_g: usize,
    pub n_c: usize,
    /// Estimate after each iteration.
    pub sigma: Vec<f64>,
    pub exact: f64,
    pub complexity_per_iter: usize,
}

/// Groups a seeded `1 + 0.3·noise` gain vector (a trained-looking γ) into
/// `n_g` rows and traces power iteration from a seeded start.
pub fn grouping_trace(n_g: usize, iters: usize, seed: u32) -> Result<GroupingTrace, String> {
    if iters == 0 || iters > 1000 {
        return Err("iterations must lie in 1..=1000".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let gamma: Vec<f64> = (0..DEMO_WIDTH).map(|_| 1.0 + 0.3 * (rng.random::<f64>() * 2.0 - 1.0)).collect();
    let m = spectral::group(&gamma, n_g).map_err(|e| e.to_string())?;
    let mut st = PowerIterState::seeded(m.n_c(), seed as u64 ^ 0x9e37);
    let sigma = (0..iters)
        .map(|_| sigma_max_power(&m, 1, &mut st).map(|e| e.sigma).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GroupingTrace {
        n_g,
        n_c: m.n_c(),
        sigma,
        exact: oracle::sigma_max_svd_oracle(&m),
        complexity_per_iter: iteration_complexity(n_g, m.n_c(), 1),
    })
}

/// Per-class counts `n_y` and weights `λ_y` of a long-tailed spec.
pub fn class_weights(k: usize, rho: f64, n_max: usize, alpha: f64) -> Result<(Vec<usize>, Vec<f64>), String> {
    let spec = LongTailSpec::new(k, rho, n_max).map_err(|e| e.to_string())?;
    let w = effective_number_weights(&spec.counts, alpha).map_err(|e| e.to_string())?;
    Ok((spec.counts, w.lambda))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyRun {
    pub counts: Vec<usize>,
    pub frechet: Vec<f64>,
    /// Converged `σ_max(Γ¹_y)` of the EMA generator per class.
    pub sigma_gamma: Vec<f64>,
    pub samples: Vec<Vec<[f64; 2]>>,
    pub aborted: bool,
}

/// Small configuration the page trains in a few seconds.
pub fn toy_config(variant: Variant, steps: u64, seed: u64) -> TrainConfig {
    let adam = AdamConfig { lr: 1e-3, ..AdamConfig::default() };
    TrainConfig {
        arch: Architecture { num_classes: 4, latent_dim: 4, hidden: 16 },
        steps,
        n_dis: 2,
        batch_size: 16,
        adam_d: adam,
        adam_g: adam,
        ema_start: steps / 4,
        reg: RegConfig { n_g: 4, variant, ..RegConfig::default() },
        seed,
        log_interval: steps.max(1),
        eval_interval: steps.max(1),
        eval_per_class: 200,
        standing_batch: 200,
        ..TrainConfig::default()
    }
}

/// Trains the toy 4-class ring (imbalance 20) and returns the EMA
/// generator's samples.
pub fn toy_train(variant: &str, steps: u32, seed: u32) -> Result<ToyRun, String> {
    let variant: Variant = variant.parse()?;
    if steps > 20_000 {
        return Err("at most 20000 steps in the browser".into());
    }
    let spec = LongTailSpec::new(4, 20.0, 400).map_err(|e| e.to_string())?;
    let dists = make_ring_mixture(4, 2.0, 0.15);
    let data = sample_dataset(&spec, &dists, seed as u64).map_err(|e| e.to_string())?;
    let cfg = toy_config(variant, steps as u64, seed as u64);
    let log = run_training(&cfg, &data, &dists).map_err(|e| e.to_string())?;
    let snap = log.last_snapshot().ok_or("no snapshot")?;
    Ok(ToyRun {
        counts: spec.counts,
        frechet: snap.classes.iter().map(|c| c.frechet).collect(),
        sigma_gamma: (0..4).map(|y| snap.sigma_gamma_at(0, y)).collect(),
        samples: log.final_samples.clone(),
        aborted: log.abort.is_some(),
    })
}

#[cfg(target_arch = "wasm32")]
mod web {
    use wasm_bindgen::prelude::*;

    fn js(e: String) -> JsValue {
        JsValue::from_str(&e)
    }

    /// `[exact σ, multiplications per iteration, n_c, σ_1, …, σ_iters]`.
    #[wasm_bindgen]
    pub fn grouping_trace(n_g: usize, iters: usize, seed: u32) -> Result<Vec<f64>, JsValue> {
        let t = super::grouping_trace(n_g, iters, seed).map_err(js)?;
        let mut out = vec![t.exact, t.complexity_per_iter as f64, t.n_c as f64];
        out.extend(t.sigma);
        Ok(out)
    }

    /// `[n_0, …, n_{K−1}, λ_0, …, λ_{K−1}]`.
    #[wasm_bindgen]
    pub fn class_weights(k: usize, rho: f64, n_max: usize, alpha: f64) -> Result<Vec<f64>, JsValue> {
        let (n, w) = super::class_weights(k, rho, n_max, alpha).map_err(js)?;
        Ok(n.iter().map(|&c| c as f64).chain(w).collect())
    }

    /// `[K, aborted, n_y × K, Fréchet × K, σ(Γ¹) × K, then (class, x, y) triples]`.
    #[wasm_bindgen]
    pub fn toy_train(variant: &str, steps: u32, seed: u32) -> Result<Vec<f64>, JsValue> {
        let r = super::toy_train(variant, steps, seed).map_err(js)?;
        let mut out = vec![r.counts.len() as f64, if r.aborted { 1.0 } else { 0.0 }];
        out.extend(r.counts.iter().map(|&c| c as f64));
        out.extend(&r.frechet);
        out.extend(&r.sigma_gamma);
        for (y, pts) in r.samples.iter().enumerate() {
            for p in pts {
                out.extend([y as f64, p[0], p[1]]);
            }
        }
        Ok(out)
    }
}
