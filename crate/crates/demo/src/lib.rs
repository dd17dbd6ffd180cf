//! Browser bindings for exploring the weighting schemes.
//!
//! Three operations are exported: comparing the weights each scheme assigns
//! to a loss vector, sampling a one-cycle learning-rate curve, and running a
//! small training job that returns per-epoch curves. Each has a plain Rust
//! counterpart returning `Result<_, String>` so it can be tested natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use mtl_core::model::{init_model, MlpConfig};
use mtl_core::ndnum::Tape;
use mtl_core::taskdata::{derive_tasks, group_labels, split, synth_gaussian};
use mtl_core::trainer::{one_cycle_lr, train_mtl, train_stl, LrScheduler, RunResult, TrainConfig};
use mtl_core::weighting::{
    adaptive_ratio_weights, combine, dwa_weights, equal_weights, LossHistory, Scheme,
    UncertaintyVariant, WeightingConfig,
};

#[derive(Debug, Serialize, PartialEq)]
pub struct WeightComparison {
    pub equal: Vec<f64>,
    pub adaptive_ratio: Vec<f64>,
    pub dwa: Vec<f64>,
    /// `Σ w·L` under each scheme.
    pub totals: Totals,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct Totals {
    pub equal: f64,
    pub adaptive_ratio: f64,
    pub dwa: f64,
}

fn weighted_total(weights: &[f64], losses: &[f64]) -> Result<f64, String> {
    let tape = Tape::new();
    let vars: Vec<_> = losses.iter().map(|&l| tape.constant(l)).collect();
    let w = mtl_core::weighting::WeightVector::new(weights.to_vec());
    Ok(combine(&w, &vars).map_err(|e| e.to_string())?.item())
}

/// Weights for `losses` under equal, adaptive-ratio, and DWA weighting.
/// DWA treats `previous` and `losses` as the last two epochs.
pub fn weight_comparison(
    losses: &[f64],
    previous: &[f64],
    temperature: f64,
) -> Result<WeightComparison, String> {
    let err = |e: mtl_core::Error| e.to_string();
    let equal = equal_weights(losses.len()).map_err(err)?.into_inner();
    let adaptive = adaptive_ratio_weights(losses).map_err(err)?.into_inner();
    let mut history = LossHistory::new(losses.len());
    history.record_epoch(previous).map_err(err)?;
    history.record_epoch(losses).map_err(err)?;
    let dwa = dwa_weights(&history, temperature)
        .map_err(err)?
        .into_inner();
    Ok(WeightComparison {
        totals: Totals {
            equal: weighted_total(&equal, losses)?,
            adaptive_ratio: weighted_total(&adaptive, losses)?,
            dwa: weighted_total(&dwa, losses)?,
        },
        equal,
        adaptive_ratio: adaptive,
        dwa,
    })
}

pub fn lr_curve(
    total_steps: usize,
    max_lr: f64,
    pct_start: f64,
    div_factor: f64,
    final_div_factor: f64,
) -> Result<Vec<f64>, String> {
    (0..total_steps)
        .map(|s| {
            one_cycle_lr(
                s,
                total_steps,
                max_lr,
                pct_start,
                div_factor,
                final_div_factor,
            )
            .map_err(|e| e.to_string())
        })
        .collect()
}

#[derive(Debug, Serialize, PartialEq)]
pub struct Curves {
    pub scheme: String,
    pub task_classes: Vec<usize>,
    /// `[epoch][task]`
    pub test_loss: Vec<Vec<f64>>,
    pub test_accuracy: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
    pub lr: Vec<f64>,
}

impl Curves {
    fn from_runs(scheme: &str, task_classes: Vec<usize>, runs: &[RunResult]) -> Curves {
        let epochs = runs.iter().map(|r| r.epochs.len()).min().unwrap_or(0);
        let collect = |f: &dyn Fn(&mtl_core::trainer::EpochMetrics) -> &Vec<f64>| -> Vec<Vec<f64>> {
            (0..epochs)
                .map(|e| {
                    runs.iter()
                        .flat_map(|r| f(&r.epochs[e]).iter().copied())
                        .collect()
                })
                .collect()
        };
        Curves {
            scheme: scheme.to_string(),
            task_classes,
            test_loss: collect(&|m| &m.test_loss),
            test_accuracy: collect(&|m| &m.test_accuracy),
            weights: collect(&|m| &m.mean_weight),
            lr: (0..epochs).map(|e| runs[0].epochs[e].lr).collect(),
        }
    }
}

/// Trains on a small synthetic 8-class problem split into 2-, 4-, and
/// 8-class tasks. `scheme` is one of `stl`, `equal`, `adaptive_ratio`,
/// `dwa`, `uncertainty_kendall`, `uncertainty_revised`.
pub fn training_curves(
    scheme: &str,
    epochs: usize,
    max_lr: f64,
    spread: f64,
    seed: u64,
) -> Result<Curves, String> {
    let err = |e: mtl_core::Error| e.to_string();
    let weighting = match scheme {
        "stl" | "equal" => WeightingConfig::new(Scheme::Equal),
        "adaptive_ratio" => WeightingConfig::new(Scheme::AdaptiveRatio),
        "dwa" => WeightingConfig::new(Scheme::Dwa),
        "uncertainty_kendall" => WeightingConfig::uncertainty(UncertaintyVariant::Kendall),
        "uncertainty_revised" => WeightingConfig::uncertainty(UncertaintyVariant::Revised),
        other => return Err(format!("unknown scheme `{other}`")),
    };
    let fine = synth_gaussian(seed, 8, 40, 8, spread).map_err(err)?;
    let specs = [2, 4, 8]
        .iter()
        .map(|&c| group_labels(8, c))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let (train, test) =
        split(&derive_tasks(&fine, &specs).map_err(err)?, 0.75, seed).map_err(err)?;
    let config = TrainConfig {
        epochs,
        batch_size: 32,
        max_lr,
        scheduler: LrScheduler::OneCycle,
        weighting,
        seed,
        ..TrainConfig::default()
    };
    let trunk = vec![32];
    let runs = if scheme == "stl" {
        (0..train.n_tasks())
            .map(|k| train_stl(&config, &train, &test, k, &trunk))
            .collect::<Result<Vec<_>, _>>()
            .map_err(err)?
    } else {
        let mut model = init_model(MlpConfig {
            input_dim: train.dim(),
            trunk_widths: trunk,
            head_class_counts: train.task_class_counts.clone(),
            init_seed: seed,
        })
        .map_err(err)?;
        vec![train_mtl(&config, &train, &test, &mut model).map_err(err)?]
    };
    Ok(Curves::from_runs(
        scheme,
        train.task_class_counts.clone(),
        &runs,
    ))
}

fn to_json<T: Serialize>(value: &T) -> Result<String, JsError> {
    serde_json::to_string(value).map_err(|e| JsError::new(&e.to_string()))
}

/// JSON `WeightComparison` for the given current and previous-epoch losses.
#[wasm_bindgen(js_name = compareWeights)]
pub fn compare_weights(
    losses: Vec<f64>,
    previous: Vec<f64>,
    temperature: f64,
) -> Result<String, JsError> {
    let cmp = weight_comparison(&losses, &previous, temperature).map_err(|e| JsError::new(&e))?;
    to_json(&cmp)
}

#[wasm_bindgen(js_name = oneCycleCurve)]
pub fn one_cycle_curve(
    total_steps: usize,
    max_lr: f64,
    pct_start: f64,
    div_factor: f64,
    final_div_factor: f64,
) -> Result<Vec<f64>, JsError> {
    lr_curve(total_steps, max_lr, pct_start, div_factor, final_div_factor)
        .map_err(|e| JsError::new(&e))
}

/// JSON `Curves` for one training run.
#[wasm_bindgen(js_name = trainCurves)]
pub fn train_curves(
    scheme: &str,
    epochs: usize,
    max_lr: f64,
    spread: f64,
    seed: u64,
) -> Result<String, JsError> {
    let curves =
        training_curves(scheme, epochs, max_lr, spread, seed).map_err(|e| JsError::new(&e))?;
    to_json(&curves)
}
