//! Deterministic SGD training loop with per-step loss weighting and a
//! one-cycle learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{task_losses, MlpConfig, MultiHeadModel};
use crate::ndnum::{sgd_step, Binding, Tape};
use crate::taskdata::{batches, MultiTaskDataset};
use crate::weighting::{Scheme, Weighter, WeightingConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrScheduler {
    Constant,
    #[default]
    OneCycle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub max_lr: f64,
    pub scheduler: LrScheduler,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
    pub weighting: WeightingConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            max_lr: 0.001,
            scheduler: LrScheduler::OneCycle,
            pct_start: 0.3,
            div_factor: 25.0,
            final_div_factor: 1e4,
            weighting: WeightingConfig::new(Scheme::Equal),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !(self.max_lr > 0.0 && self.max_lr.is_finite()) {
            return Err(Error::config(format!(
                "max_lr must be positive, got {}",
                self.max_lr
            )));
        }
        if self.scheduler == LrScheduler::OneCycle {
            check_one_cycle(self.pct_start, self.div_factor, self.final_div_factor)?;
        }
        self.weighting.validate()
    }

    fn lr_at(&self, step: usize, total_steps: usize) -> Result<f64> {
        match self.scheduler {
            LrScheduler::Constant => Ok(self.max_lr),
            LrScheduler::OneCycle => one_cycle_lr(
                step,
                total_steps,
                self.max_lr,
                self.pct_start,
                self.div_factor,
                self.final_div_factor,
            ),
        }
    }
}

fn check_one_cycle(pct_start: f64, div_factor: f64, final_div_factor: f64) -> Result<()> {
    if !(pct_start > 0.0 && pct_start < 1.0) {
        return Err(Error::config(format!(
            "pct_start must be in (0, 1), got {pct_start}"
        )));
    }
    if !(div_factor > 1.0) || !(final_div_factor > 1.0) {
        return Err(Error::config(format!(
            "div_factor and final_div_factor must exceed 1, got {div_factor} and {final_div_factor}"
        )));
    }
    Ok(())
}

/// One-cycle learning rate for optimizer step `step` of `total_steps`.
///
/// Cosine warm-up from `max_lr / div_factor` to `max_lr` over the first
/// `ceil(pct_start * total_steps)` steps, then cosine annealing to
/// `max_lr / final_div_factor` at the last step. In very short runs the
/// peak moves to `total_steps - 2` so the last step still lands on the
/// terminal rate; with two steps there is no room for a peak at all.
pub fn one_cycle_lr(
    step: usize,
    total_steps: usize,
    max_lr: f64,
    pct_start: f64,
    div_factor: f64,
    final_div_factor: f64,
) -> Result<f64> {
    check_one_cycle(pct_start, div_factor, final_div_factor)?;
    if !(max_lr > 0.0) {
        return Err(Error::config(format!(
            "max_lr must be positive, got {max_lr}"
        )));
    }
    if total_steps < 2 || step >= total_steps {
        return Err(Error::config(format!(
            "one-cycle step {step} outside schedule of {total_steps} steps (need >= 2)"
        )));
    }
    let initial = max_lr / div_factor;
    let last = max_lr / final_div_factor;
    if step == total_steps - 1 {
        return Ok(last);
    }
    let peak =
        ((pct_start * total_steps as f64).ceil() as usize).clamp(1, (total_steps - 2).max(1));
    let cos_blend = |from: f64, to: f64, frac: f64| {
        to + (from - to) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
    };
    if step <= peak {
        Ok(cos_blend(initial, max_lr, step as f64 / peak as f64))
    } else {
        let span = (total_steps - 1 - peak) as f64;
        Ok(cos_blend(max_lr, last, (step - peak) as f64 / span))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: Vec<f64>,
    pub test_loss: Vec<f64>,
    /// Percent.
    pub test_accuracy: Vec<f64>,
    pub mean_weight: Vec<f64>,
    /// Learning rate of the last step of the epoch.
    pub lr: f64,
    /// Wall-clock time; not serialized so results stay byte-reproducible.
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// `stl` or the weighting scheme name.
    pub label: String,
    pub config: TrainConfig,
    /// Dataset task index of each metrics column.
    pub tasks: Vec<usize>,
    pub epochs: Vec<EpochMetrics>,
    pub final_accuracy: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskEval {
    pub loss: f64,
    pub accuracy: f64,
}

/// Per-task mean cross-entropy and accuracy over a whole split.
pub fn evaluate(model: &MultiHeadModel, data: &MultiTaskDataset) -> Result<Vec<TaskEval>> {
    if data.is_empty() {
        return Err(Error::config("cannot evaluate on an empty split"));
    }
    let tape = Tape::new();
    let bound = model.bind(&tape);
    let x = tape.leaf(data.features.clone());
    let logits = model.forward(&bound, x)?;
    let losses = task_losses(&logits, &data.task_labels)?;
    Ok(logits
        .iter()
        .zip(&losses)
        .zip(&data.task_labels)
        .map(|((z, loss), labels)| {
            let pred = z.value().argmax_rows();
            let correct = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
            TaskEval {
                loss: loss.item(),
                accuracy: 100.0 * correct as f64 / labels.len() as f64,
            }
        })
        .collect())
}

/// What happened at one optimizer step; handed to training observers.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub losses: Vec<f64>,
    pub weights: Vec<f64>,
    pub lr: f64,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

#[cfg(not(target_arch = "wasm32"))]
fn stopwatch() -> impl Fn() -> f64 {
    let start = std::time::Instant::now();
    move || start.elapsed().as_secs_f64()
}

#[cfg(target_arch = "wasm32")]
fn stopwatch() -> impl Fn() -> f64 {
    || 0.0
}

pub fn train_mtl(
    config: &TrainConfig,
    train: &MultiTaskDataset,
    test: &MultiTaskDataset,
    model: &mut MultiHeadModel,
) -> Result<RunResult> {
    train_mtl_observed(config, train, test, model, |_| {})
}

/// [`train_mtl`] with a callback after every optimizer step.
pub fn train_mtl_observed(
    config: &TrainConfig,
    train: &MultiTaskDataset,
    test: &MultiTaskDataset,
    model: &mut MultiHeadModel,
    on_step: impl FnMut(&StepRecord),
) -> Result<RunResult> {
    let label = scheme_label(&config.weighting);
    run(
        config,
        train,
        test,
        model,
        label,
        (0..train.n_tasks()).collect(),
        on_step,
    )
}

pub fn scheme_label(w: &WeightingConfig) -> String {
    use crate::weighting::UncertaintyVariant::*;
    match (w.scheme, w.uncertainty_variant) {
        (Scheme::Equal, _) => "equal".into(),
        (Scheme::AdaptiveRatio, _) => "adaptive_ratio".into(),
        (Scheme::Dwa, _) => "dwa".into(),
        (Scheme::Uncertainty, Kendall) => "uncertainty_kendall".into(),
        (Scheme::Uncertainty, Revised) => "uncertainty_revised".into(),
    }
}

/// Trains a fresh single-head model (seeded by `config.seed`) on one task.
/// The weighting configuration is ignored: a single task has weight 1.
pub fn train_stl(
    config: &TrainConfig,
    train: &MultiTaskDataset,
    test: &MultiTaskDataset,
    task_index: usize,
    trunk_widths: &[usize],
) -> Result<RunResult> {
    let train_k = train.single_task(task_index)?;
    let test_k = test.single_task(task_index)?;
    let mut model = MultiHeadModel::init(MlpConfig {
        input_dim: train.dim(),
        trunk_widths: trunk_widths.to_vec(),
        head_class_counts: train_k.task_class_counts.clone(),
        init_seed: config.seed,
    })?;
    let stl_config = TrainConfig {
        weighting: WeightingConfig::new(Scheme::Equal),
        ..config.clone()
    };
    run(
        &stl_config,
        &train_k,
        &test_k,
        &mut model,
        "stl".into(),
        vec![task_index],
        |_| {},
    )
}

fn run(
    config: &TrainConfig,
    train: &MultiTaskDataset,
    test: &MultiTaskDataset,
    model: &mut MultiHeadModel,
    label: String,
    tasks: Vec<usize>,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<RunResult> {
    config.validate()?;
    let n = train.n_tasks();
    if model.head_count() != n || test.n_tasks() != n {
        return Err(Error::config(format!(
            "model has {} heads but data has {} train / {} test tasks",
            model.head_count(),
            n,
            test.n_tasks()
        )));
    }
    if train.is_empty() {
        return Err(Error::config("empty training split"));
    }
    let mut weighter = Weighter::new(config.weighting.clone(), n)?;
    let steps_per_epoch = train.len().div_ceil(config.batch_size);
    let total_steps = config.epochs * steps_per_epoch;
    if config.scheduler == LrScheduler::OneCycle && config.epochs > 0 && total_steps < 2 {
        return Err(Error::config(
            "one-cycle schedule needs at least 2 optimizer steps",
        ));
    }

    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 0..config.epochs {
        let elapsed = stopwatch();
        weighter.begin_epoch()?;
        let mut loss_sums = vec![0.0; n];
        let mut weight_sums = vec![0.0; n];
        let mut lr = config.max_lr;
        let epoch_batches = batches(train, config.batch_size, epoch_seed(config.seed, epoch))?;
        let n_batches = epoch_batches.len();
        for batch in epoch_batches {
            lr = config.lr_at(step, total_steps)?;
            let tape = Tape::new();
            let bound = model.bind(&tape);
            let s_bound = weighter
                .uncertainty()
                .map(|u| Binding::new(&tape, std::slice::from_ref(&u.s)));
            let x = tape.leaf(batch.features);
            let logits = model.forward(&bound, x)?;
            let losses = task_losses(&logits, &batch.labels)?;
            let values: Vec<f64> = losses.iter().map(|l| l.item()).collect();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { epoch, step });
            }
            let (total, weights) =
                weighter.total_loss(&losses, s_bound.as_ref().map(|b| b.var(0)))?;
            if !total.item().is_finite() {
                return Err(Error::Divergence { epoch, step });
            }
            let grads = tape.backward(total)?;
            bound.accumulate(&grads, model.params_mut());
            let rows = batch.indices.len() as f64;
            for k in 0..n {
                loss_sums[k] += values[k] * rows;
                weight_sums[k] += weights.as_slice()[k];
            }
            on_step(&StepRecord {
                epoch,
                step,
                losses: values,
                weights: weights.into_inner(),
                lr,
            });
            match (weighter.uncertainty_mut(), s_bound) {
                (Some(u), Some(b)) => {
                    b.accumulate(&grads, std::slice::from_mut(&mut u.s));
                    sgd_step(model.params_mut().iter_mut().chain([&mut u.s]), lr)?;
                }
                _ => sgd_step(model.params_mut(), lr)?,
            }
            step += 1;
        }
        let train_loss: Vec<f64> = loss_sums.iter().map(|s| s / train.len() as f64).collect();
        weighter.end_epoch(&train_loss)?;
        let eval = evaluate(model, test)?;
        history.push(EpochMetrics {
            epoch,
            train_loss,
            test_loss: eval.iter().map(|e| e.loss).collect(),
            test_accuracy: eval.iter().map(|e| e.accuracy).collect(),
            mean_weight: weight_sums.iter().map(|w| w / n_batches as f64).collect(),
            lr,
            seconds: elapsed(),
        });
    }
    let final_accuracy = match history.last() {
        Some(m) => m.test_accuracy.clone(),
        None => evaluate(model, test)?.iter().map(|e| e.accuracy).collect(),
    };
    Ok(RunResult {
        label,
        config: config.clone(),
        tasks,
        epochs: history,
        final_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskdata::{derive_tasks, group_labels, split, synth_gaussian};

    fn lr(step: usize, total: usize) -> f64 {
        one_cycle_lr(step, total, 0.1, 0.3, 25.0, 1e4).unwrap()
    }

    #[test]
    fn one_cycle_endpoints() {
        let total = 100;
        assert!((lr(0, total) - 0.1 / 25.0).abs() < 1e-12);
        assert!((lr(30, total) - 0.1).abs() < 1e-12);
        assert!((lr(99, total) - 0.1 / 1e4).abs() < 1e-12);
    }

    #[test]
    fn one_cycle_short_runs_keep_endpoints() {
        assert!((lr(0, 2) - 0.1 / 25.0).abs() < 1e-12);
        assert_eq!(lr(1, 2), 0.1 / 1e4);
        // ceil(0.3 * 3) = 1 is still before the last step
        assert!((lr(1, 3) - 0.1).abs() < 1e-12);
        assert_eq!(lr(2, 3), 0.1 / 1e4);
    }

    #[test]
    fn one_cycle_rejects_bad_arguments() {
        assert!(one_cycle_lr(5, 5, 0.1, 0.3, 25.0, 1e4).is_err());
        assert!(one_cycle_lr(0, 1, 0.1, 0.3, 25.0, 1e4).is_err());
        assert!(one_cycle_lr(0, 10, 0.1, 1.0, 25.0, 1e4).is_err());
        assert!(one_cycle_lr(0, 10, 0.1, 0.3, 1.0, 1e4).is_err());
        assert!(one_cycle_lr(0, 10, 0.0, 0.3, 25.0, 1e4).is_err());
    }

    #[test]
    fn one_cycle_is_unimodal() {
        let total = 57;
        let v: Vec<f64> = (0..total).map(|s| lr(s, total)).collect();
        let peak = (0.3f64 * total as f64).ceil() as usize;
        assert!(v[..=peak].windows(2).all(|w| w[0] <= w[1]));
        assert!(v[peak..].windows(2).all(|w| w[0] >= w[1]));
    }

    fn data() -> (MultiTaskDataset, MultiTaskDataset) {
        let fine = synth_gaussian(3, 4, 12, 5, 0.3).unwrap();
        let mt = derive_tasks(
            &fine,
            &[group_labels(4, 2).unwrap(), group_labels(4, 4).unwrap()],
        )
        .unwrap();
        split(&mt, 0.75, 1).unwrap()
    }

    fn model(heads: Vec<usize>) -> MultiHeadModel {
        MultiHeadModel::init(MlpConfig {
            input_dim: 5,
            trunk_widths: vec![8],
            head_class_counts: heads,
            init_seed: 0,
        })
        .unwrap()
    }

    #[test]
    fn zero_epochs_leave_model_untouched() {
        let (train, test) = data();
        let mut m = model(vec![2, 4]);
        let before = m.clone();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let r = train_mtl(&cfg, &train, &test, &mut m).unwrap();
        assert!(r.epochs.is_empty());
        assert_eq!(m, before);
        assert_eq!(r.final_accuracy.len(), 2);
    }

    #[test]
    fn head_mismatch_is_config_error() {
        let (train, test) = data();
        let mut m = model(vec![2]);
        assert!(matches!(
            train_mtl(&TrainConfig::default(), &train, &test, &mut m),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn stl_bad_index() {
        let (train, test) = data();
        assert!(train_stl(&TrainConfig::default(), &train, &test, 2, &[8]).is_err());
        let r = train_stl(
            &TrainConfig {
                epochs: 1,
                ..TrainConfig::default()
            },
            &train,
            &test,
            1,
            &[8],
        )
        .unwrap();
        assert_eq!(r.tasks, vec![1]);
        assert_eq!(r.epochs[0].test_accuracy.len(), 1);
    }

    #[test]
    fn diverging_run_reports_position() {
        let (train, test) = data();
        let mut m = model(vec![2, 4]);
        let cfg = TrainConfig {
            epochs: 3,
            max_lr: 1e300,
            scheduler: LrScheduler::Constant,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_mtl(&cfg, &train, &test, &mut m),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn uncertainty_parameters_move() {
        let (train, test) = data();
        let mut m = model(vec![2, 4]);
        let cfg = TrainConfig {
            epochs: 2,
            max_lr: 0.05,
            weighting: WeightingConfig::new(Scheme::Uncertainty),
            ..TrainConfig::default()
        };
        let r = train_mtl(&cfg, &train, &test, &mut m).unwrap();
        let w = &r.epochs[1].mean_weight;
        assert!(
            w.iter().all(|&w| w > 0.0 && (w - 0.5).abs() > 1e-9),
            "{w:?}"
        );
    }

    #[test]
    fn evaluate_empty_split() {
        let (train, _) = data();
        let empty = MultiTaskDataset {
            fine_labels: vec![],
            task_labels: vec![vec![], vec![]],
            ..train.clone()
        };
        assert!(evaluate(&model(vec![2, 4]), &empty).is_err());
    }
}
