//! Loss-combination schemes for multi-task training.
//!
//! Every scheme reduces a vector of per-task scalar losses to one scalar that
//! is then differentiated. Equal, adaptive-ratio, and DWA weights are plain
//! constants computed from loss *values*: no gradient flows through the
//! weight computation itself, only through the losses they multiply. The
//! uncertainty schemes instead carry learnable log-variances that are trained
//! alongside the model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndnum::{softplus, Parameter, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Equal,
    AdaptiveRatio,
    Dwa,
    Uncertainty,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyVariant {
    /// `½·e^{-s}·L + ½·s`
    Kendall,
    /// `½·e^{-s}·L + ln(1 + e^{s})`
    #[default]
    Revised,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// Weights recomputed from the current mini-batch losses.
    #[default]
    PerBatch,
    /// Weights computed once per epoch from the previous epoch's mean losses.
    PerEpoch,
}

pub const DEFAULT_DWA_TEMPERATURE: f64 = 2.0;

fn default_temperature() -> f64 {
    DEFAULT_DWA_TEMPERATURE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightingConfig {
    pub scheme: Scheme,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub uncertainty_variant: UncertaintyVariant,
    #[serde(default)]
    pub granularity: Granularity,
}

impl WeightingConfig {
    pub fn new(scheme: Scheme) -> Self {
        WeightingConfig {
            scheme,
            temperature: DEFAULT_DWA_TEMPERATURE,
            uncertainty_variant: UncertaintyVariant::default(),
            granularity: Granularity::default(),
        }
    }

    pub fn uncertainty(variant: UncertaintyVariant) -> Self {
        WeightingConfig {
            uncertainty_variant: variant,
            ..WeightingConfig::new(Scheme::Uncertainty)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scheme == Scheme::Dwa && !(self.temperature > 0.0) {
            return Err(Error::config(format!(
                "DWA temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Per-task loss coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Self {
        WeightVector(weights)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Index of the largest weight, lowest index on ties.
    pub fn argmax(&self) -> Option<usize> {
        argmax(&self.0)
    }
}

pub(crate) fn argmax(xs: &[f64]) -> Option<usize> {
    let mut it = xs.iter().enumerate();
    let (mut best, mut best_v) = it.next().map(|(i, &v)| (i, v))?;
    for (i, &v) in it {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    Some(best)
}

fn check_losses(losses: &[f64]) -> Result<()> {
    for (task, &value) in losses.iter().enumerate() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::Domain { task, value });
        }
    }
    Ok(())
}

pub fn equal_weights(n: usize) -> Result<WeightVector> {
    if n == 0 {
        return Err(Error::config("task count must be at least 1"));
    }
    Ok(WeightVector(vec![1.0; n]))
}

/// Each task's weight is its share of the summed loss, scaled by the task
/// count so that the weights sum to `n` like the all-ones baseline.
///
/// Harder tasks (larger loss) receive proportionally larger weight.
pub fn adaptive_ratio_weights(losses: &[f64]) -> Result<WeightVector> {
    if losses.is_empty() {
        return Err(Error::config("task count must be at least 1"));
    }
    check_losses(losses)?;
    let n = losses.len() as f64;
    let total: f64 = losses.iter().sum();
    Ok(WeightVector(losses.iter().map(|l| l / total * n).collect()))
}

/// `Σ w_i · L_i` with the weights entering as constants.
pub fn combine<'t>(weights: &WeightVector, losses: &[Var<'t>]) -> Result<Var<'t>> {
    if weights.len() != losses.len() {
        return Err(Error::dim("combine", &[weights.len()], &[losses.len()]));
    }
    let mut terms = weights.0.iter().zip(losses).map(|(&w, l)| l.scale(w));
    let first = terms.next().ok_or(Error::Empty { op: "combine" })?;
    terms.try_fold(first, |acc, t| acc.add(&t))
}

/// Per-task record of per-epoch mean training losses.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    per_task: Vec<Vec<f64>>,
}

impl LossHistory {
    pub fn new(n_tasks: usize) -> Self {
        LossHistory {
            per_task: vec![Vec::new(); n_tasks],
        }
    }

    pub fn task_count(&self) -> usize {
        self.per_task.len()
    }

    /// Number of completed epochs.
    pub fn epochs(&self) -> usize {
        self.per_task.first().map_or(0, Vec::len)
    }

    pub fn task(&self, k: usize) -> &[f64] {
        &self.per_task[k]
    }

    /// Mean losses of the epoch `back` steps before the end (1 = latest).
    pub fn epoch_from_end(&self, back: usize) -> Option<Vec<f64>> {
        let e = self.epochs();
        (back >= 1 && back <= e).then(|| self.per_task.iter().map(|t| t[e - back]).collect())
    }

    pub fn record_epoch(&mut self, mean_losses: &[f64]) -> Result<()> {
        if mean_losses.len() != self.per_task.len() {
            return Err(Error::dim(
                "record_epoch",
                &[self.per_task.len()],
                &[mean_losses.len()],
            ));
        }
        check_losses(mean_losses)?;
        for (task, &l) in self.per_task.iter_mut().zip(mean_losses) {
            task.push(l);
        }
        Ok(())
    }
}

/// Dynamic Weight Average.
///
/// With at least two completed epochs, `r_k = L_k(t-1) / L_k(t-2)` and
/// `w = n · softmax(r / T)`. Before that every weight is 1.
pub fn dwa_weights(history: &LossHistory, temperature: f64) -> Result<WeightVector> {
    if !(temperature > 0.0) {
        return Err(Error::config(format!(
            "DWA temperature must be positive, got {temperature}"
        )));
    }
    let n = history.task_count();
    let (Some(last), Some(prev)) = (history.epoch_from_end(1), history.epoch_from_end(2)) else {
        return equal_weights(n);
    };
    check_losses(&last)?;
    check_losses(&prev)?;
    let ratios: Vec<f64> = last.iter().zip(&prev).map(|(a, b)| a / b).collect();
    Ok(WeightVector(softmax_scaled(&ratios, temperature, n as f64)))
}

/// `scale · softmax(x / temperature)` with max-shifted exponentials.
fn softmax_scaled(x: &[f64], temperature: f64, scale: f64) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| ((v - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| scale * e / total).collect()
}

/// Learnable log-variances `s_k = ln σ_k²`, one per task.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyParams {
    pub s: Parameter,
}

impl UncertaintyParams {
    /// All `s_k = 0`, i.e. `σ_k² = 1`.
    pub fn new(n_tasks: usize) -> Self {
        UncertaintyParams {
            s: Parameter::new(Tensor::vector(vec![0.0; n_tasks])),
        }
    }

    pub fn from_values(s: Vec<f64>) -> Self {
        UncertaintyParams {
            s: Parameter::new(Tensor::vector(s)),
        }
    }

    pub fn len(&self) -> usize {
        self.s.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.value.is_empty()
    }

    /// Effective coefficient `½·e^{-s_k}` currently applied to each task loss.
    pub fn effective_weights(&self) -> WeightVector {
        WeightVector(
            self.s
                .value
                .data()
                .iter()
                .map(|s| 0.5 * (-s).exp())
                .collect(),
        )
    }
}

/// Uncertainty-weighted total loss; differentiable in both the losses and
/// `s` (a vector var of length n bound from [`UncertaintyParams::s`]).
pub fn uncertainty_combine<'t>(
    losses: &[Var<'t>],
    s: Var<'t>,
    variant: UncertaintyVariant,
) -> Result<Var<'t>> {
    let n = s.shape().iter().product::<usize>();
    if losses.len() != n {
        return Err(Error::dim("uncertainty_combine", &[losses.len()], &[n]));
    }
    let mut total: Option<Var<'t>> = None;
    for (k, loss) in losses.iter().enumerate() {
        let sk = s.index(k)?;
        let data_term = sk.scale(-1.0).exp().mul(loss)?.scale(0.5);
        let reg = match variant {
            UncertaintyVariant::Kendall => sk.scale(0.5),
            UncertaintyVariant::Revised => sk.softplus(),
        };
        let term = data_term.add(&reg)?;
        total = Some(match total {
            Some(acc) => acc.add(&term)?,
            None => term,
        });
    }
    total.ok_or(Error::Empty {
        op: "uncertainty_combine",
    })
}

/// Plain-float value of [`uncertainty_combine`].
pub fn uncertainty_total(losses: &[f64], s: &[f64], variant: UncertaintyVariant) -> f64 {
    losses
        .iter()
        .zip(s)
        .map(|(&l, &s)| {
            let reg = match variant {
                UncertaintyVariant::Kendall => 0.5 * s,
                UncertaintyVariant::Revised => softplus(s),
            };
            0.5 * (-s).exp() * l + reg
        })
        .sum()
}

/// Per-run weighting state: loss history, current per-epoch weights, and
/// the uncertainty parameters when that scheme is selected.
#[derive(Clone, Debug)]
pub struct Weighter {
    config: WeightingConfig,
    history: LossHistory,
    epoch_weights: Option<WeightVector>,
    uncertainty: Option<UncertaintyParams>,
}

impl Weighter {
    pub fn new(config: WeightingConfig, n_tasks: usize) -> Result<Self> {
        config.validate()?;
        if n_tasks == 0 {
            return Err(Error::config("task count must be at least 1"));
        }
        let uncertainty =
            (config.scheme == Scheme::Uncertainty).then(|| UncertaintyParams::new(n_tasks));
        Ok(Weighter {
            config,
            history: LossHistory::new(n_tasks),
            epoch_weights: None,
            uncertainty,
        })
    }

    pub fn config(&self) -> &WeightingConfig {
        &self.config
    }

    pub fn history(&self) -> &LossHistory {
        &self.history
    }

    pub fn uncertainty(&self) -> Option<&UncertaintyParams> {
        self.uncertainty.as_ref()
    }

    pub fn uncertainty_mut(&mut self) -> Option<&mut UncertaintyParams> {
        self.uncertainty.as_mut()
    }

    fn n(&self) -> usize {
        self.history.task_count()
    }

    /// Fixes the weights used for the coming epoch where the scheme needs it.
    pub fn begin_epoch(&mut self) -> Result<()> {
        self.epoch_weights = match (self.config.scheme, self.config.granularity) {
            (Scheme::Dwa, _) => Some(dwa_weights(&self.history, self.config.temperature)?),
            (Scheme::AdaptiveRatio, Granularity::PerEpoch) => {
                Some(match self.history.epoch_from_end(1) {
                    Some(last) => adaptive_ratio_weights(&last)?,
                    None => equal_weights(self.n())?,
                })
            }
            _ => None,
        };
        Ok(())
    }

    /// Weights for one step given the current per-task loss values.
    /// For uncertainty weighting this is the effective coefficient `½e^{-s}`.
    pub fn step_weights(&self, losses: &[f64]) -> Result<WeightVector> {
        if let Some(w) = &self.epoch_weights {
            return Ok(w.clone());
        }
        match self.config.scheme {
            Scheme::Equal => equal_weights(self.n()),
            Scheme::AdaptiveRatio => adaptive_ratio_weights(losses),
            Scheme::Dwa => dwa_weights(&self.history, self.config.temperature),
            Scheme::Uncertainty => Ok(self
                .uncertainty
                .as_ref()
                .expect("uncertainty params exist for uncertainty scheme")
                .effective_weights()),
        }
    }

    /// Combines the step's losses into the scalar to differentiate.
    /// `s` must be bound from the uncertainty parameters when that scheme is active.
    pub fn total_loss<'t>(
        &self,
        losses: &[Var<'t>],
        s: Option<Var<'t>>,
    ) -> Result<(Var<'t>, WeightVector)> {
        let values: Vec<f64> = losses.iter().map(Var::item).collect();
        let weights = self.step_weights(&values)?;
        let total = match (self.config.scheme, s) {
            (Scheme::Uncertainty, Some(s)) => {
                uncertainty_combine(losses, s, self.config.uncertainty_variant)?
            }
            (Scheme::Uncertainty, None) => {
                return Err(Error::Contract(
                    "uncertainty weighting needs its bound log-variances".into(),
                ))
            }
            _ => combine(&weights, losses)?,
        };
        Ok((total, weights))
    }

    pub fn end_epoch(&mut self, mean_losses: &[f64]) -> Result<()> {
        self.history.record_epoch(mean_losses)
    }
}
