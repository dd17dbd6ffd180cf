//! Shared-trunk multi-head MLP: one stack of linear+ReLU layers feeding `n`
//! independent linear heads, one per task.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndnum::{Binding, Parameter, Tape, Tensor, Var};

pub const DEFAULT_TRUNK_WIDTHS: [usize; 2] = [64, 64];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub trunk_widths: Vec<usize>,
    pub head_class_counts: Vec<usize>,
    pub init_seed: u64,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.head_class_counts.is_empty() {
            return Err(Error::config("model needs at least one head"));
        }
        if self.input_dim == 0
            || self.trunk_widths.contains(&0)
            || self.head_class_counts.contains(&0)
        {
            return Err(Error::config(format!(
                "all model dimensions must be >= 1: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadModel {
    config: MlpConfig,
    /// Trunk layers then heads, each as `(weight [in×out], bias [out])`.
    params: Vec<Parameter>,
}

impl MultiHeadModel {
    /// He-style uniform init with bound `√(6/fan_in)`, zero biases, drawn
    /// from a ChaCha8 stream seeded by `init_seed`.
    pub fn init(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut params = Vec::new();
        let mut layer = |fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng| {
            let bound = (6.0 / fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            params.push(Parameter::new(
                Tensor::new(vec![fan_in, fan_out], w).expect("shape"),
            ));
            params.push(Parameter::new(Tensor::zeros(&[fan_out])));
        };
        let mut width = config.input_dim;
        for &w in &config.trunk_widths {
            layer(width, w, &mut rng);
            width = w;
        }
        for &c in &config.head_class_counts {
            layer(width, c, &mut rng);
        }
        Ok(MultiHeadModel { config, params })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn head_count(&self) -> usize {
        self.config.head_class_counts.len()
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> Binding<'t> {
        Binding::new(tape, &self.params)
    }

    /// Logits for every head. The trunk is evaluated once and shared.
    pub fn forward<'t>(&self, bound: &Binding<'t>, x: Var<'t>) -> Result<Vec<Var<'t>>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.config.input_dim {
            return Err(Error::dim("forward", &shape, &[0, self.config.input_dim]));
        }
        let trunk_layers = self.config.trunk_widths.len();
        let mut h = x;
        for l in 0..trunk_layers {
            h = h
                .matmul(&bound.var(2 * l))?
                .add_bias(&bound.var(2 * l + 1))?
                .relu();
        }
        (0..self.head_count())
            .map(|k| {
                let base = 2 * (trunk_layers + k);
                h.matmul(&bound.var(base))?.add_bias(&bound.var(base + 1))
            })
            .collect()
    }

    /// Forward pass on plain tensors.
    pub fn logits(&self, features: &Tensor) -> Result<Vec<Tensor>> {
        let tape = Tape::new();
        let bound = self.bind(&tape);
        let x = tape.leaf(features.clone());
        Ok(self.forward(&bound, x)?.iter().map(Var::value).collect())
    }

    /// Per-task argmax predictions, ties to the lowest class index.
    pub fn predict(&self, features: &Tensor) -> Result<Vec<Vec<usize>>> {
        Ok(self
            .logits(features)?
            .iter()
            .map(Tensor::argmax_rows)
            .collect())
    }
}

pub fn init_model(config: MlpConfig) -> Result<MultiHeadModel> {
    MultiHeadModel::init(config)
}

/// Mean cross-entropy per task.
pub fn task_losses<'t, L: AsRef<[usize]>>(
    logits: &[Var<'t>],
    labels: &[L],
) -> Result<Vec<Var<'t>>> {
    if logits.len() != labels.len() {
        return Err(Error::dim("task_losses", &[logits.len()], &[labels.len()]));
    }
    logits
        .iter()
        .zip(labels)
        .map(|(z, y)| z.cross_entropy(y.as_ref()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(heads: Vec<usize>) -> MlpConfig {
        MlpConfig {
            input_dim: 3,
            trunk_widths: vec![5, 4],
            head_class_counts: heads,
            init_seed: 11,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_model(cfg(vec![2, 5])).unwrap();
        let b = init_model(cfg(vec![2, 5])).unwrap();
        for (p, q) in a.params().iter().zip(b.params()) {
            let pb: Vec<u64> = p.value.data().iter().map(|v| v.to_bits()).collect();
            let qb: Vec<u64> = q.value.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(pb, qb);
        }
    }

    #[test]
    fn init_respects_bounds_and_zero_bias() {
        let m = init_model(cfg(vec![2])).unwrap();
        let bound = (6.0f64 / 3.0).sqrt();
        assert!(m.params()[0].value.data().iter().all(|v| v.abs() < bound));
        assert!(m.params()[1].value.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn heads_have_requested_widths() {
        let m = init_model(cfg(vec![2, 5])).unwrap();
        let x = Tensor::zeros(&[4, 3]);
        let shapes: Vec<_> = m
            .logits(&x)
            .unwrap()
            .iter()
            .map(|t| t.shape().to_vec())
            .collect();
        assert_eq!(shapes, vec![vec![4, 2], vec![4, 5]]);
    }

    #[test]
    fn zero_heads_rejected() {
        assert!(matches!(init_model(cfg(vec![])), Err(Error::Config(_))));
    }

    #[test]
    fn wrong_width_rejected() {
        let m = init_model(cfg(vec![2])).unwrap();
        assert!(matches!(
            m.logits(&Tensor::zeros(&[2, 4])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn zero_model_gives_uniform_losses() {
        let mut m = init_model(cfg(vec![2, 4])).unwrap();
        for p in m.params_mut() {
            p.value.data_mut().fill(0.0);
        }
        let tape = Tape::new();
        let b = m.bind(&tape);
        let x = tape.leaf(Tensor::from_rows(&[[1.0, -2.0, 0.5], [0.3, 0.3, 0.3]]).unwrap());
        let logits = m.forward(&b, x).unwrap();
        let losses = task_losses(&logits, &[vec![0, 1], vec![3, 2]]).unwrap();
        assert!((losses[0].item() - 2f64.ln()).abs() < 1e-15);
        assert!((losses[1].item() - 4f64.ln()).abs() < 1e-15);
        assert_eq!(m.predict(&x.value()).unwrap(), vec![vec![0, 0], vec![0, 0]]);
    }

    #[test]
    fn out_of_range_label() {
        let m = init_model(cfg(vec![2])).unwrap();
        let tape = Tape::new();
        let b = m.bind(&tape);
        let x = tape.leaf(Tensor::zeros(&[1, 3]));
        let logits = m.forward(&b, x).unwrap();
        assert!(matches!(
            task_losses(&logits, &[vec![7]]),
            Err(Error::Index { .. })
        ));
    }
}
