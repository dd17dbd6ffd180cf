use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Trainable tensor with an accumulated gradient of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }
}

/// Parameters recorded as leaves on one tape, in the order they were bound.
#[derive(Debug)]
pub struct Binding<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Binding<'t> {
    pub fn new(tape: &'t Tape, params: &[Parameter]) -> Self {
        Binding {
            vars: params.iter().map(|p| tape.leaf(p.value.clone())).collect(),
        }
    }

    pub fn var(&self, i: usize) -> Var<'t> {
        self.vars[i]
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Adds each bound var's gradient into the matching parameter's `grad`.
    /// Gradients accumulate until [`Parameter::zero_grad`] or [`sgd_step`].
    pub fn accumulate(&self, grads: &Gradients, params: &mut [Parameter]) {
        assert_eq!(self.vars.len(), params.len(), "binding/parameter count");
        for (var, p) in self.vars.iter().zip(params) {
            if let Some(g) = grads.wrt(var) {
                p.grad.accumulate(g);
            }
        }
    }
}

/// Runs the reverse sweep and accumulates into `params` through `binding`.
pub fn backward(loss: Var<'_>, binding: &Binding<'_>, params: &mut [Parameter]) -> Result<()> {
    let grads = loss.tape().backward(loss)?;
    binding.accumulate(&grads, params);
    Ok(())
}

/// Plain gradient descent: `value -= lr * grad`, then zero the gradient.
pub fn sgd_step<'a>(params: impl IntoIterator<Item = &'a mut Parameter>, lr: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::config(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    for p in params {
        for (v, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
            *v -= lr * g;
        }
        p.zero_grad();
    }
    Ok(())
}
