use std::cell::RefCell;
use std::fmt;

use super::tensor::{sigmoid, softmax_rows, softplus, Tensor};
use crate::error::{Error, Result};

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddBias(usize, usize),
    Relu(usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Exp(usize),
    Softplus(usize),
    Sum(usize),
    Index(usize, usize),
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Record of one forward pass.
///
/// Nodes are appended in execution order, so reverse record order is a valid
/// topological order for the adjoint sweep. A tape is meant to live for a
/// single forward/backward pair and then be dropped.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.borrow().len())
            .finish()
    }
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records an input tensor. Its gradient is available after `backward`.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&self, value: f64) -> Var<'_> {
        self.leaf(Tensor::scalar(value))
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        assert!(
            std::ptr::eq(self, loss.tape),
            "loss recorded on another tape"
        );
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::new(
            nodes[loss.id].value.shape().to_vec(),
            vec![1.0],
        )?);

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let mut push = |target: usize, contrib: Tensor| match &mut grads[target] {
                Some(existing) => existing.accumulate(&contrib),
                slot @ None => *slot = Some(contrib),
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    push(*a, g.matmul(&bv.transpose()?)?);
                    push(*b, av.transpose()?.matmul(&g)?);
                }
                Op::AddBias(x, b) => {
                    let cols = g.cols();
                    let mut db = vec![0.0; cols];
                    for row in g.data().chunks(cols) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    push(*b, Tensor::vector(db));
                    push(*x, g.clone());
                }
                Op::Relu(x) => {
                    let xv = &nodes[*x].value;
                    push(
                        *x,
                        g.zip_with(xv, "relu'", |gi, xi| if xi > 0.0 { gi } else { 0.0 })?,
                    );
                }
                Op::Add(a, b) => {
                    push(*a, g.clone());
                    push(*b, g.clone());
                }
                Op::Mul(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    push(*a, g.zip_with(bv, "mul'", |gi, bi| gi * bi)?);
                    push(*b, g.zip_with(av, "mul'", |gi, ai| gi * ai)?);
                }
                Op::Scale(a, c) => push(*a, g.map(|gi| gi * c)),
                Op::Exp(a) => push(*a, g.zip_with(&node.value, "exp'", |gi, yi| gi * yi)?),
                Op::Softplus(a) => {
                    let av = &nodes[*a].value;
                    push(*a, g.zip_with(av, "softplus'", |gi, xi| gi * sigmoid(xi))?);
                }
                Op::Sum(a) => {
                    let gv = g.data()[0];
                    push(*a, nodes[*a].value.map(|_| gv));
                }
                Op::Index(a, i) => {
                    let mut d = Tensor::zeros(nodes[*a].value.shape());
                    d.data_mut()[*i] = g.data()[0];
                    push(*a, d);
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let gv = g.data()[0];
                    let m = labels.len() as f64;
                    let c = probs.cols();
                    let mut d = probs.clone();
                    for (row, &label) in d.data_mut().chunks_mut(c).zip(labels) {
                        row[label] -= 1.0;
                        for v in row.iter_mut() {
                            *v *= gv / m;
                        }
                    }
                    push(*logits, d);
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Value of a single-element var.
    pub fn item(&self) -> f64 {
        let nodes = self.tape.nodes.borrow();
        let v = &nodes[self.id].value;
        v.item()
            .unwrap_or_else(|| panic!("item() on non-scalar of shape {:?}", v.shape()))
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars from different tapes"
        );
    }

    fn unary(&self, f: impl FnOnce(&Tensor) -> Tensor, op: Op) -> Var<'t> {
        let value = f(&self.tape.nodes.borrow()[self.id].value);
        self.tape.push(value, op)
    }

    fn binary(
        &self,
        other: &Var<'t>,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
        op: Op,
    ) -> Result<Var<'t>> {
        self.same_tape(other);
        let value = {
            let nodes = self.tape.nodes.borrow();
            f(&nodes[self.id].value, &nodes[other.id].value)?
        };
        Ok(self.tape.push(value, op))
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, |a, b| a.matmul(b), Op::MatMul(self.id, other.id))
    }

    pub fn add_bias(&self, bias: &Var<'t>) -> Result<Var<'t>> {
        self.binary(bias, |x, b| x.add_bias(b), Op::AddBias(self.id, bias.id))
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(Tensor::relu, Op::Relu(self.id))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(
            other,
            |a, b| a.zip_with(b, "add", |x, y| x + y),
            Op::Add(self.id, other.id),
        )
    }

    /// Elementwise product of same-shape vars.
    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(
            other,
            |a, b| a.zip_with(b, "mul", |x, y| x * y),
            Op::Mul(self.id, other.id),
        )
    }

    /// Multiplies by a constant that does not receive a gradient.
    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(|a| a.map(|v| v * c), Op::Scale(self.id, c))
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(|a| a.map(f64::exp), Op::Exp(self.id))
    }

    pub fn softplus(&self) -> Var<'t> {
        self.unary(|a| a.map(softplus), Op::Softplus(self.id))
    }

    pub fn sum(&self) -> Var<'t> {
        self.unary(|a| Tensor::scalar(a.sum()), Op::Sum(self.id))
    }

    /// Element `i` of the flattened data, as a scalar.
    pub fn index(&self, i: usize) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let v = &nodes[self.id].value;
            if i >= v.len() {
                return Err(Error::Index {
                    op: "index",
                    index: i,
                    bound: v.len(),
                });
            }
            Tensor::scalar(v.data()[i])
        };
        Ok(self.tape.push(value, Op::Index(self.id, i)))
    }

    /// Mean negative log-likelihood of `labels` under the row softmax of
    /// `self`, computed through a max-shifted log-sum-exp.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Var<'t>> {
        let (value, probs) = {
            let nodes = self.tape.nodes.borrow();
            let logits = &nodes[self.id].value;
            if logits.shape().len() != 2 {
                return Err(Error::dim(
                    "cross_entropy",
                    logits.shape(),
                    &[labels.len(), 0],
                ));
            }
            if labels.is_empty() {
                return Err(Error::Empty {
                    op: "cross_entropy",
                });
            }
            if logits.rows() != labels.len() {
                return Err(Error::dim("cross_entropy", logits.shape(), &[labels.len()]));
            }
            let c = logits.cols();
            if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
                return Err(Error::Index {
                    op: "cross_entropy",
                    index: bad,
                    bound: c,
                });
            }
            let (probs, lse) = softmax_rows(logits);
            let total: f64 = labels
                .iter()
                .enumerate()
                .map(|(i, &l)| (lse[i].0 - logits.row(i)[l]) + lse[i].1)
                .sum();
            (total / labels.len() as f64, probs)
        };
        Ok(self.tape.push(
            Tensor::scalar(value),
            Op::CrossEntropy {
                logits: self.id,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }
}

/// Free-function form of [`Var::cross_entropy`].
pub fn cross_entropy_from_logits<'t>(logits: &Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
    logits.cross_entropy(labels)
}

/// Adjoints produced by [`Tape::backward`], indexed by var.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when `var` does not lie on a path to the loss.
    pub fn wrt(&self, var: &Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    pub fn wrt_or_zeros(&self, var: &Var<'_>) -> Tensor {
        self.wrt(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&var.shape()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let loss = x.mul(&x).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(&x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_loss_leaves_inputs_without_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let c = tape.constant(3.0);
        let g = tape.backward(c).unwrap();
        assert!(g.wrt(&x).is_none());
        assert_eq!(g.wrt_or_zeros(&x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let loss = x.relu().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(&x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let tape = Tape::new();
        let logits = tape.leaf(Tensor::zeros(&[3, 4]));
        let loss = logits.cross_entropy(&[0, 3, 1]).unwrap();
        assert!((loss.item() - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_saturated_does_not_overflow() {
        let tape = Tape::new();
        let logits = tape.leaf(Tensor::from_rows(&[[1000.0, 0.0]]).unwrap());
        let loss = logits.cross_entropy(&[0]).unwrap();
        assert!(loss.item() >= 0.0 && loss.item() < 1e-300);
        let g = tape.backward(loss).unwrap();
        assert!(g.wrt(&logits).unwrap().is_finite());
    }

    #[test]
    fn cross_entropy_matches_direct_softmax() {
        // -ln(e^3 / (e^1 + e^2 + e^3)) evaluated without shifting.
        let direct = -(3f64.exp() / (1f64.exp() + 2f64.exp() + 3f64.exp())).ln();
        let tape = Tape::new();
        let logits = tape.leaf(Tensor::from_rows(&[[1.0, 2.0, 3.0]]).unwrap());
        let loss = cross_entropy_from_logits(&logits, &[2]).unwrap();
        assert!((loss.item() - direct).abs() < 1e-14);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let tape = Tape::new();
        let logits = tape.leaf(Tensor::zeros(&[1, 2]));
        assert!(matches!(
            logits.cross_entropy(&[2]),
            Err(Error::Index {
                index: 2,
                bound: 2,
                ..
            })
        ));
    }

    #[test]
    fn shared_input_gradient_accumulates() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = x.add(&x).unwrap().add(&x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(&x).unwrap().data(), &[3.0]);
    }

    #[test]
    fn matmul_adjoints() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::from_rows(&[[1.0, 2.0]]).unwrap());
        let b = tape.leaf(Tensor::from_rows(&[[3.0], [4.0]]).unwrap());
        let c = a.matmul(&b).unwrap().sum();
        let g = tape.backward(c).unwrap();
        assert_eq!(g.wrt(&a).unwrap().data(), &[3.0, 4.0]);
        assert_eq!(g.wrt(&b).unwrap().data(), &[1.0, 2.0]);
    }
}
