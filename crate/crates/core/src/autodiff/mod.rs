//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every operation appends a node to the [`Tape`]; node order is the
//! execution order, so a single reverse sweep visits each node once.
//! Operations check shapes eagerly and return [`Error::Dimension`] on a
//! mismatch.

pub(crate) mod kernels;
mod ops;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use kernels::ConvGeom;

pub use ops::BatchStats;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        trans_a: bool,
        trans_b: bool,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        rhs_shared: bool,
    },
    Conv2d {
        input: Var,
        weight: Var,
        geom: ConvGeom,
        batch: usize,
        c_out: usize,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    CrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<usize>,
    },
    Relu {
        x: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    MeanAxis {
        x: Var,
        axis: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    AddBias {
        x: Var,
        bias: Var,
    },
    Reshape {
        x: Var,
    },
    Sum {
        x: Var,
    },
    WeightedSum {
        inputs: Vec<Var>,
        weights: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of executed operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every `requires_grad` leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` if `var` is not a `requires_grad` leaf of the tape.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register an input tensor. Its `requires_grad` flag decides whether
    /// [`Tape::backward`] reports a gradient for it.
    pub fn leaf(&mut self, mut value: Tensor) -> Var {
        value.clear_grad();
        self.push(value, Op::Leaf)
    }

    /// Register a trainable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value.with_requires_grad(true))
    }

    /// Register an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value.with_requires_grad(false))
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn data(&self, var: Var) -> &[f64] {
        self.nodes[var.0].value.data()
    }

    fn needs_grad(&self, var: Var) -> bool {
        self.nodes[var.0].value.requires_grad()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn push_derived(&mut self, shape: Vec<usize>, data: Vec<f64>, inputs: &[Var], op: Op) -> Var {
        let requires_grad = inputs.iter().any(|&v| self.needs_grad(v));
        let value = Tensor::new(shape, data)
            .expect("derived tensor shape checked by op")
            .with_requires_grad(requires_grad);
        self.push(value, op)
    }

    fn check(&self, var: Var) -> Result<()> {
        if var.0 >= self.nodes.len() {
            return Err(Error::Contract(format!("variable {} is not on this tape", var.0)));
        }
        Ok(())
    }

    /// Reverse sweep from a one-element `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        self.check(loss)?;
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        if self.needs_grad(loss) {
            grads[loss.0] = Some(vec![1.0]);
        }
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            self.propagate(id, &upstream, &mut grads);
        }
        let mut out: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.value.requires_grad() {
                out[id] = Some(
                    grads[id]
                        .take()
                        .unwrap_or_else(|| vec![0.0; node.value.numel()]),
                );
            }
        }
        Ok(Gradients { grads: out })
    }
}

/// Add `delta` into the gradient slot for `var`.
fn accumulate(grads: &mut [Option<Vec<f64>>], var: Var, delta: Vec<f64>) {
    match &mut grads[var.0] {
        Some(g) => g.iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(delta),
    }
}

/// Stable softmax of a plain vector, outside any tape.
pub fn softmax_vec(x: &[f64]) -> Vec<f64> {
    ops::softmax_forward(x, &[x.len()], 0)
}
