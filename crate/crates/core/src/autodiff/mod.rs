//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! Every primitive application appends a node holding its output value and
//! whatever it needs for the adjoint. [`Tape::backward`] walks the nodes in
//! reverse, so the append order is already a topological order.
//!
//! ```
//! use ialgca::autodiff::Tape;
//! use ialgca::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.variable(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().item().unwrap(), 6.0);
//! ```

mod conv;
mod ops;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use ops::Primitive;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) enum Saved {
    #[default]
    None,
    Indices(Vec<usize>),
    Norm {
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    prim: Option<Primitive>,
    inputs: Vec<Var>,
    value: Tensor,
    saved: Saved,
    requires_grad: bool,
}

/// Append-only record of a forward computation. Single owner; build one per
/// forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            prim: None,
            inputs: Vec::new(),
            value,
            saved: Saved::None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that never receives a gradient (input data, masks).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Every node in recording order.
    pub fn vars(&self) -> impl Iterator<Item = Var> {
        (0..self.nodes.len()).map(Var)
    }

    pub fn primitive(&self, v: Var) -> Option<&Primitive> {
        self.nodes[v.0].prim.as_ref()
    }

    pub fn inputs(&self, v: Var) -> &[Var] {
        &self.nodes[v.0].inputs
    }

    /// Apply a primitive to nodes already on this tape and record the result.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        for v in inputs {
            if v.0 >= self.nodes.len() {
                return Err(Error::contract(format!(
                    "{}: input node {} is not on this tape",
                    prim.name(),
                    v.0
                )));
            }
        }
        let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let (value, saved) = ops::forward(&prim, &values)?;
        if !value.is_finite() {
            return Err(Error::NumericOverflow { op: prim.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            prim: Some(prim),
            inputs: inputs.to_vec(),
            value,
            saved,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse sweep from a scalar. Leaves that require a gradient but are
    /// not reachable from `loss` get a zero gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::contract("loss node is not on this tape"))?;
        if root.value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(root.value.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(prim) = &node.prim else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = grads[i].take() else { continue };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|v| self.nodes[v.0].requires_grad)
                .collect();
            let input_grads = ops::backward(prim, &inputs, &node.value, &node.saved, &grad, &needs);
            for ((v, g), need) in node.inputs.iter().zip(input_grads).zip(needs) {
                let (Some(g), true) = (g, need) else { continue };
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if node.prim.is_none() && node.requires_grad && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients left on the leaves after a reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

macro_rules! unary {
    ($($name:ident => $prim:ident),* $(,)?) => {
        $(
            pub fn $name(&mut self, x: Var) -> Result<Var> {
                self.apply(Primitive::$prim, &[x])
            }
        )*
    };
}

macro_rules! binary {
    ($($name:ident => $prim:ident),* $(,)?) => {
        $(
            pub fn $name(&mut self, a: Var, b: Var) -> Result<Var> {
                self.apply(Primitive::$prim, &[a, b])
            }
        )*
    };
}

impl Tape {
    unary! {
        relu => Relu,
        sigmoid => Sigmoid,
        sqrt => Sqrt,
        exp => Exp,
        log => Log,
        softmax => Softmax,
        log_softmax => LogSoftmax,
        max_last_axis => MaxLastAxis,
    }

    binary! {
        matmul => MatMul,
        add => Add,
        sub => Sub,
        mul => Mul,
        mul_channel => MulChannel,
        mul_trailing => MulTrailing,
        add_trailing => AddTrailing,
        weighted_spatial_sum => WeightedSpatialSum,
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.apply(Primitive::Scale(c), &[x])
    }

    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.apply(Primitive::Mean { axis }, &[x])
    }

    /// Mean of every entry, as a scalar.
    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let flat = self.reshape(x, &[n])?;
        self.mean(flat, 0)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.apply(Primitive::Reshape(shape.to_vec()), &[x])
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        self.apply(Primitive::Permute(perm.to_vec()), &[x])
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let rank = self.value(x).rank();
        if rank < 2 {
            return Err(Error::shape("transpose", self.shape(x), &[]));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(x, &perm)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        self.apply(Primitive::Concat { axis }, xs)
    }

    pub fn gather(&mut self, x: Var, indices: Vec<usize>, shape: &[usize]) -> Result<Var> {
        self.apply(
            Primitive::Gather {
                indices,
                shape: shape.to_vec(),
            },
            &[x],
        )
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let prim = Primitive::Conv2d { stride, padding };
        match bias {
            Some(b) => self.apply(prim, &[x, weight, b]),
            None => self.apply(prim, &[x, weight]),
        }
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        self.apply(Primitive::LayerNorm { eps }, &[x, gamma, beta])
    }

    /// `x · w + b` for `x: [N, in]`, `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_trailing(y, b),
            None => Ok(y),
        }
    }
}
