//! The tape: an append-only record of executed operations.
//!
//! Nodes are stored in execution order, so the backward pass is a single
//! reverse sweep over the node vector. Only parameter leaves keep their
//! gradient after `backward` returns; intermediate adjoints are scratch.

use crate::error::{AdError, Result};
use crate::ops::{conv, elementwise, gdn, shuffle, spatial};
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Constant,
    Conv2d(conv::Saved<T>),
    Gdn(gdn::Saved<T>),
    PixelShuffle { x: Var, factor: usize },
    Binary { kind: elementwise::BinaryKind, a: Var, b: Var },
    Unary { kind: elementwise::UnaryKind<T>, a: Var },
    Reduce { kind: elementwise::ReduceKind, a: Var },
    Concat { parts: Vec<Var> },
    AvgPool { x: Var, k: usize },
    Upsample { x: Var, factor: usize },
    Filter(spatial::FilterSaved<T>),
}

impl<T> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Conv2d(_) => "conv2d",
            Op::Gdn(_) => "gdn",
            Op::PixelShuffle { .. } => "pixel_shuffle",
            Op::Binary { .. } => "binary",
            Op::Unary { .. } => "unary",
            Op::Reduce { .. } => "reduce",
            Op::Concat { .. } => "concat",
            Op::AvgPool { .. } => "avg_pool",
            Op::Upsample { .. } => "upsample",
            Op::Filter(_) => "filter2d",
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) needs_grad: bool,
}

/// Reverse-mode recording of one forward computation.
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Backward-pass scratch space handed to each operator.
pub(crate) struct Ctx<'a, T> {
    pub(crate) nodes: &'a [Node<T>],
    adj: &'a mut [Option<Vec<T>>],
}

impl<T: Real> Ctx<'_, T> {
    pub(crate) fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub(crate) fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Mutable adjoint buffer for `v`, zero-initialized on first use.
    pub(crate) fn slot(&mut self, v: Var) -> &mut [T] {
        let len = self.nodes[v.0].value.len();
        self.adj[v.0].get_or_insert_with(|| vec![T::zero(); len])
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Register a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Constant, false)
    }

    /// Copy of `v`'s value cut off from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Accumulated gradient of a parameter leaf, if `backward` reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Operator names in execution order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push_raw(value, op, needs)
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(AdError::UnknownVar(v.0))
        }
    }

    /// Propagate d(out)/d(node) to every parameter leaf that `out` depends on.
    ///
    /// Gradients accumulate across calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, out: Var) -> Result<()> {
        self.check(out)?;
        let shape = self.nodes[out.0].value.shape().to_vec();
        if self.nodes[out.0].value.len() != 1 {
            return Err(AdError::NonScalar(shape));
        }
        let mut adj: Vec<Option<Vec<T>>> = vec![None; out.0 + 1];
        adj[out.0] = Some(vec![T::one()]);
        let Tape { nodes, grads } = self;
        for id in (0..=out.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let mut ctx = Ctx { nodes, adj: &mut adj[..id] };
            match &node.op {
                Op::Leaf => {
                    let acc = grads[id].get_or_insert_with(|| Tensor::zeros(node.value.shape()));
                    for (a, d) in acc.data_mut().iter_mut().zip(&g) {
                        *a = *a + *d;
                    }
                }
                Op::Constant => {}
                Op::Conv2d(saved) => conv::backward(&mut ctx, saved, node, &g),
                Op::Gdn(saved) => gdn::backward(&mut ctx, saved, &g),
                Op::PixelShuffle { x, factor } => shuffle::backward(&mut ctx, *x, *factor, &g),
                Op::Binary { kind, a, b } => elementwise::binary_backward(&mut ctx, *kind, *a, *b, &g),
                Op::Unary { kind, a } => elementwise::unary_backward(&mut ctx, kind, *a, node, &g),
                Op::Reduce { kind, a } => elementwise::reduce_backward(&mut ctx, *kind, *a, &g),
                Op::Concat { parts } => elementwise::concat_backward(&mut ctx, parts, &g),
                Op::AvgPool { x, k } => spatial::avg_pool_backward(&mut ctx, *x, *k, node, &g),
                Op::Upsample { x, factor } => spatial::upsample_backward(&mut ctx, *x, *factor, node, &g),
                Op::Filter(saved) => spatial::filter_backward(&mut ctx, saved, node, &g),
            }
        }
        Ok(())
    }
}
