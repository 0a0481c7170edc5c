//! Dense f32 tensor with reverse-mode automatic differentiation.
//!
//! A `Tensor` is a cheap handle onto a graph node. Forward ops record their
//! parents; `backward()` walks the graph in reverse topological order and
//! accumulates gradients into every `requires_grad` ancestor. Gradients are
//! never cleared implicitly: callers zero them between steps, so multi-term
//! losses can be backpropagated in pieces.
//!
//! Shapes are 1-D `[n]` or 2-D `[rows, cols]` row-major buffers, which is all
//! this model needs. Reductions and matrix products accumulate in f64 before
//! rounding back to f32 storage.

mod ops;
pub mod gradcheck;
pub mod optim;

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use crate::error::{Error, Result};

pub(crate) struct Node {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<f32>,
    pub(crate) grad: Option<Vec<f32>>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op,
}

/// Recorded operation, holding handles to the parents it differentiates into.
pub(crate) enum Op {
    Leaf,
    Matmul { a: Tensor, b: Tensor },
    Transpose { a: Tensor },
    Add { a: Tensor, b: Tensor },
    AddBias { a: Tensor, bias: Tensor },
    Sub { a: Tensor, b: Tensor },
    Mul { a: Tensor, b: Tensor },
    Scale { a: Tensor, factor: f32 },
    AddScalar { a: Tensor },
    Relu { a: Tensor },
    Gelu { a: Tensor },
    Sigmoid { a: Tensor },
    Tanh { a: Tensor },
    Ln { a: Tensor },
    Clamp { a: Tensor, lo: f32, hi: f32 },
    Softmax { a: Tensor, axis: usize },
    LayerNorm { a: Tensor, gamma: Tensor, beta: Tensor, eps: f32 },
    Dropout { a: Tensor, mask: Vec<f32> },
    Sum { a: Tensor },
    Mean { a: Tensor },
    Max { a: Tensor, argmax: usize },
    ConcatRows { parts: Vec<Tensor> },
    ConcatCols { parts: Vec<Tensor> },
    SliceRows { a: Tensor, start: usize },
    SliceCols { a: Tensor, start: usize },
    GatherRows { a: Tensor, indices: Vec<usize> },
    RowL2Norms { a: Tensor },
    L2NormalizeRows { a: Tensor },
}

/// Handle to one node of the computation graph.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) inner: Rc<RefCell<Node>>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let n = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &n.shape)
            .field("requires_grad", &n.requires_grad)
            .finish()
    }
}

impl Tensor {
    fn new_node(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool, op: Op) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(RefCell::new(Node {
                shape,
                data,
                grad: None,
                requires_grad,
                op,
            })),
        }
    }

    /// Leaf tensor that does not participate in differentiation.
    pub fn constant(data: Vec<f32>, shape: Vec<usize>) -> Result<Tensor> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape(
                "constant",
                format!("shape {:?} does not match {} elements", shape, data.len()),
            ));
        }
        Ok(Self::new_node(shape, data, false, Op::Leaf))
    }

    /// Learnable leaf: gradients accumulate here after `backward`.
    pub fn param(data: Vec<f32>, shape: Vec<usize>) -> Result<Tensor> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape(
                "param",
                format!("shape {:?} does not match {} elements", shape, data.len()),
            ));
        }
        Ok(Self::new_node(shape, data, true, Op::Leaf))
    }

    pub fn scalar(v: f32) -> Tensor {
        Self::new_node(vec![1], vec![v], false, Op::Leaf)
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Self::new_node(shape, vec![0.0; n], false, Op::Leaf)
    }

    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f32>, op: Op) -> Tensor {
        let requires = op_parents(&op).iter().any(|t| t.requires_grad());
        Self::new_node(shape, data, requires, op)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    /// Borrow of the underlying buffer. Dropping the guard releases it.
    pub fn data(&self) -> Ref<'_, [f32]> {
        Ref::map(self.inner.borrow(), |n| n.data.as_slice())
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.inner.borrow().data.clone()
    }

    /// Value of a single-element tensor.
    pub fn value(&self) -> f32 {
        let n = self.inner.borrow();
        debug_assert_eq!(n.data.len(), 1, "value() on non-scalar");
        n.data[0]
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        let mut n = self.inner.borrow_mut();
        if let Some(g) = n.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Overwrite the buffer in place. Leaves only; used by the optimizer,
    /// checkpoint restore, and tests.
    pub fn set_data(&self, data: &[f32]) {
        let mut n = self.inner.borrow_mut();
        assert_eq!(n.data.len(), data.len(), "set_data length mismatch");
        n.data.copy_from_slice(data);
    }

    /// Add `delta` to one element. Used by finite-difference probes.
    pub fn nudge(&self, index: usize, delta: f32) {
        let mut n = self.inner.borrow_mut();
        n.data[index] += delta;
    }

    pub(crate) fn rows_cols(&self) -> (usize, usize) {
        let n = self.inner.borrow();
        match n.shape.len() {
            1 => (1, n.shape[0]),
            2 => (n.shape[0], n.shape[1]),
            _ => panic!("rows_cols on tensor of rank {}", n.shape.len()),
        }
    }

    /// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
    /// `requires_grad` ancestor; repeated calls keep accumulating.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            // Loss does not depend on any parameter; nothing to do.
            return Ok(());
        }

        let order = topo_order(self);
        accumulate_into(self, &[1.0]);
        for node in order.iter().rev() {
            ops::backprop_node(node);
        }
        Ok(())
    }
}

/// Parents of an op, for requires_grad propagation and graph walks.
fn op_parents(op: &Op) -> Vec<Tensor> {
    match op {
        Op::Leaf => vec![],
        Op::Matmul { a, b } | Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => {
            vec![a.clone(), b.clone()]
        }
        Op::AddBias { a, bias } => vec![a.clone(), bias.clone()],
        Op::LayerNorm { a, gamma, beta, .. } => vec![a.clone(), gamma.clone(), beta.clone()],
        Op::ConcatRows { parts } | Op::ConcatCols { parts } => parts.clone(),
        Op::Transpose { a }
        | Op::Scale { a, .. }
        | Op::AddScalar { a }
        | Op::Relu { a }
        | Op::Gelu { a }
        | Op::Sigmoid { a }
        | Op::Tanh { a }
        | Op::Ln { a }
        | Op::Clamp { a, .. }
        | Op::Softmax { a, .. }
        | Op::Dropout { a, .. }
        | Op::Sum { a }
        | Op::Mean { a }
        | Op::Max { a, .. }
        | Op::SliceRows { a, .. }
        | Op::SliceCols { a, .. }
        | Op::GatherRows { a, .. }
        | Op::RowL2Norms { a }
        | Op::L2NormalizeRows { a } => vec![a.clone()],
    }
}

/// Post-order DFS over the requires_grad subgraph.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited = std::collections::HashSet::new();
    // Explicit stack: graphs from 32-step recurrences get deep.
    let mut stack: Vec<(Tensor, bool)> = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        let key = Rc::as_ptr(&t.inner) as usize;
        if expanded {
            order.push(t);
            continue;
        }
        if !visited.insert(key) {
            continue;
        }
        let parents = op_parents(&t.inner.borrow().op);
        stack.push((t, true));
        for p in parents {
            if p.requires_grad() {
                stack.push((p, false));
            }
        }
    }
    order
}

/// Accumulate `grad` into a node, allocating the buffer on first touch.
pub(crate) fn accumulate_into(t: &Tensor, grad: &[f32]) {
    let mut n = t.inner.borrow_mut();
    if !n.requires_grad {
        return;
    }
    let buf = match n.grad.as_mut() {
        Some(g) => g,
        None => {
            let len = n.data.len();
            n.grad = Some(vec![0.0; len]);
            n.grad.as_mut().unwrap()
        }
    };
    debug_assert_eq!(buf.len(), grad.len());
    for (b, g) in buf.iter_mut().zip(grad) {
        *b += *g;
    }
}
