//! Dense 2-D tensors with reverse-mode automatic differentiation.
//!
//! Everything is 64-bit and row-major. Each tensor owns its forward value and
//! (when reachable from a parameter) a gradient buffer; the operation that
//! produced it keeps handles to its inputs, so a loss tensor is the root of
//! the whole recorded computation. [`Tape`] linearizes that record for the
//! backward sweep.
//!
//! The op set is closed: matmul, add, multiply, concat, slice, embedding
//! lookup, masked softmax, log, mean, scalenorm, dropout, relu, sigmoid,
//! cross-entropy, mean-squared-error, binary-cross-entropy, plus the small
//! internal helpers (transpose, scale, pick, row-sum) the model is built
//! from. Tensors and tapes are single-threaded; run separate replicas on
//! separate threads if you need parallel evaluation.

mod gradcheck;
mod init;
mod ops;
mod optim;
mod serialize;

pub use gradcheck::{gradcheck, gradcheck_named, GradcheckOptions, GradcheckReport};
pub use init::{init_scaled, xavier_uniform};
pub use ops::{Axis, MASK_NEG};
pub use optim::{adam_step, noam_lr, zero_grads, OptimizerState};
pub use serialize::{read_container, write_container, ContainerEntry};

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Recorded operation, with the saved inputs backward needs.
#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Matmul(Tensor, Tensor),
    /// rhs may be (1, c), broadcast over rows.
    Add(Tensor, Tensor),
    /// Elementwise; rhs may be (m, 1) broadcast over columns or (1, 1).
    Mul(Tensor, Tensor),
    ConcatRows(Vec<Tensor>),
    ConcatCols(Vec<Tensor>),
    Slice {
        x: Tensor,
        r0: usize,
        c0: usize,
    },
    Embed {
        table: Tensor,
        ids: Vec<usize>,
    },
    /// Backward reads the cached output distribution from the node itself.
    Softmax(Tensor),
    Log(Tensor),
    Mean(Tensor),
    ScaleNorm {
        x: Tensor,
        g: Tensor,
        norms: Vec<f64>,
    },
    /// mask entries are 0 or 1/(1-p).
    Dropout {
        x: Tensor,
        mask: Vec<f64>,
    },
    Relu(Tensor),
    Sigmoid(Tensor),
    CrossEntropy {
        logits: Tensor,
        targets: Vec<usize>,
        probs: Vec<f64>,
        row_weights: Option<Vec<f64>>,
        denom: f64,
    },
    Mse {
        pred: Tensor,
        gold: Vec<f64>,
        mask: Option<Vec<f64>>,
        denom: f64,
    },
    BceLogits {
        logits: Tensor,
        gold: Vec<f64>,
        mask: Option<Vec<f64>>,
        denom: f64,
    },
    Transpose(Tensor),
    Scale {
        x: Tensor,
        c: f64,
    },
    /// One column per row: out[i] = x[i, cols[i]].
    Pick {
        x: Tensor,
        cols: Vec<usize>,
    },
    RowSum(Tensor),
}

impl Op {
    fn parents(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => vec![],
            Op::Matmul(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::ConcatRows(xs) | Op::ConcatCols(xs) => xs.iter().collect(),
            Op::Slice { x, .. }
            | Op::Softmax(x)
            | Op::Log(x)
            | Op::Mean(x)
            | Op::Dropout { x, .. }
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Transpose(x)
            | Op::Scale { x, .. }
            | Op::Pick { x, .. }
            | Op::RowSum(x) => vec![x],
            Op::Embed { table, .. } => vec![table],
            Op::ScaleNorm { x, g, .. } => vec![x, g],
            Op::CrossEntropy { logits, .. } | Op::BceLogits { logits, .. } => vec![logits],
            Op::Mse { pred, .. } => vec![pred],
        }
    }
}

#[derive(Debug)]
pub(crate) struct Inner {
    id: u64,
    rows: usize,
    cols: usize,
    value: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: Cell<bool>,
    op: Op,
}

/// A 2-D array of f64, cheaply clonable (shared), carrying its autograd
/// history. A (1, 1) tensor doubles as a scalar.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub(crate) inner: Rc<Inner>,
}

impl Tensor {
    pub(crate) fn make(rows: usize, cols: usize, value: Vec<f64>, requires_grad: bool, op: Op) -> Tensor {
        debug_assert_eq!(value.len(), rows * cols);
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                rows,
                cols,
                value: RefCell::new(value),
                grad: RefCell::new(None),
                requires_grad: Cell::new(requires_grad),
                op,
            }),
        }
    }

    /// Leaf with gradient tracking (a parameter).
    pub fn param(rows: usize, cols: usize, value: Vec<f64>) -> Tensor {
        Tensor::make(rows, cols, value, true, Op::Leaf)
    }

    /// Leaf without gradient tracking (data, masks, positions).
    pub fn constant(rows: usize, cols: usize, value: Vec<f64>) -> Tensor {
        Tensor::make(rows, cols, value, false, Op::Leaf)
    }

    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor::constant(rows, cols, vec![0.0; rows * cols])
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::constant(1, 1, vec![v])
    }

    pub fn rows(&self) -> usize {
        self.inner.rows
    }

    pub fn cols(&self) -> usize {
        self.inner.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.inner.rows, self.inner.cols)
    }

    pub fn len(&self) -> usize {
        self.inner.rows * self.inner.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad.get()
    }

    /// Freeze or thaw a leaf. Frozen leaves receive no gradient.
    pub fn set_requires_grad(&self, on: bool) {
        self.inner.requires_grad.set(on);
        if !on {
            *self.inner.grad.borrow_mut() = None;
        }
    }

    pub fn value(&self) -> Ref<'_, Vec<f64>> {
        self.inner.value.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.value.borrow().clone()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows() && c < self.cols());
        self.inner.value.borrow()[r * self.cols() + c]
    }

    /// Scalar payload of a (1, 1) tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.shape(), (1, 1));
        self.inner.value.borrow()[0]
    }

    /// Overwrite the forward value in place (optimizer updates, loading).
    pub fn set_value(&self, value: &[f64]) {
        let mut v = self.inner.value.borrow_mut();
        debug_assert_eq!(v.len(), value.len());
        v.copy_from_slice(value);
    }

    /// Gradient buffer, if one was populated by backward.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, contribution: &[f64]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contribution) {
                    *gi += ci;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }

    fn is_leaf(&self) -> bool {
        matches!(self.inner.op, Op::Leaf)
    }

    /// Run reverse-mode differentiation from this scalar, populating the
    /// gradients of every reachable tensor with `requires_grad`.
    pub fn backward(&self) -> Result<()> {
        if self.shape() != (1, 1) {
            return Err(Error::Validation(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        let tape = Tape::trace(self);
        tape.backward(self)
    }
}

/// The recorded computation reachable from one tensor, in topological order
/// (inputs before the ops that consume them). Backward walks it in reverse,
/// visiting each node exactly once.
pub struct Tape {
    order: Vec<Tensor>,
}

impl Tape {
    /// Collect every node contributing to `root`, skipping subgraphs that
    /// contain no gradient-tracking tensor.
    pub fn trace(root: &Tensor) -> Tape {
        let mut order: Vec<Tensor> = Vec::new();
        if !root.requires_grad() {
            return Tape { order };
        }
        // Iterative postorder; recursion would overflow on long decode
        // chains. Nodes are guarded at push time, so shared subgraphs are
        // walked once.
        let mut opened: HashSet<u64> = HashSet::new();
        opened.insert(root.inner.id);
        let mut stack: Vec<(Tensor, usize)> = vec![(root.clone(), 0)];
        while let Some((node, child)) = stack.pop() {
            let parents = node.inner.op.parents();
            match parents.get(child) {
                Some(&next) => {
                    let next = next.clone();
                    stack.push((node, child + 1));
                    if next.requires_grad() && opened.insert(next.inner.id) {
                        stack.push((next, 0));
                    }
                }
                None => order.push(node),
            }
        }
        Tape { order }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    fn backward(&self, root: &Tensor) -> Result<()> {
        if !root.requires_grad() {
            return Ok(()); // loss detached from every parameter
        }
        root.accumulate_grad(&[1.0]);
        for node in self.order.iter().rev() {
            let grad = match node.inner.grad.borrow().clone() {
                Some(g) => g,
                None => continue,
            };
            ops::backward_into(node, &grad);
            if !node.is_leaf() {
                // Interior grads are scratch; only leaves keep theirs.
                *node.inner.grad.borrow_mut() = None;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let x = Tensor::param(1, 1, vec![3.0]);
        let y = x.mul(&x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn frozen_leaf_gets_no_grad() {
        let x = Tensor::param(1, 1, vec![3.0]);
        x.set_requires_grad(false);
        let y = x.mul(&x).unwrap();
        assert!(y.backward().is_ok());
        assert!(x.grad().is_none());
    }

    #[test]
    fn backward_rejects_matrix() {
        let x = Tensor::param(2, 2, vec![1.0; 4]);
        assert!(x.backward().is_err());
    }

    #[test]
    fn diamond_reuse_accumulates_once_per_path() {
        // y = x*x + x*x = 2x^2, dy/dx = 4x
        let x = Tensor::param(1, 1, vec![2.0]);
        let a = x.mul(&x).unwrap();
        let y = a.add(&a).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![8.0]);
    }

    #[test]
    fn grads_accumulate_across_backward_calls() {
        let x = Tensor::param(1, 1, vec![1.0]);
        let y = x.scale(2.0);
        let z = x.scale(3.0);
        y.backward().unwrap();
        z.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![5.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }
}
