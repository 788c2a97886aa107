//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheap handle (reference counted) to an immutable data
//! buffer plus an optional gradient slot. Operations on tensors that require
//! gradients record a node holding the inputs and a backward rule; calling
//! [`Tensor::backward`] on a scalar replays those rules in reverse
//! topological order.

mod checkpoint;
mod gradcheck;
mod graph;
mod ops;
mod scalar;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::grad_check;
pub use graph::Graph;
pub use ops::{matmul_macs, reset_matmul_macs, set_kernel_threads};
pub use scalar::Scalar;

use std::cell::{Cell, Ref, RefCell};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, TensorError>;

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

/// Backward rule of a recorded operation: maps the output gradient to one
/// optional gradient per input (`None` for inputs that need none).
pub type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>>>;

pub(crate) struct Node<T: Scalar> {
    pub(crate) op: &'static str,
    pub(crate) inputs: Vec<Tensor<T>>,
    pub(crate) backward: BackwardFn<T>,
}

pub(crate) struct Inner<T: Scalar> {
    pub(crate) id: usize,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: RefCell<Vec<T>>,
    pub(crate) requires_grad: Cell<bool>,
    pub(crate) grad: RefCell<Option<Vec<T>>>,
    pub(crate) node: Option<Node<T>>,
}

#[derive(Clone)]
pub struct Tensor<T: Scalar>(pub(crate) Rc<Inner<T>>);

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.0.data.borrow();
        let preview: Vec<T> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad.get())
            .field("op", &self.0.node.as_ref().map(|n| n.op))
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    fn build(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, node: Option<Node<T>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Rc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RefCell::new(data),
            requires_grad: Cell::new(requires_grad),
            grad: RefCell::new(None),
            node,
        }))
    }

    /// Leaf tensor that does not track gradients.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::Invalid {
                op: "from_vec",
                msg: format!("zero extent in shape {shape:?}"),
            });
        }
        if numel(shape) != data.len() {
            return Err(TensorError::Invalid {
                op: "from_vec",
                msg: format!("shape {shape:?} needs {} elements, got {}", numel(shape), data.len()),
            });
        }
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| T::from_f64(v)).collect())
    }

    /// Trainable leaf: requires gradients and accumulates them in its slot.
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let t = Self::from_vec(shape, data)?;
        t.0.requires_grad.set(true);
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), vec![T::zero(); numel(shape)], false, None)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::build(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn scalar(value: T) -> Self {
        Self::build(vec![], vec![value], false, None)
    }

    /// Records the result of a custom operation. The output requires
    /// gradients iff any input does; otherwise no node is kept.
    pub fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        inputs: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        let requires_grad = inputs.iter().any(|t| t.requires_grad());
        let node = requires_grad.then(|| Node { op, inputs, backward });
        Self::build(shape, data, requires_grad, node)
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn len(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.borrow().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.0.data.borrow().iter().map(|v| v.to_f64()).collect()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        let d = self.0.data.borrow();
        assert_eq!(d.len(), 1, "item() on tensor with shape {:?}", self.0.shape);
        d[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad.get()
    }

    /// Toggles gradient tracking on a leaf. Used for layer freezing.
    pub fn set_requires_grad(&self, flag: bool) {
        assert!(self.is_leaf(), "requires_grad can only be changed on leaves");
        self.0.requires_grad.set(flag);
        if !flag {
            self.0.grad.replace(None);
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.0.node.as_ref().map(|n| n.op)
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        self.0.grad.replace(None);
    }

    /// Copy without graph linkage or gradient.
    pub fn detach(&self) -> Self {
        Self::build(self.0.shape.clone(), self.to_vec(), false, None)
    }

    /// In-place parameter update between steps (optimizer, checkpoint load).
    pub fn update_data(&self, f: impl FnOnce(&mut [T])) {
        assert!(self.is_leaf(), "only leaf tensors can be updated in place");
        f(&mut self.0.data.borrow_mut());
    }

    pub(crate) fn accumulate_grad(&self, g: &[T]) {
        if !self.requires_grad() {
            return;
        }
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                for (a, &v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse-mode differentiation from a scalar loss. Leaf gradients are
    /// added to whatever their slots already hold; call
    /// [`Tensor::zero_grad`] between steps to reset them.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let graph = Graph::build(self);
        graph.run_backward(self);
        Ok(())
    }
}

#[cfg(test)]
mod tests;
