//! Dense f64 tensors with tape-based reverse-mode differentiation.
//!
//! The engine is deliberately small: the only operations are the ones the
//! lifting models need (matmul, elementwise arithmetic, softmax, LayerNorm,
//! GELU/ReLU, dropout, reductions, masked fill). Everything is 64-bit so
//! finite-difference gradient checks stay sharp.
//!
//! A [`Tensor`] owns its values and, for leaves created with
//! [`Tensor::param`], accumulates a gradient across backward passes. A
//! [`Tape`] records one forward computation; [`Tape::backward`] walks the
//! record once in reverse. Tapes and their tensors live on a single thread;
//! independent runs get independent tapes.

mod ops;

pub use ops::BoolMask;

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: data length {len} does not match shape {shape:?}")]
    BadLength {
        op: &'static str,
        shape: Vec<usize>,
        len: usize,
    },
    #[error("softmax: row {row} is fully masked")]
    FullyMaskedRow { row: usize },
    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward: loss is not an output of this tape")]
    LossNotOnTape,
    #[error("backward: tape already consumed; reset it or record a new one")]
    DoubleBackward,
    #[error("dropout: rate {0} is outside [0, 1)")]
    BadDropoutRate(f64),
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

pub(crate) struct TensorData {
    pub(crate) shape: Vec<usize>,
    pub(crate) values: Vec<f64>,
    pub(crate) requires_grad: bool,
    /// True when this tensor is a grad leaf or depends on one.
    pub(crate) needs_grad: bool,
    pub(crate) grad: Option<Vec<f64>>,
    /// (tape id, node index) of the op that produced this tensor.
    pub(crate) tape_node: Option<(u64, usize)>,
}

/// Dense multi-dimensional array of f64, optionally tracked for gradients.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) inner: Rc<RefCell<TensorData>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.inner.borrow();
        write!(f, "Tensor(shape={:?}, requires_grad={})", d.shape, d.requires_grad)
    }
}

impl Tensor {
    fn from_parts(shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Tensor {
            inner: Rc::new(RefCell::new(TensorData {
                shape,
                values,
                requires_grad,
                needs_grad: requires_grad,
                grad: None,
                tape_node: None,
            })),
        }
    }

    /// Constant tensor; never receives a gradient.
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Self, TensorError> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(TensorError::BadLength {
                op: "new",
                shape: shape.to_vec(),
                len: values.len(),
            });
        }
        Ok(Self::from_parts(shape.to_vec(), values, false))
    }

    /// Trainable leaf; gradients accumulate here across backward passes.
    pub fn param(shape: &[usize], values: Vec<f64>) -> Result<Self, TensorError> {
        let t = Self::new(shape, values)?;
        t.inner.borrow_mut().requires_grad = true;
        t.inner.borrow_mut().needs_grad = true;
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_parts(shape.to_vec(), vec![0.0; shape.iter().product()], false)
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_parts(vec![], vec![v], false)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn values(&self) -> Vec<f64> {
        self.inner.borrow().values.clone()
    }

    /// Value of a scalar (or single-element) tensor.
    pub fn item(&self) -> f64 {
        let d = self.inner.borrow();
        debug_assert_eq!(d.values.len(), 1);
        d.values[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    /// Zeroes (and allocates, if absent) the gradient buffer.
    pub fn zero_grad(&self) {
        let mut d = self.inner.borrow_mut();
        let n = d.values.len();
        match &mut d.grad {
            Some(g) => g.iter_mut().for_each(|v| *v = 0.0),
            slot => *slot = Some(vec![0.0; n]),
        }
    }

    /// Replaces the stored values (used by the optimizer); shape is fixed.
    pub fn set_values(&self, values: &[f64]) {
        let mut d = self.inner.borrow_mut();
        assert_eq!(d.values.len(), values.len(), "set_values: wrong length");
        d.values.copy_from_slice(values);
    }

    /// In-place update of the stored values.
    pub fn update_values(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.inner.borrow_mut().values)
    }

    /// In-place update of the gradient buffer (allocated zeroed if absent).
    pub fn update_grad(&self, f: impl FnOnce(&mut [f64])) {
        let mut d = self.inner.borrow_mut();
        let n = d.values.len();
        f(d.grad.get_or_insert_with(|| vec![0.0; n]))
    }

    pub(crate) fn needs_grad(&self) -> bool {
        self.inner.borrow().needs_grad
    }

    pub(crate) fn accumulate_grad(&self, delta: &[f64]) {
        let mut d = self.inner.borrow_mut();
        let n = d.values.len();
        debug_assert_eq!(n, delta.len());
        let g = d.grad.get_or_insert_with(|| vec![0.0; n]);
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }
}

pub(crate) struct Node {
    pub(crate) op: ops::Op,
    pub(crate) inputs: Vec<Tensor>,
    pub(crate) output: Tensor,
}

/// Record of one forward computation, replayed in reverse by [`Tape::backward`].
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
    consumed: RefCell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: fresh_id(),
            nodes: RefCell::new(Vec::new()),
            consumed: RefCell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Drops the recorded graph and re-arms backward.
    pub fn reset(&self) {
        self.nodes.borrow_mut().clear();
        *self.consumed.borrow_mut() = false;
    }

    pub(crate) fn record(
        &self,
        op: ops::Op,
        inputs: Vec<Tensor>,
        shape: Vec<usize>,
        values: Vec<f64>,
    ) -> Tensor {
        let needs_grad = inputs.iter().any(|t| t.needs_grad());
        let out = Tensor::from_parts(shape, values, false);
        {
            let mut d = out.inner.borrow_mut();
            d.needs_grad = needs_grad;
            d.tape_node = Some((self.id, self.nodes.borrow().len()));
        }
        self.nodes.borrow_mut().push(Node {
            op,
            inputs,
            output: out.clone(),
        });
        out
    }

    /// Reverse-topological gradient accumulation from a scalar loss.
    ///
    /// Every tensor reachable from the loss receives its gradient; leaves
    /// created with [`Tensor::param`] keep theirs for the optimizer. Calling
    /// backward twice on the same record is an error.
    pub fn backward(&self, loss: &Tensor) -> Result<(), TensorError> {
        if loss.numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss.shape()));
        }
        match loss.inner.borrow().tape_node {
            Some((tape_id, _)) if tape_id == self.id => {}
            _ => return Err(TensorError::LossNotOnTape),
        }
        if *self.consumed.borrow() {
            return Err(TensorError::DoubleBackward);
        }
        *self.consumed.borrow_mut() = true;

        loss.accumulate_grad(&[1.0]);
        let nodes = self.nodes.borrow();
        for node in nodes.iter().rev() {
            let out_grad = match node.output.inner.borrow().grad.as_ref() {
                Some(g) => g.clone(),
                None => continue, // no path from the loss through this node
            };
            ops::backward_node(node, &out_grad);
        }
        Ok(())
    }
}
