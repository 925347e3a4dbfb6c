use std::cell::RefCell;
use std::rc::Rc;

use crate::ops::{backprop, Node};
use crate::tensor::Tensor;
use crate::{GradError, Result};

/// Recording arena for one forward/backward pass.
///
/// A tape owns every value produced while it is alive. Ops on [`Var`] handles
/// append a node to the Wengert list; [`Tape::backward`] consumes the list in
/// reverse. One backward per tape: afterwards the tape is frozen and further
/// ops or backward calls are contract errors.
///
/// Tapes are single-threaded (`Rc` handles); independent tapes may live on
/// independent threads.
#[derive(Clone)]
pub struct Tape(pub(crate) Rc<RefCell<TapeInner>>);

pub(crate) struct TapeInner {
    pub(crate) slots: Vec<Slot>,
    pub(crate) nodes: Vec<Node>,
    pub(crate) grads: Vec<Option<Vec<f64>>>,
    pub(crate) frozen: bool,
}

/// One recorded value: shape, data, and whether gradients flow through it.
pub(crate) struct Slot {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<f64>,
    /// True when this slot is a leaf with requires_grad or depends on one.
    pub(crate) needs: bool,
}

impl Slot {
    pub(crate) fn dims2(&self) -> Result<(usize, usize)> {
        crate::tensor::dims2_of(&self.shape)
    }
}

impl Tape {
    #[allow(clippy::new_without_default)]
    pub fn new() -> Tape {
        Tape(Rc::new(RefCell::new(TapeInner {
            slots: Vec::new(),
            nodes: Vec::new(),
            grads: Vec::new(),
            frozen: false,
        })))
    }

    /// Record an input tensor. Gradients are accumulated for it during
    /// backward only when `requires_grad` is set.
    pub fn leaf(&self, value: &Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(GradError::NonFinite {
                op: "leaf",
                what: "input",
            });
        }
        let mut inner = self.0.borrow_mut();
        if inner.frozen {
            return Err(GradError::contract("leaf", "tape is frozen after backward"));
        }
        let idx = inner.push(value.shape().to_vec(), value.data().to_vec(), requires_grad);
        drop(inner);
        Ok(Var {
            tape: self.clone(),
            idx,
        })
    }

    /// Convenience for inputs that never need gradients (masks, targets).
    pub fn constant(&self, value: &Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn node_count(&self) -> usize {
        self.0.borrow().nodes.len()
    }

    /// Reverse sweep from a scalar loss. Freezes the tape; gradients of
    /// requires_grad leaves are readable through [`Var::grad`] afterwards.
    pub fn backward(&self, loss: &Var) -> Result<()> {
        if !Rc::ptr_eq(&self.0, &loss.tape.0) {
            return Err(GradError::contract("backward", "loss belongs to another tape"));
        }
        let mut inner = self.0.borrow_mut();
        if inner.frozen {
            return Err(GradError::contract(
                "backward",
                "tape already consumed by a previous backward",
            ));
        }
        if inner.slots[loss.idx].data.len() != 1 {
            return Err(GradError::contract(
                "backward",
                format!(
                    "loss must be a scalar, got shape {:?}",
                    inner.slots[loss.idx].shape
                ),
            ));
        }
        inner.frozen = true;
        let n = inner.slots.len();
        inner.grads = vec![None; n];
        inner.grads[loss.idx] = Some(vec![1.0]);

        let nodes = std::mem::take(&mut inner.nodes);
        {
            let TapeInner { slots, grads, .. } = &mut *inner;
            for node in nodes.iter().rev() {
                backprop(node, slots, grads)?;
            }
        }
        inner.nodes = nodes;

        for g in inner.grads.iter().flatten() {
            if !g.iter().all(|v| v.is_finite()) {
                return Err(GradError::NonFinite {
                    op: "backward",
                    what: "gradient",
                });
            }
        }
        Ok(())
    }
}

impl TapeInner {
    pub(crate) fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, needs: bool) -> usize {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.slots.push(Slot { shape, data, needs });
        self.slots.len() - 1
    }
}

/// Handle to one tape slot. Cheap to clone; ops are methods returning new
/// handles on the same tape.
#[derive(Clone)]
pub struct Var {
    pub(crate) tape: Tape,
    pub(crate) idx: usize,
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("idx", &self.idx)
            .field("shape", &self.tape.0.borrow().slots[self.idx].shape)
            .finish()
    }
}

impl Var {
    pub fn shape(&self) -> Vec<usize> {
        self.tape.0.borrow().slots[self.idx].shape.clone()
    }

    pub fn value(&self) -> Tensor {
        let inner = self.tape.0.borrow();
        let slot = &inner.slots[self.idx];
        Tensor::from_vec(&slot.shape, slot.data.clone()).expect("slot shape is consistent")
    }

    /// Scalar convenience: the single element of a `[1]` tensor.
    pub fn scalar_value(&self) -> Result<f64> {
        let inner = self.tape.0.borrow();
        let slot = &inner.slots[self.idx];
        if slot.data.len() != 1 {
            return Err(GradError::contract(
                "scalar_value",
                format!("shape {:?} is not scalar", slot.shape),
            ));
        }
        Ok(slot.data[0])
    }

    /// Gradient accumulated by the last backward pass. Present only for
    /// requires_grad leaves reached by the loss (interior buffers are
    /// released during the sweep).
    pub fn grad(&self) -> Option<Tensor> {
        let inner = self.tape.0.borrow();
        let g = inner.grads.get(self.idx)?.as_ref()?;
        let slot = &inner.slots[self.idx];
        Some(Tensor::from_vec(&slot.shape, g.clone()).expect("grad shape matches slot"))
    }

    pub(crate) fn same_tape(&self, other: &Var, op: &'static str) -> Result<()> {
        if Rc::ptr_eq(&self.tape.0, &other.tape.0) {
            Ok(())
        } else {
            Err(GradError::contract(op, "operands live on different tapes"))
        }
    }
}
