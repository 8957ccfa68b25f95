//! Reverse-mode autodiff tape built from reference-counted tensor handles.
//!
//! Every op produces a new `Tensor` holding its value plus, when gradients
//! are enabled, the parent handles and a backward closure. `backward()` on a
//! scalar walks the graph once in reverse topological order, so shared
//! subexpressions contribute exactly once.

use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Run `f` with gradient recording disabled (nestable, panic-safe).
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = GRAD_ENABLED.with(|g| {
        let prev = g.get();
        g.set(false);
        Restore(prev)
    });
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Backward closure: receives the node's accumulated output gradient and the
/// parent handles, and accumulates into each parent that requires grad.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[Tensor])>;

pub(crate) struct Inner {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<f64>,
    pub(crate) grad: Vec<f64>,
    pub(crate) requires_grad: bool,
    pub(crate) parents: Vec<Tensor>,
    pub(crate) backward: Option<BackwardFn>,
}

/// Shared handle to a node in the autodiff graph.
#[derive(Clone)]
pub struct Tensor(pub(crate) Rc<RefCell<Inner>>);

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.0.borrow();
        f.debug_struct("Tensor")
            .field("id", &inner.id)
            .field("shape", &inner.shape)
            .field("requires_grad", &inner.requires_grad)
            .finish()
    }
}

impl Tensor {
    fn alloc(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Tensor {
        let n = data.len();
        Tensor(Rc::new(RefCell::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            grad: if requires_grad { vec![0.0; n] } else { Vec::new() },
            requires_grad,
            parents: Vec::new(),
            backward: None,
        })))
    }

    /// Leaf tensor; errors when the shape does not match the data length.
    pub fn leaf(data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                op: "leaf",
                detail: format!("shape {:?} needs {} values, got {}", shape, numel, data.len()),
            });
        }
        Ok(Self::alloc(data, shape.to_vec(), requires_grad && grad_enabled()))
    }

    /// Trainable parameter (always requires grad, even inside `no_grad`).
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                op: "param",
                detail: format!("shape {:?} needs {} values, got {}", shape, numel, data.len()),
            });
        }
        Ok(Self::alloc(data, shape.to_vec(), true))
    }

    /// Constant leaf (never receives gradient).
    pub fn constant(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        Self::leaf(data, shape, false)
    }

    pub fn scalar(v: f64) -> Tensor {
        Self::alloc(vec![v], vec![1], false)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        Self::alloc(vec![0.0; numel], shape.to_vec(), false)
    }

    /// Internal: op result node. `requires_grad` is decided by the caller.
    pub(crate) fn from_op(
        data: Vec<f64>,
        shape: Vec<usize>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        let t = Self::alloc(data, shape, track);
        if track {
            let mut inner = t.0.borrow_mut();
            inner.parents = parents;
            inner.backward = Some(backward);
        }
        t
    }

    pub fn id(&self) -> u64 {
        self.0.borrow().id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.borrow().data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.borrow().requires_grad
    }

    /// Copy of the value. Ops read data via internal borrows instead.
    pub fn value(&self) -> Vec<f64> {
        self.0.borrow().data.clone()
    }

    /// Scalar value; panics when the tensor is not a single element.
    pub fn item(&self) -> f64 {
        let inner = self.0.borrow();
        assert_eq!(inner.data.len(), 1, "item() on non-scalar tensor");
        inner.data[0]
    }

    /// Copy of the accumulated gradient (zeros until `backward` runs).
    pub fn grad(&self) -> Option<Vec<f64>> {
        let inner = self.0.borrow();
        if inner.requires_grad {
            Some(inner.grad.clone())
        } else {
            None
        }
    }

    pub fn zero_grad(&self) {
        let mut inner = self.0.borrow_mut();
        for g in &mut inner.grad {
            *g = 0.0;
        }
    }

    /// Overwrite the value in place (optimizer steps, finite differences).
    /// The shape is unchanged; `data` must have the same length.
    pub fn set_data(&self, data: &[f64]) {
        let mut inner = self.0.borrow_mut();
        assert_eq!(inner.data.len(), data.len(), "set_data length mismatch");
        inner.data.copy_from_slice(data);
    }

    pub fn nudge(&self, index: usize, delta: f64) {
        self.0.borrow_mut().data[index] += delta;
    }

    /// Accumulate a gradient contribution (no-op for non-grad tensors).
    pub(crate) fn accumulate(&self, g: &[f64]) {
        let mut inner = self.0.borrow_mut();
        if !inner.requires_grad {
            return;
        }
        debug_assert_eq!(inner.grad.len(), g.len());
        for (a, b) in inner.grad.iter_mut().zip(g) {
            *a += b;
        }
    }

    /// Reverse-mode sweep from a scalar. Each reachable node's backward
    /// closure runs exactly once, after all of its consumers.
    pub fn backward(&self) -> Result<()> {
        {
            let inner = self.0.borrow();
            if inner.data.len() != 1 {
                return Err(Error::ShapeMismatch {
                    op: "backward",
                    detail: format!("expected scalar, got shape {:?}", inner.shape),
                });
            }
            if !inner.requires_grad {
                return Err(Error::ShapeMismatch {
                    op: "backward",
                    detail: "tensor does not require grad".into(),
                });
            }
        }

        // Iterative post-order DFS: parents land before consumers, so the
        // reversed list is a valid reverse-topological order.
        let mut topo: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                topo.push(node);
                continue;
            }
            if !visited.insert(node.id()) {
                continue;
            }
            stack.push((node.clone(), true));
            let inner = node.0.borrow();
            for p in &inner.parents {
                if p.requires_grad() && !visited.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }

        self.0.borrow_mut().grad[0] += 1.0;

        for node in topo.iter().rev() {
            let (grad, parents, backward) = {
                let mut inner = node.0.borrow_mut();
                match inner.backward.take() {
                    Some(f) => (inner.grad.clone(), std::mem::take(&mut inner.parents), f),
                    None => continue,
                }
            };
            backward(&grad, &parents);
            // Intermediate nodes are spent after one sweep; parents are kept
            // out of the node so the subgraph can free eagerly.
        }
        Ok(())
    }
}
