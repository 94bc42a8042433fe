//! Reverse-mode tape: records one forward pass, replays it backwards.
//!
//! The tape is define-by-run and single-shot — build it, run `backward`
//! once, drop it. Calling `backward` twice is rejected so silent gradient
//! accumulation bugs cannot hide. Tapes are `!Send` by construction
//! (`Rc` internals); cross-thread parallelism uses one tape per thread.

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::{Arc, Mutex, RwLock};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{Shape, Tensor};

/// Gradient producer of one recorded operation: takes the gradient of the
/// node's output, returns `(parent node id, parent gradient)` pairs for
/// every tracked parent.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<(usize, Vec<T>)>>;

enum NodeKind<T: Scalar> {
    Leaf { param: Option<Arc<Parameter<T>>> },
    Op { backward: BackwardFn<T> },
}

struct Node<T: Scalar> {
    shape: Shape,
    kind: NodeKind<T>,
}

struct TapeInner<T: Scalar> {
    nodes: Vec<Node<T>>,
    /// Gradients of leaf nodes, filled in by `backward` for later query.
    leaf_grads: Vec<Option<Vec<T>>>,
    consumed: bool,
}

/// Handle tying a tensor to its node on a tape.
pub(crate) struct NodeRef<T: Scalar> {
    tape: Rc<RefCell<TapeInner<T>>>,
    pub(crate) id: usize,
}

impl<T: Scalar> Clone for NodeRef<T> {
    fn clone(&self) -> Self {
        NodeRef {
            tape: Rc::clone(&self.tape),
            id: self.id,
        }
    }
}

/// Recording tape for one forward pass.
pub struct Tape<T: Scalar> {
    inner: Rc<RefCell<TapeInner<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                leaf_grads: Vec::new(),
                consumed: false,
            })),
        }
    }

    fn push(&self, shape: Shape, kind: NodeKind<T>) -> usize {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node { shape, kind });
        inner.leaf_grads.push(None);
        inner.nodes.len() - 1
    }

    /// Start tracking a tensor: gradients w.r.t. it become queryable via
    /// [`Tape::grad`] after `backward`.
    pub fn watch(&self, t: &Tensor<T>) -> Tensor<T> {
        let id = self.push(t.shape(), NodeKind::Leaf { param: None });
        t.detach().with_node(NodeRef {
            tape: Rc::clone(&self.inner),
            id,
        })
    }

    /// Snapshot a parameter's current value as a tracked leaf; `backward`
    /// will deposit the gradient on the parameter.
    pub fn watch_param(&self, p: &Arc<Parameter<T>>) -> Tensor<T> {
        let value = p.value();
        let id = self.push(
            value.shape(),
            NodeKind::Leaf {
                param: Some(Arc::clone(p)),
            },
        );
        value.with_node(NodeRef {
            tape: Rc::clone(&self.inner),
            id,
        })
    }

    /// Gradient of a watched tensor, available after `backward`. `None` if
    /// no gradient flowed to it.
    pub fn grad(&self, t: &Tensor<T>) -> Option<Tensor<T>> {
        let node = t.node()?;
        if !Rc::ptr_eq(&node.tape, &self.inner) {
            return None;
        }
        let inner = self.inner.borrow();
        inner.leaf_grads[node.id].as_ref().map(|g| {
            Tensor::from_vec(t.shape(), g.clone()).expect("leaf gradient shape")
        })
    }

    /// Run the reverse sweep and write gradients onto all reachable
    /// parameters (accumulating into their `grad` buffers).
    pub fn backward(&self, loss: &Tensor<T>) -> Result<()> {
        self.run_backward(loss, true).map(|_| ())
    }

    /// Reverse sweep that does NOT touch `Parameter::grad`; instead returns
    /// `(parameter name, gradient)` pairs in tape order. Used by data-parallel
    /// training so shard gradients can be merged in a deterministic order.
    pub fn backward_collect(&self, loss: &Tensor<T>) -> Result<Vec<(String, Vec<T>)>> {
        self.run_backward(loss, false)
    }

    fn run_backward(&self, loss: &Tensor<T>, write_params: bool) -> Result<Vec<(String, Vec<T>)>> {
        let node = loss
            .node()
            .ok_or_else(|| Error::BadLoss("loss tensor is not tracked on any tape".into()))?;
        if !Rc::ptr_eq(&node.tape, &self.inner) {
            return Err(Error::BadLoss("loss belongs to a different tape".into()));
        }
        if loss.numel() != 1 {
            return Err(Error::BadLoss(format!(
                "loss must be scalar, got shape {}",
                loss.shape()
            )));
        }
        let loss_id = node.id;

        {
            let mut inner = self.inner.borrow_mut();
            if inner.consumed {
                return Err(Error::TapeConsumed);
            }
            inner.consumed = true;
        }

        let inner = self.inner.borrow();
        let n = inner.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        grads[loss_id] = Some(vec![T::one()]);

        for id in (0..=loss_id).rev() {
            match &inner.nodes[id].kind {
                NodeKind::Leaf { .. } => continue,
                NodeKind::Op { backward } => {
                    let Some(g) = grads[id].take() else { continue };
                    for (pid, pg) in backward(&g) {
                        debug_assert!(pid < id, "tape order violated: parent after child");
                        debug_assert_eq!(
                            pg.len(),
                            inner.nodes[pid].shape.numel(),
                            "gradient shape mismatch at node {pid}"
                        );
                        match &mut grads[pid] {
                            Some(acc) => {
                                for (a, b) in acc.iter_mut().zip(pg.iter()) {
                                    *a += *b;
                                }
                            }
                            slot => *slot = Some(pg),
                        }
                    }
                }
            }
        }

        drop(inner);
        let mut inner = self.inner.borrow_mut();
        let mut collected = Vec::new();
        for (id, slot) in grads.into_iter().enumerate() {
            let Some(g) = slot else { continue };
            match &inner.nodes[id].kind {
                NodeKind::Leaf { param: Some(p) } => {
                    if write_params {
                        p.add_grad(&g);
                    } else {
                        collected.push((p.name().to_string(), g));
                    }
                }
                NodeKind::Leaf { param: None } => inner.leaf_grads[id] = Some(g),
                NodeKind::Op { .. } => {}
            }
        }
        Ok(collected)
    }
}

/// Reverse sweep through the tape the loss was recorded on; gradients land
/// on every reachable [`Parameter`].
pub fn backward<T: Scalar>(loss: &Tensor<T>) -> Result<()> {
    let node = loss
        .node()
        .ok_or_else(|| Error::BadLoss("loss tensor is not tracked on any tape".into()))?;
    let tape = Tape {
        inner: Rc::clone(&node.tape),
    };
    tape.backward(loss)
}

/// Attach `out` to the tape shared by `inputs` (if any input is tracked).
/// `make_backward` receives the per-input node ids (`None` for untracked
/// inputs) and returns the gradient producer.
pub(crate) fn record_op<T: Scalar>(
    op: &'static str,
    out: Tensor<T>,
    inputs: &[&Tensor<T>],
    make_backward: impl FnOnce(&[Option<usize>]) -> BackwardFn<T>,
) -> Result<Tensor<T>> {
    let mut tape: Option<Rc<RefCell<TapeInner<T>>>> = None;
    for input in inputs {
        if let Some(node) = input.node() {
            match &tape {
                None => tape = Some(Rc::clone(&node.tape)),
                Some(t) if Rc::ptr_eq(t, &node.tape) => {}
                Some(_) => return Err(Error::TapeMismatch { op }),
            }
        }
    }
    let Some(tape) = tape else { return Ok(out) };

    let ids: Vec<Option<usize>> = inputs.iter().map(|i| i.node().map(|n| n.id)).collect();
    let backward = make_backward(&ids);
    let id = {
        let mut inner = tape.borrow_mut();
        inner.nodes.push(Node {
            shape: out.shape(),
            kind: NodeKind::Op { backward },
        });
        inner.leaf_grads.push(None);
        inner.nodes.len() - 1
    };
    Ok(out.with_node(NodeRef { tape, id }))
}

/// Record a single-input operation whose backward maps output-gradient data
/// to input-gradient data. Lets sibling modules (filters, wavelets) define
/// differentiable ops without touching tape internals.
pub(crate) fn record_unary_op<T: Scalar>(
    op: &'static str,
    out: Tensor<T>,
    input: &Tensor<T>,
    backward: impl Fn(&[T]) -> Vec<T> + 'static,
) -> Result<Tensor<T>> {
    record_op(op, out, &[input], |ids| {
        let ix = ids[0];
        Box::new(move |g| match ix {
            Some(i) => vec![(i, backward(g))],
            None => vec![],
        })
    })
}

/// Multi-input flavor of [`record_unary_op`]: `backward` returns one
/// gradient per input (in input order); untracked inputs are skipped.
pub(crate) fn record_multi_op<T: Scalar>(
    op: &'static str,
    out: Tensor<T>,
    inputs: &[&Tensor<T>],
    backward: impl Fn(&[T]) -> Vec<Vec<T>> + 'static,
) -> Result<Tensor<T>> {
    record_op(op, out, inputs, |ids| {
        let ids = ids.to_vec();
        Box::new(move |g| {
            backward(g)
                .into_iter()
                .zip(ids.iter())
                .filter_map(|(grad, id)| id.map(|i| (i, grad)))
                .collect()
        })
    })
}

/// Named, learnable tensor: a value plus a same-shaped gradient buffer.
///
/// Thread-safe so read-only forward passes can run concurrently; the
/// training loop is the only writer between steps.
pub struct Parameter<T: Scalar> {
    name: String,
    shape: Shape,
    value: RwLock<Arc<Vec<T>>>,
    grad: Mutex<Vec<T>>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Arc<Self> {
        let shape = value.shape();
        Arc::new(Parameter {
            name: name.into(),
            shape,
            value: RwLock::new(value.values_arc()),
            grad: Mutex::new(vec![T::zero(); shape.numel()]),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// Untracked snapshot of the current value.
    pub fn value(&self) -> Tensor<T> {
        let arc = Arc::clone(&self.value.read().expect("parameter lock"));
        Tensor::from_vec(self.shape, (*arc).clone())
            .expect("parameter value shape")
    }

    pub fn set_value(&self, t: &Tensor<T>) -> Result<()> {
        if t.shape() != self.shape {
            return Err(Error::ShapeMismatch {
                op: "Parameter::set_value",
                axis: "all",
                detail: format!("{} vs {} for '{}'", t.shape(), self.shape, self.name),
            });
        }
        *self.value.write().expect("parameter lock") = t.values_arc();
        Ok(())
    }

    /// Current gradient (zeros until a backward pass reaches this parameter).
    pub fn grad(&self) -> Tensor<T> {
        Tensor::from_vec(self.shape, self.grad.lock().expect("grad lock").clone())
            .expect("gradient shape")
    }

    pub fn zero_grad(&self) {
        for g in self.grad.lock().expect("grad lock").iter_mut() {
            *g = T::zero();
        }
    }

    pub fn add_grad(&self, g: &[T]) {
        let mut guard = self.grad.lock().expect("grad lock");
        assert_eq!(guard.len(), g.len(), "gradient length mismatch for '{}'", self.name);
        for (a, b) in guard.iter_mut().zip(g.iter()) {
            *a += *b;
        }
    }

    /// Scaled gradient accumulation (`grad += s·g`), used when merging
    /// shard gradients.
    pub fn add_grad_scaled(&self, g: &[T], s: T) {
        let mut guard = self.grad.lock().expect("grad lock");
        assert_eq!(guard.len(), g.len(), "gradient length mismatch for '{}'", self.name);
        for (a, b) in guard.iter_mut().zip(g.iter()) {
            *a += s * *b;
        }
    }
}
