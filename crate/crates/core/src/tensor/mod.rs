//! Dense rank-4 tensors in batch×channel×height×width layout, plus the
//! reverse-mode tape that differentiates every operator in this crate.
//!
//! A [`Tensor`] not attached to a tape is an immutable value that can be
//! shared freely. Attaching it to a [`Tape`] (via [`Tape::watch`] or
//! [`Tape::watch_param`]) records subsequent operations so [`backward`]
//! can accumulate gradients. One tape is built per forward pass and is
//! confined to a single thread; parallel work uses independent tapes.

mod conv;
mod elementwise;
mod linear;
mod loss;
mod pool;
mod tape;

pub use loss::{mse_loss, softmax_cross_entropy};
pub use tape::{backward, Parameter, Tape};

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
pub(crate) use tape::{record_multi_op, record_unary_op, NodeRef};

/// Dimensions of a rank-4 tensor: batch, channels, height, width.
///
/// Vectors and matrices ride along as degenerate shapes — a per-channel
/// vector is `(1, C, 1, 1)`, a batch of feature vectors is `(N, D, 1, 1)`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Linear index of element (n, c, i, j).
    #[inline]
    pub fn at(&self, n: usize, c: usize, i: usize, j: usize) -> usize {
        ((n * self.c + c) * self.h + i) * self.w + j
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense rank-4 tensor. Storage is shared (`Arc`), so clones are cheap;
/// values are never mutated in place.
#[derive(Clone)]
pub struct Tensor<T: Scalar> {
    shape: Shape,
    values: Arc<Vec<T>>,
    node: Option<NodeRef<T>>,
}

impl<T: Scalar> Tensor<T> {
    /// Build a tensor from explicit values; length must equal the shape's
    /// element count.
    pub fn from_vec(shape: Shape, values: Vec<T>) -> Result<Self> {
        if values.len() != shape.numel() {
            return Err(Error::InvalidArgument {
                op: "Tensor::from_vec",
                detail: format!(
                    "shape {} wants {} elements, got {}",
                    shape,
                    shape.numel(),
                    values.len()
                ),
            });
        }
        Ok(Tensor {
            shape,
            values: Arc::new(values),
            node: None,
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            values: Arc::new(vec![T::zero(); shape.numel()]),
            node: None,
        }
    }

    pub fn full(shape: Shape, v: T) -> Self {
        Tensor {
            shape,
            values: Arc::new(vec![v; shape.numel()]),
            node: None,
        }
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, T::one())
    }

    /// Uniform values in `[-bound, bound]`, drawn in row-major order.
    pub fn uniform<R: Rng>(shape: Shape, bound: f64, rng: &mut R) -> Self {
        let values = (0..shape.numel())
            .map(|_| T::from_f64(rng.gen_range(-bound..=bound)))
            .collect();
        Tensor {
            shape,
            values: Arc::new(values),
            node: None,
        }
    }

    pub fn scalar(v: T) -> Self {
        Self::full(Shape::new(1, 1, 1, 1), v)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.numel()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Value of a 1-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {}", self.shape);
        self.values[0]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Same values, no tape attachment. Gradients do not flow past this.
    pub fn detach(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape,
            values: Arc::clone(&self.values),
            node: None,
        }
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Sum of elementwise products; plain data helper, not differentiated.
    pub fn dot(&self, other: &Tensor<T>) -> T {
        assert_eq!(self.numel(), other.numel(), "dot: length mismatch");
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(&a, &b)| a * b)
            .fold(T::zero(), |acc, v| acc + v)
    }

    /// Convert element type (used to move data between precisions).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            values: Arc::new(self.values.iter().map(|v| U::from_f64(v.as_f64())).collect()),
            node: None,
        }
    }

    pub(crate) fn values_arc(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.values)
    }

    pub(crate) fn from_arc(shape: Shape, values: Arc<Vec<T>>) -> Self {
        debug_assert_eq!(shape.numel(), values.len());
        Tensor {
            shape,
            values,
            node: None,
        }
    }

    pub(crate) fn node(&self) -> Option<&NodeRef<T>> {
        self.node.as_ref()
    }

    pub(crate) fn with_node(mut self, node: NodeRef<T>) -> Self {
        self.node = Some(node);
        self
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("tracked", &self.node.is_some())
            .finish()
    }
}

/// Shape-equality guard shared by the binary ops.
fn check_same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        let (sa, sb) = (a.shape(), b.shape());
        let axis = if sa.n != sb.n {
            "batch"
        } else if sa.c != sb.c {
            "channel"
        } else if sa.h != sb.h {
            "height"
        } else {
            "width"
        };
        return Err(Error::ShapeMismatch {
            op,
            axis,
            detail: format!("{sa} vs {sb}"),
        });
    }
    Ok(())
}

