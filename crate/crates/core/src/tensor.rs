//! Tensors: contiguous row-major buffers with shape, optional gradient slot,
//! and an optional identity on an autodiff tape.
//!
//! A `Tensor` is a cheap handle (`Rc` inside); cloning shares storage. Layout
//! is always row-major, NCHW for image maps and B×N×D for token sequences.

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Scalar element type of a tensor. Implemented for `f32` and `f64`; `f32` is
/// the training dtype, `f64` exists for gradient-check builds.
pub trait Scalar:
    Copy
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + 'static
{
    const DTYPE: Dtype;
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    /// Fused multiply-add, `self * a + b` in one rounding.
    fn mul_add(self, a: Self, b: Self) -> Self;
    fn tanh(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn abs(self) -> Self;
    fn max(self, other: Self) -> Self;
    fn min(self, other: Self) -> Self;
    fn is_finite(self) -> bool;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

macro_rules! impl_scalar {
    ($t:ty, $dtype:expr) => {
        impl Scalar for $t {
            const DTYPE: Dtype = $dtype;
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            #[inline(always)]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline(always)]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline(always)]
            fn exp(self) -> Self {
                self.exp()
            }
            #[inline(always)]
            fn ln(self) -> Self {
                self.ln()
            }
            #[inline(always)]
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            #[inline(always)]
            fn mul_add(self, a: Self, b: Self) -> Self {
                <$t>::mul_add(self, a, b)
            }
            #[inline(always)]
            fn tanh(self) -> Self {
                self.tanh()
            }
            #[inline(always)]
            fn powi(self, n: i32) -> Self {
                self.powi(n)
            }
            #[inline(always)]
            fn abs(self) -> Self {
                self.abs()
            }
            #[inline(always)]
            fn max(self, other: Self) -> Self {
                if self > other {
                    self
                } else {
                    other
                }
            }
            #[inline(always)]
            fn min(self, other: Self) -> Self {
                if self < other {
                    self
                } else {
                    other
                }
            }
            #[inline(always)]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }
            fn read_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().expect("scalar byte width"))
            }
        }
    };
}

impl_scalar!(f32, Dtype::F32);
impl_scalar!(f64, Dtype::F64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u32 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Dtype> {
        match code {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn byte_width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Identity of a tensor on a tape: which tape, which node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeRef {
    pub tape_id: u64,
    pub index: usize,
}

struct Inner<T: Scalar> {
    shape: Vec<usize>,
    data: Rc<RefCell<Vec<T>>>,
    requires_grad: Cell<bool>,
    grad: RefCell<Option<Vec<T>>>,
    node: Cell<Option<NodeRef>>,
}

pub struct Tensor<T: Scalar> {
    inner: Rc<Inner<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor { inner: Rc::clone(&self.inner) }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad.get())
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("shape {:?} holds {} elements, buffer has {}", shape, numel, data.len()),
            ));
        }
        Ok(Self::new_unchecked(shape, data))
    }

    pub(crate) fn new_unchecked(shape: Vec<usize>, data: Vec<T>) -> Self {
        Tensor {
            inner: Rc::new(Inner {
                shape,
                data: Rc::new(RefCell::new(data)),
                requires_grad: Cell::new(false),
                grad: RefCell::new(None),
                node: Cell::new(None),
            }),
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self::new_unchecked(shape, vec![T::ZERO; numel])
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let numel = shape.iter().product();
        Self::new_unchecked(shape, vec![value; numel])
    }

    pub fn scalar(value: T) -> Self {
        Self::new_unchecked(vec![], vec![value])
    }

    /// New handle over the same storage with a different (equal-element) shape.
    pub(crate) fn view_with_shape(&self, shape: Vec<usize>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), self.numel());
        Tensor {
            inner: Rc::new(Inner {
                shape,
                data: Rc::clone(&self.inner.data),
                requires_grad: Cell::new(false),
                grad: RefCell::new(None),
                node: Cell::new(None),
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.inner.shape[axis]
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    /// Consume this handle and take the underlying buffer, provided nothing
    /// else — clone, view, or captured backward closure — can still observe
    /// it; otherwise hand the tensor back unchanged.
    pub(crate) fn try_take(self) -> std::result::Result<(Vec<usize>, Vec<T>), Tensor<T>> {
        match Rc::try_unwrap(self.inner) {
            Ok(inner) => match Rc::try_unwrap(inner.data) {
                Ok(cell) => Ok((inner.shape, cell.into_inner())),
                Err(data) => Err(Tensor {
                    inner: Rc::new(Inner {
                        shape: inner.shape,
                        data,
                        requires_grad: inner.requires_grad,
                        grad: inner.grad,
                        node: inner.node,
                    }),
                }),
            },
            Err(inner) => Err(Tensor { inner }),
        }
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.inner.data.borrow()
    }

    pub fn data_mut(&self) -> RefMut<'_, Vec<T>> {
        self.inner.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        let data = self.data();
        assert_eq!(data.len(), 1, "item() on tensor with {} elements", data.len());
        data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad.get()
    }

    pub fn set_requires_grad(&self, value: bool) {
        self.inner.requires_grad.set(value);
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[T]) {
        debug_assert_eq!(g.len(), self.numel());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(existing) => {
                for (e, &v) in existing.iter_mut().zip(g) {
                    *e += v;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    pub(crate) fn node(&self) -> Option<NodeRef> {
        self.inner.node.get()
    }

    pub(crate) fn set_node(&self, node: Option<NodeRef>) {
        self.inner.node.set(node);
    }

    /// True when every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }
}
