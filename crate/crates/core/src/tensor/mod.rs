//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! Values live on a [`Tape`] while a graph is being built; learnable state
//! lives in a [`ParamStore`] of [`DiffTensor`]s that is bound onto a fresh
//! tape for every forward pass.

mod gradcheck;
pub(crate) mod kernels;
mod optim;
mod params;
mod tape;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use crate::error::{Error, Result};

pub use gradcheck::{gradcheck, GradcheckReport};
pub use kernels::{Conv2dGeom, Conv3dGeom, ConvTranspose2dGeom, Padding};
pub use optim::{Adam, AdamConfig};
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{Fault, Gradients, Tape, Var, REMAP_ZERO};

/// Floating point width of a computation graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::Single => "single",
            Precision::Double => "double",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "single" | "f32" => Ok(Precision::Single),
            "double" | "f64" => Ok(Precision::Double),
            other => Err(Error::config(format!("unknown precision '{other}'"))),
        }
    }
}

/// Element type of a tensor. Implemented for `f32` and `f64`.
pub trait Scalar:
    num_like::Float + AddAssign + SubAssign + MulAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    const PRECISION: Precision;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn erf(self) -> Self;
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::Single;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn erf(self) -> Self {
        libm::erff(self)
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::Double;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn erf(self) -> Self {
        libm::erf(self)
    }
}

/// The arithmetic subset the kernels need. `num_traits::Float` would also
/// bring `ToPrimitive::to_f64`, which collides with `Scalar::to_f64`.
pub mod num_like {
    use std::ops::{Add, Div, Mul, Neg, Sub};

    pub trait Float:
        Copy
        + PartialOrd
        + Add<Output = Self>
        + Sub<Output = Self>
        + Mul<Output = Self>
        + Div<Output = Self>
        + Neg<Output = Self>
    {
        fn zero() -> Self;
        fn one() -> Self;
        fn exp(self) -> Self;
        fn ln(self) -> Self;
        fn ln_1p(self) -> Self;
        fn sqrt(self) -> Self;
        fn abs(self) -> Self;
        fn is_finite(self) -> bool;
        fn max(self, other: Self) -> Self;
    }

    macro_rules! impl_float {
        ($t:ty) => {
            impl Float for $t {
                fn zero() -> Self {
                    0.0
                }
                fn one() -> Self {
                    1.0
                }
                fn exp(self) -> Self {
                    <$t>::exp(self)
                }
                fn ln(self) -> Self {
                    <$t>::ln(self)
                }
                fn ln_1p(self) -> Self {
                    <$t>::ln_1p(self)
                }
                fn sqrt(self) -> Self {
                    <$t>::sqrt(self)
                }
                fn abs(self) -> Self {
                    <$t>::abs(self)
                }
                fn is_finite(self) -> bool {
                    <$t>::is_finite(self)
                }
                fn max(self, other: Self) -> Self {
                    <$t>::max(self, other)
                }
            }
        };
    }
    impl_float!(f32);
    impl_float!(f64);
}

/// An n-dimensional row-major tensor that may carry a gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffTensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    pub requires_grad: bool,
    pub grad: Option<Vec<T>>,
}

impl<T: Scalar> DiffTensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        check_shape(&shape, data.len())?;
        Ok(DiffTensor { shape, data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        DiffTensor { shape, data: vec![T::zero(); n], requires_grad: false, grad: None }
    }

    pub fn scalar(v: T) -> Self {
        DiffTensor { shape: vec![1], data: vec![v], requires_grad: false, grad: None }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}

pub(crate) fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::shape(format!("extents must be positive, got {shape:?}")));
    }
    let n: usize = shape.iter().product();
    if n != len {
        return Err(Error::shape(format!("shape {shape:?} holds {n} elements, data has {len}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests;
