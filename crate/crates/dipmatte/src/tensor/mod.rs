//! Dense tensors with reverse-mode automatic differentiation.
//!
//! The op set is exactly what the matting networks need: 2-d convolution
//! with reflect padding, nearest upsampling, a few pointwise nonlinearities,
//! instance normalization, and the elementwise glue. Everything runs on the
//! CPU in channels×height×width layout. `f32` is the production element
//! type; `f64` exists for finite-difference gradient verification.

mod adam;
mod kernels;
mod tape;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use tape::{Tape, Var};

use std::fmt;

/// Scalar element type of a tensor. Implemented for `f32` and `f64`.
pub trait Element:
    num_traits::Float + num_traits::NumAssign + fmt::Debug + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Element for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Dimension sizes, canonical image layout `[channels, height, width]`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Shape(pub Vec<usize>);

impl Shape {
    pub fn scalar() -> Self {
        Shape(vec![1])
    }

    pub fn chw(c: usize, h: usize, w: usize) -> Self {
        Shape(vec![c, h, w])
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// Interprets the shape as `[C, H, W]`.
    pub fn as_chw(&self) -> Result<(usize, usize, usize), TensorError> {
        match self.0.as_slice() {
            &[c, h, w] => Ok((c, h, w)),
            _ => Err(TensorError::Rank {
                expected: 3,
                got: self.0.len(),
            }),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// A plain dense tensor. Gradients live here after [`Tape::backward`]
/// when `requires_grad` is set.
#[derive(Clone, Debug)]
pub struct Tensor<E: Element> {
    pub shape: Shape,
    pub data: Vec<E>,
    pub requires_grad: bool,
    pub grad: Option<Vec<E>>,
}

impl<E: Element> Tensor<E> {
    pub fn new(shape: Shape, data: Vec<E>) -> Result<Self, TensorError> {
        if shape.numel() != data.len() {
            return Err(TensorError::DataLength {
                shape: shape.clone(),
                len: data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = shape.numel();
        Tensor {
            shape,
            data: vec![E::zero(); n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: Shape, v: E) -> Self {
        let n = shape.numel();
        Tensor {
            shape,
            data: vec![v; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: E) -> Self {
        Tensor {
            shape: Shape::scalar(),
            data: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

#[derive(thiserror::Error, Debug)]
pub enum TensorError {
    #[error("shape {shape} does not match data length {len}")]
    DataLength { shape: Shape, len: usize },
    #[error("expected rank {expected}, got rank {got}")]
    Rank { expected: usize, got: usize },
    #[error("shape mismatch: {left} vs {right} in {op}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("conv2d: input has {input_channels} channels but kernel expects {kernel_channels}")]
    ChannelMismatch {
        input_channels: usize,
        kernel_channels: usize,
    },
    #[error("conv2d: kernel size {k} must be odd")]
    EvenKernel { k: usize },
    #[error("conv2d: stride {stride} unsupported (must be 1 or 2)")]
    BadStride { stride: usize },
    #[error("conv2d: spatial size {h}x{w} smaller than kernel {k}")]
    InputTooSmall { h: usize, w: usize, k: usize },
    #[error("upsample_nearest: factor {factor} unsupported (must be 2)")]
    BadUpsampleFactor { factor: usize },
    #[error("leaky_relu: slope {slope} outside (0, 1)")]
    BadSlope { slope: f64 },
    #[error("backward requires a scalar loss, got shape {shape}")]
    NonScalarLoss { shape: Shape },
    #[error("backward called twice on the same tape without reset")]
    DoubleBackward,
    #[error("crop window ({y0},{x0})+{h}x{w} exceeds input {ih}x{iw}")]
    BadCrop {
        y0: usize,
        x0: usize,
        h: usize,
        w: usize,
        ih: usize,
        iw: usize,
    },
    #[error("adam_step: parameter has {param} elements but gradient has {grad}")]
    AdamShapeMismatch { param: usize, grad: usize },
}
