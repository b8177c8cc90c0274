//! Dense n-dimensional tensors with reverse-mode differentiation over the
//! layer set the capture network needs: 3D convolution and its transpose,
//! 3D max-pooling, fully-connected layers, elementwise nonlinearities,
//! mean-combine, reshape, and MSE.
//!
//! Operations are generic over the scalar: `f64` for gradient verification,
//! `f32` for production training. Spatial tensors are laid out row-major as
//! `[depth, height, width, channels]` with an optional leading batch axis.

mod gradcheck;
mod ops;
mod param;
mod tape;

pub use gradcheck::{check_gradients, seeded_tensor, GradCheckReport};
pub use param::{ParamId, ParamSet, Parameter};
pub use tape::{NodeGrads, NodeId, Tape};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("requested deconvolution output shape {requested:?} is not consistent with input spatial {input:?}, stride {stride}")]
    InconsistentOutputShape {
        requested: [usize; 3],
        input: [usize; 3],
        stride: usize,
    },

    #[error("backward requires a scalar loss node, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

/// Scalar element type for tensors. `f64` in test mode, `f32` in production.
pub trait Scalar:
    num_traits::Float + std::fmt::Debug + std::fmt::Display + Default + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

/// Zero-padding behavior for (de)convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Output spatial size is `ceil(input / stride)`; zeros are padded
    /// symmetrically (extra zero at the high side when odd).
    Same,
    /// No padding; output spatial size is `(input - k) / stride + 1`.
    Valid,
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, TensorError> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(TensorError::ShapeMismatch(format!(
                "shape {shape:?} expects {expect} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// The single value of a rank-0/length-1 tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() requires a one-element tensor");
        self.data[0]
    }

    /// Same data, new shape. Element count must be preserved.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self, TensorError> {
        Tensor::from_vec(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts element type (used at the f32 checkpoint boundary).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Interprets a rank-4 `[D,H,W,C]` or rank-5 `[B,D,H,W,C]` shape as a
/// batched volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct VolumeDims {
    pub batch: usize,
    pub spatial: [usize; 3],
    pub channels: usize,
    pub batched: bool,
}

impl VolumeDims {
    pub fn parse(shape: &[usize], what: &str) -> Result<Self, TensorError> {
        match *shape {
            [d, h, w, c] => Ok(VolumeDims {
                batch: 1,
                spatial: [d, h, w],
                channels: c,
                batched: false,
            }),
            [b, d, h, w, c] => Ok(VolumeDims {
                batch: b,
                spatial: [d, h, w],
                channels: c,
                batched: true,
            }),
            _ => Err(TensorError::ShapeMismatch(format!(
                "{what} must be rank 4 [D,H,W,C] or rank 5 [B,D,H,W,C], got {shape:?}"
            ))),
        }
    }

    pub fn to_shape(self, spatial: [usize; 3], channels: usize) -> Vec<usize> {
        let [d, h, w] = spatial;
        if self.batched {
            vec![self.batch, d, h, w, channels]
        } else {
            vec![d, h, w, channels]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reshape_preserves_row_major_order() {
        // element 7 of a flat 216-vector lands at [0,1,1,0] in a 6x6x6x1 grid
        let flat: Vec<f64> = (0..216).map(|i| i as f64).collect();
        let t = Tensor::from_vec(&[216], flat).unwrap();
        let cube = t.reshaped(&[6, 6, 6, 1]).unwrap();
        let idx = ((0 * 6 + 1) * 6 + 1) * 1 + 0;
        assert_eq!(cube.data()[idx], 7.0);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn volume_dims_parses_both_ranks() {
        let v = VolumeDims::parse(&[4, 5, 6, 2], "x").unwrap();
        assert_eq!((v.batch, v.spatial, v.channels), (1, [4, 5, 6], 2));
        let v = VolumeDims::parse(&[3, 4, 5, 6, 2], "x").unwrap();
        assert_eq!((v.batch, v.spatial, v.channels), (3, [4, 5, 6], 2));
        assert!(VolumeDims::parse(&[3, 3], "x").is_err());
    }
}
