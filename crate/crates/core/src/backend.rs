//! Op-set abstraction that model code is written against.
//!
//! [`Eager`] evaluates immediately on [`Tensor`]s. A recording implementation
//! (the training tape) implements the same trait so every forward pass is
//! written once and can be differentiated.

use crate::activation::{activation_apply, ActivationKind};
use crate::conv::{conv2d_raw, ConvGeometry};
use crate::error::Result;
use crate::filters::{fixed_filter_valid, FixedKernel};
use crate::resample::nearest_upsample;
use crate::shuffle::{pixel_shuffle, pixel_unshuffle};
use crate::tensor::{self, BinaryOp, Shape, Tensor};

pub trait Backend {
    type Value: Clone;

    /// A non-trainable input.
    fn constant(&mut self, t: Tensor) -> Self::Value;
    /// A trainable parameter. Recording backends key parameters by identity.
    fn param(&mut self, t: &Tensor) -> Self::Value;
    fn shape(&self, v: &Self::Value) -> Shape;

    fn conv2d(
        &mut self,
        x: &Self::Value,
        weight: &Self::Value,
        bias: Option<&Self::Value>,
        geometry: ConvGeometry,
    ) -> Result<Self::Value>;
    fn activation(&mut self, x: &Self::Value, kind: ActivationKind) -> Result<Self::Value>;
    fn pixel_shuffle(&mut self, x: &Self::Value, r: usize) -> Result<Self::Value>;
    fn pixel_unshuffle(&mut self, x: &Self::Value, r: usize) -> Result<Self::Value>;
    fn binary(&mut self, a: &Self::Value, b: &Self::Value, op: BinaryOp) -> Result<Self::Value>;
    fn concat_channels(&mut self, parts: &[Self::Value]) -> Result<Self::Value>;
    fn slice_channels(&mut self, x: &Self::Value, start: usize, len: usize) -> Result<Self::Value>;
    fn pad_zero(&mut self, x: &Self::Value, p: usize) -> Result<Self::Value>;
    fn crop(&mut self, x: &Self::Value, m: usize) -> Result<Self::Value>;
    /// `x * s[c]` with `s` of shape `(1, c, 1, 1)`.
    fn scale_channels(&mut self, x: &Self::Value, scale: &Self::Value) -> Result<Self::Value>;
    /// Unpadded depthwise fixed stencil scaled per channel.
    fn fixed_filter(&mut self, x: &Self::Value, kind: FixedKernel, scale: &Self::Value) -> Result<Self::Value>;
    fn repeat_channels(&mut self, x: &Self::Value, times: usize) -> Result<Self::Value>;
    fn nearest_upsample(&mut self, x: &Self::Value, r: usize) -> Result<Self::Value>;

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.binary(a, b, BinaryOp::Add)
    }

    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.binary(a, b, BinaryOp::Mul)
    }
}

/// Immediate evaluation on owned tensors.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl Backend for Eager {
    type Value = Tensor;

    fn constant(&mut self, t: Tensor) -> Tensor {
        t
    }

    fn param(&mut self, t: &Tensor) -> Tensor {
        t.clone()
    }

    fn shape(&self, v: &Tensor) -> Shape {
        v.shape()
    }

    fn conv2d(&mut self, x: &Tensor, w: &Tensor, b: Option<&Tensor>, g: ConvGeometry) -> Result<Tensor> {
        conv2d_raw(x, w, b, g)
    }

    fn activation(&mut self, x: &Tensor, kind: ActivationKind) -> Result<Tensor> {
        Ok(activation_apply(x, kind))
    }

    fn pixel_shuffle(&mut self, x: &Tensor, r: usize) -> Result<Tensor> {
        pixel_shuffle(x, r)
    }

    fn pixel_unshuffle(&mut self, x: &Tensor, r: usize) -> Result<Tensor> {
        pixel_unshuffle(x, r)
    }

    fn binary(&mut self, a: &Tensor, b: &Tensor, op: BinaryOp) -> Result<Tensor> {
        tensor::elementwise(a, b, op)
    }

    fn concat_channels(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        let refs: Vec<&Tensor> = parts.iter().collect();
        tensor::concat_channels(&refs)
    }

    fn slice_channels(&mut self, x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        tensor::slice_channels(x, start, len)
    }

    fn pad_zero(&mut self, x: &Tensor, p: usize) -> Result<Tensor> {
        Ok(tensor::pad_zero(x, p))
    }

    fn crop(&mut self, x: &Tensor, m: usize) -> Result<Tensor> {
        tensor::crop(x, m)
    }

    fn scale_channels(&mut self, x: &Tensor, scale: &Tensor) -> Result<Tensor> {
        tensor::scale_channels(x, scale)
    }

    fn fixed_filter(&mut self, x: &Tensor, kind: FixedKernel, scale: &Tensor) -> Result<Tensor> {
        fixed_filter_valid(x, kind, scale)
    }

    fn repeat_channels(&mut self, x: &Tensor, times: usize) -> Result<Tensor> {
        tensor::repeat_channels(x, times)
    }

    fn nearest_upsample(&mut self, x: &Tensor, r: usize) -> Result<Tensor> {
        nearest_upsample(x, r)
    }
}
