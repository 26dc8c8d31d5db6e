//! Dense channels-first tensors and the handful of primitives the network needs.
//!
//! Feature maps are `(C, H, W)`, row-major within a channel. Token sequences are
//! `(T, C)` with `T = H * W` flattened row-major over `(H, W)`; [`Tensor::to_sequence`]
//! and [`Tensor::from_sequence`] convert between the two views.
//!
//! Every kernel sums in a fixed loop order, so identical inputs produce
//! bit-identical outputs on a given build and platform.

mod conv;
mod gemm;
mod dense;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};
use crate::hash::Fnv64;

pub use conv::{conv2d, conv2d_output_extent, deconv2d, deconv2d_output_extent, depthwise_conv2d};
pub use dense::{layer_norm, linear, sigmoid, sigmoid_scalar, squared_relu};

/// Floating-point element type. `f32` runs the codec, `f64` runs oracles.
pub trait Real:
    Float + FromPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Raw little-endian bit pattern, for fingerprints.
    fn bits_le(self) -> Vec<u8>;

    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite literal")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("float to f64")
    }
}

impl Real for f32 {
    fn bits_le(self) -> Vec<u8> {
        self.to_bits().to_le_bytes().to_vec()
    }
}

impl Real for f64 {
    fn bits_le(self) -> Vec<u8> {
        self.to_bits().to_le_bytes().to_vec()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F = f32> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} holds {n} values, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> F) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
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

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<F> {
        self.data
    }

    /// `(C, H, W)` extents of a rank-3 tensor.
    pub fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape(
                op,
                format!("expected a (C,H,W) tensor, got shape {:?}", self.shape),
            )),
        }
    }

    /// `(T, C)` extents of a rank-2 tensor.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [t, c] => Ok((t, c)),
            _ => Err(Error::shape(
                op,
                format!("expected a (T,C) tensor, got shape {:?}", self.shape),
            )),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// `(C, H, W)` -> `(H*W, C)`.
    pub fn to_sequence(&self) -> Result<Self> {
        let (c, h, w) = self.dims3("to_sequence")?;
        let t = h * w;
        let mut out = vec![F::zero(); c * t];
        for ch in 0..c {
            let plane = &self.data[ch * t..(ch + 1) * t];
            for (tok, &v) in plane.iter().enumerate() {
                out[tok * c + ch] = v;
            }
        }
        Ok(Tensor {
            shape: vec![t, c],
            data: out,
        })
    }

    /// `(H*W, C)` -> `(C, H, W)`.
    pub fn from_sequence(seq: &Self, h: usize, w: usize) -> Result<Self> {
        let (t, c) = seq.dims2("from_sequence")?;
        if t != h * w {
            return Err(Error::shape(
                "from_sequence",
                format!("sequence length {t} does not match {h}x{w}"),
            ));
        }
        let mut out = vec![F::zero(); c * t];
        for (tok, row) in seq.data.chunks_exact(c.max(1)).enumerate().take(t) {
            for (ch, &v) in row.iter().enumerate() {
                out[ch * t + tok] = v;
            }
        }
        Ok(Tensor {
            shape: vec![c, h, w],
            data: out,
        })
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(F, F) -> F) -> Result<Self> {
        self.same_shape(other, op)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    fn same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                op,
                format!("shape {:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> F {
        self.data.iter().fold(F::zero(), |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> F {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape");
        self.data
            .iter()
            .zip(&other.data)
            .fold(F::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::lit(v.as_f64())).collect(),
        }
    }

    /// Concatenate `(C_i, H, W)` tensors along channels.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
        let (_, h, w) = first.dims3("concat_channels")?;
        let mut c_total = 0;
        let mut data = Vec::new();
        for p in parts {
            let (c, ph, pw) = p.dims3("concat_channels")?;
            if (ph, pw) != (h, w) {
                return Err(Error::shape(
                    "concat_channels",
                    format!("spatial extents {ph}x{pw} vs {h}x{w}"),
                ));
            }
            c_total += c;
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor {
            shape: vec![c_total, h, w],
            data,
        })
    }

    /// Channels `range` of a `(C, H, W)` tensor.
    pub fn channel_slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let (c, h, w) = self.dims3("channel_slice")?;
        if range.end > c || range.start > range.end {
            return Err(Error::shape(
                "channel_slice",
                format!("range {range:?} outside {c} channels"),
            ));
        }
        let plane = h * w;
        Ok(Tensor {
            shape: vec![range.len(), h, w],
            data: self.data[range.start * plane..range.end * plane].to_vec(),
        })
    }

    /// Order-sensitive fingerprint of shape and exact element bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv64::new();
        for &d in &self.shape {
            h.update(&(d as u64).to_le_bytes());
        }
        for &v in &self.data {
            h.update(&v.bits_le());
        }
        h.finish()
    }
}
