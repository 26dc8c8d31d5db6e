//! The Bi-RWKV block: Omni-Shift, Spatial-Mix, Channel-Mix and their
//! pre-norm residual composition.
//!
//! ```text
//! f1  = f  + SpatialMix(f)
//! out = f1 + ChannelMix(f1)
//! ```

use crate::error::{Error, Result};
use crate::tensor::{
    depthwise_conv2d, layer_norm, linear, sigmoid_scalar, squared_relu, Real, Tensor,
};
use crate::wkv::{biwkv_scan, AttentionParams};

pub const LN_EPS: f64 = 1e-5;
pub const SHIFT_KERNEL: usize = 5;

/// Training-time form of the Omni-Shift layer: an identity branch plus
/// 1x1, 3x3 and 5x5 depthwise branches, each with a per-channel scale.
#[derive(Clone, Debug)]
pub struct OmniShiftBranches<F = f32> {
    pub identity: Vec<F>,
    pub scale1: Vec<F>,
    pub kernel1: Vec<F>,
    pub scale3: Vec<F>,
    /// `(C, 1, 3, 3)`
    pub kernel3: Tensor<F>,
    pub scale5: Vec<F>,
    /// `(C, 1, 5, 5)`
    pub kernel5: Tensor<F>,
}

impl<F: Real> OmniShiftBranches<F> {
    pub fn channels(&self) -> usize {
        self.identity.len()
    }

    fn validate(&self) -> Result<usize> {
        let c = self.channels();
        let lens = [
            self.scale1.len(),
            self.kernel1.len(),
            self.scale3.len(),
            self.scale5.len(),
        ];
        if lens.iter().any(|&l| l != c)
            || self.kernel3.shape() != [c, 1, 3, 3]
            || self.kernel5.shape() != [c, 1, 5, 5]
        {
            return Err(Error::shape(
                "omni_shift",
                format!("branch extents inconsistent with {c} channels"),
            ));
        }
        Ok(c)
    }

    /// Collapse the branches into one 5x5 depthwise kernel.
    pub fn merge(&self) -> Result<Tensor<F>> {
        let c = self.validate()?;
        let mut out = Tensor::zeros(&[c, 1, 5, 5]);
        let k3 = self.kernel3.data();
        let k5 = self.kernel5.data();
        for (ch, merged) in out.data_mut().chunks_exact_mut(25).enumerate() {
            for (slot, &v) in merged.iter_mut().zip(&k5[ch * 25..(ch + 1) * 25]) {
                *slot = self.scale5[ch] * v;
            }
            for ky in 0..3 {
                for kx in 0..3 {
                    let tap = &mut merged[(ky + 1) * 5 + kx + 1];
                    *tap = *tap + self.scale3[ch] * k3[ch * 9 + ky * 3 + kx];
                }
            }
            merged[12] = merged[12] + self.scale1[ch] * self.kernel1[ch] + self.identity[ch];
        }
        Ok(out)
    }

    /// Run every branch separately and sum the results.
    pub fn apply_branches(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let c = self.validate()?;
        let (xc, h, w) = x.dims3("omni_shift")?;
        if xc != c {
            return Err(Error::shape(
                "omni_shift",
                format!("input has {xc} channels, shift has {c}"),
            ));
        }
        let scaled = |scale: &[F], k: &Tensor<F>| {
            let per = k.len() / c;
            Tensor::from_fn(k.shape(), |i| scale[i / per] * k.data()[i])
        };
        let k1 = Tensor::from_fn(&[c, 1, 1, 1], |i| self.scale1[i] * self.kernel1[i]);
        let mut out = depthwise_conv2d(x, &scaled(&self.scale5, &self.kernel5), 2)?;
        out.add_assign(&depthwise_conv2d(x, &scaled(&self.scale3, &self.kernel3), 1)?)?;
        out.add_assign(&depthwise_conv2d(x, &k1, 0)?)?;
        let plane = h * w;
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v + self.identity[i / plane] * x.data()[i];
        }
        Ok(out)
    }
}

pub fn omni_shift_merge<F: Real>(p: &OmniShiftBranches<F>) -> Result<Tensor<F>> {
    p.merge()
}

/// Apply a merged `(C, 1, 5, 5)` shift kernel to a `(T, C)` sequence laid out on an `h x w` grid.
fn shift_sequence<F: Real>(x: &Tensor<F>, kernel: &Tensor<F>, h: usize, w: usize) -> Result<Tensor<F>> {
    let grid = Tensor::from_sequence(x, h, w)?;
    depthwise_conv2d(&grid, kernel, SHIFT_KERNEL / 2)?.to_sequence()
}

fn check_square<F: Real>(m: &Tensor<F>, rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.shape() != [rows, cols] {
        return Err(Error::shape(
            "birwkv",
            format!("{what} is {:?}, expected [{rows}, {cols}]", m.shape()),
        ));
    }
    Ok(())
}

fn check_vec<F>(v: &[F], len: usize, what: &str) -> Result<()> {
    if v.len() != len {
        return Err(Error::shape(
            "birwkv",
            format!("{what} has length {}, expected {len}", v.len()),
        ));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct SpatialMixParams<F = f32> {
    pub ln_gamma: Vec<F>,
    pub ln_beta: Vec<F>,
    /// Merged Omni-Shift kernel `(C, 1, 5, 5)`.
    pub shift: Tensor<F>,
    pub w_r: Tensor<F>,
    pub w_k: Tensor<F>,
    pub w_v: Tensor<F>,
    pub attention: AttentionParams<F>,
    pub w_o: Tensor<F>,
}

impl<F: Real> SpatialMixParams<F> {
    pub fn channels(&self) -> usize {
        self.ln_gamma.len()
    }

    pub fn validate(&self) -> Result<usize> {
        let c = self.channels();
        check_vec(&self.ln_beta, c, "spatial ln_beta")?;
        if self.shift.shape() != [c, 1, SHIFT_KERNEL, SHIFT_KERNEL] {
            return Err(Error::shape("birwkv", "spatial shift kernel extents"));
        }
        for (m, what) in [(&self.w_r, "w_r"), (&self.w_k, "w_k"), (&self.w_v, "w_v"), (&self.w_o, "w_o")] {
            check_square(m, c, c, what)?;
        }
        check_vec(&self.attention.decay, c, "decay")?;
        check_vec(&self.attention.bonus, c, "bonus")?;
        Ok(c)
    }
}

/// Channel-Mix parameters. `shift` is `None` for the 1x1-receptive-field
/// variant used by the entropy parameter network.
#[derive(Clone, Debug)]
pub struct ChannelMixParams<F = f32> {
    pub ln_gamma: Vec<F>,
    pub ln_beta: Vec<F>,
    pub shift: Option<Tensor<F>>,
    pub w_r: Tensor<F>,
    /// `(hidden, C)`
    pub w_k: Tensor<F>,
    /// `(C, hidden)`
    pub w_v: Tensor<F>,
}

impl<F: Real> ChannelMixParams<F> {
    pub fn channels(&self) -> usize {
        self.ln_gamma.len()
    }

    pub fn hidden(&self) -> usize {
        self.w_k.shape().first().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<usize> {
        let c = self.channels();
        let hidden = self.hidden();
        check_vec(&self.ln_beta, c, "channel ln_beta")?;
        if let Some(s) = &self.shift {
            if s.shape() != [c, 1, SHIFT_KERNEL, SHIFT_KERNEL] {
                return Err(Error::shape("birwkv", "channel shift kernel extents"));
            }
        }
        if hidden < c {
            return Err(Error::shape(
                "birwkv",
                format!("hidden width {hidden} below channel width {c}"),
            ));
        }
        check_square(&self.w_r, c, c, "w_r")?;
        check_square(&self.w_k, hidden, c, "w_k")?;
        check_square(&self.w_v, c, hidden, "w_v")?;
        Ok(c)
    }
}

fn check_input<F: Real>(f: &Tensor<F>, c: usize, op: &'static str) -> Result<(usize, usize)> {
    let (fc, h, w) = f.dims3(op)?;
    if fc != c {
        return Err(Error::shape(
            op,
            format!("input has {fc} channels, parameters expect {c}"),
        ));
    }
    Ok((h, w))
}

fn gate<F: Real>(receptance: &Tensor<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
    receptance.zip_map(x, "gate", |r, v| sigmoid_scalar(r) * v)
}

/// Global token mixing through bidirectional WKV attention.
pub fn spatial_mix<F: Real>(f: &Tensor<F>, p: &SpatialMixParams<F>) -> Result<Tensor<F>> {
    let c = p.validate()?;
    let (h, w) = check_input(f, c, "spatial_mix")?;
    let x = f.to_sequence()?;
    let xn = layer_norm(&x, &p.ln_gamma, &p.ln_beta, F::lit(LN_EPS))?;
    let xs = shift_sequence(&xn, &p.shift, h, w)?;
    let r = linear(&xs, &p.w_r, None)?;
    let k = linear(&xs, &p.w_k, None)?;
    let v = linear(&xs, &p.w_v, None)?;
    let wkv = biwkv_scan(&k, &v, &p.attention)?;
    let o = linear(&gate(&r, &wkv)?, &p.w_o, None)?;
    Tensor::from_sequence(&o, h, w)
}

fn channel_mix_tokens<F: Real>(xs: &Tensor<F>, p: &ChannelMixParams<F>) -> Result<Tensor<F>> {
    let r = linear(xs, &p.w_r, None)?;
    let k = linear(xs, &p.w_k, None)?;
    let v = linear(&squared_relu(&k), &p.w_v, None)?;
    gate(&r, &v)
}

/// Per-token channel MLP with squared-ReLU hidden layer and sigmoid gate.
pub fn channel_mix<F: Real>(f: &Tensor<F>, p: &ChannelMixParams<F>) -> Result<Tensor<F>> {
    let c = p.validate()?;
    let (h, w) = check_input(f, c, "channel_mix")?;
    let x = f.to_sequence()?;
    let xn = layer_norm(&x, &p.ln_gamma, &p.ln_beta, F::lit(LN_EPS))?;
    let xs = match &p.shift {
        Some(kernel) => shift_sequence(&xn, kernel, h, w)?,
        None => xn,
    };
    Tensor::from_sequence(&channel_mix_tokens(&xs, p)?, h, w)
}

/// Channel-Mix without Omni-Shift over a bare `(T, C)` token set.
pub fn channel_mix_sequence<F: Real>(x: &Tensor<F>, p: &ChannelMixParams<F>) -> Result<Tensor<F>> {
    let c = p.validate()?;
    if p.shift.is_some() {
        return Err(Error::InvalidArgument(
            "channel_mix_sequence needs a shift-free Channel-Mix".into(),
        ));
    }
    let (_, xc) = x.dims2("channel_mix_sequence")?;
    if xc != c {
        return Err(Error::shape(
            "channel_mix_sequence",
            format!("input has {xc} channels, parameters expect {c}"),
        ));
    }
    let xn = layer_norm(x, &p.ln_gamma, &p.ln_beta, F::lit(LN_EPS))?;
    channel_mix_tokens(&xn, p)
}

#[derive(Clone, Debug)]
pub struct BlockParams<F = f32> {
    pub spatial: SpatialMixParams<F>,
    pub channel: ChannelMixParams<F>,
}

impl<F: Real> BlockParams<F> {
    pub fn channels(&self) -> usize {
        self.spatial.channels()
    }
}

pub fn birwkv_block<F: Real>(
    f: &Tensor<F>,
    spatial: &SpatialMixParams<F>,
    channel: &ChannelMixParams<F>,
) -> Result<Tensor<F>> {
    if spatial.channels() != channel.channels() {
        return Err(Error::shape(
            "birwkv_block",
            format!(
                "spatial width {} != channel width {}",
                spatial.channels(),
                channel.channels()
            ),
        ));
    }
    let mut f1 = spatial_mix(f, spatial)?;
    f1.add_assign(f)?;
    let mut out = channel_mix(&f1, channel)?;
    out.add_assign(&f1)?;
    Ok(out)
}

impl<F: Real> BlockParams<F> {
    pub fn forward(&self, f: &Tensor<F>) -> Result<Tensor<F>> {
        birwkv_block(f, &self.spatial, &self.channel)
    }
}
