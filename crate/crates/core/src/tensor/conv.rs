use super::gemm::gemm;
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Upper bound on im2col scratch, in elements.
const SCRATCH_BUDGET: usize = 1 << 21;

pub fn conv2d_output_extent(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    (padded >= k && stride > 0).then(|| (padded - k) / stride + 1)
}

pub fn deconv2d_output_extent(
    input: usize,
    k: usize,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> Option<usize> {
    (input.checked_sub(1)? * stride + k + out_pad).checked_sub(2 * pad)
}

fn kernel_dims<F: Real>(kernel: &Tensor<F>, op: &'static str) -> Result<(usize, usize, usize)> {
    match kernel.shape()[..] {
        [a, b, kh, kw] if kh == kw && kh > 0 => Ok((a, b, kh)),
        _ => Err(Error::shape(
            op,
            format!("kernel must be (A,B,k,k), got {:?}", kernel.shape()),
        )),
    }
}

fn check_bias<F: Real>(bias: Option<&[F]>, channels: usize, op: &'static str) -> Result<()> {
    match bias {
        Some(b) if b.len() != channels => Err(Error::shape(
            op,
            format!("bias length {} != output channels {channels}", b.len()),
        )),
        _ => Ok(()),
    }
}

/// 2-D cross-correlation with zero padding.
///
/// `x` is `(Cin, H, W)`, `kernel` is `(Cout, Cin, k, k)`.
pub fn conv2d<F: Real>(
    x: &Tensor<F>,
    kernel: &Tensor<F>,
    bias: Option<&[F]>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<F>> {
    const OP: &str = "conv2d";
    let (cin, h, w) = x.dims3(OP)?;
    let (cout, kin, k) = kernel_dims(kernel, OP)?;
    if kin != cin {
        return Err(Error::shape(
            OP,
            format!("input channels {cin} != kernel input channels {kin}"),
        ));
    }
    if stride == 0 {
        return Err(Error::shape(OP, "stride must be >= 1"));
    }
    check_bias(bias, cout, OP)?;
    let (oh, ow) = match (
        conv2d_output_extent(h, k, stride, pad),
        conv2d_output_extent(w, k, stride, pad),
    ) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(Error::shape(
                OP,
                format!("kernel {k}x{k} larger than padded input {h}x{w} (pad {pad})"),
            ))
        }
    };

    let taps = cin * k * k;
    let positions = oh * ow;
    let tile = (SCRATCH_BUDGET / taps.max(1)).clamp(1, positions.max(1));
    let mut out = vec![F::zero(); cout * positions];
    let mut cols = vec![F::zero(); taps * tile];
    let mut acc = vec![F::zero(); cout * tile];
    let xd = x.data();

    let mut p0 = 0;
    while p0 < positions {
        let pt = tile.min(positions - p0);
        let cols = &mut cols[..taps * pt];
        for ci in 0..cin {
            let plane = &xd[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((ci * k + ky) * k + kx) * pt..][..pt];
                    for (i, slot) in row.iter_mut().enumerate() {
                        let p = p0 + i;
                        let (oy, ox) = (p / ow, p % ow);
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *slot = if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            plane[iy as usize * w + ix as usize]
                        } else {
                            F::zero()
                        };
                    }
                }
            }
        }
        let acc = &mut acc[..cout * pt];
        gemm(kernel.data(), cols, acc, cout, taps, pt);
        for co in 0..cout {
            out[co * positions + p0..co * positions + p0 + pt]
                .copy_from_slice(&acc[co * pt..(co + 1) * pt]);
        }
        p0 += pt;
    }
    if let Some(b) = bias {
        for (plane, &bv) in out.chunks_exact_mut(positions.max(1)).zip(b) {
            plane.iter_mut().for_each(|v| *v = *v + bv);
        }
    }
    Tensor::from_vec(&[cout, oh, ow], out)
}

/// Transposed convolution, the adjoint of [`conv2d`] for the same kernel,
/// stride and padding.
///
/// `x` is `(Cin, H, W)`, `kernel` is `(Cin, Cout, k, k)`; output extents are
/// `(H - 1) * stride - 2 * pad + k + out_pad`.
pub fn deconv2d<F: Real>(
    x: &Tensor<F>,
    kernel: &Tensor<F>,
    bias: Option<&[F]>,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> Result<Tensor<F>> {
    const OP: &str = "deconv2d";
    let (cin, h, w) = x.dims3(OP)?;
    let (kin, cout, k) = kernel_dims(kernel, OP)?;
    if kin != cin {
        return Err(Error::shape(
            OP,
            format!("input channels {cin} != kernel input channels {kin}"),
        ));
    }
    if stride == 0 {
        return Err(Error::shape(OP, "stride must be >= 1"));
    }
    if h == 0 || w == 0 {
        return Err(Error::shape(OP, "empty input"));
    }
    check_bias(bias, cout, OP)?;
    let (oh, ow) = match (
        deconv2d_output_extent(h, k, stride, pad, out_pad),
        deconv2d_output_extent(w, k, stride, pad, out_pad),
    ) {
        (Some(oh), Some(ow)) if oh > 0 && ow > 0 => (oh, ow),
        _ => return Err(Error::shape(OP, format!("padding {pad} too large for input {h}x{w}"))),
    };

    // Kernel as (Cout*k*k, Cin) so that cols = K^T x.
    let kk = k * k;
    let rows = cout * kk;
    let kd = kernel.data();
    let mut kt = vec![F::zero(); rows * cin];
    for ci in 0..cin {
        for r in 0..rows {
            kt[r * cin + ci] = kd[ci * rows + r];
        }
    }

    let positions = h * w;
    let tile = (SCRATCH_BUDGET / rows.max(1)).clamp(1, positions);
    let mut xt = vec![F::zero(); cin * tile];
    let mut cols = vec![F::zero(); rows * tile];
    let mut out = vec![F::zero(); cout * oh * ow];
    let xd = x.data();

    let mut p0 = 0;
    while p0 < positions {
        let pt = tile.min(positions - p0);
        let xt = &mut xt[..cin * pt];
        for ci in 0..cin {
            xt[ci * pt..(ci + 1) * pt].copy_from_slice(&xd[ci * positions + p0..][..pt]);
        }
        let cols = &mut cols[..rows * pt];
        gemm(&kt, xt, cols, rows, cin, pt);
        for co in 0..cout {
            let plane = &mut out[co * oh * ow..(co + 1) * oh * ow];
            for ky in 0..k {
                for kx in 0..k {
                    let src = &cols[((co * k + ky) * k + kx) * pt..][..pt];
                    for (i, &v) in src.iter().enumerate() {
                        let p = p0 + i;
                        let (iy, ix) = (p / w, p % w);
                        let oy = (iy * stride + ky) as isize - pad as isize;
                        let ox = (ix * stride + kx) as isize - pad as isize;
                        if oy >= 0 && ox >= 0 && (oy as usize) < oh && (ox as usize) < ow {
                            let slot = &mut plane[oy as usize * ow + ox as usize];
                            *slot = *slot + v;
                        }
                    }
                }
            }
        }
        p0 += pt;
    }
    if let Some(b) = bias {
        for (plane, &bv) in out.chunks_exact_mut(oh * ow).zip(b) {
            plane.iter_mut().for_each(|v| *v = *v + bv);
        }
    }
    Tensor::from_vec(&[cout, oh, ow], out)
}

/// Per-channel convolution, stride 1, zero padding `pad`.
///
/// `kernel` is `(C, 1, k, k)`; channel `c` of the output reads only channel `c`.
pub fn depthwise_conv2d<F: Real>(x: &Tensor<F>, kernel: &Tensor<F>, pad: usize) -> Result<Tensor<F>> {
    const OP: &str = "depthwise_conv2d";
    let (c, h, w) = x.dims3(OP)?;
    let (kc, one, k) = kernel_dims(kernel, OP)?;
    if kc != c || one != 1 {
        return Err(Error::shape(
            OP,
            format!("kernel {:?} does not match {c} input channels", kernel.shape()),
        ));
    }
    let (oh, ow) = match (
        conv2d_output_extent(h, k, 1, pad),
        conv2d_output_extent(w, k, 1, pad),
    ) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => return Err(Error::shape(OP, format!("kernel {k}x{k} larger than padded input"))),
    };
    let xd = x.data();
    let kd = kernel.data();
    let mut out = vec![F::zero(); c * oh * ow];
    for ch in 0..c {
        let src = &xd[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        let taps = &kd[ch * k * k..(ch + 1) * k * k];
        for ky in 0..k {
            for kx in 0..k {
                let kv = taps[ky * k + kx];
                // Output columns whose source column ox + kx - pad is in range.
                let x_lo = pad.saturating_sub(kx);
                let x_hi = (w + pad).saturating_sub(kx).min(ow);
                if x_lo >= x_hi {
                    continue;
                }
                for oy in 0..oh {
                    let iy = (oy + ky) as isize - pad as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    let srow = &src[iy as usize * w + x_lo + kx - pad..][..x_hi - x_lo];
                    let drow = &mut dst[oy * ow + x_lo..oy * ow + x_hi];
                    for (d, &s) in drow.iter_mut().zip(srow) {
                        *d = *d + kv * s;
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[c, oh, ow], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: u64) -> impl FnMut(usize) -> f64 {
        let mut s = seed;
        move |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        }
    }

    /// Direct definition with explicit zero padding.
    fn conv_oracle(x: &Tensor<f64>, kern: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let (cin, h, w) = x.dims3("t").unwrap();
        let (cout, _, k, _) = (kern.shape()[0], kern.shape()[1], kern.shape()[2], 0);
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros(&[cout, oh, ow]);
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = 0.0;
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    s += x.data()[(ci * h + iy as usize) * w + ix as usize]
                                        * kern.data()[((co * cin + ci) * k + ky) * k + kx];
                                }
                            }
                        }
                    }
                    out.data_mut()[(co * oh + oy) * ow + ox] = s;
                }
            }
        }
        out
    }

    #[test]
    fn ones_stride_two() {
        let x = Tensor::<f32>::full(&[1, 4, 4], 1.0);
        let k = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &k, None, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[4.0, 6.0, 6.0, 9.0]);
    }

    #[test]
    fn identity_kernel() {
        let x = Tensor::<f32>::from_fn(&[2, 3, 5], |i| i as f32 * 0.5 - 3.0);
        let mut k = Tensor::<f32>::zeros(&[2, 2, 1, 1]);
        k.data_mut()[0] = 1.0;
        k.data_mut()[3] = 1.0;
        assert_eq!(conv2d(&x, &k, None, 1, 0).unwrap(), x);
        assert_eq!(deconv2d(&x, &k, None, 1, 0, 0).unwrap(), x);
    }

    #[test]
    fn analysis_shape() {
        let x = Tensor::<f32>::zeros(&[3, 64, 64]);
        let k = Tensor::<f32>::zeros(&[96, 3, 5, 5]);
        assert_eq!(conv2d(&x, &k, None, 2, 2).unwrap().shape(), &[96, 32, 32]);
    }

    #[test]
    fn synthesis_shape() {
        let x = Tensor::<f32>::zeros(&[320, 16, 16]);
        let k = Tensor::<f32>::zeros(&[320, 256, 5, 5]);
        assert_eq!(deconv2d(&x, &k, None, 2, 2, 1).unwrap().shape(), &[256, 32, 32]);
    }

    #[test]
    fn matches_oracle_with_bias() {
        let mut r = lcg(3);
        let x = Tensor::<f64>::from_fn(&[3, 9, 7], &mut r);
        let k = Tensor::<f64>::from_fn(&[4, 3, 3, 3], &mut r);
        let bias = [0.5, -1.0, 0.25, 2.0];
        for (stride, pad) in [(1, 1), (2, 1), (2, 0), (3, 2)] {
            let got = conv2d(&x, &k, Some(&bias), stride, pad).unwrap();
            let mut want = conv_oracle(&x, &k, stride, pad);
            let plane = want.shape()[1] * want.shape()[2];
            for (i, v) in want.data_mut().iter_mut().enumerate() {
                *v += bias[i / plane];
            }
            assert!(got.max_abs_diff(&want) < 1e-12, "stride {stride} pad {pad}");
        }
    }

    #[test]
    fn tiled_path_matches_oracle() {
        // Enough taps that the scratch tile is smaller than the output plane.
        let mut r = lcg(5);
        let x = Tensor::<f64>::from_fn(&[40, 40, 40], &mut r);
        let k = Tensor::<f64>::from_fn(&[2, 40, 5, 5], &mut r);
        let got = conv2d(&x, &k, None, 1, 2).unwrap();
        assert!(got.max_abs_diff(&conv_oracle(&x, &k, 1, 2)) < 1e-11);
    }

    #[test]
    fn deconv_is_adjoint_of_conv() {
        let mut r = lcg(11);
        // conv: (3,8,8) -> (2,4,4); deconv: (2,4,4) -> (3,8,8)
        let k = Tensor::<f64>::from_fn(&[2, 3, 3, 3], &mut r);
        let big = Tensor::<f64>::from_fn(&[3, 8, 8], &mut r);
        let small = Tensor::<f64>::from_fn(&[2, 4, 4], &mut r);
        let cb = conv2d(&big, &k, None, 2, 1).unwrap();
        let ds = deconv2d(&small, &k, None, 2, 1, 1).unwrap();
        assert_eq!(ds.shape(), big.shape());
        let lhs: f64 = cb.data().iter().zip(small.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = big.data().iter().zip(ds.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-5 * lhs.abs().max(rhs.abs()));
    }

    #[test]
    fn depthwise_identity_and_constant() {
        let x = Tensor::<f32>::from_fn(&[2, 6, 6], |i| (i % 7) as f32);
        let mut delta = Tensor::<f32>::zeros(&[2, 1, 5, 5]);
        delta.data_mut()[12] = 1.0;
        delta.data_mut()[25 + 12] = 1.0;
        assert_eq!(depthwise_conv2d(&x, &delta, 2).unwrap(), x);

        let v = 1.5f32;
        let c = Tensor::<f32>::full(&[1, 7, 7], v);
        let ones = Tensor::<f32>::full(&[1, 1, 5, 5], 1.0);
        let y = depthwise_conv2d(&c, &ones, 2).unwrap();
        assert_eq!(y.data()[3 * 7 + 3], 25.0 * v);
    }

    #[test]
    fn depthwise_matches_brute_force() {
        let mut r = lcg(17);
        let x = Tensor::<f64>::from_fn(&[4, 8, 8], &mut r);
        let k = Tensor::<f64>::from_fn(&[4, 1, 5, 5], &mut r);
        let y = depthwise_conv2d(&x, &k, 2).unwrap();
        for c in 0..4 {
            for oy in 0..8 {
                for ox in 0..8 {
                    let mut s = 0.0;
                    for ky in 0..5 {
                        for kx in 0..5 {
                            let iy = oy as isize + ky as isize - 2;
                            let ix = ox as isize + kx as isize - 2;
                            if (0..8).contains(&iy) && (0..8).contains(&ix) {
                                s += x.data()[(c * 8 + iy as usize) * 8 + ix as usize]
                                    * k.data()[c * 25 + ky * 5 + kx];
                            }
                        }
                    }
                    let got = y.data()[(c * 8 + oy) * 8 + ox];
                    assert!((got - s).abs() <= 1e-6, "c{c} ({oy},{ox})");
                }
            }
        }
    }

    #[test]
    fn depthwise_channel_mismatch_rejected() {
        let x = Tensor::<f32>::zeros(&[3, 4, 4]);
        let k = Tensor::<f32>::zeros(&[2, 1, 5, 5]);
        let err = depthwise_conv2d(&x, &k, 2).unwrap_err();
        assert!(err.to_string().contains("3 input channels"), "{err}");
    }

    #[test]
    fn conv_mismatch_names_dimensions() {
        let x = Tensor::<f32>::zeros(&[4, 4, 4]);
        let k = Tensor::<f32>::zeros(&[1, 3, 3, 3]);
        let err = conv2d(&x, &k, None, 1, 1).unwrap_err().to_string();
        assert!(err.contains("input channels 4") && err.contains("kernel input channels 3"), "{err}");
    }
}
