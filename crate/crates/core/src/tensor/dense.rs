use super::gemm::gemm;
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Per-token normalization over the channel axis of a `(T, C)` tensor.
pub fn layer_norm<F: Real>(x: &Tensor<F>, gamma: &[F], beta: &[F], eps: F) -> Result<Tensor<F>> {
    const OP: &str = "layer_norm";
    let (_, c) = x.dims2(OP)?;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape(
            OP,
            format!(
                "gamma/beta lengths {}/{} != channels {c}",
                gamma.len(),
                beta.len()
            ),
        ));
    }
    let inv_c = F::one() / F::from_usize(c.max(1)).unwrap();
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(c.max(1)) {
        let mean = row.iter().copied().sum::<F>() * inv_c;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_c;
        let denom = (var + eps).sqrt();
        // eps == 0 with a constant row: the centered values are exactly zero.
        let scale = if denom > F::zero() { F::one() / denom } else { F::zero() };
        for ((v, &g), &b) in row.iter_mut().zip(gamma).zip(beta) {
            *v = (*v - mean) * scale * g + b;
        }
    }
    Ok(out)
}

/// Per-token affine map: `(T, Cin)` times `weight (Cout, Cin)` transposed, plus `bias`.
pub fn linear<F: Real>(x: &Tensor<F>, weight: &Tensor<F>, bias: Option<&[F]>) -> Result<Tensor<F>> {
    const OP: &str = "linear";
    let (t, cin) = x.dims2(OP)?;
    let (cout, win) = weight.dims2(OP)?;
    if win != cin {
        return Err(Error::shape(
            OP,
            format!("input features {cin} != weight input features {win}"),
        ));
    }
    if let Some(b) = bias {
        if b.len() != cout {
            return Err(Error::shape(
                OP,
                format!("bias length {} != output features {cout}", b.len()),
            ));
        }
    }
    let wd = weight.data();
    let mut wt = vec![F::zero(); cin * cout];
    for o in 0..cout {
        for i in 0..cin {
            wt[i * cout + o] = wd[o * cin + i];
        }
    }
    let mut out = vec![F::zero(); t * cout];
    gemm(x.data(), &wt, &mut out, t, cin, cout);
    if let Some(b) = bias {
        for row in out.chunks_exact_mut(cout.max(1)) {
            for (v, &bv) in row.iter_mut().zip(b) {
                *v = *v + bv;
            }
        }
    }
    Tensor::from_vec(&[t, cout], out)
}

#[inline]
pub fn sigmoid_scalar<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub fn sigmoid<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    x.map(sigmoid_scalar)
}

pub fn squared_relu<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| {
        let r = v.max(F::zero());
        r * r
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_norm_cases() {
        let x = Tensor::<f64>::from_vec(&[1, 2], vec![1.0, 3.0]).unwrap();
        let y = layer_norm(&x, &[1.0, 1.0], &[0.0, 0.0], 0.0).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);

        let c = Tensor::<f32>::full(&[3, 4], 2.5);
        let y = layer_norm(&c, &[1.0; 4], &[0.0; 4], 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));

        let x = Tensor::<f32>::from_fn(&[2, 3], |i| i as f32 * 1.7 - 2.0);
        let beta = [0.5, -1.0, 3.0];
        let y = layer_norm(&x, &[0.0; 3], &beta, 1e-5).unwrap();
        for row in y.data().chunks(3) {
            assert_eq!(row, &beta);
        }
    }

    #[test]
    fn layer_norm_unit_variance() {
        let x = Tensor::<f64>::from_fn(&[5, 16], |i| ((i * 37) % 11) as f64 - 4.0);
        let y = layer_norm(&x, &[1.0; 16], &[0.0; 16], 1e-12).unwrap();
        for row in y.data().chunks(16) {
            let mean: f64 = row.iter().sum::<f64>() / 16.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_small_cases() {
        let x = Tensor::<f32>::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::<f32>::from_vec(&[2, 2], vec![1.0, 1.0, 1.0, -1.0]).unwrap();
        assert_eq!(linear(&x, &w, None).unwrap().data(), &[3.0, -1.0]);

        let eye = Tensor::<f32>::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let x = Tensor::<f32>::from_fn(&[4, 3], |i| i as f32 - 5.5);
        assert_eq!(linear(&x, &eye, Some(&[0.0; 3])).unwrap(), x);
    }

    #[test]
    fn linear_matches_triple_loop() {
        let mut s = 7u64;
        let mut r = move |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            (s >> 40) as f64 / (1u64 << 24) as f64 - 0.5
        };
        let x = Tensor::<f64>::from_fn(&[100, 32], &mut r);
        let w = Tensor::<f64>::from_fn(&[64, 32], &mut r);
        let b: Vec<f64> = (0..64).map(&mut r).collect();
        let y = linear(&x, &w, Some(&b)).unwrap();
        for t in 0..100 {
            for (o, bias) in b.iter().enumerate() {
                let mut acc = 0.0;
                for i in 0..32 {
                    acc += x.data()[t * 32 + i] * w.data()[o * 32 + i];
                }
                assert!((y.data()[t * 64 + o] - (acc + bias)).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn linear_dimension_mismatch() {
        let x = Tensor::<f32>::zeros(&[2, 3]);
        let w = Tensor::<f32>::zeros(&[4, 5]);
        assert!(linear(&x, &w, None).is_err());
    }

    #[test]
    fn activations() {
        assert_eq!(sigmoid_scalar(0.0f32), 0.5);
        let x = Tensor::<f32>::from_vec(&[2], vec![-3.0, 2.0]).unwrap();
        assert_eq!(squared_relu(&x).data(), &[0.0, 4.0]);
        let xs: Vec<f32> = (0..200).map(|i| -8.0 + i as f32 * 0.08).collect();
        let s = sigmoid(&Tensor::from_vec(&[200], xs).unwrap());
        assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(s.data().windows(2).all(|p| p[0] < p[1]));
    }
}
