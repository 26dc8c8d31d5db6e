use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{depthwise_conv2d, Tensor};
use crate::transforms::{block_extents, ModelConfig, SPATIAL_ALIGN};
use crate::wkv::{aft_reference, biwkv_scan, op_count, AttentionParams, Mechanism};

pub const DEFAULT_RESOLUTIONS: [(usize, usize); 5] =
    [(256, 256), (384, 384), (512, 512), (768, 768), (1024, 1024)];

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub width: usize,
    pub height: usize,
    /// Attention op counts summed over every block, one per mechanism.
    pub ops: Vec<u64>,
    /// Seconds for one pass of every block's attention; `None` where no kernel exists.
    pub seconds: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchTable {
    pub mechanisms: Vec<Mechanism>,
    pub rows: Vec<BenchRow>,
    /// Least-squares `(slope, intercept, R^2)` of op count against pixel count.
    pub fits: Vec<(f64, f64, f64)>,
}

/// Ordinary least squares of `ys` on `xs`; R^2 is 1 when `ys` is constant.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0, 1.0);
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (slope, intercept, r2)
}

fn time_mechanism(m: Mechanism, blocks: &[(usize, usize, usize)], rng: &mut ChaCha8Rng) -> Result<Option<f64>> {
    if !matches!(m, Mechanism::Aft | Mechanism::AftShift | Mechanism::BiwkvShift) {
        return Ok(None);
    }
    let mut total = 0.0;
    for &(h, w, c) in blocks {
        let t = h * w;
        let k = Tensor::<f32>::from_fn(&[t, c], |_| rng.random_range(-1.0..1.0));
        let v = Tensor::<f32>::from_fn(&[t, c], |_| rng.random_range(-1.0..1.0));
        let shift = Tensor::<f32>::from_fn(&[c, 1, 5, 5], |_| rng.random_range(-0.2..0.2));
        let params = AttentionParams::new(vec![1.0; c], vec![0.5; c])?;
        let start = Instant::now();
        let shifted = |x: &Tensor<f32>| -> Result<Tensor<f32>> {
            depthwise_conv2d(&Tensor::from_sequence(x, h, w)?, &shift, 2)?.to_sequence()
        };
        let out = match m {
            Mechanism::Aft => aft_reference(&k, &v)?,
            Mechanism::AftShift => aft_reference(&shifted(&k)?, &shifted(&v)?)?,
            _ => biwkv_scan(&shifted(&k)?, &shifted(&v)?, &params)?,
        };
        total += start.elapsed().as_secs_f64();
        std::hint::black_box(out);
    }
    Ok(Some(total))
}

/// Attention cost of the whole model at each resolution, per mechanism.
pub fn bench(
    cfg: &ModelConfig,
    resolutions: &[(usize, usize)],
    mechanisms: &[Mechanism],
    measure: bool,
) -> Result<BenchTable> {
    if mechanisms.is_empty() {
        return Ok(BenchTable { mechanisms: Vec::new(), rows: Vec::new(), fits: Vec::new() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut rows = Vec::with_capacity(resolutions.len());
    for &(w, h) in resolutions {
        if w == 0 || h == 0 || w % SPATIAL_ALIGN != 0 || h % SPATIAL_ALIGN != 0 {
            return Err(Error::InvalidArgument(format!(
                "resolution {w}x{h} is not a multiple of {SPATIAL_ALIGN}"
            )));
        }
        let blocks = block_extents(cfg, h, w);
        let mut ops = Vec::with_capacity(mechanisms.len());
        let mut seconds = Vec::with_capacity(mechanisms.len());
        for &m in mechanisms {
            let mut sum = 0u64;
            for &(bh, bw, c) in &blocks {
                sum += op_count(m, (bh * bw) as u64, c as u64)?;
            }
            ops.push(sum);
            seconds.push(if measure { time_mechanism(m, &blocks, &mut rng)? } else { None });
        }
        rows.push(BenchRow { width: w, height: h, ops, seconds });
    }
    let pixels: Vec<f64> = rows.iter().map(|r| (r.width * r.height) as f64).collect();
    let fits = (0..mechanisms.len())
        .map(|j| {
            let ys: Vec<f64> = rows.iter().map(|r| r.ops[j] as f64).collect();
            linear_fit(&pixels, &ys)
        })
        .collect();
    Ok(BenchTable { mechanisms: mechanisms.to_vec(), rows, fits })
}
