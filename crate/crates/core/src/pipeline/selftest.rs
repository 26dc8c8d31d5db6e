//! Built-in oracle suites, runnable from the command line.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{test_pattern, Codec};
use crate::block::OmniShiftBranches;
use crate::codec::{build_cdf, decode, encode};
use crate::entropy::{
    run_schedule, spatial_context, unit_symbols, CodingUnit, EntropyModel, GaussianParams, Part, UnitCoder,
    SIGMA_MAX, SIGMA_MIN,
};
use crate::error::Result;
use crate::tensor::{depthwise_conv2d, Real, Tensor};
use crate::transforms::{ModelConfig, WeightStore};
use crate::wkv::{biwkv_backward, biwkv_reference, biwkv_scan, AttentionParams};

#[derive(Clone, Copy, Debug, Default)]
pub struct SelftestOptions {
    /// Run the kernel suite in 64-bit with a 1e-10 tolerance.
    pub f64: bool,
    /// Flip one byte of the coded symbol stream before decoding.
    pub corrupt: bool,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn suite(name: &'static str, run: impl FnOnce() -> Result<(bool, String)>) -> SuiteResult {
    match run() {
        Ok((passed, detail)) => SuiteResult { name, passed, detail },
        Err(e) => SuiteResult { name, passed: false, detail: format!("error: {e}") },
    }
}

fn uniform<F: Real>(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<F> {
    Tensor::from_fn(shape, |_| F::lit(rng.random_range(lo..hi)))
}

/// Worst scan-vs-reference error, relative to the largest value magnitude.
pub fn kernel_error<F: Real>(instances: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    const TS: [usize; 6] = [1, 2, 3, 17, 64, 256];
    const CS: [usize; 4] = [1, 4, 32, 64];
    let mut worst = 0f64;
    for i in 0..instances {
        let (t, c) = (TS[i % TS.len()], CS[(i / TS.len()) % CS.len()]);
        let k = uniform::<f64>(&[t, c], -3.0, 3.0, rng);
        let v = uniform::<f64>(&[t, c], -1.0, 1.0, rng);
        let p = AttentionParams::new(
            (0..c).map(|_| rng.random_range(-8.0..8.0)).collect(),
            (0..c).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )?;
        let want = biwkv_reference(&k, &v, &p)?;
        let pf = AttentionParams::new(
            p.decay.iter().map(|&x| F::lit(x)).collect(),
            p.bonus.iter().map(|&x| F::lit(x)).collect(),
        )?;
        let got = biwkv_scan(&k.cast::<F>(), &v.cast::<F>(), &pf)?.cast::<f64>();
        worst = worst.max(got.max_abs_diff(&want) / v.max_abs().max(f64::MIN_POSITIVE));
    }
    Ok(worst)
}

/// Worst `‖analytic − numeric‖∞ / ‖numeric‖∞` over all four gradients.
pub fn gradient_error(instances: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let h = 1e-5;
    let mut worst = 0f64;
    for _ in 0..instances {
        let t = rng.random_range(1..=8);
        let c = rng.random_range(1..=4);
        let k = uniform::<f64>(&[t, c], -1.0, 1.0, rng);
        let v = uniform::<f64>(&[t, c], -1.0, 1.0, rng);
        let g = uniform::<f64>(&[t, c], -1.0, 1.0, rng);
        let decay: Vec<f64> = (0..c).map(|_| rng.random_range(-2.0..2.0)).collect();
        let bonus: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |k: &Tensor<f64>, v: &Tensor<f64>, d: &[f64], b: &[f64]| -> Result<f64> {
            let p = AttentionParams::new(d.to_vec(), b.to_vec())?;
            Ok(biwkv_reference(k, v, &p)?.data().iter().zip(g.data()).map(|(a, b)| a * b).sum())
        };
        let grads = biwkv_backward(&k, &v, &AttentionParams::new(decay.clone(), bonus.clone())?, &g)?;
        let mut check = |analytic: &[f64], perturb: &mut dyn FnMut(usize, f64) -> Result<f64>| -> Result<()> {
            let numeric = (0..analytic.len())
                .map(|i| Ok((perturb(i, h)? - perturb(i, -h)?) / (2.0 * h)))
                .collect::<Result<Vec<f64>>>()?;
            let scale = numeric.iter().fold(0f64, |m, x| m.max(x.abs())).max(1e-12);
            let diff = analytic.iter().zip(&numeric).fold(0f64, |m, (a, b)| m.max((a - b).abs()));
            worst = worst.max(diff / scale);
            Ok(())
        };
        check(grads.keys.data(), &mut |i, d| {
            let mut kk = k.clone();
            kk.data_mut()[i] += d;
            loss(&kk, &v, &decay, &bonus)
        })?;
        check(grads.values.data(), &mut |i, d| {
            let mut vv = v.clone();
            vv.data_mut()[i] += d;
            loss(&k, &vv, &decay, &bonus)
        })?;
        check(&grads.decay, &mut |i, d| {
            let mut dd = decay.clone();
            dd[i] += d;
            loss(&k, &v, &dd, &bonus)
        })?;
        check(&grads.bonus, &mut |i, d| {
            let mut bb = bonus.clone();
            bb[i] += d;
            loss(&k, &v, &decay, &bb)
        })?;
    }
    Ok(worst)
}

/// Worst merged-vs-branch difference of the Omni-Shift reparameterization.
pub fn merge_error(instances: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst = 0f64;
    for _ in 0..instances {
        let c = rng.random_range(1..=16);
        let mut v = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f32>>();
        let b = OmniShiftBranches {
            identity: v(c),
            scale1: v(c),
            kernel1: v(c),
            scale3: v(c),
            kernel3: Tensor::from_vec(&[c, 1, 3, 3], v(9 * c))?,
            scale5: v(c),
            kernel5: Tensor::from_vec(&[c, 1, 5, 5], v(25 * c))?,
        };
        let x = uniform::<f32>(&[c, 16, 16], -1.0, 1.0, rng);
        let merged = depthwise_conv2d(&x, &b.merge()?, 2)?;
        worst = worst.max(merged.max_abs_diff(&b.apply_branches(&x)?) as f64);
    }
    Ok(worst)
}

/// Symbol mismatches after an encode/decode round trip.
pub fn codec_mismatches(symbols: usize, corrupt: bool, rng: &mut ChaCha8Rng) -> Result<usize> {
    let mut stream = Vec::with_capacity(symbols);
    let mut cdfs = Vec::with_capacity(symbols);
    for _ in 0..symbols {
        let mu: f64 = rng.random_range(-8.0..8.0);
        let sigma = rng.random_range(SIGMA_MIN..=SIGMA_MAX);
        let s = (mu + sigma * rng.random_range(-2.0..2.0)).round().clamp(-127.0, 128.0) as i64;
        stream.push(s);
        cdfs.push(build_cdf(mu, sigma)?);
    }
    let mut bytes = encode(&stream, &cdfs)?;
    if corrupt && !bytes.is_empty() {
        let i = bytes.len() / 2;
        bytes[i] ^= 0xA5;
    }
    Ok(match decode(&bytes, &cdfs) {
        Ok(back) => back.iter().zip(&stream).filter(|(a, b)| a != b).count(),
        Err(_) => symbols.max(1),
    })
}

struct Quantize<'a> {
    y: &'a Tensor<f64>,
}

impl UnitCoder<f64> for Quantize<'_> {
    fn code_unit(&mut self, _: usize, unit: &CodingUnit, params: &GaussianParams<f64>) -> Result<Vec<i64>> {
        unit_symbols(self.y, unit, params, -127, 128)
    }
}

/// Count of earlier-unit parameter changes caused by perturbing later units,
/// plus non-zero anchor-pass spatial contexts.
pub fn causality_violations(seed: u64) -> Result<usize> {
    let store = WeightStore::init(&ModelConfig::small(), seed)?;
    let model = EntropyModel::<f64>::load(&store)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (4, 4);
    let y = uniform::<f64>(&[32, h, w], -4.0, 4.0, &mut rng);
    let hp = uniform::<f64>(&[64, h, w], -1.0, 1.0, &mut rng);
    let base = run_schedule(&model, &hp, &mut Quantize { y: &y })?;
    let mut violations = 0;
    for (u, trace) in base.traces.iter().enumerate() {
        let mut perturbed = y.clone();
        for ch in trace.unit.channels.clone() {
            for &p in &trace.params.positions {
                perturbed.data_mut()[ch * h * w + p] += 5.0;
            }
        }
        let out = run_schedule(&model, &hp, &mut Quantize { y: &perturbed })?;
        violations += (0..=u).filter(|&e| out.traces[e].params != base.traces[e].params).count();
    }
    for chunk in &model.chunks {
        let anchors = uniform::<f64>(&[chunk.channels, h, w], -1.0, 1.0, &mut rng);
        let ctx = spatial_context(&anchors, &chunk.spatial, Part::Anchor)?;
        violations += ctx.data().iter().filter(|&&v| v != 0.0).count();
    }
    Ok(violations)
}

/// Compress twice and decode once on a reduced model; all artefacts must agree.
pub fn end_to_end_consistent(seed: u64) -> Result<(bool, String)> {
    let store = WeightStore::init(&ModelConfig::small(), seed)?;
    let codec = Codec::<f32>::new(&store)?;
    let img = test_pattern(96, 80, seed);
    let a = codec.compress(&img)?;
    let b = codec.compress(&img)?;
    let dec = codec.decompress(&a.bytes)?;
    let enc_img = codec.reconstruct(&a.y_hat, img.width, img.height)?;
    let same_stream = a.bytes == b.bytes;
    let same_latent = dec.y_hat.fingerprint() == a.y_hat.fingerprint();
    let same_image = dec.image == enc_img;
    let bounded = a.y_hat.max_abs_diff(&a.y) <= 0.5;
    Ok((
        same_stream && same_latent && same_image && bounded,
        format!(
            "stream {same_stream}, latent {same_latent}, image {same_image}, |y^-y| <= 0.5 {bounded}, {} bytes",
            a.bytes.len()
        ),
    ))
}

pub fn selftest(opts: SelftestOptions) -> Vec<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::new();
    out.push(suite("kernel equivalence", || {
        let (err, tol) = if opts.f64 {
            (kernel_error::<f64>(100, &mut rng)?, 1e-10)
        } else {
            (kernel_error::<f32>(100, &mut rng)?, 1e-5)
        };
        Ok((err <= tol, format!("max relative error {err:.3e} (tolerance {tol:e})")))
    }));
    out.push(suite("gradient check", || {
        let err = gradient_error(20, &mut rng)?;
        Ok((err <= 1e-6, format!("max relative error {err:.3e} (tolerance 1e-6)")))
    }));
    out.push(suite("reparameterization merge", || {
        let err = merge_error(10, &mut rng)?;
        Ok((err <= 1e-6, format!("max abs difference {err:.3e} (tolerance 1e-6)")))
    }));
    out.push(suite("codec round trip", || {
        let bad = codec_mismatches(20_000, opts.corrupt, &mut rng)?;
        let note = if opts.corrupt { " with injected corruption" } else { "" };
        Ok((bad == 0, format!("{bad} mismatched symbols of 20000{note}")))
    }));
    out.push(suite("causality probes", || {
        let v = causality_violations(opts.seed)?;
        Ok((v == 0, format!("{v} violations")))
    }));
    out.push(suite("end-to-end determinism", || end_to_end_consistent(opts.seed)));
    out
}
