use super::*;
use crate::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Maclaurin series for erf, summed until terms vanish; accurate to ~1e-15 for |x| <= 3.
fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    while term.abs() > 1e-18 * sum.abs().max(1e-300) {
        n += 1.0;
        term *= -x * x / n;
        sum += term / (2.0 * n + 1.0);
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

fn phi_oracle(x: f64) -> f64 {
    0.5 * (1.0 + erf_series(x / 2f64.sqrt()))
}

#[test]
fn pmf_matches_series_oracle() {
    let want = phi_oracle(0.5) - phi_oracle(-0.5);
    assert!((want - 0.382925).abs() < 1e-5);
    assert!((gaussian_pmf(0, 0.0, 1.0).unwrap() - want).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..200 {
        let mu: f64 = rng.random_range(-5.0..5.0);
        let sigma: f64 = rng.random_range(0.5..4.0);
        let s = (mu + rng.random_range(-2.0..2.0) * sigma).round() as i64;
        let oracle = phi_oracle((s as f64 - mu + 0.5) / sigma) - phi_oracle((s as f64 - mu - 0.5) / sigma);
        assert!((gaussian_pmf(s, mu, sigma).unwrap() - oracle).abs() < 1e-12);
    }
}

#[test]
fn pmf_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let mu = rng.random_range(-8.0..8.0);
        let sigma = rng.random_range(0.04..20.0);
        let s = rng.random_range(-126..=126);
        let a = gaussian_pmf(s, mu, sigma).unwrap();
        let b = gaussian_pmf(-s, -mu, sigma).unwrap();
        assert!((a - b).abs() <= 1e-15 + 1e-12 * a);
    }
}

#[test]
fn pmf_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let mu = rng.random_range(-200.0..200.0);
        let sigma = rng.random_range(SIGMA_MIN..SIGMA_MAX);
        let total: f64 = (SYMBOL_MIN..=SYMBOL_MAX).map(|s| gaussian_pmf(s, mu, sigma).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9, "{mu} {sigma} {total}");
    }
}

#[test]
fn pmf_rejects_bad_scale() {
    assert!(gaussian_pmf(0, 0.0, 0.03).is_err());
    assert!(gaussian_pmf(0, 0.0, 257.0).is_err());
    assert!(build_cdf(0.0, f64::NAN).is_err());
}

#[test]
fn single_precision_bounds_accepted() {
    let lo = SIGMA_MIN as f32 as f64;
    let hi = SIGMA_MAX as f32 as f64;
    assert!(lo < SIGMA_MIN);
    assert_eq!(build_cdf(0.3, lo).unwrap(), build_cdf(0.3, SIGMA_MIN).unwrap());
    assert_eq!(build_cdf(0.3, hi).unwrap(), build_cdf(0.3, SIGMA_MAX).unwrap());
}

#[test]
fn spike_keeps_floor() {
    for mu in [-127.0, -3.3, 0.0, 0.5, 128.0] {
        let cdf = build_cdf(mu, SIGMA_MIN).unwrap();
        assert!((SYMBOL_MIN..=SYMBOL_MAX).all(|s| cdf.frequency(s).unwrap() >= 1));
        assert_eq!(*cdf.cumulative().last().unwrap(), TOTAL);
    }
}

#[test]
fn tables_total_and_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let mu = rng.random_range(-150.0..150.0);
        let sigma = rng.random_range(SIGMA_MIN..=SIGMA_MAX);
        let cdf = build_cdf(mu, sigma).unwrap();
        let cum = cdf.cumulative();
        assert_eq!(cum.len(), ALPHABET + 1);
        assert_eq!(cum[0], 0);
        assert_eq!(cum[ALPHABET], TOTAL);
        assert!(cum.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(build_cdf(mu, sigma).unwrap(), cdf);
    }
}

#[test]
fn largest_remainder_tie_break() {
    let base = 1.0 / ALPHABET as f64;
    let delta = 0.5 / (TOTAL - ALPHABET as u32) as f64;
    let mut probs = [base; ALPHABET];
    probs[0] += delta;
    probs[1] -= delta;
    let cdf = quantize_probabilities(&probs).unwrap();
    // 255.5 and 254.5 tie on the remainder; the single leftover unit goes to the lower symbol.
    assert_eq!(cdf.frequency(SYMBOL_MIN).unwrap(), 257);
    assert_eq!(cdf.frequency(SYMBOL_MIN + 1).unwrap(), 255);
    assert_eq!(cdf.frequency(0).unwrap(), 256);
    assert!(quantize_probabilities(&probs[1..]).is_err());
}

fn random_stream(n: usize, seed: u64) -> (Vec<i64>, Vec<QuantizedCdf>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut symbols = Vec::with_capacity(n);
    let mut cdfs = Vec::with_capacity(n);
    for _ in 0..n {
        let mu: f64 = rng.random_range(-8.0..8.0);
        let sigma = rng.random_range(SIGMA_MIN..=SIGMA_MAX);
        let cdf = build_cdf(mu, sigma).unwrap();
        // Draw from the table itself so the stream is typical for its model.
        let (s, _, _) = cdf.lookup(rng.random_range(0..TOTAL));
        symbols.push(s);
        cdfs.push(cdf);
    }
    (symbols, cdfs)
}

#[test]
fn round_trip_large() {
    let (symbols, cdfs) = random_stream(100_000, 4);
    let bytes = encode(&symbols, &cdfs).unwrap();
    assert_eq!(decode(&bytes, &cdfs).unwrap(), symbols);
    assert_eq!(encode(&symbols, &cdfs).unwrap(), bytes);
}

#[test]
fn rate_within_bounds() {
    let (symbols, cdfs) = random_stream(100_000, 5);
    let est = estimate_rate(&symbols, &cdfs).unwrap();
    let actual = 8.0 * encode(&symbols, &cdfs).unwrap().len() as f64;
    assert!(est <= actual && actual <= 1.01 * est + 64.0, "{est} {actual}");
}

#[test]
fn empty_stream_is_flush_only() {
    let bytes = encode(&[], &[]).unwrap();
    assert_eq!(bytes, vec![0; 4]);
    assert!(decode(&bytes, &[]).unwrap().is_empty());
}

#[test]
fn carry_propagation() {
    // Top symbols push `low` towards overflow; runs of 0xFF must be carried through.
    let mut f = [1u32; ALPHABET];
    f[ALPHABET - 1] = TOTAL - (ALPHABET as u32 - 1);
    let skewed = QuantizedCdf::from_frequencies(&f).unwrap();
    let flat = QuantizedCdf::from_frequencies(&[TOTAL / ALPHABET as u32; ALPHABET]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut symbols = Vec::new();
    let mut cdfs = Vec::new();
    for i in 0..50_000 {
        if i % 97 < 90 {
            symbols.push(SYMBOL_MAX);
            cdfs.push(skewed.clone());
        } else {
            symbols.push(rng.random_range(SYMBOL_MIN..=SYMBOL_MAX));
            cdfs.push(flat.clone());
        }
    }
    let mut enc = RangeEncoder::new();
    for (&s, c) in symbols.iter().zip(&cdfs) {
        enc.encode(s, c).unwrap();
    }
    assert!(enc.carries() > 0);
    let bytes = enc.finish();
    assert_eq!(decode(&bytes, &cdfs).unwrap(), symbols);
}

#[test]
fn corrupt_streams_rejected() {
    let (symbols, cdfs) = random_stream(2000, 7);
    let bytes = encode(&symbols, &cdfs).unwrap();
    assert!(matches!(decode(&bytes[..bytes.len() - 3], &cdfs), Err(Error::Corrupt(_))));
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(decode(&long, &cdfs), Err(Error::Corrupt(_))));
    assert!(matches!(decode(&[1, 2], &[]), Err(Error::Corrupt(_))));
}

#[test]
fn out_of_alphabet_rejected() {
    let cdf = build_cdf(0.0, 1.0).unwrap();
    assert!(encode(&[129], std::slice::from_ref(&cdf)).is_err());
    assert!(encode(&[-128], &[cdf]).is_err());
}

#[test]
fn rate_examples() {
    let unit = build_cdf(0.0, 1.0).unwrap();
    let bits = estimate_rate(&[0], std::slice::from_ref(&unit)).unwrap();
    assert!((bits - 1.385).abs() <= 0.01, "{bits}");
    let spike = build_cdf(0.0, SIGMA_MIN).unwrap();
    assert!(estimate_rate(&[0], &[spike]).unwrap() <= 0.01);
    let (symbols, cdfs) = random_stream(500, 8);
    let once = estimate_rate(&symbols, &cdfs).unwrap();
    let twice = estimate_rate(&[symbols.clone(), symbols].concat(), &[cdfs.clone(), cdfs].concat()).unwrap();
    assert_eq!(twice, 2.0 * once);
}

#[test]
fn hyper_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let prior = FactorizedPrior::new(
        (0..6).map(|_| rng.random_range(-2.0..2.0)).collect(),
        (0..6).map(|_| rng.random_range(0.2..5.0)).collect(),
    )
    .unwrap();
    let z = Tensor::<f32>::from_fn(&[6, 3, 5], |_| rng.random_range(-10.0..10.0));
    let code = encode_hyper(&z, &prior).unwrap();
    assert!(code.z_hat.max_abs_diff(&z) <= 0.5);
    let back = decode_hyper::<f32>(&code.bytes, &prior, &[6, 3, 5]).unwrap();
    assert_eq!(back, code.z_hat);
    assert!(decode_hyper::<f32>(&code.bytes, &prior, &[5, 3, 5]).is_err());
    let doubled = Tensor::concat_channels(&[&z, &z]).unwrap();
    let prior2 = FactorizedPrior::new(
        [prior.mu(), prior.mu()].concat(),
        [prior.sigma(), prior.sigma()].concat(),
    )
    .unwrap();
    assert_eq!(encode_hyper(&doubled, &prior2).unwrap().estimated_bits, 2.0 * code.estimated_bits);
    assert_eq!(code.bytes.len(), 88);
}

proptest! {
    #[test]
    fn round_trip_any(seed in any::<u64>(), n in 0usize..400) {
        let (symbols, cdfs) = random_stream(n, seed);
        let bytes = encode(&symbols, &cdfs).unwrap();
        prop_assert_eq!(decode(&bytes, &cdfs).unwrap(), symbols);
    }
}
