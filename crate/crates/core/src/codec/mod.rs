//! Discretized-Gaussian probability models, 16-bit quantized CDFs and a
//! byte-oriented range coder.

mod prior;
mod range;

pub use prior::{decode_hyper, encode_hyper, FactorizedPrior, HyperCode};
pub use range::{decode, encode, RangeDecoder, RangeEncoder};

use crate::entropy::{SIGMA_MAX, SIGMA_MIN};
use crate::error::{Error, Result};

pub const SYMBOL_MIN: i64 = -127;
pub const SYMBOL_MAX: i64 = 128;
pub const ALPHABET: usize = (SYMBOL_MAX - SYMBOL_MIN + 1) as usize;
pub const PRECISION_BITS: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION_BITS;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Bounds widened by single-precision rounding: a 32-bit model clamping to
/// `0.04` hands over `0.0399999991`.
const SIGMA_SLACK: f64 = 1e-6;

/// Validate and return `sigma` clamped to the exact bounds.
fn check_params(mu: f64, sigma: f64) -> Result<f64> {
    if !(SIGMA_MIN * (1.0 - SIGMA_SLACK)..=SIGMA_MAX * (1.0 + SIGMA_SLACK)).contains(&sigma) {
        return Err(Error::InvalidArgument(format!(
            "sigma {sigma} outside [{SIGMA_MIN}, {SIGMA_MAX}]"
        )));
    }
    if !mu.is_finite() {
        return Err(Error::InvalidArgument(format!("mean {mu} is not finite")));
    }
    Ok(sigma.clamp(SIGMA_MIN, SIGMA_MAX))
}

/// Probability mass of `[s - 0.5, s + 0.5)` under `N(mu, sigma^2)`; the two
/// end symbols of the alphabet take the tails.
pub fn gaussian_pmf(symbol: i64, mu: f64, sigma: f64) -> Result<f64> {
    let sigma = check_params(mu, sigma)?;
    if !(SYMBOL_MIN..=SYMBOL_MAX).contains(&symbol) {
        return Ok(0.0);
    }
    let lo = (symbol as f64 - mu - 0.5) / sigma;
    let hi = (symbol as f64 - mu + 0.5) / sigma;
    let first = symbol == SYMBOL_MIN;
    let last = symbol == SYMBOL_MAX;
    // Subtract within whichever tail keeps precision.
    let p = if symbol as f64 >= mu {
        let at_least_lo = if first { 1.0 } else { normal_cdf(-lo) };
        let at_least_hi = if last { 0.0 } else { normal_cdf(-hi) };
        at_least_lo - at_least_hi
    } else {
        let below_hi = if last { 1.0 } else { normal_cdf(hi) };
        let below_lo = if first { 0.0 } else { normal_cdf(lo) };
        below_hi - below_lo
    };
    Ok(p.max(0.0))
}

/// Cumulative frequency table over the alphabet; `cum[i]` is the total of
/// all symbols below `SYMBOL_MIN + i`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct QuantizedCdf {
    cum: Vec<u32>,
}

impl QuantizedCdf {
    pub fn from_frequencies(freqs: &[u32]) -> Result<Self> {
        if freqs.len() != ALPHABET || freqs.contains(&0) {
            return Err(Error::InvalidArgument("frequencies must cover the alphabet, each at least 1".into()));
        }
        let mut cum = Vec::with_capacity(ALPHABET + 1);
        let mut acc = 0u32;
        cum.push(0);
        for &f in freqs {
            acc += f;
            cum.push(acc);
        }
        if acc != TOTAL {
            return Err(Error::InvalidArgument(format!("frequencies total {acc}, expected {TOTAL}")));
        }
        Ok(QuantizedCdf { cum })
    }

    pub fn cumulative(&self) -> &[u32] {
        &self.cum
    }

    fn index(symbol: i64) -> Result<usize> {
        if (SYMBOL_MIN..=SYMBOL_MAX).contains(&symbol) {
            Ok((symbol - SYMBOL_MIN) as usize)
        } else {
            Err(Error::InvalidArgument(format!(
                "symbol {symbol} outside [{SYMBOL_MIN}, {SYMBOL_MAX}]"
            )))
        }
    }

    /// `(cumulative low, frequency)` of `symbol`.
    pub fn interval(&self, symbol: i64) -> Result<(u32, u32)> {
        let i = Self::index(symbol)?;
        Ok((self.cum[i], self.cum[i + 1] - self.cum[i]))
    }

    pub fn frequency(&self, symbol: i64) -> Result<u32> {
        Ok(self.interval(symbol)?.1)
    }

    /// Symbol whose interval contains `target < TOTAL`.
    pub fn lookup(&self, target: u32) -> (i64, u32, u32) {
        let i = self.cum.partition_point(|&c| c <= target) - 1;
        (i as i64 + SYMBOL_MIN, self.cum[i], self.cum[i + 1] - self.cum[i])
    }

    /// Cost of `symbol` in bits under the quantized table.
    pub fn bits(&self, symbol: i64) -> Result<f64> {
        let f = self.frequency(symbol)?;
        Ok(PRECISION_BITS as f64 - (f as f64).log2())
    }
}

/// Quantize the discretized Gaussian to a table totalling exactly `2^16`.
pub fn build_cdf(mu: f64, sigma: f64) -> Result<QuantizedCdf> {
    let sigma = check_params(mu, sigma)?;
    // Boundary `j` separates symbol `j - 1` from symbol `j`.
    let boundary = |j: usize| -> f64 {
        if j == 0 {
            0.0
        } else if j == ALPHABET {
            1.0
        } else {
            normal_cdf((SYMBOL_MIN as f64 + j as f64 - 0.5 - mu) / sigma)
        }
    };
    let mut probs = [0f64; ALPHABET];
    let mut prev = boundary(0);
    for (i, p) in probs.iter_mut().enumerate() {
        let next = boundary(i + 1);
        *p = (next - prev).max(0.0);
        prev = next;
    }
    quantize_probabilities(&probs)
}

/// Each symbol gets `1 + floor(p * (2^16 - 256))`; the leftover units go to
/// the largest fractional parts, lower symbols first on ties.
pub fn quantize_probabilities(probs: &[f64]) -> Result<QuantizedCdf> {
    if probs.len() != ALPHABET || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidArgument("probabilities must be finite, non-negative, one per symbol".into()));
    }
    let spare = (TOTAL - ALPHABET as u32) as f64;
    let mut freqs = [0u32; ALPHABET];
    let mut fracs = [0f64; ALPHABET];
    let mut used = 0u32;
    for (i, &p) in probs.iter().enumerate() {
        let scaled = (p * spare).min(spare);
        let whole = scaled.floor();
        freqs[i] = 1 + whole as u32;
        fracs[i] = scaled - whole;
        used += freqs[i];
    }
    let mut order: Vec<usize> = (0..ALPHABET).collect();
    order.sort_by(|&a, &b| fracs[b].total_cmp(&fracs[a]).then(a.cmp(&b)));
    let mut k = 0;
    while used < TOTAL {
        freqs[order[k % ALPHABET]] += 1;
        used += 1;
        k += 1;
    }
    while used > TOTAL {
        let top = (0..ALPHABET).max_by_key(|&i| (freqs[i], std::cmp::Reverse(i))).expect("nonempty");
        freqs[top] -= 1;
        used -= 1;
    }
    QuantizedCdf::from_frequencies(&freqs)
}

/// Ideal code length under the quantized tables.
pub fn estimate_rate(symbols: &[i64], cdfs: &[QuantizedCdf]) -> Result<f64> {
    if symbols.len() != cdfs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} symbols but {} tables",
            symbols.len(),
            cdfs.len()
        )));
    }
    // Fixed-point accumulation keeps the total independent of summation order.
    let mut acc: u128 = 0;
    for (&s, c) in symbols.iter().zip(cdfs) {
        acc += (c.bits(s)? * RATE_SCALE).round() as u128;
    }
    Ok(acc as f64 / RATE_SCALE)
}

const RATE_SCALE: f64 = (1u64 << 32) as f64;

#[cfg(test)]
mod tests;
