use super::{build_cdf, estimate_rate, QuantizedCdf, RangeDecoder, RangeEncoder, SYMBOL_MAX, SYMBOL_MIN};
use crate::entropy::{sigma_from_log_scale, SIGMA_MAX, SIGMA_MIN};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use crate::transforms::WeightStore;

/// Position-independent per-channel Gaussian model for the hyper latent.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorizedPrior {
    mu: Vec<f64>,
    sigma: Vec<f64>,
    cdfs: Vec<QuantizedCdf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HyperCode<F = f32> {
    pub bytes: Vec<u8>,
    pub z_hat: Tensor<F>,
    pub symbols: Vec<i64>,
    pub estimated_bits: f64,
}

impl FactorizedPrior {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(Error::InvalidArgument("prior means and scales differ in length".into()));
        }
        if let Some(s) = sigma.iter().find(|s| !(SIGMA_MIN..=SIGMA_MAX).contains(*s)) {
            return Err(Error::InvalidArgument(format!("prior scale {s} out of bounds")));
        }
        let cdfs = mu.iter().zip(&sigma).map(|(&m, &s)| build_cdf(m, s)).collect::<Result<_>>()?;
        Ok(FactorizedPrior { mu, sigma, cdfs })
    }

    /// Read `entropy.prior.{mean,log_scale}`.
    pub fn load(w: &WeightStore) -> Result<Self> {
        let n = w.config().hyper_channels;
        let mu: Vec<f64> = w.fetch_vec("entropy.prior.mean", n)?;
        let ls: Vec<f64> = w.fetch_vec("entropy.prior.log_scale", n)?;
        Self::new(mu, ls.into_iter().map(sigma_from_log_scale).collect())
    }

    pub fn channels(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn cdf(&self, channel: usize) -> &QuantizedCdf {
        &self.cdfs[channel]
    }

    fn check(&self, shape: &[usize]) -> Result<usize> {
        match shape {
            [c, h, w] if *c == self.channels() => Ok(h * w),
            _ => Err(Error::shape(
                "code_hyper",
                format!("hyper latent {shape:?} does not match {} prior channels", self.channels()),
            )),
        }
    }
}

/// `ẑ = clamp(round(z))`, coded channel by channel in raster order.
pub fn encode_hyper<F: Real>(z: &Tensor<F>, prior: &FactorizedPrior) -> Result<HyperCode<F>> {
    let plane = prior.check(z.shape())?;
    let symbols: Vec<i64> = z
        .data()
        .iter()
        .map(|v| (v.round().as_f64() as i64).clamp(SYMBOL_MIN, SYMBOL_MAX))
        .collect();
    let mut enc = RangeEncoder::new();
    for (i, &s) in symbols.iter().enumerate() {
        enc.encode(s, prior.cdf(i / plane.max(1)))?;
    }
    let cdfs: Vec<QuantizedCdf> = (0..symbols.len()).map(|i| prior.cdf(i / plane.max(1)).clone()).collect();
    let estimated_bits = estimate_rate(&symbols, &cdfs)?;
    let z_hat = Tensor::from_vec(z.shape(), symbols.iter().map(|&s| F::lit(s as f64)).collect())?;
    Ok(HyperCode { bytes: enc.finish(), z_hat, symbols, estimated_bits })
}

pub fn decode_hyper<F: Real>(bytes: &[u8], prior: &FactorizedPrior, shape: &[usize]) -> Result<Tensor<F>> {
    let plane = prior.check(shape)?;
    let n: usize = shape.iter().product();
    let mut dec = RangeDecoder::new(bytes)?;
    let values = (0..n)
        .map(|i| dec.decode(prior.cdf(i / plane.max(1))).map(|s| F::lit(s as f64)))
        .collect::<Result<Vec<F>>>()?;
    dec.finish()?;
    Tensor::from_vec(shape, values)
}
