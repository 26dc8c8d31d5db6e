//! The four nonlinear transforms and their parameters.
//!
//! ```text
//! y = g_a(x)      z = h_a(y)
//! Φ_hp = h_s(ẑ)   x̂ = g_s(ŷ)
//! ```

mod config;
pub mod layout;
mod weights;

pub use config::{default_chunks, ModelConfig};
pub use layout::{block_extents, manifest, parameter_count, ParamSpec};
pub use weights::{checkerboard_tap, WeightStore, WEIGHT_MAGIC, WEIGHT_VERSION};

use crate::block::{BlockParams, ChannelMixParams, SpatialMixParams, SHIFT_KERNEL};
use crate::error::{Error, Result};
use crate::tensor::{conv2d, deconv2d, Real, Tensor};
use crate::wkv::AttentionParams;
use layout::{LayerKind, LayerSpec};

/// Spatial extents handed to [`analysis`] must be multiples of this.
pub const SPATIAL_ALIGN: usize = 64;

pub(crate) fn load_channel_mix<F: Real>(
    w: &WeightStore,
    prefix: &str,
    c: usize,
    hidden: usize,
    shift: bool,
) -> Result<ChannelMixParams<F>> {
    let shift = if shift {
        Some(w.fetch(&format!("{prefix}.shift"), &[c, 1, SHIFT_KERNEL, SHIFT_KERNEL])?)
    } else {
        None
    };
    Ok(ChannelMixParams {
        ln_gamma: w.fetch_vec(&format!("{prefix}.ln_gamma"), c)?,
        ln_beta: w.fetch_vec(&format!("{prefix}.ln_beta"), c)?,
        shift,
        w_r: w.fetch(&format!("{prefix}.w_r"), &[c, c])?,
        w_k: w.fetch(&format!("{prefix}.w_k"), &[hidden, c])?,
        w_v: w.fetch(&format!("{prefix}.w_v"), &[c, hidden])?,
    })
}

pub(crate) fn load_block<F: Real>(
    w: &WeightStore,
    prefix: &str,
    c: usize,
    hidden: usize,
) -> Result<BlockParams<F>> {
    let sp = format!("{prefix}.spatial");
    let get = |m: &str| w.fetch(&format!("{sp}.{m}"), &[c, c]);
    let spatial = SpatialMixParams {
        ln_gamma: w.fetch_vec(&format!("{sp}.ln_gamma"), c)?,
        ln_beta: w.fetch_vec(&format!("{sp}.ln_beta"), c)?,
        shift: w.fetch(&format!("{sp}.shift"), &[c, 1, SHIFT_KERNEL, SHIFT_KERNEL])?,
        w_r: get("w_r")?,
        w_k: get("w_k")?,
        w_v: get("w_v")?,
        attention: AttentionParams::new(
            w.fetch_vec(&format!("{sp}.decay"), c)?,
            w.fetch_vec(&format!("{sp}.bonus"), c)?,
        )?,
        w_o: get("w_o")?,
    };
    let channel = load_channel_mix(w, &format!("{prefix}.channel"), c, hidden, true)?;
    Ok(BlockParams { spatial, channel })
}

#[derive(Clone, Debug)]
pub enum Layer<F = f32> {
    Conv { weight: Tensor<F>, bias: Vec<F>, stride: usize, pad: usize },
    Deconv { weight: Tensor<F>, bias: Vec<F>, stride: usize, pad: usize, out_pad: usize },
    Block(Box<BlockParams<F>>),
}

impl<F: Real> Layer<F> {
    fn load(w: &WeightStore, spec: &LayerSpec) -> Result<Self> {
        let p = &spec.prefix;
        Ok(match spec.kind {
            LayerKind::Conv { cin, cout, k, stride } => Layer::Conv {
                weight: w.fetch(&format!("{p}.weight"), &[cout, cin, k, k])?,
                bias: w.fetch_vec(&format!("{p}.bias"), cout)?,
                stride,
                pad: k / 2,
            },
            LayerKind::Deconv { cin, cout, k, stride } => Layer::Deconv {
                weight: w.fetch(&format!("{p}.weight"), &[cin, cout, k, k])?,
                bias: w.fetch_vec(&format!("{p}.bias"), cout)?,
                stride,
                pad: k / 2,
                out_pad: stride - 1,
            },
            LayerKind::Block { channels, hidden } => Layer::Block(Box::new(load_block(w, p, channels, hidden)?)),
        })
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        match self {
            Layer::Conv { weight, bias, stride, pad } => conv2d(x, weight, Some(bias), *stride, *pad),
            Layer::Deconv { weight, bias, stride, pad, out_pad } => {
                deconv2d(x, weight, Some(bias), *stride, *pad, *out_pad)
            }
            Layer::Block(b) => b.forward(x),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Sequential<F = f32> {
    pub layers: Vec<Layer<F>>,
}

impl<F: Real> Sequential<F> {
    pub fn load(w: &WeightStore, layout: &[LayerSpec]) -> Result<Self> {
        let layers = layout.iter().map(|s| Layer::load(w, s)).collect::<Result<_>>()?;
        Ok(Sequential { layers })
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let mut cur = x.clone();
        for l in &self.layers {
            cur = l.forward(&cur)?;
        }
        Ok(cur)
    }
}

/// All four transforms in working precision `F`.
#[derive(Clone, Debug)]
pub struct Transforms<F = f32> {
    pub config: ModelConfig,
    pub g_a: Sequential<F>,
    pub g_s: Sequential<F>,
    pub h_a: Sequential<F>,
    pub h_s: Sequential<F>,
}

fn expect_channels<F: Real>(t: &Tensor<F>, c: usize, op: &'static str) -> Result<(usize, usize)> {
    let (tc, h, w) = t.dims3(op)?;
    if tc != c {
        return Err(Error::shape(op, format!("expected {c} channels, got {tc}")));
    }
    Ok((h, w))
}

impl<F: Real> Transforms<F> {
    pub fn load(w: &WeightStore) -> Result<Self> {
        let cfg = w.config();
        Ok(Transforms {
            config: cfg.clone(),
            g_a: Sequential::load(w, &layout::analysis_layout(cfg))?,
            g_s: Sequential::load(w, &layout::synthesis_layout(cfg))?,
            h_a: Sequential::load(w, &layout::hyper_analysis_layout(cfg))?,
            h_s: Sequential::load(w, &layout::hyper_synthesis_layout(cfg))?,
        })
    }

    /// `(3, H, W)` in `[0, 1]` to the `(M, H/16, W/16)` latent.
    pub fn analysis(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let (h, w) = expect_channels(x, 3, "analysis")?;
        if h == 0 || w == 0 || h % SPATIAL_ALIGN != 0 || w % SPATIAL_ALIGN != 0 {
            return Err(Error::shape(
                "analysis",
                format!("extents {h}x{w} are not positive multiples of {SPATIAL_ALIGN}"),
            ));
        }
        self.g_a.forward(x)
    }

    /// Latent to image, clamped to `[0, 1]`.
    pub fn synthesis(&self, y_hat: &Tensor<F>) -> Result<Tensor<F>> {
        expect_channels(y_hat, self.config.latent_channels, "synthesis")?;
        let x = self.g_s.forward(y_hat)?;
        Ok(x.map(|v| v.max(F::zero()).min(F::one())))
    }

    pub fn hyper_analysis(&self, y: &Tensor<F>) -> Result<Tensor<F>> {
        let (h, w) = expect_channels(y, self.config.latent_channels, "hyper_analysis")?;
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::shape("hyper_analysis", format!("latent extents {h}x{w} not divisible by 4")));
        }
        self.h_a.forward(y)
    }

    /// `ẑ` to the `(2M, 4h, 4w)` hyperprior context.
    pub fn hyper_synthesis(&self, z_hat: &Tensor<F>) -> Result<Tensor<F>> {
        expect_channels(z_hat, self.config.hyper_channels, "hyper_synthesis")?;
        self.h_s.forward(z_hat)
    }
}

pub fn analysis<F: Real>(x: &Tensor<F>, w: &WeightStore) -> Result<Tensor<F>> {
    Transforms::load(w)?.analysis(x)
}

pub fn synthesis<F: Real>(y_hat: &Tensor<F>, w: &WeightStore) -> Result<Tensor<F>> {
    Transforms::load(w)?.synthesis(y_hat)
}

pub fn hyper_analysis<F: Real>(y: &Tensor<F>, w: &WeightStore) -> Result<Tensor<F>> {
    Transforms::load(w)?.hyper_analysis(y)
}

pub fn hyper_synthesis<F: Real>(z_hat: &Tensor<F>, w: &WeightStore) -> Result<Tensor<F>> {
    Transforms::load(w)?.hyper_synthesis(z_hat)
}

pub fn init_weights(config: &ModelConfig, seed: u64) -> Result<WeightStore> {
    WeightStore::init(config, seed)
}

pub fn save_weights(w: &WeightStore, path: impl AsRef<std::path::Path>) -> Result<()> {
    w.save(path)
}

pub fn load_weights(path: impl AsRef<std::path::Path>) -> Result<WeightStore> {
    WeightStore::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_shapes() {
        let w = WeightStore::init(&ModelConfig::small(), 0).unwrap();
        let t = Transforms::<f32>::load(&w).unwrap();
        let x = Tensor::from_fn(&[3, 64, 128], |i| ((i * 37) % 256) as f32 / 255.0);
        let y = t.analysis(&x).unwrap();
        assert_eq!(y.shape(), &[32, 4, 8]);
        let z = t.hyper_analysis(&y).unwrap();
        assert_eq!(z.shape(), &[16, 1, 2]);
        assert_eq!(t.hyper_synthesis(&z).unwrap().shape(), &[64, 4, 8]);
        let xh = t.synthesis(&y).unwrap();
        assert_eq!(xh.shape(), &[3, 64, 128]);
        assert!(xh.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn unaligned_input_rejected() {
        let w = WeightStore::init(&ModelConfig::small(), 0).unwrap();
        let x = Tensor::<f32>::zeros(&[3, 64, 96]);
        assert!(matches!(analysis(&x, &w), Err(Error::Shape { .. })));
        assert!(synthesis(&Tensor::<f32>::zeros(&[31, 4, 4]), &w).is_err());
    }

    #[test]
    fn zero_weights_give_zero() {
        let w = WeightStore::zeros(&ModelConfig::small()).unwrap();
        let x = Tensor::from_fn(&[3, 64, 64], |i| (i % 7) as f32 / 7.0);
        let y = analysis(&x, &w).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let y = Tensor::full(&[32, 4, 4], 0.7f32);
        assert!(synthesis(&y, &w).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(hyper_analysis(&y, &w).unwrap().data().iter().all(|&v| v == 0.0));
        let z = Tensor::full(&[16, 1, 1], 1.5f32);
        assert!(hyper_synthesis(&z, &w).unwrap().data().iter().all(|&v| v == 0.0));
    }
}
