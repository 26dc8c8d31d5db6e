//! Spatial-channel context entropy model.
//!
//! The latent is split into channel chunks, and every chunk into checkerboard
//! anchors `(r + c)` even and non-anchors. Coding units run in the order
//! `(1, anchor), (1, non-anchor), (2, anchor), ...`; inside a unit symbols go
//! channel-major, then row-major over the unit's positions.

mod schedule;

pub use schedule::{run_schedule, unit_symbols, ScheduleOutput, UnitCoder, UnitTrace};

use std::ops::Range;

use crate::block::{channel_mix_sequence, BlockParams, ChannelMixParams};
use crate::error::{Error, Result};
use crate::tensor::{conv2d, linear, Real, Tensor};
use crate::transforms::layout::{aggregation_width, PART_NAMES, SPATIAL_CONTEXT_KERNEL};
use crate::transforms::{checkerboard_tap, load_block, load_channel_mix, ModelConfig, WeightStore};

pub const SIGMA_MIN: f64 = 0.04;
pub const SIGMA_MAX: f64 = 256.0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChunkPlan {
    counts: Vec<usize>,
}

impl ChunkPlan {
    pub fn new(counts: Vec<usize>, latent_channels: usize) -> Result<Self> {
        if counts.is_empty() || counts.contains(&0) {
            return Err(Error::ConfigMismatch(format!("chunk plan {counts:?} has an empty chunk")));
        }
        let sum: usize = counts.iter().sum();
        if sum != latent_channels {
            return Err(Error::ConfigMismatch(format!(
                "chunk plan {counts:?} sums to {sum}, expected {latent_channels}"
            )));
        }
        Ok(ChunkPlan { counts })
    }

    /// `{16, 16, 32, 64, M - 128}`.
    pub fn for_latent(m: usize) -> Result<Self> {
        Self::new(crate::transforms::default_chunks(m), m)
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.counts
            .iter()
            .map(|&c| {
                start += c;
                start - c..start
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Part {
    Anchor,
    NonAnchor,
}

impl Part {
    pub fn index(self) -> usize {
        match self {
            Part::Anchor => 0,
            Part::NonAnchor => 1,
        }
    }

    pub fn contains(self, r: usize, c: usize) -> bool {
        is_anchor(r, c) == (self == Part::Anchor)
    }
}

pub fn is_anchor(r: usize, c: usize) -> bool {
    (r + c).is_multiple_of(2)
}

/// Row-major flat indices of the positions in `part` on an `h x w` grid.
pub fn part_positions(h: usize, w: usize, part: Part) -> Vec<usize> {
    (0..h * w).filter(|&i| part.contains(i / w, i % w)).collect()
}

fn masked<F: Real>(t: &Tensor<F>, keep: Part) -> Result<Tensor<F>> {
    let (_, h, w) = t.dims3("checkerboard")?;
    let plane = h * w;
    Ok(Tensor::from_fn(t.shape(), |i| {
        let p = i % plane;
        if keep.contains(p / w, p % w) {
            t.data()[i]
        } else {
            F::zero()
        }
    }))
}

/// Complementary views: anchors with non-anchors zeroed, and the reverse.
pub fn checkerboard_split<F: Real>(t: &Tensor<F>) -> Result<(Tensor<F>, Tensor<F>)> {
    Ok((masked(t, Part::Anchor)?, masked(t, Part::NonAnchor)?))
}

pub fn checkerboard_merge<F: Real>(anchors: &Tensor<F>, non_anchors: &Tensor<F>) -> Result<Tensor<F>> {
    let (_, h, w) = anchors.dims3("checkerboard_merge")?;
    if anchors.shape() != non_anchors.shape() {
        return Err(Error::shape("checkerboard_merge", "views differ in shape"));
    }
    let plane = h * w;
    Ok(Tensor::from_fn(anchors.shape(), |i| {
        let p = i % plane;
        if is_anchor(p / w, p % w) {
            anchors.data()[i]
        } else {
            non_anchors.data()[i]
        }
    }))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodingUnit {
    /// Zero-based chunk index.
    pub chunk: usize,
    pub part: Part,
    pub channels: Range<usize>,
}

pub fn schedule(plan: &ChunkPlan) -> Vec<CodingUnit> {
    plan.ranges()
        .into_iter()
        .enumerate()
        .flat_map(|(chunk, channels)| {
            [Part::Anchor, Part::NonAnchor].map(|part| CodingUnit { chunk, part, channels: channels.clone() })
        })
        .collect()
}

/// Per-symbol Gaussian parameters of one unit, indexed `[channel * n + i]`
/// where `i` runs over the unit's positions.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams<F = f32> {
    pub mu: Vec<F>,
    pub sigma: Vec<F>,
    pub channels: usize,
    pub positions: Vec<usize>,
}

/// `exp` of the log-scale clamped to `[ln 0.04, ln 256]`; the bounds are returned exactly.
pub fn sigma_from_log_scale<F: Real>(ls: F) -> F {
    let lo = F::lit(SIGMA_MIN.ln());
    let hi = F::lit(SIGMA_MAX.ln());
    if ls.is_nan() || ls <= lo {
        F::lit(SIGMA_MIN)
    } else if ls >= hi {
        F::lit(SIGMA_MAX)
    } else {
        ls.exp()
    }
}

/// Symbol `round(y - μ)` (ties away from zero) and reconstruction `μ + symbol`.
pub fn quantize_shifted<F: Real>(y: F, mu: F) -> (i64, F) {
    let s = (y - mu).round();
    (s.as_f64() as i64, mu + s)
}

pub fn quantize_shifted_tensor<F: Real>(y: &Tensor<F>, mu: &Tensor<F>) -> Result<(Vec<i64>, Tensor<F>)> {
    if y.shape() != mu.shape() {
        return Err(Error::shape("quantize_shifted", "y and mu differ in shape"));
    }
    let (symbols, values): (Vec<i64>, Vec<F>) =
        y.data().iter().zip(mu.data()).map(|(&y, &m)| quantize_shifted(y, m)).unzip();
    Ok((symbols, Tensor::from_vec(y.shape(), values)?))
}

#[derive(Clone, Debug)]
pub struct ChannelContextParams<F = f32> {
    /// `(width, previous channels)`
    pub proj_weight: Tensor<F>,
    pub proj_bias: Vec<F>,
    pub blocks: Vec<BlockParams<F>>,
}

#[derive(Clone, Debug)]
pub struct ChunkParams<F = f32> {
    pub channels: usize,
    /// `(2c, c, 5, 5)` with non-anchor-reading taps zero.
    pub spatial: Tensor<F>,
    pub channel: Option<ChannelContextParams<F>>,
    pub mixes: Vec<ChannelMixParams<F>>,
    /// `[anchor, non-anchor]` heads, each `(2c, D)` weight and `2c` bias.
    pub heads: [(Tensor<F>, Vec<F>); 2],
}

/// Zero every tap that would read a non-anchor from a non-anchor site.
pub fn mask_spatial_kernel<F: Real>(k: &Tensor<F>) -> Tensor<F> {
    let ks = SPATIAL_CONTEXT_KERNEL;
    Tensor::from_fn(k.shape(), |i| {
        let tap = i % (ks * ks);
        if checkerboard_tap(tap / ks, tap % ks) {
            k.data()[i]
        } else {
            F::zero()
        }
    })
}

/// Masked 5x5 context from decoded anchors; all zero for the anchor pass.
pub fn spatial_context<F: Real>(anchors: &Tensor<F>, kernel: &Tensor<F>, part: Part) -> Result<Tensor<F>> {
    let (c, h, w) = anchors.dims3("spatial_context")?;
    let ks = SPATIAL_CONTEXT_KERNEL;
    if kernel.shape() != [2 * c, c, ks, ks] {
        return Err(Error::shape(
            "spatial_context",
            format!("kernel {:?} does not fit {c} channels", kernel.shape()),
        ));
    }
    if part == Part::Anchor {
        return Ok(Tensor::zeros(&[2 * c, h, w]));
    }
    conv2d(&masked(anchors, Part::Anchor)?, &mask_spatial_kernel(kernel), None, 1, ks / 2)
}

/// Context from fully decoded earlier chunks; zeros when there are none.
pub fn channel_context<F: Real>(
    decoded: Option<&Tensor<F>>,
    params: Option<&ChannelContextParams<F>>,
    width: usize,
    h: usize,
    w: usize,
) -> Result<Tensor<F>> {
    match (decoded, params) {
        (None, _) => Ok(Tensor::zeros(&[width, h, w])),
        (Some(prev), Some(p)) => {
            let (_, ph, pw) = prev.dims3("channel_context")?;
            if (ph, pw) != (h, w) {
                return Err(Error::shape("channel_context", "decoded chunks misaligned"));
            }
            let proj = linear(&prev.to_sequence()?, &p.proj_weight, Some(&p.proj_bias))?;
            let mut x = Tensor::from_sequence(&proj, h, w)?;
            for b in &p.blocks {
                x = b.forward(&x)?;
            }
            Ok(x)
        }
        (Some(_), None) => Err(Error::InvalidArgument(
            "first chunk has no channel-context parameters".into(),
        )),
    }
}

/// Fuse the three contexts at `positions` into Gaussian parameters.
pub fn aggregate_params<F: Real>(
    sp: &Tensor<F>,
    ch: &Tensor<F>,
    hp: &Tensor<F>,
    chunk: &ChunkParams<F>,
    part: Part,
    positions: &[usize],
) -> Result<GaussianParams<F>> {
    const OP: &str = "aggregate_params";
    let (csp, h, w) = sp.dims3(OP)?;
    let mut width = csp;
    for t in [ch, hp] {
        let (c, th, tw) = t.dims3(OP)?;
        if (th, tw) != (h, w) {
            return Err(Error::shape(OP, "contexts are not spatially aligned"));
        }
        width += c;
    }
    let (head_w, head_b) = &chunk.heads[part.index()];
    let c = chunk.channels;
    if head_w.shape() != [2 * c, width] || csp != 2 * c {
        return Err(Error::shape(
            OP,
            format!("context width {width} does not fit head {:?}", head_w.shape()),
        ));
    }
    let plane = h * w;
    if let Some(&p) = positions.iter().find(|&&p| p >= plane) {
        return Err(Error::shape(OP, format!("position {p} outside {h}x{w}")));
    }
    let n = positions.len();
    let mut tokens = Vec::with_capacity(n * width);
    for &p in positions {
        for t in [sp, ch, hp] {
            tokens.extend(t.data().iter().skip(p).step_by(plane));
        }
    }
    let mut x = Tensor::from_vec(&[n, width], tokens)?;
    for mix in &chunk.mixes {
        let delta = channel_mix_sequence(&x, mix)?;
        x.add_assign(&delta)?;
    }
    let out = linear(&x, head_w, Some(head_b))?;
    let mut mu = vec![F::zero(); c * n];
    let mut sigma = vec![F::zero(); c * n];
    for (i, row) in out.data().chunks_exact(2 * c).enumerate() {
        for ch in 0..c {
            mu[ch * n + i] = row[ch];
            sigma[ch * n + i] = sigma_from_log_scale(row[c + ch]);
        }
    }
    Ok(GaussianParams { mu, sigma, channels: c, positions: positions.to_vec() })
}

/// Entropy-model parameters in working precision `F`.
#[derive(Clone, Debug)]
pub struct EntropyModel<F = f32> {
    pub plan: ChunkPlan,
    pub context_width: usize,
    pub latent_channels: usize,
    pub chunks: Vec<ChunkParams<F>>,
}

impl<F: Real> EntropyModel<F> {
    pub fn load(w: &WeightStore) -> Result<Self> {
        let cfg: &ModelConfig = w.config();
        let plan = ChunkPlan::new(cfg.chunks.clone(), cfg.latent_channels)?;
        let ks = SPATIAL_CONTEXT_KERNEL;
        let width = cfg.context_width;
        let mut chunks = Vec::with_capacity(plan.len());
        let mut prev = 0;
        for (k, &c) in plan.counts().iter().enumerate() {
            let p = format!("entropy.chunk{k}");
            let spatial = mask_spatial_kernel(&w.fetch(&format!("{p}.spatial.weight"), &[2 * c, c, ks, ks])?);
            let channel = if k == 0 {
                None
            } else {
                let blocks = (0..cfg.context_blocks)
                    .map(|j| load_block(w, &format!("{p}.channel.block{j}"), width, cfg.hidden_ratio * width))
                    .collect::<Result<_>>()?;
                Some(ChannelContextParams {
                    proj_weight: w.fetch(&format!("{p}.channel.proj.weight"), &[width, prev])?,
                    proj_bias: w.fetch_vec(&format!("{p}.channel.proj.bias"), width)?,
                    blocks,
                })
            };
            let d = aggregation_width(cfg, c);
            let mixes = (0..cfg.aggregation_layers)
                .map(|j| load_channel_mix(w, &format!("{p}.agg.mix{j}"), d, cfg.aggregation_ratio * d, false))
                .collect::<Result<_>>()?;
            let head = |part: &str| -> Result<(Tensor<F>, Vec<F>)> {
                Ok((
                    w.fetch(&format!("{p}.agg.head.{part}.weight"), &[2 * c, d])?,
                    w.fetch_vec(&format!("{p}.agg.head.{part}.bias"), 2 * c)?,
                ))
            };
            let heads = [head(PART_NAMES[0])?, head(PART_NAMES[1])?];
            chunks.push(ChunkParams { channels: c, spatial, channel, mixes, heads });
            prev += c;
        }
        Ok(EntropyModel { plan, context_width: width, latent_channels: cfg.latent_channels, chunks })
    }

    pub fn schedule(&self) -> Vec<CodingUnit> {
        schedule(&self.plan)
    }
}
