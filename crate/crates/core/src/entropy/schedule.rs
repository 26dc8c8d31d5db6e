use super::{
    aggregate_params, channel_context, spatial_context, CodingUnit, EntropyModel, GaussianParams, Part,
};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// One side of the coding loop. Encoders turn the latent into symbols under
/// `params`; decoders read them back from a stream.
pub trait UnitCoder<F: Real> {
    fn code_unit(&mut self, index: usize, unit: &CodingUnit, params: &GaussianParams<F>) -> Result<Vec<i64>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnitTrace<F = f32> {
    pub unit: CodingUnit,
    pub params: GaussianParams<F>,
    pub symbols: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleOutput<F = f32> {
    pub y_hat: Tensor<F>,
    pub traces: Vec<UnitTrace<F>>,
}

/// Walk every coding unit in order, computing contexts from the decoded
/// prefix only. Encoder and decoder run this same function.
pub fn run_schedule<F: Real, C: UnitCoder<F>>(
    model: &EntropyModel<F>,
    phi_hp: &Tensor<F>,
    coder: &mut C,
) -> Result<ScheduleOutput<F>> {
    let (hc, h, w) = phi_hp.dims3("run_schedule")?;
    let m = model.latent_channels;
    if hc != 2 * m {
        return Err(Error::shape(
            "run_schedule",
            format!("hyperprior context has {hc} channels, expected {}", 2 * m),
        ));
    }
    let plane = h * w;
    let mut y_hat = Tensor::zeros(&[m, h, w]);
    let mut traces = Vec::with_capacity(2 * model.plan.len());
    let mut index = 0;
    for (k, range) in model.plan.ranges().into_iter().enumerate() {
        let chunk = &model.chunks[k];
        let prev = if k == 0 { None } else { Some(y_hat.channel_slice(0..range.start)?) };
        let ch_ctx = channel_context(prev.as_ref(), chunk.channel.as_ref(), model.context_width, h, w)?;
        for part in [Part::Anchor, Part::NonAnchor] {
            let unit = CodingUnit { chunk: k, part, channels: range.clone() };
            let current = y_hat.channel_slice(range.clone())?;
            let sp = spatial_context(&current, &chunk.spatial, part)?;
            let positions = super::part_positions(h, w, part);
            let params = aggregate_params(&sp, &ch_ctx, phi_hp, chunk, part, &positions)?;
            let symbols = coder.code_unit(index, &unit, &params)?;
            let n = positions.len();
            if symbols.len() != range.len() * n {
                return Err(Error::Corrupt(format!(
                    "unit {index} produced {} symbols, expected {}",
                    symbols.len(),
                    range.len() * n
                )));
            }
            let data = y_hat.data_mut();
            for (ci, ch) in range.clone().enumerate() {
                for (i, &p) in positions.iter().enumerate() {
                    let j = ci * n + i;
                    data[ch * plane + p] = params.mu[j] + F::lit(symbols[j] as f64);
                }
            }
            traces.push(UnitTrace { unit, params, symbols });
            index += 1;
        }
    }
    Ok(ScheduleOutput { y_hat, traces })
}

/// Encoder-side symbols of one unit: `round(y - μ)` clamped to `[lo, hi]`.
pub fn unit_symbols<F: Real>(
    y: &Tensor<F>,
    unit: &CodingUnit,
    params: &GaussianParams<F>,
    lo: i64,
    hi: i64,
) -> Result<Vec<i64>> {
    let (_, h, w) = y.dims3("unit_symbols")?;
    let plane = h * w;
    let n = params.positions.len();
    let mut out = Vec::with_capacity(unit.channels.len() * n);
    for (ci, ch) in unit.channels.clone().enumerate() {
        for (i, &p) in params.positions.iter().enumerate() {
            let (s, _) = super::quantize_shifted(y.data()[ch * plane + p], params.mu[ci * n + i]);
            out.push(s.clamp(lo, hi));
        }
    }
    Ok(out)
}
