//! Canonical parameter names and shapes for a [`ModelConfig`].

use super::config::ModelConfig;
use crate::block::SHIFT_KERNEL;

pub const SPATIAL_CONTEXT_KERNEL: usize = 5;
/// Scale applied to block output projections at initialization.
pub const OUTPUT_PROJECTION_SCALE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Zero-mean uniform with the given standard deviation.
    Uniform { std: f64 },
    /// Uniform, with spatial-context taps that would read non-anchors forced to zero.
    Checkerboard { std: f64 },
    Decay,
    Bonus,
    /// Random Omni-Shift branches merged to a single kernel.
    OmniShift,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv { cin: usize, cout: usize, k: usize, stride: usize },
    Deconv { cin: usize, cout: usize, k: usize, stride: usize },
    Block { channels: usize, hidden: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub prefix: String,
    pub kind: LayerKind,
}

fn layer(prefix: String, kind: LayerKind) -> LayerSpec {
    LayerSpec { prefix, kind }
}

pub fn analysis_layout(cfg: &ModelConfig) -> Vec<LayerSpec> {
    let mut out = Vec::new();
    let mut cin = 3;
    for (s, (&width, &blocks)) in cfg.stage_widths().iter().zip(&cfg.stage_blocks).enumerate() {
        let k = cfg.main_kernel;
        out.push(layer(format!("g_a.down{s}"), LayerKind::Conv { cin, cout: width, k, stride: 2 }));
        for j in 0..blocks {
            let kind = LayerKind::Block { channels: width, hidden: cfg.hidden_ratio * width };
            out.push(layer(format!("g_a.stage{s}.block{j}"), kind));
        }
        cin = width;
    }
    out
}

pub fn synthesis_layout(cfg: &ModelConfig) -> Vec<LayerSpec> {
    let widths = cfg.stage_widths();
    let mut out = Vec::new();
    for s in 0..4 {
        let width = widths[3 - s];
        let cout = if s == 3 { 3 } else { widths[2 - s] };
        for j in 0..cfg.stage_blocks[3 - s] {
            let kind = LayerKind::Block { channels: width, hidden: cfg.hidden_ratio * width };
            out.push(layer(format!("g_s.stage{s}.block{j}"), kind));
        }
        let k = cfg.main_kernel;
        out.push(layer(format!("g_s.up{s}"), LayerKind::Deconv { cin: width, cout, k, stride: 2 }));
    }
    out
}

fn hyper_blocks(out: &mut Vec<LayerSpec>, cfg: &ModelConfig, net: &str, stage: usize) {
    let n = cfg.hyper_channels;
    for j in 0..cfg.hyper_blocks {
        let kind = LayerKind::Block { channels: n, hidden: cfg.hidden_ratio * n };
        out.push(layer(format!("{net}.stage{stage}.block{j}"), kind));
    }
}

pub fn hyper_analysis_layout(cfg: &ModelConfig) -> Vec<LayerSpec> {
    let (m, n, k) = (cfg.latent_channels, cfg.hyper_channels, cfg.hyper_kernel);
    let mut out = vec![layer("h_a.conv0".into(), LayerKind::Conv { cin: m, cout: n, k, stride: 1 })];
    hyper_blocks(&mut out, cfg, "h_a", 0);
    out.push(layer("h_a.conv1".into(), LayerKind::Conv { cin: n, cout: n, k, stride: 2 }));
    hyper_blocks(&mut out, cfg, "h_a", 1);
    out.push(layer("h_a.conv2".into(), LayerKind::Conv { cin: n, cout: n, k, stride: 2 }));
    out
}

pub fn hyper_synthesis_layout(cfg: &ModelConfig) -> Vec<LayerSpec> {
    let (m, n, k) = (cfg.latent_channels, cfg.hyper_channels, cfg.hyper_kernel);
    let mut out = vec![layer("h_s.up0".into(), LayerKind::Deconv { cin: n, cout: n, k, stride: 2 })];
    hyper_blocks(&mut out, cfg, "h_s", 0);
    out.push(layer("h_s.up1".into(), LayerKind::Deconv { cin: n, cout: n, k, stride: 2 }));
    hyper_blocks(&mut out, cfg, "h_s", 1);
    out.push(layer("h_s.out".into(), LayerKind::Conv { cin: n, cout: 2 * m, k, stride: 1 }));
    out
}

fn push(out: &mut Vec<ParamSpec>, name: String, shape: &[usize], init: Init) {
    out.push(ParamSpec { name, shape: shape.to_vec(), init });
}

fn unit(fan_in: usize) -> Init {
    Init::Uniform { std: 1.0 / (fan_in.max(1) as f64).sqrt() }
}

fn small(fan_in: usize) -> Init {
    Init::Uniform { std: OUTPUT_PROJECTION_SCALE / (fan_in.max(1) as f64).sqrt() }
}

fn ln_specs(out: &mut Vec<ParamSpec>, prefix: &str, c: usize) {
    push(out, format!("{prefix}.ln_gamma"), &[c], Init::Ones);
    push(out, format!("{prefix}.ln_beta"), &[c], Init::Zeros);
}

/// Channel-Mix parameters; `shift` adds the Omni-Shift kernel.
pub fn channel_mix_specs(out: &mut Vec<ParamSpec>, prefix: &str, c: usize, hidden: usize, shift: bool) {
    ln_specs(out, prefix, c);
    if shift {
        push(out, format!("{prefix}.shift"), &[c, 1, SHIFT_KERNEL, SHIFT_KERNEL], Init::OmniShift);
    }
    push(out, format!("{prefix}.w_r"), &[c, c], unit(c));
    push(out, format!("{prefix}.w_k"), &[hidden, c], unit(c));
    push(out, format!("{prefix}.w_v"), &[c, hidden], small(hidden));
}

pub fn block_specs(out: &mut Vec<ParamSpec>, prefix: &str, c: usize, hidden: usize) {
    let sp = format!("{prefix}.spatial");
    ln_specs(out, &sp, c);
    push(out, format!("{sp}.shift"), &[c, 1, SHIFT_KERNEL, SHIFT_KERNEL], Init::OmniShift);
    for m in ["w_r", "w_k", "w_v"] {
        push(out, format!("{sp}.{m}"), &[c, c], unit(c));
    }
    push(out, format!("{sp}.decay"), &[c], Init::Decay);
    push(out, format!("{sp}.bonus"), &[c], Init::Bonus);
    push(out, format!("{sp}.w_o"), &[c, c], small(c));
    channel_mix_specs(out, &format!("{prefix}.channel"), c, hidden, true);
}

pub fn layer_specs(out: &mut Vec<ParamSpec>, l: &LayerSpec) {
    let p = &l.prefix;
    match l.kind {
        LayerKind::Conv { cin, cout, k, .. } => {
            push(out, format!("{p}.weight"), &[cout, cin, k, k], unit(cin * k * k));
            push(out, format!("{p}.bias"), &[cout], Init::Zeros);
        }
        LayerKind::Deconv { cin, cout, k, stride } => {
            let fan = (cin * k * k / (stride * stride)).max(1);
            push(out, format!("{p}.weight"), &[cin, cout, k, k], unit(fan));
            push(out, format!("{p}.bias"), &[cout], Init::Zeros);
        }
        LayerKind::Block { channels, hidden } => block_specs(out, p, channels, hidden),
    }
}

/// Width of the concatenated `[spatial, channel, hyperprior]` context for a chunk of `c` channels.
pub fn aggregation_width(cfg: &ModelConfig, c: usize) -> usize {
    2 * c + cfg.context_width + 2 * cfg.latent_channels
}

pub const PART_NAMES: [&str; 2] = ["anchor", "nonanchor"];

pub fn entropy_specs(out: &mut Vec<ParamSpec>, cfg: &ModelConfig) {
    let n = cfg.hyper_channels;
    push(out, "entropy.prior.mean".into(), &[n], Init::Zeros);
    push(out, "entropy.prior.log_scale".into(), &[n], Init::Zeros);
    let w = cfg.context_width;
    let mut prev = 0;
    for (k, &c) in cfg.chunks.iter().enumerate() {
        let p = format!("entropy.chunk{k}");
        let ks = SPATIAL_CONTEXT_KERNEL;
        let fan = c * ks * ks / 2;
        push(
            out,
            format!("{p}.spatial.weight"),
            &[2 * c, c, ks, ks],
            Init::Checkerboard { std: 1.0 / (fan.max(1) as f64).sqrt() },
        );
        if k > 0 {
            push(out, format!("{p}.channel.proj.weight"), &[w, prev], unit(prev));
            push(out, format!("{p}.channel.proj.bias"), &[w], Init::Zeros);
            for j in 0..cfg.context_blocks {
                block_specs(out, &format!("{p}.channel.block{j}"), w, cfg.hidden_ratio * w);
            }
        }
        let d = aggregation_width(cfg, c);
        for j in 0..cfg.aggregation_layers {
            channel_mix_specs(out, &format!("{p}.agg.mix{j}"), d, cfg.aggregation_ratio * d, false);
        }
        for part in PART_NAMES {
            push(out, format!("{p}.agg.head.{part}.weight"), &[2 * c, d], unit(d));
            push(out, format!("{p}.agg.head.{part}.bias"), &[2 * c], Init::Zeros);
        }
        prev += c;
    }
}

/// Every parameter the architecture requires, in a fixed order.
pub fn manifest(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    for l in analysis_layout(cfg)
        .iter()
        .chain(&synthesis_layout(cfg))
        .chain(&hyper_analysis_layout(cfg))
        .chain(&hyper_synthesis_layout(cfg))
    {
        layer_specs(&mut out, l);
    }
    entropy_specs(&mut out, cfg);
    out
}

fn walk(layout: &[LayerSpec], mut h: usize, mut w: usize, out: &mut Vec<(usize, usize, usize)>) -> (usize, usize) {
    for l in layout {
        match l.kind {
            LayerKind::Conv { stride, .. } => {
                h = h.div_ceil(stride);
                w = w.div_ceil(stride);
            }
            LayerKind::Deconv { stride, .. } => {
                h *= stride;
                w *= stride;
            }
            LayerKind::Block { channels, .. } => out.push((h, w, channels)),
        }
    }
    (h, w)
}

/// `(height, width, channels)` of every Bi-RWKV block in the model for an
/// `h x w` image: analysis, synthesis, both hyper networks, then the
/// channel-context blocks.
pub fn block_extents(cfg: &ModelConfig, h: usize, w: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    let (lh, lw) = walk(&analysis_layout(cfg), h, w, &mut out);
    walk(&synthesis_layout(cfg), lh, lw, &mut out);
    let (zh, zw) = walk(&hyper_analysis_layout(cfg), lh, lw, &mut out);
    walk(&hyper_synthesis_layout(cfg), zh, zw, &mut out);
    let context = cfg.chunks.len().saturating_sub(1) * cfg.context_blocks;
    out.extend(std::iter::repeat_n((lh, lw, cfg.context_width), context));
    out
}

pub fn parameter_count(cfg: &ModelConfig) -> usize {
    manifest(cfg).iter().map(ParamSpec::numel).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn names_unique() {
        for cfg in [ModelConfig::default(), ModelConfig::small()] {
            let m = manifest(&cfg);
            let names: BTreeSet<_> = m.iter().map(|p| p.name.as_str()).collect();
            assert_eq!(names.len(), m.len());
        }
    }

    #[test]
    fn stage_structure() {
        let cfg = ModelConfig::default();
        let blocks = |l: &[LayerSpec]| l.iter().filter(|s| matches!(s.kind, LayerKind::Block { .. })).count();
        assert_eq!(blocks(&analysis_layout(&cfg)), 18);
        assert_eq!(blocks(&synthesis_layout(&cfg)), 18);
        assert_eq!(blocks(&hyper_analysis_layout(&cfg)), 2);
        let last = synthesis_layout(&cfg).pop().unwrap();
        assert_eq!(last.kind, LayerKind::Deconv { cin: 96, cout: 3, k: 5, stride: 2 });
        let first = hyper_synthesis_layout(&cfg)[0].clone();
        assert_eq!(first.kind, LayerKind::Deconv { cin: 192, cout: 192, k: 3, stride: 2 });
    }

    #[test]
    fn block_extents_cover_all_blocks() {
        let e = block_extents(&ModelConfig::small(), 64, 64);
        assert_eq!(e.len(), 4 + 4 + 2 + 2 + 3 * 2);
        assert_eq!(e[0], (32, 32, 8));
        assert_eq!(e[3], (4, 4, 32));
        assert_eq!(e[4], (4, 4, 32));
        assert_eq!(e[7], (32, 32, 8));
        assert_eq!(e[8], (4, 4, 16));
        assert_eq!(e[9], (2, 2, 16));
        assert_eq!(e[10], (2, 2, 16));
        assert_eq!(e[11], (4, 4, 16));
        assert_eq!(e[12], (4, 4, 16));
        let full = block_extents(&ModelConfig::default(), 256, 256);
        assert_eq!(full.len(), 18 + 18 + 2 + 2 + 8);
    }

    #[test]
    fn chunk_zero_has_no_channel_context() {
        let m = manifest(&ModelConfig::small());
        assert!(!m.iter().any(|p| p.name.starts_with("entropy.chunk0.channel")));
        let proj = m.iter().find(|p| p.name == "entropy.chunk3.channel.proj.weight").unwrap();
        assert_eq!(proj.shape, vec![16, 16]);
    }
}
