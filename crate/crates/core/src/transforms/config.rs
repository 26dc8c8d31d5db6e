use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::fnv64;

/// Architecture hyperparameters. Everything that determines parameter
/// shapes lives here so the weight file and bitstream can pin it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Bi-RWKV blocks after each of the four analysis downsamplings.
    pub stage_blocks: [usize; 4],
    /// Widths of the first three analysis stages; the fourth is `latent_channels`.
    pub stage_channels: [usize; 3],
    /// M
    pub latent_channels: usize,
    /// N
    pub hyper_channels: usize,
    /// Channel-Mix hidden width as a multiple of the block width.
    pub hidden_ratio: usize,
    pub main_kernel: usize,
    pub hyper_kernel: usize,
    /// Bi-RWKV blocks per hyper-network stage.
    pub hyper_blocks: usize,
    pub context_width: usize,
    pub context_blocks: usize,
    /// Aggregation hidden width as a multiple of the concatenated context width.
    pub aggregation_ratio: usize,
    pub aggregation_layers: usize,
    /// Channel counts of the latent chunks, coded in order.
    pub chunks: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            stage_blocks: [2, 4, 6, 6],
            stage_channels: [96, 144, 256],
            latent_channels: 320,
            hyper_channels: 192,
            hidden_ratio: 2,
            main_kernel: 5,
            hyper_kernel: 3,
            hyper_blocks: 1,
            context_width: 128,
            context_blocks: 2,
            aggregation_ratio: 1,
            aggregation_layers: 2,
            chunks: default_chunks(320),
        }
    }
}

/// `{16, 16, 32, 64, M - 128}`.
pub fn default_chunks(m: usize) -> Vec<usize> {
    vec![16, 16, 32, 64, m.saturating_sub(128)]
}

const CONFIG_FIELDS: usize = 18;

impl ModelConfig {
    /// A reduced architecture for tests and quick experiments.
    pub fn small() -> Self {
        ModelConfig {
            stage_blocks: [1, 1, 1, 1],
            stage_channels: [8, 12, 16],
            latent_channels: 32,
            hyper_channels: 16,
            context_width: 16,
            chunks: vec![4, 4, 8, 16],
            ..ModelConfig::default()
        }
    }

    /// Widths after each analysis stage.
    pub fn stage_widths(&self) -> [usize; 4] {
        let [c1, c2, c3] = self.stage_channels;
        [c1, c2, c3, self.latent_channels]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigMismatch(msg));
        if self.stage_channels.contains(&0) || self.latent_channels == 0 || self.hyper_channels == 0 {
            return bad("channel widths must be positive".into());
        }
        for (name, k) in [("main_kernel", self.main_kernel), ("hyper_kernel", self.hyper_kernel)] {
            if k % 2 == 0 {
                return bad(format!("{name} must be odd, got {k}"));
            }
        }
        if self.hidden_ratio == 0 || self.aggregation_ratio == 0 {
            return bad("hidden ratios must be at least 1".into());
        }
        if self.context_width == 0 {
            return bad("context_width must be positive".into());
        }
        if self.chunks.is_empty() || self.chunks.contains(&0) {
            return bad(format!("chunk plan {:?} has an empty chunk", self.chunks));
        }
        let sum: usize = self.chunks.iter().sum();
        if sum != self.latent_channels {
            return bad(format!(
                "chunk plan {:?} sums to {sum}, latent has {} channels",
                self.chunks, self.latent_channels
            ));
        }
        Ok(())
    }

    /// Fixed little-endian u32 encoding used by the weight file and the digest.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut fields: Vec<usize> = Vec::with_capacity(CONFIG_FIELDS + self.chunks.len());
        fields.extend(self.stage_blocks);
        fields.extend(self.stage_channels);
        fields.extend([
            self.latent_channels,
            self.hyper_channels,
            self.hidden_ratio,
            self.main_kernel,
            self.hyper_kernel,
            self.hyper_blocks,
            self.context_width,
            self.context_blocks,
            self.aggregation_ratio,
            self.aggregation_layers,
            self.chunks.len(),
        ]);
        fields.extend(&self.chunks);
        fields
            .into_iter()
            .flat_map(|v| (v as u32).to_le_bytes())
            .collect()
    }

    /// Decode from a reader positioned at a config block.
    pub(crate) fn read_from(next: &mut impl FnMut() -> Result<u32>) -> Result<Self> {
        let mut f = [0usize; CONFIG_FIELDS];
        for slot in &mut f {
            *slot = next()? as usize;
        }
        let chunk_count = f[CONFIG_FIELDS - 1];
        if chunk_count > 1 << 16 {
            return Err(Error::Malformed {
                what: "config block",
                detail: format!("{chunk_count} chunks"),
            });
        }
        let chunks = (0..chunk_count)
            .map(|_| next().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelConfig {
            stage_blocks: [f[0], f[1], f[2], f[3]],
            stage_channels: [f[4], f[5], f[6]],
            latent_channels: f[7],
            hyper_channels: f[8],
            hidden_ratio: f[9],
            main_kernel: f[10],
            hyper_kernel: f[11],
            hyper_blocks: f[12],
            context_width: f[13],
            context_blocks: f[14],
            aggregation_ratio: f[15],
            aggregation_layers: f[16],
            chunks,
        })
    }

    pub fn digest(&self) -> u64 {
        fnv64(&self.to_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = ModelConfig::default();
        assert_eq!(c.stage_blocks, [2, 4, 6, 6]);
        assert_eq!(c.stage_widths(), [96, 144, 256, 320]);
        assert_eq!(c.hyper_channels, 192);
        assert_eq!(c.chunks, vec![16, 16, 32, 64, 192]);
        c.validate().unwrap();
        ModelConfig::small().validate().unwrap();
    }

    #[test]
    fn bytes_round_trip() {
        let c = ModelConfig::small();
        let bytes = c.to_bytes();
        let mut words = bytes.chunks(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()));
        let back = ModelConfig::read_from(&mut || Ok(words.next().unwrap())).unwrap();
        assert_eq!(back, c);
        assert_ne!(c.digest(), ModelConfig::default().digest());
    }

    #[test]
    fn bad_plans_rejected() {
        let mut c = ModelConfig::small();
        c.chunks = vec![4, 4, 8, 15];
        assert!(matches!(c.validate(), Err(Error::ConfigMismatch(_))));
        c.chunks = vec![0, 8, 8, 16];
        assert!(c.validate().is_err());
        let mut c = ModelConfig::small();
        c.main_kernel = 4;
        assert!(c.validate().is_err());
    }
}
