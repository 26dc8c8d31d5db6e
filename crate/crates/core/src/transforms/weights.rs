//! Named parameter storage, seeded initialization and the binary weight file.
//!
//! File layout, all integers little-endian:
//!
//! ```text
//! "LALW"  u32 version
//! config block: u32 fields (see ModelConfig::to_bytes)
//! u8 has_seed  u64 seed
//! u32 tensor count
//! per tensor: u16 name length, name bytes, u8 rank, u32 extents[rank], f32 values
//! u64 FNV-1a of every preceding byte
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::layout::{manifest, Init, ParamSpec, SPATIAL_CONTEXT_KERNEL};
use crate::block::OmniShiftBranches;
use crate::error::{Error, Result};
use crate::hash::{fnv64, Fnv64};
use crate::tensor::{Real, Tensor};

pub const WEIGHT_MAGIC: &[u8; 4] = b"LALW";
pub const WEIGHT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct WeightStore {
    config: ModelConfig,
    seed: Option<u64>,
    tensors: BTreeMap<String, Tensor<f32>>,
}

/// Uniform on `[0, 1)` with 24 random bits, identical on every platform.
fn unit_uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u32() >> 8) as f64 * (1.0 / (1u64 << 24) as f64)
}

/// Zero-mean uniform with standard deviation `std`.
fn centered(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    (2.0 * unit_uniform(rng) - 1.0) * std * 3f64.sqrt()
}

/// True where a spatial-context tap at offset `(ky, kx)` reads an anchor
/// when centred on a non-anchor.
pub fn checkerboard_tap(ky: usize, kx: usize) -> bool {
    (ky + kx) % 2 == 1
}

fn init_tensor(spec: &ParamSpec, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv64(spec.name.as_bytes()));
    let shape = &spec.shape;
    let c = shape.first().copied().unwrap_or(0);
    match spec.init {
        Init::Zeros => Tensor::zeros(shape),
        Init::Ones => Tensor::full(shape, 1.0),
        Init::Uniform { std } => Tensor::from_fn(shape, |_| centered(&mut rng, std) as f32),
        Init::Checkerboard { std } => {
            let k = SPATIAL_CONTEXT_KERNEL;
            Tensor::from_fn(shape, |i| {
                let v = centered(&mut rng, std) as f32;
                let tap = i % (k * k);
                if checkerboard_tap(tap / k, tap % k) {
                    v
                } else {
                    0.0
                }
            })
        }
        Init::Decay => Tensor::from_fn(shape, |i| {
            if c > 1 {
                (8.0 * i as f64 / (c - 1) as f64) as f32
            } else {
                0.0
            }
        }),
        Init::Bonus => Tensor::from_fn(shape, |i| 0.5 * (((i + 1) % 3) as f32 - 1.0)),
        Init::OmniShift => {
            let mut v = |n: usize, std: f64| (0..n).map(|_| centered(&mut rng, std)).collect::<Vec<f64>>();
            let branches = OmniShiftBranches {
                identity: vec![1.0; c],
                scale1: v(c, 0.1),
                kernel1: v(c, 1.0),
                scale3: v(c, 0.1),
                kernel3: Tensor::from_vec(&[c, 1, 3, 3], v(9 * c, 1.0 / 3.0)).expect("extent"),
                scale5: v(c, 0.1),
                kernel5: Tensor::from_vec(&[c, 1, 5, 5], v(25 * c, 0.2)).expect("extent"),
            };
            branches.merge().expect("consistent branches").cast()
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(Error::Truncated("weight file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Forwards writes while hashing them.
struct HashingWriter<W> {
    inner: W,
    hash: Fnv64,
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hash.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

impl WeightStore {
    /// Deterministic pseudo-random weights. Each tensor draws from its own
    /// ChaCha8 stream keyed by `seed` and its name.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let tensors = manifest(config)
            .iter()
            .map(|spec| (spec.name.clone(), init_tensor(spec, seed)))
            .collect();
        Ok(WeightStore { config: config.clone(), seed: Some(seed), tensors })
    }

    /// Every parameter zero, including layer-norm gains.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let tensors = manifest(config)
            .into_iter()
            .map(|spec| (spec.name, Tensor::zeros(&spec.shape)))
            .collect();
        Ok(WeightStore { config: config.clone(), seed: None, tensors })
    }

    pub fn from_tensors(
        config: ModelConfig,
        seed: Option<u64>,
        tensors: BTreeMap<String, Tensor<f32>>,
    ) -> Result<Self> {
        let store = WeightStore { config, seed, tensors };
        store.validate()?;
        Ok(store)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor<f32>> {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut BTreeMap<String, Tensor<f32>> {
        &mut self.tensors
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Check the stored tensors against the configured architecture.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let specs = manifest(&self.config);
        for spec in &specs {
            let t = self.get(&spec.name)?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::TensorShape {
                    name: spec.name.clone(),
                    expected: spec.shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
        }
        if self.tensors.len() != specs.len() {
            let known: std::collections::HashSet<&str> = specs.iter().map(|s| s.name.as_str()).collect();
            if let Some(extra) = self.tensors.keys().find(|k| !known.contains(k.as_str())) {
                return Err(Error::UnexpectedTensor(extra.clone()));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<f32>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    /// Fetch `name`, check its extents and convert to the working precision.
    pub fn fetch<F: Real>(&self, name: &str, shape: &[usize]) -> Result<Tensor<F>> {
        let t = self.get(name)?;
        if t.shape() != shape {
            return Err(Error::TensorShape {
                name: name.to_string(),
                expected: shape.to_vec(),
                found: t.shape().to_vec(),
            });
        }
        Ok(t.cast())
    }

    pub fn fetch_vec<F: Real>(&self, name: &str, len: usize) -> Result<Vec<F>> {
        Ok(self.fetch(name, &[len])?.into_vec())
    }

    /// Serialize; returns the trailing checksum.
    pub fn write_to<W: Write>(&self, w: W) -> Result<u64> {
        let mut w = HashingWriter { inner: w, hash: Fnv64::new() };
        w.write_all(WEIGHT_MAGIC)?;
        w.write_all(&WEIGHT_VERSION.to_le_bytes())?;
        w.write_all(&self.config.to_bytes())?;
        w.write_all(&[self.seed.is_some() as u8])?;
        w.write_all(&self.seed.unwrap_or(0).to_le_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            let len = u16::try_from(name.len())
                .map_err(|_| Error::InvalidArgument(format!("tensor name too long: {name}")))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[t.rank() as u8])?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(t.len() * 4);
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        let sum = w.hash.finish();
        w.inner.write_all(&sum.to_le_bytes())?;
        w.flush()?;
        Ok(sum)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    /// Checksum of the serialized form; identifies the weights in bitstreams.
    pub fn digest(&self) -> u64 {
        self.write_to(io::sink()).expect("sink never fails")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path)?;
        self.write_to(BufWriter::new(file))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated("weight file"));
        }
        if &bytes[..4] != WEIGHT_MAGIC {
            return Err(Error::BadMagic { expected: "LALW" });
        }
        let body_len = bytes.len().saturating_sub(8);
        let mut cur = Cursor { bytes: &bytes[..body_len], pos: 4 };
        let version = cur.u32()?;
        if version != WEIGHT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let config = ModelConfig::read_from(&mut || cur.u32())?;
        let has_seed = cur.u8()?;
        let seed_value = cur.u64()?;
        let seed = match has_seed {
            0 => None,
            1 => Some(seed_value),
            other => {
                return Err(Error::Malformed { what: "weight file", detail: format!("seed flag {other}") })
            }
        };
        let count = cur.u32()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let len = cur.u16()? as usize;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| Error::Malformed { what: "weight file", detail: "tensor name is not UTF-8".into() })?
                .to_string();
            let rank = cur.u8()? as usize;
            let shape = (0..rank)
                .map(|_| cur.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or(Error::Truncated("weight file"))?;
            let data = cur
                .take(numel)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            if tensors.insert(name.clone(), Tensor::from_vec(&shape, data)?).is_some() {
                return Err(Error::Malformed { what: "weight file", detail: format!("duplicate tensor {name}") });
            }
        }
        if cur.pos != body_len || bytes.len() < 8 {
            return Err(Error::Malformed {
                what: "weight file",
                detail: format!("{} bytes after the last tensor", body_len.saturating_sub(cur.pos)),
            });
        }
        let stored = u64::from_le_bytes(bytes[body_len..].try_into().expect("8 bytes"));
        let computed = fnv64(&bytes[..body_len]);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let store = WeightStore { config, seed, tensors };
        store.validate()?;
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WeightStore {
        WeightStore::init(&ModelConfig::small(), 7).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a = small().to_bytes().unwrap();
        let b = small().to_bytes().unwrap();
        assert_eq!(a, b);
        let c = WeightStore::init(&ModelConfig::small(), 8).unwrap();
        assert_ne!(small().digest(), c.digest());
    }

    #[test]
    fn round_trip() {
        let w = small();
        let bytes = w.to_bytes().unwrap();
        let back = WeightStore::from_bytes(&bytes).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(w.digest(), u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap()));
    }

    #[test]
    fn distinct_errors() {
        let bytes = small().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(WeightStore::from_bytes(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(WeightStore::from_bytes(&bad), Err(Error::UnsupportedVersion(9))));
        assert!(matches!(
            WeightStore::from_bytes(&bytes[..bytes.len() / 2]),
            Err(Error::Truncated(_))
        ));
        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 20] ^= 1;
        assert!(matches!(WeightStore::from_bytes(&bad), Err(Error::Checksum { .. })));
    }

    #[test]
    fn manifest_violations_named() {
        let mut w = small();
        w.tensors_mut().remove("g_a.down1.weight");
        let err = WeightStore::from_bytes(&w.to_bytes().unwrap()).unwrap_err();
        assert!(matches!(&err, Error::MissingTensor(n) if n == "g_a.down1.weight"));
        assert!(err.to_string().contains("g_a.down1.weight"));

        let mut w = small();
        w.tensors_mut().insert("extra.weight".into(), Tensor::zeros(&[1]));
        assert!(matches!(w.validate(), Err(Error::UnexpectedTensor(n)) if n == "extra.weight"));

        let mut w = small();
        w.tensors_mut().insert("g_a.down1.bias".into(), Tensor::zeros(&[3]));
        assert!(matches!(w.validate(), Err(Error::TensorShape { .. })));
    }

    #[test]
    fn masked_taps_are_zero() {
        let w = small();
        let k = w.get("entropy.chunk1.spatial.weight").unwrap();
        for (i, &v) in k.data().iter().enumerate() {
            let tap = i % 25;
            if !checkerboard_tap(tap / 5, tap % 5) {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn uniform_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let xs: Vec<f64> = (0..100_000).map(|_| centered(&mut rng, 0.5)).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.01);
        assert!((var.sqrt() - 0.5).abs() < 0.01);
    }
}
