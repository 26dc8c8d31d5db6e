//! End-to-end compression, rate-distortion evaluation, complexity
//! benchmarking and the self-test harness.

mod bench;
mod bitstream;
mod image;
mod selftest;

pub use self::image::{
    crop, decode_image, decode_ppm, encode_image_for, encode_ppm, pad_replicate, read_image, test_pattern, write_image, RgbImage,
};
pub use bench::{bench, linear_fit, BenchRow, BenchTable, DEFAULT_RESOLUTIONS};
pub use bitstream::{BitstreamHeader, STREAM_MAGIC, STREAM_VERSION};
pub use selftest::{selftest, SelftestOptions, SuiteResult};

use crate::codec::{build_cdf, decode_hyper, encode_hyper, FactorizedPrior, RangeDecoder, RangeEncoder, SYMBOL_MAX, SYMBOL_MIN};
use crate::entropy::{run_schedule, unit_symbols, CodingUnit, EntropyModel, GaussianParams, UnitCoder, UnitTrace};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use crate::transforms::{ModelConfig, Transforms, WeightStore, SPATIAL_ALIGN};

/// Lagrange multipliers of the MSE-optimized operating points.
pub const LAMBDA_PRESETS: [f64; 6] = [0.0025, 0.0035, 0.0067, 0.0130, 0.0250, 0.0483];

/// Downsampling from image to hyper latent.
const HYPER_STRIDE: usize = 64;

pub fn precision_bits<F: Real>() -> u8 {
    (std::mem::size_of::<F>() * 8) as u8
}

struct Encoder<'a, F: Real> {
    y: &'a Tensor<F>,
    segments: Vec<Vec<u8>>,
    estimated_bits: f64,
}

impl<F: Real> UnitCoder<F> for Encoder<'_, F> {
    fn code_unit(&mut self, _: usize, unit: &CodingUnit, params: &GaussianParams<F>) -> Result<Vec<i64>> {
        let symbols = unit_symbols(self.y, unit, params, SYMBOL_MIN, SYMBOL_MAX)?;
        let mut enc = RangeEncoder::new();
        let mut cdfs = Vec::with_capacity(symbols.len());
        for (&s, &sigma) in symbols.iter().zip(&params.sigma) {
            let cdf = build_cdf(0.0, sigma.as_f64())?;
            enc.encode(s, &cdf)?;
            cdfs.push(cdf);
        }
        self.estimated_bits += crate::codec::estimate_rate(&symbols, &cdfs)?;
        self.segments.push(enc.finish());
        Ok(symbols)
    }
}

struct Decoder<'a> {
    segments: Vec<&'a [u8]>,
}

impl<F: Real> UnitCoder<F> for Decoder<'_> {
    fn code_unit(&mut self, index: usize, _: &CodingUnit, params: &GaussianParams<F>) -> Result<Vec<i64>> {
        let seg = self
            .segments
            .get(index)
            .ok_or_else(|| Error::Corrupt(format!("no segment for unit {index}")))?;
        let mut dec = RangeDecoder::new(seg)?;
        let symbols = params
            .sigma
            .iter()
            .map(|&sigma| dec.decode(&build_cdf(0.0, sigma.as_f64())?))
            .collect::<Result<Vec<_>>>()?;
        dec.finish()?;
        Ok(symbols)
    }
}

/// Everything the encoder knows after coding one image.
#[derive(Clone, Debug)]
pub struct Encoded<F = f32> {
    pub bytes: Vec<u8>,
    pub header: BitstreamHeader,
    pub y: Tensor<F>,
    pub y_hat: Tensor<F>,
    pub z_hat: Tensor<F>,
    pub estimated_bits: f64,
    pub traces: Vec<UnitTrace<F>>,
}

impl<F> Encoded<F> {
    pub fn payload_bytes(&self) -> usize {
        self.bytes.len() - self.header.byte_len()
    }

    pub fn bits(&self) -> f64 {
        8.0 * self.payload_bytes() as f64
    }
}

#[derive(Clone, Debug)]
pub struct Decoded<F = f32> {
    pub header: BitstreamHeader,
    pub y_hat: Tensor<F>,
    pub image: RgbImage,
}

/// A loaded model in working precision `F`.
#[derive(Clone, Debug)]
pub struct Codec<F: Real = f32> {
    config: ModelConfig,
    weights_digest: u64,
    transforms: Transforms<F>,
    entropy: EntropyModel<F>,
    prior: FactorizedPrior,
}

impl<F: Real> Codec<F> {
    pub fn new(w: &WeightStore) -> Result<Self> {
        w.validate()?;
        Ok(Codec {
            config: w.config().clone(),
            weights_digest: w.digest(),
            transforms: Transforms::load(w)?,
            entropy: EntropyModel::load(w)?,
            prior: FactorizedPrior::load(w)?,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights_digest(&self) -> u64 {
        self.weights_digest
    }

    pub fn transforms(&self) -> &Transforms<F> {
        &self.transforms
    }

    pub fn entropy_model(&self) -> &EntropyModel<F> {
        &self.entropy
    }

    pub fn compress(&self, img: &RgbImage) -> Result<Encoded<F>> {
        let to_u32 = |v: usize| u32::try_from(v).map_err(|_| Error::InvalidArgument("image too large".into()));
        let x = pad_replicate(&img.to_tensor::<F>(), SPATIAL_ALIGN)?;
        let (_, ph, pw) = x.dims3("compress")?;
        let y = self.transforms.analysis(&x)?;
        let z = self.transforms.hyper_analysis(&y)?;
        let hyper = encode_hyper(&z, &self.prior)?;
        let phi = self.transforms.hyper_synthesis(&hyper.z_hat)?;
        let mut enc = Encoder { y: &y, segments: Vec::new(), estimated_bits: 0.0 };
        let out = run_schedule(&self.entropy, &phi, &mut enc)?;
        let (segments, unit_bits) = (enc.segments, enc.estimated_bits);
        let header = BitstreamHeader {
            width: to_u32(img.width)?,
            height: to_u32(img.height)?,
            padded_width: to_u32(pw)?,
            padded_height: to_u32(ph)?,
            config_digest: self.config.digest(),
            weights_digest: self.weights_digest,
            precision: precision_bits::<F>(),
            z_len: to_u32(hyper.bytes.len())?,
            unit_lens: segments.iter().map(|s| to_u32(s.len())).collect::<Result<_>>()?,
        };
        let mut bytes = Vec::with_capacity(header.byte_len() + header.payload_len());
        header.write(&mut bytes);
        bytes.extend_from_slice(&hyper.bytes);
        for seg in &segments {
            bytes.extend_from_slice(seg);
        }
        Ok(Encoded {
            bytes,
            header,
            y,
            y_hat: out.y_hat,
            z_hat: hyper.z_hat,
            estimated_bits: hyper.estimated_bits + unit_bits,
            traces: out.traces,
        })
    }

    fn check_header(&self, h: &BitstreamHeader) -> Result<()> {
        if h.config_digest != self.config.digest() {
            return Err(Error::ConfigMismatch(format!(
                "stream was coded with config {:#018x}, model has {:#018x}",
                h.config_digest,
                self.config.digest()
            )));
        }
        if h.weights_digest != self.weights_digest {
            return Err(Error::ConfigMismatch(format!(
                "stream was coded with weights {:#018x}, supplied weights are {:#018x}",
                h.weights_digest, self.weights_digest
            )));
        }
        if h.precision != precision_bits::<F>() {
            return Err(Error::ConfigMismatch(format!(
                "stream was coded in {}-bit precision, decoder runs {}-bit",
                h.precision,
                precision_bits::<F>()
            )));
        }
        let units = 2 * self.entropy.plan.len();
        if h.unit_lens.len() != units {
            return Err(Error::ConfigMismatch(format!(
                "stream has {} coding units, schedule has {units}",
                h.unit_lens.len()
            )));
        }
        Ok(())
    }

    /// Decode the latent without running the synthesis transform.
    pub fn decode_latent(&self, bytes: &[u8]) -> Result<(BitstreamHeader, Tensor<F>)> {
        let (header, z_seg, units) = BitstreamHeader::parse(bytes)?;
        self.check_header(&header)?;
        let zh = header.padded_height as usize / HYPER_STRIDE;
        let zw = header.padded_width as usize / HYPER_STRIDE;
        let z_hat = decode_hyper::<F>(z_seg, &self.prior, &[self.config.hyper_channels, zh, zw])?;
        let phi = self.transforms.hyper_synthesis(&z_hat)?;
        let out = run_schedule(&self.entropy, &phi, &mut Decoder { segments: units })?;
        Ok((header, out.y_hat))
    }

    pub fn decompress(&self, bytes: &[u8]) -> Result<Decoded<F>> {
        let (header, y_hat) = self.decode_latent(bytes)?;
        let image = self.reconstruct(&y_hat, header.width as usize, header.height as usize)?;
        Ok(Decoded { header, y_hat, image })
    }

    /// `g_s`, crop to the original extents and quantize to 8 bits.
    pub fn reconstruct(&self, y_hat: &Tensor<F>, width: usize, height: usize) -> Result<RgbImage> {
        let x_hat = self.transforms.synthesis(y_hat)?;
        RgbImage::from_tensor(&crop(&x_hat, height, width)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RdReport {
    pub bits: f64,
    pub bpp: f64,
    /// Mean squared error on the 0..255 scale.
    pub mse: f64,
    /// `+inf` for identical images.
    pub psnr: f64,
    pub lambda: f64,
    /// `lambda * 255^2 * MSE[0,1] + bpp`.
    pub loss: f64,
    pub estimated_bits: Option<f64>,
}

/// Rate-distortion report for a reconstruction coded in `total_bits`.
pub fn eval_rd(original: &RgbImage, reconstruction: &RgbImage, total_bits: f64, lambda: f64) -> Result<RdReport> {
    if (original.width, original.height) != (reconstruction.width, reconstruction.height) {
        return Err(Error::shape(
            "eval_rd",
            format!(
                "{}x{} vs {}x{}",
                original.width, original.height, reconstruction.width, reconstruction.height
            ),
        ));
    }
    let pixels = original.pixels();
    if pixels == 0 {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    let sse: f64 = original
        .data
        .iter()
        .zip(&reconstruction.data)
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    let mse = sse / original.data.len() as f64;
    let psnr = if mse == 0.0 { f64::INFINITY } else { 10.0 * (255.0f64.powi(2) / mse).log10() };
    let bpp = total_bits / pixels as f64;
    let mse01 = mse / 255.0f64.powi(2);
    Ok(RdReport {
        bits: total_bits,
        bpp,
        mse,
        psnr,
        lambda,
        loss: lambda * 255.0f64.powi(2) * mse01 + bpp,
        estimated_bits: None,
    })
}

/// Accept a preset index `q1`..`q6` or a literal value.
pub fn parse_lambda(s: &str) -> Result<f64> {
    let preset = s.strip_prefix('q').or_else(|| s.strip_prefix('Q'));
    if let Some(idx) = preset.and_then(|i| i.parse::<usize>().ok()) {
        return LAMBDA_PRESETS
            .get(idx.wrapping_sub(1))
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("lambda preset {s} outside q1..q6")));
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
        _ => Err(Error::InvalidArgument(format!("invalid lambda `{s}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(v: u8) -> RgbImage {
        RgbImage::new(4, 3, vec![v; 36]).unwrap()
    }

    #[test]
    fn identical_images() {
        let img = test_pattern(8, 8, 0);
        let r = eval_rd(&img, &img, 128.0, 0.013).unwrap();
        assert_eq!(r.mse, 0.0);
        assert_eq!(r.psnr, f64::INFINITY);
        assert_eq!(r.bpp, 2.0);
        assert_eq!(r.loss, r.bpp);
    }

    #[test]
    fn black_vs_white() {
        let r = eval_rd(&solid(0), &solid(255), 24.0, 0.0483).unwrap();
        assert_eq!(r.mse, 255.0 * 255.0);
        assert_eq!(r.psnr, 0.0);
        assert!((r.loss - (0.0483 * 255.0 * 255.0 + 2.0)).abs() < 1e-9);
        assert!(eval_rd(&solid(0), &test_pattern(3, 4, 0), 1.0, 0.0).is_err());
    }

    #[test]
    fn lambda_parsing() {
        assert_eq!(parse_lambda("q1").unwrap(), 0.0025);
        assert_eq!(parse_lambda("q6").unwrap(), 0.0483);
        assert_eq!(parse_lambda("0.0130").unwrap(), LAMBDA_PRESETS[3]);
        assert!(parse_lambda("q0").is_err());
        assert!(parse_lambda("q7").is_err());
        assert!(parse_lambda("-1").is_err());
    }

    fn small_codec<F: Real>() -> Codec<F> {
        Codec::new(&WeightStore::init(&ModelConfig::small(), 0).unwrap()).unwrap()
    }

    #[test]
    fn small_round_trip() {
        let codec = small_codec::<f32>();
        let img = test_pattern(100, 70, 3);
        let enc = codec.compress(&img).unwrap();
        assert_eq!((enc.header.padded_width, enc.header.padded_height), (128, 128));
        let dec = codec.decompress(&enc.bytes).unwrap();
        assert_eq!(dec.y_hat.fingerprint(), enc.y_hat.fingerprint());
        assert_eq!((dec.image.width, dec.image.height), (100, 70));
        assert_eq!(dec.image, codec.reconstruct(&enc.y_hat, 100, 70).unwrap());
        assert!(enc.y_hat.max_abs_diff(&enc.y) <= 0.5);
        let bits = enc.bits();
        assert!(enc.estimated_bits <= bits && bits <= 1.01 * enc.estimated_bits + 64.0 * 11.0);
    }

    #[test]
    fn mismatches_rejected() {
        let codec = small_codec::<f32>();
        let enc = codec.compress(&test_pattern(64, 64, 4)).unwrap();
        let other = Codec::<f32>::new(&WeightStore::init(&ModelConfig::small(), 1).unwrap()).unwrap();
        assert!(matches!(other.decompress(&enc.bytes), Err(Error::ConfigMismatch(_))));
        let wide = small_codec::<f64>();
        assert!(matches!(wide.decompress(&enc.bytes), Err(Error::ConfigMismatch(_))));
        let cut = &enc.bytes[..enc.bytes.len() - 1];
        assert!(matches!(codec.decompress(cut), Err(Error::Corrupt(_))));
    }

    #[test]
    fn flipped_payload_never_panics() {
        let codec = small_codec::<f32>();
        let enc = codec.compress(&test_pattern(64, 64, 5)).unwrap();
        let start = enc.header.byte_len();
        for i in (start..enc.bytes.len()).step_by(3) {
            let mut bad = enc.bytes.clone();
            bad[i] ^= 0x5A;
            let _ = codec.decompress(&bad);
        }
    }
}
