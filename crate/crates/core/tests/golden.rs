//! Pinned checksums for seeded weights and inputs. Each 32-bit result is
//! compared against an independent 64-bit evaluation before its checksum is
//! checked, so a pinned value can only be reproduced by a correct forward pass.

use std::sync::OnceLock;

use lalic::entropy::{channel_context, EntropyModel};
use lalic::transforms::{ModelConfig, Transforms, WeightStore};
use lalic::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ANALYSIS: u64 = 0xec0e3d1ca29e74e2;
const SYNTHESIS: u64 = 0x1394cac6cbf3d1bd;
const HYPER_ANALYSIS: u64 = 0xad29fd6fefcbe884;
const HYPER_SYNTHESIS: u64 = 0x659813d6f4520e66;
const CHANNEL_CONTEXT_K3: u64 = 0xe9e6c8e0f3565525;

fn store() -> &'static WeightStore {
    static STORE: OnceLock<WeightStore> = OnceLock::new();
    STORE.get_or_init(|| WeightStore::init(&ModelConfig::default(), 0).unwrap())
}

fn input(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Relative gap between a 32-bit result and its 64-bit counterpart.
fn gap(single: &Tensor<f32>, double: &Tensor<f64>) -> f64 {
    assert_eq!(single.shape(), double.shape());
    single.cast::<f64>().max_abs_diff(double) / double.max_abs().max(1e-12)
}

fn check(name: &str, single: &Tensor<f32>, double: &Tensor<f64>, tol: f64, pinned: u64) {
    let g = gap(single, double);
    let got = single.fingerprint();
    println!("{name}: 64-bit gap {g:.3e}, checksum {got:#018x}");
    assert!(g <= tol, "{name}: 32-bit result drifts {g:e} from the 64-bit evaluation");
    assert_eq!(got, pinned, "{name}: checksum changed");
}

fn transforms() -> (Transforms<f32>, Transforms<f64>) {
    (Transforms::load(store()).unwrap(), Transforms::load(store()).unwrap())
}

#[test]
fn analysis_checksum() {
    let (t32, t64) = transforms();
    let x = input(&[3, 64, 64], 1, 0.0, 1.0);
    let y64 = t64.analysis(&x).unwrap();
    let y32 = t32.analysis(&x.cast()).unwrap();
    assert_eq!(y32.shape(), &[320, 4, 4]);
    check("analysis", &y32, &y64, 1e-4, ANALYSIS);
}

#[test]
fn synthesis_checksum() {
    let (t32, t64) = transforms();
    let y = input(&[320, 4, 4], 2, -4.0, 4.0).map(|v| v.round());
    let x64 = t64.synthesis(&y).unwrap();
    let x32 = t32.synthesis(&y.cast()).unwrap();
    assert_eq!(x32.shape(), &[3, 64, 64]);
    check("synthesis", &x32, &x64, 1e-4, SYNTHESIS);
}

#[test]
fn hyper_analysis_checksum() {
    let (t32, t64) = transforms();
    let y = input(&[320, 8, 8], 3, -2.0, 2.0);
    let z64 = t64.hyper_analysis(&y).unwrap();
    let z32 = t32.hyper_analysis(&y.cast()).unwrap();
    assert_eq!(z32.shape(), &[192, 2, 2]);
    check("hyper_analysis", &z32, &z64, 1e-4, HYPER_ANALYSIS);
}

#[test]
fn hyper_synthesis_checksum() {
    let (t32, t64) = transforms();
    let z = input(&[192, 2, 2], 4, -3.0, 3.0).map(|v| v.round());
    let p64 = t64.hyper_synthesis(&z).unwrap();
    let p32 = t32.hyper_synthesis(&z.cast()).unwrap();
    assert_eq!(p32.shape(), &[640, 8, 8]);
    check("hyper_synthesis", &p32, &p64, 1e-4, HYPER_SYNTHESIS);
}

#[test]
fn channel_context_checksum() {
    let m32 = EntropyModel::<f32>::load(store()).unwrap();
    let m64 = EntropyModel::<f64>::load(store()).unwrap();
    let prev = m64.plan.ranges()[2].start;
    let decoded = input(&[prev, 8, 8], 5, -4.0, 4.0).map(|v| v.round());
    let width = m64.context_width;
    let c64 = channel_context(Some(&decoded), m64.chunks[2].channel.as_ref(), width, 8, 8).unwrap();
    let c32 = channel_context(Some(&decoded.cast()), m32.chunks[2].channel.as_ref(), width, 8, 8).unwrap();
    assert_eq!(c32.shape(), &[128, 8, 8]);
    check("channel_context k=3", &c32, &c64, 1e-4, CHANNEL_CONTEXT_K3);
}
