//! Linear-attention learned image compression.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense tensors, convolutions, normalization, projections.
//! - [`wkv`]: AFT and bidirectional WKV attention kernels, backward pass, op-count models.
//! - [`block`]: Omni-Shift, Spatial-Mix, Channel-Mix and the Bi-RWKV block.
//! - [`transforms`]: model configuration, weight store and the four transforms.
//! - [`entropy`]: checkerboard / channel-chunk context model and coding schedule.
//! - [`codec`]: discretized Gaussians, quantized CDFs and the range coder.
//! - [`pipeline`]: bitstream container, compress / decompress, RD evaluation, benchmarks.

pub mod block;
pub mod codec;
pub mod entropy;
pub mod error;
pub mod hash;
pub mod pipeline;
pub mod tensor;
pub mod transforms;
pub mod wkv;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
