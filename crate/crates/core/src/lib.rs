//! Correlation-filter tracking on distilled convolutional features.
//!
//! The crate is organized around six pieces:
//!
//! - [`spectral`]: closed-form DFT-domain filter training and detection.
//! - [`nnet`]: a small conv/relu/maxpool engine with exact backward passes,
//!   pruning-based student initialization, weight files, and FLOPs/parameter
//!   accounting.
//! - [`distill`]: offline teacher→student compression with a fidelity loss
//!   and a differentiable correlation-filter layer, plus synthetic training
//!   data.
//! - [`adapt`]: background-aware fine-tuning on the first frame of a
//!   sequence.
//! - [`tracker`]: a plain correlation-filter tracker driven by network
//!   features.
//! - [`bench`]: sequence ingestion, one-pass evaluation, and model cost
//!   reports.

pub mod adapt;
pub mod bench;
pub mod distill;
pub mod error;
pub mod geom;
pub mod nnet;
pub mod selfcheck;
pub mod spectral;
pub mod tensor;
pub mod tracker;
pub mod util;

pub use bench::Frame;
pub use error::{Error, Result};
pub use geom::Rect;
pub use tensor::Tensor3;
