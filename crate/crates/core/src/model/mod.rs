//! The network: a weight-shared single-channel extractor (multi-kernel
//! inception stem, residual 1-D convolutions, bidirectional LSTM) followed by
//! a two-layer fusion classifier, plus the end-to-end baseline and the
//! checkpoint format.

pub mod checkpoint;
pub mod config;
pub mod network;
pub mod params;

pub use checkpoint::{load_checkpoint, load_extractor_only, save_checkpoint};
pub use config::{Arch, ModelConfig};
pub use network::{
    backward_pass, classify, end2end_forward, extract_features, forward, forward_pass,
    scfnet_forward, Mode, PassOptions,
};
pub use params::{init_params, ModelParams, Tensor};
