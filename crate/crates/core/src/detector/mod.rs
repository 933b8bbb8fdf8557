//! Desk-scale two-stage DETR-style detector used for pre-training.
//!
//! Images pass through a frozen patch-embedding extractor and a transformer
//! encoder. During pre-training the encoder features are fused with the
//! pseudo-label object embeddings, proposals are selected from the fused
//! features, and one decoder is run on the fused features (main branch) and,
//! depending on the calibration mode, again on the plain features
//! (auxiliary branch) with the very same parameters.

pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod heads;
pub mod model;
pub mod objective;

pub use backbone::{FrozenBackbone, Image};
pub use config::DetectorConfig;
pub use heads::select_top;
pub use model::{feature_discrepancy, sinusoidal_positions, BranchOutput, Detector, PretrainOutput};
pub use objective::{pretrain_loss, LabelTensors};
