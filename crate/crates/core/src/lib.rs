//! Mutually optimizing detection pre-training for oriented object detection.
//!
//! The crate is organized bottom-up:
//!
//! - [`geometry`]: rotated boxes, minimum-area rectangles, rotated IoU, GIoU.
//! - [`prep`]: offline pseudo-labels (PCA, k-means, label store).
//! - [`nn`]: a small reverse-mode graph over dense `f64` matrices.
//! - [`enhancement`]: the bidirectional object/feature fusion layers.
//! - [`losses`]: Hungarian matching and every loss term.
//! - [`detector`]: frozen extractor, encoder, decoder and the two-branch forward.
//! - [`harness`]: synthetic scenes, training loop, metrics and evaluation.

pub mod detector;
pub mod enhancement;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod losses;
pub mod nn;
pub mod prep;

pub use error::{Error, Result};
pub use geometry::{OrientedBox, Point, Polygon};
