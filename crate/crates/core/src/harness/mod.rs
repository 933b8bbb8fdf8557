//! End-to-end plumbing: synthetic data, label preparation, the pre-training
//! loop, alignment evaluation and loss-curve export.

pub mod config;
pub mod curves;
pub mod dataset;
pub mod eval;
pub mod labels;
pub mod scene;
pub mod train;

pub use config::{RunConfig, TrainConfig};
pub use curves::emit_loss_curves;
pub use dataset::{generate_dataset, load_dataset, DatasetItem};
pub use eval::{eval_alignment, AlignmentReport};
pub use labels::prepare_dataset_labels;
pub use scene::{generate_scene, SceneInstance, ShapeKind, SyntheticScene};
pub use train::{pretrain, read_metrics, training_items, MetricsRow, RunOutputs, TrainItem, TrainSummary};
