//! Unsupervised part localization from frequently co-occurring CNN
//! activations.
//!
//! The pipeline turns a stack of activation maps into transactions, mines
//! frequent position itemsets, merges them into a support map and clusters
//! that map into square part regions. Parts can then be aligned across a
//! dataset by spectral clustering and fused into one descriptor for a linear
//! classifier.

pub mod align;
pub mod classify;
pub mod components;
pub mod dataset;
pub mod eigen;
pub mod kmeans;
pub mod localize;
pub mod mining;
pub mod npy;
pub mod pipeline;
pub mod render;
pub mod synth;
pub mod tensor;
pub mod transactions;

pub use components::Connectivity;
pub use localize::{BBox, PartLayout, SupportMap};
pub use mining::{apriori, brute_force_mine, PatternSet};
pub use npy::{read_tensor, write_tensor};
pub use pipeline::{localize_stack, run_pipeline, LayoutDoc, PipelineConfig};
pub use tensor::{Descriptor, Mask, Tensor};
pub use transactions::{ThresholdMode, TransactionDb};
