//! Semi-supervised referring expression segmentation.
//!
//! Weakly and strongly augmented views of unlabeled image/expression pairs are
//! kept consistent (flip-aware text, similarity-filtered text augmentation),
//! pseudo-labels are scored by their confidence, and the score both blends the
//! strong image back toward the weak one and weights the unsupervised loss.

pub mod augment_image;
pub mod augment_text;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod embedder;
pub mod error;
pub mod metrics;
pub mod model;
pub mod preview;
pub mod resample;
pub mod rng;
pub mod ssl;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
