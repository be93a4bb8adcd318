//! Grad-CAM saliency maps and their faithfulness audit, built on a small
//! reverse-mode automatic differentiation engine.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`] and [`autodiff`]: dense `f64` tensors and a tape that records
//!   the operators the classifiers need, with central finite differences as
//!   the verification oracle.
//! - [`models`]: small configurable classifiers (three CNN variants and a
//!   tiny patch-attention model) with named-layer activation capture and a
//!   binary checkpoint format.
//! - [`gradcam`]: channel weights from pooled class-score gradients, the
//!   rectified weighted activation map, and the upsample/normalize pipeline.
//! - [`faithfulness`]: localization accuracy, perturbation faithfulness,
//!   explanation consistency, and the classification metric suite.
//! - [`phantom`]: synthetic lung CT phantoms with exact lesion masks,
//!   stratified splits, PGM ingestion and the dataset container.
//! - [`training`]: mini-batch SGD with momentum on the cross-entropy loss.

pub mod autodiff;
mod binio;
pub mod ddouble;
pub mod error;
pub mod faithfulness;
pub mod gradcam;
pub mod models;
pub mod phantom;
pub mod pnm;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// Number of diagnostic classes (Normal, Benign, Malignant).
pub const NUM_CLASSES: usize = 3;
