//! Small configurable classifiers with named-layer activation capture.
//!
//! Four presets stand in for a cross-architecture comparison at desk scale:
//!
//! | preset      | body                                             | capture    |
//! |-------------|--------------------------------------------------|------------|
//! | `cnn-a`     | 3 conv blocks (conv, ReLU, pool after the first two) | `relu3` |
//! | `cnn-b`     | 4 conv blocks                                     | `relu4`    |
//! | `cnn-dense` | stem conv + 2 blocks that concatenate their input  | `dense2`   |
//! | `tiny-vit`  | patch embedding + 2 single-head attention blocks   | `attn2`    |
//!
//! Every preset starts with a `center` layer that subtracts the training
//! set's mean image, and ends in global average pooling and `Dense(K)`.
//! The anatomy shared by every image otherwise dominates the pooled
//! features and swamps the small lesion signal. Attention
//! models keep their tokens in an `E×h×w` grid between layers, so the
//! captured activation of an attention block is the token sequence reshaped
//! to its spatial grid.

mod checkpoint;
mod config;
mod network;
mod params;
pub mod reference;

pub use checkpoint::{decode_params, encode_params, load_params, save_params, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{LayerKind, LayerShape, LayerSpec, ModelConfig, ShapeReport, PRESETS};
pub use network::{patch_tokens, ForwardTrace};
pub use params::{fnv1a64, ModelParams};
pub use reference::{model_gradient_check, ReferenceModel};
