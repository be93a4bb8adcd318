//! Faithfulness audit of Grad-CAM heatmaps and the classification metric
//! suite.
//!
//! - Localization accuracy: mean fraction of each ground-truth lesion mask
//!   covered by the binarized heatmap, over samples with a nonempty mask.
//! - Faithfulness: drop in the true-class score when the input is masked by
//!   the normalized heatmap, `score(x) − score(x ⊙ (1 − L))`.
//! - Consistency: mean IoU between binarized heatmaps of independently
//!   seeded runs and those of a reference run (excluded from its own mean).

mod classification;
mod mask;
mod metrics;

pub use classification::{classification_metrics, ClassMetrics, ClassificationReport, ConfusionMatrix};
pub use mask::BinaryMask;
pub use metrics::{
    binarize, binarize_map, consistency, faith_mean, faith_single, iou, loc_acc, perturb, EvalConfig, LocAcc, MaskFill,
    DEFAULT_RUN_COUNT,
};
