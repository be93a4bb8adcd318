use serde::{Deserialize, Serialize};

use super::BinaryMask;
use crate::error::{Error, Result};
use crate::gradcam::{Heatmap, ScoreMode};
use crate::models::ModelParams;
use crate::phantom::Sample;
use crate::tensor::Tensor;

/// What replaces the salient part of the input when measuring faithfulness.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum MaskFill {
    /// `x ⊙ (1 − L)`: salient pixels fade to zero.
    #[default]
    Multiplicative,
    /// `x ⊙ (1 − L) + m·L`: salient pixels fade to a constant `m`.
    DatasetMean(f64),
}

impl MaskFill {
    fn value(self) -> f64 {
        match self {
            MaskFill::Multiplicative => 0.0,
            MaskFill::DatasetMean(m) => m,
        }
    }
}

/// Settings shared by the faithfulness metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Binarization threshold τ applied to normalized heatmaps.
    pub tau: f64,
    /// Index of the reference run for consistency.
    pub reference: usize,
    /// Score used by the perturbation metric.
    pub score_mode: ScoreMode,
    pub fill: MaskFill,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            reference: 0,
            score_mode: ScoreMode::Probability,
            fill: MaskFill::Multiplicative,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)?;
        if let MaskFill::DatasetMean(m) = self.fill {
            if !m.is_finite() {
                return Err(Error::config("mask fill value must be finite"));
            }
        }
        Ok(())
    }
}

/// Default number of seeded runs compared by [`consistency`].
pub const DEFAULT_RUN_COUNT: usize = 3;

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::config(format!("threshold τ = {tau} outside (0,1)")));
    }
    Ok(())
}

/// Pixels of a 2-D map with value `>= tau`.
pub fn binarize_map(map: &Tensor, tau: f64) -> Result<BinaryMask> {
    check_tau(tau)?;
    let &[h, w] = map.shape() else {
        return Err(Error::shape(format!("map must be 2-D, got {:?}", map.shape())));
    };
    BinaryMask::new(h, w, map.data().iter().map(|&v| v >= tau).collect())
}

/// Pixels whose normalized heat is `>= tau`.
pub fn binarize(heatmap: &Heatmap, tau: f64) -> Result<BinaryMask> {
    binarize_map(&heatmap.normalized, tau)
}

/// Mean mask coverage and the number of samples it averaged over.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocAcc {
    pub value: f64,
    /// Samples with a nonempty ground-truth mask.
    pub eligible: usize,
}

/// Mean of `|binarize(L) ∩ M| / |M|` over samples whose mask is nonempty.
pub fn loc_acc(heatmaps: &[Heatmap], masks: &[BinaryMask], tau: f64) -> Result<LocAcc> {
    if heatmaps.len() != masks.len() {
        return Err(Error::input(format!(
            "{} heatmaps for {} masks",
            heatmaps.len(),
            masks.len()
        )));
    }
    let mut total = 0.0;
    let mut eligible = 0;
    for (h, m) in heatmaps.iter().zip(masks) {
        let b = binarize(h, tau)?;
        if m.is_empty() {
            continue;
        }
        total += b.intersection_count(m)? as f64 / m.count() as f64;
        eligible += 1;
    }
    if eligible == 0 {
        return Err(Error::contract(
            "localization accuracy is undefined without a nonempty mask",
        ));
    }
    Ok(LocAcc {
        value: total / eligible as f64,
        eligible,
    })
}

/// `x ⊙ (1 − L) + fill·L`, applied to every channel.
pub fn perturb(x: &Tensor, heat: &Tensor, fill: MaskFill) -> Result<Tensor> {
    let (&[c, h, w], &[hh, hw]) = (x.shape(), heat.shape()) else {
        return Err(Error::shape(format!(
            "expected a C×H×W input and an H×W heatmap, got {:?} and {:?}",
            x.shape(),
            heat.shape()
        )));
    };
    if (h, w) != (hh, hw) {
        return Err(Error::shape(format!("heatmap {hh}×{hw} does not match input {h}×{w}")));
    }
    let m = fill.value();
    let mut out = x.clone();
    for ch in 0..c {
        let plane = &mut out.data_mut()[ch * h * w..(ch + 1) * h * w];
        for (v, &l) in plane.iter_mut().zip(heat.data()) {
            *v = match fill {
                MaskFill::Multiplicative => *v * (1.0 - l),
                MaskFill::DatasetMean(_) => *v * (1.0 - l) + m * l,
            };
        }
    }
    Ok(out)
}

/// Score drop `score(x)_y − score(perturb(x, L))_y` for class `y`.
pub fn faith_single(
    params: &ModelParams,
    x: &Tensor,
    y: usize,
    heatmap: &Heatmap,
    mode: ScoreMode,
    fill: MaskFill,
) -> Result<f64> {
    let masked = perturb(x, &heatmap.normalized, fill)?;
    let before = mode.score(params.forward(x)?.data(), y)?;
    let after = mode.score(params.forward(&masked)?.data(), y)?;
    Ok(before - after)
}

/// Mean of [`faith_single`] over aligned samples and heatmaps, scoring each
/// sample's true label.
pub fn faith_mean(params: &ModelParams, samples: &[&Sample], heatmaps: &[Heatmap], config: &EvalConfig) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::contract("faithfulness of an empty split is undefined"));
    }
    if samples.len() != heatmaps.len() {
        return Err(Error::input(format!(
            "{} samples for {} heatmaps",
            samples.len(),
            heatmaps.len()
        )));
    }
    let mut total = 0.0;
    for (s, h) in samples.iter().zip(heatmaps) {
        total += faith_single(params, &s.image, s.label.index(), h, config.score_mode, config.fill)?;
    }
    Ok(total / samples.len() as f64)
}

/// `|a ∩ b| / |a ∪ b|`; two empty masks agree perfectly (1.0).
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let union = a.union_count(b)?;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(a.intersection_count(b)? as f64 / union as f64)
}

/// Mean IoU between each non-reference run's binarized maps and the
/// reference run's, averaged over images and then over the `R − 1`
/// non-reference runs.
pub fn consistency(runs: &[Vec<Heatmap>], reference: usize, tau: f64) -> Result<f64> {
    if runs.len() < 2 {
        return Err(Error::contract(format!(
            "consistency needs at least 2 runs, got {}",
            runs.len()
        )));
    }
    if reference >= runs.len() {
        return Err(Error::input(format!(
            "reference run {reference} out of range for {} runs",
            runs.len()
        )));
    }
    let n = runs[reference].len();
    if n == 0 {
        return Err(Error::contract("consistency over zero images is undefined"));
    }
    if let Some(r) = runs.iter().position(|r| r.len() != n) {
        return Err(Error::input(format!(
            "run {r} has {} heatmaps, reference has {n}",
            runs[r].len()
        )));
    }
    let reference_masks = runs[reference]
        .iter()
        .map(|h| binarize(h, tau))
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for (r, run) in runs.iter().enumerate() {
        if r == reference {
            continue;
        }
        let mut per_run = 0.0;
        for (h, m) in run.iter().zip(&reference_masks) {
            per_run += iou(&binarize(h, tau)?, m)?;
        }
        total += per_run / n as f64;
    }
    Ok(total / (runs.len() - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelConfig, ModelParams};

    fn heat(map: Tensor) -> Heatmap {
        Heatmap {
            raw: map.clone(),
            normalized: map,
            target_class: 0,
            capture_layer: "x".into(),
            model_seed: 0,
            score_mode: ScoreMode::Logit,
        }
    }

    fn from_mask(m: &BinaryMask) -> Heatmap {
        heat(
            Tensor::new(
                [m.height(), m.width()],
                m.bits().iter().map(|&b| f64::from(u8::from(b))).collect(),
            )
            .unwrap(),
        )
    }

    #[test]
    fn binarize_cases() {
        assert!(binarize(&heat(Tensor::zeros([3, 3])), 0.2).unwrap().is_empty());
        let board = Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(binarize(&heat(board), 0.5).unwrap().bits(), &[true, false, false, true]);
        let faint = Tensor::new([1, 2], vec![1e-9, 0.0]).unwrap();
        assert_eq!(binarize(&heat(faint), 1e-10).unwrap().bits(), &[true, false]);
        assert!(binarize(&heat(Tensor::zeros([1, 1])), 1.0).is_err());
    }

    #[test]
    fn loc_acc_cases() {
        let mask = BinaryMask::from_fn(2, 5, |_, _| true);
        let half = heat(Tensor::new([2, 5], (0..10).map(|i| f64::from(u8::from(i < 5))).collect()).unwrap());
        let r = loc_acc(&[half], std::slice::from_ref(&mask), 0.5).unwrap();
        assert_eq!((r.value, r.eligible), (0.5, 1));

        let everywhere = heat(Tensor::full([2, 5], 1.0));
        assert_eq!(
            loc_acc(std::slice::from_ref(&everywhere), std::slice::from_ref(&mask), 0.5)
                .unwrap()
                .value,
            1.0
        );
        let nowhere = heat(Tensor::zeros([2, 5]));
        let empty = BinaryMask::empty(2, 5);
        let r = loc_acc(&[nowhere.clone(), everywhere], &[mask, empty.clone()], 0.5).unwrap();
        assert_eq!((r.value, r.eligible), (0.0, 1));
        assert!(matches!(loc_acc(&[nowhere], &[empty], 0.5), Err(Error::Contract(_))));
    }

    #[test]
    fn iou_cases() {
        let a = BinaryMask::from_fn(2, 2, |r, _| r == 0);
        let b = BinaryMask::from_fn(2, 2, |r, _| r == 1);
        let all = BinaryMask::from_fn(2, 2, |_, _| true);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
        assert_eq!(iou(&a, &all).unwrap(), 0.5);
        assert_eq!(iou(&BinaryMask::empty(2, 2), &BinaryMask::empty(2, 2)).unwrap(), 1.0);
        assert_eq!(iou(&BinaryMask::empty(2, 2), &a).unwrap(), 0.0);
        assert!(matches!(iou(&a, &BinaryMask::empty(1, 4)), Err(Error::Input(_))));
    }

    #[test]
    fn consistency_cases() {
        let a = BinaryMask::from_fn(3, 3, |r, _| r == 0);
        let b = BinaryMask::from_fn(3, 3, |r, _| r == 2);
        let same = vec![vec![from_mask(&a), from_mask(&b)]; 3];
        assert_eq!(consistency(&same, 0, 0.5).unwrap(), 1.0);
        let disjoint = vec![vec![from_mask(&a)], vec![from_mask(&b)], vec![from_mask(&b)]];
        assert_eq!(consistency(&disjoint, 0, 0.5).unwrap(), 0.0);
        // Reference excluded: runs 0 and 2 match reference 1 on half the images.
        let mixed = vec![
            vec![from_mask(&a), from_mask(&a)],
            vec![from_mask(&a), from_mask(&b)],
            vec![from_mask(&a), from_mask(&a)],
        ];
        assert_eq!(consistency(&mixed, 1, 0.5).unwrap(), 0.5);
        assert!(matches!(consistency(&same[..1], 0, 0.5), Err(Error::Contract(_))));
        assert!(matches!(consistency(&same, 3, 0.5), Err(Error::Input(_))));
    }

    #[test]
    fn faith_is_zero_for_constant_models_and_empty_heat() {
        let c = ModelConfig::preset("cnn-a", 16).unwrap();
        let mut p = ModelParams::init(&c, 3).unwrap();
        let x = Tensor::full([1, 16, 16], 0.5);
        let hot = heat(Tensor::full([16, 16], 0.8));
        let cold = heat(Tensor::zeros([16, 16]));
        for mode in [ScoreMode::Logit, ScoreMode::Probability] {
            for fill in [MaskFill::Multiplicative, MaskFill::DatasetMean(0.3)] {
                assert_eq!(faith_single(&p, &x, 1, &cold, mode, fill).unwrap(), 0.0);
            }
        }
        let head = p.head_index();
        for t in &mut p.layers_mut()[head] {
            t.data_mut().fill(0.0);
        }
        assert_eq!(
            faith_single(&p, &x, 1, &hot, ScoreMode::Probability, MaskFill::Multiplicative).unwrap(),
            0.0
        );
    }

    #[test]
    fn dataset_mean_fill_blends() {
        let x = Tensor::new([1, 1, 2], vec![1.0, 0.2]).unwrap();
        let l = Tensor::new([1, 2], vec![0.5, 1.0]).unwrap();
        assert_eq!(perturb(&x, &l, MaskFill::Multiplicative).unwrap().data(), &[0.5, 0.0]);
        assert_eq!(perturb(&x, &l, MaskFill::DatasetMean(0.4)).unwrap().data(), &[0.7, 0.4]);
        assert!(perturb(&x, &Tensor::zeros([2, 1]), MaskFill::Multiplicative).is_err());
    }
}
