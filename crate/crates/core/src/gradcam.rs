//! Grad-CAM: class-score gradients at the capture layer, averaged over space,
//! weight the captured channels; the rectified weighted sum is the coarse
//! localization map, which is then upsampled to input resolution and
//! min-max normalized.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{finite_diff_gradient, softmax, NodeId, Tape};
use crate::error::{Error, Result};
use crate::models::{ForwardTrace, ModelParams};
use crate::tensor::Tensor;

/// Which model output stands in for the class score `y^c`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    /// The raw logit (the original Grad-CAM convention).
    #[default]
    Logit,
    /// The softmax probability.
    Probability,
}

impl ScoreMode {
    pub fn name(self) -> &'static str {
        match self {
            ScoreMode::Logit => "logit",
            ScoreMode::Probability => "probability",
        }
    }

    /// Score of class `c` given the logits.
    pub fn score(self, logits: &[f64], c: usize) -> Result<f64> {
        check_class(c, logits.len())?;
        Ok(match self {
            ScoreMode::Logit => logits[c],
            ScoreMode::Probability => softmax(logits)[c],
        })
    }

    fn record(self, tape: &mut Tape, logits: NodeId, c: usize) -> Result<NodeId> {
        match self {
            ScoreMode::Logit => tape.select(logits, c),
            ScoreMode::Probability => {
                let p = tape.softmax(logits)?;
                tape.select(p, c)
            }
        }
    }
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logit" => Ok(ScoreMode::Logit),
            "probability" | "prob" => Ok(ScoreMode::Probability),
            other => Err(Error::input(format!(
                "unknown score mode {other:?} (logit or probability)"
            ))),
        }
    }
}

fn check_class(c: usize, k: usize) -> Result<()> {
    if c >= k {
        return Err(Error::input(format!("class {c} out of range for {k} classes")));
    }
    Ok(())
}

/// Per-channel weights `α_k^c`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelWeights {
    pub alpha: Vec<f64>,
    pub class: usize,
}

fn spatial_means(grad: &Tensor) -> Result<Vec<f64>> {
    let &[_, h, w] = grad.shape() else {
        return Err(Error::shape(format!(
            "capture gradient must be D×H'×W', got {:?}",
            grad.shape()
        )));
    };
    let n = (h * w) as f64;
    Ok(grad.data().chunks(h * w).map(|ch| ch.iter().sum::<f64>() / n).collect())
}

/// `α_k = (1/(H'W')) Σ_ij ∂score_c/∂A^k_ij`, by reverse mode on the trace's
/// tape. The tape must still be alive.
pub fn channel_weights(trace: &mut ForwardTrace, c: usize, mode: ScoreMode) -> Result<ChannelWeights> {
    check_class(c, trace.logits().len())?;
    let (logits, capture) = (trace.logits_node(), trace.capture_node());
    let tape = trace.tape_mut()?;
    let score = mode.record(tape, logits, c)?;
    let mut grads = tape.backward(score, &[capture])?;
    let grad = grads.take(capture).expect("capture gradient requested");
    Ok(ChannelWeights {
        alpha: spatial_means(&grad)?,
        class: c,
    })
}

/// The same weights from central differences of the score with respect to
/// every element of the captured activation, running only the layers after
/// the capture layer.
pub fn finite_diff_channel_weights(
    params: &ModelParams,
    activation: &Tensor,
    c: usize,
    mode: ScoreMode,
    h: f64,
) -> Result<ChannelWeights> {
    let grad = finite_diff_gradient(
        |a| {
            let z = params.logits_from_capture(a)?;
            mode.score(z.data(), c)
        },
        activation,
        h,
    )?;
    Ok(ChannelWeights {
        alpha: spatial_means(&grad)?,
        class: c,
    })
}

/// `ReLU(Σ_k α_k A^k)` as an `H'×W'` map.
pub fn raw_map(weights: &ChannelWeights, activation: &Tensor) -> Result<Tensor> {
    let &[d, h, w] = activation.shape() else {
        return Err(Error::shape(format!(
            "activation must be D×H'×W', got {:?}",
            activation.shape()
        )));
    };
    if weights.alpha.len() != d {
        return Err(Error::shape(format!(
            "{} channel weights for an activation with {d} channels",
            weights.alpha.len()
        )));
    }
    let mut map = vec![0.0; h * w];
    for (&a, channel) in weights.alpha.iter().zip(activation.data().chunks(h * w)) {
        for (m, &v) in map.iter_mut().zip(channel) {
            *m += a * v;
        }
    }
    for m in &mut map {
        *m = m.max(0.0);
    }
    Tensor::new([h, w], map)
}

/// Corner-aligned bilinear resampling of an `h×w` map to `height×width`
/// (`height >= h`, `width >= w`): output corners coincide with input corners.
pub fn upsample_bilinear(map: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let &[h, w] = map.shape() else {
        return Err(Error::shape(format!("map must be 2-D, got {:?}", map.shape())));
    };
    if height < h || width < w {
        return Err(Error::input(format!(
            "cannot upsample {h}×{w} to smaller {height}×{width}"
        )));
    }
    let coord = |i: usize, out: usize, inp: usize| -> (usize, usize, f64) {
        if out == 1 || inp == 1 {
            return (0, 0, 0.0);
        }
        let s = i as f64 * (inp - 1) as f64 / (out - 1) as f64;
        let i0 = (s.floor() as usize).min(inp - 2);
        (i0, i0 + 1, s - i0 as f64)
    };
    let src = map.data();
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        let (y0, y1, fy) = coord(y, height, h);
        for x in 0..width {
            let (x0, x1, fx) = coord(x, width, w);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Tensor::new([height, width], out)
}

/// `(v − min)/(max − min)`, or all zeros for a constant map.
pub fn normalize_minmax(map: &Tensor) -> Tensor {
    let lo = map.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return map.map(|_| 0.0);
    }
    let range = hi - lo;
    map.map(|v| (v - lo) / range)
}

/// A Grad-CAM explanation of one image for one class.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    /// Rectified weighted activation map at capture resolution (`H'×W'`).
    pub raw: Tensor,
    /// Upsampled to input resolution (`H×W`) and min-max normalized.
    pub normalized: Tensor,
    pub target_class: usize,
    pub capture_layer: String,
    pub model_seed: u64,
    pub score_mode: ScoreMode,
}

impl Heatmap {
    pub fn height(&self) -> usize {
        self.normalized.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.normalized.shape()[1]
    }
}

/// Builds the heatmap from a live trace, consuming its tape.
pub fn explain_trace(mut trace: ForwardTrace, input_hw: (usize, usize), c: usize, mode: ScoreMode) -> Result<Heatmap> {
    let weights = channel_weights(&mut trace, c, mode)?;
    trace.release_tape();
    let raw = raw_map(&weights, trace.captured_activation())?;
    let normalized = normalize_minmax(&upsample_bilinear(&raw, input_hw.0, input_hw.1)?);
    Ok(Heatmap {
        raw,
        normalized,
        target_class: c,
        capture_layer: trace.capture_layer().to_string(),
        model_seed: trace.model_seed(),
        score_mode: mode,
    })
}

/// Forward with capture → channel weights → raw map → upsample → normalize.
pub fn explain(params: &ModelParams, x: &Tensor, c: usize, mode: ScoreMode) -> Result<Heatmap> {
    let trace = params.forward_with_capture(x)?;
    let [_, h, w] = params.config().input_shape;
    explain_trace(trace, (h, w), c, mode)
}

/// Like [`explain`], targeting the predicted class; returns it too.
pub fn explain_predicted(params: &ModelParams, x: &Tensor, mode: ScoreMode) -> Result<(usize, Heatmap)> {
    let trace = params.forward_with_capture(x)?;
    let c = trace.logits().argmax();
    let [_, h, w] = params.config().input_shape;
    Ok((c, explain_trace(trace, (h, w), c, mode)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{LayerKind, LayerSpec, ModelConfig};
    use crate::rng::SplitMix64;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    fn image(seed: u64, h: usize, w: usize) -> Tensor {
        let mut rng = SplitMix64::new(seed);
        Tensor::new([1, h, w], (0..h * w).map(|_| rng.next_f64()).collect()).unwrap()
    }

    /// input → 1×1 conv with `d` channels (capture) → GAP → Dense(3).
    fn pointwise(d: usize) -> ModelConfig {
        ModelConfig {
            preset: "custom".into(),
            input_shape: [1, 4, 6],
            layers: vec![
                LayerSpec::named(
                    LayerKind::Conv {
                        out_channels: d,
                        kernel: 1,
                        stride: 1,
                        padding: 0,
                    },
                    "conv",
                ),
                LayerSpec::named(LayerKind::GlobalAvgPool, "gap"),
                LayerSpec::named(LayerKind::Dense { out_features: 3 }, "fc"),
            ],
            num_classes: 3,
            capture_layer: "conv".into(),
        }
    }

    #[test]
    fn gap_then_identity_dense_gives_uniform_weight_on_one_channel() {
        let mut p = ModelParams::init(&pointwise(3), 0).unwrap();
        let head = p.head_index();
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        p.layers_mut()[head][0] = t(&[3, 3], &eye);
        let mut trace = p.forward_with_capture(&image(1, 4, 6)).unwrap();
        let w = channel_weights(&mut trace, 1, ScoreMode::Logit).unwrap();
        let cell = 1.0 / 24.0;
        assert_eq!(w.alpha.len(), 3);
        for (k, &a) in w.alpha.iter().enumerate() {
            let want = if k == 1 { cell } else { 0.0 };
            assert!((a - want).abs() < 1e-15, "{k}: {a}");
        }
    }

    #[test]
    fn doubling_head_doubles_logit_weights() {
        let p = ModelParams::init(&pointwise(4), 2).unwrap();
        let mut q = p.clone();
        let head = q.head_index();
        q.layers_mut()[head][0] = q.layers()[head][0].scale(2.0);
        let x = image(3, 4, 6);
        let a = channel_weights(&mut p.forward_with_capture(&x).unwrap(), 0, ScoreMode::Logit).unwrap();
        let b = channel_weights(&mut q.forward_with_capture(&x).unwrap(), 0, ScoreMode::Logit).unwrap();
        for (x, y) in a.alpha.iter().zip(&b.alpha) {
            assert!((2.0 * x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn dead_tape_and_bad_class() {
        let p = ModelParams::init(&pointwise(2), 2).unwrap();
        let mut trace = p.forward_with_capture(&image(3, 4, 6)).unwrap();
        assert!(matches!(
            channel_weights(&mut trace, 3, ScoreMode::Logit),
            Err(Error::Input(_))
        ));
        trace.release_tape();
        assert!(matches!(
            channel_weights(&mut trace, 0, ScoreMode::Logit),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn raw_map_cases() {
        let a = t(&[2, 1, 3], &[1.0, 2.0, 0.0, 1.0, 2.0, 0.0]);
        let neg = ChannelWeights {
            alpha: vec![-1.0, -0.5],
            class: 0,
        };
        assert!(raw_map(&neg, &a).unwrap().data().iter().all(|&v| v == 0.0));
        let cancel = ChannelWeights {
            alpha: vec![1.0, -1.0],
            class: 0,
        };
        assert!(raw_map(&cancel, &a).unwrap().data().iter().all(|&v| v == 0.0));
        let single = ChannelWeights {
            alpha: vec![1.0],
            class: 0,
        };
        let a0 = t(&[1, 1, 3], &[-1.0, 0.5, 2.0]);
        assert_eq!(raw_map(&single, &a0).unwrap().data(), &[0.0, 0.5, 2.0]);
    }

    #[test]
    fn bilinear_cases() {
        let m = t(&[2, 2], &[0.0, 1.0, 0.0, 1.0]);
        let up = upsample_bilinear(&m, 2, 4).unwrap();
        for row in up.data().chunks(4) {
            for (v, want) in row.iter().zip([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]) {
                assert!((v - want).abs() < 1e-15);
            }
        }
        let c = Tensor::full([3, 2], 0.7);
        assert!(upsample_bilinear(&c, 7, 5)
            .unwrap()
            .data()
            .iter()
            .all(|&v| (v - 0.7).abs() < 1e-15));
        let r = t(&[2, 3], &[1.0, 5.0, 2.0, 0.0, 3.0, 4.0]);
        assert_eq!(upsample_bilinear(&r, 2, 3).unwrap(), r);
        assert!(upsample_bilinear(&r, 1, 3).is_err());
    }

    #[test]
    fn minmax_cases() {
        assert_eq!(
            normalize_minmax(&Tensor::vector(&[2.0, 4.0, 6.0])).data(),
            &[0.0, 0.5, 1.0]
        );
        assert!(normalize_minmax(&Tensor::full([3], 5.0))
            .data()
            .iter()
            .all(|&v| v == 0.0));
        let once = normalize_minmax(&t(&[2, 2], &[0.3, -1.0, 7.0, 2.0]));
        assert_eq!(normalize_minmax(&once), once);
    }

    #[test]
    fn explain_is_deterministic_and_bounded() {
        let c = ModelConfig::preset("cnn-a", 16).unwrap();
        let p = ModelParams::init(&c, 5).unwrap();
        let x = image(8, 16, 16);
        let a = explain(&p, &x, 2, ScoreMode::Logit).unwrap();
        assert_eq!(a, explain(&p, &x, 2, ScoreMode::Logit).unwrap());
        assert_eq!(a.normalized.shape(), &[16, 16]);
        assert_eq!(a.raw.shape(), &[4, 4]);
        assert!(a.raw.data().iter().all(|&v| v >= 0.0));
        assert!(a.normalized.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(a.capture_layer, "relu3");
        assert_eq!(a.model_seed, 5);
    }

    #[test]
    fn pointwise_capture_map_is_monotone_in_the_input() {
        // One 1×1 conv channel with positive weight as the capture layer and
        // a head favouring class 0: the map is an increasing affine function
        // of the pixel values (before clipping), so pixel order is preserved.
        let mut p = ModelParams::init(&pointwise(1), 0).unwrap();
        p.layers_mut()[0][0] = t(&[1, 1, 1, 1], &[1.5]);
        p.layers_mut()[0][1] = t(&[1], &[0.0]);
        let head = p.head_index();
        p.layers_mut()[head][0] = t(&[1, 3], &[1.0, 0.0, 0.0]);
        let x = image(4, 4, 6);
        let hm = explain(&p, &x, 0, ScoreMode::Logit).unwrap();
        let (xs, hs) = (x.data(), hm.normalized.data());
        for i in 0..xs.len() {
            for j in 0..xs.len() {
                if xs[i] < xs[j] {
                    assert!(hs[i] <= hs[j]);
                }
            }
        }
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (&h, &v) in hs.iter().zip(xs) {
            assert!((h - (v - lo) / (hi - lo)).abs() < 1e-12);
        }
    }

    #[test]
    fn finite_difference_weights_agree() {
        let c = ModelConfig::preset("cnn-a", 16).unwrap();
        let p = ModelParams::init(&c, 1).unwrap();
        let mut trace = p.forward_with_capture(&image(2, 16, 16)).unwrap();
        for mode in [ScoreMode::Logit, ScoreMode::Probability] {
            let a = channel_weights(&mut trace, 1, mode).unwrap();
            let b = finite_diff_channel_weights(&p, trace.captured_activation(), 1, mode, 1e-6).unwrap();
            for (x, y) in a.alpha.iter().zip(&b.alpha) {
                assert!(crate::autodiff::relative_error(*x, *y) < 1e-5, "{mode}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn score_mode_parsing() {
        assert_eq!("Logit".parse::<ScoreMode>().unwrap(), ScoreMode::Logit);
        assert_eq!("probability".parse::<ScoreMode>().unwrap(), ScoreMode::Probability);
        assert!("margin".parse::<ScoreMode>().is_err());
    }
}
