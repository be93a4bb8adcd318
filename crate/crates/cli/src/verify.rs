//! The self-verification suites run by `gradfaith verify`.
//!
//! - `op-gradients`: every differentiable operator's backward rule against
//!   central differences on random instances.
//! - `model-gradients`: whole-model parameter gradients of every preset
//!   against an independent extended-precision evaluator.
//! - `gradcam-oracle`: channel weights against finite differences on the
//!   captured activation, raw-map nonnegativity, and logit-scale invariance.
//! - `analytic`: closed-form cases of the faithfulness and classification
//!   metrics.
//! - `formats`: bitwise container round trips and netpbm encoding.
//!
//! A failing check never aborts its suite; every failure is reported by name.

use gradfaith::autodiff::gradcheck::{random_op_cases, DIFFERENTIABLE_OPS};
use gradfaith::autodiff::{relative_error, GradCheckReport, OpKind};
use gradfaith::faithfulness::{
    classification_metrics, consistency, faith_single, iou, loc_acc, BinaryMask, ConfusionMatrix, MaskFill,
};
use gradfaith::gradcam::{channel_weights, explain, finite_diff_channel_weights, Heatmap, ScoreMode};
use gradfaith::models::{
    decode_params, encode_params, model_gradient_check, LayerKind, LayerSpec, ModelConfig, ModelParams, PRESETS,
};
use gradfaith::phantom::{decode_dataset, encode_dataset, generate, PhantomConfig};
use gradfaith::pnm;
use gradfaith::rng::SplitMix64;
use gradfaith::{Tensor, NUM_CLASSES};

/// Random instances per differentiable operator.
pub const OP_CASES: usize = 100;
/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;
/// Largest accepted entrywise relative error.
pub const TOLERANCE: f64 = 1e-5;
/// Tolerance for closed-form metric values.
pub const EXACT: f64 = 1e-12;
/// Heatmap change allowed when the logits are rescaled.
pub const SCALE_INVARIANCE_TOLERANCE: f64 = 1e-9;
/// Logit scale factors applied to the classifier head.
pub const LOGIT_SCALES: [f64; 3] = [0.1, 3.0, 100.0];
/// Side length of the inputs used for whole-model checks.
pub const MODEL_CHECK_SIZE: usize = 16;
/// Random (model, image) pairs checked for raw-map nonnegativity.
pub const RAW_MAP_PAIRS: usize = 100;
/// Multiplier applied to an operator's backward rule by `--inject-fault`.
pub const FAULT_FACTOR: f64 = 1.5;

const SEED: u64 = 0x5EED;

pub const SUITES: [&str; 5] = [
    "op-gradients",
    "model-gradients",
    "gradcam-oracle",
    "analytic",
    "formats",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub checks: Vec<Check>,
}

impl SuiteResult {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            checks: Vec::new(),
        }
    }

    fn record(&mut self, name: impl Into<String>, outcome: gradfaith::Result<(bool, String)>) {
        let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail,
        });
    }

    pub fn total(&self) -> usize {
        self.checks.len()
    }

    pub fn passed(&self) -> usize {
        self.checks.iter().filter(|c| c.passed).count()
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn gradient_outcome(report: &GradCheckReport) -> (bool, String) {
    (
        report.passes(TOLERANCE),
        format!("{} entries, max rel err {:.3e}", report.checked, report.max_rel_error),
    )
}

/// Runs the named suite; `fault` corrupts one operator's backward rule.
pub fn run_suite(name: &str, fault: Option<OpKind>) -> Option<SuiteResult> {
    Some(match name {
        "op-gradients" => op_gradients(fault),
        "model-gradients" => model_gradients(),
        "gradcam-oracle" => gradcam_oracle(),
        "analytic" => analytic(),
        "formats" => formats(),
        _ => return None,
    })
}

pub fn op_gradients(fault: Option<OpKind>) -> SuiteResult {
    let mut suite = SuiteResult::new("op-gradients");
    let fault = fault.map(|op| (op, FAULT_FACTOR));
    for op in DIFFERENTIABLE_OPS {
        let outcome = random_op_cases(op, OP_CASES, SEED).and_then(|cases| {
            let mut report = GradCheckReport::default();
            for case in &cases {
                report.merge(&case.check(FD_STEP, fault)?);
            }
            let (ok, detail) = gradient_outcome(&report);
            Ok((ok, format!("{} cases, {detail}", cases.len())))
        });
        suite.record(op.name(), outcome);
    }
    suite
}

fn random_image(rng: &mut SplitMix64, shape: [usize; 3]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.next_f64()).collect()).expect("shape matches data")
}

/// A preset at `size` with a centering offset fitted to random images, so
/// the offset is exercised by the check.
pub fn centered_preset(name: &str, size: usize, seed: u64) -> gradfaith::Result<ModelParams> {
    let config = ModelConfig::preset(name, size)?;
    let mut params = ModelParams::init(&config, seed)?;
    let mut rng = SplitMix64::derived(seed, &[size as u64, 0xCE]);
    let images: Vec<Tensor> = (0..4).map(|_| random_image(&mut rng, config.input_shape)).collect();
    params.fit_center(&images.iter().collect::<Vec<_>>())?;
    Ok(params)
}

pub fn model_gradients() -> SuiteResult {
    let mut suite = SuiteResult::new("model-gradients");
    for (i, preset) in PRESETS.into_iter().enumerate() {
        let outcome = centered_preset(preset, MODEL_CHECK_SIZE, SEED + i as u64).and_then(|params| {
            let mut rng = SplitMix64::derived(SEED, &[i as u64]);
            let x = random_image(&mut rng, params.config().input_shape);
            let label = i % NUM_CLASSES;
            Ok(gradient_outcome(&model_gradient_check(&params, &x, label, FD_STEP)?))
        });
        suite.record(format!("{preset} {0}x{0}", MODEL_CHECK_SIZE), outcome);
    }
    suite
}

fn named(kind: LayerKind, name: &str) -> LayerSpec {
    LayerSpec::named(kind, name)
}

fn conv(out_channels: usize, name: &str) -> LayerSpec {
    named(
        LayerKind::Conv {
            out_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
        },
        name,
    )
}

/// Small models whose capture layer outputs 4×6×6, with different layer
/// stacks between the capture and the logits.
pub fn oracle_models() -> Vec<ModelConfig> {
    let head = || {
        [
            named(LayerKind::GlobalAvgPool, "gap"),
            named(
                LayerKind::Dense {
                    out_features: NUM_CLASSES,
                },
                "fc",
            ),
        ]
    };
    let model = |label: &str, body: Vec<LayerSpec>, capture: &str| {
        let mut layers = body;
        layers.extend(head());
        ModelConfig {
            preset: label.to_string(),
            input_shape: [1, 6, 6],
            layers,
            num_classes: NUM_CLASSES,
            capture_layer: capture.to_string(),
        }
    };
    vec![
        model(
            "capture-then-pool",
            vec![conv(4, "conv1"), named(LayerKind::Relu, "relu1")],
            "relu1",
        ),
        model(
            "capture-then-conv",
            vec![
                conv(4, "conv1"),
                named(LayerKind::Relu, "relu1"),
                conv(5, "conv2"),
                named(LayerKind::Relu, "relu2"),
            ],
            "relu1",
        ),
        model(
            "pre-activation-capture",
            vec![
                conv(4, "conv1"),
                named(LayerKind::Relu, "relu1"),
                named(LayerKind::MaxPool { window: 2, stride: 2 }, "pool1"),
            ],
            "conv1",
        ),
    ]
}

fn alpha_agreement(params: &ModelParams, x: &Tensor) -> gradfaith::Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for mode in [ScoreMode::Logit, ScoreMode::Probability] {
        for c in 0..params.config().num_classes {
            let mut trace = params.forward_with_capture(x)?;
            let analytic = channel_weights(&mut trace, c, mode)?;
            let numeric = finite_diff_channel_weights(params, trace.captured_activation(), c, mode, FD_STEP)?;
            for (&a, &n) in analytic.alpha.iter().zip(&numeric.alpha) {
                worst = worst.max(relative_error(a, n));
                compared += 1;
            }
        }
    }
    Ok((
        worst <= TOLERANCE,
        format!("{compared} weights, max rel err {worst:.3e}"),
    ))
}

fn scale_head(params: &ModelParams, gamma: f64) -> ModelParams {
    let mut scaled = params.clone();
    let head = scaled.head_index();
    for t in &mut scaled.layers_mut()[head] {
        *t = t.scale(gamma);
    }
    scaled
}

pub fn gradcam_oracle() -> SuiteResult {
    let mut suite = SuiteResult::new("gradcam-oracle");
    for (i, config) in oracle_models().into_iter().enumerate() {
        for seed in 0..4u64 {
            let outcome = ModelParams::init(&config, seed).and_then(|params| {
                let mut rng = SplitMix64::derived(SEED, &[i as u64, seed]);
                alpha_agreement(&params, &random_image(&mut rng, config.input_shape))
            });
            suite.record(format!("alpha {} seed {seed}", config.preset), outcome);
        }
    }
    for (i, preset) in PRESETS.into_iter().enumerate() {
        let outcome = centered_preset(preset, MODEL_CHECK_SIZE, SEED + i as u64).and_then(|params| {
            let mut rng = SplitMix64::derived(SEED, &[0xA1, i as u64]);
            alpha_agreement(&params, &random_image(&mut rng, params.config().input_shape))
        });
        suite.record(format!("alpha {preset} {0}x{0}", MODEL_CHECK_SIZE), outcome);
    }
    let mut rng = SplitMix64::derived(SEED, &[0xA2]);
    let mut failing_pairs = Vec::new();
    let mut pair_error = None;
    for pair in 0..RAW_MAP_PAIRS {
        let preset = PRESETS[pair % PRESETS.len()];
        let mode = if pair % 2 == 0 {
            ScoreMode::Logit
        } else {
            ScoreMode::Probability
        };
        let outcome = centered_preset(preset, MODEL_CHECK_SIZE, pair as u64).and_then(|params| {
            let x = random_image(&mut rng, params.config().input_shape);
            let hm = explain(&params, &x, pair % NUM_CLASSES, mode)?;
            let nonneg = hm.raw.data().iter().all(|&v| v >= 0.0);
            let unit = hm.normalized.data().iter().all(|&v| (0.0..=1.0).contains(&v));
            Ok(nonneg && unit)
        });
        match outcome {
            Ok(true) => {}
            Ok(false) => failing_pairs.push(pair),
            Err(e) => pair_error = Some(format!("pair {pair}: {e}")),
        }
    }
    suite.record(
        format!("raw map nonnegative on {RAW_MAP_PAIRS} (model, image) pairs"),
        match pair_error {
            Some(e) => Ok((false, e)),
            None => Ok((failing_pairs.is_empty(), format!("failing pairs: {failing_pairs:?}"))),
        },
    );
    for (i, preset) in PRESETS.into_iter().enumerate() {
        let outcome = centered_preset(preset, MODEL_CHECK_SIZE, SEED + i as u64).and_then(|params| {
            let mut rng = SplitMix64::derived(SEED, &[0xA3, i as u64]);
            let x = random_image(&mut rng, params.config().input_shape);
            let base = explain(&params, &x, 1, ScoreMode::Logit)?;
            let mut worst: f64 = 0.0;
            for gamma in LOGIT_SCALES {
                let scaled = explain(&scale_head(&params, gamma), &x, 1, ScoreMode::Logit)?;
                worst = worst.max(base.normalized.max_abs_diff(&scaled.normalized)?);
            }
            Ok((
                worst <= SCALE_INVARIANCE_TOLERANCE,
                format!("max abs change {worst:.3e} over γ ∈ {LOGIT_SCALES:?}"),
            ))
        });
        suite.record(format!("logit-scale invariance {preset}"), outcome);
    }
    suite
}

/// A heatmap whose normalized map is given directly.
pub fn synthetic_heatmap(normalized: Tensor) -> Heatmap {
    Heatmap {
        raw: normalized.clone(),
        normalized,
        target_class: 0,
        capture_layer: "synthetic".into(),
        model_seed: 0,
        score_mode: ScoreMode::Logit,
    }
}

fn indicator(mask: &BinaryMask, inside: f64, outside: f64) -> Tensor {
    let (h, w) = mask.dims();
    let data = mask.bits().iter().map(|&b| if b { inside } else { outside }).collect();
    Tensor::new([h, w], data).expect("mask dims")
}

fn random_mask(rng: &mut SplitMix64, h: usize, w: usize, density: f64) -> BinaryMask {
    BinaryMask::from_fn(h, w, |_, _| rng.next_f64() < density)
}

fn random_nonempty_mask(rng: &mut SplitMix64, h: usize, w: usize) -> BinaryMask {
    loop {
        let density = rng.uniform(0.05, 0.6);
        let m = random_mask(rng, h, w, density);
        if !m.is_empty() && m.count() < h * w {
            return m;
        }
    }
}

fn close(value: f64, expected: f64) -> (bool, String) {
    (
        (value - expected).abs() <= EXACT,
        format!("got {value}, expected {expected}"),
    )
}

/// One-vs-rest metrics recounted straight from prediction/label lists.
fn brute_force(preds: &[usize], labels: &[usize], k: usize) -> (Vec<[f64; 5]>, f64) {
    let safe = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let per_class = (0..k)
        .map(|c| {
            let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
            for (&p, &y) in preds.iter().zip(labels) {
                match (y == c, p == c) {
                    (true, true) => tp += 1,
                    (true, false) => fn_ += 1,
                    (false, true) => fp += 1,
                    (false, false) => tn += 1,
                }
            }
            let sens = safe(tp, tp + fn_);
            let prec = safe(tp, tp + fp);
            let f1 = if prec + sens == 0.0 {
                0.0
            } else {
                2.0 * prec * sens / (prec + sens)
            };
            [sens, safe(tn, tn + fp), prec, sens, f1]
        })
        .collect();
    let correct = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    (per_class, safe(correct, preds.len()))
}

fn check_against_brute_force(preds: &[usize], labels: &[usize], k: usize) -> gradfaith::Result<f64> {
    let report = classification_metrics(&ConfusionMatrix::from_predictions(preds, labels, k)?);
    let (expected, accuracy) = brute_force(preds, labels, k);
    let mut worst = (report.accuracy - accuracy).abs();
    let mut macro_sum = [0.0; 5];
    for (got, want) in report.per_class.iter().zip(&expected) {
        let got = [got.sensitivity, got.specificity, got.precision, got.recall, got.f1];
        for j in 0..5 {
            worst = worst.max((got[j] - want[j]).abs());
            macro_sum[j] += want[j];
        }
    }
    let m = report.macro_avg;
    for (got, sum) in [m.sensitivity, m.specificity, m.precision, m.recall, m.f1]
        .iter()
        .zip(macro_sum)
    {
        worst = worst.max((got - sum / k as f64).abs());
    }
    Ok(worst)
}

pub fn analytic() -> SuiteResult {
    let mut suite = SuiteResult::new("analytic");
    let mut rng = SplitMix64::derived(SEED, &[0xB0]);
    let (h, w) = (12, 10);
    let masks: Vec<BinaryMask> = (0..20).map(|_| random_nonempty_mask(&mut rng, h, w)).collect();

    let covering: Vec<Heatmap> = masks
        .iter()
        .map(|m| synthetic_heatmap(indicator(m, 1.0, 0.0)))
        .collect();
    suite.record(
        "loc_acc = 1 on full coverage",
        loc_acc(&covering, &masks, 0.5).map(|r| close(r.value, 1.0)),
    );
    let disjoint: Vec<Heatmap> = masks
        .iter()
        .map(|m| synthetic_heatmap(indicator(m, 0.0, 1.0)))
        .collect();
    suite.record(
        "loc_acc = 0 on disjoint maps",
        loc_acc(&disjoint, &masks, 0.5).map(|r| close(r.value, 0.0)),
    );

    let mut worst_asym: f64 = 0.0;
    let mut in_bounds = true;
    let mut self_one = true;
    let outcome = (|| {
        for _ in 0..1000 {
            let (da, db) = (rng.next_f64(), rng.next_f64());
            let a = random_mask(&mut rng, h, w, da);
            let b = random_mask(&mut rng, h, w, db);
            let (ab, ba) = (iou(&a, &b)?, iou(&b, &a)?);
            worst_asym = worst_asym.max((ab - ba).abs());
            in_bounds &= (0.0..=1.0).contains(&ab);
            if !a.is_empty() {
                self_one &= iou(&a, &a)? == 1.0;
            }
        }
        Ok((
            worst_asym == 0.0 && in_bounds && self_one,
            format!("asymmetry {worst_asym:.1e}, bounded {in_bounds}, iou(a,a)=1 {self_one}"),
        ))
    })();
    suite.record("iou symmetric and in [0,1] on 1000 random pairs", outcome);

    let outcome = ModelConfig::preset("cnn-a", MODEL_CHECK_SIZE)
        .and_then(|c| ModelParams::init(&c, 3))
        .and_then(|mut params| {
            let head = params.head_index();
            params.layers_mut()[head][0] = params.layers()[head][0].scale(0.0);
            let x = random_image(&mut rng, params.config().input_shape);
            let heat = Tensor::new(
                [MODEL_CHECK_SIZE, MODEL_CHECK_SIZE],
                (0..MODEL_CHECK_SIZE * MODEL_CHECK_SIZE)
                    .map(|_| rng.next_f64())
                    .collect(),
            )?;
            let hm = synthetic_heatmap(heat);
            let mut worst: f64 = 0.0;
            for mode in [ScoreMode::Logit, ScoreMode::Probability] {
                for fill in [MaskFill::Multiplicative, MaskFill::DatasetMean(0.4)] {
                    for y in 0..NUM_CLASSES {
                        worst = worst.max(faith_single(&params, &x, y, &hm, mode, fill)?.abs());
                    }
                }
            }
            Ok((worst == 0.0, format!("max |faith| {worst:e}")))
        });
    suite.record("faith_single = 0 for a constant-output model", outcome);

    let run: Vec<Heatmap> = masks
        .iter()
        .map(|m| synthetic_heatmap(indicator(m, 0.9, 0.1)))
        .collect();
    suite.record(
        "consistency = 1 for identical runs",
        consistency(&[run.clone(), run.clone(), run.clone()], 0, 0.5).map(|v| close(v, 1.0)),
    );
    let opposite: Vec<Heatmap> = masks
        .iter()
        .map(|m| synthetic_heatmap(indicator(m, 0.1, 0.9)))
        .collect();
    suite.record(
        "consistency = 0 for runs disjoint from the reference",
        consistency(&[run, opposite.clone(), opposite], 0, 0.5).map(|v| close(v, 0.0)),
    );

    suite.record(
        "hand-computed confusion matrix",
        ConfusionMatrix::from_counts(3, vec![5, 0, 0, 0, 0, 5, 0, 0, 5]).map(|cm| {
            let r = classification_metrics(&cm);
            let ok = (r.accuracy - 10.0 / 15.0).abs() <= EXACT && r.per_class[1].sensitivity == 0.0;
            (
                ok,
                format!(
                    "accuracy {:.4}, class-1 sensitivity {}",
                    r.accuracy, r.per_class[1].sensitivity
                ),
            )
        }),
    );
    suite.record(
        "diagonal confusion matrix gives all ones",
        ConfusionMatrix::from_counts(3, vec![10, 0, 0, 0, 10, 0, 0, 0, 10]).map(|cm| {
            let r = classification_metrics(&cm);
            let m = r.macro_avg;
            let all = [m.sensitivity, m.specificity, m.precision, m.recall, m.f1, r.accuracy];
            (all.iter().all(|&v| v == 1.0), format!("{all:?}"))
        }),
    );
    let outcome = (|| {
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let n = 1 + (rng.next_u64() % 60) as usize;
            let labels: Vec<usize> = (0..n).map(|_| (rng.next_u64() % 3) as usize).collect();
            let preds: Vec<usize> = (0..n).map(|_| (rng.next_u64() % 3) as usize).collect();
            worst = worst.max(check_against_brute_force(&preds, &labels, 3)?);
        }
        Ok((worst <= EXACT, format!("max abs deviation {worst:.1e}")))
    })();
    suite.record(
        "classification metrics match a brute-force recount on 100 matrices",
        outcome,
    );
    suite
}

pub fn formats() -> SuiteResult {
    let mut suite = SuiteResult::new("formats");
    let outcome = generate(
        &PhantomConfig {
            per_class: 4,
            ..Default::default()
        },
        SEED,
    )
    .and_then(|d| {
        let bytes = encode_dataset(&d)?;
        let back = decode_dataset(&bytes)?;
        let again = encode_dataset(&back)?;
        Ok((back == d && again == bytes, format!("{} bytes", bytes.len())))
    });
    suite.record("dataset container round trip", outcome);
    for (i, preset) in PRESETS.into_iter().enumerate() {
        let outcome = centered_preset(preset, MODEL_CHECK_SIZE, SEED + i as u64).and_then(|p| {
            let bytes = encode_params(&p)?;
            let back = decode_params(&bytes)?;
            let again = encode_params(&back)?;
            Ok((back == p && again == bytes, format!("{} bytes", bytes.len())))
        });
        suite.record(format!("checkpoint round trip {preset}"), outcome);
    }
    let mut rng = SplitMix64::derived(SEED, &[0xC0]);
    let (w, h) = (7, 5);
    let gray: Vec<u8> = (0..w * h).map(|_| rng.next_u64() as u8).collect();
    let rgb: Vec<u8> = (0..3 * w * h).map(|_| rng.next_u64() as u8).collect();
    let outcome = pnm::encode_pgm(w, h, &gray).and_then(|b| {
        let img = pnm::decode(&b)?;
        let ok = img.kind == pnm::PnmKind::Gray
            && (img.width, img.height, img.maxval) == (w, h, 255)
            && img.samples.iter().map(|&s| s as u8).eq(gray.iter().copied());
        Ok((ok, format!("{} bytes", b.len())))
    });
    suite.record("PGM encode/decode", outcome);
    let outcome = pnm::encode_ppm(w, h, &rgb).and_then(|b| {
        let img = pnm::decode(&b)?;
        let ok = img.kind == pnm::PnmKind::Rgb
            && (img.width, img.height, img.maxval) == (w, h, 255)
            && img.samples.iter().map(|&s| s as u8).eq(rgb.iter().copied());
        Ok((ok, format!("{} bytes", b.len())))
    });
    suite.record("PPM encode/decode", outcome);
    let worst = (0..=10_000)
        .map(|i| {
            let v = i as f64 / 10_000.0;
            (v - f64::from(pnm::quantize(v)) / 255.0).abs()
        })
        .fold(0.0, f64::max);
    suite.record(
        "8-bit quantization within half a level",
        Ok((worst <= 0.5 / 255.0 + 1e-15, format!("max error {worst:.3e}"))),
    );
    suite
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_models_capture_4x6x6() {
        for c in oracle_models() {
            assert_eq!(c.validate().unwrap().capture_shape(), &[4, 6, 6], "{}", c.preset);
        }
    }

    #[test]
    fn fault_is_caught_and_named() {
        let suite = op_gradients(Some(OpKind::Relu));
        let failed: Vec<_> = suite.failures().map(|c| c.name.as_str()).collect();
        assert_eq!(failed, ["relu"]);
    }

    #[test]
    fn analytic_and_format_suites_pass() {
        for suite in [analytic(), formats()] {
            assert!(suite.all_passed(), "{:?}", suite.failures().collect::<Vec<_>>());
        }
    }
}
