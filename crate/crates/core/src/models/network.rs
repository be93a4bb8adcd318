use super::config::LayerKind;
use super::params::ModelParams;
use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, PartialEq, Eq)]
enum ParamMode {
    /// Parameters are differentiable leaves.
    Trainable,
    /// Parameters are constants.
    Frozen,
}

struct Recording {
    logits: NodeId,
    capture: Option<NodeId>,
    params: Vec<Vec<NodeId>>,
}

fn layer_forward(tape: &mut Tape, kind: &LayerKind, x: NodeId, p: &[NodeId]) -> Result<NodeId> {
    match *kind {
        LayerKind::Center => tape.sub(x, p[0]),
        LayerKind::Conv { stride, padding, .. } => tape.conv2d(x, p[0], p[1], stride, padding),
        LayerKind::Relu => tape.relu(x),
        LayerKind::MaxPool { window, stride } => tape.max_pool2d(x, window, stride),
        LayerKind::GlobalAvgPool => tape.global_avg_pool(x),
        LayerKind::Dense { .. } => tape.dense(x, p[0], p[1]),
        LayerKind::PatchEmbed { patch_size, .. } => {
            let tokens = tape.conv2d(x, p[0], p[1], patch_size, 0)?;
            tape.add(tokens, p[2])
        }
        LayerKind::DenseBlock { kernel, .. } => {
            let y = tape.conv2d(x, p[0], p[1], 1, kernel / 2)?;
            let y = tape.relu(y)?;
            tape.concat(x, y)
        }
        LayerKind::AttentionBlock { embed_dim } => attention_block(tape, x, p, embed_dim),
    }
}

/// Pre-norm single-head attention + MLP on an `E×h×w` token grid.
fn attention_block(tape: &mut Tape, x: NodeId, p: &[NodeId], e: usize) -> Result<NodeId> {
    let grid = tape.value(x).shape().to_vec();
    let t = grid[1] * grid[2];
    let flat = tape.reshape(x, &[e, t])?;
    let tokens = tape.transpose(flat)?; // [T, E]

    let h = tape.layer_norm(tokens)?;
    let q = tape.dense(h, p[0], p[1])?;
    let k = tape.dense(h, p[2], p[3])?;
    let v = tape.dense(h, p[4], p[5])?;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (e as f64).sqrt())?;
    let weights = tape.softmax(scores)?;
    let mixed = tape.matmul(weights, v)?;
    let attended = tape.dense(mixed, p[6], p[7])?;
    let r1 = tape.add(tokens, attended)?;

    let h2 = tape.layer_norm(r1)?;
    let m = tape.dense(h2, p[8], p[9])?;
    let m = tape.relu(m)?;
    let m = tape.dense(m, p[10], p[11])?;
    let r2 = tape.add(r1, m)?;

    let back = tape.transpose(r2)?;
    tape.reshape(back, &grid)
}

impl ModelParams {
    /// Records layers `from..` on `tape`, starting from node `x`.
    fn record(
        &self,
        tape: &mut Tape,
        x: NodeId,
        from: usize,
        mode: ParamMode,
        watch: Option<usize>,
    ) -> Result<Recording> {
        let mut params = Vec::with_capacity(self.layers().len());
        let mut h = x;
        let mut capture = None;
        for (i, (spec, tensors)) in self.config().layers.iter().zip(self.layers()).enumerate() {
            if i < from {
                params.push(Vec::new());
                continue;
            }
            let ids: Vec<NodeId> = tensors
                .iter()
                .map(|t| match mode {
                    ParamMode::Trainable => tape.leaf(t.clone()),
                    ParamMode::Frozen => tape.constant(t.clone()),
                })
                .collect();
            h = layer_forward(tape, &spec.kind, h, &ids)?;
            if watch == Some(i) {
                tape.watch(h)?;
                capture = Some(h);
            }
            params.push(ids);
        }
        Ok(Recording {
            logits: h,
            capture,
            params,
        })
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.config().input_shape {
            return Err(Error::input(format!(
                "input shape {:?} does not match model input {:?}",
                x.shape(),
                self.config().input_shape
            )));
        }
        Ok(())
    }

    fn capture_index(&self) -> Result<usize> {
        Ok(self.config().validate()?.capture_index)
    }

    /// Logits `f_θ(x)` for one `C×H×W` input.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let input = tape.constant(x.clone());
        let rec = self.record(&mut tape, input, 0, ParamMode::Frozen, None)?;
        Ok(tape.value(rec.logits).clone())
    }

    /// Forward pass that keeps the tape and exposes the capture layer's
    /// activation as a gradient target.
    pub fn forward_with_capture(&self, x: &Tensor) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let capture_index = self.capture_index()?;
        let mut tape = Tape::new();
        let input = tape.constant(x.clone());
        let rec = self.record(&mut tape, input, 0, ParamMode::Frozen, Some(capture_index))?;
        let capture = rec.capture.expect("capture layer recorded");
        Ok(ForwardTrace {
            logits_value: tape.value(rec.logits).clone(),
            capture_value: tape.value(capture).clone(),
            logits: rec.logits,
            capture,
            tape: Some(tape),
            capture_layer: self.config().capture_layer.clone(),
            seed: self.seed(),
        })
    }

    /// Logits from a given capture-layer activation, running only the layers
    /// after the capture layer.
    pub fn logits_from_capture(&self, activation: &Tensor) -> Result<Tensor> {
        let report = self.config().validate()?;
        if activation.shape() != report.capture_shape() {
            return Err(Error::input(format!(
                "activation shape {:?} does not match capture shape {:?}",
                activation.shape(),
                report.capture_shape()
            )));
        }
        let mut tape = Tape::new();
        let a = tape.constant(activation.clone());
        let rec = self.record(&mut tape, a, report.capture_index + 1, ParamMode::Frozen, None)?;
        Ok(tape.value(rec.logits).clone())
    }

    /// Argmax of the logits; the lowest class index wins exact ties.
    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(self.forward(x)?.argmax())
    }

    /// Cross-entropy loss for `(x, label)` and its gradient with respect to
    /// every parameter, grouped like [`ModelParams::layers`].
    pub fn loss_and_gradients(&self, x: &Tensor, label: usize) -> Result<(f64, Vec<Vec<Tensor>>)> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let input = tape.constant(x.clone());
        let rec = self.record(&mut tape, input, 0, ParamMode::Trainable, None)?;
        let loss = tape.cross_entropy(rec.logits, label)?;
        let wrt: Vec<NodeId> = rec.params.iter().flatten().copied().collect();
        let mut grads = tape.backward(loss, &wrt)?;
        let grouped = rec
            .params
            .iter()
            .map(|ids| {
                ids.iter()
                    .map(|&id| grads.take(id).expect("requested gradient"))
                    .collect()
            })
            .collect();
        Ok((tape.value(loss).item()?, grouped))
    }

    /// Cross-entropy loss only.
    pub fn loss(&self, x: &Tensor, label: usize) -> Result<f64> {
        let logits = self.forward(x)?;
        let mut tape = Tape::new();
        let z = tape.constant(logits);
        let l = tape.cross_entropy(z, label)?;
        tape.value(l).item()
    }
}

/// Result of [`ModelParams::forward_with_capture`]: logits, the captured
/// activation `A` (D×H'×W'), and the live tape for a later backward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    tape: Option<Tape>,
    logits: NodeId,
    capture: NodeId,
    logits_value: Tensor,
    capture_value: Tensor,
    capture_layer: String,
    seed: u64,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Tensor {
        &self.logits_value
    }

    pub fn captured_activation(&self) -> &Tensor {
        &self.capture_value
    }

    pub fn capture_layer(&self) -> &str {
        &self.capture_layer
    }

    pub fn model_seed(&self) -> u64 {
        self.seed
    }

    pub fn logits_node(&self) -> NodeId {
        self.logits
    }

    pub fn capture_node(&self) -> NodeId {
        self.capture
    }

    pub fn is_alive(&self) -> bool {
        self.tape.is_some()
    }

    /// Drops the tape; later gradient requests fail with a contract error.
    pub fn release_tape(&mut self) {
        self.tape = None;
    }

    pub fn tape_mut(&mut self) -> Result<&mut Tape> {
        self.tape
            .as_mut()
            .ok_or_else(|| Error::contract("forward trace tape has been released"))
    }
}

/// Patch embedding without the position table: `[C,H,W]` → `[T,E]` token
/// rows in row-major patch order. Used to check the token-grid reshape.
pub fn patch_tokens(weight: &Tensor, bias: &Tensor, x: &Tensor, patch_size: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (xi, wi, bi) = (
        tape.constant(x.clone()),
        tape.constant(weight.clone()),
        tape.constant(bias.clone()),
    );
    let grid = tape.conv2d(xi, wi, bi, patch_size, 0)?;
    let shape = tape.value(grid).shape().to_vec();
    let flat = tape.reshape(grid, &[shape[0], shape[1] * shape[2]])?;
    let tokens = tape.transpose(flat)?;
    Ok(tape.value(tokens).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{LayerSpec, ModelConfig, PRESETS};
    use crate::rng::SplitMix64;

    fn random_image(seed: u64, size: usize) -> Tensor {
        let mut rng = SplitMix64::new(seed);
        Tensor::new([1, size, size], (0..size * size).map(|_| rng.next_f64()).collect()).unwrap()
    }

    #[test]
    fn presets_produce_finite_logits() {
        for name in PRESETS {
            let c = ModelConfig::preset(name, 32).unwrap();
            let p = ModelParams::init(&c, 1).unwrap();
            let z = p.forward(&random_image(2, 32)).unwrap();
            assert_eq!(z.shape(), &[3]);
            assert!(z.is_finite(), "{name}");
        }
    }

    #[test]
    fn zero_head_gives_uniform_softmax() {
        let c = ModelConfig::preset("cnn-a", 32).unwrap();
        let mut p = ModelParams::init(&c, 1).unwrap();
        let head = p.head_index();
        for t in &mut p.layers_mut()[head] {
            t.data_mut().fill(0.0);
        }
        let z = p.forward(&random_image(9, 32)).unwrap();
        let probs = crate::autodiff::softmax(z.data());
        for q in probs {
            assert!((q - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn capture_shape_after_second_pool() {
        let c = ModelConfig::preset("cnn-a", 64).unwrap();
        let p = ModelParams::init(&c, 1).unwrap();
        let trace = p.forward_with_capture(&random_image(4, 64)).unwrap();
        assert_eq!(trace.captured_activation().shape(), &[16, 16, 16]);
    }

    #[test]
    fn wrong_input_shape_is_an_input_error() {
        let c = ModelConfig::preset("cnn-a", 32).unwrap();
        let p = ModelParams::init(&c, 1).unwrap();
        assert!(matches!(p.forward(&random_image(1, 16)), Err(Error::Input(_))));
    }

    #[test]
    fn tail_reproduces_full_forward() {
        for name in PRESETS {
            let c = ModelConfig::preset(name, 32).unwrap();
            let p = ModelParams::init(&c, 3).unwrap();
            let x = random_image(5, 32);
            let trace = p.forward_with_capture(&x).unwrap();
            let tail = p.logits_from_capture(trace.captured_activation()).unwrap();
            assert_eq!(&tail, trace.logits(), "{name}");
        }
    }

    #[test]
    fn runtime_shapes_match_validation() {
        for name in PRESETS {
            let c = ModelConfig::preset(name, 32).unwrap();
            let report = c.validate().unwrap();
            let p = ModelParams::init(&c, 3).unwrap();
            let mut tape = Tape::new();
            let x = tape.constant(random_image(1, 32));
            let mut h = x;
            for (i, (spec, tensors)) in c.layers.iter().zip(p.layers()).enumerate() {
                let ids: Vec<NodeId> = tensors.iter().map(|t| tape.constant(t.clone())).collect();
                h = layer_forward(&mut tape, &spec.kind, h, &ids).unwrap();
                assert_eq!(
                    tape.value(h).shape(),
                    report.layers[i].output.as_slice(),
                    "{name} layer {i}"
                );
            }
        }
    }

    #[test]
    fn released_tape_is_a_contract_error() {
        let c = ModelConfig::preset("cnn-a", 16).unwrap();
        let p = ModelParams::init(&c, 3).unwrap();
        let mut trace = p.forward_with_capture(&random_image(1, 16)).unwrap();
        trace.release_tape();
        assert!(matches!(trace.tape_mut(), Err(Error::Contract(_))));
    }

    #[test]
    fn logits_ignore_regions_no_kernel_reads() {
        // A 3×3 valid conv with only the top-left tap nonzero never reads the
        // last two rows/columns of the input.
        let c = ModelConfig {
            preset: "custom".into(),
            input_shape: [1, 8, 8],
            layers: vec![
                LayerSpec::named(
                    LayerKind::Conv {
                        out_channels: 2,
                        kernel: 3,
                        stride: 1,
                        padding: 0,
                    },
                    "conv",
                ),
                LayerSpec::named(LayerKind::Relu, "relu"),
                LayerSpec::named(LayerKind::GlobalAvgPool, "gap"),
                LayerSpec::named(LayerKind::Dense { out_features: 3 }, "fc"),
            ],
            num_classes: 3,
            capture_layer: "relu".into(),
        };
        let mut p = ModelParams::init(&c, 4).unwrap();
        let w = &mut p.layers_mut()[0][0];
        for (i, v) in w.data_mut().iter_mut().enumerate() {
            if i % 9 != 0 {
                *v = 0.0;
            }
        }
        let x = random_image(7, 8);
        let mut y = x.clone();
        for r in 0..8 {
            for col in 0..8 {
                if r >= 6 || col >= 6 {
                    y.data_mut()[r * 8 + col] = 123.0;
                }
            }
        }
        assert_eq!(p.forward(&x).unwrap(), p.forward(&y).unwrap());
    }
}
