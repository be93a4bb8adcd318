use super::config::{LayerKind, ModelConfig};
use crate::error::{Error, Result};
use crate::rng::{stream, SplitMix64};
use crate::tensor::Tensor;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Clone, Copy, Debug)]
enum Init {
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
}

struct ParamSpec {
    name: &'static str,
    shape: Vec<usize>,
    init: Init,
}

fn glorot(name: &'static str, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> ParamSpec {
    ParamSpec {
        name,
        shape,
        init: Init::Glorot { fan_in, fan_out },
    }
}

fn zeros(name: &'static str, shape: Vec<usize>) -> ParamSpec {
    ParamSpec {
        name,
        shape,
        init: Init::Zeros,
    }
}

/// Parameters a layer owns, given its input shape.
fn layer_params(kind: &LayerKind, input: &[usize]) -> Vec<ParamSpec> {
    match *kind {
        LayerKind::Center => vec![zeros("mean", input.to_vec())],
        LayerKind::Conv {
            out_channels: d,
            kernel: k,
            ..
        } => {
            let c = input[0];
            vec![
                glorot("weight", vec![d, c, k, k], c * k * k, d * k * k),
                zeros("bias", vec![d]),
            ]
        }
        LayerKind::DenseBlock { growth: g, kernel: k } => {
            let c = input[0];
            vec![
                glorot("weight", vec![g, c, k, k], c * k * k, g * k * k),
                zeros("bias", vec![g]),
            ]
        }
        LayerKind::Dense { out_features } => {
            let n_in = input[0];
            vec![
                glorot("weight", vec![n_in, out_features], n_in, out_features),
                zeros("bias", vec![out_features]),
            ]
        }
        LayerKind::PatchEmbed {
            patch_size: p,
            embed_dim: e,
        } => {
            let (c, gh, gw) = (input[0], input[1] / p, input[2] / p);
            vec![
                glorot("weight", vec![e, c, p, p], c * p * p, e * p * p),
                zeros("bias", vec![e]),
                glorot("pos", vec![e, gh, gw], gh * gw, e),
            ]
        }
        LayerKind::AttentionBlock { embed_dim: e } => vec![
            glorot("q_weight", vec![e, e], e, e),
            zeros("q_bias", vec![e]),
            glorot("k_weight", vec![e, e], e, e),
            zeros("k_bias", vec![e]),
            glorot("v_weight", vec![e, e], e, e),
            zeros("v_bias", vec![e]),
            glorot("o_weight", vec![e, e], e, e),
            zeros("o_bias", vec![e]),
            glorot("mlp1_weight", vec![e, 2 * e], e, 2 * e),
            zeros("mlp1_bias", vec![2 * e]),
            glorot("mlp2_weight", vec![2 * e, e], 2 * e, e),
            zeros("mlp2_bias", vec![e]),
        ],
        LayerKind::Relu | LayerKind::MaxPool { .. } | LayerKind::GlobalAvgPool => vec![],
    }
}

/// Trainable parameters θ of a model, grouped per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    seed: u64,
    layers: Vec<Vec<Tensor>>,
}

/// A parameter's qualified name and shape.
pub type ParamShape = (String, Vec<usize>);

impl ModelParams {
    /// Glorot-uniform weights and zero biases, drawn layer by layer in
    /// row-major order from one stream derived from `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let report = config.validate()?;
        let mut rng = SplitMix64::derived(seed, &[stream::INIT]);
        let mut layers = Vec::with_capacity(config.layers.len());
        for (i, spec) in config.layers.iter().enumerate() {
            let input = report.input_of(i, &config.input_shape);
            let tensors = layer_params(&spec.kind, &input)
                .into_iter()
                .map(|p| {
                    let n: usize = p.shape.iter().product();
                    let data = match p.init {
                        Init::Zeros => vec![0.0; n],
                        Init::Glorot { fan_in, fan_out } => {
                            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                            (0..n).map(|_| rng.uniform(-bound, bound)).collect()
                        }
                    };
                    Tensor::new(p.shape, data)
                })
                .collect::<Result<Vec<_>>>()?;
            layers.push(tensors);
        }
        Ok(Self {
            config: config.clone(),
            seed,
            layers,
        })
    }

    /// Parameters from explicit tensors; shapes must match the config.
    pub fn from_tensors(config: &ModelConfig, seed: u64, layers: Vec<Vec<Tensor>>) -> Result<Self> {
        let expected = Self::expected_shapes(config)?;
        if layers.len() != expected.len() {
            return Err(Error::shape(format!(
                "{} parameter groups for {} layers",
                layers.len(),
                expected.len()
            )));
        }
        for (i, (got, want)) in layers.iter().zip(&expected).enumerate() {
            let got_shapes: Vec<(String, Vec<usize>)> = got
                .iter()
                .zip(want)
                .map(|(t, (n, _))| (n.clone(), t.shape().to_vec()))
                .collect();
            if got.len() != want.len() || got_shapes != *want {
                return Err(Error::shape(format!(
                    "layer {i} parameters {:?} do not match expected {want:?}",
                    got.iter().map(|t| t.shape().to_vec()).collect::<Vec<_>>()
                )));
            }
        }
        Ok(Self {
            config: config.clone(),
            seed,
            layers,
        })
    }

    /// `(qualified name, shape)` of every parameter, grouped per layer.
    pub fn expected_shapes(config: &ModelConfig) -> Result<Vec<Vec<ParamShape>>> {
        let report = config.validate()?;
        let names = config.layer_names();
        Ok(config
            .layers
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                layer_params(&spec.kind, &report.input_of(i, &config.input_shape))
                    .into_iter()
                    .map(|p| (format!("{}.{}", names[i], p.name), p.shape))
                    .collect()
            })
            .collect())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// FNV-1a of the config descriptor.
    pub fn fingerprint(&self) -> u64 {
        fnv1a64(self.config.descriptor().as_bytes())
    }

    pub fn layers(&self) -> &[Vec<Tensor>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Vec<Tensor>] {
        &mut self.layers
    }

    /// Sets the `center` layer's offset to the pixelwise mean of `images`.
    /// Returns false (and changes nothing) when the model has no such layer.
    pub fn fit_center(&mut self, images: &[&Tensor]) -> Result<bool> {
        if self.config.layers.first().map(|l| &l.kind) != Some(&LayerKind::Center) {
            return Ok(false);
        }
        if images.is_empty() {
            return Err(Error::input("cannot fit a mean image from zero images"));
        }
        let shape = self.config.input_shape;
        let mut mean = vec![0.0; shape.iter().product()];
        for x in images {
            if x.shape() != shape {
                return Err(Error::input(format!(
                    "image shape {:?} does not match model input {shape:?}",
                    x.shape()
                )));
            }
            for (m, &v) in mean.iter_mut().zip(x.data()) {
                *m += v;
            }
        }
        let n = images.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        self.layers[0][0] = Tensor::new(shape, mean)?;
        Ok(true)
    }

    /// Flat `(qualified name, tensor)` list in layer order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let names = self.config.layer_names();
        self.layers
            .iter()
            .zip(&self.config.layers)
            .enumerate()
            .flat_map(|(i, (tensors, spec))| {
                let input_dummy = param_names(&spec.kind);
                let layer = names[i].clone();
                tensors
                    .iter()
                    .zip(input_dummy)
                    .map(move |(t, n)| (format!("{layer}.{n}"), t))
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().flatten().map(Tensor::len).sum()
    }

    /// Index of the last `Dense` layer (the classifier head).
    pub fn head_index(&self) -> usize {
        self.config.layers.len() - 1
    }
}

fn param_names(kind: &LayerKind) -> Vec<&'static str> {
    // Shapes are irrelevant for naming; a 1×1×1 probe input keeps every
    // variant constructible.
    layer_params(kind, &[1, 1, 1]).into_iter().map(|p| p.name).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let c = ModelConfig::preset("cnn-a", 32).unwrap();
        let a = ModelParams::init(&c, 7).unwrap();
        let b = ModelParams::init(&c, 7).unwrap();
        assert_eq!(a, b);
        let bits = |p: &ModelParams| -> Vec<u64> {
            p.layers()
                .iter()
                .flatten()
                .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
        let c8 = ModelParams::init(&c, 8).unwrap();
        assert_ne!(bits(&a), bits(&c8));
    }

    #[test]
    fn biases_start_at_zero() {
        let c = ModelConfig::preset("tiny-vit", 32).unwrap();
        let p = ModelParams::init(&c, 1).unwrap();
        for (name, t) in p.named_tensors() {
            if name.ends_with("bias") {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn glorot_sample_mean_within_three_sigma() {
        use crate::models::LayerSpec;
        // Dense 128 -> 100 holds 12,800 weights drawn from U(-b, b).
        let c = ModelConfig {
            preset: "custom".into(),
            input_shape: [1, 4, 4],
            layers: vec![
                LayerSpec::named(
                    LayerKind::Conv {
                        out_channels: 128,
                        kernel: 1,
                        stride: 1,
                        padding: 0,
                    },
                    "wide_conv",
                ),
                LayerSpec::named(LayerKind::GlobalAvgPool, "gap"),
                LayerSpec::named(LayerKind::Dense { out_features: 100 }, "wide"),
                LayerSpec::named(LayerKind::Dense { out_features: 3 }, "fc"),
            ],
            num_classes: 3,
            capture_layer: "wide_conv".into(),
        };
        let p = ModelParams::init(&c, 5).unwrap();
        let w = &p.layers()[2][0];
        assert_eq!(w.len(), 12_800);
        let bound = (6.0 / 228.0_f64).sqrt();
        let mean = w.sum() / w.len() as f64;
        let sigma_mean = bound / 3f64.sqrt() / (w.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma_mean, "mean {mean}, 3σ {}", 3.0 * sigma_mean);
        assert!(w.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn initialized_weights_respect_glorot_bound() {
        let c = ModelConfig::preset("cnn-a", 32).unwrap();
        let p = ModelParams::init(&c, 3).unwrap();
        let w = &p.layers()[1][0]; // conv1: 1 -> 8, k=3
        let bound = (6.0 / (9.0 + 72.0_f64)).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn fit_center_takes_the_pixelwise_mean() {
        let c = ModelConfig::preset("cnn-a", 8).unwrap();
        let mut p = ModelParams::init(&c, 1).unwrap();
        assert!(p.layers()[0][0].data().iter().all(|&v| v == 0.0));
        let a = Tensor::full([1, 8, 8], 0.25);
        let b = Tensor::full([1, 8, 8], 0.75);
        assert!(p.fit_center(&[&a, &b]).unwrap());
        assert!(p.layers()[0][0].data().iter().all(|&v| v == 0.5));
        assert!(p.fit_center(&[]).is_err());
        assert!(p.fit_center(&[&Tensor::zeros([1, 4, 4])]).is_err());
        // The centered model sees `x − mean`: a shifted input and a shifted
        // mean give identical logits.
        let x = Tensor::full([1, 8, 8], 0.9);
        let mut q = p.clone();
        q.layers_mut()[0][0] = Tensor::full([1, 8, 8], 0.6);
        let shifted = Tensor::full([1, 8, 8], 1.0);
        assert_eq!(p.forward(&x).unwrap(), q.forward(&shifted).unwrap());
    }

    #[test]
    fn named_tensors_are_qualified() {
        let c = ModelConfig::preset("cnn-a", 32).unwrap();
        let p = ModelParams::init(&c, 3).unwrap();
        let names: Vec<String> = p.named_tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(
            names,
            [
                "center.mean",
                "conv1.weight",
                "conv1.bias",
                "conv2.weight",
                "conv2.bias",
                "conv3.weight",
                "conv3.bias",
                "fc.weight",
                "fc.bias"
            ]
        );
    }
}
