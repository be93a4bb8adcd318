use serde::{Deserialize, Serialize};

use crate::autodiff::kernels::conv_out_dim;
use crate::error::{Error, Result};
use crate::NUM_CLASSES;

/// Preset names accepted by [`ModelConfig::preset`].
pub const PRESETS: [&str; 4] = ["cnn-a", "cnn-b", "cnn-dense", "tiny-vit"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    /// Subtracts a stored per-pixel mean image from the input. The offset is
    /// fitted from training data, never by gradient descent; a freshly
    /// initialized offset is zero. Only valid as the first layer.
    Center,
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    GlobalAvgPool,
    Dense {
        out_features: usize,
    },
    /// Non-overlapping `patch_size` patches linearly embedded to
    /// `embed_dim`, plus a learned position table.
    PatchEmbed {
        patch_size: usize,
        embed_dim: usize,
    },
    /// Pre-norm single-head self-attention followed by a 2x MLP, both with
    /// residual connections.
    AttentionBlock {
        embed_dim: usize,
    },
    /// `concat(x, relu(conv(x)))` with same padding: the input channels pass
    /// through and `growth` new channels are appended.
    DenseBlock {
        growth: usize,
        kernel: usize,
    },
}

impl LayerKind {
    /// Whether gradient descent updates this layer's parameters.
    pub fn is_trainable(&self) -> bool {
        !matches!(self, LayerKind::Center)
    }

    pub fn label(&self) -> &'static str {
        match self {
            LayerKind::Center => "center",
            LayerKind::Conv { .. } => "conv",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool { .. } => "pool",
            LayerKind::GlobalAvgPool => "gap",
            LayerKind::Dense { .. } => "dense",
            LayerKind::PatchEmbed { .. } => "patch",
            LayerKind::AttentionBlock { .. } => "attn",
            LayerKind::DenseBlock { .. } => "denseblock",
        }
    }

    /// Output shape for `input`, or a description of the inconsistency.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        let spatial = || match *input {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(format!("expects a C×H×W input, got {input:?}")),
        };
        match *self {
            LayerKind::Center => {
                spatial()?;
                Ok(input.to_vec())
            }
            LayerKind::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let (_, h, w) = spatial()?;
                if out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err("conv sizes must be positive".into());
                }
                match (
                    conv_out_dim(h, kernel, stride, padding),
                    conv_out_dim(w, kernel, stride, padding),
                ) {
                    (Some(oh), Some(ow)) => Ok(vec![out_channels, oh, ow]),
                    _ => Err(format!("kernel {kernel} (padding {padding}) does not fit {h}×{w}")),
                }
            }
            LayerKind::Relu => Ok(input.to_vec()),
            LayerKind::MaxPool { window, stride } => {
                let (c, h, w) = spatial()?;
                if window == 0 || stride == 0 {
                    return Err("pool sizes must be positive".into());
                }
                match (conv_out_dim(h, window, stride, 0), conv_out_dim(w, window, stride, 0)) {
                    (Some(oh), Some(ow)) => Ok(vec![c, oh, ow]),
                    _ => Err(format!("window {window} does not fit {h}×{w}")),
                }
            }
            LayerKind::GlobalAvgPool => {
                let (c, _, _) = spatial()?;
                Ok(vec![c])
            }
            LayerKind::Dense { out_features } => match *input {
                [_] if out_features > 0 => Ok(vec![out_features]),
                [_] => Err("dense needs at least one output".into()),
                _ => Err(format!("dense expects a flat input, got {input:?}")),
            },
            LayerKind::PatchEmbed { patch_size, embed_dim } => {
                let (_, h, w) = spatial()?;
                if patch_size == 0 || embed_dim == 0 {
                    return Err("patch sizes must be positive".into());
                }
                if h % patch_size != 0 || w % patch_size != 0 || patch_size > h.min(w) {
                    return Err(format!("patch size {patch_size} does not tile {h}×{w}"));
                }
                Ok(vec![embed_dim, h / patch_size, w / patch_size])
            }
            LayerKind::AttentionBlock { embed_dim } => {
                let (c, _, _) = spatial()?;
                if c != embed_dim {
                    return Err(format!("embed_dim {embed_dim} does not match {c} input channels"));
                }
                Ok(input.to_vec())
            }
            LayerKind::DenseBlock { growth, kernel } => {
                let (c, h, w) = spatial()?;
                if growth == 0 || kernel % 2 == 0 {
                    return Err("dense block needs positive growth and an odd kernel".into());
                }
                if kernel > h + kernel / 2 * 2 || kernel > w + kernel / 2 * 2 {
                    return Err(format!("kernel {kernel} does not fit {h}×{w}"));
                }
                Ok(vec![c + growth, h, w])
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl LayerSpec {
    pub fn new(kind: LayerKind) -> Self {
        Self { kind, name: None }
    }

    pub fn named(kind: LayerKind, name: &str) -> Self {
        Self {
            kind,
            name: Some(name.to_string()),
        }
    }
}

/// Ordered layer list ending in `Dense(num_classes)`, plus the name of the
/// layer whose output Grad-CAM reads.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Preset name, or a free-form label for custom models.
    pub preset: String,
    /// `(C, H, W)`.
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
    pub capture_layer: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub name: String,
    pub kind: &'static str,
    pub output: Vec<usize>,
}

/// Output shape of every layer, in order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapeReport {
    pub layers: Vec<LayerShape>,
    pub capture_index: usize,
}

impl ShapeReport {
    pub fn capture_shape(&self) -> &[usize] {
        &self.layers[self.capture_index].output
    }

    pub fn input_of(&self, index: usize, input_shape: &[usize]) -> Vec<usize> {
        if index == 0 {
            input_shape.to_vec()
        } else {
            self.layers[index - 1].output.clone()
        }
    }
}

fn conv(out_channels: usize, name: &str) -> LayerSpec {
    LayerSpec::named(
        LayerKind::Conv {
            out_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
        },
        name,
    )
}

fn center() -> LayerSpec {
    LayerSpec::named(LayerKind::Center, "center")
}

fn relu(name: &str) -> LayerSpec {
    LayerSpec::named(LayerKind::Relu, name)
}

fn pool(name: &str) -> LayerSpec {
    LayerSpec::named(LayerKind::MaxPool { window: 2, stride: 2 }, name)
}

fn head(num_classes: usize) -> [LayerSpec; 2] {
    [
        LayerSpec::named(LayerKind::GlobalAvgPool, "gap"),
        LayerSpec::named(
            LayerKind::Dense {
                out_features: num_classes,
            },
            "fc",
        ),
    ]
}

impl ModelConfig {
    /// Named preset for a single-channel `size × size` input with
    /// [`NUM_CLASSES`] outputs.
    pub fn preset(name: &str, size: usize) -> Result<Self> {
        let k = NUM_CLASSES;
        let (mut layers, capture) = match name {
            "cnn-a" => (
                vec![
                    center(),
                    conv(8, "conv1"),
                    relu("relu1"),
                    pool("pool1"),
                    conv(16, "conv2"),
                    relu("relu2"),
                    pool("pool2"),
                    conv(16, "conv3"),
                    relu("relu3"),
                ],
                "relu3",
            ),
            "cnn-b" => (
                vec![
                    center(),
                    conv(8, "conv1"),
                    relu("relu1"),
                    pool("pool1"),
                    conv(16, "conv2"),
                    relu("relu2"),
                    pool("pool2"),
                    conv(16, "conv3"),
                    relu("relu3"),
                    pool("pool3"),
                    conv(32, "conv4"),
                    relu("relu4"),
                ],
                "relu4",
            ),
            "cnn-dense" => (
                vec![
                    center(),
                    conv(8, "conv1"),
                    relu("relu1"),
                    pool("pool1"),
                    LayerSpec::named(LayerKind::DenseBlock { growth: 8, kernel: 3 }, "dense1"),
                    pool("pool2"),
                    LayerSpec::named(LayerKind::DenseBlock { growth: 8, kernel: 3 }, "dense2"),
                ],
                "dense2",
            ),
            "tiny-vit" => (
                vec![
                    center(),
                    LayerSpec::named(
                        LayerKind::PatchEmbed {
                            patch_size: 8,
                            embed_dim: 16,
                        },
                        "patch",
                    ),
                    LayerSpec::named(LayerKind::AttentionBlock { embed_dim: 16 }, "attn1"),
                    LayerSpec::named(LayerKind::AttentionBlock { embed_dim: 16 }, "attn2"),
                ],
                "attn2",
            ),
            other => {
                return Err(Error::config(format!(
                    "unknown preset {other:?}; expected one of {}",
                    PRESETS.join(", ")
                )))
            }
        };
        layers.extend(head(k));
        let config = ModelConfig {
            preset: name.to_string(),
            input_shape: [1, size, size],
            layers,
            num_classes: k,
            capture_layer: capture.to_string(),
        };
        config.validate()?;
        Ok(config)
    }

    /// Same model reading Grad-CAM from a different layer.
    pub fn with_capture(mut self, layer: &str) -> Result<Self> {
        self.capture_layer = layer.to_string();
        self.validate()?;
        Ok(self)
    }

    /// Names with unnamed layers filled in as `<kind><index>`.
    pub fn layer_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| l.name.clone().unwrap_or_else(|| format!("{}{i}", l.kind.label())))
            .collect()
    }

    /// Walks the shape chain and returns every layer's output shape, or the
    /// first inconsistency.
    pub fn validate(&self) -> Result<ShapeReport> {
        if self.input_shape.contains(&0) {
            return Err(Error::config(format!(
                "input shape {:?} has a zero dimension",
                self.input_shape
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::config("need at least two classes"));
        }
        let names = self.layer_names();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::config(format!("duplicate layer name {n:?}")));
            }
        }
        if let Some(i) = self.layers.iter().skip(1).position(|l| l.kind == LayerKind::Center) {
            return Err(Error::config(format!(
                "layer {:?}: center must be the first layer",
                names[i + 1]
            )));
        }
        let mut shape = self.input_shape.to_vec();
        let mut layers = Vec::with_capacity(self.layers.len());
        for (spec, name) in self.layers.iter().zip(&names) {
            shape = spec
                .kind
                .output_shape(&shape)
                .map_err(|e| Error::config(format!("layer {name:?} ({}): {e}", spec.kind.label())))?;
            layers.push(LayerShape {
                name: name.clone(),
                kind: spec.kind.label(),
                output: shape.clone(),
            });
        }
        match self.layers.last() {
            Some(LayerSpec {
                kind: LayerKind::Dense { out_features },
                ..
            }) if *out_features == self.num_classes => {}
            _ => return Err(Error::config(format!("model must end in Dense({})", self.num_classes))),
        }
        let capture_index = names
            .iter()
            .position(|n| *n == self.capture_layer)
            .ok_or_else(|| Error::config(format!("capture layer {:?} not found", self.capture_layer)))?;
        if layers[capture_index].output.len() != 3 {
            return Err(Error::config(format!(
                "capture layer {:?} output {:?} is not spatial (D×H'×W')",
                self.capture_layer, layers[capture_index].output
            )));
        }
        Ok(ShapeReport { layers, capture_index })
    }

    /// Canonical JSON descriptor stored in checkpoints.
    pub fn descriptor(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn from_descriptor(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::config(format!("bad model descriptor: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(input: [usize; 3], layers: Vec<LayerSpec>) -> Result<ShapeReport> {
        let mut layers = layers;
        layers.push(LayerSpec::new(LayerKind::GlobalAvgPool));
        layers.push(LayerSpec::new(LayerKind::Dense { out_features: 3 }));
        ModelConfig {
            preset: "custom".into(),
            input_shape: input,
            layers,
            num_classes: 3,
            capture_layer: "conv0".into(),
        }
        .validate()
    }

    #[test]
    fn same_padding_conv_and_pool() {
        let r = chain(
            [1, 64, 64],
            vec![
                LayerSpec::new(LayerKind::Conv {
                    out_channels: 8,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                }),
                LayerSpec::new(LayerKind::MaxPool { window: 2, stride: 2 }),
            ],
        )
        .unwrap();
        assert_eq!(r.layers[0].output, vec![8, 64, 64]);
        assert_eq!(r.layers[1].output, vec![8, 32, 32]);
    }

    #[test]
    fn patch_embed_grid() {
        let k = LayerKind::PatchEmbed {
            patch_size: 8,
            embed_dim: 16,
        };
        assert_eq!(k.output_shape(&[1, 64, 64]).unwrap(), vec![16, 8, 8]);
        assert!(k.output_shape(&[1, 60, 64]).is_err());
    }

    #[test]
    fn presets_validate_with_expected_capture_shapes() {
        let expect = [
            ("cnn-a", vec![16, 16, 16]),
            ("cnn-b", vec![32, 8, 8]),
            ("cnn-dense", vec![24, 16, 16]),
            ("tiny-vit", vec![16, 8, 8]),
        ];
        for (name, shape) in expect {
            let c = ModelConfig::preset(name, 64).unwrap();
            assert_eq!(c.validate().unwrap().capture_shape(), shape.as_slice(), "{name}");
        }
    }

    #[test]
    fn presets_work_at_sixteen_pixels() {
        for name in PRESETS {
            ModelConfig::preset(name, 16).unwrap();
        }
    }

    #[test]
    fn unknown_preset_lists_choices() {
        let msg = ModelConfig::preset("resnet", 64).unwrap_err().to_string();
        assert!(msg.contains("cnn-a") && msg.contains("tiny-vit"), "{msg}");
    }

    #[test]
    fn chain_break_names_the_layer() {
        let mut c = ModelConfig::preset("cnn-a", 64).unwrap();
        c.layers
            .insert(1, LayerSpec::named(LayerKind::Dense { out_features: 4 }, "oops"));
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("oops"), "{msg}");
    }

    #[test]
    fn center_only_first() {
        let mut c = ModelConfig::preset("cnn-a", 16).unwrap();
        c.layers.insert(2, LayerSpec::named(LayerKind::Center, "late"));
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("late"), "{msg}");
    }

    #[test]
    fn duplicate_names_and_non_spatial_capture_rejected() {
        let mut c = ModelConfig::preset("cnn-a", 64).unwrap();
        c.layers[2].name = Some("conv1".into());
        assert!(c.validate().is_err());
        let c = ModelConfig::preset("cnn-a", 64).unwrap();
        assert!(c.clone().with_capture("gap").is_err());
        assert!(c.clone().with_capture("nope").is_err());
        assert!(c.with_capture("pool2").is_ok());
    }

    #[test]
    fn descriptor_round_trip() {
        for name in PRESETS {
            let c = ModelConfig::preset(name, 32).unwrap();
            assert_eq!(ModelConfig::from_descriptor(&c.descriptor()).unwrap(), c);
        }
    }
}
