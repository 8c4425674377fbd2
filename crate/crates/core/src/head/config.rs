use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture and regularization of the CNN-MLP head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    /// Grid side `S` of the stacked input.
    pub input_side: usize,
    pub input_channels: usize,
    pub conv_filters: usize,
    /// Square, stride 1, same padding. Must be odd.
    pub conv_kernel: usize,
    /// Widths of the dense layers before the output layer. The first entry
    /// is the dense layer fed directly by the pooled convolution output.
    pub hidden_sizes: Vec<usize>,
    pub n_classes: usize,
    pub l2_lambda: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            input_side: 4,
            input_channels: 376,
            conv_filters: 512,
            conv_kernel: 3,
            hidden_sizes: vec![512, 256, 32],
            n_classes: 5,
            l2_lambda: 0.5,
            bn_epsilon: 1e-5,
            bn_momentum: 0.9,
        }
    }
}

impl HeadConfig {
    /// Default architecture for an input of `channels` stacked `side x side` planes.
    pub fn for_input(side: usize, channels: usize) -> Self {
        Self {
            input_side: side,
            input_channels: channels,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("input side", self.input_side),
            ("input channels", self.input_channels),
            ("conv filters", self.conv_filters),
            ("conv kernel", self.conv_kernel),
            ("class count", self.n_classes),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "conv kernel {} must be odd for same padding",
                self.conv_kernel
            )));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(Error::Config("l2 lambda must be finite and >= 0".into()));
        }
        if !(self.bn_epsilon > 0.0) {
            return Err(Error::Config("batch-norm epsilon must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("batch-norm momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.input_side * self.input_side * self.input_channels
    }

    /// Rows of the unrolled convolution weight matrix.
    pub fn conv_fan_in(&self) -> usize {
        self.conv_kernel * self.conv_kernel * self.input_channels
    }

    /// `(in, out)` of every dense layer including the output layer.
    pub fn dense_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden_sizes.len() + 2);
        widths.push(self.conv_filters);
        widths.extend_from_slice(&self.hidden_sizes);
        widths.push(self.n_classes);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            epochs: 300,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::Config("Adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerCount {
    pub name: String,
    pub output_shape: String,
    pub trainable: u64,
}

/// Frozen parameter count and pooled output width of a known backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackboneInfo {
    pub id: &'static str,
    pub dim: usize,
    pub frozen_params: u64,
}

/// Convolutional trunks without classifier, as distributed in the common
/// ImageNet model zoos.
pub const BACKBONES: &[BackboneInfo] = &[
    BackboneInfo { id: "resnet50", dim: 2048, frozen_params: 23_587_712 },
    BackboneInfo { id: "resnet50v2", dim: 2048, frozen_params: 23_564_800 },
    BackboneInfo { id: "densenet121", dim: 1024, frozen_params: 7_037_504 },
    BackboneInfo { id: "densenet201", dim: 1920, frozen_params: 18_321_984 },
    BackboneInfo { id: "inception-v3", dim: 2048, frozen_params: 21_802_784 },
    BackboneInfo { id: "xception", dim: 2048, frozen_params: 20_861_480 },
    BackboneInfo { id: "efficientnet-v2s", dim: 1280, frozen_params: 20_331_360 },
    BackboneInfo { id: "efficientnet-b5", dim: 2048, frozen_params: 28_513_527 },
];

/// Looks a backbone up by identifier, ignoring any `@version` suffix.
pub fn backbone_info(name: &str) -> Option<&'static BackboneInfo> {
    let id = name.split('@').next().unwrap_or(name);
    BACKBONES.iter().find(|b| b.id.eq_ignore_ascii_case(id))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub layers: Vec<LayerCount>,
    pub trainable: u64,
    /// Batch-norm running statistics.
    pub non_trainable: u64,
    /// `None` for backbones missing from [`BACKBONES`].
    pub frozen_backbones: Vec<(String, Option<u64>)>,
}

pub fn count_params(config: &HeadConfig, backbones: &[String]) -> ParamCount {
    let s = config.input_side;
    let f = config.conv_filters as u64;
    let mut layers = vec![
        LayerCount {
            name: "conv2d".into(),
            output_shape: format!("{s}x{s}x{f}"),
            trainable: config.conv_fan_in() as u64 * f + f,
        },
        LayerCount {
            name: "batch_norm".into(),
            output_shape: format!("{s}x{s}x{f}"),
            trainable: 2 * f,
        },
    ];
    let shapes = config.dense_shapes();
    let last = shapes.len() - 1;
    for (i, &(n_in, n_out)) in shapes.iter().enumerate() {
        let name = match i {
            _ if i == last => "dense_out".to_string(),
            0 => "dense_in".to_string(),
            _ => format!("hidden_dense_{i}"),
        };
        layers.push(LayerCount {
            name,
            output_shape: n_out.to_string(),
            trainable: (n_in * n_out + n_out) as u64,
        });
    }
    ParamCount {
        trainable: layers.iter().map(|l| l.trainable).sum(),
        non_trainable: 2 * f,
        frozen_backbones: backbones
            .iter()
            .map(|b| (b.clone(), backbone_info(b).map(|i| i.frozen_params)))
            .collect(),
        layers,
    }
}
