use serde::{Deserialize, Serialize};

use crate::error::{shape_err, value_err, Result};
use crate::nn::{Conv2d, Dense, Dropout, Flatten, Head, Layer, MaxPool2d, Network, Relu};
use crate::rng::Rng;

use super::WeightContainer;

/// Name prefix of every VGG backbone layer.
pub const BACKBONE_PREFIX: &str = "backbone.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    SimpleCnn,
    VggFeatureExtractor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backbone {
    /// `[w, w, M, 2w, 2w, M, 4w, 4w, M, 8w, 8w, M]`
    #[default]
    VggMini,
    /// The 16-conv, 5-pool layout with widths scaled from a base of 64.
    Vgg19,
}

impl Backbone {
    pub fn as_str(self) -> &'static str {
        match self {
            Backbone::VggMini => "vgg-mini",
            Backbone::Vgg19 => "vgg19",
        }
    }

    /// Stages of (convs, width multiplier); each stage ends in a 2x2 pool.
    fn stages(self) -> &'static [(usize, usize)] {
        match self {
            Backbone::VggMini => &[(2, 1), (2, 2), (2, 4), (2, 8)],
            Backbone::Vgg19 => &[(2, 1), (2, 2), (4, 4), (4, 8), (4, 8)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Padding {
    /// `(k - 1) / 2` on each side, so 3x3 convolutions keep the spatial size.
    #[default]
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropoutPlacement {
    /// First rate after the conv stack, second after the hidden dense layer.
    #[default]
    Standard,
    /// First rate after every pooling layer, second after the hidden dense layer.
    PerBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub family: Family,
    /// Conv blocks of the simple CNN (3 or 4).
    pub n_conv_blocks: usize,
    pub dropout_rates: Vec<f64>,
    pub dropout_placement: DropoutPlacement,
    pub augment: bool,
    /// Trains the VGG backbone too; otherwise it is frozen.
    pub fine_tune: bool,
    /// Per-sample input `[C, H, W]`.
    pub input_shape: [usize; 3],
    pub head_width: usize,
    /// Filters of the first conv layer; doubled per block.
    pub base_width: usize,
    pub kernel_size: usize,
    pub padding: Padding,
    pub backbone: Backbone,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            family: Family::SimpleCnn,
            n_conv_blocks: 4,
            dropout_rates: Vec::new(),
            dropout_placement: DropoutPlacement::Standard,
            augment: false,
            fine_tune: false,
            input_shape: [3, 64, 64],
            head_width: 64,
            base_width: 16,
            kernel_size: 3,
            padding: Padding::Same,
            backbone: Backbone::VggMini,
        }
    }
}

impl ModelSpec {
    pub fn simple(n_conv_blocks: usize, dropout_rates: &[f64]) -> Self {
        Self {
            n_conv_blocks,
            dropout_rates: dropout_rates.to_vec(),
            ..Self::default()
        }
    }

    pub fn vgg(dropout_rates: &[f64], fine_tune: bool) -> Self {
        Self {
            family: Family::VggFeatureExtractor,
            dropout_rates: dropout_rates.to_vec(),
            fine_tune,
            ..Self::default()
        }
    }

    pub fn with_augment(mut self, augment: bool) -> Self {
        self.augment = augment;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dropout_rates.len() > 2 {
            return Err(value_err!(
                "at most two dropout rates are supported, got {}",
                self.dropout_rates.len()
            ));
        }
        if let Some(r) = self.dropout_rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(value_err!("dropout rate must be in [0, 1), got {r}"));
        }
        if self.fine_tune && self.family != Family::VggFeatureExtractor {
            return Err(value_err!("fine_tune requires the vgg_feature_extractor family"));
        }
        if self.family == Family::SimpleCnn && !(3..=4).contains(&self.n_conv_blocks) {
            return Err(value_err!("simple CNN needs 3 or 4 conv blocks, got {}", self.n_conv_blocks));
        }
        if self.input_shape.contains(&0) || self.head_width == 0 || self.base_width == 0 {
            return Err(value_err!("input shape, head width and base width must be non-zero"));
        }
        if self.kernel_size == 0 || (self.padding == Padding::Same && self.kernel_size % 2 == 0) {
            return Err(value_err!(
                "kernel size must be positive (and odd with same padding), got {}",
                self.kernel_size
            ));
        }
        Ok(())
    }

    fn pad(&self) -> usize {
        match self.padding {
            Padding::Same => (self.kernel_size - 1) / 2,
            Padding::Valid => 0,
        }
    }

    fn conv_rate(&self) -> Option<f64> {
        self.dropout_rates.first().copied()
    }

    fn dense_rate(&self) -> Option<f64> {
        self.dropout_rates.get(1).copied()
    }

    /// Short human-readable description, e.g. `4CNN dropout 0.3 0.3`.
    pub fn describe(&self) -> String {
        let mut s = match self.family {
            Family::SimpleCnn => format!("{}CNN", self.n_conv_blocks),
            Family::VggFeatureExtractor => {
                let tune = if self.fine_tune { "fine-tuned" } else { "frozen" };
                format!("{} {tune}", self.backbone.as_str())
            }
        };
        if self.augment {
            s.push_str(" augment");
        }
        if !self.dropout_rates.is_empty() {
            s.push_str(" dropout");
            for r in &self.dropout_rates {
                s.push_str(&format!(" {r}"));
            }
        }
        s
    }
}

/// Accumulates named layers while tracking the per-sample shape.
struct Stack {
    layers: Vec<(String, Layer)>,
    shape: Vec<usize>,
}

impl Stack {
    fn new(input: &[usize]) -> Self {
        Self {
            layers: Vec::new(),
            shape: input.to_vec(),
        }
    }

    fn push(&mut self, name: String, layer: Layer, block: &str) -> Result<()> {
        self.shape = layer.output_shape(&self.shape).map_err(|e| {
            shape_err!("{block} ({name}) cannot take input {:?}: {e}", self.shape)
        })?;
        self.layers.push((name, layer));
        Ok(())
    }

    fn channels(&self) -> usize {
        self.shape[0]
    }

    fn conv_block(&mut self, prefix: &str, block: &str, convs: usize, width: usize, spec: &ModelSpec, rng: &mut Rng) -> Result<()> {
        let k = spec.kernel_size;
        for j in 1..=convs {
            let suffix = if convs == 1 { String::new() } else { format!("_{j}") };
            let conv = Conv2d::init(self.channels(), width, (k, k), 1, spec.pad(), rng)?;
            self.push(format!("{prefix}conv{block}{suffix}"), Layer::Conv2d(conv), &format!("block {block}"))?;
            self.push(format!("{prefix}relu{block}{suffix}"), Layer::Relu(Relu::new()), &format!("block {block}"))?;
        }
        self.push(
            format!("{prefix}pool{block}"),
            Layer::MaxPool2d(MaxPool2d::new((2, 2), 2)?),
            &format!("block {block}"),
        )
    }

    /// flatten -> dense -> relu -> [dropout] -> dense(1)
    fn head(&mut self, spec: &ModelSpec, rng: &mut Rng) -> Result<()> {
        self.push("flatten".into(), Layer::Flatten(Flatten::new()), "head")?;
        let features = self.shape[0];
        self.push("dense1".into(), Layer::Dense(Dense::init(features, spec.head_width, rng)?), "head")?;
        self.push("relu_dense".into(), Layer::Relu(Relu::new()), "head")?;
        if let Some(r) = spec.dense_rate() {
            self.push("dropout_dense".into(), Layer::Dropout(Dropout::new(r)?), "head")?;
        }
        self.push("logits".into(), Layer::Dense(Dense::init(spec.head_width, 1, rng)?), "head")
    }

    fn finish(self, spec: &ModelSpec) -> Result<Network> {
        Network::new(&spec.input_shape, self.layers, Head::Sigmoid)
    }
}

/// `n_conv_blocks` x [conv -> relu -> maxpool 2x2] -> [dropout] -> head.
/// Initialization draws from `Rng::new(seed)` in layer order.
pub fn build_simple_cnn(spec: &ModelSpec, seed: u64) -> Result<Network> {
    spec.validate()?;
    if spec.family != Family::SimpleCnn {
        return Err(value_err!("spec is not a simple CNN"));
    }
    let mut rng = Rng::new(seed);
    let mut stack = Stack::new(&spec.input_shape);
    for b in 1..=spec.n_conv_blocks {
        let width = spec.base_width << (b - 1);
        stack.conv_block("", &b.to_string(), 1, width, spec, &mut rng)?;
        if let (DropoutPlacement::PerBlock, Some(r)) = (spec.dropout_placement, spec.conv_rate()) {
            stack.push(format!("dropout{b}"), Layer::Dropout(Dropout::new(r)?), &format!("block {b}"))?;
        }
    }
    if let (DropoutPlacement::Standard, Some(r)) = (spec.dropout_placement, spec.conv_rate()) {
        stack.push("dropout_conv".into(), Layer::Dropout(Dropout::new(r)?), "head")?;
    }
    stack.head(spec, &mut rng)?;
    stack.finish(spec)
}

/// VGG-style backbone (frozen unless `fine_tune`) plus the dense head.
/// Backbone layers are named with [`BACKBONE_PREFIX`]. If `backbone_weights`
/// is given, its fingerprint must equal [`backbone_fingerprint`] of the
/// built network and its tensors replace the random backbone parameters.
pub fn build_vgg_feature_extractor(
    spec: &ModelSpec,
    backbone_weights: Option<&WeightContainer>,
    seed: u64,
) -> Result<Network> {
    spec.validate()?;
    if spec.family != Family::VggFeatureExtractor {
        return Err(value_err!("spec is not a VGG feature extractor"));
    }
    let mut rng = Rng::new(seed);
    let mut stack = Stack::new(&spec.input_shape);
    for (s, &(convs, mult)) in spec.backbone.stages().iter().enumerate() {
        stack.conv_block(BACKBONE_PREFIX, &(s + 1).to_string(), convs, spec.base_width * mult, spec, &mut rng)?;
        if let (DropoutPlacement::PerBlock, Some(r)) = (spec.dropout_placement, spec.conv_rate()) {
            stack.push(format!("dropout{}", s + 1), Layer::Dropout(Dropout::new(r)?), &format!("block {}", s + 1))?;
        }
    }
    if let (DropoutPlacement::Standard, Some(r)) = (spec.dropout_placement, spec.conv_rate()) {
        stack.push("dropout_conv".into(), Layer::Dropout(Dropout::new(r)?), "head")?;
    }
    stack.head(spec, &mut rng)?;
    let mut net = stack.finish(spec)?;
    if let Some(w) = backbone_weights {
        w.apply_backbone(&mut net)?;
    }
    net.set_trainable_prefix(BACKBONE_PREFIX, spec.fine_tune);
    Ok(net)
}

/// Builds either family from its spec.
pub fn build(spec: &ModelSpec, seed: u64) -> Result<Network> {
    match spec.family {
        Family::SimpleCnn => build_simple_cnn(spec, seed),
        Family::VggFeatureExtractor => build_vgg_feature_extractor(spec, None, seed),
    }
}

/// Architecture tag of the backbone portion of `net`: its input shape and
/// the backbone layer descriptions.
pub fn backbone_fingerprint(net: &Network) -> String {
    let dims: Vec<String> = net.input_shape().iter().map(|d| d.to_string()).collect();
    let mut parts = vec![format!("backbone;input={}", dims.join("x"))];
    for i in 0..net.len() {
        let name = net.layer_name(i);
        if name.starts_with(BACKBONE_PREFIX) {
            parts.push(format!("{name}={}", net.layer(i).describe()));
        }
    }
    parts.join(";")
}
