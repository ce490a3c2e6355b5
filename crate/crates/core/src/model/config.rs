use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How two same-shaped feature tensors are fused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MixingStrategy {
    /// Channel interleaving followed by a grouped convolution (`groups = C`).
    #[default]
    InterleaveGrouped,
    /// Elementwise `X - Y`, no learned kernel.
    Subtraction,
    /// Block concatenation followed by a full `2C → C` convolution.
    ConcatConv,
}

impl MixingStrategy {
    pub const ALL: [MixingStrategy; 3] =
        [MixingStrategy::InterleaveGrouped, MixingStrategy::Subtraction, MixingStrategy::ConcatConv];

    /// Kernel weights (biases excluded) of the mixing convolution at width
    /// `c` with a `k_h × k_w` kernel.
    pub fn weight_count(self, c: usize, kh: usize, kw: usize) -> usize {
        match self {
            MixingStrategy::InterleaveGrouped => c * (2 * kh * kw),
            MixingStrategy::Subtraction => 0,
            MixingStrategy::ConcatConv => c * (2 * c * kh * kw),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MixingStrategy::InterleaveGrouped => "interleave_grouped",
            MixingStrategy::Subtraction => "subtraction",
            MixingStrategy::ConcatConv => "concat_conv",
        }
    }
}

impl std::fmt::Display for MixingStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MixingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MixingStrategy::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown mixing strategy '{s}' (expected interleave_grouped, subtraction, concat_conv)"
            ))
        })
    }
}

/// Final per-pixel classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    /// Pixel-wise MLP ending in a sigmoid.
    #[default]
    PwMlp,
    /// A single `1×1` convolution to one channel, then a sigmoid.
    DirectSigmoid,
}

impl ClassifierKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierKind::PwMlp => "pw_mlp",
            ClassifierKind::DirectSigmoid => "direct_sigmoid",
        }
    }
}

impl std::fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pw_mlp" => Ok(ClassifierKind::PwMlp),
            "direct_sigmoid" => Ok(ClassifierKind::DirectSigmoid),
            other => Err(Error::Config(format!("unknown classifier '{other}' (expected pw_mlp, direct_sigmoid)"))),
        }
    }
}

/// Declarative architecture description.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_channels: usize,
    /// Output channels of each encoder level.
    pub backbone_widths: Vec<usize>,
    /// Spatial reduction of each encoder level, 1 or 2.
    pub backbone_strides: Vec<usize>,
    /// Hidden `1×1` blocks in every pixel-wise MLP.
    pub mamb_hidden_layers: usize,
    pub mixing_strategy_bottleneck: MixingStrategy,
    pub mixing_strategy_skip: MixingStrategy,
    pub classifier: ClassifierKind,
    pub use_skip_connections: bool,
}

impl Default for ModelConfig {
    /// Desk-scale reference architecture.
    fn default() -> Self {
        ModelConfig {
            input_channels: 3,
            backbone_widths: vec![16, 24, 32],
            backbone_strides: vec![2, 2, 2],
            mamb_hidden_layers: 2,
            mixing_strategy_bottleneck: MixingStrategy::InterleaveGrouped,
            mixing_strategy_skip: MixingStrategy::InterleaveGrouped,
            classifier: ClassifierKind::PwMlp,
            use_skip_connections: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: String| Err(Error::Config(format!("model.{name}: {msg}")));
        if self.input_channels == 0 {
            return field("input_channels", "must be at least 1".into());
        }
        if self.backbone_widths.is_empty() {
            return field("backbone_widths", "needs at least one level".into());
        }
        if self.backbone_widths.len() != self.backbone_strides.len() {
            return field(
                "backbone_strides",
                format!(
                    "has {} entries but backbone_widths has {}",
                    self.backbone_strides.len(),
                    self.backbone_widths.len()
                ),
            );
        }
        if let Some(w) = self.backbone_widths.iter().find(|&&w| w == 0) {
            return field("backbone_widths", format!("width {w} is not positive"));
        }
        if let Some(s) = self.backbone_strides.iter().find(|&&s| s != 1 && s != 2) {
            return field("backbone_strides", format!("stride {s} is not 1 or 2"));
        }
        if self.mamb_hidden_layers == 0 {
            return field("mamb_hidden_layers", "must be at least 1".into());
        }
        Ok(())
    }

    /// Number of encoder levels (K).
    pub fn levels(&self) -> usize {
        self.backbone_widths.len()
    }

    /// Number of factor-2 reductions, which is also the number of decoder
    /// stages.
    pub fn downsamplings(&self) -> usize {
        self.backbone_strides.iter().filter(|&&s| s == 2).count()
    }

    /// Product of the encoder strides; input sides must be multiples of it.
    pub fn cumulative_stride(&self) -> usize {
        self.backbone_strides.iter().product()
    }

    pub fn check_input_size(&self, h: usize, w: usize) -> Result<()> {
        let s = self.cumulative_stride();
        if h == 0 || w == 0 || !h.is_multiple_of(s) || !w.is_multiple_of(s) {
            return Err(Error::Config(format!(
                "input {h}×{w} is not divisible by the cumulative encoder stride {s}; \
                 height and width must be multiples of {s}"
            )));
        }
        Ok(())
    }

    /// Encoder level whose output is the skip source at resolution index
    /// `j ≥ 1` (the last level at that resolution).
    pub(crate) fn level_at_resolution(&self, j: usize) -> Option<usize> {
        let mut down = 0;
        let mut found = None;
        for (i, &s) in self.backbone_strides.iter().enumerate() {
            if s == 2 {
                down += 1;
            }
            if down == j {
                found = Some(i);
            }
        }
        found
    }

    /// Channel width of the decoder output at resolution index `j`.
    pub(crate) fn decoder_width(&self, j: usize) -> usize {
        self.level_at_resolution(j).map(|i| self.backbone_widths[i]).unwrap_or(self.backbone_widths[0])
    }

    /// Channel width of the skip source at resolution index `j`.
    pub(crate) fn skip_width(&self, j: usize) -> usize {
        if j == 0 {
            self.input_channels
        } else {
            self.backbone_widths[self.level_at_resolution(j).expect("resolution exists")]
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| Error::Config(format!("model config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
