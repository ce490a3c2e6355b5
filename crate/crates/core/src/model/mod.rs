//! Siamese U-Net assembly and its configuration.

mod config;
mod layers;
mod tinycd;

pub use config::{ClassifierKind, MixingStrategy, ModelConfig};
pub use layers::{
    Classifier, Conv2d, ConvSpec, EncoderBlock, FinalActivation, Mamb, MixBlock, PwMlp, UpBlock, PRELU_INIT,
};
pub use tinycd::{ForwardOutput, TinyCd};
