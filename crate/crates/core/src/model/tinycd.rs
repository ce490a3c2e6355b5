use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::config::{ClassifierKind, ModelConfig};
use crate::model::layers::{
    Builder, Classifier, ConvSpec, EncoderBlock, FinalActivation, Mamb, MixBlock, PwMlp, UpBlock,
};
use crate::param::ParamStore;
use crate::tensor::{Element, Tensor};

/// Result of a full forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput<T: Element> {
    /// Change probability, `N×1×H×W`.
    pub prediction: Tensor<T>,
    /// Skip attention masks, finest resolution first. Empty when skip
    /// connections are disabled.
    pub masks: Vec<Tensor<T>>,
}

/// Siamese U-Net change detector.
///
/// The encoder exists once and is applied to both images. Resolution index
/// `j = 0` is the input resolution and each stride-2 encoder level adds one.
/// With `S` such levels there are `S` decoder stages; stage `j` upsamples to
/// resolution `j` and is gated by the mask computed at that resolution (from
/// the raw images for `j = 0`, otherwise from the last encoder level at that
/// resolution).
#[derive(Debug, Clone)]
pub struct TinyCd<T: Element> {
    config: ModelConfig,
    params: ParamStore<T>,
    encoder: Vec<EncoderBlock>,
    masks: Vec<Mamb>,
    bottleneck: MixBlock,
    decoder: Vec<UpBlock>,
    classifier: Classifier,
}

impl<T: Element> TinyCd<T> {
    /// Builds the network with seeded fan-in uniform weights and zero biases.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder { store: &mut params, rng: &mut rng };

        let mut encoder = Vec::with_capacity(config.levels());
        let mut cin = config.input_channels;
        for (i, (&w, &s)) in config.backbone_widths.iter().zip(&config.backbone_strides).enumerate() {
            encoder.push(EncoderBlock::build(&mut b, &format!("encoder.block{i}"), cin, w, s)?);
            cin = w;
        }

        let stages = config.downsamplings();
        let mut masks = Vec::new();
        if config.use_skip_connections {
            for j in 0..stages {
                masks.push(Mamb::build(
                    &mut b,
                    &format!("mamb{j}"),
                    config.skip_width(j),
                    config.mixing_strategy_skip,
                    config.mamb_hidden_layers,
                )?);
            }
        }

        let bottleneck_width = *config.backbone_widths.last().expect("validated non-empty");
        let bottleneck = MixBlock::build(&mut b, "bottleneck", bottleneck_width, config.mixing_strategy_bottleneck)?;

        // Built coarsest first, which is the order they run in.
        let mut decoder = Vec::with_capacity(stages);
        let mut width = bottleneck_width;
        for j in (0..stages).rev() {
            let out = config.decoder_width(j);
            decoder.push(UpBlock::build(&mut b, &format!("decoder.up{j}"), width, out)?);
            width = out;
        }

        let classifier = match config.classifier {
            ClassifierKind::PwMlp => Classifier::PwMlp(PwMlp::build(
                &mut b,
                "classifier",
                width,
                1,
                config.mamb_hidden_layers,
                FinalActivation::Sigmoid,
            )?),
            ClassifierKind::DirectSigmoid => {
                Classifier::Direct(b.conv("classifier.out", 1, width, 1, ConvSpec::pointwise(), true)?)
            }
        };

        Ok(TinyCd { config, params, encoder, masks, bottleneck, decoder, classifier })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Exact number of scalar parameters, biases and PReLU slopes included.
    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Kernel weights of all mixing convolutions, biases excluded.
    pub fn mixing_weight_count(&self) -> usize {
        self.mix_blocks().filter_map(|m| m.conv.as_ref()).map(|c| self.params.get(c.weight).numel()).sum()
    }

    fn mix_blocks(&self) -> impl Iterator<Item = &MixBlock> {
        self.masks.iter().map(|m| &m.mix).chain(std::iter::once(&self.bottleneck))
    }

    pub fn bottleneck(&self) -> &MixBlock {
        &self.bottleneck
    }

    pub fn mask_blocks(&self) -> &[Mamb] {
        &self.masks
    }

    pub fn decoder(&self) -> &[UpBlock] {
        &self.decoder
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    /// Runs the shared encoder on one image. Returns every level's output;
    /// the last one is the embedding.
    pub fn backbone_forward(&self, image: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let s = image.shape();
        if s.c != self.config.input_channels {
            return Err(Error::dim(
                "backbone_forward",
                format!("expected {} input channels, got {}", self.config.input_channels, s.c),
            ));
        }
        self.config.check_input_size(s.h, s.w)?;
        let mut features = Vec::with_capacity(self.encoder.len());
        let mut x = image.clone();
        for block in &self.encoder {
            x = block.forward(&self.params, &x)?;
            features.push(x.clone());
        }
        Ok(features)
    }

    /// Change probability for a registered pair.
    pub fn forward(&self, reference: &Tensor<T>, comparison: &Tensor<T>) -> Result<ForwardOutput<T>> {
        if reference.shape() != comparison.shape() {
            return Err(Error::Validation(format!(
                "image pair shapes differ: {} vs {}",
                reference.shape(),
                comparison.shape()
            )));
        }
        let fx = self.backbone_forward(reference)?;
        let fy = self.backbone_forward(comparison)?;

        let mut masks = Vec::with_capacity(self.masks.len());
        for (j, mamb) in self.masks.iter().enumerate() {
            let m = if j == 0 {
                mamb.forward(&self.params, reference, comparison)?
            } else {
                let level = self.config.level_at_resolution(j).expect("resolution exists");
                mamb.forward(&self.params, &fx[level], &fy[level])?
            };
            masks.push(m);
        }

        let last = fx.len() - 1;
        let mut u = self.bottleneck.forward(&self.params, &fx[last], &fy[last])?;
        let stages = self.decoder.len();
        for (i, up) in self.decoder.iter().enumerate() {
            let j = stages - 1 - i;
            u = up.forward(&self.params, &u, masks.get(j))?;
        }
        let prediction = self.classifier.forward(&self.params, &u)?;
        Ok(ForwardOutput { prediction, masks })
    }

    /// Forward pass without recording a graph.
    pub fn predict(&self, reference: &Tensor<T>, comparison: &Tensor<T>) -> Result<ForwardOutput<T>> {
        let _guard = crate::tensor::no_grad();
        self.forward(reference, comparison)
    }
}
