//! Building blocks of the change-detection network. Every block owns
//! [`ParamId`]s only; values live in the model's [`ParamStore`].

use rand::Rng;

use crate::error::Result;
use crate::model::config::MixingStrategy;
use crate::ops::{self, INSTANCE_NORM_EPS};
use crate::param::{fan_in_uniform, ParamId, ParamStore};
use crate::tensor::{Element, Tensor};

/// PReLU slope at initialization.
pub const PRELU_INIT: f64 = 0.25;

/// Registers parameters under a name prefix.
pub(crate) struct Builder<'a, T: Element, R: Rng> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut R,
}

impl<T: Element, R: Rng> Builder<'_, T, R> {
    pub fn conv(
        &mut self,
        name: &str,
        cout: usize,
        cin: usize,
        k: usize,
        spec: ConvSpec,
        bias: bool,
    ) -> Result<Conv2d> {
        let cin_g = cin / spec.groups;
        let fan_in = cin_g * k * k;
        let w = fan_in_uniform(self.rng, fan_in, cout * fan_in);
        let weight = self.store.add(format!("{name}.weight"), [cout, cin_g, k, k], w)?;
        let bias = if bias {
            Some(self.store.add(format!("{name}.bias"), [1, cout, 1, 1], vec![T::zero(); cout])?)
        } else {
            None
        };
        Ok(Conv2d { weight, bias, spec })
    }

    pub fn slope(&mut self, name: &str, channels: usize) -> Result<ParamId> {
        self.store.add(format!("{name}.slope"), [1, channels, 1, 1], vec![T::lit(PRELU_INIT); channels])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub const fn same3() -> Self {
        ConvSpec { stride: 1, padding: 1, groups: 1 }
    }

    pub const fn pointwise() -> Self {
        ConvSpec { stride: 1, padding: 0, groups: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
}

impl Conv2d {
    pub fn forward<T: Element>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::conv2d(
            x,
            p.get(self.weight),
            self.bias.map(|b| p.get(b)),
            self.spec.stride,
            self.spec.padding,
            self.spec.groups,
        )
    }
}

/// `conv(k=3) → instance_norm → prelu`, one encoder level.
#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub conv: Conv2d,
    pub slope: ParamId,
}

impl EncoderBlock {
    pub(crate) fn build<T: Element, R: Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
    ) -> Result<Self> {
        let spec = ConvSpec { stride, ..ConvSpec::same3() };
        Ok(EncoderBlock {
            conv: b.conv(&format!("{name}.conv"), cout, cin, 3, spec, true)?,
            slope: b.slope(&format!("{name}.act"), cout)?,
        })
    }

    pub fn forward<T: Element>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.conv.forward(p, x)?;
        ops::prelu(&ops::instance_norm(&y, INSTANCE_NORM_EPS)?, p.get(self.slope))
    }
}

/// Fuses a pair of same-shaped tensors into one with the same channel count.
#[derive(Debug, Clone)]
pub struct MixBlock {
    pub strategy: MixingStrategy,
    pub conv: Option<Conv2d>,
    pub slope: ParamId,
}

impl MixBlock {
    pub(crate) fn build<T: Element, R: Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        channels: usize,
        strategy: MixingStrategy,
    ) -> Result<Self> {
        let conv = match strategy {
            MixingStrategy::InterleaveGrouped => Some(b.conv(
                &format!("{name}.conv"),
                channels,
                2 * channels,
                3,
                ConvSpec { groups: channels, ..ConvSpec::same3() },
                true,
            )?),
            MixingStrategy::ConcatConv => {
                Some(b.conv(&format!("{name}.conv"), channels, 2 * channels, 3, ConvSpec::same3(), true)?)
            }
            MixingStrategy::Subtraction => None,
        };
        Ok(MixBlock { strategy, conv, slope: b.slope(&format!("{name}.act"), channels)? })
    }

    /// Output before normalization and activation.
    pub fn pre_norm<T: Element>(&self, p: &ParamStore<T>, x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
        match (self.strategy, &self.conv) {
            (MixingStrategy::Subtraction, _) => ops::sub(x, y),
            (MixingStrategy::InterleaveGrouped, Some(conv)) => conv.forward(p, &ops::interleave_concat(x, y)?),
            (MixingStrategy::ConcatConv, Some(conv)) => conv.forward(p, &ops::concat_channels(x, y)?),
            _ => unreachable!("learned mixing strategies always carry a convolution"),
        }
    }

    pub fn forward<T: Element>(&self, p: &ParamStore<T>, x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
        let z = self.pre_norm(p, x, y)?;
        ops::prelu(&ops::instance_norm(&z, INSTANCE_NORM_EPS)?, p.get(self.slope))
    }

    /// Sets every grouped kernel to `+1` (first channel) / `-1` (second
    /// channel) at the centre tap and zero elsewhere, bias zero, so that the
    /// pre-normalization output is exactly `X - Y`. Only meaningful for
    /// [`MixingStrategy::InterleaveGrouped`].
    pub fn init_as_subtraction<T: Element>(&self, p: &mut ParamStore<T>) -> Result<()> {
        let Some(conv) = &self.conv else { return Ok(()) };
        let shape = p.get(conv.weight).shape();
        let mut w = vec![T::zero(); shape.numel()];
        let (cy, cx) = (shape.h / 2, shape.w / 2);
        for oc in 0..shape.n {
            w[shape.index(oc, 0, cy, cx)] = T::one();
            if shape.c > 1 {
                w[shape.index(oc, 1, cy, cx)] = -T::one();
            }
        }
        p.set(conv.weight, w)?;
        if let Some(b) = conv.bias {
            let n = p.get(b).numel();
            p.set(b, vec![T::zero(); n])?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinalActivation {
    Prelu,
    Sigmoid,
}

/// Pixel-wise MLP: `hidden` blocks of (`1×1` conv `C → C`, prelu), then a
/// `1×1` conv `C → out` and the final activation.
#[derive(Debug, Clone)]
pub struct PwMlp {
    pub hidden: Vec<(Conv2d, ParamId)>,
    pub last: Conv2d,
    pub final_slope: Option<ParamId>,
}

impl PwMlp {
    pub(crate) fn build<T: Element, R: Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        channels: usize,
        out_channels: usize,
        hidden_layers: usize,
        activation: FinalActivation,
    ) -> Result<Self> {
        let mut hidden = Vec::with_capacity(hidden_layers);
        for i in 0..hidden_layers {
            let conv = b.conv(&format!("{name}.hidden{i}"), channels, channels, 1, ConvSpec::pointwise(), true)?;
            let slope = b.slope(&format!("{name}.hidden{i}.act"), channels)?;
            hidden.push((conv, slope));
        }
        let last = b.conv(&format!("{name}.out"), out_channels, channels, 1, ConvSpec::pointwise(), true)?;
        let final_slope = match activation {
            FinalActivation::Prelu => Some(b.slope(&format!("{name}.out.act"), out_channels)?),
            FinalActivation::Sigmoid => None,
        };
        Ok(PwMlp { hidden, last, final_slope })
    }

    pub fn forward<T: Element>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for (conv, slope) in &self.hidden {
            h = ops::prelu(&conv.forward(p, &h)?, p.get(*slope))?;
        }
        let out = self.last.forward(p, &h)?;
        match self.final_slope {
            Some(slope) => ops::prelu(&out, p.get(slope)),
            None => Ok(ops::sigmoid(&out)),
        }
    }
}

/// Mixing block followed by a single-output pixel-wise MLP: produces the
/// attention mask for one skip connection.
#[derive(Debug, Clone)]
pub struct Mamb {
    pub mix: MixBlock,
    pub mlp: PwMlp,
}

impl Mamb {
    pub(crate) fn build<T: Element, R: Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        channels: usize,
        strategy: MixingStrategy,
        hidden_layers: usize,
    ) -> Result<Self> {
        Ok(Mamb {
            mix: MixBlock::build(b, &format!("{name}.mix"), channels, strategy)?,
            mlp: PwMlp::build(b, &format!("{name}.mlp"), channels, 1, hidden_layers, FinalActivation::Prelu)?,
        })
    }

    pub fn forward<T: Element>(&self, p: &ParamStore<T>, x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
        self.mlp.forward(p, &self.mix.forward(p, x, y)?)
    }
}

/// Decoder stage: factor-2 bilinear upsampling, optional mask gating, then
/// depthwise-separable conv → instance_norm → prelu.
#[derive(Debug, Clone)]
pub struct UpBlock {
    pub depthwise: ParamId,
    pub pointwise: ParamId,
    pub bias: ParamId,
    pub slope: ParamId,
}

impl UpBlock {
    pub(crate) fn build<T: Element, R: Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        cin: usize,
        cout: usize,
    ) -> Result<Self> {
        let dw = fan_in_uniform(b.rng, 9, cin * 9);
        let depthwise = b.store.add(format!("{name}.depthwise.weight"), [cin, 1, 3, 3], dw)?;
        let pw = fan_in_uniform(b.rng, cin, cout * cin);
        let pointwise = b.store.add(format!("{name}.pointwise.weight"), [cout, cin, 1, 1], pw)?;
        let bias = b.store.add(format!("{name}.pointwise.bias"), [1, cout, 1, 1], vec![T::zero(); cout])?;
        let slope = b.slope(&format!("{name}.act"), cout)?;
        Ok(UpBlock { depthwise, pointwise, bias, slope })
    }

    /// `u` is `N×C×H'×W'`; the result is at `2H'×2W'`. With `mask = None` the
    /// gating step is skipped.
    pub fn forward<T: Element>(&self, p: &ParamStore<T>, u: &Tensor<T>, mask: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let s = u.shape();
        let (h, w) = (2 * s.h, 2 * s.w);
        if let Some(m) = mask {
            let ms = m.shape();
            if ms.h != h || ms.w != w {
                return Err(crate::Error::dim(
                    "up_block",
                    format!("mask {ms} must be at twice the input resolution ({h}×{w})"),
                ));
            }
        }
        let mut x = ops::bilinear_upsample(u, h, w)?;
        if let Some(m) = mask {
            x = ops::hadamard_mask(&x, m)?;
        }
        let y =
            ops::depthwise_separable_conv(&x, p.get(self.depthwise), p.get(self.pointwise), Some(p.get(self.bias)))?;
        ops::prelu(&ops::instance_norm(&y, INSTANCE_NORM_EPS)?, p.get(self.slope))
    }
}

#[derive(Debug, Clone)]
pub enum Classifier {
    PwMlp(PwMlp),
    Direct(Conv2d),
}

impl Classifier {
    pub fn forward<T: Element>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Classifier::PwMlp(mlp) => mlp.forward(p, x),
            Classifier::Direct(conv) => Ok(ops::sigmoid(&conv.forward(p, x)?)),
        }
    }
}
