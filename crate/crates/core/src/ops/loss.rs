//! Pixel-wise segmentation losses. Targets must be strictly binary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::arith::add;
use crate::tensor::{ensure_same_shape, Backward, Element, Shape, Tensor};

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before logs.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Bce,
    Mse,
    Iou,
    BceIou,
}

impl LossKind {
    pub fn apply<T: Element>(self, pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            LossKind::Bce => bce_loss(pred, target),
            LossKind::Mse => mse_loss(pred, target),
            LossKind::Iou => soft_iou_loss(pred, target),
            LossKind::BceIou => bce_plus_iou_loss(pred, target),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Bce => "bce",
            LossKind::Mse => "mse",
            LossKind::Iou => "iou",
            LossKind::BceIou => "bce_iou",
        })
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bce" => Ok(LossKind::Bce),
            "mse" => Ok(LossKind::Mse),
            "iou" => Ok(LossKind::Iou),
            "bce_iou" => Ok(LossKind::BceIou),
            other => Err(Error::Config(format!("unknown loss '{other}' (expected bce, mse, iou, bce_iou)"))),
        }
    }
}

fn check_target<T: Element>(op: &'static str, pred: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
    ensure_same_shape(op, pred, target)?;
    if let Some(bad) = target.data().iter().find(|&&g| g != T::zero() && g != T::one()) {
        return Err(Error::Validation(format!("{op}: target contains non-binary value {bad}")));
    }
    Ok(())
}

struct BceBackward<T> {
    target: Vec<T>,
}

impl<T: Element> Backward<T> for BceBackward<T> {
    fn name(&self) -> &'static str {
        "bce_loss"
    }

    fn backward(&self, go: &[T], inputs: &[Tensor<T>], grads: &mut [Option<Vec<T>>]) {
        let p = inputs[0].data();
        let m = p.len() as f64;
        let scale = go[0].as_f64() / m;
        let grad = p
            .iter()
            .zip(&self.target)
            .map(|(&p, &g)| {
                let p = p.as_f64();
                if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
                    return T::zero();
                }
                let g = g.as_f64();
                T::lit(scale * (-g / p + (1.0 - g) / (1.0 - p)))
            })
            .collect();
        grads[0] = Some(grad);
    }
}

/// Mean binary cross-entropy over every pixel of every sample.
pub fn bce_loss<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    check_target("bce_loss", pred, target)?;
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &g)| {
            let p = p.as_f64().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            let g = g.as_f64();
            -(g * p.ln() + (1.0 - g) * (1.0 - p).ln())
        })
        .sum();
    let value = T::lit(total / pred.numel() as f64);
    Ok(Tensor::from_op(Shape::scalar(), vec![value], vec![pred.clone()], BceBackward { target: target.to_vec() }))
}

struct MseBackward<T> {
    target: Vec<T>,
}

impl<T: Element> Backward<T> for MseBackward<T> {
    fn name(&self) -> &'static str {
        "mse_loss"
    }

    fn backward(&self, go: &[T], inputs: &[Tensor<T>], grads: &mut [Option<Vec<T>>]) {
        let p = inputs[0].data();
        let k = go[0] * T::lit(2.0 / p.len() as f64);
        grads[0] = Some(p.iter().zip(&self.target).map(|(&p, &g)| k * (p - g)).collect());
    }
}

pub fn mse_loss<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    check_target("mse_loss", pred, target)?;
    let total: f64 = pred.data().iter().zip(target.data()).map(|(&p, &g)| (p.as_f64() - g.as_f64()).powi(2)).sum();
    let value = T::lit(total / pred.numel() as f64);
    Ok(Tensor::from_op(Shape::scalar(), vec![value], vec![pred.clone()], MseBackward { target: target.to_vec() }))
}

struct SoftIouBackward<T> {
    target: Vec<T>,
    intersection: f64,
    union: f64,
}

impl<T: Element> Backward<T> for SoftIouBackward<T> {
    fn name(&self) -> &'static str {
        "soft_iou_loss"
    }

    fn backward(&self, go: &[T], inputs: &[Tensor<T>], grads: &mut [Option<Vec<T>>]) {
        let n = inputs[0].numel();
        if self.union == 0.0 {
            grads[0] = Some(vec![T::zero(); n]);
            return;
        }
        let (i, u) = (self.intersection, self.union);
        let k = go[0].as_f64() / (u * u);
        grads[0] = Some(
            self.target
                .iter()
                .map(|&g| {
                    let g = g.as_f64();
                    T::lit(-k * (g * u - i * (1.0 - g)))
                })
                .collect(),
        );
    }
}

/// `1 - Σ(P·G) / Σ(P + G - P·G)`; zero when both prediction and target are
/// empty.
pub fn soft_iou_loss<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    check_target("soft_iou_loss", pred, target)?;
    let (mut inter, mut union) = (0.0f64, 0.0f64);
    for (&p, &g) in pred.data().iter().zip(target.data()) {
        let (p, g) = (p.as_f64(), g.as_f64());
        inter += p * g;
        union += p + g - p * g;
    }
    let value = if union == 0.0 { 0.0 } else { 1.0 - inter / union };
    Ok(Tensor::from_op(
        Shape::scalar(),
        vec![T::lit(value)],
        vec![pred.clone()],
        SoftIouBackward { target: target.to_vec(), intersection: inter, union },
    ))
}

/// Unweighted sum of BCE and soft-IoU.
pub fn bce_plus_iou_loss<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    add(&bce_loss(pred, target)?, &soft_iou_loss(pred, target)?)
}
