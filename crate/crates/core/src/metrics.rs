//! Change-class confusion counting and the derived scores.

use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Binarizes `p`: 1 where `p >= t`, else 0.
pub fn threshold<T: Element>(p: &Tensor<T>, t: f64) -> Tensor<T> {
    let t = T::lit(t);
    let data = p.data().iter().map(|&v| if v >= t { T::one() } else { T::zero() }).collect();
    Tensor::from_vec(p.shape(), data).expect("same element count")
}

/// Pixel tallies for the change class (value 1).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Tallies one pixel.
    pub fn push(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

impl Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts { tp: self.tp + o.tp, tn: self.tn + o.tn, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_ }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: ConfusionCounts) {
        *self = *self + o;
    }
}

impl Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = ConfusionCounts>>(iter: I) -> Self {
        iter.fold(ConfusionCounts::default(), Add::add)
    }
}

fn binary_values<T: Element>(t: &Tensor<T>, what: &str) -> Result<Vec<bool>> {
    t.data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v == T::one() {
                Ok(true)
            } else if v == T::zero() {
                Ok(false)
            } else {
                Err(Error::Validation(format!("{what} is not binary: element {i} is {}", v.as_f64())))
            }
        })
        .collect()
}

/// Counts agreement between a binary prediction and a binary label.
pub fn confusion<T: Element>(pred: &Tensor<T>, label: &Tensor<T>) -> Result<ConfusionCounts> {
    if pred.shape() != label.shape() {
        return Err(Error::dim("confusion", format!("prediction {} vs label {}", pred.shape(), label.shape())));
    }
    let p = binary_values(pred, "prediction")?;
    let g = binary_values(label, "label")?;
    let mut c = ConfusionCounts::default();
    for (p, g) in p.into_iter().zip(g) {
        c.push(p, g);
    }
    Ok(c)
}

/// Precision, recall, F1, IoU and overall accuracy together with the counts
/// they were derived from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
    pub oa: f64,
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// `num / den`, with `0/0` read as a perfect score when the prediction and
/// the label are both empty of change, and as zero otherwise.
fn ratio(num: u64, den: u64, empty_vs_empty: bool) -> f64 {
    if den == 0 {
        if empty_vs_empty {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

pub fn derive_metrics(c: ConfusionCounts) -> Result<Metrics> {
    let total = c.total();
    if total == 0 {
        return Err(Error::Usage("cannot derive metrics from zero pixels".into()));
    }
    let empty = c.tp == 0 && c.fp == 0 && c.fn_ == 0;
    let precision = ratio(c.tp, c.tp + c.fp, empty);
    let recall = ratio(c.tp, c.tp + c.fn_, empty);
    // 2PR/(P+R) written on raw counts so that F1 = 2·IoU/(1+IoU) holds to
    // rounding.
    let f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, empty);
    let iou = ratio(c.tp, c.tp + c.fp + c.fn_, empty);
    let oa = (c.tp + c.tn) as f64 / total as f64;
    Ok(Metrics { precision, recall, f1, iou, oa, tp: c.tp, tn: c.tn, fp: c.fp, fn_: c.fn_ })
}

/// Harmonic mean of precision and recall, zero when both are zero.
pub fn f1_from_pr(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// IoU implied by an F1 score.
pub fn iou_from_f1(f1: f64) -> f64 {
    f1 / (2.0 - f1)
}

impl Metrics {
    pub fn counts(&self) -> ConfusionCounts {
        ConfusionCounts { tp: self.tp, tn: self.tn, fp: self.fp, fn_: self.fn_ }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }

    /// One `key: value` line per field.
    pub fn to_text(&self) -> String {
        format!(
            "precision: {:.6}\nrecall: {:.6}\nf1: {:.6}\niou: {:.6}\noa: {:.6}\ntp: {}\ntn: {}\nfp: {}\nfn: {}\n",
            self.precision, self.recall, self.f1, self.iou, self.oa, self.tp, self.tn, self.fp, self.fn_
        )
    }
}
