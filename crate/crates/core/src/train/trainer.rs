use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{collate, SamplePair};
use crate::error::{Error, Result};
use crate::metrics::{confusion, derive_metrics, threshold, ConfusionCounts, Metrics};
use crate::model::TinyCd;
use crate::ops::LossKind;
use crate::tensor::Element;
use crate::train::augment::augment_seeded;
use crate::train::{AugmentationConfig, OptimizerState};

/// Everything one training epoch needs besides the model and optimizer.
#[derive(Debug, Clone, Copy)]
pub struct EpochPlan<'a> {
    pub epoch: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub loss: LossKind,
    /// Shuffling uses `seed + epoch`; augmentation derives per-sample seeds
    /// from `seed` mixed with the augmentation seed.
    pub seed: u64,
    pub augmentation: &'a AugmentationConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// Sample-weighted mean of the batch losses.
    pub mean_loss: f64,
    /// Counts on the (augmented) training batches at threshold 0.5.
    pub counts: ConfusionCounts,
}

/// One pass over `dataset` in seeded random order.
pub fn train_epoch<T: Element>(
    model: &mut TinyCd<T>,
    dataset: &[SamplePair],
    state: &mut OptimizerState<T>,
    plan: &EpochPlan<'_>,
) -> Result<EpochStats> {
    if dataset.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    if plan.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(plan.seed.wrapping_add(plan.epoch as u64)));

    let aug_seed = plan.seed ^ plan.augmentation.seed.rotate_left(32);
    let mut loss_sum = 0.0;
    let mut counts = ConfusionCounts::default();
    for chunk in order.chunks(plan.batch_size) {
        let augmented = if plan.augmentation.is_identity() {
            None
        } else {
            Some(
                chunk
                    .iter()
                    .map(|&i| {
                        let seed = crate::train::sample_seed(aug_seed, plan.epoch, i);
                        augment_seeded(&dataset[i], plan.augmentation, seed)
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        };
        let refs: Vec<&SamplePair> = match &augmented {
            Some(v) => v.iter().collect(),
            None => chunk.iter().map(|&i| &dataset[i]).collect(),
        };
        let (a, b, g) = collate::<T>(&refs)?;

        model.params().zero_grad();
        let out = model.forward(&a, &b)?;
        let loss = plan.loss.apply(&out.prediction, &g)?;
        let value = loss.item()?.as_f64();
        if !value.is_finite() {
            return Err(Error::Validation(format!("loss became {value} in epoch {}", plan.epoch)));
        }
        loss.backward()?;
        state.step(model.params_mut(), plan.lr)?;
        model.params().zero_grad();

        loss_sum += value * chunk.len() as f64;
        counts += confusion(&threshold(&out.prediction.detach(), 0.5), &g)?;
    }
    Ok(EpochStats { mean_loss: loss_sum / dataset.len() as f64, counts })
}

/// Confusion counts over every pixel of `dataset` and the derived scores.
/// Records no graph.
pub fn evaluate<T: Element>(
    model: &TinyCd<T>,
    dataset: &[SamplePair],
    thresh: f64,
    batch_size: usize,
) -> Result<Metrics> {
    if dataset.is_empty() {
        return Err(Error::Usage("evaluation split is empty".into()));
    }
    let mut counts = ConfusionCounts::default();
    for chunk in dataset.chunks(batch_size.max(1)) {
        let refs: Vec<&SamplePair> = chunk.iter().collect();
        let (a, b, g) = collate::<T>(&refs)?;
        let out = model.predict(&a, &b)?;
        counts += confusion(&threshold(&out.prediction, thresh), &g)?;
    }
    derive_metrics(counts)
}
