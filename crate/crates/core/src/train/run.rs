use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{load_dataset, save_checkpoint, CheckpointMeta, SamplePair, Split};
use crate::error::{Error, Result};
use crate::metrics::Metrics;
use crate::model::TinyCd;
use crate::tensor::Element;
use crate::train::{cosine_lr, evaluate, train_epoch, EpochPlan, OptimizerState};

/// One line of `train_log.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    /// Completed epochs.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_f1: f64,
    pub val_iou: f64,
    pub val_precision: f64,
    pub val_recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub best_epoch: usize,
    pub best: Metrics,
    pub last: Metrics,
    pub records: Vec<EpochRecord>,
    pub param_count: usize,
}

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

/// Loads every sample of a split.
pub fn load_split(root: &Path, split: Split) -> Result<Vec<SamplePair>> {
    load_dataset(root, split)?.load_all()
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains on `data_root/train`, validating on `data_root/val` after every
/// epoch. Writes into `out`: the effective `config.toml`, `train_log.jsonl`,
/// `last.ckpt`, `best.ckpt` (highest validation F1, earliest on ties) and
/// `metrics.json` / `metrics.txt` for the best checkpoint.
pub fn run_training<T: Element>(
    cfg: &RunConfig,
    train: &[SamplePair],
    val: &[SamplePair],
    out: &Path,
    echo: &mut dyn FnMut(&str),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Usage("training and validation splits must both be non-empty".into()));
    }
    for s in train.iter().chain(val) {
        cfg.model.check_input_size(s.height(), s.width())?;
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join("config.toml"), &cfg.to_toml())?;
    let log_path = out.join("train_log.jsonl");
    let mut log = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;

    let mut model = TinyCd::<T>::new(cfg.model.clone(), cfg.seed)?;
    let mut state = OptimizerState::new(cfg.optimizer, model.params());
    let schedule = cfg.schedule();
    echo(&format!("model: {} parameters", model.param_count()));

    let initial = evaluate(&model, val, cfg.threshold, cfg.batch_size)?;
    let mut best = initial;
    let mut best_epoch = 0;
    let mut last = initial;
    let meta = CheckpointMeta { epoch: 0, val_f1: Some(initial.f1) };
    save_checkpoint(&out.join(BEST_CHECKPOINT), &model, Some(&state), &meta)?;
    if cfg.epochs == 0 {
        save_checkpoint(&out.join(LAST_CHECKPOINT), &model, Some(&state), &meta)?;
    }

    let mut records = Vec::with_capacity(cfg.epochs);
    for e in 0..cfg.epochs {
        let start = Instant::now();
        let lr = cosine_lr(e, &schedule)?;
        let plan = EpochPlan {
            epoch: e,
            lr,
            batch_size: cfg.batch_size,
            loss: cfg.loss,
            seed: cfg.seed,
            augmentation: &cfg.augmentation,
        };
        let stats = train_epoch(&mut model, train, &mut state, &plan)?;
        let metrics = evaluate(&model, val, cfg.threshold, cfg.batch_size)?;
        let record = EpochRecord {
            epoch: e + 1,
            lr,
            train_loss: stats.mean_loss,
            val_f1: metrics.f1,
            val_iou: metrics.iou,
            val_precision: metrics.precision,
            val_recall: metrics.recall,
        };
        let line = serde_json::to_string(&record).expect("record serializes");
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        echo(&format!("{line} ({:.1}s)", start.elapsed().as_secs_f64()));

        let meta = CheckpointMeta { epoch: e + 1, val_f1: Some(metrics.f1) };
        save_checkpoint(&out.join(LAST_CHECKPOINT), &model, Some(&state), &meta)?;
        if metrics.f1 > best.f1 {
            best = metrics;
            best_epoch = e + 1;
            save_checkpoint(&out.join(BEST_CHECKPOINT), &model, Some(&state), &meta)?;
        }
        last = metrics;
        records.push(record);
    }

    write_file(&out.join("metrics.json"), &best.to_json())?;
    write_file(&out.join("metrics.txt"), &best.to_text())?;
    write_file(&out.join("last_metrics.json"), &last.to_json())?;
    Ok(TrainOutcome { best_epoch, best, last, records, param_count: model.param_count() })
}
