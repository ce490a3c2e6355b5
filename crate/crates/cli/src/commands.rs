use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use tinycd::data::{
    checkpoint_dtype, generate_synthetic, load_checkpoint, load_rgb, save_normalized, save_prediction, Image, Split,
    SyntheticSpec,
};
use tinycd::gradcheck::{self, GradCheckReport, MODEL_TOLERANCE, OP_TOLERANCE};
use tinycd::ops::LossKind;
use tinycd::tensor::inject_backward_fault;
use tinycd::train::{evaluate, load_split, run_training, TrainOutcome};
use tinycd::{DType, Element, Metrics, ModelConfig, Precision, RunConfig};

use crate::{Common, Status};

/// Bad command-line usage detected outside clap.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn require_out(common: &Common) -> Result<&Path> {
    common.out.as_deref().ok_or_else(|| usage("--out is required for this command"))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// The file config (or defaults) with `--set` overrides and common flags
/// applied, validated.
pub fn effective_config(common: &Common, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| usage(format!("override '{o}' is not of the form key=value")))?;
        cfg = cfg.with_override(k.trim(), v.trim())?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(p) = common.precision {
        cfg.precision = p;
    }
    if common.deterministic {
        cfg.deterministic = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset root holding train/ and val/ (overrides `data_root`).
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    /// Number of epochs (overrides `epochs`).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Config override as a dotted key, e.g. `--set model.classifier=direct_sigmoid`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

/// Loads the splits named by `cfg` and trains at the configured precision.
pub fn train_config(cfg: &RunConfig, out: &Path, echo: &mut dyn FnMut(&str)) -> Result<TrainOutcome> {
    let train = load_split(&cfg.data_root, Split::Train)?;
    let val = load_split(&cfg.data_root, Split::Val)?;
    let outcome = match cfg.precision {
        Precision::F32 => run_training::<f32>(cfg, &train, &val, out, echo)?,
        Precision::F64 => run_training::<f64>(cfg, &train, &val, out, echo)?,
    };
    Ok(outcome)
}

pub fn train(common: &Common, args: TrainArgs) -> Result<Status> {
    let mut cfg = effective_config(common, &args.overrides)?;
    if let Some(root) = args.data_root {
        cfg.data_root = root;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    let out = require_out(common)?;
    let outcome = train_config(&cfg, out, &mut |line| println!("{line}"))?;
    println!(
        "best epoch {} of {}: val f1 {:.4}, iou {:.4}",
        outcome.best_epoch, cfg.epochs, outcome.best.f1, outcome.best.iou
    );
    Ok(Status::Ok)
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset root (defaults to the config's `data_root`).
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    #[arg(long, default_value = "val")]
    pub split: Split,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
}

fn precision_for(common: &Common, checkpoint: &Path) -> Result<DType> {
    Ok(match common.precision {
        Some(p) => p.dtype(),
        None => checkpoint_dtype(checkpoint)?,
    })
}

fn eval_as<T: Element>(
    checkpoint: &Path,
    expected: Option<&ModelConfig>,
    root: &Path,
    args: &EvalArgs,
) -> Result<Metrics> {
    let ckpt = load_checkpoint::<T>(checkpoint, expected)?;
    let data = load_split(root, args.split)?;
    Ok(evaluate(&ckpt.model, &data, args.threshold, args.batch_size)?)
}

/// Metrics of `checkpoint` on one split.
pub fn eval_checkpoint(common: &Common, args: &EvalArgs) -> Result<Metrics> {
    if !(0.0..=1.0).contains(&args.threshold) {
        return Err(usage(format!("--threshold {} is outside [0, 1]", args.threshold)));
    }
    let cfg = match &common.config {
        Some(p) => Some(RunConfig::load(p)?),
        None => None,
    };
    let root = args
        .data_root
        .clone()
        .or_else(|| cfg.as_ref().map(|c| c.data_root.clone()))
        .ok_or_else(|| usage("eval needs --data-root or a --config with data_root"))?;
    let expected = cfg.as_ref().map(|c| &c.model);
    match precision_for(common, &args.checkpoint)? {
        DType::F32 => eval_as::<f32>(&args.checkpoint, expected, &root, args),
        DType::F64 => eval_as::<f64>(&args.checkpoint, expected, &root, args),
    }
}

pub fn eval(common: &Common, args: EvalArgs) -> Result<Status> {
    let m = eval_checkpoint(common, &args)?;
    print!("{}", m.to_text());
    if let Some(out) = &common.out {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        write(&out.join(format!("metrics_{}.json", args.split)), &m.to_json())?;
        write(&out.join(format!("metrics_{}.txt", args.split)), &m.to_text())?;
    }
    Ok(Status::Ok)
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Reference (earlier) image.
    #[arg(long = "image-a")]
    pub image_a: PathBuf,
    /// Comparison (later) image.
    #[arg(long = "image-b")]
    pub image_b: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Also write every skip attention mask, min-max normalized.
    #[arg(long)]
    pub dump_masks: bool,
}

fn predict_as<T: Element>(args: &PredictArgs, a: &Image, b: &Image, out: &Path) -> Result<Vec<PathBuf>> {
    let ckpt = load_checkpoint::<T>(&args.checkpoint, None)?;
    let result = ckpt.model.predict(&a.to_tensor::<T>(), &b.to_tensor::<T>())?;
    let mut written = Vec::new();
    let path = out.join("prediction.png");
    save_prediction(&Image::from_tensor(&result.prediction, 0), &path, args.threshold as f32)?;
    written.push(path);
    if args.dump_masks {
        for (j, m) in result.masks.iter().enumerate() {
            let path = out.join(format!("mask_{j}.png"));
            save_normalized(&Image::from_tensor(m, 0), &path)?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn predict(common: &Common, args: PredictArgs) -> Result<Status> {
    let out = require_out(common)?;
    let a = load_rgb(&args.image_a)?;
    let b = load_rgb(&args.image_b)?;
    if (a.height, a.width) != (b.height, b.width) {
        return Err(tinycd::Error::Validation(format!(
            "image pair sizes differ: {}×{} vs {}×{}",
            a.height, a.width, b.height, b.width
        ))
        .into());
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let written = match precision_for(common, &args.checkpoint)? {
        DType::F32 => predict_as::<f32>(&args, &a, &b, out)?,
        DType::F64 => predict_as::<f64>(&args, &a, &b, out)?,
    };
    for p in written {
        println!("{}", p.display());
    }
    Ok(Status::Ok)
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Corrupt the backward pass of this op (negative control).
    #[arg(long, value_name = "OP")]
    pub inject_fault: Option<String>,
    /// Loss used for the end-to-end check.
    #[arg(long, default_value = "bce")]
    pub loss: LossKind,
}

fn report_json(name: &str, r: &GradCheckReport, tol: f64) -> serde_json::Value {
    serde_json::json!({
        "name": name,
        "max_rel_error": r.max_rel_error,
        "coordinates": r.coordinates,
        "tolerance": tol,
        "passed": r.max_rel_error <= tol,
    })
}

pub fn gradcheck(common: &Common, args: GradcheckArgs) -> Result<Status> {
    // Only the model architecture is taken from --config; the check always
    // runs in 64-bit.
    let model = match &common.config {
        Some(p) => RunConfig::load(p)?.model,
        None => gradcheck::check_model_config(),
    };
    let seed = common.seed.unwrap_or(0);
    if let Some(op) = &args.inject_fault {
        let known = gradcheck::FAULTABLE_OPS
            .iter()
            .find(|&&k| k == op)
            .ok_or_else(|| usage(format!("unknown op '{op}' (one of: {})", gradcheck::FAULTABLE_OPS.join(", "))))?;
        inject_backward_fault(Some(known));
    }
    let ops = gradcheck::op_suite(seed);
    let full = ops.as_ref().ok().map(|_| gradcheck::model_suite(model.clone(), args.loss, seed));
    inject_backward_fault(None);
    let ops = ops?;
    let full = full.expect("ran after the op suite")?;

    let mut rows = Vec::new();
    let mut ok = true;
    for c in &ops {
        let pass = c.passed();
        ok &= pass;
        println!("{:<26} max rel error {:.3e}  {}", c.name, c.report.max_rel_error, if pass { "PASS" } else { "FAIL" });
        rows.push(report_json(c.name, &c.report, OP_TOLERANCE));
    }
    let pass = full.max_rel_error <= MODEL_TOLERANCE;
    ok &= pass;
    println!(
        "{:<26} max rel error {:.3e}  {} ({} parameters)",
        "model",
        full.max_rel_error,
        if pass { "PASS" } else { "FAIL" },
        full.coordinates
    );
    rows.push(report_json("model", &full, MODEL_TOLERANCE));
    if let Some(out) = &common.out {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let doc = serde_json::json!({ "passed": ok, "checks": rows });
        write(&out.join("gradcheck.json"), &serde_json::to_string_pretty(&doc)?)?;
    }
    Ok(if ok { Status::Ok } else { Status::CheckFailed })
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    pub train: usize,
    #[arg(long, default_value_t = 100)]
    pub val: usize,
    #[arg(long, default_value_t = 100)]
    pub test: usize,
    /// Side of the square patches.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 2)]
    pub min_shapes: usize,
    #[arg(long, default_value_t = 6)]
    pub max_shapes: usize,
    #[arg(long, default_value_t = 0.5)]
    pub toggle_prob: f64,
    #[arg(long, default_value_t = 0.1)]
    pub drift: f64,
    #[arg(long, default_value_t = 0.02)]
    pub noise: f64,
}

pub fn synth(common: &Common, args: SynthArgs) -> Result<Status> {
    let cfg = effective_config(common, &[])?;
    let root = common.out.clone().unwrap_or_else(|| cfg.data_root.clone());
    let multiple = cfg.model.cumulative_stride();
    for (split, count) in [(Split::Train, args.train), (Split::Val, args.val), (Split::Test, args.test)] {
        let spec = SyntheticSpec {
            count,
            size: args.size,
            min_shapes: args.min_shapes,
            max_shapes: args.max_shapes,
            toggle_prob: args.toggle_prob,
            drift: args.drift,
            noise: args.noise,
            seed: cfg.seed,
        };
        generate_synthetic(&spec, &root, split, multiple)?;
        println!("{}: {count} pairs", root.join(split.as_str()).display());
    }
    Ok(Status::Ok)
}
