//! Central finite-difference verification of analytic gradients.
//!
//! The relative error at each coordinate is
//! `|a - n| / max(|a|, |n|, 1e-8)`, where `a` is the gradient produced by
//! [`Tensor::backward`] and `n` is the five-point central difference
//! `(-f(x+2ε) + 8f(x+ε) - 8f(x-ε) + f(x-2ε)) / 12ε`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{ModelConfig, TinyCd};
use crate::ops::{self, LossKind};
use crate::tensor::{no_grad, record_branches, replay_branches, Tensor};

/// Step used by the 64-bit suites.
pub const DEFAULT_EPS: f64 = 1e-3;
/// Bound on the relative error of every single-op check.
pub const OP_TOLERANCE: f64 = 1e-6;
/// Bound on the relative error of the end-to-end model check.
pub const MODEL_TOLERANCE: f64 = 1e-4;

/// Backward functions that [`crate::tensor::inject_backward_fault`] can
/// corrupt, by name.
pub const FAULTABLE_OPS: &[&str] = &[
    "add",
    "sub",
    "mul",
    "scale",
    "sum",
    "interleave_concat",
    "concat_channels",
    "hadamard_mask",
    "bilinear_upsample",
    "conv2d",
    "prelu",
    "sigmoid",
    "instance_norm",
    "bce_loss",
    "mse_loss",
    "soft_iou_loss",
];

/// Worst coordinate found by a check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Worst {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates: usize,
    pub worst: Option<Worst>,
}

impl GradCheckReport {
    fn record(&mut self, input: usize, index: usize, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.coordinates += 1;
        if self.worst.is_none() || err > self.max_rel_error {
            self.max_rel_error = err;
            self.worst = Some(Worst { input, index, analytic, numeric });
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against five-point differences of `eval` around
/// `point`. `point` is perturbed in place and restored afterwards.
pub fn compare_with_finite_differences(
    point: &mut [Vec<f64>],
    analytic: &[Vec<f64>],
    eps: f64,
    mut eval: impl FnMut(&[Vec<f64>]) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport { max_rel_error: 0.0, coordinates: 0, worst: None };
    for input in 0..point.len() {
        for index in 0..point[input].len() {
            let orig = point[input][index];
            let mut f = [0.0; 4];
            for (slot, k) in [2.0, 1.0, -1.0, -2.0].into_iter().enumerate() {
                point[input][index] = orig + k * eps;
                f[slot] = eval(point)?;
            }
            point[input][index] = orig;
            let numeric = (-f[0] + 8.0 * f[1] - 8.0 * f[2] + f[3]) / (12.0 * eps);
            report.record(input, index, analytic[input][index], numeric);
        }
    }
    Ok(report)
}

/// Checks every coordinate of every input of a scalar-valued `f`.
///
/// `f` receives differentiable leaves shaped like `inputs`; its result must
/// be a single-element tensor.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let leaves = inputs.iter().map(|t| Tensor::parameter(t.shape(), t.to_vec())).collect::<Result<Vec<_>>>()?;
    f(&leaves)?.backward()?;
    let analytic: Vec<Vec<f64>> = leaves.iter().map(|t| t.grad_or_zeros()).collect();

    let shapes: Vec<_> = inputs.iter().map(|t| t.shape()).collect();
    let mut point: Vec<Vec<f64>> = inputs.iter().map(|t| t.to_vec()).collect();
    compare_with_finite_differences(&mut point, &analytic, eps, |values| {
        let _guard = no_grad();
        let args =
            shapes.iter().zip(values).map(|(&s, v)| Tensor::from_vec(s, v.clone())).collect::<Result<Vec<_>>>()?;
        f(&args)?.item()
    })
}

/// Checks the gradient of `loss(model(a, b), target)` with respect to every
/// scalar parameter of `model`. Parameter values are restored afterwards.
///
/// The model is piecewise smooth: prelu has a kink at zero, and with
/// instance normalization coupling whole channels almost any parameter step
/// moves some prelu input across it. Differences are therefore taken on the
/// smooth extension of the unperturbed point's linear piece (prelu branches
/// frozen to their decisions at the unperturbed point), which agrees with
/// the model around that point and so has the same derivative. Each
/// coordinate uses the five-point central stencil
/// `D(h) = (-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`, Richardson
/// extrapolated as `(16 D(eps/2) - D(eps)) / 15`. Instance norm over a 2×2
/// map is curved enough that `D(eps)` alone is off by ~1e-3 relative.
pub fn model_grad_check(
    model: &mut TinyCd<f64>,
    reference: &Tensor<f64>,
    comparison: &Tensor<f64>,
    target: &Tensor<f64>,
    loss: LossKind,
    eps: f64,
) -> Result<GradCheckReport> {
    model.params().zero_grad();
    let (out, pattern) = record_branches(|| model.forward(reference, comparison));
    loss.apply(&out?.prediction, target)?.backward()?;
    let analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.value().grad_or_zeros()).collect();
    model.params().zero_grad();

    let eval = |model: &TinyCd<f64>| -> Result<f64> {
        let _guard = no_grad();
        replay_branches(&pattern, || loss.apply(&model.forward(reference, comparison)?.prediction, target)?.item())
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, coordinates: 0, worst: None };
    for (input, grads) in analytic.iter().enumerate() {
        let original = model.params().values().swap_remove(input);
        let mut values = original.clone();
        for (index, &a) in grads.iter().enumerate() {
            let mut five_point = |h: f64| -> Result<f64> {
                let mut f = [0.0; 4];
                for (slot, k) in [2.0, 1.0, -1.0, -2.0].into_iter().enumerate() {
                    values[index] = original[index] + k * h;
                    model.params_mut().set_by_index(input, values.clone())?;
                    f[slot] = eval(model)?;
                }
                values[index] = original[index];
                Ok((-f[0] + 8.0 * f[1] - 8.0 * f[2] + f[3]) / (12.0 * h))
            };
            let coarse = five_point(eps)?;
            let fine = five_point(eps / 2.0)?;
            report.record(input, index, a, (16.0 * fine - coarse) / 15.0);
        }
        model.params_mut().set_by_index(input, original)?;
    }
    Ok(report)
}

/// Outcome of one entry of [`op_suite`].
#[derive(Debug, Clone)]
pub struct OpCheck {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error <= OP_TOLERANCE
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("sized")
}

fn binary(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect()).expect("sized")
}

/// Values in `[-1, -0.2] ∪ [0.2, 1]`, clear of the prelu kink.
fn off_zero(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.2..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).expect("sized")
}

/// `Σ w ⊙ y` with fixed random `w`, so every output element carries a
/// distinct upstream gradient.
fn project(y: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    let w = uniform(&mut ChaCha8Rng::seed_from_u64(seed), y.shape().dims(), -1.0, 1.0);
    Ok(ops::sum(&ops::mul(y, &w)?))
}

type OpFn<'a> = dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>> + 'a;

/// Gradient checks of every differentiable op on small random 64-bit inputs.
pub fn op_suite(seed: u64) -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut checks = Vec::new();
    let mut run = |name: &'static str, inputs: Vec<Tensor<f64>>, f: &OpFn<'_>| -> Result<()> {
        let report = grad_check(f, &inputs, DEFAULT_EPS)?;
        checks.push(OpCheck { name, report });
        Ok(())
    };

    let pw = seed ^ 0x9e37;
    run(
        "conv2d",
        vec![
            uniform(r, [2, 4, 5, 5], -1.0, 1.0),
            uniform(r, [6, 2, 3, 3], -1.0, 1.0),
            uniform(r, [1, 6, 1, 1], -1.0, 1.0),
        ],
        &|x| project(&ops::conv2d(&x[0], &x[1], Some(&x[2]), 2, 1, 2)?, pw),
    )?;
    run("conv2d_dense", vec![uniform(r, [1, 3, 4, 4], -1.0, 1.0), uniform(r, [2, 3, 3, 3], -1.0, 1.0)], &|x| {
        project(&ops::conv2d(&x[0], &x[1], None, 1, 1, 1)?, pw)
    })?;
    run(
        "depthwise_separable_conv",
        vec![
            uniform(r, [1, 3, 5, 5], -1.0, 1.0),
            uniform(r, [3, 1, 3, 3], -1.0, 1.0),
            uniform(r, [4, 3, 1, 1], -1.0, 1.0),
            uniform(r, [1, 4, 1, 1], -1.0, 1.0),
        ],
        &|x| project(&ops::depthwise_separable_conv(&x[0], &x[1], &x[2], Some(&x[3]))?, pw),
    )?;
    run("instance_norm", vec![uniform(r, [2, 3, 3, 4], -1.0, 1.0)], &|x| {
        project(&ops::instance_norm(&x[0], ops::INSTANCE_NORM_EPS)?, pw)
    })?;
    run("prelu", vec![off_zero(r, [2, 3, 3, 3]), uniform(r, [1, 3, 1, 1], 0.05, 0.5)], &|x| {
        project(&ops::prelu(&x[0], &x[1])?, pw)
    })?;
    run("sigmoid", vec![uniform(r, [2, 2, 3, 3], -3.0, 3.0)], &|x| project(&ops::sigmoid(&x[0]), pw))?;
    run("interleave_concat", vec![uniform(r, [2, 3, 2, 2], -1.0, 1.0), uniform(r, [2, 3, 2, 2], -1.0, 1.0)], &|x| {
        project(&ops::interleave_concat(&x[0], &x[1])?, pw)
    })?;
    run("concat_channels", vec![uniform(r, [2, 3, 2, 2], -1.0, 1.0), uniform(r, [2, 3, 2, 2], -1.0, 1.0)], &|x| {
        project(&ops::concat_channels(&x[0], &x[1])?, pw)
    })?;
    run("hadamard_mask", vec![uniform(r, [2, 3, 4, 4], -1.0, 1.0), uniform(r, [2, 1, 4, 4], -1.0, 1.0)], &|x| {
        project(&ops::hadamard_mask(&x[0], &x[1])?, pw)
    })?;
    run("bilinear_upsample", vec![uniform(r, [1, 2, 3, 4], -1.0, 1.0)], &|x| {
        project(&ops::bilinear_upsample(&x[0], 6, 8)?, pw)
    })?;
    run("add", vec![uniform(r, [1, 2, 3, 3], -1.0, 1.0), uniform(r, [1, 2, 3, 3], -1.0, 1.0)], &|x| {
        project(&ops::add(&x[0], &x[1])?, pw)
    })?;
    run("sub", vec![uniform(r, [1, 2, 3, 3], -1.0, 1.0), uniform(r, [1, 2, 3, 3], -1.0, 1.0)], &|x| {
        project(&ops::sub(&x[0], &x[1])?, pw)
    })?;
    run("mul", vec![uniform(r, [1, 2, 3, 3], -1.0, 1.0), uniform(r, [1, 2, 3, 3], -1.0, 1.0)], &|x| {
        project(&ops::mul(&x[0], &x[1])?, pw)
    })?;
    run("scale", vec![uniform(r, [1, 2, 3, 3], -1.0, 1.0)], &|x| project(&ops::scale(&x[0], -1.7), pw))?;
    run("sum", vec![uniform(r, [2, 2, 3, 3], -1.0, 1.0)], &|x| Ok(ops::sum(&x[0])))?;

    let target = binary(r, [2, 1, 4, 4]);
    let pred = uniform(r, [2, 1, 4, 4], 0.05, 0.95);
    for kind in [LossKind::Bce, LossKind::Mse, LossKind::Iou, LossKind::BceIou] {
        let name = match kind {
            LossKind::Bce => "bce_loss",
            LossKind::Mse => "mse_loss",
            LossKind::Iou => "soft_iou_loss",
            LossKind::BceIou => "bce_plus_iou_loss",
        };
        run(name, vec![pred.clone()], &|x| kind.apply(&x[0], &target))?;
    }
    Ok(checks)
}

/// Architecture used for the end-to-end check: the default topology at
/// reduced widths, so that every parameter can be perturbed in seconds.
pub fn check_model_config() -> ModelConfig {
    ModelConfig { backbone_widths: vec![6, 8, 12], ..ModelConfig::default() }
}

/// End-to-end check of `config` on a random `2×3×16×16` pair and binary
/// target under `loss`.
pub fn model_suite(config: ModelConfig, loss: LossKind, seed: u64) -> Result<GradCheckReport> {
    let mut model = TinyCd::<f64>::new(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let a = uniform(&mut rng, [2, 3, 16, 16], 0.0, 1.0);
    let b = uniform(&mut rng, [2, 3, 16, 16], 0.0, 1.0);
    let g = binary(&mut rng, [2, 1, 16, 16]);
    model_grad_check(&mut model, &a, &b, &g, loss, DEFAULT_EPS)
}
