use proptest::prelude::*;
use tinycd::train::{cosine_lr, AdamWConfig, OptimizerState, ScheduleConfig};
use tinycd::{Error, ParamStore};

fn store(values: &[f64]) -> ParamStore<f64> {
    let mut p = ParamStore::new();
    p.add("w", [1, 1, 1, values.len()], values.to_vec()).unwrap();
    p
}

#[test]
fn zero_gradient_steps_only_decay() {
    let cfg = AdamWConfig { lr: 1e-2, weight_decay: 0.3, ..AdamWConfig::default() };
    let init = [1.5, -0.25, 3.0, 0.0];
    let mut p = store(&init);
    let mut st = OptimizerState::new(cfg, &p);
    let n = 25;
    for _ in 0..n {
        p.iter().next().unwrap().value().set_grad(vec![0.0; 4]).unwrap();
        st.step(&mut p, cfg.lr).unwrap();
    }
    let factor = (1.0 - cfg.lr * cfg.weight_decay).powi(n);
    for (w, w0) in p.values()[0].iter().zip(init) {
        assert!((w - w0 * factor).abs() <= 1e-10, "{w} vs {}", w0 * factor);
    }
}

/// Scalar AdamW written out step by step.
fn reference_adamw(cfg: &AdamWConfig, mut w: f64, grads: &[f64], lr: f64) -> f64 {
    let (mut m, mut v, mut vmax) = (0.0, 0.0, 0.0f64);
    for (t, &g) in grads.iter().enumerate() {
        let t = (t + 1) as i32;
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        vmax = vmax.max(v);
        let vv = if cfg.amsgrad { vmax } else { v };
        let mhat = m / (1.0 - cfg.beta1.powi(t));
        let vhat = vv / (1.0 - cfg.beta2.powi(t));
        w = w - lr * mhat / (vhat.sqrt() + cfg.eps) - lr * cfg.weight_decay * w;
    }
    w
}

proptest! {
    #[test]
    fn matches_scalar_reference(
        w0 in -2.0f64..2.0,
        grads in proptest::collection::vec(-1.0f64..1.0, 1..12),
        lr in 1e-4f64..1e-1,
        wd in 0.0f64..0.1,
        amsgrad in any::<bool>(),
    ) {
        let cfg = AdamWConfig { lr, weight_decay: wd, amsgrad, ..AdamWConfig::default() };
        let mut p = store(&[w0]);
        let mut st = OptimizerState::new(cfg, &p);
        for &g in &grads {
            p.iter().next().unwrap().value().set_grad(vec![g]).unwrap();
            st.step(&mut p, lr).unwrap();
        }
        let expected = reference_adamw(&cfg, w0, &grads, lr);
        prop_assert!((p.values()[0][0] - expected).abs() <= 1e-12, "{} vs {}", p.values()[0][0], expected);
        prop_assert_eq!(st.step, grads.len() as u64);
    }

    #[test]
    fn schedule_is_monotone_and_bounded(
        lr_min in 0.0f64..1e-3,
        extra in 0.0f64..1e-2,
        total in 1usize..200,
    ) {
        let c = ScheduleConfig { lr_max: lr_min + extra, lr_min, total_epochs: total };
        prop_assert_eq!(cosine_lr(0, &c).unwrap(), c.lr_max);
        prop_assert_eq!(cosine_lr(total, &c).unwrap(), c.lr_min);
        let mut prev = f64::INFINITY;
        for e in 0..=total {
            let lr = cosine_lr(e, &c).unwrap();
            prop_assert!(lr <= prev && lr >= c.lr_min && lr <= c.lr_max);
            prev = lr;
        }
        prop_assert!(cosine_lr(total + 1, &c).is_err());
    }
}

#[test]
fn state_must_match_parameters() {
    let p = store(&[1.0, 2.0]);
    let st = OptimizerState::new(AdamWConfig::default(), &p);
    let mut other = store(&[1.0, 2.0, 3.0]);
    let mut st2 = st.clone();
    assert!(matches!(st2.step(&mut other, 1e-3), Err(Error::Compatibility(_))));
    let mut p = p;
    let mut st = st;
    assert!(matches!(st.step(&mut p, 1e-3), Err(Error::Usage(_))));
}
