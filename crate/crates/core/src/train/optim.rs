use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::tensor::Element;

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    /// Peak learning rate; the schedule starts here.
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub amsgrad: bool,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 3e-3, weight_decay: 9e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, amsgrad: false }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::Config(format!("optimizer.{field}: {msg}")));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("lr", "must be a finite non-negative number");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay", "must be a finite non-negative number");
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2", "must lie in [0, 1)");
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return bad("eps", "must be positive");
        }
        Ok(())
    }
}

/// Moment estimates for every parameter of one [`ParamStore`], in store
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T: Element> {
    pub config: AdamWConfig,
    /// Steps taken so far.
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    /// Running maximum of `v`; empty vectors unless `amsgrad`.
    pub v_max: Vec<Vec<T>>,
}

impl<T: Element> OptimizerState<T> {
    pub fn new(config: AdamWConfig, params: &ParamStore<T>) -> Self {
        let zeros = |n: usize| vec![T::zero(); n];
        let sizes: Vec<usize> = params.iter().map(|p| p.value().numel()).collect();
        OptimizerState {
            config,
            step: 0,
            m: sizes.iter().map(|&n| zeros(n)).collect(),
            v: sizes.iter().map(|&n| zeros(n)).collect(),
            v_max: sizes.iter().map(|&n| if config.amsgrad { zeros(n) } else { Vec::new() }).collect(),
        }
    }

    /// Checks that the moment buffers line up with `params`.
    pub fn check_compatible(&self, params: &ParamStore<T>) -> Result<()> {
        if self.m.len() != params.len() || self.v.len() != params.len() || self.v_max.len() != params.len() {
            return Err(Error::Compatibility(format!(
                "optimizer state covers {} parameters, model has {}",
                self.m.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            let n = p.value().numel();
            let vmax_ok = if self.config.amsgrad { self.v_max[i].len() == n } else { self.v_max[i].is_empty() };
            if self.m[i].len() != n || self.v[i].len() != n || !vmax_ok {
                return Err(Error::Compatibility(format!(
                    "optimizer moments for '{}' do not match its {} elements",
                    p.name(),
                    n
                )));
            }
        }
        Ok(())
    }

    /// One AdamW update of every parameter at learning rate `lr`.
    ///
    /// Every parameter must carry a gradient; a missing one means the loss
    /// never reached it, which would otherwise silently freeze it.
    pub fn step(&mut self, params: &mut ParamStore<T>, lr: f64) -> Result<()> {
        self.check_compatible(params)?;
        let grads = params
            .iter()
            .map(|p| {
                p.value().grad().ok_or_else(|| {
                    Error::Usage(format!("parameter '{}' has no gradient; run backward first", p.name()))
                })
            })
            .collect::<Result<Vec<_>>>()?;

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));

        for (i, (g, w)) in grads.into_iter().zip(params.values()).enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let mut out = Vec::with_capacity(w.len());
            for j in 0..w.len() {
                m[j] = b1 * m[j] + one_b1 * g[j];
                v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
                let v_used = if c.amsgrad {
                    let vm = &mut self.v_max[i][j];
                    if v[j] > *vm {
                        *vm = v[j];
                    }
                    *vm
                } else {
                    v[j]
                };
                let m_hat = m[j].as_f64() / bc1;
                let v_hat = v_used.as_f64() / bc2;
                let wj = w[j].as_f64();
                out.push(T::lit(wj - lr * m_hat / (v_hat.sqrt() + c.eps) - lr * c.weight_decay * wj));
            }
            params.set_by_index(i, out)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(w: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", [1, 1, 1, w.len()], w.to_vec()).unwrap();
        s
    }

    #[test]
    fn decay_alone_with_zero_gradient() {
        let mut p = store(&[2.0, -4.0]);
        let cfg = AdamWConfig { lr: 0.1, weight_decay: 0.01, ..Default::default() };
        let mut st = OptimizerState::new(cfg, &p);
        p.iter().next().unwrap().value().set_grad(vec![0.0, 0.0]).unwrap();
        st.step(&mut p, 0.1).unwrap();
        let w = p.iter().next().unwrap().value().to_vec();
        assert!((w[0] - 0.999 * 2.0).abs() < 1e-15 && (w[1] + 0.999 * 4.0).abs() < 1e-15);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_lr_is_a_no_op() {
        let mut p = store(&[0.3, 0.7]);
        let mut st = OptimizerState::new(AdamWConfig::default(), &p);
        p.iter().next().unwrap().value().set_grad(vec![1.0, -2.0]).unwrap();
        st.step(&mut p, 0.0).unwrap();
        assert_eq!(p.iter().next().unwrap().value().to_vec(), vec![0.3, 0.7]);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = store(&[1.0]);
        let mut st = OptimizerState::new(AdamWConfig::default(), &p);
        assert!(matches!(st.step(&mut p, 0.1), Err(Error::Usage(_))));
    }

    #[test]
    fn amsgrad_keeps_running_max() {
        let mut p = store(&[1.0]);
        let cfg = AdamWConfig { amsgrad: true, ..Default::default() };
        let mut st = OptimizerState::new(cfg, &p);
        for g in [3.0, 0.0, 0.0] {
            p.iter().next().unwrap().value().set_grad(vec![g]).unwrap();
            st.step(&mut p, 1e-3).unwrap();
        }
        assert!(st.v_max[0][0] >= st.v[0][0]);
        assert!((st.v_max[0][0] - 0.001 * 9.0).abs() < 1e-15);
    }
}
