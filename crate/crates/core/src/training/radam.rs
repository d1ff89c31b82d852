//! Rectified Adam. While the variance of the adaptive learning rate is
//! intractable (approximated SMA length `rho_t <= 4`) the update is plain
//! bias-corrected momentum; afterwards the adaptive step is scaled by the
//! rectification term
//!
//! ```text
//! r_t = sqrt( (rho_t - 4)(rho_t - 2) rho_inf / ((rho_inf - 4)(rho_inf - 2) rho_t) )
//! rho_inf = 2 / (1 - beta2) - 1,   rho_t = rho_inf - 2 t beta2^t / (1 - beta2^t)
//! ```

use ndarray::ArrayD;

use super::config::OptimizerKind;
use super::params::ParameterStore;
use crate::error::{Error, Result};
use crate::real::{c, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first_moment: Vec<ArrayD<T>>,
    pub second_moment: Vec<ArrayD<T>>,
}

/// Scalar factors of one update: the parameter moves by
/// `lr * momentum_scale * second_correction * m / (sqrt(v) + eps)` when
/// `adaptive`, else by `lr * momentum_scale * m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepFactors {
    pub adaptive: bool,
    pub momentum_scale: f64,
    pub second_correction: f64,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, store: &ParameterStore<T>) -> Self {
        let zeros: Vec<ArrayD<T>> = store
            .tensors()
            .into_iter()
            .map(|(_, t)| ArrayD::zeros(t.raw_dim()))
            .collect();
        Optimizer {
            kind,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn factors(&self, t: u64) -> StepFactors {
        let t_f = t as f64;
        let b1t = self.beta1.powf(t_f);
        let b2t = self.beta2.powf(t_f);
        let first_correction = 1.0 / (1.0 - b1t);
        let second_correction = (1.0 - b2t).sqrt();
        match self.kind {
            OptimizerKind::Adam => StepFactors {
                adaptive: true,
                momentum_scale: first_correction,
                second_correction,
            },
            OptimizerKind::Radam => {
                let rho_inf = 2.0 / (1.0 - self.beta2) - 1.0;
                let rho_t = rho_inf - 2.0 * t_f * b2t / (1.0 - b2t);
                if rho_t > 4.0 {
                    let r = ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt();
                    StepFactors {
                        adaptive: true,
                        momentum_scale: first_correction * r,
                        second_correction,
                    }
                } else {
                    StepFactors {
                        adaptive: false,
                        momentum_scale: first_correction,
                        second_correction,
                    }
                }
            }
        }
    }

    pub fn step(&mut self, store: &mut ParameterStore<T>, grads: &ParameterStore<T>, lr: f64) -> Result<()> {
        if let Some(name) = grads.first_non_finite() {
            return Err(Error::NonFinite(format!("gradient of `{name}`")));
        }
        self.step += 1;
        let f = self.factors(self.step);
        let (b1, b2): (T, T) = (c(self.beta1), c(self.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let scale: T = c(lr * f.momentum_scale);
        let corr: T = c(f.second_correction);
        let eps: T = c(self.eps);
        for (((_, mut p), (_, g)), (m, v)) in store
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            ndarray::Zip::from(&mut p)
                .and(&g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + one_b1 * g;
                    *v = b2 * *v + one_b2 * g * g;
                    if f.adaptive {
                        *p -= scale * corr * *m / (v.sqrt() + eps);
                    } else {
                        *p -= scale * *m;
                    }
                });
        }
        if let Some(name) = store.first_non_finite() {
            return Err(Error::NonFinite(format!("parameter `{name}` after update")));
        }
        Ok(())
    }
}
