use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::params::ParamStore;
use crate::numerics::tensor::Scalar;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One bias-corrected Adam update with decoupled weight decay.
///
/// Decay is applied to the weights before the Adam delta. Every parameter
/// must carry a gradient; gradients are cleared afterwards.
pub fn adam_step<T: Scalar>(params: &mut ParamStore<T>, lr: f64, weight_decay: f64) -> Result<()> {
    if let Some(p) = params.iter().find(|p| p.grad.is_none()) {
        return Err(Error::MissingGradient(p.name.clone()));
    }
    for p in params.iter_mut() {
        let grad = p.grad.take().expect("checked above");
        p.step_count += 1;
        let t = p.step_count as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        let decay = T::from_f64(1.0 - lr * weight_decay);
        let (b1, b2) = (T::from_f64(ADAM_BETA1), T::from_f64(ADAM_BETA2));
        let (ib1, ib2) = (T::from_f64(1.0 - ADAM_BETA1), T::from_f64(1.0 - ADAM_BETA2));
        let step = T::from_f64(lr / bc1);
        let inv_bc2 = T::from_f64(1.0 / bc2);
        let eps = T::from_f64(ADAM_EPS);
        let w = p.value.data_mut();
        let m = p.adam_m.data_mut();
        let v = p.adam_v.data_mut();
        for (i, &g) in grad.data().iter().enumerate() {
            m[i] = b1 * m[i] + ib1 * g;
            v[i] = b2 * v[i] + ib2 * g * g;
            w[i] = w[i] * decay - step * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Cosine annealing with hard restarts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub base_lr: f64,
    pub min_lr: f64,
    pub restart_period: u64,
    pub weight_decay: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { base_lr: 3e-4, min_lr: 0.0, restart_period: 40_000, weight_decay: 0.001 }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.min_lr && self.min_lr <= self.base_lr) {
            return Err(Error::invalid("schedule requires 0 <= min_lr <= base_lr"));
        }
        if self.restart_period == 0 {
            return Err(Error::invalid("schedule restart_period must be at least 1"));
        }
        Ok(())
    }
}

pub fn lr_at(iteration: u64, cfg: &ScheduleConfig) -> f64 {
    let period = cfg.restart_period.max(1);
    let t = (iteration % period) as f64;
    let cos = (std::f64::consts::PI * t / period as f64).cos();
    cfg.min_lr + 0.5 * (cfg.base_lr - cfg.min_lr) * (1.0 + cos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;

    fn single(value: f64, grad: Option<f64>) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::scalar(value));
        s.get_mut(id).grad = grad.map(Tensor::scalar);
        s
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut s = single(0.75, Some(0.0));
        adam_step(&mut s, 0.1, 0.0).unwrap();
        assert_eq!(s.iter().next().unwrap().value.item(), 0.75);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = single(1.0, Some(1.0));
        adam_step(&mut s, 0.1, 0.0).unwrap();
        let expected = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
        assert!((s.iter().next().unwrap().value.item() - expected).abs() < 1e-12);
        assert_eq!(s.iter().next().unwrap().step_count, 1);
        assert!(s.iter().next().unwrap().grad.is_none());
    }

    #[test]
    fn decay_only_update() {
        let mut s = single(2.0, Some(0.0));
        adam_step(&mut s, 3e-4, 0.001).unwrap();
        assert!((s.iter().next().unwrap().value.item() - 2.0 * (1.0 - 3e-7)).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut s = single(1.0, None);
        match adam_step(&mut s, 0.1, 0.0) {
            Err(Error::MissingGradient(name)) => assert_eq!(name, "p"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn schedule_points() {
        let cfg = ScheduleConfig::default();
        assert!((lr_at(0, &cfg) - 3e-4).abs() < 1e-18);
        assert!((lr_at(20_000, &cfg) - 1.5e-4).abs() < 1e-15);
        assert!((lr_at(40_000, &cfg) - 3e-4).abs() < 1e-18);
    }

    #[test]
    fn schedule_validation() {
        assert!(ScheduleConfig::default().validate().is_ok());
        let bad = ScheduleConfig { min_lr: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ScheduleConfig { restart_period: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    proptest::proptest! {
        #[test]
        fn schedule_periodic_and_monotone(it in 0u64..200_000, period in 1u64..5_000) {
            let cfg = ScheduleConfig { restart_period: period, ..Default::default() };
            proptest::prop_assert_eq!(lr_at(it, &cfg), lr_at(it + period, &cfg));
            if (it + 1) % period != 0 {
                proptest::prop_assert!(lr_at(it + 1, &cfg) <= lr_at(it, &cfg));
            }
        }
    }
}
