use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Matrix;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Per-parameter first/second moment accumulators plus the step counter.
#[derive(Debug, Clone, Default)]
pub struct OptimizerState {
    pub first_moment: BTreeMap<String, Matrix>,
    pub second_moment: BTreeMap<String, Matrix>,
    pub step: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum StepError {
    #[error("non-finite gradient for parameter `{name}` (step rejected)")]
    NonFiniteGradient { name: String },
    #[error("gradient shape {got:?} does not match parameter `{name}` shape {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
}

/// One decoupled-weight-decay Adam step over named parameters.
///
/// Weight decay is applied directly to the parameters, not through the
/// gradients, so with zero gradients every parameter scales by
/// `1 - lr * weight_decay` per step. A non-finite gradient rejects the whole
/// step without mutating parameters or state.
pub fn adamw_step(
    params: &mut super::ParamStore,
    grads: &BTreeMap<String, Matrix>,
    state: &mut OptimizerState,
    cfg: &AdamWConfig,
) -> Result<(), StepError> {
    for (name, g) in grads {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(StepError::NonFiniteGradient { name: name.clone() });
        }
        if let Some(p) = params.get(name) {
            if p.dim() != g.dim() {
                return Err(StepError::ShapeMismatch {
                    name: name.clone(),
                    expected: p.dim(),
                    got: g.dim(),
                });
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (name, g) in grads {
        let p = match params.get(name) {
            Some(p) => p.clone(),
            None => continue,
        };
        let m = state
            .first_moment
            .entry(name.clone())
            .or_insert_with(|| Matrix::zeros(p.dim()));
        *m = &*m * cfg.beta1 + &(g * (1.0 - cfg.beta1));
        let v = state
            .second_moment
            .entry(name.clone())
            .or_insert_with(|| Matrix::zeros(p.dim()));
        *v = &*v * cfg.beta2 + &(g.mapv(|x| x * x) * (1.0 - cfg.beta2));

        let m_hat = &state.first_moment[name] / bc1;
        let v_hat = &state.second_moment[name] / bc2;
        let update = &m_hat / &v_hat.mapv(|x| x.sqrt() + cfg.epsilon);
        let decayed = &p * (1.0 - cfg.lr * cfg.weight_decay);
        params.insert(name, decayed - update * cfg.lr);
    }
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum ScheduleError {
    #[error("schedule ratio {name}={value} outside [0, 1]")]
    RatioOutOfRange { name: &'static str, value: f64 },
    #[error("step {step} beyond total_steps {total}")]
    StepOutOfRange { step: u64, total: u64 },
}

/// Linear warmup from 0 to `peak_lr` over `warmup_ratio * total_steps`, then
/// cosine decay down to `min_ratio * peak_lr` at `total_steps`.
pub fn cosine_schedule(
    step: u64,
    total_steps: u64,
    peak_lr: f64,
    warmup_ratio: f64,
    min_ratio: f64,
) -> Result<f64, ScheduleError> {
    for (name, value) in [("warmup_ratio", warmup_ratio), ("min_ratio", min_ratio)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(ScheduleError::RatioOutOfRange { name, value });
        }
    }
    if step > total_steps {
        return Err(ScheduleError::StepOutOfRange {
            step,
            total: total_steps,
        });
    }
    let warmup_steps = warmup_ratio * total_steps as f64;
    let s = step as f64;
    if warmup_steps > 0.0 && s < warmup_steps {
        return Ok(peak_lr * s / warmup_steps);
    }
    let min_lr = min_ratio * peak_lr;
    let decay_span = total_steps as f64 - warmup_steps;
    if decay_span <= 0.0 {
        return Ok(peak_lr);
    }
    let progress = ((s - warmup_steps) / decay_span).clamp(0.0, 1.0);
    Ok(min_lr + (peak_lr - min_lr) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_engine::ParamStore;

    #[test]
    fn zero_grads_with_decay_scale_params() {
        let mut store = ParamStore::new(0);
        store.insert("w", Matrix::from_elem((2, 2), 2.0));
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Matrix::zeros((2, 2)));
        let mut state = OptimizerState::default();
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdamWConfig::default()
        };
        adamw_step(&mut store, &grads, &mut state, &cfg).unwrap();
        // (1 - 0.1 * 0.5) = 0.95
        for v in store.get("w").unwrap() {
            assert!((v - 2.0 * 0.95).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_grads_zero_decay_is_noop() {
        let mut store = ParamStore::new(0);
        store.insert("w", Matrix::from_elem((2, 2), 2.0));
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Matrix::zeros((2, 2)));
        let mut state = OptimizerState::default();
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        adamw_step(&mut store, &grads, &mut state, &cfg).unwrap();
        assert_eq!(store.get("w").unwrap(), &Matrix::from_elem((2, 2), 2.0));
    }

    #[test]
    fn quadratic_descends() {
        // f(w) = w^2 / 2, gradient = w; one step from w = 1 must decrease w.
        let mut store = ParamStore::new(0);
        store.insert("w", Matrix::from_elem((1, 1), 1.0));
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Matrix::from_elem((1, 1), 1.0));
        let mut state = OptimizerState::default();
        let cfg = AdamWConfig {
            lr: 1e-3,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        adamw_step(&mut store, &grads, &mut state, &cfg).unwrap();
        assert!(store.get("w").unwrap()[[0, 0]] < 1.0);
    }

    #[test]
    fn nan_grad_rejects_step() {
        let mut store = ParamStore::new(0);
        store.insert("w", Matrix::from_elem((1, 1), 1.0));
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Matrix::from_elem((1, 1), f64::NAN));
        let mut state = OptimizerState::default();
        let err = adamw_step(&mut store, &grads, &mut state, &AdamWConfig::default());
        assert!(err.is_err());
        assert_eq!(store.get("w").unwrap()[[0, 0]], 1.0);
        assert_eq!(state.step, 0);
    }

    #[test]
    fn schedule_boundaries() {
        let peak = 1e-4;
        // warmup endpoint hits the peak
        let lr = cosine_schedule(100, 1000, peak, 0.1, 0.05).unwrap();
        assert!((lr - peak).abs() < 1e-18);
        // final step hits min_ratio * peak (paper floor 5e-6 with peak 1e-4)
        let lr = cosine_schedule(1000, 1000, peak, 0.1, 0.05).unwrap();
        assert!((lr - 5e-6).abs() < 1e-18);
        // decay midpoint is the arithmetic mean of peak and floor
        let lr = cosine_schedule(550, 1000, peak, 0.1, 0.05).unwrap();
        let expect = 5e-6 + (peak - 5e-6) * 0.5;
        assert!((lr - expect).abs() < 1e-15);
    }

    #[test]
    fn schedule_rejects_bad_ratio() {
        assert!(cosine_schedule(0, 10, 1e-4, 1.5, 0.0).is_err());
        assert!(cosine_schedule(0, 10, 1e-4, 0.1, -0.1).is_err());
    }
}
