//! AdamW, gradient clipping and the linear warmup/decay schedule.

use serde::{Deserialize, Serialize};

use crate::encoder::Parameters;
use crate::error::{Error, Result};

/// Learning rate at `step` of `total_steps`: linear ramp from 0 over the
/// first `⌊warmup_proportion · total⌋` steps, then linear decay to 0.
pub fn lr_at(step: usize, total_steps: usize, peak_lr: f64, warmup_proportion: f64) -> f64 {
    let warmup = (warmup_proportion * total_steps as f64).floor() as usize;
    if step < warmup {
        return peak_lr * step as f64 / warmup as f64;
    }
    if total_steps <= warmup {
        return if step == warmup && total_steps > 0 { 0.0 } else { peak_lr };
    }
    let remaining = total_steps.saturating_sub(step);
    peak_lr * remaining as f64 / (total_steps - warmup) as f64
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients<P: Parameters + ?Sized>(grads: &mut P, max_norm: f64) -> Result<f64> {
    let norm = grads.global_norm();
    if !norm.is_finite() {
        return Err(Error::NonFinite("gradients"));
    }
    if norm > max_norm {
        let scale = max_norm / norm;
        for t in grads.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= scale);
        }
    }
    Ok(norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-6, weight_decay: 0.0 }
    }
}

/// First and second moment estimates mirroring the parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new<P: Parameters + ?Sized>(params: &P) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self { step: 0, first_moment: zeros.clone(), second_moment: zeros }
    }
}

/// One decoupled-weight-decay Adam update, in place.
pub fn adamw_step<P, G>(
    params: &mut P,
    grads: &G,
    state: &mut OptimizerState,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()>
where
    P: Parameters + ?Sized,
    G: Parameters + ?Sized,
{
    let grad_tensors = grads.tensors();
    let mut param_tensors = params.tensors_mut();
    if grad_tensors.len() != param_tensors.len() || state.first_moment.len() != param_tensors.len() {
        return Err(Error::DimensionMismatch {
            expected: param_tensors.len(),
            actual: grad_tensors.len(),
        });
    }
    for ((p, g), m) in param_tensors.iter().zip(&grad_tensors).zip(&state.first_moment) {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::DimensionMismatch { expected: p.len(), actual: g.len() });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - lr * cfg.weight_decay;

    for (((p, g), m), v) in param_tensors
        .iter_mut()
        .zip(&grad_tensors)
        .zip(&mut state.first_moment)
        .zip(&mut state.second_moment)
    {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            p[i] = p[i] * decay - lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn schedule_examples() {
        let lr = 1e-3;
        assert_eq!(lr_at(0, 1000, lr, 0.25), 0.0);
        assert_eq!(lr_at(250, 1000, lr, 0.25), lr);
        assert!((lr_at(625, 1000, lr, 0.25) - 0.5 * lr).abs() < 1e-18);
        assert_eq!(lr_at(1000, 1000, lr, 0.25), 0.0);
        assert!((lr_at(125, 1000, lr, 0.25) - 0.5 * lr).abs() < 1e-18);
        // no warmup: start at the peak
        assert_eq!(lr_at(0, 10, lr, 0.0), lr);
    }

    #[test]
    fn clipping_examples() {
        let mut g = vec![0.3, 0.4];
        assert_eq!(clip_gradients(&mut g, 1.0).unwrap(), 0.5);
        assert_eq!(g, vec![0.3, 0.4]);

        let mut g = vec![1.2, 1.6];
        assert_eq!(clip_gradients(&mut g, 1.0).unwrap(), 2.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);

        let mut bad = vec![1.0, f64::NAN];
        assert!(clip_gradients(&mut bad, 1.0).is_err());
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = vec![0.5, -2.0, 3.0];
        let g = vec![0.0; 3];
        let mut s = OptimizerState::new(&p);
        adamw_step(&mut p, &g, &mut s, 1e-2, &AdamWConfig::default()).unwrap();
        assert_eq!(p, vec![0.5, -2.0, 3.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_applies_decoupled_decay() {
        let mut p = vec![0.5, -2.0];
        let mut s = OptimizerState::new(&p);
        let cfg = AdamWConfig { weight_decay: 0.1, ..Default::default() };
        adamw_step(&mut p, &vec![0.0, 0.0], &mut s, 0.01, &cfg).unwrap();
        assert_eq!(p, vec![0.5 * (1.0 - 0.001), -2.0 * (1.0 - 0.001)]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = vec![1.0, 2.0];
        let mut s = OptimizerState::new(&p);
        assert!(adamw_step(&mut p, &vec![1.0], &mut s, 0.1, &AdamWConfig::default()).is_err());
    }

    proptest! {
        #[test]
        fn clipped_norm_is_bounded(g in prop::collection::vec(-10.0f64..10.0, 1..50), max in 0.01f64..5.0) {
            let mut g = g;
            clip_gradients(&mut g, max).unwrap();
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(norm <= max * (1.0 + 1e-12));
        }

        #[test]
        fn schedule_stays_in_range(total in 1usize..5000, step_seed in 0usize..5000, warm in 0.0f64..1.0) {
            let step = step_seed % (total + 1);
            let lr = lr_at(step, total, 1.0, warm);
            prop_assert!((0.0..=1.0).contains(&lr));
        }
    }
}
