use serde::{Deserialize, Serialize};

use super::lstm::SequenceModelParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global L2 norm above which gradients are rescaled; `0` disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 5.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub step: u64,
    pub config: AdamConfig,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl OptimizerState {
    pub fn new(params: &SequenceModelParams, config: AdamConfig) -> Self {
        Self {
            step: 0,
            config,
            first: vec![0.0; params.len()],
            second: vec![0.0; params.len()],
        }
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second
    }
}

/// Clips `grads` to the configured global norm, then applies one bias-corrected
/// Adam update to `params` in place.
pub fn adam_step(
    params: &mut SequenceModelParams,
    grads: &SequenceModelParams,
    state: &mut OptimizerState,
) -> Result<()> {
    if !params.same_shape(grads) || state.first.len() != params.len() {
        return Err(Error::DimensionMismatch {
            context: "adam parameter/gradient shapes",
            expected: params.len(),
            actual: grads.len(),
        });
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradients"));
    }
    let cfg = state.config;
    let norm = grads.l2_norm();
    let scale = if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
        cfg.clip_norm / norm
    } else {
        1.0
    };
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    let g = grads.as_slice();
    for (i, p) in params.as_mut_slice().iter_mut().enumerate() {
        let gi = g[i] * scale;
        let m = cfg.beta1 * state.first[i] + (1.0 - cfg.beta1) * gi;
        let v = cfg.beta2 * state.second[i] + (1.0 - cfg.beta2) * gi * gi;
        state.first[i] = m;
        state.second[i] = v;
        *p -= cfg.learning_rate * (m / bc1) / ((v / bc2).sqrt() + cfg.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::HeadKind;

    fn tiny() -> SequenceModelParams {
        SequenceModelParams::zeros(1, 1, 1, HeadKind::PerStepLinear).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let mut p = tiny();
        p.as_mut_slice()[0] = 0.3;
        let before = p.clone();
        let g = p.zeros_like();
        let mut st = OptimizerState::new(&p, AdamConfig::default());
        adam_step(&mut p, &g, &mut st).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = tiny();
        let mut g = p.zeros_like();
        g.as_mut_slice()[0] = 1.0;
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..Default::default()
        };
        let mut st = OptimizerState::new(&p, cfg);
        adam_step(&mut p, &g, &mut st).unwrap();
        // m̂ = 1, v̂ = 1 after bias correction, so Δ = −lr·1/(1+ε).
        assert!((p.as_slice()[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn clipping_halves_a_norm_ten_gradient() {
        let mut p = tiny();
        let mut g = p.zeros_like();
        g.as_mut_slice()[0] = 6.0;
        g.as_mut_slice()[1] = 8.0;
        let mut st = OptimizerState::new(&p, AdamConfig::default());
        adam_step(&mut p, &g, &mut st).unwrap();
        assert!((st.first_moment()[0] - 0.1 * 3.0).abs() < 1e-12);
        assert!((st.first_moment()[1] - 0.1 * 4.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut p = tiny();
        let mut g = p.zeros_like();
        g.as_mut_slice()[0] = f64::NAN;
        let mut st = OptimizerState::new(&p, AdamConfig::default());
        assert!(matches!(adam_step(&mut p, &g, &mut st), Err(Error::NonFinite(_))));
    }
}
