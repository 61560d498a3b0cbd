//! Adam with bias-corrected moments. Frozen parameters are never touched.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{HarError, Result};
use crate::tensor::Parameter;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(HarError::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(HarError::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(HarError::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, Moments>,
}

impl OptimizerState {
    /// Allocates moment buffers for the non-frozen parameters only.
    pub fn new(config: AdamConfig, params: &[Parameter]) -> Self {
        let moments = params
            .iter()
            .filter(|p| !p.frozen)
            .map(|p| {
                let n = p.tensor.len();
                (
                    p.name.clone(),
                    Moments {
                        first: vec![0.0; n],
                        second: vec![0.0; n],
                    },
                )
            })
            .collect();
        OptimizerState {
            config,
            step: 0,
            moments,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn has_moments(&self, name: &str) -> bool {
        self.moments.contains_key(name)
    }

    /// Applies one update using each parameter's gradient buffer.
    ///
    /// Every non-frozen parameter must carry a gradient. Gradients attached
    /// to frozen parameters are ignored.
    pub fn step(&mut self, params: &mut [Parameter]) -> Result<()> {
        if let Some(p) = params.iter().find(|p| !p.frozen && p.tensor.grad().is_none()) {
            return Err(HarError::Contract(format!(
                "no gradient supplied for trainable parameter `{}`",
                p.name
            )));
        }
        self.moments
            .retain(|name, _| params.iter().any(|p| &p.name == name && !p.frozen));

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let correct1 = 1.0 - beta1.powi(t);
        let correct2 = 1.0 - beta2.powi(t);

        for p in params.iter_mut().filter(|p| !p.frozen) {
            let n = p.tensor.len();
            let m = self.moments.entry(p.name.clone()).or_insert_with(|| Moments {
                first: vec![0.0; n],
                second: vec![0.0; n],
            });
            let grad = p.tensor.grad().expect("checked above").to_vec();
            for (i, w) in p.tensor.values_mut().iter_mut().enumerate() {
                let g = grad[i];
                m.first[i] = beta1 * m.first[i] + (1.0 - beta1) * g;
                m.second[i] = beta2 * m.second[i] + (1.0 - beta2) * g * g;
                let m_hat = m.first[i] / correct1;
                let v_hat = m.second[i] / correct2;
                *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar(name: &str, v: f64, g: Option<f64>, frozen: bool) -> Parameter {
        let mut t = Tensor::from_vec(vec![v]).unwrap();
        if let Some(g) = g {
            t.set_grad(vec![g]).unwrap();
        }
        Parameter {
            name: name.into(),
            tensor: t,
            frozen,
        }
    }

    #[test]
    fn first_step_matches_closed_form() {
        let mut params = vec![scalar("w", 1.0, Some(0.5), false)];
        let mut state = OptimizerState::new(AdamConfig::default(), &params);
        state.step(&mut params).unwrap();
        let expected = 1.0 - 1e-3 * 0.5 / (0.5 + 1e-8);
        assert!((params[0].tensor.values()[0] - expected).abs() < 1e-15);
        assert!((params[0].tensor.values()[0] - 0.999).abs() < 1e-9);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut params = vec![scalar("w", 0.25, Some(0.0), false)];
        let mut state = OptimizerState::new(AdamConfig::default(), &params);
        state.step(&mut params).unwrap();
        assert_eq!(params[0].tensor.values()[0], 0.25);
    }

    #[test]
    fn frozen_parameter_is_bit_identical() {
        let mut params = vec![
            scalar("frozen", 0.123_456_789, Some(3.0), true),
            scalar("live", 1.0, Some(1.0), false),
        ];
        let mut state = OptimizerState::new(AdamConfig::default(), &params);
        assert!(!state.has_moments("frozen"));
        assert!(state.has_moments("live"));
        for _ in 0..10 {
            state.step(&mut params).unwrap();
        }
        assert_eq!(params[0].tensor.values()[0].to_bits(), 0.123_456_789f64.to_bits());
        assert_eq!(state.step_count(), 10);
    }

    #[test]
    fn missing_gradient_is_contract_error() {
        let mut params = vec![scalar("w", 1.0, None, false)];
        let mut state = OptimizerState::new(AdamConfig::default(), &params);
        assert!(matches!(state.step(&mut params), Err(HarError::Contract(_))));
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn moments_decay_under_zero_gradient() {
        let mut params = vec![scalar("w", 1.0, Some(1.0), false)];
        let mut state = OptimizerState::new(AdamConfig::default(), &params);
        state.step(&mut params).unwrap();
        let first = state.moments["w"].first[0];
        params[0].tensor.set_grad(vec![0.0]).unwrap();
        state.step(&mut params).unwrap();
        assert!(state.moments["w"].first[0].abs() < first.abs());
    }
}
