//! Adam optimizer state for a flat parameter vector.
//!
//! Each parameter group (scene grid, texture grid, pose twists) owns one
//! [`Adam`] instance; bias correction uses the group's own update count.

use serde::{Deserialize, Serialize};

/// Adam hyperparameters. The defaults are the standard ones.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { learning_rate: 1e-2, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamParams {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }
}

/// First/second moment buffers plus the update counter for one group.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub params: AdamParams,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: u64,
}

impl Adam {
    pub fn new(params: AdamParams, len: usize) -> Self {
        Self { params, m: vec![0.0; len], v: vec![0.0; len], steps: 0 }
    }

    /// Apply one update in place. A zero learning rate leaves both the
    /// parameters and the moment buffers untouched, so a frozen group is
    /// exactly equivalent to never having an optimizer at all.
    pub fn step(&mut self, values: &mut [f64], grads: &[f64]) {
        assert_eq!(values.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        if self.params.learning_rate == 0.0 {
            return;
        }
        self.steps += 1;
        let p = self.params;
        let bc1 = 1.0 - p.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - p.beta2.powi(self.steps as i32);
        for i in 0..values.len() {
            let g = grads[i];
            self.m[i] = p.beta1 * self.m[i] + (1.0 - p.beta1) * g;
            self.v[i] = p.beta2 * self.v[i] + (1.0 - p.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            values[i] -= p.learning_rate * m_hat / (v_hat.sqrt() + p.epsilon);
        }
    }
}
