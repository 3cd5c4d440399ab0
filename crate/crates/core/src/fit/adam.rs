use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(config: AdamConfig, n: usize) -> Self {
        Self { config, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient count mismatch");
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut a = Adam::new(AdamConfig::default(), 3);
        let mut p = [1.0, -2.0, 0.5];
        a.step(&mut p, &[0.0; 3]);
        assert_eq!(p, [1.0, -2.0, 0.5]);
        assert_eq!(a.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = AdamConfig { lr: 0.01, eps: 0.0, ..Default::default() };
        let mut a = Adam::new(cfg, 3);
        let mut p = [0.0; 3];
        a.step(&mut p, &[3.0, -0.2, 1e-3]);
        assert!((p[0] + 0.01).abs() < 1e-15);
        assert!((p[1] - 0.01).abs() < 1e-15);
        assert!((p[2] + 0.01).abs() < 1e-15);
    }

    #[test]
    fn quadratic_descent_converges() {
        let mut a = Adam::new(AdamConfig { lr: 0.05, ..Default::default() }, 1);
        let mut x = [1.0];
        let mut reached = None;
        for step in 0..2000 {
            let g = [2.0 * x[0]];
            a.step(&mut x, &g);
            if x[0].abs() < 1e-3 {
                reached = Some(step);
                break;
            }
        }
        assert!(reached.is_some(), "x = {}", x[0]);
    }
}
