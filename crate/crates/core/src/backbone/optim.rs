use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam over a flat parameter vector. Entries whose gradient has always
/// been exactly zero are never moved, which the freeze masks rely on.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, len: usize) -> Adam {
        Adam { cfg, m: vec![0.0; len], v: vec![0.0; len], steps: 0 }
    }

    /// One update. `touched[i]` is set whenever entry `i` actually changed.
    pub fn step(&mut self, values: &mut [f64], grads: &[f64], touched: Option<&mut [bool]>) {
        assert_eq!(values.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.steps += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - c.beta2.powi(self.steps as i32);
        let mut touched = touched;
        for i in 0..values.len() {
            let g = grads[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            if self.m[i] == 0.0 {
                continue;
            }
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            let old = values[i];
            values[i] -= c.lr * mhat / (vhat.sqrt() + c.eps);
            if let Some(t) = touched.as_deref_mut() {
                if values[i] != old {
                    t[i] = true;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_entries_stay_put() {
        let mut adam = Adam::new(AdamConfig { lr: 0.1, ..Default::default() }, 3);
        let mut w = vec![1.0, 2.0, 3.0];
        let mut touched = vec![false; 3];
        for _ in 0..5 {
            adam.step(&mut w, &[0.5, 0.0, -1.0], Some(&mut touched));
        }
        assert_eq!(w[1], 2.0);
        assert_eq!(touched, vec![true, false, true]);
        assert!(w[0] < 1.0 && w[2] > 3.0);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut adam = Adam::new(AdamConfig { lr: 0.05, ..Default::default() }, 1);
        let mut w = vec![5.0];
        for _ in 0..2000 {
            let g = vec![2.0 * (w[0] - 1.5)];
            adam.step(&mut w, &g, None);
        }
        assert!((w[0] - 1.5).abs() < 1e-3);
    }
}
