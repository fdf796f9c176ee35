use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with the bias correction folded into the step size:
/// `lr_t = lr * sqrt(1 - beta2^t) / (1 - beta1^t)`,
/// `p -= lr_t * m / (sqrt(v) + epsilon)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub timestep: u64,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            timestep: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Array2<f64>>, grads: Vec<&Array2<f64>>, lr: f64) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count mismatch");
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| Array2::zeros(g.raw_dim())).collect();
            self.second = self.first.clone();
        }
        self.timestep += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.timestep as i32;
        let lr_t = lr * (1.0 - beta2.powi(t)).sqrt() / (1.0 - beta1.powi(t));
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr_t * *m / (v.sqrt() + epsilon);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Array2::from_elem((2, 3), 0.7);
        let before = p.clone();
        let g = Array2::zeros((2, 3));
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(vec![&mut p], vec![&g], 0.01);
        assert_eq!(p, before);
        assert_eq!(adam.timestep, 1);
    }

    #[test]
    fn scalar_quadratic_converges() {
        // loss = (x - 1)^2, minimum at 1, start at 0.5
        let mut x = Array2::from_elem((1, 1), 0.5);
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..200 {
            let g = x.mapv(|v| 2.0 * (v - 1.0));
            adam.step(vec![&mut x], vec![&g], 0.01);
        }
        let v = x[[0, 0]];
        assert!((v - 1.0).abs() < 1e-2, "ended at {v}");
    }
}
