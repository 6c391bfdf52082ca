use serde::{Deserialize, Serialize};

/// Adam with bias correction (β₁ = 0.9, β₂ = 0.999, ε = 1e-8 by default).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(learning_rate: f64, n_params: usize) -> Self {
        Self { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "parameter length changed under the optimizer");
        assert_eq!(grad.len(), self.m.len(), "gradient length does not match parameters");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut opt = Adam::new(1e-3, 3);
        let mut p = vec![1.0, -2.0, 0.5];
        opt.step(&mut p, &[0.0; 3]);
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let lr = 1e-2;
        let mut opt = Adam::new(lr, 3);
        let mut p = vec![0.0; 3];
        let g = [3.0, -0.25, 1e-3];
        opt.step(&mut p, &g);
        // m̂ = g, v̂ = g² ⇒ Δ = −lr·g/(|g| + ε)
        for (x, g) in p.iter().zip(g) {
            let expected = -lr * g / (g.abs() + 1e-8);
            assert!((x - expected).abs() < 1e-15);
            assert!((x + lr * g.signum()).abs() < 1e-7);
        }
    }

    #[test]
    fn constant_gradient_drifts_monotonically() {
        let mut opt = Adam::new(1e-3, 2);
        let mut p = vec![0.0, 0.0];
        let mut prev = p.clone();
        for _ in 0..500 {
            opt.step(&mut p, &[2.0, -0.5]);
            assert!(p[0] < prev[0] && p[1] > prev[1]);
            prev.clone_from(&p);
        }
    }
}
