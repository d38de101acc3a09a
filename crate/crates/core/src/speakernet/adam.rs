use crate::error::{Error, Result};
use crate::tensor::Parameter;

/// Adam with bias correction. Moments are allocated on the first step and
/// keyed by position, so every step must see the same parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new(1e-3)
    }
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64, eps: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self.eps = eps;
        self
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid Adam settings lr={} betas=({}, {}) eps={}",
                self.lr, self.beta1, self.beta2, self.eps
            )))
        }
    }

    /// Applies one update using each parameter's accumulated gradient.
    pub fn step(&mut self, params: &mut [&mut Parameter]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.numel()) {
            return Err(Error::dim("optimizer state does not match the parameter list"));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data().to_vec();
            let values = p.value.data_mut();
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                values[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar(v: f64, g: f64) -> Parameter {
        let mut p = Parameter::new("p", Tensor::full(&[1], v));
        p.grad = Tensor::full(&[1], g);
        p
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = Parameter::new("w", Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let before = p.value.clone();
        let mut opt = Adam::new(0.1);
        opt.step(&mut [&mut p]).unwrap();
        assert_eq!(p.value, before);
        assert!(opt.first_moments()[0].iter().chain(&opt.second_moments()[0]).all(|&m| m == 0.0));
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar(1.0, 1.0);
        Adam::new(0.1).step(&mut [&mut p]).unwrap();
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((p.value.data()[0] - expected).abs() < 1e-15);
        assert!((p.value.data()[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn deterministic_and_shape_checked() {
        let run = || {
            let mut p = scalar(0.3, -0.7);
            let mut opt = Adam::new(0.01);
            opt.step(&mut [&mut p]).unwrap();
            opt.step(&mut [&mut p]).unwrap();
            (p.value, opt)
        };
        assert_eq!(run(), run());
        let (_, mut opt) = run();
        let mut q = Parameter::new("q", Tensor::zeros(&[2]));
        assert!(matches!(opt.step(&mut [&mut q]), Err(Error::Dimension(_))));
    }
}
