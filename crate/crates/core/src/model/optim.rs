use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub(crate) m: Vec<f64>,
    pub(crate) v: Vec<f64>,
    pub(crate) t: u64,
}

impl AdamW {
    pub fn new(num_params: usize, weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. Refuses non-finite gradients without touching any state.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], learning_rate: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite gradient at parameter {i}")));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let decay = 1.0 - learning_rate * self.weight_decay;
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let update = (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            *p = *p * decay - learning_rate * update;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut params = vec![0.3, -1.2, 4.0];
        let before = params.clone();
        let mut opt = AdamW::new(3, 0.01);
        opt.step(&mut params, &[1.0, -2.0, 0.5], 0.0).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn descends_a_convex_probe() {
        // loss = (x - 3)^2
        let mut x = vec![0.0];
        let mut opt = AdamW::new(1, 0.01);
        let loss = |x: f64| (x - 3.0) * (x - 3.0);
        let start = loss(x[0]);
        let g = 2.0 * (x[0] - 3.0);
        opt.step(&mut x, &[g], 0.1).unwrap();
        assert!(loss(x[0]) < start);
        for _ in 0..500 {
            let g = 2.0 * (x[0] - 3.0);
            opt.step(&mut x, &[g], 0.05).unwrap();
        }
        assert!(loss(x[0]) < 1e-2);
    }

    #[test]
    fn non_finite_gradient_is_refused() {
        let mut params = vec![1.0];
        let mut opt = AdamW::new(1, 0.0);
        assert!(opt.step(&mut params, &[f64::NAN], 0.1).is_err());
        assert_eq!(params, vec![1.0]);
        assert_eq!(opt.steps(), 0);
    }
}
