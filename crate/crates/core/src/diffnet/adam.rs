use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bias-corrected Adam moments for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(lr: f64, n: usize) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8, n)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64, n: usize) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Shape {
                expected: self.m.len(),
                got: if params.len() != self.m.len() { params.len() } else { grad.len() },
            });
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, &g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Update rule for a parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Optimizer {
    Adam(AdamState),
    Sgd { lr: f64 },
}

impl Optimizer {
    pub fn adam(lr: f64, n: usize) -> Self {
        Optimizer::Adam(AdamState::new(lr, n))
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        match self {
            Optimizer::Adam(state) => state.step(params, grad),
            Optimizer::Sgd { lr } => {
                if params.len() != grad.len() {
                    return Err(Error::Shape {
                        expected: params.len(),
                        got: grad.len(),
                    });
                }
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= *lr * g;
                }
                Ok(())
            }
        }
    }
}
