use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::Param;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Algorithm {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Algorithm {
    pub fn adam() -> Self {
        Algorithm::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state for one ordered list of parameters.
///
/// The same parameters must be passed in the same order on every call to
/// [`Optimizer::step`]; moments are matched by position.
#[derive(Clone, Debug)]
pub struct Optimizer<F> {
    algorithm: Algorithm,
    lr: F,
    first: Vec<Tensor<F>>,
    second: Vec<Tensor<F>>,
    steps: u64,
}

impl<F: Scalar> Optimizer<F> {
    pub fn new(algorithm: Algorithm, lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Invalid(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        Ok(Self {
            algorithm,
            lr: F::lit(lr),
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        })
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Self::new(Algorithm::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Result<Self> {
        Self::new(Algorithm::adam(), lr)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn learning_rate(&self) -> F {
        self.lr
    }

    /// Applies one update and clears the gradients.
    pub fn step(&mut self, params: &mut [&mut Param<F>]) -> Result<()> {
        if let Some(index) = params.iter().position(|p| p.grad.is_none()) {
            return Err(Error::MissingGrad { index });
        }
        if let Algorithm::Adam { .. } = self.algorithm {
            if self.first.is_empty() {
                self.first = params
                    .iter()
                    .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
                    .collect();
                self.second = self.first.clone();
            }
            if self.first.len() != params.len() {
                return Err(Error::ParamCountMismatch {
                    expected: self.first.len(),
                    got: params.len(),
                });
            }
            for (m, p) in self.first.iter().zip(params.iter()) {
                m.same_shape(&p.value, "adam_moments")?;
            }
        }
        self.steps += 1;
        match self.algorithm {
            Algorithm::Sgd => {
                for p in params.iter_mut() {
                    let g = p.grad.take().expect("checked");
                    for (v, &d) in p.value.data_mut().iter_mut().zip(g.data()) {
                        *v -= self.lr * d;
                    }
                }
            }
            Algorithm::Adam { beta1, beta2, eps } => {
                let (b1, b2, eps) = (F::lit(beta1), F::lit(beta2), F::lit(eps));
                let t = self.steps as i32;
                let c1 = F::one() - b1.powi(t);
                let c2 = F::one() - b2.powi(t);
                for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
                    let g = p.grad.take().expect("checked");
                    let values = p.value.data_mut();
                    for (((x, mi), vi), &gi) in values
                        .iter_mut()
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                        .zip(g.data())
                    {
                        *mi = b1 * *mi + (F::one() - b1) * gi;
                        *vi = b2 * *vi + (F::one() - b2) * gi * gi;
                        let m_hat = *mi / c1;
                        let v_hat = *vi / c2;
                        *x -= self.lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
