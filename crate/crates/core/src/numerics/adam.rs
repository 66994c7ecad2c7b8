use super::{Matrix, Real};
use crate::{Error, Result};

/// Hyperparameters for plain Adam with bias correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate.is_finite()
            && self.learning_rate >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// Moment accumulators for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub first_moment: Matrix<T>,
    pub second_moment: Matrix<T>,
    pub config: AdamConfig,
}

impl<T: Real> AdamState<T> {
    pub fn new(rows: usize, cols: usize, config: AdamConfig) -> Self {
        Self {
            step: 0,
            first_moment: Matrix::zeros(rows, cols),
            second_moment: Matrix::zeros(rows, cols),
            config,
        }
    }

    pub fn for_param(param: &Matrix<T>, config: AdamConfig) -> Self {
        Self::new(param.rows(), param.cols(), config)
    }
}

/// One Adam update of `param` in place.
pub fn adam_step<T: Real>(
    param: &mut Matrix<T>,
    grad: &Matrix<T>,
    state: &mut AdamState<T>,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != state.first_moment.shape() {
        return Err(Error::shape(
            format!("{:?}", param.shape()),
            format!(
                "grad {:?}, state {:?}",
                grad.shape(),
                state.first_moment.shape()
            ),
        ));
    }
    state.step += 1;
    let cfg = state.config;
    let b1 = T::lit(cfg.beta1);
    let b2 = T::lit(cfg.beta2);
    let one = T::one();
    let step = i32::try_from(state.step).unwrap_or(i32::MAX);
    let c1 = one - b1.powi(step);
    let c2 = one - b2.powi(step);
    let lr = T::lit(cfg.learning_rate);
    let eps = T::lit(cfg.epsilon);

    let m = state.first_moment.as_mut_slice();
    let v = state.second_moment.as_mut_slice();
    for (((p, &g), m), v) in param
        .as_mut_slice()
        .iter_mut()
        .zip(grad.as_slice())
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
