//! SGD with momentum and the FedAvg parameter average.

use crate::error::{Error, Result};
use crate::nn::ModelParams;

/// Momentum buffer plus hyperparameters for one client's local training.
///
/// Update rule: `buffer ← momentum·buffer + grad; params ← params − lr·buffer`.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    learning_rate: f64,
    momentum: f64,
    buffer: Vec<f64>,
}

impl OptimizerState {
    pub fn new(learning_rate: f64, momentum: f64, param_count: usize) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::invalid(
                "learning_rate",
                format!("must be positive and finite, got {learning_rate}"),
            ));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(
                "momentum",
                format!("must be in [0, 1), got {momentum}"),
            ));
        }
        Ok(OptimizerState {
            learning_rate,
            momentum,
            buffer: vec![0.0; param_count],
        })
    }

    pub fn step(&mut self, params: &mut ModelParams, grad: &[f64]) -> Result<()> {
        if grad.len() != self.buffer.len() {
            return Err(Error::DimMismatch {
                context: "sgd_step gradient",
                expected: self.buffer.len(),
                actual: grad.len(),
            });
        }
        if let Some(bad) = grad.iter().find(|g| !g.is_finite()) {
            return Err(Error::invalid(
                "grad",
                format!("non-finite gradient component {bad}"),
            ));
        }
        let values = params.values_mut();
        debug_assert_eq!(values.len(), grad.len());
        for ((b, v), &g) in self.buffer.iter_mut().zip(values.iter_mut()).zip(grad) {
            *b = self.momentum * *b + g;
            *v -= self.learning_rate * *b;
        }
        Ok(())
    }
}

/// Coordinate-wise Σ_k (w_k/Σw)·params_k, accumulated in list order.
pub fn weighted_average(entries: &[(f64, &ModelParams)]) -> Result<ModelParams> {
    let first = entries
        .first()
        .map(|&(_, p)| p)
        .ok_or(Error::EmptyInput("weighted_average"))?;
    let mut weight_sum = 0.0;
    for &(w, p) in entries {
        if !(w >= 0.0 && w.is_finite()) {
            return Err(Error::invalid(
                "weights",
                format!("must be nonnegative and finite, got {w}"),
            ));
        }
        if p.len() != first.len() {
            return Err(Error::DimMismatch {
                context: "weighted_average params",
                expected: first.len(),
                actual: p.len(),
            });
        }
        weight_sum += w;
    }
    if weight_sum <= 0.0 {
        return Err(Error::invalid("weights", "sum must be positive"));
    }
    let mut values = vec![0.0; first.len()];
    for &(w, p) in entries {
        let scale = w / weight_sum;
        for (acc, &v) in values.iter_mut().zip(p.values()) {
            *acc += scale * v;
        }
    }
    ModelParams::from_values(first.spec(), values)
}
