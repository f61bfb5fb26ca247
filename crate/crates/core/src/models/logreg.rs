//! Logistic regression fitted by full-batch gradient descent on the mean
//! negative log-likelihood.

use serde::{Deserialize, Serialize};

use super::{sigmoid, Prediction};
use crate::data::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegParams {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
}

impl Default for LogRegParams {
    fn default() -> Self {
        LogRegParams {
            learning_rate: 0.1,
            max_epochs: 5000,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogRegModel {
    pub fn zeros(d: usize) -> Self {
        LogRegModel {
            weights: vec![0.0; d],
            bias: 0.0,
        }
    }

    pub fn probability(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                got: x.len(),
            });
        }
        Ok(sigmoid(self.margin(x)))
    }

    fn margin(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let p = self.probability(x)?;
        Ok(Prediction {
            class: u8::from(p > 0.5),
            probability: p,
        })
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean negative log-likelihood and its gradient `(loss, d/dw, d/db)`.
pub fn loss_and_gradient(model: &LogRegModel, data: &FeatureMatrix) -> (f64, Vec<f64>, f64) {
    let n = data.n_rows() as f64;
    let mut loss = 0.0;
    let mut grad_w = vec![0.0; model.weights.len()];
    let mut grad_b = 0.0;
    for (row, &y) in data.rows().zip(data.labels()) {
        let z = model.margin(row);
        let y = f64::from(y);
        loss += softplus(z) - y * z;
        let residual = sigmoid(z) - y;
        for (g, x) in grad_w.iter_mut().zip(row) {
            *g += residual * x;
        }
        grad_b += residual;
    }
    grad_w.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad_w, grad_b / n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegFit {
    pub model: LogRegModel,
    /// Loss before each epoch's update, plus the final loss.
    pub loss_history: Vec<f64>,
    pub epochs: usize,
    pub converged: bool,
}

pub fn train_logreg(train: &FeatureMatrix, params: &LogRegParams) -> Result<LogRegModel> {
    train_logreg_traced(train, params).map(|fit| fit.model)
}

pub fn train_logreg_traced(train: &FeatureMatrix, params: &LogRegParams) -> Result<LogRegFit> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(params.learning_rate > 0.0) {
        return Err(Error::Parameter(format!(
            "learning rate must be positive, got {}",
            params.learning_rate
        )));
    }
    let mut model = LogRegModel::zeros(train.n_cols());
    let mut history = Vec::new();
    let mut converged = false;
    let mut epochs = 0;
    while epochs < params.max_epochs {
        let (loss, gw, gb) = loss_and_gradient(&model, train);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at epoch {epochs}")));
        }
        history.push(loss);
        let norm = gw.iter().fold(gb.abs(), |m, g| m.max(g.abs()));
        if norm < params.tolerance {
            converged = true;
            break;
        }
        for (w, g) in model.weights.iter_mut().zip(&gw) {
            *w -= params.learning_rate * g;
        }
        model.bias -= params.learning_rate * gb;
        epochs += 1;
    }
    if !converged {
        history.push(loss_and_gradient(&model, train).0);
    }
    Ok(LogRegFit {
        model,
        loss_history: history,
        epochs,
        converged,
    })
}
