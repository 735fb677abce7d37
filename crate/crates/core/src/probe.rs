//! Multinomial logistic-regression probe, a cheap baseline on raw embeddings.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::concept::softmax_into;
use crate::error::{Error, Result};
use crate::linalg;
use crate::optim::Adam;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// L2 penalty on the weights (not the bias).
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { learning_rate: 0.05, epochs: 500, l2: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    /// `d x classes`.
    weights: DMatrix<f64>,
    bias: DVector<f64>,
}

impl LinearProbe {
    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    /// Class probabilities for every row of `inputs`, `n x classes`.
    pub fn predict_proba(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if inputs.ncols() != self.weights.nrows() {
            return Err(Error::DimensionMismatch { expected: self.weights.nrows(), actual: inputs.ncols() });
        }
        let mut out = linalg::mul(inputs, false, &self.weights, false);
        let k = out.ncols();
        let mut row = vec![0.0; k];
        let mut p = vec![0.0; k];
        for i in 0..out.nrows() {
            for c in 0..k {
                row[c] = out[(i, c)] + self.bias[c];
            }
            softmax_into(&row, &mut p);
            for c in 0..k {
                out[(i, c)] = p[c];
            }
        }
        Ok(out)
    }

    /// Argmax class per row (ties to the lowest index).
    pub fn predict(&self, inputs: &DMatrix<f64>) -> Result<Vec<usize>> {
        let p = self.predict_proba(inputs)?;
        Ok((0..p.nrows()).map(|i| argmax(p.row(i).iter().copied())).collect())
    }
}

pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Full-batch Adam on the mean cross-entropy.
pub fn fit_probe(inputs: &DMatrix<f64>, labels: &[usize], classes: usize, config: &ProbeConfig) -> Result<LinearProbe> {
    let (n, d) = inputs.shape();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if labels.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: labels.len() });
    }
    if let Some(i) = labels.iter().position(|&y| y >= classes) {
        return Err(Error::InvalidRecord { index: i, message: "label out of range".into() });
    }
    let mut probe = LinearProbe { weights: DMatrix::zeros(d, classes), bias: DVector::zeros(classes) };
    let mut adam = Adam::new(d * classes + classes, config.learning_rate);
    let mut params = vec![0.0; d * classes + classes];
    let mut grad = vec![0.0; params.len()];
    for epoch in 0..config.epochs {
        let p = probe.predict_proba(inputs)?;
        let mut resid = p;
        for (i, &y) in labels.iter().enumerate() {
            resid[(i, y)] -= 1.0;
        }
        let gw = linalg::mul(inputs, true, &resid, false) / n as f64 + &probe.weights * config.l2;
        let gb: Vec<f64> = (0..classes).map(|c| resid.column(c).sum() / n as f64).collect();
        grad[..d * classes].copy_from_slice(gw.as_slice());
        grad[d * classes..].copy_from_slice(&gb);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch });
        }
        adam.step(&mut params, &grad, None);
        probe.weights.copy_from_slice(&params[..d * classes]);
        probe.bias.copy_from_slice(&params[d * classes..]);
    }
    Ok(probe)
}
