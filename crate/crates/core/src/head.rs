//! Linear task head on top of stacked concept scores.
//!
//! The head is trained by maximizing `log E_s[softmax(W^T s + b)_y]`, the
//! expectation estimated with fresh draws of the stacked scores at every
//! step.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::concept::softmax_into;
use crate::error::{Error, Result};
use crate::model::{Sampler, StackedMoments};
use crate::optim::Adam;
use crate::rng::{self, streams};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    /// `v x num_labels`.
    weights: DMatrix<f64>,
    bias: DVector<f64>,
}

impl LinearHead {
    pub fn zeros(width: usize, num_labels: usize) -> Self {
        Self { weights: DMatrix::zeros(width, num_labels), bias: DVector::zeros(num_labels) }
    }

    pub fn from_parts(weights: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        if weights.ncols() != bias.len() {
            return Err(Error::DimensionMismatch { expected: weights.ncols(), actual: bias.len() });
        }
        Ok(Self { weights, bias })
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    pub fn width(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_labels(&self) -> usize {
        self.bias.len()
    }

    /// `W^T s + b`.
    pub fn logits(&self, scores: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_labels()];
        self.logits_into(scores, &mut out);
        out
    }

    fn logits_into(&self, scores: &[f64], out: &mut [f64]) {
        for (l, o) in out.iter_mut().enumerate() {
            *o = self.bias[l] + self.weights.column(l).iter().zip(scores).map(|(w, s)| w * s).sum::<f64>();
        }
    }

    fn pack(&self) -> Vec<f64> {
        self.weights.iter().chain(self.bias.iter()).copied().collect()
    }

    fn unpack(&mut self, p: &[f64]) {
        let n = self.weights.len();
        self.weights.copy_from_slice(&p[..n]);
        self.bias.copy_from_slice(&p[n..]);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadConfig {
    pub learning_rate: f64,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    /// Score draws per example per step.
    pub train_samples: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { learning_rate: 0.001, patience: 3, train_samples: 16, max_epochs: 1000, batch_size: 512, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadFit {
    pub head: LinearHead,
    pub train_trace: Vec<f64>,
    pub val_trace: Vec<f64>,
    /// Epoch whose weights were kept (0 = initialization).
    pub best_epoch: usize,
}

/// Negative mean `log((1/S) sum_s softmax(W^T s_s + b)_y)` over the rows of
/// `draws` (one block of `S` rows per example), and optionally its gradient.
fn log_mean_softmax_loss(
    head: &LinearHead,
    draws: &[f64],
    labels: &[usize],
    samples: usize,
    grad: Option<&mut [f64]>,
) -> f64 {
    let v = head.width();
    let nl = head.num_labels();
    let n = labels.len();
    let mut logits = vec![0.0; nl];
    let mut probs = vec![0.0; samples * nl];
    let mut log_py = vec![0.0; samples];
    let mut total = 0.0;
    let mut grad = grad;
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|x| *x = 0.0);
    }
    let w_flat = head.weights.as_slice();
    let bias = head.bias.as_slice();
    for (e, &y) in labels.iter().enumerate() {
        let block = &draws[e * samples * v..(e + 1) * samples * v];
        for (s, row) in block.chunks_exact(v).enumerate() {
            for (l, o) in logits.iter_mut().enumerate() {
                *o = bias[l] + dot(&w_flat[l * v..(l + 1) * v], row);
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let p = &mut probs[s * nl..(s + 1) * nl];
            let mut z = 0.0;
            for (pl, &x) in p.iter_mut().zip(&logits) {
                *pl = libm::exp(x - max);
                z += *pl;
            }
            p.iter_mut().for_each(|x| *x /= z);
            log_py[s] = logits[y] - max - libm::log(z);
        }
        let max = log_py.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = log_py.iter().map(|x| libm::exp(x - max)).sum();
        let log_mean = max + libm::log(sum) - libm::log(samples as f64);
        total -= log_mean;
        if let Some(g) = grad.as_deref_mut() {
            let (gw, gb) = g.split_at_mut(v * nl);
            for (s, row) in block.chunks_exact(v).enumerate() {
                // posterior weight of draw s
                let w = libm::exp(log_py[s] - max) / sum;
                if w == 0.0 {
                    continue;
                }
                for l in 0..nl {
                    let delta = w * (probs[s * nl + l] - if l == y { 1.0 } else { 0.0 });
                    for (gj, &x) in gw[l * v..(l + 1) * v].iter_mut().zip(row) {
                        *gj += delta * x;
                    }
                    gb[l] += delta;
                }
            }
        }
    }
    if let Some(g) = grad {
        g.iter_mut().for_each(|x| *x /= n as f64);
    }
    total / n as f64
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn draw_block<R: Rng + ?Sized>(sampler: &mut Sampler, rows: &[usize], samples: usize, rng: &mut R) -> Vec<f64> {
    let v = sampler.width();
    let mut out = vec![0.0; rows.len() * samples * v];
    for (e, &q) in rows.iter().enumerate() {
        for s in 0..samples {
            let at = (e * samples + s) * v;
            sampler.sample_into(q, rng, &mut out[at..at + v]);
        }
    }
    out
}

/// Train the head on the training examples, early-stopping on the
/// validation loss and keeping the weights of the best validation epoch.
pub fn fit_head(
    train: &StackedMoments,
    train_labels: &[usize],
    val: &StackedMoments,
    val_labels: &[usize],
    num_labels: usize,
    config: &HeadConfig,
) -> Result<HeadFit> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyInput);
    }
    if train_labels.len() != train.len() {
        return Err(Error::DimensionMismatch { expected: train.len(), actual: train_labels.len() });
    }
    if val_labels.len() != val.len() {
        return Err(Error::DimensionMismatch { expected: val.len(), actual: val_labels.len() });
    }
    if val.width() != train.width() {
        return Err(Error::DimensionMismatch { expected: train.width(), actual: val.width() });
    }
    if let Some(i) = train_labels.iter().chain(val_labels).position(|&y| y >= num_labels) {
        return Err(Error::InvalidRecord { index: i, message: "task label out of range".into() });
    }
    let samples = config.train_samples.max(1);
    let mut head = LinearHead::zeros(train.width(), num_labels);
    let mut params = head.pack();
    let mut grad = vec![0.0; params.len()];
    let mut adam = Adam::new(params.len(), config.learning_rate);

    let val_rows: Vec<usize> = (0..val.len()).collect();
    let val_draws = draw_block(&mut val.sampler(), &val_rows, samples, &mut rng::stream(config.seed, streams::HEAD, 1, 0));
    let mut rng = rng::stream(config.seed, streams::HEAD, 0, 0);

    let mut best_val = log_mean_softmax_loss(&head, &val_draws, val_labels, samples, None);
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut train_trace = Vec::new();
    let mut val_trace = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let batch = config.batch_size.max(1);
    let mut sampler = train.sampler();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let draws = draw_block(&mut sampler, chunk, samples, &mut rng);
            let labels: Vec<usize> = chunk.iter().map(|&i| train_labels[i]).collect();
            let loss = log_mean_softmax_loss(&head, &draws, &labels, samples, Some(&mut grad));
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            epoch_loss += loss * chunk.len() as f64;
            adam.step(&mut params, &grad, None);
            head.unpack(&params);
        }
        train_trace.push(epoch_loss / train.len() as f64);
        let val_loss = log_mean_softmax_loss(&head, &val_draws, val_labels, samples, None);
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        val_trace.push(val_loss);
        if val_loss < best_val {
            best_val = val_loss;
            best.copy_from_slice(&params);
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    head.unpack(&best);
    Ok(HeadFit { head, train_trace, val_trace, best_epoch })
}

/// Training loss of `head` with fresh draws; used to check initial values.
pub fn head_loss<R: Rng + ?Sized>(
    head: &LinearHead,
    moments: &StackedMoments,
    labels: &[usize],
    samples: usize,
    rng: &mut R,
) -> f64 {
    let rows: Vec<usize> = (0..moments.len()).collect();
    let draws = draw_block(&mut moments.sampler(), &rows, samples, rng);
    log_mean_softmax_loss(head, &draws, labels, samples, None)
}

/// `(1/S) sum_s softmax(W^T s_s + b)` for query `q`.
pub fn predict_label<R: Rng + ?Sized>(
    head: &LinearHead,
    moments: &StackedMoments,
    q: usize,
    samples: usize,
    rng: &mut R,
) -> Vec<f64> {
    let nl = head.num_labels();
    let samples = samples.max(1);
    let mut scores = vec![0.0; moments.width()];
    let mut logits = vec![0.0; nl];
    let mut p = vec![0.0; nl];
    let mut acc = vec![0.0; nl];
    for _ in 0..samples {
        moments.sample_into(q, rng, &mut scores);
        head.logits_into(&scores, &mut logits);
        softmax_into(&logits, &mut p);
        acc.iter_mut().zip(&p).for_each(|(a, x)| *a += x);
    }
    acc.iter_mut().for_each(|a| *a /= samples as f64);
    acc
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contribution {
    /// Index into the stacked activation vector.
    pub activation: usize,
    pub concept: usize,
    pub value: usize,
    pub contribution: f64,
}

/// Per-activation contributions `W[j, label] * mean_logit_j` for query `q`,
/// sorted by magnitude (largest first, ties by activation index).
pub fn explain(head: &LinearHead, moments: &StackedMoments, q: usize, label: usize) -> Result<Vec<Contribution>> {
    if label >= head.num_labels() {
        return Err(Error::InvalidRecord { index: label, message: "task label out of range".into() });
    }
    let mean = moments.mean_logits(q);
    let mut out = Vec::with_capacity(mean.len());
    for (concept, c) in moments.concepts().iter().enumerate() {
        for value in 0..c.cardinality() {
            let j = moments.offset(concept) + value;
            out.push(Contribution { activation: j, concept, value, contribution: head.weights[(j, label)] * mean[j] });
        }
    }
    out.sort_by(|a, b| b.contribution.abs().total_cmp(&a.contribution.abs()).then(a.activation.cmp(&b.activation)));
    Ok(out)
}

/// `W[:, label]^T mean_logits + b[label]` for query `q`.
pub fn mean_label_logit(head: &LinearHead, moments: &StackedMoments, q: usize, label: usize) -> f64 {
    head.logits(&moments.mean_logits(q))[label]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concept::ConceptMoments;

    fn moments(means: &[[f64; 2]], var: f64) -> StackedMoments {
        let n = means.len();
        StackedMoments::new(vec![ConceptMoments {
            mixing: DMatrix::identity(2, 2),
            means: DMatrix::from_fn(n, 2, |i, j| means[i][j]),
            vars: DMatrix::from_element(n, 2, var),
        }])
    }

    #[test]
    fn initial_loss_is_log_labels() {
        let m = moments(&[[1.0, -1.0], [0.5, 2.0], [0.0, 0.0]], 0.3);
        let head = LinearHead::zeros(2, 3);
        let mut r = rng::stream(0, "t", 0, 0);
        let loss = head_loss(&head, &m, &[0, 1, 2], 16, &mut r);
        assert!((loss - 3.0f64.ln()).abs() < 1e-12);
        let p = predict_label(&head, &m, 0, 8, &mut r);
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn gradient_matches_fd() {
        let m = moments(&[[1.0, -1.0], [0.5, 2.0], [-0.3, 0.1]], 0.4);
        let labels = [0, 1, 1];
        let mut head = LinearHead::zeros(2, 3);
        let mut r = rng::stream(1, "t", 0, 0);
        let p0: Vec<f64> = (0..9).map(|_| r.random_range(-1.0..1.0)).collect();
        head.unpack(&p0);
        let draws = draw_block(&mut m.sampler(), &[0, 1, 2], 5, &mut r);
        let mut g = vec![0.0; 9];
        log_mean_softmax_loss(&head, &draws, &labels, 5, Some(&mut g));
        for i in 0..9 {
            let mut p = p0.clone();
            p[i] += 1e-6;
            head.unpack(&p);
            let up = log_mean_softmax_loss(&head, &draws, &labels, 5, None);
            p[i] -= 2e-6;
            head.unpack(&p);
            let down = log_mean_softmax_loss(&head, &draws, &labels, 5, None);
            let fd = (up - down) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-6, "param {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn zero_epoch_fit_returns_zeros() {
        let m = moments(&[[1.0, -1.0], [0.5, 2.0]], 0.1);
        let cfg = HeadConfig { max_epochs: 0, ..Default::default() };
        let fit = fit_head(&m, &[0, 1], &m, &[0, 1], 2, &cfg).unwrap();
        assert_eq!(fit.head, LinearHead::zeros(2, 2));
        assert_eq!(fit.best_epoch, 0);
    }

    #[test]
    fn learns_separable_rule() {
        let means: Vec<[f64; 2]> = (0..40).map(|i| if i % 2 == 0 { [2.0, -2.0] } else { [-2.0, 2.0] }).collect();
        let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let m = moments(&means, 0.2);
        let cfg = HeadConfig { learning_rate: 0.05, ..Default::default() };
        let fit = fit_head(&m, &labels, &m, &labels, 2, &cfg).unwrap();
        let mut r = rng::stream(2, "t", 0, 0);
        for q in 0..40 {
            let p = predict_label(&fit.head, &m, q, 64, &mut r);
            assert!(p[labels[q]] > 0.9);
        }
    }

    #[test]
    fn explanation_is_additive() {
        let m = moments(&[[1.5, -0.5]], 0.1);
        let head = LinearHead::from_parts(
            DMatrix::from_row_slice(2, 2, &[0.3, -1.0, 2.0, 0.7]),
            DVector::from_vec(vec![0.25, -0.5]),
        )
        .unwrap();
        for label in 0..2 {
            let parts = explain(&head, &m, 0, label).unwrap();
            let sum: f64 = parts.iter().map(|c| c.contribution).sum::<f64>() + head.bias()[label];
            assert!((sum - mean_label_logit(&head, &m, 0, label)).abs() < 1e-12);
            assert!(parts[0].contribution.abs() >= parts[1].contribution.abs());
        }
    }
}
