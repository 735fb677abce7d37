//! Adaptive-moment optimizer with a reduce-on-plateau learning-rate schedule.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Optimization schedule for GP fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without improvement before the learning rate is decayed.
    pub patience: usize,
    /// Multiplicative learning-rate decay applied on plateau.
    pub decay: f64,
    /// Training stops once the per-sample loss drops below this value.
    pub loss_floor: f64,
    /// Minimum absolute loss decrease that counts as an improvement.
    pub improvement_threshold: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            max_epochs: 8000,
            patience: 80,
            decay: 0.8,
            loss_floor: 1e-7,
            improvement_threshold: 1e-9,
        }
    }
}

impl Schedule {
    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.max_epochs = epochs;
        self
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// One descent step on `params` along the gradient of a loss to minimize.
    /// Entries with `mask[i] == false` are left untouched.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], mask: Option<&[bool]>) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, f64::from(self.t));
        let bc2 = 1.0 - libm::pow(self.beta2, f64::from(self.t));
        for i in 0..params.len() {
            if let Some(mask) = mask {
                if !mask[i] {
                    continue;
                }
            }
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (libm::sqrt(v_hat) + self.eps);
        }
    }
}

/// Tracks the best loss and decays the learning rate after `patience`
/// consecutive epochs without an improvement larger than the threshold.
#[derive(Debug, Clone)]
pub struct Plateau {
    patience: usize,
    decay: f64,
    threshold: f64,
    best: f64,
    bad_epochs: usize,
}

impl Plateau {
    pub fn new(patience: usize, decay: f64, threshold: f64) -> Self {
        Self {
            patience,
            decay,
            threshold,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Record an epoch loss. Returns `true` when this loss is a new best.
    pub fn observe(&mut self, loss: f64, adam: &mut Adam) -> bool {
        if loss < self.best - self.threshold {
            self.best = loss;
            self.bad_epochs = 0;
            true
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs > self.patience {
                adam.lr *= self.decay;
                self.bad_epochs = 0;
            }
            false
        }
    }
}

/// Outcome of a [`maximize`] run.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Per-epoch loss, `-objective / n`.
    pub loss_trace: Vec<f64>,
    pub final_learning_rate: f64,
}

impl FitReport {
    pub fn best_loss(&self) -> Option<f64> {
        self.loss_trace.iter().copied().reduce(f64::min)
    }
}

/// Maximize an objective over `n` data points with Adam.
///
/// `step(params, batch)` returns the objective and its gradient, where
/// `batch` is `None` for the full data set or the row indices of a
/// mini-batch. Data sets larger than `batch_size` are visited in shuffled
/// mini-batches each epoch. With full batches every evaluation is exact,
/// so the best parameters seen are the ones kept.
pub fn maximize<R, F>(
    params: &mut Vec<f64>,
    mask: &[bool],
    schedule: &Schedule,
    n: usize,
    batch_size: usize,
    rng: &mut R,
    mut step: F,
) -> Result<FitReport>
where
    R: rand::Rng,
    F: FnMut(&[f64], Option<&[usize]>) -> Result<(f64, Vec<f64>)>,
{
    use rand::seq::SliceRandom;

    let mut adam = Adam::new(params.len(), schedule.learning_rate);
    let mut plateau = Plateau::new(schedule.patience, schedule.decay, schedule.improvement_threshold);
    let mut trace = Vec::new();
    let full_batch = n <= batch_size;
    let mut best_loss = f64::INFINITY;
    let mut best_params = params.clone();
    let mut order: Vec<usize> = (0..n).collect();
    let mut neg = vec![0.0; params.len()];

    for epoch in 0..schedule.max_epochs {
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        if !full_batch {
            order.shuffle(rng);
        }
        for chunk in order.chunks(if full_batch { n.max(1) } else { batch_size }) {
            let (value, grad) = step(params, if full_batch { None } else { Some(chunk) })?;
            let loss = -value / n as f64;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch });
            }
            if full_batch && loss < best_loss {
                best_loss = loss;
                best_params.copy_from_slice(params);
            }
            for (o, g) in neg.iter_mut().zip(&grad) {
                *o = -g;
            }
            adam.step(params, &neg, Some(mask));
            epoch_loss += loss;
            batches += 1;
        }
        let epoch_loss = epoch_loss / batches as f64;
        trace.push(epoch_loss);
        plateau.observe(epoch_loss, &mut adam);
        if epoch_loss < schedule.loss_floor {
            break;
        }
    }
    if full_batch && !trace.is_empty() {
        // the last update has not been evaluated yet
        let (value, _) = step(params, None)?;
        let loss = -value / n as f64;
        if !(loss <= best_loss) {
            params.copy_from_slice(&best_params);
        }
    }
    Ok(FitReport { loss_trace: trace, final_learning_rate: adam.lr })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut x = [3.0, -2.0];
        let mut adam = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g = [2.0 * x[0], 2.0 * (x[1] - 1.0)];
            adam.step(&mut x, &g, None);
        }
        assert!(x[0].abs() < 1e-2 && (x[1] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn mask_freezes_entries() {
        let mut x = [1.0, 1.0];
        let mut adam = Adam::new(2, 0.1);
        adam.step(&mut x, &[1.0, 1.0], Some(&[true, false]));
        assert!(x[0] < 1.0);
        assert_eq!(x[1], 1.0);
    }

    #[test]
    fn plateau_decays_after_patience() {
        let mut adam = Adam::new(1, 1.0);
        let mut p = Plateau::new(2, 0.5, 1e-9);
        assert!(p.observe(1.0, &mut adam));
        for _ in 0..3 {
            p.observe(1.0, &mut adam);
        }
        assert_eq!(adam.lr, 0.5);
    }

    #[test]
    fn default_schedule_matches_reference_values() {
        let s = Schedule::default();
        assert_eq!((s.learning_rate, s.max_epochs, s.patience, s.decay), (0.01, 8000, 80, 0.8));
        assert_eq!(s.loss_floor, 1e-7);
    }
}
