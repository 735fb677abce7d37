use alloc::vec::Vec;

use nalgebra::DMatrix;

use super::forest::{rf_importance, ForestConfig};
use crate::error::{Error, Result};

/// Disentanglement of an importance matrix `R` (`predicted x truth`):
/// `D = sum_i rho_i (1 - H_k(P_i))` with `P_i` the normalized row `i`,
/// entropy in base `k` (number of truth columns) and `rho_i` the row's share
/// of the total importance.
pub fn disentanglement(r: &DMatrix<f64>) -> Result<f64> {
    let k = r.ncols();
    if k < 2 {
        return Err(Error::InvalidConfig("disentanglement needs at least 2 ground-truth concepts".into()));
    }
    if r.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::InvalidConfig("importances must be non-negative".into()));
    }
    let total = r.sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("importance matrix is all zero".into()));
    }
    let log_k = libm::log(k as f64);
    let mut d = 0.0;
    for i in 0..r.nrows() {
        let row_sum: f64 = r.row(i).sum();
        if row_sum <= 0.0 {
            continue;
        }
        let h: f64 = r
            .row(i)
            .iter()
            .filter(|&&x| x > 0.0)
            .map(|&x| {
                let p = x / row_sum;
                -p * libm::log(p)
            })
            .sum();
        d += row_sum / total * (1.0 - h / log_k);
    }
    Ok(d)
}

/// Importance matrix from one forest per ground-truth concept, plus the
/// concepts whose forests made no split.
pub fn importance_matrix(
    scores: &DMatrix<f64>,
    truths: &[Vec<usize>],
    config: &ForestConfig,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let mut r = DMatrix::zeros(scores.ncols(), truths.len());
    let mut degenerate = Vec::new();
    for (j, t) in truths.iter().enumerate() {
        let cfg = ForestConfig { seed: crate::rng::derive_seed(config.seed, "dci", j as u64, 0), ..config.clone() };
        let imp = rf_importance(scores, t, &cfg)?;
        if imp.degenerate {
            degenerate.push(j);
        }
        for (i, v) in imp.values.into_iter().enumerate() {
            r[(i, j)] = v;
        }
    }
    Ok((r, degenerate))
}

/// DCI disentanglement of predicted scores (`n x v`) against the
/// integer-coded ground-truth concepts (one vector of length `n` per concept).
pub fn dci_disentanglement(scores: &DMatrix<f64>, truths: &[Vec<usize>], config: &ForestConfig) -> Result<f64> {
    if truths.len() < 2 {
        return Err(Error::InvalidConfig("disentanglement needs at least 2 ground-truth concepts".into()));
    }
    let (r, _) = importance_matrix(scores, truths, config)?;
    disentanglement(&r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_cases() {
        assert!((disentanglement(&DMatrix::identity(3, 3)).unwrap() - 1.0).abs() < 1e-15);
        assert!(disentanglement(&DMatrix::from_element(3, 3, 0.2)).unwrap().abs() < 1e-15);
        let r = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.0, 1.0]);
        assert!((disentanglement(&r).unwrap() - 0.5).abs() < 1e-15);
        assert!(disentanglement(&DMatrix::zeros(2, 2)).is_err());
    }
}
