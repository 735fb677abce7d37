use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::probe::argmax;

/// Macro F1 over the classes that occur in `truth` or `pred`.
pub fn macro_f1(truth: &[usize], pred: &[usize], classes: usize) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::EmptyInput);
    }
    if truth.len() != pred.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), actual: pred.len() });
    }
    let mut tp = alloc::vec![0usize; classes];
    let mut fp = alloc::vec![0usize; classes];
    let mut fnn = alloc::vec![0usize; classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= classes || p >= classes {
            return Err(Error::InvalidRecord { index: t.max(p), message: "class index out of range".into() });
        }
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fnn[t] += 1;
        }
    }
    let mut sum = 0.0;
    let mut present = 0;
    for c in 0..classes {
        if tp[c] + fp[c] + fnn[c] == 0 {
            continue;
        }
        present += 1;
        sum += 2.0 * tp[c] as f64 / (2 * tp[c] + fp[c] + fnn[c]) as f64;
    }
    Ok(sum / present as f64)
}

/// Macro F1 (over the positive and negative class) of one binary activation.
pub fn binary_macro_f1(truth: &[bool], pred: &[bool]) -> Result<f64> {
    let t: Vec<usize> = truth.iter().map(|&b| b as usize).collect();
    let p: Vec<usize> = pred.iter().map(|&b| b as usize).collect();
    macro_f1(&t, &p, 2)
}

/// Argmax value per row (ties to the lowest value).
pub fn argmax_rows(probas: &DMatrix<f64>) -> Vec<usize> {
    (0..probas.nrows()).map(|i| argmax(probas.row(i).iter().copied())).collect()
}

/// Binary macro F1 of every activation of one concept; the predicted value
/// is the argmax of each row of `probas` (`n x v_i`).
pub fn activation_f1(probas: &DMatrix<f64>, truth: &[usize]) -> Result<Vec<f64>> {
    if probas.nrows() != truth.len() {
        return Err(Error::DimensionMismatch { expected: probas.nrows(), actual: truth.len() });
    }
    let pred = argmax_rows(probas);
    (0..probas.ncols())
        .map(|j| {
            let t: Vec<bool> = truth.iter().map(|&x| x == j).collect();
            let p: Vec<bool> = pred.iter().map(|&x| x == j).collect();
            binary_macro_f1(&t, &p)
        })
        .collect()
}

/// Mean over all activations of all concepts of the activation macro F1.
pub fn macro_f1_concepts(probas: &[DMatrix<f64>], truths: &[Vec<usize>]) -> Result<f64> {
    if probas.len() != truths.len() {
        return Err(Error::DimensionMismatch { expected: probas.len(), actual: truths.len() });
    }
    let mut all = Vec::new();
    for (p, t) in probas.iter().zip(truths) {
        all.extend(activation_f1(p, t)?);
    }
    if all.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(all.iter().sum::<f64>() / all.len() as f64)
}

/// Rank-based ROC AUC with ties counted as one half. `None` without both
/// a positive and a negative.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&b| b).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average ranks over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if labels[k] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Per-activation AUCs of one concept's scores (`n x v_i`); degenerate
/// activations are `None`.
pub fn activation_auc(scores: &DMatrix<f64>, truth: &[usize]) -> Result<Vec<Option<f64>>> {
    if scores.nrows() != truth.len() {
        return Err(Error::DimensionMismatch { expected: scores.nrows(), actual: truth.len() });
    }
    Ok((0..scores.ncols())
        .map(|j| {
            let s: Vec<f64> = scores.column(j).iter().copied().collect();
            let l: Vec<bool> = truth.iter().map(|&x| x == j).collect();
            roc_auc(&s, &l)
        })
        .collect())
}

/// Mean AUC over the scorable activations, plus the skipped
/// `(concept, value)` activations.
pub fn roc_auc_concepts(scores: &[DMatrix<f64>], truths: &[Vec<usize>]) -> Result<(f64, Vec<(usize, usize)>)> {
    if scores.len() != truths.len() {
        return Err(Error::DimensionMismatch { expected: scores.len(), actual: truths.len() });
    }
    let mut values = Vec::new();
    let mut skipped = Vec::new();
    for (i, (s, t)) in scores.iter().zip(truths).enumerate() {
        for (j, auc) in activation_auc(s, t)?.into_iter().enumerate() {
            match auc {
                Some(a) => values.push(a),
                None => skipped.push((i, j)),
            }
        }
    }
    if values.is_empty() {
        return Err(Error::Degenerate("no activation has both positive and negative examples".into()));
    }
    Ok((values.iter().sum::<f64>() / values.len() as f64, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_f1() {
        let f = binary_macro_f1(&[true, true, false, false], &[true, false, false, false]).unwrap();
        assert!((f - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-15);
        assert_eq!(binary_macro_f1(&[true, false], &[true, false]).unwrap(), 1.0);
        assert_eq!(binary_macro_f1(&[true, false], &[false, true]).unwrap(), 0.0);
        assert_eq!(binary_macro_f1(&[false, false], &[false, false]).unwrap(), 1.0);
    }

    #[test]
    fn hand_auc() {
        let a = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_eq!(a, 0.75);
        assert_eq!(roc_auc(&[0.3; 4], &[false, true, false, true]), Some(0.5));
        assert_eq!(roc_auc(&[0.1, 0.9], &[false, true]), Some(1.0));
        assert_eq!(roc_auc(&[0.1, 0.9], &[true, true]), None);
    }
}
