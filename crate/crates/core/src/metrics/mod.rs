//! Concept and task quality metrics.

mod calibration;
mod classification;
mod dci;
mod forest;

use alloc::vec::Vec;

use nalgebra::DMatrix;

pub use calibration::{ece, ecce, Calibration, ECE_BINS};
pub use classification::{
    activation_auc, activation_f1, argmax_rows, binary_macro_f1, macro_f1, macro_f1_concepts, roc_auc,
    roc_auc_concepts,
};
pub use dci::{dci_disentanglement, disentanglement, importance_matrix};
pub use forest::{rf_importance, ForestConfig, Importance, RandomForest, Tree};

use crate::concept::PREDICT_SAMPLES;
use crate::error::{Error, Result};
use crate::head::{predict_label, LinearHead};
use crate::model::StackedMoments;
use crate::rng::{self, streams};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Monte-Carlo draws for concept and label probabilities.
    pub samples: usize,
    pub forest: ForestConfig,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { samples: PREDICT_SAMPLES, forest: ForestConfig::default(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptMetrics {
    pub f1: f64,
    /// `None` when no activation of the concept is scorable.
    pub roc_auc: Option<f64>,
    pub calibration: Calibration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub f1_c: f64,
    pub f1_y: f64,
    pub accuracy_y: f64,
    pub roc_auc_c: f64,
    pub ecce_r: f64,
    pub ecce_mad: f64,
    pub ece1: f64,
    pub ece2: f64,
    /// `None` with fewer than two concepts.
    pub dci: Option<f64>,
    pub per_concept: Vec<ConceptMetrics>,
    /// `(concept, value)` activations left out of the AUC average.
    pub auc_skipped: Vec<(usize, usize)>,
}

/// Concept probabilities (`n x v_i` per concept) from Monte-Carlo draws.
pub fn concept_probas<R: rand::Rng + ?Sized>(moments: &StackedMoments, samples: usize, rng: &mut R) -> Vec<DMatrix<f64>> {
    moments
        .concepts()
        .iter()
        .map(|c| {
            let mut out = DMatrix::zeros(c.len(), c.cardinality());
            for q in 0..c.len() {
                for (j, p) in c.proba(q, samples, rng).into_iter().enumerate() {
                    out[(q, j)] = p;
                }
            }
            out
        })
        .collect()
}

/// Mean logits per concept, `n x v_i` each.
pub fn concept_mean_logits(moments: &StackedMoments) -> Vec<DMatrix<f64>> {
    moments
        .concepts()
        .iter()
        .map(|c| {
            let mut out = DMatrix::zeros(c.len(), c.cardinality());
            for q in 0..c.len() {
                for (j, v) in c.mean_logits(q).into_iter().enumerate() {
                    out[(q, j)] = v;
                }
            }
            out
        })
        .collect()
}

/// Full report on an evaluation set. `truths[i]` holds the ground-truth
/// values of concept `i` for every query of `moments`.
pub fn evaluate(
    moments: &StackedMoments,
    head: &LinearHead,
    truths: &[Vec<usize>],
    labels: &[usize],
    config: &EvalConfig,
) -> Result<MetricReport> {
    let n = moments.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if truths.len() != moments.concepts().len() {
        return Err(Error::DimensionMismatch { expected: moments.concepts().len(), actual: truths.len() });
    }
    if labels.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: labels.len() });
    }
    let mut concept_rng = rng::stream(config.seed, streams::SAMPLING, 0, 0);
    let probas = concept_probas(moments, config.samples, &mut concept_rng);
    let logits = concept_mean_logits(moments);

    let f1_c = macro_f1_concepts(&probas, truths)?;
    let (roc_auc_c, auc_skipped) = roc_auc_concepts(&logits, truths)?;

    let mut all_cal = Vec::new();
    let mut per_concept = Vec::with_capacity(truths.len());
    for (i, (p, t)) in probas.iter().zip(truths).enumerate() {
        let f1s = activation_f1(p, t)?;
        let mut cals = Vec::with_capacity(p.ncols());
        for j in 0..p.ncols() {
            let scores: Vec<f64> = p.column(j).iter().map(|x| x.clamp(0.0, 1.0)).collect();
            let outcomes: Vec<bool> = t.iter().map(|&x| x == j).collect();
            cals.push(Calibration::of(&scores, &outcomes)?);
        }
        let aucs: Vec<f64> = activation_auc(&logits[i], t)?.into_iter().flatten().collect();
        per_concept.push(ConceptMetrics {
            f1: f1s.iter().sum::<f64>() / f1s.len() as f64,
            roc_auc: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
            calibration: Calibration::mean(&cals),
        });
        all_cal.extend(cals);
    }
    let cal = Calibration::mean(&all_cal);

    let mut label_rng = rng::stream(config.seed, streams::SAMPLING, 1, 0);
    let pred: Vec<usize> = (0..n)
        .map(|q| crate::probe::argmax(predict_label(head, moments, q, config.samples, &mut label_rng).into_iter()))
        .collect();
    let f1_y = macro_f1(labels, &pred, head.num_labels())?;
    let accuracy_y = labels.iter().zip(&pred).filter(|(a, b)| a == b).count() as f64 / n as f64;

    let dci = if truths.len() >= 2 {
        let mut stacked = DMatrix::zeros(n, moments.width());
        for (i, l) in logits.iter().enumerate() {
            let o = moments.offset(i);
            stacked.view_mut((0, o), (n, l.ncols())).copy_from(l);
        }
        match dci_disentanglement(&stacked, truths, &config.forest) {
            Ok(d) => Some(d),
            Err(Error::Degenerate(_)) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };

    Ok(MetricReport {
        f1_c,
        f1_y,
        accuracy_y,
        roc_auc_c,
        ecce_r: cal.ecce_r,
        ecce_mad: cal.ecce_mad,
        ece1: cal.ece1,
        ece2: cal.ece2,
        dci,
        per_concept,
        auc_skipped,
    })
}
