use alloc::vec::Vec;

use crate::error::{Error, Result};

fn check(scores: &[f64], outcomes: &[bool]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if scores.len() != outcomes.len() {
        return Err(Error::DimensionMismatch { expected: scores.len(), actual: outcomes.len() });
    }
    if let Some((index, &value)) = scores.iter().enumerate().find(|(_, s)| !(0.0..=1.0).contains(*s)) {
        return Err(Error::ScoreOutOfRange { index, value });
    }
    Ok(())
}

/// Empirical cumulative calibration error as `(range, max absolute)` of the
/// cumulative deviations `C_k = (1/n) sum_{j<=k} (R_j - S_j)`, `C_0 = 0`,
/// with scores sorted ascending (ties by outcome, negatives first), so the
/// result does not depend on input order.
pub fn ecce(scores: &[f64], outcomes: &[bool]) -> Result<(f64, f64)> {
    check(scores, outcomes)?;
    let n = scores.len() as f64;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(outcomes[a].cmp(&outcomes[b])));
    let (mut c, mut hi, mut lo, mut mad) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for &i in &idx {
        c += ((outcomes[i] as u8 as f64) - scores[i]) / n;
        hi = hi.max(c);
        lo = lo.min(c);
        mad = mad.max(c.abs());
    }
    Ok((hi - lo, mad))
}

/// Binned calibration error over `bins` equal-width bins on `[0, 1]`:
/// `sum_b (n_b / n) |mean outcome_b - mean score_b|^power`.
pub fn ece(scores: &[f64], outcomes: &[bool], bins: usize, power: u32) -> Result<f64> {
    check(scores, outcomes)?;
    if bins == 0 {
        return Err(Error::InvalidConfig("at least one bin is required".into()));
    }
    let mut count = alloc::vec![0usize; bins];
    let mut sum_s = alloc::vec![0.0; bins];
    let mut sum_o = alloc::vec![0.0; bins];
    for (&s, &o) in scores.iter().zip(outcomes) {
        let b = ((s * bins as f64) as usize).min(bins - 1);
        count[b] += 1;
        sum_s[b] += s;
        sum_o[b] += o as u8 as f64;
    }
    let n = scores.len() as f64;
    let mut total = 0.0;
    for b in 0..bins {
        if count[b] == 0 {
            continue;
        }
        let c = count[b] as f64;
        let gap = libm::fabs(sum_o[b] / c - sum_s[b] / c);
        total += c / n * libm::pow(gap, power as f64);
    }
    Ok(total)
}

/// Bin count used for the binned errors in reports.
pub const ECE_BINS: usize = 10;

/// All four calibration errors of one activation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Calibration {
    pub ecce_r: f64,
    pub ecce_mad: f64,
    pub ece1: f64,
    pub ece2: f64,
}

impl Calibration {
    pub fn of(scores: &[f64], outcomes: &[bool]) -> Result<Self> {
        let (ecce_r, ecce_mad) = ecce(scores, outcomes)?;
        Ok(Self {
            ecce_r,
            ecce_mad,
            ece1: ece(scores, outcomes, ECE_BINS, 1)?,
            ece2: ece(scores, outcomes, ECE_BINS, 2)?,
        })
    }

    pub fn mean(items: &[Calibration]) -> Self {
        let n = items.len().max(1) as f64;
        let mut out = Self::default();
        for c in items {
            out.ecce_r += c.ecce_r / n;
            out.ecce_mad += c.ecce_mad / n;
            out.ece1 += c.ece1 / n;
            out.ece2 += c.ece2 / n;
        }
        out
    }
}
