use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Floor applied to per-dimension standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-dimension z-scoring followed by L2 normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Standardizer {
    /// Population statistics over the rows of `rows` (`n x d`, `n >= 2`).
    pub fn fit(rows: &DMatrix<f64>) -> Result<Self> {
        let n = rows.nrows();
        if n < 2 {
            return Err(Error::TooFewRows { required: 2, actual: n });
        }
        let mut mean = Vec::with_capacity(rows.ncols());
        let mut std = Vec::with_capacity(rows.ncols());
        for col in rows.column_iter() {
            let mu = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n as f64;
            mean.push(mu);
            std.push(libm::sqrt(var).max(STD_FLOOR));
        }
        Ok(Self { mean, std })
    }

    pub fn from_parts(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::DimensionMismatch { expected: mean.len(), actual: std.len() });
        }
        if std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidConfig("standard deviations must be positive".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `normalize((z - mean) / std)`; an exactly-zero centered vector stays zero.
    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), actual: z.len() });
        }
        let mut out: Vec<f64> = z.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s).collect();
        let norm = libm::sqrt(out.iter().map(|v| v * v).sum::<f64>());
        if norm > 0.0 {
            out.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(out)
    }

    /// Transform every row of `rows`.
    pub fn apply_rows(&self, rows: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rows.ncols() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), actual: rows.ncols() });
        }
        let mut out = DMatrix::zeros(rows.nrows(), rows.ncols());
        let mut buf = alloc::vec![0.0; rows.ncols()];
        for i in 0..rows.nrows() {
            for j in 0..rows.ncols() {
                buf[j] = rows[(i, j)];
            }
            let t = self.apply(&buf)?;
            for j in 0..rows.ncols() {
                out[(i, j)] = t[j];
            }
        }
        Ok(out)
    }
}
