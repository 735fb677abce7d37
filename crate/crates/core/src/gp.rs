//! Single-output sparse variational GP regression.
//!
//! Constant mean, RBF kernel, whitened variational posterior
//! `q(v) = N(mu, S S^T)` with `u = L v` and `L = chol(K_zz + jitter I)`.
//! The likelihood is Gaussian with per-point (heteroscedastic) noise.
//!
//! The jitter is treated as part of the kernel on coincident points: a
//! batch row that *is* inducing point `i` sees `k(z_i, z_i) + jitter`.
//! When a batch equals the whole inducing set this makes `L^{-1} K_zb = L^T`
//! exactly, which the full-batch fitting path exploits.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, cholesky_backward, cholesky_jittered, sq_dists, tril_in_place, Shape};
pub use crate::optim::FitReport;
use crate::optim::{maximize, Schedule};
use crate::rng;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Mini-batch size used once the training set is larger than this.
pub const BATCH_SIZE: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbfKernel {
    log_output_scale: f64,
    log_length_scale: f64,
}

impl RbfKernel {
    pub fn new(output_scale: f64, length_scale: f64) -> Result<Self> {
        if !(output_scale > 0.0 && length_scale > 0.0) || !output_scale.is_finite() || !length_scale.is_finite() {
            return Err(Error::InvalidConfig(alloc::format!(
                "kernel scales must be positive and finite (output {output_scale}, length {length_scale})"
            )));
        }
        Ok(Self {
            log_output_scale: libm::log(output_scale),
            log_length_scale: libm::log(length_scale),
        })
    }

    pub fn from_logs(log_output_scale: f64, log_length_scale: f64) -> Self {
        Self { log_output_scale, log_length_scale }
    }

    pub fn output_scale(&self) -> f64 {
        libm::exp(self.log_output_scale)
    }

    pub fn length_scale(&self) -> f64 {
        libm::exp(self.log_length_scale)
    }

    pub fn log_output_scale(&self) -> f64 {
        self.log_output_scale
    }

    pub fn log_length_scale(&self) -> f64 {
        self.log_length_scale
    }

    /// `alpha^2 exp(-|a - b|^2 / (2 rho^2))`.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch { expected: a.len(), actual: b.len() });
        }
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        Ok(self.from_sq_dist(d2))
    }

    #[inline]
    fn from_sq_dist(&self, d2: f64) -> f64 {
        let a2 = libm::exp(2.0 * self.log_output_scale);
        let rho2 = libm::exp(2.0 * self.log_length_scale);
        a2 * libm::exp(-0.5 * d2 / rho2)
    }

    pub(crate) fn gram(&self, sq: &DMatrix<f64>) -> DMatrix<f64> {
        let a2 = libm::exp(2.0 * self.log_output_scale);
        let scale = -0.5 / libm::exp(2.0 * self.log_length_scale);
        sq.map(|d2| a2 * libm::exp(scale * d2))
    }
}

impl Default for RbfKernel {
    /// Output scale 1.0, length scale 1.41.
    fn default() -> Self {
        Self::from_logs(0.0, libm::log(1.41))
    }
}

/// Which hyperparameters the optimizer may move.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trainable {
    pub kernel: bool,
    pub mean: bool,
    pub variational: bool,
}

impl Default for Trainable {
    fn default() -> Self {
        Self { kernel: true, mean: true, variational: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseVariationalGp {
    pub kernel: RbfKernel,
    pub mean: f64,
    inducing: DMatrix<f64>,
    variational_mean: DVector<f64>,
    variational_chol: DMatrix<f64>,
    jitter: f64,
}

pub(crate) const IDX_LOG_ALPHA: usize = 0;
pub(crate) const IDX_LOG_RHO: usize = 1;
pub(crate) const IDX_MEAN: usize = 2;
pub(crate) const IDX_VARIATIONAL: usize = 3;

/// Cholesky factor of the inducing Gram matrix plus the pieces needed to
/// differentiate through it.
pub(crate) struct Factor {
    kzz: DMatrix<f64>,
    l: DMatrix<f64>,
    linv: DMatrix<f64>,
    jitter: f64,
}

/// A batch as seen by one latent GP.
pub(crate) enum Batch<'a> {
    /// Exactly the inducing inputs, in order.
    Inducing,
    /// Arbitrary rows, given through their squared distances to the inducing
    /// inputs (`m x b`) and, per row, the inducing point it coincides with.
    Rows { dzb: &'a DMatrix<f64>, coincident: &'a [Option<usize>] },
}

pub(crate) enum ForwardCache {
    Inducing { ls: DMatrix<f64> },
    Rows { b: DMatrix<f64>, t: DMatrix<f64> },
}

pub(crate) struct Forward {
    pub mean: DVector<f64>,
    pub var: DVector<f64>,
    cache: ForwardCache,
}

impl SparseVariationalGp {
    /// A GP at the whitened prior (`mu = 0`, `S = I`) over `inducing` (rows).
    pub fn new(inducing: DMatrix<f64>, kernel: RbfKernel, mean: f64) -> Self {
        let m = inducing.nrows();
        Self {
            kernel,
            mean,
            inducing,
            variational_mean: DVector::zeros(m),
            variational_chol: DMatrix::identity(m, m),
            jitter: linalg::JITTER_START,
        }
    }

    /// Rebuild a GP from stored parts, checking shapes and the factor's diagonal.
    pub fn from_parts(
        inducing: DMatrix<f64>,
        kernel: RbfKernel,
        mean: f64,
        variational_mean: DVector<f64>,
        mut variational_chol: DMatrix<f64>,
        jitter: f64,
    ) -> Result<Self> {
        let m = inducing.nrows();
        if variational_mean.len() != m {
            return Err(Error::DimensionMismatch { expected: m, actual: variational_mean.len() });
        }
        if variational_chol.nrows() != m || variational_chol.ncols() != m {
            return Err(Error::DimensionMismatch { expected: m, actual: variational_chol.nrows() });
        }
        if (0..m).any(|i| !(variational_chol[(i, i)] > 0.0)) {
            return Err(Error::InvalidConfig("variational factor needs a positive diagonal".into()));
        }
        if !(jitter > 0.0) {
            return Err(Error::InvalidConfig("jitter must be positive".into()));
        }
        tril_in_place(&mut variational_chol);
        Ok(Self { kernel, mean, inducing, variational_mean, variational_chol, jitter })
    }

    pub fn inducing(&self) -> &DMatrix<f64> {
        &self.inducing
    }

    pub fn num_inducing(&self) -> usize {
        self.inducing.nrows()
    }

    pub fn dim(&self) -> usize {
        self.inducing.ncols()
    }

    pub fn variational_mean(&self) -> &DVector<f64> {
        &self.variational_mean
    }

    pub fn variational_chol(&self) -> &DMatrix<f64> {
        &self.variational_chol
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn set_variational(&mut self, mean: DVector<f64>, chol: DMatrix<f64>) -> Result<()> {
        let rebuilt = Self::from_parts(self.inducing.clone(), self.kernel, self.mean, mean, chol, self.jitter)?;
        *self = rebuilt;
        Ok(())
    }

    // ---- flat parameter vector ----

    pub fn num_params(&self) -> usize {
        num_params(self.num_inducing())
    }

    /// `[log alpha, log rho, mean, mu (m), packed lower S (column-major, log diagonal)]`.
    pub fn pack(&self) -> Vec<f64> {
        let m = self.num_inducing();
        let mut out = Vec::with_capacity(num_params(m));
        out.push(self.kernel.log_output_scale);
        out.push(self.kernel.log_length_scale);
        out.push(self.mean);
        out.extend(self.variational_mean.iter().copied());
        for j in 0..m {
            out.push(libm::log(self.variational_chol[(j, j)]));
            for i in (j + 1)..m {
                out.push(self.variational_chol[(i, j)]);
            }
        }
        out
    }

    pub fn unpack(&mut self, p: &[f64]) {
        let m = self.num_inducing();
        debug_assert_eq!(p.len(), num_params(m));
        self.kernel = RbfKernel::from_logs(p[IDX_LOG_ALPHA], p[IDX_LOG_RHO]);
        self.mean = p[IDX_MEAN];
        for i in 0..m {
            self.variational_mean[i] = p[IDX_VARIATIONAL + i];
        }
        let mut k = IDX_VARIATIONAL + m;
        for j in 0..m {
            self.variational_chol[(j, j)] = libm::exp(p[k]);
            k += 1;
            for i in (j + 1)..m {
                self.variational_chol[(i, j)] = p[k];
                k += 1;
            }
        }
    }

    /// Mask over the packed vector for the selected trainable groups.
    pub fn param_mask(&self, trainable: Trainable) -> Vec<bool> {
        let n = self.num_params();
        let mut mask = vec![trainable.variational; n];
        mask[IDX_LOG_ALPHA] = trainable.kernel;
        mask[IDX_LOG_RHO] = trainable.kernel;
        mask[IDX_MEAN] = trainable.mean;
        mask
    }

    // ---- core computations ----

    pub(crate) fn factor(&self, dzz: &DMatrix<f64>) -> Result<Factor> {
        let kzz = self.kernel.gram(dzz);
        let (l, linv, jitter) = cholesky_jittered(&kzz, self.jitter)?;
        Ok(Factor { kzz, l, linv, jitter })
    }

    /// Adopt the jitter a factorization had to escalate to.
    pub(crate) fn absorb_jitter(&mut self, factor: &Factor) {
        self.jitter = self.jitter.max(factor.jitter);
    }

    /// KL(q(v) || N(0, I)).
    pub fn kl(&self) -> f64 {
        let m = self.num_inducing() as f64;
        let s = &self.variational_chol;
        let mut log_det = 0.0;
        for i in 0..s.nrows() {
            log_det += libm::log(s[(i, i)]);
        }
        0.5 * (s.norm_squared() + self.variational_mean.norm_squared() - m) - log_det
    }

    pub(crate) fn forward(&self, f: &Factor, batch: &Batch<'_>) -> Forward {
        let mu = &self.variational_mean;
        let s = &self.variational_chol;
        match batch {
            Batch::Inducing => {
                let mean = (&f.l * mu).add_scalar(self.mean);
                let ls = linalg::mul_structured(&f.l, false, Shape::Lower, s, false, Shape::Lower, true);
                let var = linalg::row_sq_norms(&ls);
                Forward { mean, var, cache: ForwardCache::Inducing { ls } }
            }
            Batch::Rows { dzb, coincident } => {
                let mut kzb = self.kernel.gram(dzb);
                let a2 = libm::exp(2.0 * self.kernel.log_output_scale);
                let mut kbb = DVector::from_element(coincident.len(), a2);
                for (n, c) in coincident.iter().enumerate() {
                    if let Some(i) = c {
                        kzb[(*i, n)] += f.jitter;
                        kbb[n] += f.jitter;
                    }
                }
                let b = &f.linv * &kzb;
                let mean = b.tr_mul(mu).add_scalar(self.mean);
                let t = linalg::mul(s, true, &b, false);
                let var = kbb - linalg::col_sq_norms(&b) + linalg::col_sq_norms(&t);
                Forward { mean, var, cache: ForwardCache::Rows { b, t } }
            }
        }
    }

    /// Packed gradient of `sum_n [g_n * mean_n + h_n * var_n] - KL`, where
    /// `g` and `h` are the derivatives of the (already scaled) expected
    /// log-likelihood with respect to the batch means and variances.
    pub(crate) fn backward(
        &self,
        f: &Factor,
        batch: &Batch<'_>,
        fwd: &Forward,
        dzz: &DMatrix<f64>,
        g: &DVector<f64>,
        h: &DVector<f64>,
    ) -> Vec<f64> {
        let m = self.num_inducing();
        let mu = &self.variational_mean;
        let s = &self.variational_chol;
        let rho2 = libm::exp(2.0 * self.kernel.log_length_scale);

        let mut grad = vec![0.0; num_params(m)];
        grad[IDX_MEAN] = g.sum();

        let (d_mu, mut d_s, l_bar, mut d_log_alpha, mut d_log_rho) = match (&fwd.cache, batch) {
            (ForwardCache::Inducing { ls }, _) => {
                let d_mu = f.l.tr_mul(g) - mu;
                let mut d_ls = ls.clone();
                for j in 0..m {
                    for i in 0..m {
                        d_ls[(i, j)] *= 2.0 * h[i];
                    }
                }
                let d_s = linalg::mul_structured(&f.l, true, Shape::Upper, &d_ls, false, Shape::Lower, true);
                let mut l_bar =
                    g * mu.transpose() + linalg::mul_structured(&d_ls, false, Shape::Lower, s, true, Shape::Upper, true);
                tril_in_place(&mut l_bar);
                (d_mu, d_s, l_bar, 0.0, 0.0)
            }
            (ForwardCache::Rows { b, t }, Batch::Rows { dzb, .. }) => {
                let nb = b.ncols();
                let d_mu = b * g - mu;
                let mut b_h = b.clone();
                for n in 0..nb {
                    b_h.column_mut(n).scale_mut(2.0 * h[n]);
                }
                // 2 B diag(h) T^T
                let d_s = linalg::mul(&b_h, false, t, true);
                // B_bar = mu g^T + 2 (S T - B) diag(h)
                let mut st_minus_b = s * t - b;
                for n in 0..nb {
                    st_minus_b.column_mut(n).scale_mut(2.0 * h[n]);
                }
                let b_bar = mu * g.transpose() + st_minus_b;
                let k_bar = linalg::mul(&f.linv, true, &b_bar, false);
                let mut l_bar = -linalg::mul(&k_bar, false, b, true);
                tril_in_place(&mut l_bar);
                let a2 = libm::exp(2.0 * self.kernel.log_output_scale);
                // kbb = alpha^2 (+ jitter); d/dlog alpha = 2 alpha^2
                let mut dla = 2.0 * a2 * h.sum();
                let mut dlr = 0.0;
                let kzb = self.kernel.gram(dzb);
                for n in 0..nb {
                    for i in 0..m {
                        // kernel part only; the coincident jitter is constant
                        let k = kzb[(i, n)];
                        dla += k_bar[(i, n)] * 2.0 * k;
                        dlr += k_bar[(i, n)] * k * dzb[(i, n)] / rho2;
                    }
                }
                (d_mu, d_s, l_bar, dla, dlr)
            }
            _ => unreachable!("forward cache does not match batch kind"),
        };

        let a_bar = cholesky_backward(&f.l, &f.linv, &l_bar);
        for j in 0..m {
            for i in 0..m {
                let k = f.kzz[(i, j)];
                d_log_alpha += a_bar[(i, j)] * 2.0 * k;
                d_log_rho += a_bar[(i, j)] * k * dzz[(i, j)] / rho2;
            }
        }
        grad[IDX_LOG_ALPHA] = d_log_alpha;
        grad[IDX_LOG_RHO] = d_log_rho;

        // KL gradient (ascent direction is its negative)
        for j in 0..m {
            for i in j..m {
                d_s[(i, j)] -= s[(i, j)];
            }
            d_s[(j, j)] += 1.0 / s[(j, j)];
        }
        for i in 0..m {
            grad[IDX_VARIATIONAL + i] = d_mu[i];
        }
        let mut k = IDX_VARIATIONAL + m;
        for j in 0..m {
            // log-diagonal chain rule
            grad[k] = d_s[(j, j)] * s[(j, j)];
            k += 1;
            for i in (j + 1)..m {
                grad[k] = d_s[(i, j)];
                k += 1;
            }
        }
        grad
    }

    /// Predictive latent means and variances at the rows of `queries`.
    pub fn predict_latent(&self, queries: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        let predictor = self.predictor()?;
        predictor.predict(queries)
    }

    /// Factorize once for repeated predictions.
    pub fn predictor(&self) -> Result<LatentPredictor<'_>> {
        let dzz = sq_dists(&self.inducing, &self.inducing);
        let factor = self.factor(&dzz)?;
        Ok(LatentPredictor { gp: self, factor })
    }

    /// Evidence lower bound for a batch of regression targets with
    /// per-point noise variances, scaled to `n_total` points.
    pub fn elbo(&self, data: &RegressionData<'_>, n_total: usize) -> Result<f64> {
        Ok(self.elbo_with_gradient(data, n_total)?.0)
    }

    /// ELBO and its gradient over the packed parameter vector.
    pub fn elbo_with_gradient(&self, data: &RegressionData<'_>, n_total: usize) -> Result<(f64, Vec<f64>)> {
        data.validate(self.dim())?;
        let dzz = sq_dists(&self.inducing, &self.inducing);
        let f = self.factor(&dzz)?;
        let dzb = sq_dists(&self.inducing, data.inputs);
        let coincident = vec![None; data.inputs.nrows()];
        let batch = Batch::Rows { dzb: &dzb, coincident: &coincident };
        Ok(self.single_output_step(&f, &batch, &dzz, data.targets, data.noise, n_total))
    }

    /// ELBO and gradient when the batch is exactly the inducing inputs, in order.
    pub fn elbo_at_inducing_with_gradient(
        &self,
        targets: &[f64],
        noise: &[f64],
        n_total: usize,
    ) -> Result<(f64, Vec<f64>)> {
        let data = RegressionData { inputs: &self.inducing, targets, noise };
        data.validate(self.dim())?;
        let dzz = sq_dists(&self.inducing, &self.inducing);
        let f = self.factor(&dzz)?;
        Ok(self.single_output_step(&f, &Batch::Inducing, &dzz, targets, noise, n_total))
    }

    fn single_output_step(
        &self,
        f: &Factor,
        batch: &Batch<'_>,
        dzz: &DMatrix<f64>,
        targets: &[f64],
        noise: &[f64],
        n_total: usize,
    ) -> (f64, Vec<f64>) {
        let fwd = self.forward(f, batch);
        let scale = n_total as f64 / targets.len() as f64;
        let mut ell = 0.0;
        let mut g = DVector::zeros(targets.len());
        let mut h = DVector::zeros(targets.len());
        for n in 0..targets.len() {
            let r = targets[n] - fwd.mean[n];
            ell += -0.5 * (LN_2PI + libm::log(noise[n])) - 0.5 * r * r / noise[n] - 0.5 * fwd.var[n] / noise[n];
            g[n] = scale * r / noise[n];
            h[n] = -0.5 * scale / noise[n];
        }
        let value = scale * ell - self.kl();
        let grad = self.backward(f, batch, &fwd, dzz, &g, &h);
        (value, grad)
    }

    /// Maximize the ELBO with Adam and a reduce-on-plateau schedule.
    ///
    /// Full batch when the data has at most [`BATCH_SIZE`] rows; otherwise
    /// shuffled mini-batches drawn from the `gp-batches` stream of `seed`.
    /// With full batches the best parameters seen are kept.
    pub fn fit(
        &mut self,
        data: &RegressionData<'_>,
        schedule: &Schedule,
        trainable: Trainable,
        seed: u64,
    ) -> Result<FitReport> {
        data.validate(self.dim())?;
        let n = data.inputs.nrows();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        let same_as_inducing = data.inputs == &self.inducing;
        let dzz = sq_dists(&self.inducing, &self.inducing);
        let dzb_full = if same_as_inducing { dzz.clone() } else { sq_dists(&self.inducing, data.inputs) };
        let coincident_all: Vec<Option<usize>> =
            if same_as_inducing { (0..n).map(Some).collect() } else { vec![None; n] };

        let mask = self.param_mask(trainable);
        let mut params = self.pack();
        let mut rng = rng::stream(seed, rng::streams::GP_BATCHES, 0, 0);
        let report = maximize(&mut params, &mask, schedule, n, BATCH_SIZE, &mut rng, |p, batch| {
            self.unpack(p);
            let f = self.factor(&dzz)?;
            self.absorb_jitter(&f);
            Ok(match batch {
                None if same_as_inducing => {
                    self.single_output_step(&f, &Batch::Inducing, &dzz, data.targets, data.noise, n)
                }
                None => self.single_output_step(
                    &f,
                    &Batch::Rows { dzb: &dzb_full, coincident: &coincident_all },
                    &dzz,
                    data.targets,
                    data.noise,
                    n,
                ),
                Some(sel) => {
                    let dzb = DMatrix::from_fn(dzb_full.nrows(), sel.len(), |i, j| dzb_full[(i, sel[j])]);
                    let coinc: Vec<Option<usize>> = sel.iter().map(|&i| coincident_all[i]).collect();
                    let t: Vec<f64> = sel.iter().map(|&i| data.targets[i]).collect();
                    let nz: Vec<f64> = sel.iter().map(|&i| data.noise[i]).collect();
                    self.single_output_step(&f, &Batch::Rows { dzb: &dzb, coincident: &coinc }, &dzz, &t, &nz, n)
                }
            })
        })?;
        self.unpack(&params);
        Ok(report)
    }
}

pub(crate) fn num_params(m: usize) -> usize {
    IDX_VARIATIONAL + m + m * (m + 1) / 2
}

/// Training data for a single-output GP.
#[derive(Debug, Clone, Copy)]
pub struct RegressionData<'a> {
    pub inputs: &'a DMatrix<f64>,
    pub targets: &'a [f64],
    pub noise: &'a [f64],
}

impl RegressionData<'_> {
    fn validate(&self, dim: usize) -> Result<()> {
        let n = self.inputs.nrows();
        if self.inputs.ncols() != dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: self.inputs.ncols() });
        }
        if self.targets.len() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: self.targets.len() });
        }
        if self.noise.len() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: self.noise.len() });
        }
        if let Some((index, &value)) = self.noise.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::NonPositiveNoise { index, value });
        }
        Ok(())
    }
}

/// A factorized GP ready for repeated predictions.
pub struct LatentPredictor<'a> {
    gp: &'a SparseVariationalGp,
    factor: Factor,
}

impl LatentPredictor<'_> {
    /// Means and (non-negative) variances at the rows of `queries`.
    pub fn predict(&self, queries: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        if queries.ncols() != self.gp.dim() {
            return Err(Error::DimensionMismatch { expected: self.gp.dim(), actual: queries.ncols() });
        }
        const CHUNK: usize = 1024;
        let q = queries.nrows();
        let mut means = Vec::with_capacity(q);
        let mut vars = Vec::with_capacity(q);
        let mut start = 0;
        while start < q {
            let end = (start + CHUNK).min(q);
            let rows: Vec<usize> = (start..end).collect();
            let sub = linalg::select_rows(queries, &rows);
            let dzb = sq_dists(&self.gp.inducing, &sub);
            let coincident = vec![None; rows.len()];
            let fwd = self.gp.forward(&self.factor, &Batch::Rows { dzb: &dzb, coincident: &coincident });
            means.extend(fwd.mean.iter().copied());
            vars.extend(fwd.var.iter().map(|v| v.max(0.0)));
            start = end;
        }
        Ok((means, vars))
    }
}
