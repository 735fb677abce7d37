//! Per-concept classifiers built from `v` latent sparse GPs.
//!
//! Labels are turned into heteroscedastic regression targets with the
//! Dirichlet transform. The latent scores `s` are mixed by a learnable
//! `v x v` matrix `A` before the likelihood, so the model regresses
//! `A^T s` onto the targets. Class probabilities are the Monte-Carlo
//! average of `softmax(A^T s)` over draws of the latent predictive.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gp::{Batch, Factor, RbfKernel, SparseVariationalGp, Trainable, BATCH_SIZE, LN_2PI};
use crate::linalg::sq_dists;
use crate::optim::{maximize, FitReport, Schedule};
use crate::rng::{self, streams};

/// Default Dirichlet prior mass added to every class.
pub const DIRICHLET_NOISE: f64 = 0.01;

/// Default Monte-Carlo sample count for predictions served to users and metrics.
pub const PREDICT_SAMPLES: usize = 256;

/// Transformed targets and noise variances for one label.
pub fn dirichlet_transform(label: usize, cardinality: usize, a_eps: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if label >= cardinality {
        return Err(Error::ValueOutOfRange { sample: 0, concept: 0, value: label, cardinality });
    }
    if !(a_eps > 0.0) || !a_eps.is_finite() {
        return Err(Error::InvalidConfig("dirichlet noise must be positive and finite".into()));
    }
    let mut targets = Vec::with_capacity(cardinality);
    let mut noise = Vec::with_capacity(cardinality);
    for j in 0..cardinality {
        let alpha = a_eps + if j == label { 1.0 } else { 0.0 };
        let s2 = libm::log(1.0 / alpha + 1.0);
        noise.push(s2);
        targets.push(libm::log(alpha) - s2 / 2.0);
    }
    Ok((targets, noise))
}

/// Numerically stable softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    softmax_into(x, &mut out);
    out
}

pub(crate) fn softmax_into(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = libm::exp(v - max);
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// `H(p) / log(len(p))`, with `0 log 0 = 0`, clamped to `[0, 1]`.
pub fn normalized_entropy(p: &[f64]) -> f64 {
    if p.len() < 2 {
        return 0.0;
    }
    let h: f64 = p.iter().filter(|&&x| x > 0.0).map(|&x| -x * libm::log(x)).sum();
    if h <= 0.0 {
        return 0.0;
    }
    (h / libm::log(p.len() as f64)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptFitConfig {
    pub schedule: Schedule,
    pub dirichlet_noise: f64,
    pub trainable: Trainable,
    pub learn_mixing: bool,
    /// Initial kernel of every latent GP.
    pub kernel: RbfKernel,
    /// Initial constant mean of every latent GP.
    pub mean: f64,
    pub seed: u64,
}

impl Default for ConceptFitConfig {
    fn default() -> Self {
        Self {
            schedule: Schedule::default(),
            dirichlet_noise: DIRICHLET_NOISE,
            trainable: Trainable::default(),
            learn_mixing: true,
            kernel: RbfKernel::default(),
            mean: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitWarning {
    /// Every annotation carries the same value; predictions collapse towards it.
    SingleClass { concept: usize, value: usize },
}

/// A fitted (or prior-initialized) classifier for one concept.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptGp {
    concept: usize,
    latents: Vec<SparseVariationalGp>,
    mixing: DMatrix<f64>,
    dirichlet_noise: f64,
    /// `(sample, value)` pairs the model was fitted on, in inducing order.
    training: Vec<(usize, usize)>,
}

/// Output of [`fit_concept`].
#[derive(Debug, Clone)]
pub struct ConceptFit {
    pub model: ConceptGp,
    pub report: FitReport,
    pub warning: Option<FitWarning>,
}

impl ConceptGp {
    /// Prior-state model: `v` latents at the whitened prior over the
    /// annotated inputs (rows of `inputs`, aligned with `training`) and
    /// identity mixing.
    pub fn new(
        concept: usize,
        cardinality: usize,
        inputs: DMatrix<f64>,
        training: Vec<(usize, usize)>,
        config: &ConceptFitConfig,
    ) -> Result<Self> {
        if training.is_empty() {
            return Err(Error::NoAnnotations { concept });
        }
        if inputs.nrows() != training.len() {
            return Err(Error::DimensionMismatch { expected: training.len(), actual: inputs.nrows() });
        }
        if cardinality < 2 {
            return Err(Error::InvalidSchema("concept cardinality must be at least 2".into()));
        }
        for &(sample, value) in &training {
            if value >= cardinality {
                return Err(Error::ValueOutOfRange { sample, concept, value, cardinality });
            }
        }
        if !(config.dirichlet_noise > 0.0) {
            return Err(Error::InvalidConfig("dirichlet noise must be positive".into()));
        }
        let latents = (0..cardinality)
            .map(|_| SparseVariationalGp::new(inputs.clone(), config.kernel, config.mean))
            .collect();
        Ok(Self {
            concept,
            latents,
            mixing: DMatrix::identity(cardinality, cardinality),
            dirichlet_noise: config.dirichlet_noise,
            training,
        })
    }

    /// Reassemble a model from stored parts.
    pub fn from_parts(
        concept: usize,
        latents: Vec<SparseVariationalGp>,
        mixing: DMatrix<f64>,
        dirichlet_noise: f64,
        training: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let v = latents.len();
        if v < 2 {
            return Err(Error::InvalidSchema("concept cardinality must be at least 2".into()));
        }
        if mixing.nrows() != v || mixing.ncols() != v {
            return Err(Error::DimensionMismatch { expected: v, actual: mixing.nrows() });
        }
        let first = latents[0].inducing();
        if latents.iter().any(|l| l.inducing() != first) {
            return Err(Error::InvalidConfig("latent GPs must share their inducing inputs".into()));
        }
        if training.len() != first.nrows() {
            return Err(Error::DimensionMismatch { expected: first.nrows(), actual: training.len() });
        }
        if !(dirichlet_noise > 0.0) {
            return Err(Error::InvalidConfig("dirichlet noise must be positive".into()));
        }
        Ok(Self { concept, latents, mixing, dirichlet_noise, training })
    }

    pub fn concept_index(&self) -> usize {
        self.concept
    }

    pub fn cardinality(&self) -> usize {
        self.latents.len()
    }

    pub fn latents(&self) -> &[SparseVariationalGp] {
        &self.latents
    }

    pub fn mixing(&self) -> &DMatrix<f64> {
        &self.mixing
    }

    pub fn set_mixing(&mut self, mixing: DMatrix<f64>) -> Result<()> {
        let v = self.cardinality();
        if mixing.nrows() != v || mixing.ncols() != v {
            return Err(Error::DimensionMismatch { expected: v, actual: mixing.nrows() });
        }
        self.mixing = mixing;
        Ok(())
    }

    pub fn dirichlet_noise(&self) -> f64 {
        self.dirichlet_noise
    }

    pub fn training(&self) -> &[(usize, usize)] {
        &self.training
    }

    pub fn inducing(&self) -> &DMatrix<f64> {
        self.latents[0].inducing()
    }

    pub fn dim(&self) -> usize {
        self.latents[0].dim()
    }

    /// Latent parameters in order, then `A` column-major.
    pub fn num_params(&self) -> usize {
        self.latents.iter().map(SparseVariationalGp::num_params).sum::<usize>() + self.mixing.len()
    }

    pub fn pack(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.latents {
            out.extend(l.pack());
        }
        out.extend(self.mixing.iter().copied());
        out
    }

    pub fn unpack(&mut self, p: &[f64]) {
        let mut at = 0;
        for l in &mut self.latents {
            let n = l.num_params();
            l.unpack(&p[at..at + n]);
            at += n;
        }
        self.mixing.copy_from_slice(&p[at..]);
    }

    fn param_mask(&self, trainable: Trainable, learn_mixing: bool) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.num_params());
        for l in &self.latents {
            mask.extend(l.param_mask(trainable));
        }
        mask.extend(core::iter::repeat_n(learn_mixing, self.mixing.len()));
        mask
    }

    /// Dirichlet targets and noise for the training set, `m x v` each.
    pub fn targets(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let v = self.cardinality();
        let m = self.training.len();
        let mut y = DMatrix::zeros(m, v);
        let mut s2 = DMatrix::zeros(m, v);
        for (n, &(_, value)) in self.training.iter().enumerate() {
            let (t, s) = dirichlet_transform(value, v, self.dirichlet_noise)?;
            for j in 0..v {
                y[(n, j)] = t[j];
                s2[(n, j)] = s[j];
            }
        }
        Ok((y, s2))
    }

    fn factors(&self, dzz: &DMatrix<f64>) -> Result<Vec<Factor>> {
        self.latents.iter().map(|l| l.factor(dzz)).collect()
    }

    /// ELBO over the training rows in `batch` (all rows when `None`) and
    /// its gradient over the packed parameters.
    pub fn elbo_with_gradient(&self, batch: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
        let dzz = sq_dists(self.inducing(), self.inducing());
        let (y, s2) = self.targets()?;
        let factors = self.factors(&dzz)?;
        Ok(self.objective(&factors, &dzz, &y, &s2, batch))
    }

    fn objective(
        &self,
        factors: &[Factor],
        dzz: &DMatrix<f64>,
        y: &DMatrix<f64>,
        s2: &DMatrix<f64>,
        batch: Option<&[usize]>,
    ) -> (f64, Vec<f64>) {
        let v = self.cardinality();
        let m = self.training.len();
        let rows: Vec<usize> = match batch {
            Some(sel) => sel.to_vec(),
            None => (0..m).collect(),
        };
        let b = rows.len();
        let dzb;
        let coincident: Vec<Option<usize>>;
        let view = match batch {
            None => Batch::Inducing,
            Some(sel) => {
                dzb = DMatrix::from_fn(m, b, |i, j| dzz[(i, sel[j])]);
                coincident = sel.iter().map(|&i| Some(i)).collect();
                Batch::Rows { dzb: &dzb, coincident: &coincident }
            }
        };
        let fwds: Vec<_> = self.latents.iter().zip(factors).map(|(l, f)| l.forward(f, &view)).collect();

        let scale = m as f64 / b as f64;
        let a = &self.mixing;
        let mut ell = 0.0;
        let mut g = vec![DVector::<f64>::zeros(b); v];
        let mut h = vec![DVector::zeros(b); v];
        let mut da = DMatrix::<f64>::zeros(v, v);
        for (n, &row) in rows.iter().enumerate() {
            for j in 0..v {
                let mut mu = 0.0;
                let mut var = 0.0;
                for l in 0..v {
                    mu += a[(l, j)] * fwds[l].mean[n];
                    var += a[(l, j)] * a[(l, j)] * fwds[l].var[n];
                }
                let noise = s2[(row, j)];
                let r = y[(row, j)] - mu;
                ell += -0.5 * (LN_2PI + libm::log(noise)) - 0.5 * r * r / noise - 0.5 * var / noise;
                for l in 0..v {
                    let alj = a[(l, j)];
                    g[l][n] += scale * alj * r / noise;
                    h[l][n] -= 0.5 * scale * alj * alj / noise;
                    da[(l, j)] += scale * (r * fwds[l].mean[n] - alj * fwds[l].var[n]) / noise;
                }
            }
        }
        let mut value = scale * ell;
        let mut grad = Vec::with_capacity(self.num_params());
        for (l, gp) in self.latents.iter().enumerate() {
            value -= gp.kl();
            grad.extend(gp.backward(&factors[l], &view, &fwds[l], dzz, &g[l], &h[l]));
        }
        grad.extend(da.iter().copied());
        (value, grad)
    }

    /// Latent predictive moments at the rows of `queries`, bundled with `A`.
    pub fn moments(&self, queries: &DMatrix<f64>) -> Result<ConceptMoments> {
        let q = queries.nrows();
        let v = self.cardinality();
        let mut means = DMatrix::zeros(q, v);
        let mut vars = DMatrix::zeros(q, v);
        for (l, gp) in self.latents.iter().enumerate() {
            let (mu, var) = gp.predictor()?.predict(queries)?;
            for i in 0..q {
                means[(i, l)] = mu[i];
                vars[(i, l)] = var[i];
            }
        }
        Ok(ConceptMoments { mixing: self.mixing.clone(), means, vars })
    }

    fn single_query(&self, z: &[f64]) -> Result<ConceptMoments> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), actual: z.len() });
        }
        self.moments(&DMatrix::from_row_slice(1, z.len(), z))
    }

    /// Monte-Carlo class probabilities at one standardized query.
    pub fn predict_proba<R: Rng + ?Sized>(&self, z: &[f64], samples: usize, rng: &mut R) -> Result<Vec<f64>> {
        Ok(self.single_query(z)?.proba(0, samples, rng))
    }

    /// `A^T mu(z)`.
    pub fn predict_mean_logits(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.single_query(z)?.mean_logits(0))
    }

    /// Normalized entropy of [`predict_proba`](Self::predict_proba).
    pub fn concept_uncertainty<R: Rng + ?Sized>(&self, z: &[f64], samples: usize, rng: &mut R) -> Result<f64> {
        Ok(normalized_entropy(&self.predict_proba(z, samples, rng)?))
    }
}

/// Latent predictive means and variances (`q x v`) for a batch of queries.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptMoments {
    pub mixing: DMatrix<f64>,
    pub means: DMatrix<f64>,
    pub vars: DMatrix<f64>,
}

impl ConceptMoments {
    pub fn len(&self) -> usize {
        self.means.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.means.nrows() == 0
    }

    pub fn cardinality(&self) -> usize {
        self.means.ncols()
    }

    pub fn mean_logits(&self, i: usize) -> Vec<f64> {
        let v = self.cardinality();
        (0..v).map(|j| (0..v).map(|l| self.mixing[(l, j)] * self.means[(i, l)]).sum()).collect()
    }

    /// One mixed draw `A^T s` for query `i`, latents sampled independently.
    pub fn sample_into<R: Rng + ?Sized>(&self, i: usize, rng: &mut R, latent: &mut [f64], out: &mut [f64]) {
        let v = self.cardinality();
        for l in 0..v {
            let eps: f64 = rng.sample(StandardNormal);
            latent[l] = self.means[(i, l)] + libm::sqrt(self.vars[(i, l)]) * eps;
        }
        for j in 0..v {
            out[j] = (0..v).map(|l| self.mixing[(l, j)] * latent[l]).sum();
        }
    }

    /// Average of `softmax(A^T s)` over `samples` draws (at least one).
    pub fn proba<R: Rng + ?Sized>(&self, i: usize, samples: usize, rng: &mut R) -> Vec<f64> {
        let v = self.cardinality();
        let samples = samples.max(1);
        let mut latent = vec![0.0; v];
        let mut mixed = vec![0.0; v];
        let mut p = vec![0.0; v];
        let mut acc = vec![0.0; v];
        for _ in 0..samples {
            self.sample_into(i, rng, &mut latent, &mut mixed);
            softmax_into(&mixed, &mut p);
            for j in 0..v {
                acc[j] += p[j];
            }
        }
        acc.iter_mut().for_each(|x| *x /= samples as f64);
        acc
    }
}

/// Fit a concept classifier on its annotated samples.
///
/// `inputs` holds the standardized embeddings of the annotated samples in
/// the order of `training` (`(sample, value)` pairs); they double as the
/// frozen inducing inputs. Latent GPs and `A` are optimized jointly, full
/// batch up to [`BATCH_SIZE`] annotations and in mini-batches beyond.
pub fn fit_concept(
    concept: usize,
    cardinality: usize,
    inputs: DMatrix<f64>,
    training: Vec<(usize, usize)>,
    config: &ConceptFitConfig,
) -> Result<ConceptFit> {
    let mut model = ConceptGp::new(concept, cardinality, inputs, training, config)?;
    let first = model.training[0].1;
    let warning = model
        .training
        .iter()
        .all(|&(_, v)| v == first)
        .then_some(FitWarning::SingleClass { concept, value: first });

    let m = model.training.len();
    let dzz = sq_dists(model.inducing(), model.inducing());
    let (y, s2) = model.targets()?;
    let mask = model.param_mask(config.trainable, config.learn_mixing);
    let mut params = model.pack();
    let mut batch_rng = rng::stream(config.seed, streams::GP_BATCHES, concept as u64, 0);
    let report = maximize(&mut params, &mask, &config.schedule, m, BATCH_SIZE, &mut batch_rng, |p, batch| {
        model.unpack(p);
        let factors = model.factors(&dzz)?;
        for (l, f) in model.latents.iter_mut().zip(&factors) {
            l.absorb_jitter(f);
        }
        Ok(model.objective(&factors, &dzz, &y, &s2, batch))
    })?;
    model.unpack(&params);
    Ok(ConceptFit { model, report, warning })
}
