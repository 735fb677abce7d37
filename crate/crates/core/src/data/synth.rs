//! Seeded synthetic embedding datasets.
//!
//! Each combination of concept values gets a Gaussian cluster center in
//! `R^d`, drawn once from a stream keyed by the combination; samples are
//! scattered around their center with isotropic spread `sigma_c`. A
//! concept with spread multiplier `s > 1` additionally scatters its samples
//! along the directions towards the centers that differ from theirs only in
//! that concept, so the concept's own boundary is blurred to an effective
//! spread of `s * sigma_c` while the other concepts are left intact.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{Concept, ConceptSchema, DatasetParts, EmbeddingDataset, Split};
use crate::error::{Error, Result};
use crate::rng::{self, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelRule {
    /// `argmax_l sum_j onehot(c)_j W_jl` for seeded Gaussian weights `W`
    /// (`v x num_labels`); ties go to the lowest label.
    Linear,
    /// The label is the value of one concept (`num_labels` = its cardinality).
    CopyConcept(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub cardinalities: Vec<usize>,
    pub dim: usize,
    pub n: usize,
    pub sigma_c: f64,
    /// Per-concept spread multipliers; empty means all 1.
    pub spread: Vec<f64>,
    pub num_labels: usize,
    pub label_rule: LabelRule,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            cardinalities: vec![2, 2, 2, 3, 3],
            dim: 16,
            n: 5000,
            sigma_c: 0.3,
            spread: Vec::new(),
            num_labels: 4,
            label_rule: LabelRule::Linear,
            train_fraction: 0.6,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let k = self.cardinalities.len();
        let bad = |m: alloc::string::String| Err(Error::InvalidConfig(m));
        if self.n < 1 {
            return bad(format!("n must be at least 1 (got {})", self.n));
        }
        if k == 0 {
            return bad("at least one concept is required".into());
        }
        if self.dim < k {
            return bad(format!("d = {} must be at least k = {k}", self.dim));
        }
        if !(self.sigma_c >= 0.0) || !self.sigma_c.is_finite() {
            return bad(format!("sigma_c must be finite and non-negative (got {})", self.sigma_c));
        }
        if !self.spread.is_empty() && self.spread.len() != k {
            return bad(format!("spread has {} entries for {k} concepts", self.spread.len()));
        }
        if self.spread.iter().any(|s| !(*s >= 1.0) || !s.is_finite()) {
            return bad("spread multipliers must be finite and >= 1".into());
        }
        if !(self.train_fraction >= 0.0 && self.val_fraction >= 0.0 && self.train_fraction + self.val_fraction <= 1.0) {
            return bad("split fractions must be non-negative and sum to at most 1".into());
        }
        match self.label_rule {
            LabelRule::Linear if self.num_labels < 2 => bad("need at least 2 task labels".into()),
            LabelRule::CopyConcept(i) if i >= k => bad(format!("label rule copies missing concept {i}")),
            _ => Ok(()),
        }
    }

    fn spread_of(&self, concept: usize) -> f64 {
        self.spread.get(concept).copied().unwrap_or(1.0)
    }
}

/// A generated dataset plus the generator's label rule.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: EmbeddingDataset,
    /// Rule weights `v x num_labels` for [`LabelRule::Linear`].
    pub rule_weights: Option<DMatrix<f64>>,
}

fn combination_key(values: &[usize], cardinalities: &[usize]) -> u64 {
    values
        .iter()
        .zip(cardinalities)
        .fold(0u64, |acc, (&v, &c)| acc.wrapping_mul(c as u64).wrapping_add(v as u64))
}

fn center(seed: u64, values: &[usize], cardinalities: &[usize], d: usize) -> Vec<f64> {
    let mut r = rng::stream(seed, "synth-center", combination_key(values, cardinalities), values.len() as u64);
    (0..d).map(|_| r.sample(StandardNormal)).collect()
}

pub fn synth_generate(config: &SynthConfig) -> Result<SyntheticData> {
    config.validate()?;
    let cards = &config.cardinalities;
    let k = cards.len();
    let d = config.dim;
    let n = config.n;
    let schema = ConceptSchema::new(
        cards
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let mut concept = Concept::new(format!("concept_{i}"), c);
                concept.value_names = (0..c).map(|v| format!("c{i}_v{v}")).collect();
                concept
            })
            .collect(),
    )?;
    let v = schema.width();

    let mut rule_rng = rng::stream(config.seed, streams::SYNTH, 1, 0);
    let (num_labels, rule_weights) = match config.label_rule {
        LabelRule::Linear => {
            let w = DMatrix::from_fn(v, config.num_labels, |_, _| rule_rng.sample::<f64, _>(StandardNormal));
            (config.num_labels, Some(w))
        }
        LabelRule::CopyConcept(i) => (cards[i], None),
    };

    let mut r = rng::stream(config.seed, streams::SYNTH, 0, 0);
    let mut embeddings = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut annotations = Vec::with_capacity(n * k);
    for s in 0..n {
        let values: Vec<usize> = cards.iter().map(|&c| r.random_range(0..c)).collect();
        let c0 = center(config.seed, &values, cards, d);
        let mut z: Vec<f64> = c0.iter().map(|&m| m + config.sigma_c * r.sample::<f64, _>(StandardNormal)).collect();
        for (i, &vi) in values.iter().enumerate() {
            let extra = config.sigma_c * libm::sqrt(config.spread_of(i) * config.spread_of(i) - 1.0);
            if extra == 0.0 {
                continue;
            }
            for alt in (0..cards[i]).filter(|&a| a != vi) {
                let mut other = values.clone();
                other[i] = alt;
                let c1 = center(config.seed, &other, cards, d);
                let dir: Vec<f64> = c1.iter().zip(&c0).map(|(a, b)| a - b).collect();
                let norm = libm::sqrt(dir.iter().map(|x| x * x).sum::<f64>());
                if norm == 0.0 {
                    continue;
                }
                let xi: f64 = r.sample(StandardNormal);
                for t in 0..d {
                    z[t] += extra * xi * dir[t] / norm;
                }
            }
        }
        embeddings.extend(z.iter().map(|&x| x as f32));
        let label = match (&rule_weights, config.label_rule) {
            (Some(w), _) => {
                let mut best = (0usize, f64::NEG_INFINITY);
                for l in 0..num_labels {
                    let score: f64 = values.iter().enumerate().map(|(i, &vi)| w[(schema.offset(i) + vi, l)]).sum();
                    if score > best.1 {
                        best = (l, score);
                    }
                }
                best.0
            }
            (None, LabelRule::CopyConcept(i)) => values[i],
            (None, LabelRule::Linear) => unreachable!("linear rule always has weights"),
        };
        labels.push(label);
        for (i, &vi) in values.iter().enumerate() {
            annotations.push((s, i, vi));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(config.seed, streams::SYNTH, 2, 0));
    let n_train = libm::round(config.train_fraction * n as f64) as usize;
    let n_val = (libm::round(config.val_fraction * n as f64) as usize).min(n - n_train);
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }

    let dataset = EmbeddingDataset::new(
        schema,
        DatasetParts {
            n,
            d,
            embeddings,
            task_labels: labels,
            num_labels: Some(num_labels),
            annotations,
            splits,
            image_refs: None,
        },
    )?;
    Ok(SyntheticData { dataset, rule_weights })
}
