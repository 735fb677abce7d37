//! The stacked concept layer: one [`ConceptGp`] per concept of a schema.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::concept::{ConceptGp, ConceptMoments};
use crate::error::{Error, Result};

/// Concept classifiers for a whole schema, in schema order. A concept
/// without annotations has no classifier yet.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptBank {
    cardinalities: Vec<usize>,
    concepts: Vec<Option<ConceptGp>>,
}

impl ConceptBank {
    pub fn empty(cardinalities: Vec<usize>) -> Self {
        let k = cardinalities.len();
        Self { cardinalities, concepts: vec![None; k] }
    }

    pub fn insert(&mut self, gp: ConceptGp) -> Result<()> {
        let i = gp.concept_index();
        if i >= self.cardinalities.len() {
            return Err(Error::InvalidRecord { index: i, message: "concept index outside the schema".into() });
        }
        if gp.cardinality() != self.cardinalities[i] {
            return Err(Error::DimensionMismatch { expected: self.cardinalities[i], actual: gp.cardinality() });
        }
        self.concepts[i] = Some(gp);
        Ok(())
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn len(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cardinalities.is_empty()
    }

    /// Total activation width `v`.
    pub fn width(&self) -> usize {
        self.cardinalities.iter().sum()
    }

    pub fn get(&self, concept: usize) -> Option<&ConceptGp> {
        self.concepts.get(concept).and_then(Option::as_ref)
    }

    pub fn concepts(&self) -> &[Option<ConceptGp>] {
        &self.concepts
    }

    pub fn is_complete(&self) -> bool {
        self.concepts.iter().all(Option::is_some)
    }

    /// Predictive moments of every concept at the rows of `queries`.
    pub fn moments(&self, queries: &DMatrix<f64>) -> Result<StackedMoments> {
        let per_concept = self
            .concepts
            .iter()
            .enumerate()
            .map(|(i, c)| c.as_ref().ok_or(Error::Unfitted { concept: i })?.moments(queries))
            .collect::<Result<Vec<_>>>()?;
        Ok(StackedMoments::new(per_concept))
    }
}

/// Per-concept predictive moments for one set of queries.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedMoments {
    concepts: Vec<ConceptMoments>,
    offsets: Vec<usize>,
    width: usize,
}

impl StackedMoments {
    pub fn new(concepts: Vec<ConceptMoments>) -> Self {
        let mut offsets = Vec::with_capacity(concepts.len());
        let mut width = 0;
        for c in &concepts {
            offsets.push(width);
            width += c.cardinality();
        }
        Self { concepts, offsets, width }
    }

    /// Number of queries.
    pub fn len(&self) -> usize {
        self.concepts.first().map_or(0, ConceptMoments::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn concept(&self, i: usize) -> &ConceptMoments {
        &self.concepts[i]
    }

    pub fn concepts(&self) -> &[ConceptMoments] {
        &self.concepts
    }

    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    /// Rows `rows` of every concept, in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let concepts = self
            .concepts
            .iter()
            .map(|c| ConceptMoments {
                mixing: c.mixing.clone(),
                means: DMatrix::from_fn(rows.len(), c.cardinality(), |r, j| c.means[(rows[r], j)]),
                vars: DMatrix::from_fn(rows.len(), c.cardinality(), |r, j| c.vars[(rows[r], j)]),
            })
            .collect();
        Self::new(concepts)
    }

    /// Concatenated mean logits `A_i^T mu_i` of query `q`.
    pub fn mean_logits(&self, q: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width);
        for c in &self.concepts {
            out.extend(c.mean_logits(q));
        }
        out
    }

    /// One joint draw of the stacked scores for query `q`; concepts are
    /// sampled independently, in schema order.
    pub fn sample_into<R: Rng + ?Sized>(&self, q: usize, rng: &mut R, out: &mut [f64]) {
        let max_v = self.concepts.iter().map(ConceptMoments::cardinality).max().unwrap_or(0);
        let mut latent = vec![0.0; max_v];
        for (c, &o) in self.concepts.iter().zip(&self.offsets) {
            let v = c.cardinality();
            c.sample_into(q, rng, &mut latent[..v], &mut out[o..o + v]);
        }
    }

    /// A reusable sampler that draws the same sequence as
    /// [`sample_into`](Self::sample_into) from precomputed per-query
    /// offsets `A^T mu` and factors `A^T diag(sd)`.
    pub fn sampler(&self) -> Sampler {
        let block: usize = self.concepts.iter().map(|c| c.cardinality() * (c.cardinality() + 1)).sum();
        let mut data = Vec::with_capacity(self.len() * block);
        for q in 0..self.len() {
            for c in &self.concepts {
                let v = c.cardinality();
                for j in 0..v {
                    data.push((0..v).map(|l| c.mixing[(l, j)] * c.means[(q, l)]).sum());
                }
                for j in 0..v {
                    for l in 0..v {
                        data.push(c.mixing[(l, j)] * libm::sqrt(c.vars[(q, l)]));
                    }
                }
            }
        }
        let cards = self.concepts.iter().map(ConceptMoments::cardinality).collect();
        let max_v = self.concepts.iter().map(ConceptMoments::cardinality).max().unwrap_or(0);
        Sampler { cards, block, data, eps: vec![0.0; max_v] }
    }

    /// `samples x v` matrix of joint draws for query `q`.
    pub fn sample_stacked<R: Rng + ?Sized>(&self, q: usize, samples: usize, rng: &mut R) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(samples, self.width);
        let mut row = vec![0.0; self.width];
        for s in 0..samples {
            self.sample_into(q, rng, &mut row);
            for j in 0..self.width {
                out[(s, j)] = row[j];
            }
        }
        out
    }
}

pub struct Sampler {
    cards: Vec<usize>,
    block: usize,
    data: Vec<f64>,
    eps: Vec<f64>,
}

impl Sampler {
    pub fn width(&self) -> usize {
        self.cards.iter().sum()
    }

    pub fn sample_into<R: Rng + ?Sized>(&mut self, q: usize, rng: &mut R, out: &mut [f64]) {
        let mut at = q * self.block;
        let mut o = 0;
        for &v in &self.cards {
            let eps = &mut self.eps[..v];
            for e in eps.iter_mut() {
                *e = rng.sample(StandardNormal);
            }
            let (offset, rest) = self.data[at..at + v * (v + 1)].split_at(v);
            for ((out_j, &m), f) in out[o..o + v].iter_mut().zip(offset).zip(rest.chunks_exact(v)) {
                *out_j = m + f.iter().zip(eps.iter()).map(|(a, b)| a * b).sum::<f64>();
            }
            at += v * (v + 1);
            o += v;
        }
    }
}
