//! Embedding datasets with partial concept annotations.

mod ledger;
mod standardize;
mod synth;

use alloc::collections::BTreeMap;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub use ledger::AnnotationLedger;
pub use standardize::{Standardizer, STD_FLOOR};
pub use synth::{synth_generate, LabelRule, SynthConfig, SyntheticData};

/// One categorical concept. Binary concepts have cardinality 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Concept {
    pub name: String,
    pub cardinality: usize,
    /// Display names for the values; defaults to `"0"`, `"1"`, ...
    pub value_names: Vec<String>,
}

impl Concept {
    pub fn new(name: impl Into<String>, cardinality: usize) -> Self {
        Self {
            name: name.into(),
            cardinality,
            value_names: (0..cardinality).map(|v| format!("{v}")).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptSchema {
    concepts: Vec<Concept>,
    offsets: Vec<usize>,
}

impl ConceptSchema {
    pub fn new(concepts: Vec<Concept>) -> Result<Self> {
        if concepts.is_empty() {
            return Err(Error::InvalidSchema("at least one concept is required".into()));
        }
        let mut names = BTreeSet::new();
        for c in &concepts {
            if c.cardinality < 2 {
                return Err(Error::InvalidSchema(format!(
                    "concept '{}' has cardinality {}; at least 2 is required",
                    c.name, c.cardinality
                )));
            }
            if c.value_names.len() != c.cardinality {
                return Err(Error::InvalidSchema(format!(
                    "concept '{}' lists {} value names for cardinality {}",
                    c.name,
                    c.value_names.len(),
                    c.cardinality
                )));
            }
            if !names.insert(c.name.as_str()) {
                return Err(Error::InvalidSchema(format!("duplicate concept name '{}'", c.name)));
            }
        }
        let mut offsets = Vec::with_capacity(concepts.len());
        let mut acc = 0;
        for c in &concepts {
            offsets.push(acc);
            acc += c.cardinality;
        }
        Ok(Self { concepts, offsets })
    }

    pub fn from_cardinalities(cardinalities: &[usize]) -> Result<Self> {
        Self::new(
            cardinalities
                .iter()
                .enumerate()
                .map(|(i, &c)| Concept::new(format!("concept_{i}"), c))
                .collect(),
        )
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn concept(&self, i: usize) -> &Concept {
        &self.concepts[i]
    }

    /// Number of concepts `k`.
    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn cardinality(&self, i: usize) -> usize {
        self.concepts[i].cardinality
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.concepts.iter().map(|c| c.cardinality).collect()
    }

    /// Total activation width `v`.
    pub fn width(&self) -> usize {
        self.concepts.iter().map(|c| c.cardinality).sum()
    }

    /// Position of concept `i`'s first activation in the stacked vector.
    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    /// `(concept, value)` for a stacked activation index.
    pub fn activation(&self, j: usize) -> (usize, usize) {
        let i = self.offsets.partition_point(|&o| o <= j) - 1;
        (i, j - self.offsets[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "train" => Some(Split::Train),
            "val" | "valid" | "validation" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Immutable embedding dataset.
///
/// `annotations` holds whatever concept labels are *known* (ground truth
/// for simulated annotation, or test-split labels for evaluation); the
/// labels revealed to a model during an experiment live in an
/// [`AnnotationLedger`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    n: usize,
    d: usize,
    embeddings: Vec<f32>,
    task_labels: Vec<usize>,
    num_labels: usize,
    schema: ConceptSchema,
    annotations: BTreeMap<(usize, usize), usize>,
    splits: Vec<Split>,
    image_refs: Vec<Option<String>>,
}

/// Unvalidated parts of an [`EmbeddingDataset`].
#[derive(Debug, Clone, Default)]
pub struct DatasetParts {
    pub n: usize,
    pub d: usize,
    /// Row-major `n x d`.
    pub embeddings: Vec<f32>,
    pub task_labels: Vec<usize>,
    /// Number of task labels; `None` infers `max label + 1`.
    pub num_labels: Option<usize>,
    pub annotations: Vec<(usize, usize, usize)>,
    pub splits: Vec<Split>,
    pub image_refs: Option<Vec<Option<String>>>,
}

impl EmbeddingDataset {
    pub fn new(schema: ConceptSchema, parts: DatasetParts) -> Result<Self> {
        let DatasetParts { n, d, embeddings, task_labels, num_labels, annotations, splits, image_refs } = parts;
        if n == 0 || d == 0 {
            return Err(Error::InvalidConfig(format!("dataset must have n >= 1 and d >= 1 (n={n}, d={d})")));
        }
        if embeddings.len() != n * d {
            return Err(Error::DimensionMismatch { expected: n * d, actual: embeddings.len() });
        }
        if let Some(i) = embeddings.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidRecord { index: i / d, message: "non-finite embedding value".into() });
        }
        if task_labels.len() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: task_labels.len() });
        }
        if splits.len() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: splits.len() });
        }
        let inferred = task_labels.iter().copied().max().map_or(1, |m| m + 1);
        let num_labels = num_labels.unwrap_or(inferred);
        if let Some(i) = task_labels.iter().position(|&y| y >= num_labels) {
            return Err(Error::InvalidRecord {
                index: i,
                message: format!("task label {} >= number of labels {num_labels}", task_labels[i]),
            });
        }
        let mut map = BTreeMap::new();
        for (index, &(sample, concept, value)) in annotations.iter().enumerate() {
            if sample >= n {
                return Err(Error::InvalidRecord { index, message: format!("sample {sample} does not exist (n={n})") });
            }
            if concept >= schema.len() {
                return Err(Error::InvalidRecord {
                    index,
                    message: format!("concept {concept} does not exist (k={})", schema.len()),
                });
            }
            let cardinality = schema.cardinality(concept);
            if value >= cardinality {
                return Err(Error::ValueOutOfRange { sample, concept, value, cardinality });
            }
            if map.insert((sample, concept), value).is_some_and(|old| old != value) {
                return Err(Error::InvalidRecord { index, message: "conflicting duplicate annotation".into() });
            }
        }
        let image_refs = match image_refs {
            Some(refs) if refs.len() != n => {
                return Err(Error::DimensionMismatch { expected: n, actual: refs.len() });
            }
            Some(refs) => refs,
            None => alloc::vec![None; n],
        };
        Ok(Self { n, d, embeddings, task_labels, num_labels, schema, annotations: map, splits, image_refs })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn schema(&self) -> &ConceptSchema {
        &self.schema
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn embeddings(&self) -> &[f32] {
        &self.embeddings
    }

    pub fn embedding(&self, i: usize) -> &[f32] {
        &self.embeddings[i * self.d..(i + 1) * self.d]
    }

    pub fn task_labels(&self) -> &[usize] {
        &self.task_labels
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn image_ref(&self, i: usize) -> Option<&str> {
        self.image_refs[i].as_deref()
    }

    pub fn image_refs(&self) -> &[Option<String>] {
        &self.image_refs
    }

    pub fn has_image_refs(&self) -> bool {
        self.image_refs.iter().any(Option::is_some)
    }

    pub fn annotation(&self, sample: usize, concept: usize) -> Option<usize> {
        self.annotations.get(&(sample, concept)).copied()
    }

    /// All known annotations as `(sample, concept, value)`, ordered.
    pub fn annotations(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.annotations.iter().map(|(&(s, c), &v)| (s, c, v))
    }

    pub fn num_annotations(&self) -> usize {
        self.annotations.len()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.n).filter(|&i| self.splits[i] == split).collect()
    }

    /// Every concept of every listed sample is annotated.
    pub fn fully_annotated(&self, samples: &[usize]) -> bool {
        samples.iter().all(|&s| (0..self.schema.len()).all(|c| self.annotations.contains_key(&(s, c))))
    }

    /// Ground-truth concept values for `samples`, failing on the first gap.
    pub fn concept_matrix(&self, samples: &[usize]) -> Result<Vec<Vec<usize>>> {
        samples
            .iter()
            .map(|&s| {
                (0..self.schema.len())
                    .map(|c| {
                        self.annotation(s, c).ok_or_else(|| Error::InvalidRecord {
                            index: s,
                            message: format!("missing ground-truth annotation for concept {c}"),
                        })
                    })
                    .collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn tiny() -> DatasetParts {
        DatasetParts {
            n: 4,
            d: 3,
            embeddings: (0..12).map(|v| v as f32).collect(),
            task_labels: vec![0, 1, 0, 1],
            num_labels: None,
            annotations: (0..4).map(|s| (s, 0, s % 2)).collect(),
            splits: vec![Split::Train, Split::Train, Split::Val, Split::Test],
            image_refs: None,
        }
    }

    #[test]
    fn minimal_dataset() {
        let schema = ConceptSchema::from_cardinalities(&[2]).unwrap();
        let ds = EmbeddingDataset::new(schema, tiny()).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.schema().width(), 2);
        assert_eq!(ds.num_labels(), 2);
        assert_eq!(ds.embedding(1), &[3.0, 4.0, 5.0]);
        assert!(ds.fully_annotated(&[0, 1, 2, 3]));
    }

    #[test]
    fn schema_invariants() {
        assert!(ConceptSchema::from_cardinalities(&[2, 1]).is_err());
        assert!(ConceptSchema::new(vec![Concept::new("a", 2), Concept::new("a", 3)]).is_err());
        let s = ConceptSchema::from_cardinalities(&[2, 3, 2]).unwrap();
        assert_eq!(s.width(), 7);
        assert_eq!(s.activation(0), (0, 0));
        assert_eq!(s.activation(2), (1, 0));
        assert_eq!(s.activation(4), (1, 2));
        assert_eq!(s.activation(6), (2, 1));
    }

    #[test]
    fn rejects_bad_records() {
        let schema = ConceptSchema::from_cardinalities(&[2]).unwrap();
        let mut p = tiny();
        p.embeddings.pop();
        assert!(matches!(
            EmbeddingDataset::new(schema.clone(), p),
            Err(Error::DimensionMismatch { expected: 12, actual: 11 })
        ));
        let mut p = tiny();
        p.annotations.push((2, 0, 5));
        assert!(matches!(
            EmbeddingDataset::new(schema.clone(), p),
            Err(Error::ValueOutOfRange { sample: 2, value: 5, .. })
        ));
        let mut p = tiny();
        p.annotations.push((9, 0, 1));
        assert!(matches!(EmbeddingDataset::new(schema.clone(), p), Err(Error::InvalidRecord { index: 4, .. })));
        let mut p = tiny();
        p.annotations.push((0, 3, 0));
        assert!(EmbeddingDataset::new(schema, p).is_err());
    }
}
