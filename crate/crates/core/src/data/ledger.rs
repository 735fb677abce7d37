use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Append-only record of revealed `(sample, concept) -> value` labels.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnnotationLedger {
    entries: BTreeMap<(usize, usize), usize>,
}

impl AnnotationLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record an annotation. Existing entries are never replaced.
    pub fn insert(&mut self, sample: usize, concept: usize, value: usize) -> Result<()> {
        if self.entries.contains_key(&(sample, concept)) {
            return Err(Error::AlreadyAnnotated { sample, concept });
        }
        self.entries.insert((sample, concept), value);
        Ok(())
    }

    pub fn get(&self, sample: usize, concept: usize) -> Option<usize> {
        self.entries.get(&(sample, concept)).copied()
    }

    pub fn contains(&self, sample: usize, concept: usize) -> bool {
        self.entries.contains_key(&(sample, concept))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.entries.iter().map(|(&(s, c), &v)| (s, c, v))
    }

    /// `(sample, value)` pairs for one concept, ordered by sample.
    pub fn for_concept(&self, concept: usize) -> Vec<(usize, usize)> {
        self.entries.iter().filter(|((_, c), _)| *c == concept).map(|(&(s, _), &v)| (s, v)).collect()
    }

    /// Number of annotated concepts for `sample` out of `k`.
    pub fn count_for_sample(&self, sample: usize, k: usize) -> usize {
        self.entries.range((sample, 0)..(sample, k)).count()
    }
}
