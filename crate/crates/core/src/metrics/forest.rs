//! Regression random forest (CART with variance-reduction splits).

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, streams};

#[derive(Debug, Clone, PartialEq)]
pub struct ForestConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Features tried per split; `None` means all of them.
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { trees: 50, max_depth: 8, min_samples_split: 2, max_features: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(v) => return *v,
                Node::Split { feature, threshold, left, right } => {
                    at = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    fn count_splits(&self, counts: &mut [usize]) {
        for n in &self.nodes {
            if let Node::Split { feature, .. } = n {
                counts[*feature] += 1;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    trees: Vec<Tree>,
    features: usize,
}

struct Builder<'a, R> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    config: &'a ForestConfig,
    max_features: usize,
    rng: R,
    nodes: Vec<Node>,
}

impl<R: Rng> Builder<'_, R> {
    fn build(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let id = self.nodes.len();
        let n = rows.len();
        let mean = rows.iter().map(|&r| self.y[r]).sum::<f64>() / n as f64;
        self.nodes.push(Node::Leaf(mean));
        let sse: f64 = rows.iter().map(|&r| (self.y[r] - mean) * (self.y[r] - mean)).sum();
        if depth >= self.config.max_depth || n < self.config.min_samples_split.max(2) || sse <= 1e-12 {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(rows, sse) else {
            return id;
        };
        // partition in place
        let mut split = 0;
        for i in 0..n {
            if self.x[(rows[i], feature)] <= threshold {
                rows.swap(i, split);
                split += 1;
            }
        }
        let (l, r) = rows.split_at_mut(split);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }

    /// Best variance-reducing split among a random feature subset; when the
    /// subset is constant on these rows the remaining features are tried.
    fn best_split(&mut self, rows: &[usize], sse: f64) -> Option<(usize, f64)> {
        let p = self.x.ncols();
        let mut features: Vec<usize> = (0..p).collect();
        features.shuffle(&mut self.rng);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut tried = 0;
        let mut sorted: Vec<(f64, f64)> = Vec::with_capacity(rows.len());
        for &f in &features {
            if tried >= self.max_features && best.is_some() {
                break;
            }
            sorted.clear();
            sorted.extend(rows.iter().map(|&r| (self.x[(r, f)], self.y[r])));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            if sorted[0].0 == sorted[sorted.len() - 1].0 {
                continue;
            }
            tried += 1;
            let total: f64 = sorted.iter().map(|s| s.1).sum();
            let total_sq: f64 = sorted.iter().map(|s| s.1 * s.1).sum();
            let n = sorted.len() as f64;
            let (mut ls, mut lsq) = (0.0, 0.0);
            for i in 0..sorted.len() - 1 {
                ls += sorted[i].1;
                lsq += sorted[i].1 * sorted[i].1;
                if sorted[i].0 == sorted[i + 1].0 {
                    continue;
                }
                let nl = (i + 1) as f64;
                let nr = n - nl;
                let rs = total - ls;
                let rsq = total_sq - lsq;
                let child = (lsq - ls * ls / nl) + (rsq - rs * rs / nr);
                let gain = sse - child;
                if gain > 1e-12 * sse.max(1.0) && best.is_none_or(|b| gain > b.0) {
                    best = Some((gain, f, 0.5 * (sorted[i].0 + sorted[i + 1].0)));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

impl RandomForest {
    /// Fit on the rows of `x` (`n x p`) with bootstrap resampling per tree.
    pub fn fit(x: &DMatrix<f64>, y: &[f64], config: &ForestConfig) -> Result<Self> {
        let (n, p) = x.shape();
        if n == 0 || p == 0 {
            return Err(Error::EmptyInput);
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: y.len() });
        }
        let max_features = config.max_features.unwrap_or(p).clamp(1, p);
        let mut trees = Vec::with_capacity(config.trees);
        for t in 0..config.trees {
            let mut r = rng::stream(config.seed, streams::FOREST, t as u64, 0);
            let mut rows: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
            let mut b = Builder { x, y, config, max_features, rng: r, nodes: Vec::new() };
            b.build(&mut rows, 0);
            trees.push(Tree { nodes: b.nodes });
        }
        Ok(Self { trees, features: p })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len().max(1) as f64
    }

    /// Split counts per feature across the forest.
    pub fn split_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.features];
        for t in &self.trees {
            t.count_splits(&mut counts);
        }
        counts
    }
}

/// Feature importances as fractions of splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Importance {
    pub values: Vec<f64>,
    /// The forest made no split (constant target); `values` is uniform.
    pub degenerate: bool,
}

/// Importance of each predicted-score column for predicting `truth`.
pub fn rf_importance(scores: &DMatrix<f64>, truth: &[usize], config: &ForestConfig) -> Result<Importance> {
    let y: Vec<f64> = truth.iter().map(|&v| v as f64).collect();
    let forest = RandomForest::fit(scores, &y, config)?;
    let counts = forest.split_counts();
    let total: usize = counts.iter().sum();
    let p = counts.len();
    if total == 0 {
        return Ok(Importance { values: vec![1.0 / p as f64; p], degenerate: true });
    }
    Ok(Importance { values: counts.iter().map(|&c| c as f64 / total as f64).collect(), degenerate: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_target_is_flagged() {
        let x = DMatrix::from_fn(12, 3, |i, j| (i * 3 + j) as f64);
        let imp = rf_importance(&x, &[1; 12], &ForestConfig::default()).unwrap();
        assert!(imp.degenerate);
        assert_eq!(imp.values, vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn forest_fits_step() {
        let x = DMatrix::from_fn(20, 1, |i, _| i as f64);
        let y: Vec<f64> = (0..20).map(|i| if i < 10 { 0.0 } else { 1.0 }).collect();
        let f = RandomForest::fit(&x, &y, &ForestConfig { trees: 5, ..Default::default() }).unwrap();
        assert!(f.predict(&[2.0]) < 0.2 && f.predict(&[17.0]) > 0.8);
    }
}
