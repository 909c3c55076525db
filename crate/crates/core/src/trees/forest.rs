use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{DecisionTree, MaxFeatures, TreeConfig};
use crate::data::{derive_seed, rng_from_seed, Classifier, LabeledDataset, Learner, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_estimators: usize,
    pub tree: TreeConfig,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_estimators: 100,
            tree: TreeConfig {
                max_features: MaxFeatures::Sqrt,
                ..TreeConfig::default()
            },
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_estimators == 0 {
            return Err(Error::config("n_estimators must be at least 1"));
        }
        self.tree.validate()
    }
}

/// Random forest: bootstrap-sampled trees with per-node feature subsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct RandomForest<F> {
    trees: Vec<DecisionTree<F>>,
    n_features: usize,
}

impl<F: Scalar> RandomForest<F> {
    pub fn fit(d: &LabeledDataset<F>, cfg: &ForestConfig, seed: u64) -> Result<Self> {
        Self::fit_with_sampler(d, cfg, seed, |n, rng| (0..n).map(|_| rng.random_range(0..n)).collect())
    }

    pub(crate) fn fit_with_sampler<S>(d: &LabeledDataset<F>, cfg: &ForestConfig, seed: u64, sampler: S) -> Result<Self>
    where
        S: Fn(usize, &mut rand_chacha::ChaCha8Rng) -> Vec<usize> + Sync,
    {
        cfg.validate()?;
        if d.is_empty() {
            return Err(Error::input("cannot fit a forest to zero rows"));
        }
        let trees = (0..cfg.n_estimators)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng_from_seed(derive_seed(seed, i as u64));
                let rows = sampler(d.n_rows(), &mut rng);
                DecisionTree::fit_rows(d, rows, &cfg.tree, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RandomForest {
            trees,
            n_features: d.n_cols(),
        })
    }

    pub fn trees(&self) -> &[DecisionTree<F>] {
        &self.trees
    }

    #[cfg(test)]
    fn from_trees(trees: Vec<DecisionTree<F>>) -> Self {
        let n_features = trees.first().map_or(0, |t| t.n_features());
        RandomForest { trees, n_features }
    }
}

impl<F: Scalar> Classifier<F> for RandomForest<F> {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_proba(&self, row: &[F]) -> [F; NUM_CLASSES] {
        mean_proba(self.trees.iter().map(|t| t.predict_proba(row)), self.trees.len())
    }
}

impl<F: Scalar> Learner<F> for ForestConfig {
    fn fit(&self, d: &LabeledDataset<F>, seed: u64) -> Result<Box<dyn Classifier<F>>> {
        Ok(Box::new(RandomForest::fit(d, self, seed)?))
    }
}

pub(crate) fn mean_proba<F: Scalar>(probas: impl Iterator<Item = [F; NUM_CLASSES]>, n: usize) -> [F; NUM_CLASSES] {
    let mut acc = [F::zero(); NUM_CLASSES];
    for p in probas {
        for (a, v) in acc.iter_mut().zip(p) {
            *a = *a + v;
        }
    }
    let n = F::of_usize(n.max(1));
    acc.map(|a| a / n)
}
