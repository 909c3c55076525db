use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forest::{mean_proba, ForestConfig, RandomForest};
use super::knn::{Knn, KnnConfig};
use super::tree::{DecisionTree, TreeConfig};
use crate::data::{derive_seed, rng_from_seed, Classifier, LabeledDataset, Learner, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Trees inside a bagged forest when the base spec gives no count.
pub const DEFAULT_BASE_FOREST_TREES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BaseEstimator {
    Knn(KnnConfig),
    Tree(TreeConfig),
    Forest(ForestConfig),
}

impl BaseEstimator {
    pub fn knn(k: usize) -> Self {
        BaseEstimator::Knn(KnnConfig {
            k,
            ..KnnConfig::default()
        })
    }

    pub fn forest() -> Self {
        BaseEstimator::Forest(ForestConfig {
            n_estimators: DEFAULT_BASE_FOREST_TREES,
            ..ForestConfig::default()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaggingConfig {
    pub base: BaseEstimator,
    pub n_estimators: usize,
    /// Fraction of columns given to each estimator.
    pub max_features: f64,
    /// Fraction of rows given to each estimator.
    pub max_samples: f64,
    pub bootstrap: bool,
    pub bootstrap_features: bool,
}

impl Default for BaggingConfig {
    fn default() -> Self {
        BaggingConfig {
            base: BaseEstimator::Tree(TreeConfig::default()),
            n_estimators: 10,
            max_features: 1.0,
            max_samples: 1.0,
            bootstrap: true,
            bootstrap_features: false,
        }
    }
}

impl BaggingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_estimators == 0 {
            return Err(Error::config("n_estimators must be at least 1"));
        }
        for (name, f) in [("max_features", self.max_features), ("max_samples", self.max_samples)] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::config(format!("{name} must be in (0,1], got {f}")));
            }
        }
        match &self.base {
            BaseEstimator::Knn(k) if k.k == 0 => Err(Error::config("k must be at least 1")),
            BaseEstimator::Tree(t) => t.validate(),
            BaseEstimator::Forest(f) => f.validate(),
            BaseEstimator::Knn(_) => Ok(()),
        }
    }

    /// Rows and columns drawn per estimator for a dataset of the given shape.
    pub fn resolved_sizes(&self, rows: usize, cols: usize) -> (usize, usize) {
        let n = ((self.max_samples * rows as f64).floor() as usize).max(1);
        let m = ((self.max_features * cols as f64).floor() as usize).max(1);
        (n, m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar", rename_all = "snake_case", tag = "kind", content = "model")]
pub enum BaseModel<F> {
    Knn(Knn<F>),
    Tree(DecisionTree<F>),
    Forest(RandomForest<F>),
}

impl<F: Scalar> BaseModel<F> {
    fn proba(&self, row: &[F]) -> [F; NUM_CLASSES] {
        match self {
            BaseModel::Knn(m) => m.predict_proba(row),
            BaseModel::Tree(m) => m.predict_proba(row),
            BaseModel::Forest(m) => m.predict_proba(row),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct BaggedMember<F> {
    pub columns: Vec<usize>,
    pub model: BaseModel<F>,
}

/// Bootstrap-aggregated ensemble; each member sees its own row sample and
/// column subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Bagging<F> {
    members: Vec<BaggedMember<F>>,
    n_features: usize,
}

fn draw(rng: &mut impl Rng, population: usize, size: usize, replace: bool) -> Vec<usize> {
    if replace {
        (0..size).map(|_| rng.random_range(0..population)).collect()
    } else {
        let mut v = sample(rng, population, size.min(population)).into_vec();
        v.sort_unstable();
        v
    }
}

impl<F: Scalar> Bagging<F> {
    pub fn fit(d: &LabeledDataset<F>, cfg: &BaggingConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if d.is_empty() {
            return Err(Error::input("cannot fit bagging to zero rows"));
        }
        let (n_rows, n_cols) = cfg.resolved_sizes(d.n_rows(), d.n_cols());
        if let BaseEstimator::Knn(k) = &cfg.base {
            if k.k > n_rows {
                return Err(Error::config(format!(
                    "k = {} exceeds the {n_rows} rows sampled per estimator",
                    k.k
                )));
            }
        }
        let members = (0..cfg.n_estimators)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng_from_seed(derive_seed(seed, i as u64));
                let rows = draw(&mut rng, d.n_rows(), n_rows, cfg.bootstrap);
                let columns = draw(&mut rng, d.n_cols(), n_cols, cfg.bootstrap_features);
                let sub = d.subset(&rows).select_columns(&columns);
                let base_seed: u64 = rng.random();
                let model = match &cfg.base {
                    BaseEstimator::Knn(k) => BaseModel::Knn(Knn::fit(&sub, k)?),
                    BaseEstimator::Tree(t) => BaseModel::Tree(DecisionTree::fit(&sub, t, base_seed)?),
                    BaseEstimator::Forest(f) => BaseModel::Forest(RandomForest::fit(&sub, f, base_seed)?),
                };
                Ok(BaggedMember { columns, model })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Bagging {
            members,
            n_features: d.n_cols(),
        })
    }

    pub fn members(&self) -> &[BaggedMember<F>] {
        &self.members
    }

    #[cfg(test)]
    pub(crate) fn from_members(members: Vec<BaggedMember<F>>, n_features: usize) -> Self {
        Bagging { members, n_features }
    }
}

impl<F: Scalar> Classifier<F> for Bagging<F> {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_proba(&self, row: &[F]) -> [F; NUM_CLASSES] {
        let mut sub = Vec::with_capacity(self.n_features);
        let probas = self.members.iter().map(|m| {
            sub.clear();
            sub.extend(m.columns.iter().map(|&c| row[c]));
            m.model.proba(&sub)
        });
        mean_proba(probas, self.members.len())
    }
}

impl<F: Scalar> Learner<F> for BaggingConfig {
    fn fit(&self, d: &LabeledDataset<F>, seed: u64) -> Result<Box<dyn Classifier<F>>> {
        Ok(Box::new(Bagging::fit(d, self, seed)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::accuracy;
    use crate::fixtures::blobs_split;

    fn identity_cfg() -> BaggingConfig {
        BaggingConfig {
            base: BaseEstimator::Tree(TreeConfig::default()),
            n_estimators: 1,
            max_features: 1.0,
            max_samples: 1.0,
            bootstrap: false,
            bootstrap_features: false,
        }
    }

    #[test]
    fn identity_ensemble_equals_tree() {
        let (train, test) = blobs_split::<f64>(150, 4);
        let bag = Bagging::fit(&train, &identity_cfg(), 5).unwrap();
        let tree = DecisionTree::fit(&train, &TreeConfig::default(), 99).unwrap();
        assert_eq!(bag.members()[0].columns, (0..8).collect::<Vec<_>>());
        for r in test.rows().chain(train.rows()) {
            assert_eq!(bag.predict_proba(r), tree.predict_proba(r));
        }
    }

    #[test]
    fn production_config_trains() {
        let (train, test) = blobs_split::<f64>(300, 6);
        let cfg = BaggingConfig {
            base: BaseEstimator::knn(5),
            n_estimators: 70,
            max_features: 0.513365,
            max_samples: 0.9265818,
            bootstrap: true,
            bootstrap_features: false,
        };
        let bag = Bagging::fit(&train, &cfg, 1).unwrap();
        assert_eq!(bag.members().len(), 70);
        assert!(bag.members().iter().all(|m| m.columns.len() == 4));
        assert!(accuracy(&bag, &test) >= 0.95);
    }

    #[test]
    fn forest_base_and_blobs_accuracy() {
        let (train, test) = blobs_split::<f64>(300, 8);
        let cfg = BaggingConfig {
            base: BaseEstimator::forest(),
            n_estimators: 20,
            max_features: 0.307943,
            max_samples: 0.210654,
            bootstrap: false,
            bootstrap_features: false,
        };
        let bag = Bagging::fit(&train, &cfg, 2).unwrap();
        assert!(accuracy(&bag, &test) >= 0.95);
        let tree_bag = Bagging::fit(&train, &BaggingConfig::default(), 2).unwrap();
        assert!(accuracy(&tree_bag, &test) >= 0.95);
    }

    #[test]
    fn knn_larger_than_sample_is_rejected() {
        let (train, _) = blobs_split::<f64>(12, 0);
        let cfg = BaggingConfig {
            base: BaseEstimator::knn(8),
            max_samples: 0.5,
            ..Default::default()
        };
        assert!(Bagging::fit(&train, &cfg, 0).is_err());
    }

    #[test]
    fn order_invariant_and_deterministic() {
        let (train, test) = blobs_split::<f64>(90, 3);
        let cfg = BaggingConfig {
            max_features: 0.5,
            ..Default::default()
        };
        let a = Bagging::fit(&train, &cfg, 4).unwrap();
        assert_eq!(a, Bagging::fit(&train, &cfg, 4).unwrap());
        let mut members = a.members().to_vec();
        members.reverse();
        let r = Bagging::from_members(members, 8);
        for row in test.rows() {
            let (p, q) = (a.predict_proba(row), r.predict_proba(row));
            for k in 0..NUM_CLASSES {
                assert!((p[k] - q[k]).abs() < 1e-12);
            }
        }
    }
}
