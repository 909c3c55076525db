use serde::{Deserialize, Serialize};

use crate::data::{Classifier, LabeledDataset, Learner, ScalerState, ScalingKind, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::scalar::{sq_dist, Scalar};

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    /// Scaling fitted on the training rows and applied to queries.
    #[serde(default)]
    pub scaling: ScalingKind,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig {
            k: DEFAULT_K,
            scaling: ScalingKind::MinMax,
        }
    }
}

/// k-nearest-neighbours over Euclidean distance; equal distances favour the
/// lower training row index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Knn<F> {
    k: usize,
    scaler: ScalerState<F>,
    train: Vec<F>,
    labels: Vec<usize>,
    width: usize,
}

impl<F: Scalar> Knn<F> {
    pub fn fit(d: &LabeledDataset<F>, cfg: &KnnConfig) -> Result<Self> {
        if cfg.k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        if cfg.k > d.n_rows() {
            return Err(Error::config(format!(
                "k = {} exceeds the {} training rows",
                cfg.k,
                d.n_rows()
            )));
        }
        let scaler = ScalerState::fit(d, cfg.scaling);
        let scaled = scaler.apply(d);
        Ok(Knn {
            k: cfg.k,
            scaler,
            train: scaled.features().to_vec(),
            labels: d.labels().to_vec(),
            width: d.n_cols(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

impl<F: Scalar> Classifier<F> for Knn<F> {
    fn n_features(&self) -> usize {
        self.width
    }

    fn predict_proba(&self, row: &[F]) -> [F; NUM_CLASSES] {
        let q = self.scaler.transform(row);
        let mut dist: Vec<(F, usize)> = self
            .train
            .chunks_exact(self.width)
            .enumerate()
            .map(|(i, r)| (sq_dist(&q, r), i))
            .collect();
        let cmp = |a: &(F, usize), b: &(F, usize)| a.0.partial_cmp(&b.0).expect("finite distance").then(a.1.cmp(&b.1));
        if self.k < dist.len() {
            dist.select_nth_unstable_by(self.k - 1, cmp);
        }
        let mut counts = [0usize; NUM_CLASSES];
        for &(_, i) in &dist[..self.k] {
            counts[self.labels[i]] += 1;
        }
        let k = F::of_usize(self.k);
        counts.map(|c| F::of_usize(c) / k)
    }
}

impl<F: Scalar> Learner<F> for KnnConfig {
    fn fit(&self, d: &LabeledDataset<F>, _seed: u64) -> Result<Box<dyn Classifier<F>>> {
        Ok(Box::new(Knn::fit(d, self)?))
    }
}
