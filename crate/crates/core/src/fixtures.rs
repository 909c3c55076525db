//! Small synthetic datasets used by tests and the `--fixture` CLI flag.

use rand_distr::{Distribution, Normal};

use crate::data::{rng_from_seed, FeatureKind, FeatureMeta, LabeledDataset};
use crate::scalar::Scalar;

/// Width of [`blobs`]; the last column is a constant dummy.
pub const BLOBS_WIDTH: usize = 8;

/// Three well-separated Gaussian classes in seven dimensions plus a constant
/// eighth column. Labels cycle 0, 1, 2 so every class gets `n / 3` rows.
pub fn blobs<F: Scalar>(n: usize, seed: u64) -> LabeledDataset<F> {
    let mut rng = rng_from_seed(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut features = Vec::with_capacity(n * BLOBS_WIDTH);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 3;
        for j in 0..BLOBS_WIDTH - 1 {
            let centre = 4.0 * ((class + j) % 3) as f64;
            features.push(F::of(centre + noise.sample(&mut rng)));
        }
        features.push(F::one());
        labels.push(class);
    }
    let meta = (0..BLOBS_WIDTH)
        .map(|j| FeatureMeta::new(format!("x{j}"), FeatureKind::Continuous))
        .collect();
    LabeledDataset::new(features, labels, meta).expect("well-formed fixture")
}

/// [`blobs`] split 3:1; every fourth row goes to the test part.
pub fn blobs_split<F: Scalar>(n: usize, seed: u64) -> (LabeledDataset<F>, LabeledDataset<F>) {
    let d = blobs(n, seed);
    let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|i| i % 4 == 3);
    (d.subset(&train), d.subset(&test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_balance() {
        let d = blobs::<f64>(99, 1);
        assert_eq!(d.n_cols(), BLOBS_WIDTH);
        assert_eq!(d.class_counts(), [33, 33, 33]);
        assert!(d.column(7).iter().all(|&v| v == 1.0));
        let (tr, te) = blobs_split::<f32>(100, 1);
        assert_eq!((tr.n_rows(), te.n_rows()), (75, 25));
    }
}
