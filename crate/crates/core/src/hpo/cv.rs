use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::data::{accuracy, derive_seed, rng_from_seed, LabeledDataset, Learner, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Fold index of every row. Each class is shuffled and dealt round-robin,
/// continuing the deal across classes so fold sizes differ by at most one.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::config(format!("cross-validation needs k >= 2, got {k}")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, &l) in labels.iter().enumerate() {
        if l >= NUM_CLASSES {
            return Err(Error::input(format!("label {l} is outside the level set")));
        }
        by_class[l].push(i);
    }
    for (class, rows) in by_class.iter().enumerate() {
        if !rows.is_empty() && rows.len() < k {
            return Err(Error::ClassTooSmall {
                class,
                count: rows.len(),
                required: k,
            });
        }
    }
    let mut rng = rng_from_seed(seed);
    let mut fold = vec![0; labels.len()];
    let mut next = 0;
    for rows in &mut by_class {
        rows.shuffle(&mut rng);
        for &r in rows.iter() {
            fold[r] = next;
            next = (next + 1) % k;
        }
    }
    Ok(fold)
}

/// Unweighted mean of per-fold held-out accuracy.
pub fn kfold_cv<F: Scalar>(d: &LabeledDataset<F>, learner: &dyn Learner<F>, k: usize, seed: u64) -> Result<f64> {
    let folds = stratified_folds(d.labels(), k, seed)?;
    let scores = (0..k)
        .into_par_iter()
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..d.n_rows()).partition(|&i| folds[i] == f);
            let model = learner.fit(&d.subset(&train), derive_seed(seed, f as u64))?;
            Ok(accuracy(&model, &d.subset(&test)))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(scores.iter().sum::<f64>() / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Classifier, FeatureKind, FeatureMeta};

    struct Majority;
    struct MajorityModel(usize);

    impl Classifier<f64> for MajorityModel {
        fn n_features(&self) -> usize {
            1
        }
        fn predict_proba(&self, _: &[f64]) -> [f64; 3] {
            let mut p = [0.0; 3];
            p[self.0] = 1.0;
            p
        }
    }

    impl Learner<f64> for Majority {
        fn fit(&self, d: &LabeledDataset<f64>, _: u64) -> Result<Box<dyn Classifier<f64>>> {
            let c = d.class_counts();
            let best = (0..3).max_by_key(|&i| (c[i], std::cmp::Reverse(i))).unwrap();
            Ok(Box::new(MajorityModel(best)))
        }
    }

    /// Reads the label straight out of the single feature.
    struct Oracle;
    struct OracleModel;

    impl Classifier<f64> for OracleModel {
        fn n_features(&self) -> usize {
            1
        }
        fn predict_proba(&self, r: &[f64]) -> [f64; 3] {
            let mut p = [0.0; 3];
            p[r[0] as usize] = 1.0;
            p
        }
    }

    impl Learner<f64> for Oracle {
        fn fit(&self, _: &LabeledDataset<f64>, _: u64) -> Result<Box<dyn Classifier<f64>>> {
            Ok(Box::new(OracleModel))
        }
    }

    fn dataset(counts: [usize; 3]) -> LabeledDataset<f64> {
        let labels: Vec<usize> = (0..3).flat_map(|c| std::iter::repeat_n(c, counts[c])).collect();
        let rows: Vec<Vec<f64>> = labels.iter().map(|&l| vec![l as f64]).collect();
        LabeledDataset::from_rows(&rows, labels, vec![FeatureMeta::new("y", FeatureKind::Discrete)]).unwrap()
    }

    #[test]
    fn majority_baseline() {
        let d = dataset([60, 30, 10]);
        let acc = kfold_cv(&d, &Majority, 10, 0).unwrap();
        assert!((acc - 0.6).abs() < 1e-12, "{acc}");
    }

    #[test]
    fn oracle_scores_one() {
        let d = dataset([20, 15, 12]);
        assert_eq!(kfold_cv(&d, &Oracle, 10, 4).unwrap(), 1.0);
    }

    #[test]
    fn folds_are_stratified_and_balanced() {
        let d = dataset([47, 31, 12]);
        let folds = stratified_folds(d.labels(), 10, 1).unwrap();
        for f in 0..10 {
            let size = folds.iter().filter(|&&x| x == f).count();
            assert!((9..=10).contains(&size));
            for (c, &n) in [47usize, 31, 12].iter().enumerate() {
                let in_fold = (0..d.n_rows()).filter(|&i| folds[i] == f && d.label(i) == c).count();
                let expect = n as f64 / 10.0;
                assert!((in_fold as f64 - expect).abs() <= 1.0);
            }
        }
        assert_eq!(folds, stratified_folds(d.labels(), 10, 1).unwrap());
    }

    #[test]
    fn small_class_is_named() {
        let d = dataset([30, 30, 5]);
        match stratified_folds(d.labels(), 10, 0) {
            Err(Error::ClassTooSmall { class, count, .. }) => assert_eq!((class, count), (2, 5)),
            other => panic!("{other:?}"),
        }
        assert!(stratified_folds(d.labels(), 1, 0).is_err());
    }
}
