//! Interventional Shapley attributions of class probabilities.

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{derive_seed, rng_from_seed, Classifier, DemandLevel, FeatureMeta, LabeledDataset, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest feature count handled by exact enumeration.
pub const MAX_EXACT_FEATURES: usize = 16;
pub const DEFAULT_BACKGROUND: usize = 100;

/// Attributions indexed by (instance, feature, class).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct ShapMatrix<F> {
    pub n_instances: usize,
    pub feature_meta: Vec<FeatureMeta>,
    pub values: Vec<F>,
    /// Standard errors, present for sampled estimates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_errors: Option<Vec<F>>,
    /// Mean prediction over the background.
    pub base_values: [F; NUM_CLASSES],
    pub background_size: usize,
    /// Feature values of the explained instances, row-major.
    pub instances: Vec<F>,
}

impl<F: Scalar> ShapMatrix<F> {
    pub fn n_features(&self) -> usize {
        self.feature_meta.len()
    }

    fn idx(&self, instance: usize, feature: usize, class: usize) -> usize {
        (instance * self.n_features() + feature) * NUM_CLASSES + class
    }

    pub fn value(&self, instance: usize, feature: usize, class: usize) -> F {
        self.values[self.idx(instance, feature, class)]
    }

    pub fn std_error(&self, instance: usize, feature: usize, class: usize) -> Option<F> {
        self.std_errors.as_ref().map(|s| s[self.idx(instance, feature, class)])
    }

    pub fn instance(&self, i: usize) -> &[F] {
        let m = self.n_features();
        &self.instances[i * m..(i + 1) * m]
    }

    /// `base + Σ φ` for one instance: the model output it should reproduce.
    pub fn reconstruct(&self, instance: usize) -> [F; NUM_CLASSES] {
        let mut out = self.base_values;
        for f in 0..self.n_features() {
            for (c, o) in out.iter_mut().enumerate() {
                *o = *o + self.value(instance, f, c);
            }
        }
        out
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.feature_meta
            .iter()
            .position(|m| m.name == name)
            .ok_or_else(|| Error::input(format!("unknown feature `{name}`")))
    }
}

/// Up to `max_rows` rows drawn without replacement, kept in dataset order.
pub fn sample_background<F: Scalar>(d: &LabeledDataset<F>, max_rows: usize, seed: u64) -> LabeledDataset<F> {
    if d.n_rows() <= max_rows {
        return d.clone();
    }
    let mut idx = sample(&mut rng_from_seed(seed), d.n_rows(), max_rows).into_vec();
    idx.sort_unstable();
    d.subset(&idx)
}

/// Mean prediction over the background with features in `mask` taken from
/// `x` and the rest from each background row.
pub fn coalition_value<F: Scalar, C: Classifier<F> + ?Sized>(
    model: &C,
    x: &[F],
    background: &LabeledDataset<F>,
    mask: u32,
) -> Result<[F; NUM_CLASSES]> {
    if background.is_empty() {
        return Err(Error::input("background set is empty"));
    }
    let mut z = vec![F::zero(); x.len()];
    Ok(coalition_into(model, x, background, mask, &mut z))
}

fn coalition_into<F: Scalar, C: Classifier<F> + ?Sized>(
    model: &C,
    x: &[F],
    background: &LabeledDataset<F>,
    mask: u32,
    z: &mut [F],
) -> [F; NUM_CLASSES] {
    let mut acc = [F::zero(); NUM_CLASSES];
    for b in background.rows() {
        for (j, zj) in z.iter_mut().enumerate() {
            *zj = if mask & (1 << j) != 0 { x[j] } else { b[j] };
        }
        let p = model.predict_proba(z);
        for (a, v) in acc.iter_mut().zip(p) {
            *a = *a + v;
        }
    }
    let n = F::of_usize(background.n_rows());
    acc.map(|a| a / n)
}

fn check_inputs<F: Scalar, C: Classifier<F> + ?Sized>(
    model: &C,
    instances: &LabeledDataset<F>,
    background: &LabeledDataset<F>,
) -> Result<()> {
    if background.is_empty() {
        return Err(Error::input("background set is empty"));
    }
    for w in [instances.n_cols(), background.n_cols()] {
        if w != model.n_features() {
            return Err(Error::DimensionMismatch {
                expected: model.n_features(),
                actual: w,
            });
        }
    }
    Ok(())
}

/// Exact Shapley values by enumerating all `2^M` coalitions per instance.
pub fn shapley_exact<F: Scalar, C: Classifier<F> + ?Sized>(
    model: &C,
    instances: &LabeledDataset<F>,
    background: &LabeledDataset<F>,
) -> Result<ShapMatrix<F>> {
    check_inputs(model, instances, background)?;
    let m = instances.n_cols();
    if m > MAX_EXACT_FEATURES {
        return Err(Error::TooManyFeatures {
            features: m,
            limit: MAX_EXACT_FEATURES,
        });
    }
    // s! (M - s - 1)! / M! = 1 / (M * C(M-1, s))
    let weights: Vec<F> = (0..m)
        .map(|s| F::of(1.0 / (m as f64 * binomial(m - 1, s))))
        .collect();
    let full = 1u32 << m;
    let per_instance: Vec<Vec<F>> = (0..instances.n_rows())
        .into_par_iter()
        .map(|i| {
            let x = instances.row(i);
            let mut z = vec![F::zero(); m];
            let v: Vec<[F; NUM_CLASSES]> = (0..full)
                .map(|mask| coalition_into(model, x, background, mask, &mut z))
                .collect();
            let mut phi = vec![F::zero(); m * NUM_CLASSES];
            for mask in 0..full {
                let size = mask.count_ones() as usize;
                for f in 0..m {
                    let bit = 1u32 << f;
                    if mask & bit != 0 {
                        continue;
                    }
                    let w = weights[size];
                    let (with, without) = (v[(mask | bit) as usize], v[mask as usize]);
                    for c in 0..NUM_CLASSES {
                        phi[f * NUM_CLASSES + c] = phi[f * NUM_CLASSES + c] + w * (with[c] - without[c]);
                    }
                }
            }
            phi
        })
        .collect();
    let mut z = vec![F::zero(); m];
    let base_values = coalition_into(model, background.row(0), background, 0, &mut z);
    Ok(ShapMatrix {
        n_instances: instances.n_rows(),
        feature_meta: instances.feature_meta().to_vec(),
        values: per_instance.concat(),
        std_errors: None,
        base_values,
        background_size: background.n_rows(),
        instances: instances.features().to_vec(),
    })
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Permutation-sampling estimate with standard errors. Permutations come in
/// antithetic pairs (an ordering and its reverse).
pub fn shapley_sampled<F: Scalar, C: Classifier<F> + ?Sized>(
    model: &C,
    instances: &LabeledDataset<F>,
    background: &LabeledDataset<F>,
    n_permutations: usize,
    seed: u64,
) -> Result<ShapMatrix<F>> {
    check_inputs(model, instances, background)?;
    if n_permutations == 0 {
        return Err(Error::config("n_permutations must be at least 1"));
    }
    let m = instances.n_cols();
    if m > 32 {
        return Err(Error::TooManyFeatures { features: m, limit: 32 });
    }
    let results: Vec<(Vec<F>, Vec<F>)> = (0..instances.n_rows())
        .into_par_iter()
        .map(|i| {
            let x = instances.row(i);
            let mut rng = rng_from_seed(derive_seed(seed, i as u64));
            let mut z = vec![F::zero(); m];
            let mut sum = vec![F::zero(); m * NUM_CLASSES];
            let mut sum_sq = vec![F::zero(); m * NUM_CLASSES];
            let mut order: Vec<usize> = (0..m).collect();
            for p in 0..n_permutations {
                if p % 2 == 0 {
                    order.shuffle(&mut rng);
                } else {
                    order.reverse();
                }
                let mut mask = 0u32;
                let mut prev = coalition_into(model, x, background, mask, &mut z);
                for &f in &order {
                    mask |= 1 << f;
                    let cur = coalition_into(model, x, background, mask, &mut z);
                    for c in 0..NUM_CLASSES {
                        let d = cur[c] - prev[c];
                        sum[f * NUM_CLASSES + c] = sum[f * NUM_CLASSES + c] + d;
                        sum_sq[f * NUM_CLASSES + c] = sum_sq[f * NUM_CLASSES + c] + d * d;
                    }
                    prev = cur;
                }
            }
            let n = F::of_usize(n_permutations);
            let mean: Vec<F> = sum.iter().map(|&s| s / n).collect();
            let se: Vec<F> = mean
                .iter()
                .zip(&sum_sq)
                .map(|(&mu, &sq)| {
                    if n_permutations < 2 {
                        return F::zero();
                    }
                    let var = ((sq - n * mu * mu) / (n - F::one())).max(F::zero());
                    (var / n).sqrt()
                })
                .collect();
            (mean, se)
        })
        .collect();
    let mut z = vec![F::zero(); m];
    let base_values = coalition_into(model, background.row(0), background, 0, &mut z);
    let (values, errs): (Vec<Vec<F>>, Vec<Vec<F>>) = results.into_iter().unzip();
    Ok(ShapMatrix {
        n_instances: instances.n_rows(),
        feature_meta: instances.feature_meta().to_vec(),
        values: values.concat(),
        std_errors: Some(errs.concat()),
        base_values,
        background_size: background.n_rows(),
        instances: instances.features().to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub index: usize,
    pub name: String,
    pub score: f64,
}

/// Mean |φ| over instances and classes, highest first; ties keep feature
/// order.
pub fn importance<F: Scalar>(sm: &ShapMatrix<F>) -> Result<Vec<FeatureImportance>> {
    if sm.n_instances == 0 || sm.n_features() == 0 {
        return Err(Error::input("cannot rank features of an empty attribution matrix"));
    }
    let denom = (sm.n_instances * NUM_CLASSES) as f64;
    let mut ranked: Vec<FeatureImportance> = sm
        .feature_meta
        .iter()
        .enumerate()
        .map(|(f, meta)| {
            let total: f64 = (0..sm.n_instances)
                .flat_map(|i| (0..NUM_CLASSES).map(move |c| (i, c)))
                .map(|(i, c)| sm.value(i, f, c).as_f64().abs())
                .sum();
            FeatureImportance {
                index: f,
                name: meta.name.clone(),
                score: total / denom,
            }
        })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    Ok(ranked)
}

/// Fraction of total importance carried by the features in `indices`.
pub fn importance_share(ranking: &[FeatureImportance], indices: &[usize]) -> f64 {
    let total: f64 = ranking.iter().map(|r| r.score).sum();
    if total == 0.0 {
        return 0.0;
    }
    ranking
        .iter()
        .filter(|r| indices.contains(&r.index))
        .map(|r| r.score)
        .sum::<f64>()
        / total
}

/// One row per (instance, feature) with the attribution for each class.
pub fn write_summary<F: Scalar, W: Write>(sm: &ShapMatrix<F>, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["instance", "feature", "feature_value", "shap_low", "shap_medium", "shap_high"])?;
    for i in 0..sm.n_instances {
        for (f, meta) in sm.feature_meta.iter().enumerate() {
            let mut rec = vec![i.to_string(), meta.name.clone(), sm.instance(i)[f].to_string()];
            rec.extend((0..NUM_CLASSES).map(|c| sm.value(i, f, c).to_string()));
            out.write_record(&rec)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// One row per (instance, class) for a single feature.
pub fn write_dependency<F: Scalar, W: Write>(sm: &ShapMatrix<F>, feature: &str, w: W) -> Result<()> {
    let f = sm.feature_index(feature)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["feature_value", "shap_value", "class"])?;
    for i in 0..sm.n_instances {
        for level in DemandLevel::ALL {
            out.write_record([
                sm.instance(i)[f].to_string(),
                sm.value(i, f, level.index()).to_string(),
                level.name().to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn export_summary<F: Scalar>(sm: &ShapMatrix<F>, path: &Path) -> Result<()> {
    write_summary(sm, std::fs::File::create(path)?)
}

pub fn export_dependency<F: Scalar>(sm: &ShapMatrix<F>, feature: &str, path: &Path) -> Result<()> {
    write_dependency(sm, feature, std::fs::File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureKind, FeatureMeta};
    use crate::fixtures::blobs_split;
    use crate::trees::{DecisionTree, TreeConfig};

    struct Linear(Vec<f64>);

    impl Classifier<f64> for Linear {
        fn n_features(&self) -> usize {
            self.0.len()
        }
        fn predict_proba(&self, r: &[f64]) -> [f64; 3] {
            let s: f64 = self.0.iter().zip(r).map(|(a, b)| a * b).sum();
            [s, -s, 0.5 * s]
        }
    }

    /// Non-additive toy model with interactions.
    struct Toy;

    impl Classifier<f64> for Toy {
        fn n_features(&self) -> usize {
            8
        }
        fn predict_proba(&self, r: &[f64]) -> [f64; 3] {
            let a = (r[0] * r[1]).tanh() + r[2].max(r[3]) - 0.3 * r[4] * r[5] * r[6];
            let b = (r[7] - r[0]).abs();
            [a, b, a * b]
        }
    }

    struct Constant;

    impl Classifier<f64> for Constant {
        fn n_features(&self) -> usize {
            3
        }
        fn predict_proba(&self, _: &[f64]) -> [f64; 3] {
            [0.2, 0.3, 0.5]
        }
    }

    fn data(rows: &[Vec<f64>]) -> LabeledDataset<f64> {
        let meta = (0..rows[0].len())
            .map(|j| FeatureMeta::new(format!("x{j}"), FeatureKind::Continuous))
            .collect();
        LabeledDataset::from_rows(rows, vec![0; rows.len()], meta).unwrap()
    }

    fn grid(n: usize, m: usize, seed: u64) -> LabeledDataset<f64> {
        use rand::Rng;
        let mut rng = rng_from_seed(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        data(&rows)
    }

    #[test]
    fn coalition_extremes() {
        let bg = grid(10, 3, 1);
        let x = [0.3, -0.2, 0.9];
        let model = Linear(vec![1.0, 2.0, -1.0]);
        assert_eq!(coalition_value(&model, &x, &bg, 0b111).unwrap(), model.predict_proba(&x));
        let mean: Vec<[f64; 3]> = bg.rows().map(|r| model.predict_proba(r)).collect();
        let v0 = coalition_value(&model, &x, &bg, 0).unwrap();
        for c in 0..3 {
            let m = mean.iter().map(|p| p[c]).sum::<f64>() / 10.0;
            assert!((v0[c] - m).abs() < 1e-15);
        }
        let empty = coalition_value(&Constant, &x, &bg, 0).unwrap();
        for mask in 1..8 {
            assert_eq!(coalition_value(&Constant, &x, &bg, mask).unwrap(), empty);
        }
    }

    #[test]
    fn linear_closed_form() {
        let bg = grid(25, 2, 2);
        let (m1, m2) = (
            bg.column(0).iter().sum::<f64>() / 25.0,
            bg.column(1).iter().sum::<f64>() / 25.0,
        );
        let inst = data(&[vec![0.7, -0.4], vec![-0.1, 0.2]]);
        let sm = shapley_exact(&Linear(vec![2.0, 3.0]), &inst, &bg).unwrap();
        for i in 0..2 {
            let x = inst.row(i);
            assert!((sm.value(i, 0, 0) - 2.0 * (x[0] - m1)).abs() < 1e-12);
            assert!((sm.value(i, 1, 0) - 3.0 * (x[1] - m2)).abs() < 1e-12);
            assert!((sm.value(i, 1, 1) + 3.0 * (x[1] - m2)).abs() < 1e-12);
        }
    }

    #[test]
    fn efficiency_symmetry_and_order_invariance() {
        let bg = grid(20, 8, 3);
        let inst = grid(5, 8, 4);
        let sm = shapley_exact(&Toy, &inst, &bg).unwrap();
        for i in 0..5 {
            let p = Toy.predict_proba(inst.row(i));
            let r = sm.reconstruct(i);
            for c in 0..3 {
                assert!((p[c] - r[c]).abs() < 1e-10);
            }
        }
        // reversed background and instance order
        let rev: Vec<usize> = (0..20).rev().collect();
        let sm2 = shapley_exact(&Toy, &inst.subset(&[4, 3, 2, 1, 0]), &bg.subset(&rev)).unwrap();
        for i in 0..5 {
            for f in 0..8 {
                for c in 0..3 {
                    assert!((sm.value(i, f, c) - sm2.value(4 - i, f, c)).abs() < 1e-12);
                }
            }
        }
        // x2 and x3 enter only through max(x2, x3); with a background closed
        // under swapping them, equal values get equal attributions
        let mut rows: Vec<Vec<f64>> = bg.rows().map(<[f64]>::to_vec).collect();
        let swapped: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let mut s = r.clone();
                s.swap(2, 3);
                s
            })
            .collect();
        rows.extend(swapped);
        let inst = data(&[vec![0.1, 0.2, 0.5, 0.5, 0.0, 0.3, 0.2, 0.1]]);
        let sm = shapley_exact(&Toy, &inst, &data(&rows)).unwrap();
        for c in 0..3 {
            assert!((sm.value(0, 2, c) - sm.value(0, 3, c)).abs() < 1e-12);
        }
    }

    #[test]
    fn unused_tree_feature_is_exactly_zero() {
        let (train, test) = blobs_split::<f64>(120, 1);
        let tree = DecisionTree::fit(&train, &TreeConfig::default(), 0).unwrap();
        let used = tree.used_features();
        let bg = sample_background(&train, 30, 0);
        let sm = shapley_exact(&tree, &test.subset(&[0, 1, 2, 3]), &bg).unwrap();
        for f in (0..8).filter(|f| !used.contains(f)) {
            for i in 0..4 {
                for c in 0..3 {
                    assert_eq!(sm.value(i, f, c), 0.0);
                }
            }
        }
        assert!(!used.contains(&7));
    }

    #[test]
    fn too_many_features_for_exact() {
        let bg = grid(2, 17, 0);
        let model = Linear(vec![1.0; 17]);
        assert!(matches!(
            shapley_exact(&model, &bg, &bg),
            Err(Error::TooManyFeatures { features: 17, .. })
        ));
    }

    #[test]
    fn sampled_estimates() {
        let bg = grid(10, 8, 5);
        let inst = grid(3, 8, 6);
        let exact = shapley_exact(&Toy, &inst, &bg).unwrap();
        let est = shapley_sampled(&Toy, &inst, &bg, 200, 9).unwrap();
        for i in 0..3 {
            for f in 0..8 {
                for c in 0..3 {
                    let se = est.std_error(i, f, c).unwrap();
                    let diff = (est.value(i, f, c) - exact.value(i, f, c)).abs();
                    assert!(diff <= 3.0 * se + 1e-9, "{i} {f} {c}: {diff} vs se {se}");
                }
            }
        }
        assert_eq!(est, shapley_sampled(&Toy, &inst, &bg, 200, 9).unwrap());

        // two features, both orderings enumerated by one antithetic pair
        let bg2 = grid(6, 2, 7);
        let inst2 = grid(2, 2, 8);
        struct Inter;
        impl Classifier<f64> for Inter {
            fn n_features(&self) -> usize {
                2
            }
            fn predict_proba(&self, r: &[f64]) -> [f64; 3] {
                [r[0] * r[1], r[0].exp(), r[1] * r[1]]
            }
        }
        let e = shapley_exact(&Inter, &inst2, &bg2).unwrap();
        let s = shapley_sampled(&Inter, &inst2, &bg2, 2, 1).unwrap();
        for (a, b) in e.values.iter().zip(&s.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn importance_ranking() {
        let mut sm = ShapMatrix {
            n_instances: 2,
            feature_meta: (0..3)
                .map(|j| FeatureMeta::new(format!("x{j}"), FeatureKind::Continuous))
                .collect(),
            values: vec![0.0; 18],
            std_errors: None,
            base_values: [0.0; 3],
            background_size: 1,
            instances: vec![0.0; 6],
        };
        let r = importance(&sm).unwrap();
        assert_eq!(r.iter().map(|x| x.index).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(r.iter().all(|x| x.score == 0.0));
        sm.values[2 * 3 + 1] = -0.6;
        let r = importance(&sm).unwrap();
        assert_eq!(r[0].index, 2);
        assert!((r[0].score - 0.1).abs() < 1e-15);
        assert_eq!(importance_share(&r, &[2]), 1.0);
    }

    #[test]
    fn exports() {
        let bg = grid(5, 3, 1);
        let mut rows = vec![vec![0.2, 1.0, -0.3], vec![0.4, 0.0, 0.1]];
        let inst = data(&rows);
        let sm = shapley_exact(&Linear(vec![1.0, 2.0, 3.0]), &inst, &bg).unwrap();
        let mut a = Vec::new();
        write_summary(&sm, &mut a).unwrap();
        assert_eq!(String::from_utf8(a.clone()).unwrap().lines().count(), 7);
        let mut b = Vec::new();
        write_summary(&sm, &mut b).unwrap();
        assert_eq!(a, b);

        rows.push(vec![0.9, 1.0, 0.0]);
        let sm = shapley_exact(&Linear(vec![1.0, 2.0, 3.0]), &data(&rows), &bg).unwrap();
        let mut dep = Vec::new();
        write_dependency(&sm, "x1", &mut dep).unwrap();
        let text = String::from_utf8(dep).unwrap();
        let xs: std::collections::BTreeSet<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(xs.len(), 2);
        assert!(write_dependency(&sm, "nope", Vec::new()).is_err());
    }
}
