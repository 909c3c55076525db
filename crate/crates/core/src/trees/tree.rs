use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{rng_from_seed, Classifier, LabeledDataset, Learner, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    #[default]
    Gini,
    Entropy,
}

/// Features considered at each split.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    #[default]
    All,
    Sqrt,
    /// `max(1, floor(f * n_features))`.
    Fraction(f64),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        let m = match self {
            MaxFeatures::All => n_features,
            MaxFeatures::Sqrt => (n_features as f64).sqrt().floor() as usize,
            MaxFeatures::Fraction(f) => (f * n_features as f64).floor() as usize,
        };
        m.clamp(1, n_features.max(1))
    }
}

/// Minimum row count given either directly or as a fraction of the sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleBound {
    Count(usize),
    /// `ceil(f * sample size)`.
    Fraction(f64),
}

impl SampleBound {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            SampleBound::Count(c) => c.max(1),
            SampleBound::Fraction(f) => ((f * n as f64).ceil() as usize).max(1),
        }
    }

    fn check(self, name: &str) -> Result<()> {
        match self {
            SampleBound::Fraction(f) if !(f > 0.0 && f <= 1.0) => {
                Err(Error::config(format!("{name} fraction must be in (0,1], got {f}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub criterion: Criterion,
    /// `None` grows until the other stopping rules apply.
    pub max_depth: Option<usize>,
    pub max_features: MaxFeatures,
    pub min_samples_leaf: SampleBound,
    pub min_samples_split: SampleBound,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            criterion: Criterion::Gini,
            max_depth: None,
            max_features: MaxFeatures::All,
            min_samples_leaf: SampleBound::Count(1),
            min_samples_split: SampleBound::Count(2),
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if let MaxFeatures::Fraction(f) = self.max_features {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::config(format!("max_features fraction must be in (0,1], got {f}")));
            }
        }
        self.min_samples_leaf.check("min_samples_leaf")?;
        self.min_samples_split.check("min_samples_split")
    }
}

/// Node impurity of a class histogram.
pub fn impurity<F: Scalar>(counts: &[usize; NUM_CLASSES], criterion: Criterion) -> Result<F> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::input("impurity of an empty node is undefined"));
    }
    Ok(impurity_unchecked(counts, total, criterion))
}

fn impurity_unchecked<F: Scalar>(counts: &[usize; NUM_CLASSES], total: usize, criterion: Criterion) -> F {
    let n = F::of_usize(total);
    match criterion {
        Criterion::Gini => {
            let sq = counts
                .iter()
                .map(|&c| {
                    let p = F::of_usize(c) / n;
                    p * p
                })
                .fold(F::zero(), |a, b| a + b);
            F::one() - sq
        }
        Criterion::Entropy => counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = F::of_usize(c) / n;
                -p * p.log2()
            })
            .fold(F::zero(), |a, b| a + b),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub enum Node<F> {
    Split {
        feature: usize,
        threshold: F,
        /// Impurity decrease of this split, weighted by the node's share of
        /// the training sample.
        gain: F,
        left: usize,
        right: usize,
    },
    Leaf {
        counts: [usize; NUM_CLASSES],
    },
}

/// A fitted CART classification tree. Rows with `x[feature] <= threshold`
/// go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct DecisionTree<F> {
    nodes: Vec<Node<F>>,
    n_features: usize,
    min_samples_leaf: usize,
}

impl<F: Scalar> DecisionTree<F> {
    pub fn fit(d: &LabeledDataset<F>, cfg: &TreeConfig, seed: u64) -> Result<Self> {
        let rows: Vec<usize> = (0..d.n_rows()).collect();
        Self::fit_rows(d, rows, cfg, &mut rng_from_seed(seed))
    }

    /// Fits on the rows listed in `rows` (repeats count as duplicates).
    pub(crate) fn fit_rows(d: &LabeledDataset<F>, rows: Vec<usize>, cfg: &TreeConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        if rows.is_empty() {
            return Err(Error::input("cannot fit a tree to zero rows"));
        }
        if let Some(&bad) = d.labels().iter().find(|&&l| l >= NUM_CLASSES) {
            return Err(Error::input(format!("label {bad} is outside the level set")));
        }
        let n = rows.len();
        let mut builder = Builder {
            d,
            criterion: cfg.criterion,
            max_depth: cfg.max_depth,
            n_try: cfg.max_features.resolve(d.n_cols()),
            min_leaf: cfg.min_samples_leaf.resolve(n),
            min_split: cfg.min_samples_split.resolve(n),
            total: n,
            nodes: Vec::new(),
            scratch: Vec::with_capacity(n),
        };
        builder.grow(rows, rng);
        Ok(DecisionTree {
            nodes: builder.nodes,
            n_features: d.n_cols(),
            min_samples_leaf: builder.min_leaf,
        })
    }

    pub fn nodes(&self) -> &[Node<F>] {
        &self.nodes
    }

    pub fn min_samples_leaf(&self) -> usize {
        self.min_samples_leaf
    }

    pub fn leaf_counts(&self, row: &[F]) -> &[usize; NUM_CLASSES] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { counts } => return counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    /// Feature indices used by at least one split, ascending.
    pub fn used_features(&self) -> Vec<usize> {
        let mut used: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .collect();
        used.sort_unstable();
        used.dedup();
        used
    }

    pub fn depth(&self) -> usize {
        fn walk<F>(nodes: &[Node<F>], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

impl<F: Scalar> Classifier<F> for DecisionTree<F> {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_proba(&self, row: &[F]) -> [F; NUM_CLASSES] {
        let counts = self.leaf_counts(row);
        let total = F::of_usize(counts.iter().sum());
        counts.map(|c| F::of_usize(c) / total)
    }
}

impl<F: Scalar> Learner<F> for TreeConfig {
    fn fit(&self, d: &LabeledDataset<F>, seed: u64) -> Result<Box<dyn Classifier<F>>> {
        Ok(Box::new(DecisionTree::fit(d, self, seed)?))
    }
}

struct Builder<'a, F> {
    d: &'a LabeledDataset<F>,
    criterion: Criterion,
    max_depth: Option<usize>,
    n_try: usize,
    min_leaf: usize,
    min_split: usize,
    total: usize,
    nodes: Vec<Node<F>>,
    scratch: Vec<(F, usize)>,
}

struct BestSplit<F> {
    feature: usize,
    threshold: F,
    gain: F,
}

impl<F: Scalar> Builder<'_, F> {
    fn counts(&self, rows: &[usize]) -> [usize; NUM_CLASSES] {
        let mut c = [0; NUM_CLASSES];
        for &r in rows {
            c[self.d.label(r)] += 1;
        }
        c
    }

    fn grow(&mut self, rows: Vec<usize>, rng: &mut impl Rng) {
        // explicit stack of (rows, depth, slot to patch in the parent)
        let mut stack: Vec<(Vec<usize>, usize, Option<(usize, bool)>)> = vec![(rows, 0, None)];
        while let Some((rows, depth, parent)) = stack.pop() {
            let id = self.nodes.len();
            if let Some((p, is_left)) = parent {
                if let Node::Split { left, right, .. } = &mut self.nodes[p] {
                    if is_left {
                        *left = id;
                    } else {
                        *right = id;
                    }
                }
            }
            let counts = self.counts(&rows);
            let split = self.best_split(&rows, &counts, depth, rng);
            match split {
                None => self.nodes.push(Node::Leaf { counts }),
                Some(s) => {
                    let (l, r): (Vec<usize>, Vec<usize>) =
                        rows.iter().partition(|&&i| self.d.row(i)[s.feature] <= s.threshold);
                    self.nodes.push(Node::Split {
                        feature: s.feature,
                        threshold: s.threshold,
                        gain: s.gain,
                        left: usize::MAX,
                        right: usize::MAX,
                    });
                    // right pushed first so the left subtree is numbered first
                    stack.push((r, depth + 1, Some((id, false))));
                    stack.push((l, depth + 1, Some((id, true))));
                }
            }
        }
    }

    fn best_split(&mut self, rows: &[usize], counts: &[usize; NUM_CLASSES], depth: usize, rng: &mut impl Rng) -> Option<BestSplit<F>> {
        let n = rows.len();
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || self.max_depth.is_some_and(|m| depth >= m) || n < self.min_split || n < 2 * self.min_leaf {
            return None;
        }
        let width = self.d.n_cols();
        let candidates: Vec<usize> = if self.n_try >= width {
            (0..width).collect()
        } else {
            let mut f = sample(rng, width, self.n_try).into_vec();
            f.sort_unstable();
            f
        };
        let parent = impurity_unchecked::<F>(counts, n, self.criterion);
        let nf = F::of_usize(n);
        let mut best: Option<BestSplit<F>> = None;
        for &feature in &candidates {
            self.scratch.clear();
            self.scratch
                .extend(rows.iter().map(|&r| (self.d.row(r)[feature], self.d.label(r))));
            self.scratch
                .sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite feature values"));
            let mut left = [0usize; NUM_CLASSES];
            for i in 0..n - 1 {
                left[self.scratch[i].1] += 1;
                let (v, next) = (self.scratch[i].0, self.scratch[i + 1].0);
                let nl = i + 1;
                let nr = n - nl;
                if v == next || nl < self.min_leaf || nr < self.min_leaf {
                    continue;
                }
                let right = [counts[0] - left[0], counts[1] - left[1], counts[2] - left[2]];
                let child = F::of_usize(nl) / nf * impurity_unchecked::<F>(&left, nl, self.criterion)
                    + F::of_usize(nr) / nf * impurity_unchecked::<F>(&right, nr, self.criterion);
                let decrease = parent - child;
                if decrease > best.as_ref().map_or(F::zero(), |b| b.gain) {
                    let mut threshold = (v + next) / F::of(2.0);
                    if !(threshold < next) {
                        threshold = v;
                    }
                    best = Some(BestSplit {
                        feature,
                        threshold,
                        gain: decrease,
                    });
                }
            }
        }
        // require a decrease beyond rounding noise
        let eps = F::epsilon() * F::of(16.0);
        best.filter(|b| b.gain > eps).map(|mut b| {
            b.gain = b.gain * nf / F::of_usize(self.total);
            b
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{accuracy, FeatureKind, FeatureMeta};

    fn meta(n: usize) -> Vec<FeatureMeta> {
        (0..n)
            .map(|i| FeatureMeta::new(format!("x{i}"), FeatureKind::Continuous))
            .collect()
    }

    #[test]
    fn impurity_values() {
        assert_eq!(impurity::<f64>(&[10, 0, 0], Criterion::Gini).unwrap(), 0.0);
        assert_eq!(impurity::<f64>(&[5, 5, 0], Criterion::Entropy).unwrap(), 1.0);
        assert!((impurity::<f64>(&[2, 1, 1], Criterion::Gini).unwrap() - 0.625).abs() < 1e-15);
        assert!(impurity::<f64>(&[0, 0, 0], Criterion::Gini).is_err());
        assert_eq!(impurity::<f32>(&[0, 4, 0], Criterion::Entropy).unwrap(), 0.0);
    }

    #[test]
    fn one_split_separates_signs() {
        let rows: Vec<Vec<f64>> = [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0].iter().map(|&x| vec![x]).collect();
        let d = LabeledDataset::from_rows(&rows, vec![0, 0, 0, 2, 2, 2], meta(1)).unwrap();
        let cfg = TreeConfig {
            max_depth: Some(1),
            ..Default::default()
        };
        let t = DecisionTree::fit(&d, &cfg, 0).unwrap();
        assert_eq!(t.depth(), 1);
        match &t.nodes()[0] {
            Node::Split { threshold, .. } => assert_eq!(*threshold, 0.0),
            Node::Leaf { .. } => panic!("expected a split"),
        }
        assert_eq!(accuracy(&t, &d), 1.0);
    }

    #[test]
    fn depth_zero_is_majority_leaf() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let d = LabeledDataset::from_rows(&rows, vec![1, 1, 1, 0, 2], meta(1)).unwrap();
        let cfg = TreeConfig {
            max_depth: Some(0),
            ..Default::default()
        };
        let t = DecisionTree::fit(&d, &cfg, 0).unwrap();
        assert_eq!(t.nodes().len(), 1);
        assert_eq!(t.predict(&[100.0]), 1);
        assert_eq!(t.predict_proba(&[0.0]), [0.2, 0.6, 0.2]);
    }

    #[test]
    fn xor_is_fit_exactly() {
        let rows = vec![vec![0.0f64, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let d = LabeledDataset::from_rows(&rows, vec![0, 1, 1, 0], meta(2)).unwrap();
        let t = DecisionTree::fit(&d, &TreeConfig::default(), 0).unwrap();
        // every root split of the balanced 4-point XOR has zero gain
        assert_eq!(t.nodes().len(), 1);

        let rows = vec![
            vec![0.0f64, 0.0],
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
        ];
        let d = LabeledDataset::from_rows(&rows, vec![0, 0, 1, 1, 0], meta(2)).unwrap();
        let t = DecisionTree::fit(&d, &TreeConfig::default(), 0).unwrap();
        assert_eq!(accuracy(&t, &d), 1.0);
        assert!(t.depth() >= 2);
    }

    #[test]
    fn min_samples_leaf_is_respected() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, (i * 7 % 11) as f64]).collect();
        let labels: Vec<usize> = (0..40).map(|i| (i * 13 % 3) as usize).collect();
        let d = LabeledDataset::from_rows(&rows, labels, meta(2)).unwrap();
        let cfg = TreeConfig {
            min_samples_leaf: SampleBound::Fraction(0.1),
            ..Default::default()
        };
        let t = DecisionTree::fit(&d, &cfg, 0).unwrap();
        assert_eq!(t.min_samples_leaf(), 4);
        for n in t.nodes() {
            if let Node::Leaf { counts } = n {
                assert!(counts.iter().sum::<usize>() >= 4);
            }
            if let Node::Split { gain, .. } = n {
                assert!(*gain > 0.0);
            }
        }
    }

    #[test]
    fn sample_bound_resolution() {
        // ceil(0.005362 * 2000) = 11
        assert_eq!(SampleBound::Fraction(0.005362).resolve(2000), 11);
        assert_eq!(SampleBound::Fraction(0.001).resolve(10), 1);
        assert_eq!(SampleBound::Count(0).resolve(10), 1);
        assert_eq!(MaxFeatures::Sqrt.resolve(8), 2);
        assert_eq!(MaxFeatures::Sqrt.resolve(13), 3);
        assert_eq!(MaxFeatures::Fraction(0.513365).resolve(8), 4);
        assert_eq!(MaxFeatures::Fraction(0.01).resolve(8), 1);
    }

    #[test]
    fn invalid_fractions_are_rejected() {
        let cfg = TreeConfig {
            min_samples_split: SampleBound::Fraction(1.5),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TreeConfig {
            max_features: MaxFeatures::Fraction(0.0),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn unlimited_tree_memorizes_distinct_rows(
                xs in proptest::collection::btree_set(-1000i32..1000, 2..60),
                seed in 0u64..1000,
            ) {
                // distinct x values, arbitrary labels: no conflicting duplicates
                let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x as f64, (x % 7) as f64]).collect();
                let labels: Vec<usize> = xs.iter().map(|&x| ((x as u64).wrapping_mul(seed + 3) % 3) as usize).collect();
                let d = LabeledDataset::from_rows(&rows, labels, meta(2)).unwrap();
                let t = DecisionTree::fit(&d, &TreeConfig::default(), seed).unwrap();
                prop_assert_eq!(accuracy(&t, &d), 1.0);
                for n in t.nodes() {
                    if let Node::Split { gain, .. } = n {
                        prop_assert!(*gain > 0.0);
                    }
                }
            }
        }
    }
}
