//! Train/test splitting, confusion matrices and model comparison.

use std::fmt::Write as _;
use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{rng_from_seed, Classifier, DemandLevel, LabeledDataset, Learner, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::scalar::Scalar;

pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

/// Reference trip production confusion matrix.
pub const PRODUCTION_MATRIX: [[usize; 3]; 3] = [[166, 54, 6], [78, 114, 24], [1, 29, 55]];
/// Reference trip distribution confusion matrix.
pub const DISTRIBUTION_MATRIX: [[usize; 3]; 3] = [[107, 3, 3], [32, 109, 27], [14, 44, 98]];

/// Stratified split: `round(test_fraction * n)` test rows shared across
/// classes by largest remainder.
pub fn split<F: Scalar>(
    d: &LabeledDataset<F>,
    test_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset<F>, LabeledDataset<F>)> {
    let (train, test) = split_indices(d.labels(), test_fraction, seed)?;
    Ok((d.subset(&train), d.subset(&test)))
}

/// Row indices of the train and test parts, each ascending.
pub fn split_indices(labels: &[usize], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::config(format!("test fraction must be in (0,1), got {test_fraction}")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, &l) in labels.iter().enumerate() {
        if l >= NUM_CLASSES {
            return Err(Error::input(format!("label {l} is outside the level set")));
        }
        by_class[l].push(i);
    }
    for (class, rows) in by_class.iter().enumerate() {
        if !rows.is_empty() && rows.len() < 2 {
            return Err(Error::ClassTooSmall {
                class,
                count: rows.len(),
                required: 2,
            });
        }
    }
    let total = (test_fraction * labels.len() as f64).round() as usize;
    let quotas: Vec<f64> = by_class
        .iter()
        .map(|r| test_fraction * r.len() as f64)
        .collect();
    let mut take: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..NUM_CLASSES).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    let mut missing = total.saturating_sub(take.iter().sum());
    for &c in order.iter().cycle().take(NUM_CLASSES * 2) {
        if missing == 0 {
            break;
        }
        if take[c] + 1 < by_class[c].len() {
            take[c] += 1;
            missing -= 1;
        }
    }
    let mut rng = rng_from_seed(seed);
    let mut test = Vec::with_capacity(total);
    let mut train = Vec::with_capacity(labels.len() - total);
    for (rows, &k) in by_class.iter_mut().zip(&take) {
        rows.shuffle(&mut rng);
        let k = k.min(rows.len().saturating_sub(1));
        test.extend_from_slice(&rows[..k]);
        train.extend_from_slice(&rows[k..]);
    }
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// Rows are actual levels, columns predicted levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; NUM_CLASSES]; NUM_CLASSES],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percent {
    pub exact: f64,
    pub rounded: i64,
}

impl Percent {
    fn of(hits: usize, total: usize) -> Self {
        let exact = 100.0 * hits as f64 / total as f64;
        Percent {
            exact,
            rounded: exact.round() as i64,
        }
    }
}

impl ConfusionMatrix {
    pub fn new(counts: [[usize; NUM_CLASSES]; NUM_CLASSES]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn row_sums(&self) -> [usize; NUM_CLASSES] {
        self.counts.map(|r| r.iter().sum())
    }

    pub fn total(&self) -> usize {
        self.row_sums().iter().sum()
    }

    pub fn trace(&self) -> usize {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    /// Recall of each actual level; `None` for a level with no rows.
    pub fn per_class_accuracy(&self) -> [Option<Percent>; NUM_CLASSES] {
        let sums = self.row_sums();
        std::array::from_fn(|i| (sums[i] > 0).then(|| Percent::of(self.counts[i][i], sums[i])))
    }

    pub fn overall_accuracy(&self) -> Result<Percent> {
        match self.total() {
            0 => Err(Error::input("confusion matrix is empty")),
            t => Ok(Percent::of(self.trace(), t)),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["actual", "pred_low", "pred_medium", "pred_high"])?;
        for level in DemandLevel::ALL {
            let row = self.counts[level.index()];
            out.write_record([
                level.name().to_string(),
                row[0].to_string(),
                row[1].to_string(),
                row[2].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn confusion(y_true: &[usize], y_pred: &[usize]) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch {
            expected: y_true.len(),
            actual: y_pred.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&a, &p) in y_true.iter().zip(y_pred) {
        if a >= NUM_CLASSES || p >= NUM_CLASSES {
            return Err(Error::input(format!("label pair ({a}, {p}) is outside the level set")));
        }
        cm.counts[a][p] += 1;
    }
    Ok(cm)
}

pub fn evaluate<F: Scalar, C: Classifier<F> + ?Sized>(model: &C, test: &LabeledDataset<F>) -> Result<ConfusionMatrix> {
    let pred: Vec<usize> = test.rows().map(|r| model.predict(r)).collect();
    confusion(test.labels(), &pred)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyResult {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class: Option<[Option<Percent>; NUM_CLASSES]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overall: Option<Percent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub train_rows: usize,
    pub test_rows: usize,
    pub seed: u64,
    pub results: Vec<FamilyResult>,
    /// Highest overall accuracy; ties go to the lexicographically first name.
    pub best: Option<String>,
}

/// Fits every named learner on `train`, scores it on `test` and ranks them.
/// A failed fit is recorded in its entry.
pub fn compare_learners<F: Scalar>(
    train: &LabeledDataset<F>,
    test: &LabeledDataset<F>,
    learners: &[(String, &dyn Learner<F>)],
    seed: u64,
) -> ComparisonReport {
    let results: Vec<FamilyResult> = learners
        .par_iter()
        .map(|(name, learner)| {
            let scored = learner
                .fit(train, seed)
                .and_then(|m| evaluate(m.as_ref(), test))
                .and_then(|cm| Ok((cm, cm.overall_accuracy()?)));
            match scored {
                Ok((cm, overall)) => FamilyResult {
                    name: name.clone(),
                    spec: None,
                    confusion: Some(cm),
                    per_class: Some(cm.per_class_accuracy()),
                    overall: Some(overall),
                    error: None,
                },
                Err(e) => {
                    log::warn!("{name} failed: {e}");
                    FamilyResult {
                        name: name.clone(),
                        spec: None,
                        confusion: None,
                        per_class: None,
                        overall: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    let best = results
        .iter()
        .filter_map(|r| r.overall.map(|o| (o.exact, &r.name)))
        .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(a.1)))
        .map(|(_, n)| n.clone());
    ComparisonReport {
        train_rows: train.n_rows(),
        test_rows: test.n_rows(),
        seed,
        results,
        best,
    }
}

/// [`compare_learners`] over model specs, on a shared stratified split of `d`.
pub fn compare_models<F: Scalar>(
    d: &LabeledDataset<F>,
    specs: &[ModelSpec],
    test_fraction: f64,
    seed: u64,
) -> Result<ComparisonReport> {
    let (train, test) = split(d, test_fraction, seed)?;
    let learners: Vec<(String, &dyn Learner<F>)> = specs
        .iter()
        .map(|s| (s.family().label().to_string(), s as &dyn Learner<F>))
        .collect();
    let mut report = compare_learners(&train, &test, &learners, seed);
    for (r, s) in report.results.iter_mut().zip(specs) {
        r.spec = Some(*s);
    }
    Ok(report)
}

fn pct(p: Option<Percent>) -> String {
    p.map_or_else(|| "n/a".to_string(), |p| p.rounded.to_string())
}

/// Table-style rendering of one confusion matrix with per-level accuracy.
pub fn format_confusion(cm: &ConfusionMatrix) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<8}{:>8}{:>8}{:>8}{:>14}", "", "Low", "Medium", "High", "Accuracy (%)");
    let per = cm.per_class_accuracy();
    for level in DemandLevel::ALL {
        let r = cm.counts[level.index()];
        let _ = writeln!(
            s,
            "{:<8}{:>8}{:>8}{:>8}{:>14}",
            level.name(),
            r[0],
            r[1],
            r[2],
            pct(per[level.index()])
        );
    }
    let _ = writeln!(s, "{:<8}{:>38}", "Total", pct(cm.overall_accuracy().ok()));
    s
}

pub fn format_report(report: &ComparisonReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "train rows: {}, test rows: {}, seed: {}",
        report.train_rows, report.test_rows, report.seed
    );
    for r in &report.results {
        let _ = writeln!(s);
        match (&r.confusion, &r.error) {
            (Some(cm), _) => {
                let _ = writeln!(s, "{}", r.name);
                s.push_str(&format_confusion(cm));
            }
            (None, Some(e)) => {
                let _ = writeln!(s, "{}: failed: {e}", r.name);
            }
            (None, None) => {}
        }
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<10}{:>10}", "model", "overall");
    for r in &report.results {
        let _ = writeln!(s, "{:<10}{:>10}", r.name, pct(r.overall));
    }
    if let Some(b) = &report.best {
        let _ = writeln!(s, "best: {b}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureKind, FeatureMeta};
    use crate::fixtures::blobs;
    use crate::model::{ModelFamily, Target};

    fn labels(counts: [usize; 3]) -> Vec<usize> {
        (0..3).flat_map(|c| std::iter::repeat_n(c, counts[c])).collect()
    }

    /// Expands a matrix into (actual, predicted) label lists.
    fn expand(m: [[usize; 3]; 3]) -> (Vec<usize>, Vec<usize>) {
        let mut t = Vec::new();
        let mut p = Vec::new();
        for (a, row) in m.iter().enumerate() {
            for (q, &n) in row.iter().enumerate() {
                t.extend(std::iter::repeat_n(a, n));
                p.extend(std::iter::repeat_n(q, n));
            }
        }
        (t, p)
    }

    #[test]
    fn production_matrix_fixture() {
        let (t, p) = expand(PRODUCTION_MATRIX);
        let cm = confusion(&t, &p).unwrap();
        assert_eq!(cm.counts, PRODUCTION_MATRIX);
        let per = cm.per_class_accuracy().map(|p| p.unwrap());
        assert_eq!(per.map(|p| p.rounded), [73, 53, 65]);
        assert!((per[0].exact - 16600.0 / 226.0).abs() < 1e-10);
        assert!((per[1].exact - 11400.0 / 216.0).abs() < 1e-10);
        assert!((per[2].exact - 5500.0 / 85.0).abs() < 1e-10);
        let o = cm.overall_accuracy().unwrap();
        assert_eq!(o.rounded, 64);
        assert!((o.exact - 33500.0 / 527.0).abs() < 1e-10);
    }

    #[test]
    fn distribution_matrix_fixture() {
        let cm = ConfusionMatrix::new(DISTRIBUTION_MATRIX);
        let per = cm.per_class_accuracy().map(|p| p.unwrap().rounded);
        assert_eq!(per, [95, 65, 63]);
        let o = cm.overall_accuracy().unwrap();
        assert_eq!(o.rounded, 72);
        assert!((o.exact - 31400.0 / 437.0).abs() < 1e-10);
    }

    #[test]
    fn overall_is_row_weighted_mean() {
        for m in [PRODUCTION_MATRIX, DISTRIBUTION_MATRIX] {
            let cm = ConfusionMatrix::new(m);
            let sums = cm.row_sums();
            let weighted: f64 = cm
                .per_class_accuracy()
                .iter()
                .zip(sums)
                .map(|(p, s)| p.unwrap().exact * s as f64 / cm.total() as f64)
                .sum();
            assert!((weighted - cm.overall_accuracy().unwrap().exact).abs() < 1e-12);
        }
    }

    #[test]
    fn confusion_basics() {
        let cm = confusion(&[0, 1, 2], &[0, 1, 2]).unwrap();
        assert_eq!(cm.counts, [[1, 0, 0], [0, 1, 0], [0, 0, 1]]);
        assert_eq!(cm.per_class_accuracy().map(|p| p.unwrap().rounded), [100; 3]);
        let cm = confusion(&[0, 1, 2], &[1, 1, 1]).unwrap();
        assert_eq!(cm.counts.map(|r| r[1]), [1, 1, 1]);
        let cm = confusion(&[0, 0, 2], &[1, 2, 0]).unwrap();
        assert_eq!(cm.overall_accuracy().unwrap().exact, 0.0);
        assert!(cm.per_class_accuracy()[1].is_none());
        assert!(confusion(&[0], &[0, 1]).is_err());
        assert!(ConfusionMatrix::default().overall_accuracy().is_err());
    }

    #[test]
    fn split_sizes_and_partition() {
        let l = labels([50, 30, 20]);
        let (train, test) = split_indices(&l, 0.2, 7).unwrap();
        assert_eq!((train.len(), test.len()), (80, 20));
        let per: Vec<usize> = (0..3).map(|c| test.iter().filter(|&&i| l[i] == c).count()).collect();
        assert_eq!(per, vec![10, 6, 4]);
        let mut all = [train.clone(), test.clone()].concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!((train, test), split_indices(&l, 0.2, 7).unwrap());
        assert!(split_indices(&labels([10, 1, 5]), 0.2, 0).is_err());
    }

    #[test]
    fn split_rounds_total_by_largest_remainder() {
        let l = labels([7, 7, 7]);
        let (_, test) = split_indices(&l, 0.2, 1).unwrap();
        assert_eq!(test.len(), 4);
    }

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

    #[test]
    fn oracle_wins() {
        let l = labels([10, 10, 10]);
        let rows: Vec<Vec<f64>> = l.iter().map(|&c| vec![c as f64]).collect();
        let d = LabeledDataset::from_rows(&rows, l, vec![FeatureMeta::new("y", FeatureKind::Discrete)]).unwrap();
        let (train, test) = split(&d, 0.2, 0).unwrap();
        let report = compare_learners(&train, &test, &[("oracle".to_string(), &Oracle as &dyn Learner<f64>)], 0);
        assert_eq!(report.best.as_deref(), Some("oracle"));
        assert_eq!(report.results[0].overall.unwrap().rounded, 100);
        assert!(format_report(&report).contains("best: oracle"));
    }

    #[test]
    fn four_families_on_blobs() {
        let d = blobs::<f64>(300, 2);
        let specs: Vec<ModelSpec> = ModelFamily::ALL
            .iter()
            .map(|&f| ModelSpec::reference(f, Target::Production).with_max_epochs(Some(60)))
            .collect();
        let report = compare_models(&d, &specs, 0.2, 5).unwrap();
        let names: Vec<&str> = report.results.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, vec!["RF", "Bagging", "ANN", "DNN"]);
        for r in &report.results {
            assert!(r.overall.unwrap().exact >= 90.0, "{}: {:?}", r.name, r.overall);
        }
        assert_eq!(report, compare_models(&d, &specs, 0.2, 5).unwrap());
        let json = serde_json::to_string(&report).unwrap();
        assert_eq!(serde_json::from_str::<ComparisonReport>(&json).unwrap(), report);
    }

    #[test]
    fn confusion_csv_and_text() {
        let cm = ConfusionMatrix::new(PRODUCTION_MATRIX);
        let mut out = Vec::new();
        cm.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "low,166,54,6");
        let t = format_confusion(&cm);
        assert!(t.lines().last().unwrap().trim_end().ends_with("64"));
    }
}
