//! Domain records, the labelled feature matrix, feature scaling and the
//! classifier abstraction every model family implements.

use std::fmt;

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{argmax, Scalar};

/// Number of demand levels (low, medium, high).
pub const NUM_CLASSES: usize = 3;

/// Feature widths of the production and distribution layouts.
pub const PRODUCTION_WIDTH: usize = 8;
pub const DISTRIBUTION_WIDTH: usize = 13;

/// Identifier of a dissemination area.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ZoneId(pub String);

impl ZoneId {
    pub fn new(id: impl Into<String>) -> Self {
        ZoneId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ZoneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripRecord {
    pub origin_da: ZoneId,
    pub dest_da: ZoneId,
    pub date: NaiveDate,
    pub riders: u32,
}

/// Census demographics of one zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneProfile {
    pub da_id: ZoneId,
    pub population_density: f64,
    pub median_income: f64,
    pub avg_household_size: f64,
    pub pct_male: f64,
    pub pct_working_age: f64,
}

impl ZoneProfile {
    pub const FIELD_NAMES: [&'static str; 5] = [
        "population_density",
        "median_income",
        "avg_household_size",
        "pct_male",
        "pct_working_age",
    ];

    /// Checks the profile invariants, returning the first violation.
    pub fn check(&self) -> std::result::Result<(), String> {
        if !(self.population_density > 0.0) {
            return Err(format!(
                "population_density must be > 0, got {}",
                self.population_density
            ));
        }
        if !(self.avg_household_size > 0.0) {
            return Err(format!(
                "avg_household_size must be > 0, got {}",
                self.avg_household_size
            ));
        }
        if !self.median_income.is_finite() {
            return Err("median_income is not finite".into());
        }
        for (name, v) in [
            ("pct_male", self.pct_male),
            ("pct_working_age", self.pct_working_age),
        ] {
            if !(0.0..=100.0).contains(&v) {
                return Err(format!("{name} must be within [0,100], got {v}"));
            }
        }
        Ok(())
    }

    /// Demographic values in feature-column order.
    pub fn values(&self) -> [f64; 5] {
        [
            self.population_density,
            self.median_income,
            self.avg_household_size,
            self.pct_male,
            self.pct_working_age,
        ]
    }
}

/// Temporal context of one service day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TripContext {
    /// 0 = 3 h service day, 1 = 5 h service day.
    pub hours_of_operation: u8,
    /// 1 = Saturday ... 7 = Friday.
    pub day_of_week: u8,
    /// 1 = September ... 9 = May.
    pub month_of_year: u8,
}

impl TripContext {
    pub fn new(hours_of_operation: u8, day_of_week: u8, month_of_year: u8) -> Result<Self> {
        if hours_of_operation > 1 {
            return Err(Error::input(format!(
                "hours_of_operation must be 0 or 1, got {hours_of_operation}"
            )));
        }
        if !(1..=7).contains(&day_of_week) {
            return Err(Error::input(format!(
                "day_of_week must be within 1..=7, got {day_of_week}"
            )));
        }
        if !(1..=9).contains(&month_of_year) {
            return Err(Error::input(format!(
                "month_of_year must be within 1..=9, got {month_of_year}"
            )));
        }
        Ok(TripContext {
            hours_of_operation,
            day_of_week,
            month_of_year,
        })
    }

    pub fn values(&self) -> [f64; 3] {
        [
            f64::from(self.hours_of_operation),
            f64::from(self.day_of_week),
            f64::from(self.month_of_year),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemandLevel {
    Low = 0,
    Medium = 1,
    High = 2,
}

impl DemandLevel {
    pub const ALL: [DemandLevel; NUM_CLASSES] =
        [DemandLevel::Low, DemandLevel::Medium, DemandLevel::High];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            DemandLevel::Low => "low",
            DemandLevel::Medium => "medium",
            DemandLevel::High => "high",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous,
    Discrete,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub name: String,
    pub kind: FeatureKind,
}

impl FeatureMeta {
    pub fn new(name: impl Into<String>, kind: FeatureKind) -> Self {
        FeatureMeta {
            name: name.into(),
            kind,
        }
    }
}

/// Row-major feature matrix with demand-level labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct LabeledDataset<F> {
    features: Vec<F>,
    labels: Vec<usize>,
    feature_meta: Vec<FeatureMeta>,
}

impl<F: Scalar> LabeledDataset<F> {
    /// Builds a dataset from a flat row-major buffer.
    ///
    /// Only structural shape is enforced here; content problems (NaN cells,
    /// labels outside the level set, unusual widths) are left for
    /// [`LabeledDataset::validate`] to report.
    pub fn new(features: Vec<F>, labels: Vec<usize>, feature_meta: Vec<FeatureMeta>) -> Result<Self> {
        let width = feature_meta.len();
        if width == 0 {
            return Err(Error::input("dataset needs at least one feature column"));
        }
        if features.len() != width * labels.len() {
            return Err(Error::input(format!(
                "{} feature cells cannot form {} rows of width {}",
                features.len(),
                labels.len(),
                width
            )));
        }
        Ok(LabeledDataset {
            features,
            labels,
            feature_meta,
        })
    }

    pub fn from_rows(rows: &[Vec<F>], labels: Vec<usize>, feature_meta: Vec<FeatureMeta>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::input(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let width = feature_meta.len();
        let mut flat = Vec::with_capacity(rows.len() * width);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != width {
                return Err(Error::input(format!(
                    "row {i} has {} values, expected {width}",
                    r.len()
                )));
            }
            flat.extend_from_slice(r);
        }
        Self::new(flat, labels, feature_meta)
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_cols(&self) -> usize {
        self.feature_meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[F] {
        let w = self.n_cols();
        &self.features[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[F]> + '_ {
        self.features.chunks_exact(self.n_cols())
    }

    pub fn features(&self) -> &[F] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn feature_meta(&self) -> &[FeatureMeta] {
        &self.feature_meta
    }

    pub fn column(&self, j: usize) -> Vec<F> {
        self.rows().map(|r| r[j]).collect()
    }

    /// Label frequencies; labels outside the level set are ignored.
    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut c = [0; NUM_CLASSES];
        for &l in &self.labels {
            if l < NUM_CLASSES {
                c[l] += 1;
            }
        }
        c
    }

    /// Rows at `indices`, in that order (repeats allowed).
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.n_cols());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        LabeledDataset {
            features,
            labels,
            feature_meta: self.feature_meta.clone(),
        }
    }

    /// Projection onto `columns`, in that order (repeats allowed).
    pub fn select_columns(&self, columns: &[usize]) -> Self {
        let mut features = Vec::with_capacity(self.n_rows() * columns.len());
        for r in self.rows() {
            features.extend(columns.iter().map(|&c| r[c]));
        }
        LabeledDataset {
            features,
            labels: self.labels.clone(),
            feature_meta: columns.iter().map(|&c| self.feature_meta[c].clone()).collect(),
        }
    }

    pub fn map_features(&self, f: impl FnMut(&[F]) -> Vec<F>) -> Self {
        let features = self.rows().flat_map(f).collect();
        LabeledDataset {
            features,
            labels: self.labels.clone(),
            feature_meta: self.feature_meta.clone(),
        }
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate_dataset(self)
    }
}

/// A problem found by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    NonFiniteCell { row: usize, col: usize },
    LabelOutOfRange { row: usize, label: usize },
    ColumnCount { found: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFiniteCell { row, col } => {
                write!(f, "non-finite value at row {row}, column {col}")
            }
            Violation::LabelOutOfRange { row, label } => {
                write!(f, "label out of {{0,1,2}}: row {row} has {label}")
            }
            Violation::ColumnCount { found } => {
                write!(f, "expected 8 or 13 columns, found {found}")
            }
        }
    }
}

/// Lists every violation in `d`; empty iff the dataset is valid.
pub fn validate_dataset<F: Scalar>(d: &LabeledDataset<F>) -> Vec<Violation> {
    let mut out = Vec::new();
    let w = d.n_cols();
    if w != PRODUCTION_WIDTH && w != DISTRIBUTION_WIDTH {
        out.push(Violation::ColumnCount { found: w });
    }
    for (i, r) in d.rows().enumerate() {
        for (j, v) in r.iter().enumerate() {
            if !v.is_finite() {
                out.push(Violation::NonFiniteCell { row: i, col: j });
            }
        }
    }
    for (i, &l) in d.labels().iter().enumerate() {
        if l >= NUM_CLASSES {
            out.push(Violation::LabelOutOfRange { row: i, label: l });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalingKind {
    Raw,
    #[default]
    MinMax,
}

/// Per-column bounds learned on a training set.
///
/// Continuous columns carry `(min, max)`; discrete and binary columns pass
/// through unchanged. A continuous column with a single value is stored with
/// `min == max` and maps to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct ScalerState<F> {
    pub kind: ScalingKind,
    pub bounds: Vec<Option<(F, F)>>,
}

impl<F: Scalar> ScalerState<F> {
    pub fn identity(width: usize) -> Self {
        ScalerState {
            kind: ScalingKind::Raw,
            bounds: vec![None; width],
        }
    }

    pub fn fit(d: &LabeledDataset<F>, kind: ScalingKind) -> Self {
        let width = d.n_cols();
        if kind == ScalingKind::Raw {
            return Self::identity(width);
        }
        let bounds = d
            .feature_meta()
            .iter()
            .enumerate()
            .map(|(j, meta)| {
                if meta.kind != FeatureKind::Continuous || d.is_empty() {
                    return None;
                }
                let mut lo = F::infinity();
                let mut hi = F::neg_infinity();
                for r in d.rows() {
                    lo = lo.min(r[j]);
                    hi = hi.max(r[j]);
                }
                if lo == hi {
                    log::warn!(
                        "continuous column `{}` is constant; min-max scaling maps it to 0",
                        meta.name
                    );
                }
                Some((lo, hi))
            })
            .collect();
        ScalerState { kind, bounds }
    }

    pub fn width(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_identity(&self) -> bool {
        self.bounds.iter().all(Option::is_none)
    }

    /// Scales one row, clamping continuous values to [0, 1].
    pub fn transform_into(&self, row: &[F], out: &mut Vec<F>) {
        out.clear();
        out.extend(row.iter().zip(&self.bounds).map(|(&v, b)| match *b {
            None => v,
            Some((lo, hi)) => {
                if hi > lo {
                    ((v - lo) / (hi - lo)).max(F::zero()).min(F::one())
                } else {
                    F::zero()
                }
            }
        }));
    }

    pub fn transform(&self, row: &[F]) -> Vec<F> {
        let mut out = Vec::with_capacity(row.len());
        self.transform_into(row, &mut out);
        out
    }

    pub fn inverse(&self, row: &[F]) -> Vec<F> {
        row.iter()
            .zip(&self.bounds)
            .map(|(&v, b)| match *b {
                None => v,
                Some((lo, hi)) => lo + v * (hi - lo),
            })
            .collect()
    }

    pub fn apply(&self, d: &LabeledDataset<F>) -> LabeledDataset<F> {
        if self.is_identity() {
            return d.clone();
        }
        d.map_features(|r| self.transform(r))
    }
}

/// Scales `d` and returns the state needed to scale future rows identically.
pub fn scale_features<F: Scalar>(
    d: &LabeledDataset<F>,
    kind: ScalingKind,
) -> (LabeledDataset<F>, ScalerState<F>) {
    let state = ScalerState::fit(d, kind);
    (state.apply(d), state)
}

/// A fitted three-class probabilistic classifier.
///
/// Implementations are read-only after fitting and may be shared across
/// threads.
pub trait Classifier<F: Scalar>: Send + Sync {
    /// Width of the feature rows the model expects.
    fn n_features(&self) -> usize;

    /// Class probabilities; components lie in [0,1] and sum to 1.
    fn predict_proba(&self, row: &[F]) -> [F; NUM_CLASSES];

    /// Most probable class, lowest index on ties.
    fn predict(&self, row: &[F]) -> usize {
        argmax(&self.predict_proba(row))
    }

    /// Probabilities for a flat row-major batch.
    fn predict_proba_batch(&self, rows: &[F]) -> Vec<[F; NUM_CLASSES]> {
        rows.chunks_exact(self.n_features())
            .map(|r| self.predict_proba(r))
            .collect()
    }
}

impl<F: Scalar, C: Classifier<F> + ?Sized> Classifier<F> for Box<C> {
    fn n_features(&self) -> usize {
        (**self).n_features()
    }

    fn predict_proba(&self, row: &[F]) -> [F; NUM_CLASSES] {
        (**self).predict_proba(row)
    }

    fn predict_proba_batch(&self, rows: &[F]) -> Vec<[F; NUM_CLASSES]> {
        (**self).predict_proba_batch(rows)
    }
}

/// Something that can be trained into a [`Classifier`]: a model
/// configuration, or a test stub.
pub trait Learner<F: Scalar>: Send + Sync {
    fn fit(&self, d: &LabeledDataset<F>, seed: u64) -> Result<Box<dyn Classifier<F>>>;
}

/// Fraction of rows whose prediction matches the label.
pub fn accuracy<F: Scalar, C: Classifier<F> + ?Sized>(model: &C, d: &LabeledDataset<F>) -> f64 {
    if d.is_empty() {
        return 0.0;
    }
    let hits = d
        .rows()
        .zip(d.labels())
        .filter(|(r, &l)| model.predict(r) == l)
        .count();
    hits as f64 / d.n_rows() as f64
}

/// Normalizes non-negative scores into probabilities; all-zero input maps to
/// the uniform distribution.
pub fn normalize<F: Scalar>(scores: [F; NUM_CLASSES]) -> [F; NUM_CLASSES] {
    let total = scores.iter().fold(F::zero(), |a, &b| a + b);
    if total > F::zero() {
        scores.map(|s| s / total)
    } else {
        [F::one() / F::of_usize(NUM_CLASSES); NUM_CLASSES]
    }
}

/// splitmix64 finalizer; derives independent child seeds from a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
