//! k-means clustering, elbow detection and the demand-level labeler.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{derive_seed, rng_from_seed, DemandLevel};
use crate::error::{Error, Result};
use crate::scalar::{sq_dist, Scalar};

/// Lloyd iteration parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub seed: u64,
    pub restarts: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            seed: 0,
            restarts: 10,
            tol: 1e-6,
            max_iter: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct KMeansResult<F> {
    pub k: usize,
    pub centroids: Vec<Vec<F>>,
    pub assignment: Vec<usize>,
    /// Weighted within-cluster sum of squared distances.
    pub distortion: F,
}

/// Clusters `points` into `k` groups (each point weight 1).
pub fn kmeans<F: Scalar>(points: &[Vec<F>], k: usize, params: &KMeansParams) -> Result<KMeansResult<F>> {
    let weights = vec![F::one(); points.len()];
    kmeans_weighted(points, &weights, k, params)
}

/// Weighted k-means: a point of weight `w` behaves like `w` copies of itself.
///
/// k-means++ seeding followed by Lloyd iterations; each restart stops when
/// no centroid moves by more than `tol` or after `max_iter` rounds, and the
/// restart with the lowest distortion wins (earliest restart on ties). In
/// one dimension centroids are returned in ascending order.
pub fn kmeans_weighted<F: Scalar>(
    points: &[Vec<F>],
    weights: &[F],
    k: usize,
    params: &KMeansParams,
) -> Result<KMeansResult<F>> {
    if k == 0 {
        return Err(Error::config("k must be positive"));
    }
    if params.restarts == 0 || params.max_iter == 0 {
        return Err(Error::config("restarts and max_iter must be positive"));
    }
    if points.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: points.len(),
            actual: weights.len(),
        });
    }
    if weights.iter().any(|w| !(*w > F::zero())) {
        return Err(Error::input("k-means weights must be positive"));
    }
    let dim = points.first().map_or(0, Vec::len);
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::input("k-means points must share one dimension"));
    }
    let distinct = distinct_points(points);
    if k > distinct {
        return Err(Error::TooFewDistinct { k, distinct });
    }

    let runs: Vec<KMeansResult<F>> = (0..params.restarts)
        .into_par_iter()
        .map(|r| lloyd(points, weights, k, params, derive_seed(params.seed, r as u64)))
        .collect();
    let mut best = runs
        .into_iter()
        .reduce(|a, b| if b.distortion < a.distortion { b } else { a })
        .expect("at least one restart");
    if dim == 1 {
        sort_centroids_1d(&mut best);
    }
    Ok(best)
}

fn distinct_points<F: Scalar>(points: &[Vec<F>]) -> usize {
    let mut keys: Vec<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|v| v.as_f64().to_bits()).collect())
        .collect();
    keys.sort();
    keys.dedup();
    keys.len()
}

fn nearest<F: Scalar>(p: &[F], centroids: &[Vec<F>]) -> (usize, F) {
    let mut best = 0;
    let mut best_d = sq_dist(p, &centroids[0]);
    for (c, cen) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(p, cen);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    (best, best_d)
}

fn plus_plus_seed<F: Scalar>(points: &[Vec<F>], weights: &[F], k: usize, rng: &mut impl Rng) -> Vec<Vec<F>> {
    let total_w: f64 = weights.iter().map(|w| w.as_f64()).sum();
    let pick = |mass: &[f64], total: f64, rng: &mut dyn rand::RngCore| -> usize {
        let mut u = rng.random::<f64>() * total;
        for (i, m) in mass.iter().enumerate() {
            if u < *m {
                return i;
            }
            u -= m;
        }
        mass.iter().rposition(|m| *m > 0.0).unwrap_or(0)
    };
    let w: Vec<f64> = weights.iter().map(|w| w.as_f64()).collect();
    let mut centroids = vec![points[pick(&w, total_w, rng)].clone()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| sq_dist(p, &centroids[0]).as_f64())
        .collect();
    while centroids.len() < k {
        let mass: Vec<f64> = d2.iter().zip(&w).map(|(d, w)| d * w).collect();
        let total: f64 = mass.iter().sum();
        let idx = if total > 0.0 {
            pick(&mass, total, rng)
        } else {
            // every point coincides with a centroid; take the first uncovered
            points
                .iter()
                .position(|p| centroids.iter().all(|c| c != p))
                .unwrap_or(0)
        };
        let c = points[idx].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c).as_f64());
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd<F: Scalar>(points: &[Vec<F>], weights: &[F], k: usize, params: &KMeansParams, seed: u64) -> KMeansResult<F> {
    let mut rng = rng_from_seed(seed);
    let dim = points[0].len();
    let mut centroids = plus_plus_seed(points, weights, k, &mut rng);
    let mut assignment = vec![0; points.len()];
    let tol = F::of(params.tol);
    for _ in 0..params.max_iter {
        for (a, p) in assignment.iter_mut().zip(points) {
            *a = nearest(p, &centroids).0;
        }
        let mut sums = vec![vec![F::zero(); dim]; k];
        let mut mass = vec![F::zero(); k];
        for ((p, &a), &w) in points.iter().zip(&assignment).zip(weights) {
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s = *s + *v * w;
            }
            mass[a] = mass[a] + w;
        }
        let mut shift = F::zero();
        for c in 0..k {
            // empty clusters keep their centroid
            if mass[c] > F::zero() {
                let new: Vec<F> = sums[c].iter().map(|s| *s / mass[c]).collect();
                shift = shift.max(sq_dist(&new, &centroids[c]).sqrt());
                centroids[c] = new;
            }
        }
        if shift < tol {
            break;
        }
    }
    let mut distortion = F::zero();
    for ((a, p), &w) in assignment.iter_mut().zip(points).zip(weights) {
        let (c, d) = nearest(p, &centroids);
        *a = c;
        distortion = distortion + d * w;
    }
    KMeansResult {
        k,
        centroids,
        assignment,
        distortion,
    }
}

fn sort_centroids_1d<F: Scalar>(r: &mut KMeansResult<F>) {
    let mut order: Vec<usize> = (0..r.k).collect();
    order.sort_by(|&a, &b| r.centroids[a][0].partial_cmp(&r.centroids[b][0]).expect("finite centroid"));
    let mut rank = vec![0; r.k];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }
    r.centroids = order.iter().map(|&o| r.centroids[o].clone()).collect();
    for a in &mut r.assignment {
        *a = rank[*a];
    }
}

/// Outcome of the elbow search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct ElbowResult<F> {
    pub k: usize,
    /// `curve[i]` is the distortion for `k = i + 1`.
    pub curve: Vec<F>,
    pub warning: Option<String>,
}

/// Knee of a distortion curve (`curve[i]` for `k = i + 1`).
///
/// Both axes are normalized to [0,1]; the knee is the interior point with
/// the largest perpendicular distance to the chord joining the first and
/// last points, earliest k on ties. A flat curve yields `k = 1`.
pub fn knee<F: Scalar>(curve: &[F]) -> (usize, Option<String>) {
    let n = curve.len();
    if n == 0 {
        return (1, Some("empty distortion curve".into()));
    }
    let first = curve[0].as_f64();
    let last = curve[n - 1].as_f64();
    if n < 3 || !(first > last) {
        let warn = if first <= last {
            "distortion curve is flat; choosing k = 1"
        } else {
            "fewer than three curve points; choosing k = 1"
        };
        log::warn!("{warn}");
        return (1, Some(warn.into()));
    }
    let span = (n - 1) as f64;
    let mut best_k = 2;
    let mut best_d = f64::NEG_INFINITY;
    for (i, d) in curve.iter().enumerate().take(n - 1).skip(1) {
        let x = i as f64 / span;
        let y = (d.as_f64() - last) / (first - last);
        // chord runs from (0, 1) to (1, 0); points of a convex curve sit below it
        let dist = (1.0 - x - y) / std::f64::consts::SQRT_2;
        if dist > best_d {
            best_d = dist;
            best_k = i + 1;
        }
    }
    (best_k, None)
}

/// Distortion curve for `k = 1..=k_max` and its knee.
pub fn elbow<F: Scalar>(
    points: &[Vec<F>],
    weights: &[F],
    k_max: usize,
    params: &KMeansParams,
) -> Result<ElbowResult<F>> {
    if k_max < 3 {
        return Err(Error::config(format!("k_max must be at least 3, got {k_max}")));
    }
    let distinct = distinct_points(points);
    if distinct == 1 {
        let warn = "all points identical; choosing k = 1".to_string();
        log::warn!("{warn}");
        return Ok(ElbowResult {
            k: 1,
            curve: vec![F::zero()],
            warning: Some(warn),
        });
    }
    if k_max > distinct {
        return Err(Error::TooFewDistinct { k: k_max, distinct });
    }
    let curve = (1..=k_max)
        .map(|k| kmeans_weighted(points, weights, k, params).map(|r| r.distortion))
        .collect::<Result<Vec<_>>>()?;
    let (k, warning) = knee(&curve);
    Ok(ElbowResult { k, curve, warning })
}

/// Space in which counts are clustered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountScale {
    Linear,
    /// Natural log of the count.
    #[default]
    Log,
}

impl CountScale {
    fn apply(self, count: u32) -> f64 {
        match self {
            CountScale::Linear => f64::from(count),
            CountScale::Log => f64::from(count).ln(),
        }
    }
}

/// Frequency table of counts as weighted 1-D points, ascending.
pub fn count_points(counts: &[u32], scale: CountScale) -> (Vec<u32>, Vec<Vec<f64>>, Vec<f64>) {
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let mut values = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for c in sorted {
        if values.last() == Some(&c) {
            *weights.last_mut().expect("paired with values") += 1.0;
        } else {
            values.push(c);
            weights.push(1.0);
        }
    }
    let points = values.iter().map(|&v| vec![scale.apply(v)]).collect();
    (values, points, weights)
}

/// Integer thresholds splitting counts into demand levels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemandLabeler {
    /// Ascending; a count `c` falls in the first level whose threshold is
    /// `>= c`, or the last level when it exceeds every threshold.
    pub boundaries: Vec<u32>,
    #[serde(default)]
    pub scale: CountScale,
}

impl DemandLabeler {
    pub fn new(boundaries: Vec<u32>) -> Result<Self> {
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("labeler boundaries must be strictly ascending"));
        }
        Ok(DemandLabeler {
            boundaries,
            scale: CountScale::default(),
        })
    }

    pub fn levels(&self) -> usize {
        self.boundaries.len() + 1
    }

    /// Level index of a daily count.
    pub fn label(&self, count: u32) -> Result<usize> {
        if count < 1 {
            return Err(Error::input("counts below 1 have no demand level"));
        }
        Ok(self
            .boundaries
            .iter()
            .position(|&t| count <= t)
            .unwrap_or(self.boundaries.len()))
    }

    pub fn level(&self, count: u32) -> Result<DemandLevel> {
        let i = self.label(count)?;
        DemandLevel::from_index(i).ok_or_else(|| Error::config(format!("labeler has {} levels", self.levels())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelerConfig {
    pub k: usize,
    pub scale: CountScale,
    pub kmeans: KMeansParams,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        LabelerConfig {
            k: 3,
            scale: CountScale::Log,
            kmeans: KMeansParams::default(),
        }
    }
}

/// Fits demand-level thresholds to observed daily counts.
///
/// Clusters the frequency-weighted count values, orders clusters by
/// centroid and places each threshold at the largest count of the lower
/// cluster.
pub fn fit_labeler(counts: &[u32], cfg: &LabelerConfig) -> Result<DemandLabeler> {
    if counts.is_empty() {
        return Err(Error::input("cannot fit a labeler to zero counts"));
    }
    if counts.contains(&0) {
        return Err(Error::input("counts must be at least 1"));
    }
    let (values, points, weights) = count_points(counts, cfg.scale);
    if values.len() < cfg.k {
        return Err(Error::TooFewDistinct {
            k: cfg.k,
            distinct: values.len(),
        });
    }
    let result = kmeans_weighted(&points, &weights, cfg.k, &cfg.kmeans)?;
    let mut maxima = vec![0u32; cfg.k];
    for (v, &a) in values.iter().zip(&result.assignment) {
        maxima[a] = maxima[a].max(*v);
    }
    // 1-D clusters are contiguous in sorted order, so maxima ascend
    let boundaries = maxima[..cfg.k - 1].to_vec();
    let mut labeler = DemandLabeler::new(boundaries)?;
    labeler.scale = cfg.scale;
    Ok(labeler)
}

/// Curve and knee for counts, with `k_max` capped at the distinct values.
pub fn count_elbow(counts: &[u32], k_max: usize, scale: CountScale, params: &KMeansParams) -> Result<ElbowResult<f64>> {
    let (values, points, weights) = count_points(counts, scale);
    let cap = k_max.min(values.len()).max(1);
    if cap < 3 {
        let warn = format!("only {} distinct counts; no elbow to detect", values.len());
        log::warn!("{warn}");
        return Ok(ElbowResult {
            k: values.len().max(1),
            curve: Vec::new(),
            warning: Some(warn),
        });
    }
    elbow(&points, &weights, cap, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn two_well_separated_groups() {
        let r = kmeans(&pts(&[0.0, 0.0, 1.0, 10.0, 10.0, 11.0]), 2, &KMeansParams::default()).unwrap();
        assert_eq!(r.assignment, vec![0, 0, 0, 1, 1, 1]);
        assert!((r.centroids[0][0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.centroids[1][0] - 31.0 / 3.0).abs() < 1e-12);
        // 2 * (1/3)^2 + (2/3)^2 per group
        assert!((r.distortion - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn k_equal_to_points_has_zero_distortion() {
        let r = kmeans(&pts(&[3.0, -1.0, 7.5, 2.0]), 4, &KMeansParams::default()).unwrap();
        assert_eq!(r.distortion, 0.0);
        assert_eq!(r.centroids, pts(&[-1.0, 2.0, 3.0, 7.5]));
    }

    #[test]
    fn same_seed_same_result() {
        let p = pts(&[1.0, 2.0, 2.5, 9.0, 9.5, 20.0, 21.0]);
        let params = KMeansParams {
            seed: 9,
            ..Default::default()
        };
        assert_eq!(kmeans(&p, 3, &params).unwrap(), kmeans(&p, 3, &params).unwrap());
    }

    #[test]
    fn too_many_clusters_is_an_error() {
        let err = kmeans(&pts(&[1.0, 1.0, 2.0]), 3, &KMeansParams::default()).unwrap_err();
        assert!(matches!(err, Error::TooFewDistinct { k: 3, distinct: 2 }));
    }

    #[test]
    fn weights_match_replication() {
        let params = KMeansParams::default();
        let replicated = kmeans(&pts(&[1.0, 1.0, 1.0, 2.0, 6.0, 6.0, 7.0]), 2, &params).unwrap();
        let weighted = kmeans_weighted(&pts(&[1.0, 2.0, 6.0, 7.0]), &[3.0, 1.0, 2.0, 1.0], 2, &params).unwrap();
        assert!((replicated.distortion - weighted.distortion).abs() < 1e-12);
        assert_eq!(replicated.centroids, weighted.centroids);
    }

    #[test]
    fn two_dimensional_points_cluster() {
        let p: Vec<Vec<f64>> = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![10.0, 10.0], vec![10.0, 11.0]];
        let r = kmeans(&p, 2, &KMeansParams::default()).unwrap();
        assert_eq!(r.assignment[0], r.assignment[1]);
        assert_eq!(r.assignment[2], r.assignment[3]);
        assert_ne!(r.assignment[0], r.assignment[2]);
        assert!((r.distortion - 1.0).abs() < 1e-12);
    }

    #[test]
    fn knee_of_injected_curve() {
        // normalized chord distances: k2 0.432, k3 0.466, k4 0.239 (times 1/sqrt 2)
        assert_eq!(knee(&[100.0, 40.0, 15.0, 13.0, 12.0]).0, 3);
    }

    #[test]
    fn identical_points_give_one_cluster() {
        let r = elbow(&pts(&[4.0; 6]), &[1.0; 6], 5, &KMeansParams::default()).unwrap();
        assert_eq!(r.k, 1);
        assert!(r.warning.is_some());
    }

    #[test]
    fn flat_curve_gives_one_cluster() {
        let (k, warn) = knee(&[5.0, 5.0, 5.0, 5.0]);
        assert_eq!(k, 1);
        assert!(warn.is_some());
    }

    #[test]
    fn elbow_rejects_small_k_max() {
        assert!(elbow(&pts(&[1.0, 2.0, 3.0]), &[1.0; 3], 2, &KMeansParams::default()).is_err());
        assert!(matches!(
            elbow(&pts(&[1.0, 2.0, 3.0]), &[1.0; 3], 4, &KMeansParams::default()),
            Err(Error::TooFewDistinct { .. })
        ));
    }

    #[test]
    fn labeler_thresholds() {
        let l = DemandLabeler::new(vec![1, 5]).unwrap();
        assert_eq!(l.level(1).unwrap(), DemandLevel::Low);
        assert_eq!(l.level(5).unwrap(), DemandLevel::Medium);
        assert_eq!(l.level(6).unwrap(), DemandLevel::High);
        assert_eq!(l.level(35).unwrap(), DemandLevel::High);
        let d = DemandLabeler::new(vec![1, 2]).unwrap();
        assert_eq!(d.level(11).unwrap(), DemandLevel::High);
        assert!(l.label(0).is_err());
        assert!(DemandLabeler::new(vec![5, 1]).is_err());
    }

    #[test]
    fn fit_labeler_on_small_counts() {
        // clusters {1,1}, {2,2}, {9,9} on both scales
        for scale in [CountScale::Linear, CountScale::Log] {
            let cfg = LabelerConfig {
                scale,
                ..Default::default()
            };
            let l = fit_labeler(&[1, 1, 2, 2, 9, 9], &cfg).unwrap();
            assert_eq!(l.boundaries, vec![1, 2]);
        }
    }

    #[test]
    fn fit_labeler_needs_enough_distinct_counts() {
        assert!(matches!(
            fit_labeler(&[1, 1, 2], &LabelerConfig::default()),
            Err(Error::TooFewDistinct { k: 3, distinct: 2 })
        ));
        assert!(fit_labeler(&[], &LabelerConfig::default()).is_err());
    }

    #[test]
    fn count_points_tabulates_frequencies() {
        let (v, p, w) = count_points(&[3, 1, 1, 3, 3, 7], CountScale::Linear);
        assert_eq!(v, vec![1, 3, 7]);
        assert_eq!(p, pts(&[1.0, 3.0, 7.0]));
        assert_eq!(w, vec![2.0, 3.0, 1.0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn assignments_are_nearest_centroid(xs in proptest::collection::vec(-50.0f64..50.0, 4..30), k in 1usize..4) {
                let p = pts(&xs);
                prop_assume!(distinct_points(&p) >= k);
                let r = kmeans(&p, k, &KMeansParams::default()).unwrap();
                for (pt, &a) in p.iter().zip(&r.assignment) {
                    let own = sq_dist(pt, &r.centroids[a]);
                    for c in &r.centroids {
                        prop_assert!(own <= sq_dist(pt, c));
                    }
                }
                prop_assert!(r.distortion >= 0.0);
                prop_assert!(r.centroids.windows(2).all(|w| w[0][0] <= w[1][0]));
            }

            #[test]
            fn labels_are_monotone(counts in proptest::collection::vec(1u32..40, 6..80)) {
                let cfg = LabelerConfig::default();
                if let Ok(l) = fit_labeler(&counts, &cfg) {
                    let mut prev = 0;
                    for c in 1..60 {
                        let lv = l.label(c).unwrap();
                        prop_assert!(lv >= prev);
                        prev = lv;
                    }
                }
            }

            #[test]
            fn distortion_curve_is_non_increasing(xs in proptest::collection::vec(0.0f64..100.0, 8..25)) {
                let p = pts(&xs);
                prop_assume!(distinct_points(&p) >= 6);
                let w = vec![1.0; p.len()];
                let r = elbow(&p, &w, 6, &KMeansParams { restarts: 10, ..Default::default() }).unwrap();
                for pair in r.curve.windows(2) {
                    prop_assert!(pair[1] <= pair[0] + 1e-9);
                }
            }
        }
    }
}
