//! Interpretable demand-level modelling for on-demand transit.
//!
//! The pipeline aggregates trip logs into daily zone-level production and
//! distribution counts, discretizes the counts into low/medium/high demand
//! levels with k-means, trains and tunes four classifier families (random
//! forest, bagging, a one-hidden-layer ANN and a deeper DNN) and explains
//! their predictions with exactly enumerated Shapley values.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix the pipeline's working precision to `f64`.

pub mod cli;
pub mod cluster;
pub mod data;
pub mod error;
pub mod eval;
pub mod explain;
pub mod fixtures;
pub mod hpo;
pub mod ingest;
pub mod model;
pub mod neural;
pub mod scalar;
pub mod synth;
pub mod trees;

pub use data::{
    Classifier, DemandLevel, FeatureKind, FeatureMeta, LabeledDataset, Learner, ScalerState, ScalingKind,
    TripContext, TripRecord, ZoneId, ZoneProfile, NUM_CLASSES,
};
pub use error::{Error, Result};
pub use scalar::Scalar;

/// Working precision of the pipeline.
pub type Real = f64;
pub type Dataset = LabeledDataset<Real>;
pub type Scaler = ScalerState<Real>;
pub type KMeansResult = cluster::KMeansResult<Real>;
