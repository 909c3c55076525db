//! Tree ensembles and nearest neighbours.

pub mod bagging;
pub mod forest;
pub mod knn;
pub mod tree;

pub use bagging::{BaggedMember, Bagging, BaggingConfig, BaseEstimator, BaseModel};
pub use forest::{ForestConfig, RandomForest};
pub use knn::{Knn, KnnConfig};
pub use tree::{impurity, Criterion, DecisionTree, MaxFeatures, Node, SampleBound, TreeConfig};
