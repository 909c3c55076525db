//! The four model families, their search spaces and serializable fitted
//! models.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Classifier, LabeledDataset, Learner, ScalingKind, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::hpo::space::{get_cat, get_int, get_real};
use crate::hpo::{Config, Dimension, SearchSpace};
use crate::neural::{Activation, FittedMlp, Initializer, MlpConfig, Optimizer, OutputActivation};
use crate::scalar::Scalar;
use crate::trees::{
    Bagging, BaggingConfig, BaseEstimator, Criterion, ForestConfig, MaxFeatures, RandomForest, SampleBound, TreeConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    #[serde(rename = "rf")]
    RandomForest,
    Bagging,
    Ann,
    Dnn,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 4] = [
        ModelFamily::RandomForest,
        ModelFamily::Bagging,
        ModelFamily::Ann,
        ModelFamily::Dnn,
    ];

    pub fn key(self) -> &'static str {
        match self {
            ModelFamily::RandomForest => "rf",
            ModelFamily::Bagging => "bagging",
            ModelFamily::Ann => "ann",
            ModelFamily::Dnn => "dnn",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ModelFamily::RandomForest => "RF",
            ModelFamily::Bagging => "Bagging",
            ModelFamily::Ann => "ANN",
            ModelFamily::Dnn => "DNN",
        }
    }

    pub fn search_space(self) -> SearchSpace {
        let built = match self {
            ModelFamily::RandomForest => rf_space(),
            ModelFamily::Bagging => bagging_space(),
            ModelFamily::Ann => mlp_space(false),
            ModelFamily::Dnn => mlp_space(true),
        };
        built.expect("built-in search spaces are well formed")
    }

    /// Translates a sampled configuration into a model spec.
    pub fn spec_from_config(self, cfg: &Config) -> Result<ModelSpec> {
        self.search_space().validate_config(cfg)?;
        Ok(match self {
            ModelFamily::RandomForest => ModelSpec::RandomForest(ForestConfig {
                n_estimators: get_int(cfg, "n_estimators")? as usize,
                tree: tree_from(cfg)?,
            }),
            ModelFamily::Bagging => {
                let base = match get_cat(cfg, "base_estimator")? {
                    "knn" => BaseEstimator::knn(get_int(cfg, "n_neighbors")? as usize),
                    _ => BaseEstimator::forest(),
                };
                ModelSpec::Bagging(BaggingConfig {
                    base,
                    n_estimators: get_int(cfg, "n_estimators")? as usize,
                    max_features: get_real(cfg, "max_features")?,
                    max_samples: get_real(cfg, "max_samples")?,
                    bootstrap: get_cat(cfg, "bootstrap")? == "true",
                    bootstrap_features: get_cat(cfg, "bootstrap_features")? == "true",
                })
            }
            ModelFamily::Ann => ModelSpec::Ann(mlp_from(cfg, 1)?),
            ModelFamily::Dnn => ModelSpec::Dnn(mlp_from(cfg, get_int(cfg, "hidden_layers")? as usize)?),
        })
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rf" | "random_forest" | "randomforest" => Ok(ModelFamily::RandomForest),
            "bagging" => Ok(ModelFamily::Bagging),
            "ann" => Ok(ModelFamily::Ann),
            "dnn" => Ok(ModelFamily::Dnn),
            _ => Err(Error::config(format!("unknown model family `{s}` (expected rf, bagging, ann or dnn)"))),
        }
    }
}

/// Which of the two demand models a configuration belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Production,
    Distribution,
}

impl Target {
    pub fn key(self) -> &'static str {
        match self {
            Target::Production => "production",
            Target::Distribution => "distribution",
        }
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "production" => Ok(Target::Production),
            "distribution" => Ok(Target::Distribution),
            _ => Err(Error::config(format!("unknown target `{s}` (expected production or distribution)"))),
        }
    }
}

fn bool_dim() -> Dimension {
    Dimension::categorical(["true", "false"])
}

fn rf_space() -> Result<SearchSpace> {
    SearchSpace::new()
        .add("n_estimators", Dimension::UniformInt { lo: 10, hi: 300 })?
        .add("criterion", Dimension::categorical(["gini", "entropy"]))?
        .add("max_depth", Dimension::UniformInt { lo: 2, hi: 200 })?
        .add("max_features", Dimension::categorical(["sqrt", "all"]))?
        .add("min_samples_leaf", Dimension::LogUniformReal { lo: 0.001, hi: 0.05 })?
        .add("min_samples_split", Dimension::LogUniformReal { lo: 0.001, hi: 0.05 })
}

fn bagging_space() -> Result<SearchSpace> {
    SearchSpace::new()
        .add("base_estimator", Dimension::categorical(["knn", "random_forest"]))?
        .add_conditional("n_neighbors", Dimension::UniformInt { lo: 1, hi: 30 }, "base_estimator", &["knn"])?
        .add("n_estimators", Dimension::UniformInt { lo: 10, hi: 300 })?
        .add("max_features", Dimension::UniformReal { lo: 0.1, hi: 1.0 })?
        .add("max_samples", Dimension::UniformReal { lo: 0.1, hi: 1.0 })?
        .add("bootstrap", bool_dim())?
        .add("bootstrap_features", bool_dim())
}

fn mlp_space(deep: bool) -> Result<SearchSpace> {
    let mut s = SearchSpace::new()
        .add("hidden_activation", Dimension::categorical(["tanh", "relu"]))?
        .add("output_activation", Dimension::categorical(["softmax", "sigmoid"]))?
        .add("initializer", Dimension::categorical(["glorot_uniform", "uniform", "normal"]))?
        .add("dropout_rate", Dimension::categorical(["0.0", "0.1", "0.2", "0.3", "0.4", "0.5"]))?
        .add("weight_constraint", Dimension::categorical(["0", "1", "2", "3", "4", "5"]))?
        .add("neurons", Dimension::UniformInt { lo: 5, hi: 50 })?
        .add("batch_size", Dimension::categorical(["10", "20", "40"]))?
        .add("epochs", Dimension::categorical(["100", "150", "300", "500"]))?
        .add("optimizer", Dimension::categorical(["adam", "adadelta"]))?;
    if deep {
        s = s.add("hidden_layers", Dimension::UniformInt { lo: 2, hi: 8 })?;
    }
    Ok(s)
}

fn tree_from(cfg: &Config) -> Result<TreeConfig> {
    Ok(TreeConfig {
        criterion: match get_cat(cfg, "criterion")? {
            "entropy" => Criterion::Entropy,
            _ => Criterion::Gini,
        },
        max_depth: Some(get_int(cfg, "max_depth")? as usize),
        max_features: match get_cat(cfg, "max_features")? {
            "sqrt" => MaxFeatures::Sqrt,
            _ => MaxFeatures::All,
        },
        min_samples_leaf: SampleBound::Fraction(get_real(cfg, "min_samples_leaf")?),
        min_samples_split: SampleBound::Fraction(get_real(cfg, "min_samples_split")?),
    })
}

fn mlp_from(cfg: &Config, hidden_layers: usize) -> Result<MlpConfig> {
    Ok(MlpConfig {
        hidden_layers,
        neurons_per_hidden: get_int(cfg, "neurons")? as usize,
        hidden_activation: match get_cat(cfg, "hidden_activation")? {
            "relu" => Activation::Relu,
            _ => Activation::Tanh,
        },
        output_activation: match get_cat(cfg, "output_activation")? {
            "sigmoid" => OutputActivation::Sigmoid,
            _ => OutputActivation::Softmax,
        },
        initializer: match get_cat(cfg, "initializer")? {
            "uniform" => Initializer::Uniform,
            "normal" => Initializer::Normal,
            _ => Initializer::GlorotUniform,
        },
        dropout_rate: get_real(cfg, "dropout_rate")?,
        max_norm: get_real(cfg, "weight_constraint")?,
        batch_size: get_real(cfg, "batch_size")? as usize,
        epochs: get_real(cfg, "epochs")? as usize,
        optimizer: match get_cat(cfg, "optimizer")? {
            "adadelta" => Optimizer::Adadelta,
            _ => Optimizer::Adam,
        },
        ..MlpConfig::default()
    })
}

/// A trainable configuration of one family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "family", content = "config")]
pub enum ModelSpec {
    #[serde(rename = "rf")]
    RandomForest(ForestConfig),
    Bagging(BaggingConfig),
    Ann(MlpConfig),
    Dnn(MlpConfig),
}

impl ModelSpec {
    pub fn family(&self) -> ModelFamily {
        match self {
            ModelSpec::RandomForest(_) => ModelFamily::RandomForest,
            ModelSpec::Bagging(_) => ModelFamily::Bagging,
            ModelSpec::Ann(_) => ModelFamily::Ann,
            ModelSpec::Dnn(_) => ModelFamily::Dnn,
        }
    }

    /// Reference configuration for a family and target; used when no tuned
    /// spec is available.
    pub fn reference(family: ModelFamily, target: Target) -> Self {
        let prod = target == Target::Production;
        match family {
            ModelFamily::RandomForest => ModelSpec::RandomForest(if prod {
                ForestConfig {
                    n_estimators: 150,
                    tree: TreeConfig {
                        criterion: Criterion::Gini,
                        max_depth: Some(150),
                        max_features: MaxFeatures::Sqrt,
                        min_samples_leaf: SampleBound::Fraction(0.005362),
                        min_samples_split: SampleBound::Fraction(0.013786),
                    },
                }
            } else {
                ForestConfig {
                    n_estimators: 50,
                    tree: TreeConfig {
                        criterion: Criterion::Entropy,
                        max_depth: Some(40),
                        max_features: MaxFeatures::Sqrt,
                        min_samples_leaf: SampleBound::Fraction(0.0036382),
                        min_samples_split: SampleBound::Fraction(0.00452197),
                    },
                }
            }),
            ModelFamily::Bagging => ModelSpec::Bagging(if prod {
                BaggingConfig {
                    base: BaseEstimator::knn(crate::trees::knn::DEFAULT_K),
                    n_estimators: 70,
                    max_features: 0.513365,
                    max_samples: 0.9265818,
                    bootstrap: true,
                    bootstrap_features: false,
                }
            } else {
                BaggingConfig {
                    base: BaseEstimator::forest(),
                    n_estimators: 200,
                    max_features: 0.307943,
                    max_samples: 0.210654,
                    bootstrap: false,
                    bootstrap_features: false,
                }
            }),
            ModelFamily::Ann => ModelSpec::Ann(if prod {
                MlpConfig {
                    hidden_layers: 1,
                    neurons_per_hidden: 22,
                    hidden_activation: Activation::Tanh,
                    output_activation: OutputActivation::Softmax,
                    initializer: Initializer::GlorotUniform,
                    batch_size: 10,
                    epochs: 500,
                    optimizer: Optimizer::Adadelta,
                    ..MlpConfig::default()
                }
            } else {
                MlpConfig {
                    hidden_layers: 1,
                    neurons_per_hidden: 15,
                    hidden_activation: Activation::Relu,
                    output_activation: OutputActivation::Softmax,
                    initializer: Initializer::Uniform,
                    batch_size: 10,
                    epochs: 150,
                    optimizer: Optimizer::Adam,
                    ..MlpConfig::default()
                }
            }),
            ModelFamily::Dnn => ModelSpec::Dnn(if prod {
                MlpConfig {
                    hidden_layers: 6,
                    neurons_per_hidden: 20,
                    hidden_activation: Activation::Tanh,
                    output_activation: OutputActivation::Sigmoid,
                    initializer: Initializer::GlorotUniform,
                    batch_size: 10,
                    epochs: 100,
                    optimizer: Optimizer::Adadelta,
                    ..MlpConfig::default()
                }
            } else {
                MlpConfig {
                    hidden_layers: 4,
                    neurons_per_hidden: 15,
                    hidden_activation: Activation::Tanh,
                    output_activation: OutputActivation::Sigmoid,
                    initializer: Initializer::Normal,
                    batch_size: 20,
                    epochs: 300,
                    optimizer: Optimizer::Adam,
                    ..MlpConfig::default()
                }
            }),
        }
    }

    /// Caps MLP epochs; used to keep desk-scale runs short.
    pub fn with_max_epochs(self, cap: Option<usize>) -> Self {
        match (self, cap) {
            (ModelSpec::Ann(mut m), Some(c)) => {
                m.epochs = m.epochs.min(c.max(1));
                ModelSpec::Ann(m)
            }
            (ModelSpec::Dnn(mut m), Some(c)) => {
                m.epochs = m.epochs.min(c.max(1));
                ModelSpec::Dnn(m)
            }
            (s, _) => s,
        }
    }

    /// Sets the feature scaling of the scale-sensitive models (MLPs and
    /// k-NN bases); tree models ignore it.
    pub fn with_scaling(self, kind: ScalingKind) -> Self {
        match self {
            ModelSpec::Ann(mut m) => {
                m.scaling = kind;
                ModelSpec::Ann(m)
            }
            ModelSpec::Dnn(mut m) => {
                m.scaling = kind;
                ModelSpec::Dnn(m)
            }
            ModelSpec::Bagging(mut b) => {
                if let BaseEstimator::Knn(k) = &mut b.base {
                    k.scaling = kind;
                }
                ModelSpec::Bagging(b)
            }
            s => s,
        }
    }

    pub fn fit<F: Scalar>(&self, d: &LabeledDataset<F>, seed: u64) -> Result<FittedModel<F>> {
        Ok(match self {
            ModelSpec::RandomForest(c) => FittedModel::RandomForest(RandomForest::fit(d, c, seed)?),
            ModelSpec::Bagging(c) => FittedModel::Bagging(Bagging::fit(d, c, seed)?),
            ModelSpec::Ann(c) => FittedModel::Ann(FittedMlp::fit(d, c, seed)?),
            ModelSpec::Dnn(c) => FittedModel::Dnn(FittedMlp::fit(d, c, seed)?),
        })
    }
}

impl<F: Scalar> Learner<F> for ModelSpec {
    fn fit(&self, d: &LabeledDataset<F>, seed: u64) -> Result<Box<dyn Classifier<F>>> {
        Ok(Box::new(ModelSpec::fit(self, d, seed)?))
    }
}

/// A fitted model of any family, serializable for later evaluation and
/// explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar", rename_all = "lowercase", tag = "family", content = "model")]
pub enum FittedModel<F> {
    #[serde(rename = "rf")]
    RandomForest(RandomForest<F>),
    Bagging(Bagging<F>),
    Ann(FittedMlp<F>),
    Dnn(FittedMlp<F>),
}

impl<F: Scalar> FittedModel<F> {
    pub fn family(&self) -> ModelFamily {
        match self {
            FittedModel::RandomForest(_) => ModelFamily::RandomForest,
            FittedModel::Bagging(_) => ModelFamily::Bagging,
            FittedModel::Ann(_) => ModelFamily::Ann,
            FittedModel::Dnn(_) => ModelFamily::Dnn,
        }
    }

    fn inner(&self) -> &dyn Classifier<F> {
        match self {
            FittedModel::RandomForest(m) => m,
            FittedModel::Bagging(m) => m,
            FittedModel::Ann(m) | FittedModel::Dnn(m) => m,
        }
    }
}

impl<F: Scalar> Classifier<F> for FittedModel<F> {
    fn n_features(&self) -> usize {
        self.inner().n_features()
    }

    fn predict_proba(&self, row: &[F]) -> [F; NUM_CLASSES] {
        self.inner().predict_proba(row)
    }
}

/// Model file written by `train`: the spec, the fitted structure and the
/// feature names it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct ModelArtifact<F> {
    pub target: Target,
    pub spec: ModelSpec,
    pub feature_names: Vec<String>,
    pub seed: u64,
    pub model: FittedModel<F>,
}
