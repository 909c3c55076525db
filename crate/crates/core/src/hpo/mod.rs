//! Hyperparameter search: TPE proposals scored by stratified k-fold
//! cross-validation, minimizing negative accuracy.

pub mod cv;
pub mod space;
pub mod tpe;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{derive_seed, rng_from_seed, LabeledDataset, Learner};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use cv::{kfold_cv, stratified_folds};
pub use space::{Condition, Config, Dimension, DimensionSpec, ParamValue, SearchSpace};
pub use tpe::{tpe_suggest, BandwidthRule, TpeParams};

pub const DEFAULT_MAX_ITERATIONS: usize = 150;
pub const DEFAULT_FOLDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub config: Config,
    /// Negative mean CV accuracy; 0 for failed trials.
    pub objective: f64,
    pub status: TrialStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Omitted unless requested, so logs of equal-seed runs stay identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_secs: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOptions {
    pub max_iterations: usize,
    pub folds: usize,
    pub tpe: TpeParams,
    #[serde(default)]
    pub record_wall_time: bool,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            folds: DEFAULT_FOLDS,
            tpe: TpeParams::default(),
            record_wall_time: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub best_index: usize,
    pub best_config: Config,
    pub best_objective: f64,
    pub trials: Vec<TrialRecord>,
}

impl OptimizeResult {
    pub fn best_accuracy(&self) -> f64 {
        -self.best_objective
    }

    /// Running minimum of the objective after each trial.
    pub fn incumbent_trace(&self) -> Vec<f64> {
        self.trials
            .iter()
            .scan(f64::INFINITY, |best, t| {
                *best = best.min(t.objective);
                Some(*best)
            })
            .collect()
    }
}

/// Runs the TPE loop. `build` turns a sampled configuration into a learner;
/// `sink` sees each trial as soon as it completes.
pub fn optimize<F, B, S>(
    space: &SearchSpace,
    d: &LabeledDataset<F>,
    build: B,
    opts: &OptimizeOptions,
    mut sink: S,
) -> Result<OptimizeResult>
where
    F: Scalar,
    B: Fn(&Config) -> Result<Box<dyn Learner<F>>>,
    S: FnMut(&TrialRecord) -> Result<()>,
{
    opts.tpe.validate()?;
    if opts.max_iterations == 0 {
        return Err(Error::config("max_iterations must be at least 1"));
    }
    if opts.tpe.n_startup >= opts.max_iterations {
        log::info!("n_startup covers every iteration; the search is pure random sampling");
    }
    let seed = opts.tpe.seed;
    let cv_seed = derive_seed(seed, u64::MAX);
    let mut trials: Vec<TrialRecord> = Vec::with_capacity(opts.max_iterations);
    for index in 0..opts.max_iterations {
        let mut rng = rng_from_seed(derive_seed(seed, index as u64));
        let config = tpe_suggest(&trials, space, &opts.tpe, &mut rng)?;
        let start = Instant::now();
        let outcome = build(&config).and_then(|learner| kfold_cv(d, learner.as_ref(), opts.folds, cv_seed));
        let wall_time_secs = opts.record_wall_time.then(|| start.elapsed().as_secs_f64());
        let record = match outcome {
            Ok(acc) if acc.is_finite() => TrialRecord {
                index,
                config,
                objective: -acc,
                status: TrialStatus::Ok,
                error: None,
                wall_time_secs,
            },
            Ok(acc) => failed(index, config, format!("non-finite accuracy {acc}"), wall_time_secs),
            Err(e) => failed(index, config, e.to_string(), wall_time_secs),
        };
        if let Some(e) = &record.error {
            log::warn!("trial {index} failed: {e}");
        }
        sink(&record)?;
        trials.push(record);
    }
    let best = trials
        .iter()
        .filter(|t| t.status == TrialStatus::Ok)
        .min_by(|a, b| a.objective.total_cmp(&b.objective).then(a.index.cmp(&b.index)));
    match best {
        Some(b) => Ok(OptimizeResult {
            best_index: b.index,
            best_config: b.config.clone(),
            best_objective: b.objective,
            trials,
        }),
        None => Err(Error::AllTrialsFailed {
            trials: trials.len(),
            first_error: trials
                .first()
                .and_then(|t| t.error.clone())
                .unwrap_or_default(),
        }),
    }
}

fn failed(index: usize, config: Config, error: String, wall_time_secs: Option<f64>) -> TrialRecord {
    TrialRecord {
        index,
        config,
        objective: 0.0,
        status: TrialStatus::Failed,
        error: Some(error),
        wall_time_secs,
    }
}

/// Writes trials as JSON lines.
pub fn write_trial_log<W: std::io::Write>(mut w: W, trials: &[TrialRecord]) -> Result<()> {
    for t in trials {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
