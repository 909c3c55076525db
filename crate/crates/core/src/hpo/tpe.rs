use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::space::{Config, Dimension, ParamValue, SearchSpace};
use super::{TrialRecord, TrialStatus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// `max(0.1 * range, distance to the nearest other observation)`.
    #[default]
    RangeOrNeighbour,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TpeParams {
    pub gamma: f64,
    pub n_candidates: usize,
    pub n_startup: usize,
    pub bandwidth: BandwidthRule,
    pub seed: u64,
}

impl Default for TpeParams {
    fn default() -> Self {
        TpeParams {
            gamma: 0.25,
            n_candidates: 24,
            n_startup: 20,
            bandwidth: BandwidthRule::RangeOrNeighbour,
            seed: 0,
        }
    }
}

impl TpeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config(format!("gamma must be in (0,1), got {}", self.gamma)));
        }
        if self.n_candidates == 0 {
            return Err(Error::config("n_candidates must be at least 1"));
        }
        Ok(())
    }
}

/// One-dimensional Parzen density over observed values.
enum Parzen {
    Numeric {
        centres: Vec<f64>,
        widths: Vec<f64>,
        lo: f64,
        hi: f64,
        int: bool,
    },
    Categorical {
        probs: Vec<f64>,
    },
}

const MAX_REDRAWS: usize = 16;

impl Parzen {
    fn build(dim: &Dimension, values: &[&ParamValue]) -> Self {
        match dim {
            Dimension::Categorical { options } => {
                let k = options.len() as f64;
                let n = values.len() as f64;
                let probs = options
                    .iter()
                    .map(|o| {
                        let c = values.iter().filter(|v| matches!(v, ParamValue::Cat(s) if s == o)).count();
                        (c as f64 + 1.0) / (n + k)
                    })
                    .collect();
                Parzen::Categorical { probs }
            }
            _ => {
                let (lo, hi) = dim.internal_bounds().expect("numeric dimension");
                let centres: Vec<f64> = values.iter().filter_map(|v| dim.to_internal(v)).collect();
                let floor = 0.1 * (hi - lo);
                let widths = centres
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| {
                        let nearest = centres
                            .iter()
                            .enumerate()
                            .filter(|&(j, _)| j != i)
                            .map(|(_, &o)| (o - c).abs())
                            .fold(f64::INFINITY, f64::min);
                        if nearest.is_finite() {
                            nearest.max(floor)
                        } else {
                            floor
                        }
                    })
                    .collect();
                Parzen::Numeric {
                    centres,
                    widths,
                    lo,
                    hi,
                    int: matches!(dim, Dimension::UniformInt { .. }),
                }
            }
        }
    }

    fn log_density(&self, dim: &Dimension, v: &ParamValue) -> f64 {
        match self {
            Parzen::Categorical { probs } => {
                let Dimension::Categorical { options } = dim else { unreachable!() };
                let i = options.iter().position(|o| matches!(v, ParamValue::Cat(s) if s == o));
                i.map_or(f64::NEG_INFINITY, |i| probs[i].ln())
            }
            Parzen::Numeric {
                centres,
                widths,
                lo,
                hi,
                ..
            } => {
                let u = dim.to_internal(v).unwrap_or(f64::NAN);
                if centres.is_empty() {
                    return -(hi - lo).ln();
                }
                let norm = (2.0 * std::f64::consts::PI).sqrt();
                let p = centres
                    .iter()
                    .zip(widths)
                    .map(|(&c, &w)| {
                        let z = (u - c) / w;
                        (-0.5 * z * z).exp() / (w * norm)
                    })
                    .sum::<f64>()
                    / centres.len() as f64;
                p.max(f64::MIN_POSITIVE).ln()
            }
        }
    }

    fn sample(&self, dim: &Dimension, rng: &mut impl Rng) -> ParamValue {
        match self {
            Parzen::Categorical { probs } => {
                let Dimension::Categorical { options } = dim else { unreachable!() };
                let mut r = rng.random::<f64>();
                for (o, &p) in options.iter().zip(probs) {
                    if r < p {
                        return ParamValue::Cat(o.clone());
                    }
                    r -= p;
                }
                ParamValue::Cat(options[options.len() - 1].clone())
            }
            Parzen::Numeric {
                centres,
                widths,
                lo,
                hi,
                int,
            } => {
                if centres.is_empty() {
                    return dim.sample_prior(rng);
                }
                let i = rng.random_range(0..centres.len());
                let g = Normal::new(centres[i], widths[i]).expect("positive bandwidth");
                let (lo, hi) = if *int { (*lo - 0.5, *hi + 0.5) } else { (*lo, *hi) };
                let mut u = g.sample(rng);
                for _ in 0..MAX_REDRAWS {
                    if (lo..=hi).contains(&u) {
                        break;
                    }
                    u = g.sample(rng);
                }
                dim.value_at(u.clamp(lo, hi))
            }
        }
    }
}

/// Proposes the next configuration from the trial history.
///
/// Draws from the prior until `n_startup` trials have succeeded; afterwards
/// ranks `n_candidates` draws from the good-trial density by `l(x) / g(x)`.
pub fn tpe_suggest(history: &[TrialRecord], space: &SearchSpace, params: &TpeParams, rng: &mut impl Rng) -> Result<Config> {
    params.validate()?;
    if space.is_empty() {
        return Err(Error::config("search space has no dimensions"));
    }
    let n_ok = history.iter().filter(|t| t.status == TrialStatus::Ok).count();
    if n_ok < params.n_startup || history.len() < 2 {
        return space.sample_prior(rng);
    }

    let mut ranked: Vec<&TrialRecord> = history.iter().collect();
    ranked.sort_by(|a, b| a.objective.total_cmp(&b.objective).then(a.index.cmp(&b.index)));
    let n_good = ((params.gamma * ranked.len() as f64).ceil() as usize).clamp(1, ranked.len() - 1);
    let (good, bad) = ranked.split_at(n_good);

    let densities: Vec<(Parzen, Parzen)> = space
        .dims()
        .iter()
        .map(|spec| {
            let g: Vec<&ParamValue> = good.iter().filter_map(|t| t.config.get(&spec.name)).collect();
            let b: Vec<&ParamValue> = bad.iter().filter_map(|t| t.config.get(&spec.name)).collect();
            (Parzen::build(&spec.dimension, &g), Parzen::build(&spec.dimension, &b))
        })
        .collect();

    let mut best: Option<(f64, Config)> = None;
    for _ in 0..params.n_candidates {
        let mut cand = Config::new();
        let mut score = 0.0;
        for (spec, (l, g)) in space.dims().iter().zip(&densities) {
            if !SearchSpace::is_active(spec, &cand) {
                let _ = spec.dimension.sample_prior(rng);
                continue;
            }
            let v = l.sample(&spec.dimension, rng);
            score += l.log_density(&spec.dimension, &v) - g.log_density(&spec.dimension, &v);
            cand.insert(spec.name.clone(), v);
        }
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, cand));
        }
    }
    Ok(best.expect("at least one candidate").1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{derive_seed, rng_from_seed};
    use crate::hpo::space::get_real;

    fn record(index: usize, config: Config, objective: f64) -> TrialRecord {
        TrialRecord {
            index,
            config,
            objective,
            status: TrialStatus::Ok,
            error: None,
            wall_time_secs: None,
        }
    }

    #[test]
    fn empty_history_samples_within_bounds() {
        let s = SearchSpace::new()
            .add("x", Dimension::UniformReal { lo: -1.0, hi: 1.0 })
            .unwrap()
            .add("n", Dimension::UniformInt { lo: 3, hi: 7 })
            .unwrap();
        let mut rng = rng_from_seed(1);
        for _ in 0..200 {
            let c = tpe_suggest(&[], &s, &TpeParams::default(), &mut rng).unwrap();
            s.validate_config(&c).unwrap();
        }
        assert!(tpe_suggest(&[], &SearchSpace::new(), &TpeParams::default(), &mut rng).is_err());
    }

    #[test]
    fn quadratic_minimum_is_found() {
        let s = SearchSpace::new()
            .add("x", Dimension::UniformReal { lo: -10.0, hi: 10.0 })
            .unwrap();
        let params = TpeParams::default();
        for seed in 0..5u64 {
            let mut hist = Vec::new();
            for i in 0..100 {
                let mut rng = rng_from_seed(derive_seed(seed, i as u64));
                let c = tpe_suggest(&hist, &s, &params, &mut rng).unwrap();
                let x = get_real(&c, "x").unwrap();
                hist.push(record(i, c, (x - 2.0).powi(2)));
            }
            let best = hist
                .iter()
                .map(|t| get_real(&t.config, "x").unwrap())
                .min_by(|a, b| (a - 2.0).abs().total_cmp(&(b - 2.0).abs()))
                .unwrap();
            assert!((best - 2.0).abs() < 0.2, "seed {seed}: best x {best}");
        }
    }

    #[test]
    fn degenerate_categorical_history() {
        let s = SearchSpace::new()
            .add("c", Dimension::categorical(["a", "b", "c", "d"]))
            .unwrap();
        // good quarter all "a", the rest spread over the other values
        let mut hist = Vec::new();
        for i in 0..40 {
            let v = if i < 10 { "a" } else { ["b", "c", "d"][i % 3] };
            let mut c = Config::new();
            c.insert("c".into(), ParamValue::Cat(v.into()));
            hist.push(record(i, c, if i < 10 { -1.0 } else { 0.0 }));
        }
        let params = TpeParams::default();
        let mut rng = rng_from_seed(3);
        let hits = (0..1000)
            .filter(|_| {
                let c = tpe_suggest(&hist, &s, &params, &mut rng).unwrap();
                c["c"] == ParamValue::Cat("a".into())
            })
            .count();
        assert!(hits > 900, "{hits}");
    }

    #[test]
    fn conditional_dims_follow_parent() {
        let s = SearchSpace::new()
            .add("base", Dimension::categorical(["knn", "tree"]))
            .unwrap()
            .add_conditional("k", Dimension::UniformInt { lo: 1, hi: 30 }, "base", &["knn"])
            .unwrap();
        let params = TpeParams {
            n_startup: 5,
            ..Default::default()
        };
        let mut hist = Vec::new();
        let mut rng = rng_from_seed(9);
        for i in 0..40 {
            let c = tpe_suggest(&hist, &s, &params, &mut rng).unwrap();
            s.validate_config(&c).unwrap();
            let obj = match c.get("k") {
                Some(ParamValue::Int(k)) => -(*k as f64) / 30.0,
                _ => 0.0,
            };
            hist.push(record(i, c, obj));
        }
    }
}
