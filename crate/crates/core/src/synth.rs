//! Synthetic census tables and trip logs.
//!
//! Zone demographics are independent scaled-Beta marginals matched to
//! (min, max, mean, std) targets. Daily production per zone follows a
//! Poisson or negative binomial process whose mean depends on the zone's
//! density tercile, and destinations are drawn with probability
//! proportional to `density^destination_exponent`.

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::data::{derive_seed, rng_from_seed, TripRecord, ZoneId, ZoneProfile};
use crate::error::{Error, Result};
use crate::ingest::{CensusRegistry, ServiceCalendar, STUDY_START};

const CENSUS_STREAM: u64 = 0;
const TRIP_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariableTarget {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

impl VariableTarget {
    pub const fn new(min: f64, max: f64, mean: f64, std: f64) -> Self {
        VariableTarget { min, max, mean, std }
    }

    /// Shape parameters of the Beta on `[min, max]` with this mean and std.
    pub fn beta_shape(&self, variable: &str) -> Result<(f64, f64)> {
        let bad = |reason: String| Error::InfeasibleTarget {
            variable: variable.to_string(),
            reason,
        };
        let VariableTarget { min, max, mean, std } = *self;
        if ![min, max, mean, std].iter().all(|v| v.is_finite()) {
            return Err(bad("non-finite statistic".into()));
        }
        if !(min < mean && mean < max) {
            return Err(bad(format!("mean {mean} is not strictly inside [{min}, {max}]")));
        }
        let bound = (mean - min) * (max - mean);
        if !(std > 0.0) || std * std >= bound {
            return Err(bad(format!(
                "std {std} must be positive and below {:.4} for this range and mean",
                bound.sqrt()
            )));
        }
        let m = (mean - min) / (max - min);
        let v = (std / (max - min)).powi(2);
        let c = m * (1.0 - m) / v - 1.0;
        Ok((m * c, (1.0 - m) * c))
    }
}

/// Targets for the five demographic variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CensusTargets {
    pub population_density: VariableTarget,
    pub median_income: VariableTarget,
    pub avg_household_size: VariableTarget,
    pub pct_male: VariableTarget,
    pub pct_working_age: VariableTarget,
}

impl Default for CensusTargets {
    fn default() -> Self {
        CensusTargets {
            population_density: VariableTarget::new(63.2, 8139.8, 1700.7, 1628.02),
            median_income: VariableTarget::new(24640.0, 87296.0, 49506.2, 13522.32),
            avg_household_size: VariableTarget::new(1.5, 2.8, 2.2, 0.30),
            pct_male: VariableTarget::new(37.2, 56.8, 47.2, 4.24),
            pct_working_age: VariableTarget::new(38.9, 80.7, 63.5, 8.52),
        }
    }
}

impl CensusTargets {
    /// Targets in feature-column order.
    pub fn as_array(&self) -> [VariableTarget; 5] {
        [
            self.population_density,
            self.median_income,
            self.avg_household_size,
            self.pct_male,
            self.pct_working_age,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandProcess {
    Poisson,
    #[default]
    NegativeBinomial,
}

/// Mean daily trips and negative binomial dispersion `r` (ignored by the
/// Poisson process).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneRate {
    pub mean: f64,
    pub dispersion: f64,
}

/// Rates by density tercile: lowest-density zones behave like
/// commercial/industrial areas with high outflow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneTypeRates {
    pub commercial: ZoneRate,
    pub mixed: ZoneRate,
    pub residential: ZoneRate,
}

impl Default for ZoneTypeRates {
    fn default() -> Self {
        ZoneTypeRates {
            commercial: ZoneRate { mean: 3.0, dispersion: 0.3 },
            mixed: ZoneRate { mean: 2.5, dispersion: 0.3 },
            residential: ZoneRate { mean: 1.0, dispersion: 10.0 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZoneType {
    Commercial,
    Mixed,
    Residential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_zones: usize,
    pub n_days: usize,
    pub start_date: NaiveDate,
    pub seed: u64,
    pub target_stats: CensusTargets,
    pub demand_process: DemandProcess,
    pub rates: ZoneTypeRates,
    pub weekend_multiplier: f64,
    /// Relative demand swing over the season: September runs at
    /// `1 + month_effect`, May at `1 - month_effect`.
    pub month_effect: f64,
    pub daily_cap: u32,
    pub destination_exponent: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let (y, m, d) = STUDY_START;
        SynthConfig {
            n_zones: 80,
            n_days: 254,
            start_date: NaiveDate::from_ymd_opt(y, m, d).expect("valid study date"),
            seed: 0,
            target_stats: CensusTargets::default(),
            demand_process: DemandProcess::NegativeBinomial,
            rates: ZoneTypeRates::default(),
            weekend_multiplier: 1.2,
            month_effect: 0.15,
            daily_cap: 35,
            destination_exponent: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn with_seed(seed: u64) -> Self {
        SynthConfig {
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_zones < 3 {
            return Err(Error::config(format!("n_zones must be at least 3, got {}", self.n_zones)));
        }
        if self.n_days == 0 {
            return Err(Error::config("n_days must be at least 1"));
        }
        for (t, name) in self.target_stats.as_array().iter().zip(ZoneProfile::FIELD_NAMES) {
            t.beta_shape(name)?;
        }
        for (r, name) in [
            (self.rates.commercial, "commercial"),
            (self.rates.mixed, "mixed"),
            (self.rates.residential, "residential"),
        ] {
            if !(r.mean >= 0.0 && r.mean.is_finite()) {
                return Err(Error::config(format!("{name} rate mean must be finite and >= 0")));
            }
            if self.demand_process == DemandProcess::NegativeBinomial && !(r.dispersion > 0.0 && r.dispersion.is_finite()) {
                return Err(Error::config(format!("{name} dispersion must be finite and > 0")));
            }
        }
        if !(self.weekend_multiplier >= 0.0 && self.weekend_multiplier.is_finite()) {
            return Err(Error::config("weekend_multiplier must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.month_effect) {
            return Err(Error::config("month_effect must be within [0, 1]"));
        }
        if self.daily_cap == 0 {
            return Err(Error::config("daily_cap must be at least 1"));
        }
        if !self.destination_exponent.is_finite() {
            return Err(Error::config("destination_exponent must be finite"));
        }
        let cal = self.calendar()?;
        for day in cal.days() {
            cal.context(day)?;
        }
        Ok(())
    }

    pub fn calendar(&self) -> Result<ServiceCalendar> {
        ServiceCalendar::new(self.start_date, self.start_date + Duration::days(self.n_days as i64 - 1))
    }
}

pub fn zone_id(i: usize) -> ZoneId {
    ZoneId::new(format!("DA{:03}", i + 1))
}

/// Latin-hypercube draws from each scaled Beta marginal.
pub fn generate_census(cfg: &SynthConfig) -> Result<CensusRegistry> {
    cfg.validate()?;
    let n = cfg.n_zones;
    let mut rng = rng_from_seed(derive_seed(cfg.seed, CENSUS_STREAM));
    let mut columns = Vec::with_capacity(5);
    for (t, name) in cfg.target_stats.as_array().iter().zip(ZoneProfile::FIELD_NAMES) {
        let (a, b) = t.beta_shape(name)?;
        let beta = Beta::new(a, b).map_err(|e| Error::InfeasibleTarget {
            variable: name.to_string(),
            reason: e.to_string(),
        })?;
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        let col: Vec<f64> = strata
            .iter()
            .map(|&s| {
                let u = (s as f64 + rng.random::<f64>()) / n as f64;
                let x = t.min + (t.max - t.min) * beta.inverse_cdf(u);
                round_to(x.clamp(t.min, t.max), decimals(name))
            })
            .collect();
        columns.push(col);
    }
    Ok((0..n)
        .map(|i| {
            let p = ZoneProfile {
                da_id: zone_id(i),
                population_density: columns[0][i],
                median_income: columns[1][i],
                avg_household_size: columns[2][i],
                pct_male: columns[3][i],
                pct_working_age: columns[4][i],
            };
            (p.da_id.clone(), p)
        })
        .collect())
}

fn decimals(name: &str) -> i32 {
    match name {
        "median_income" => 0,
        "avg_household_size" => 2,
        _ => 1,
    }
}

fn round_to(x: f64, places: i32) -> f64 {
    let s = 10f64.powi(places);
    (x * s).round() / s
}

/// Zone types by density tercile, lowest densities first.
pub fn zone_types(census: &CensusRegistry) -> Vec<(ZoneId, ZoneType)> {
    let mut order: Vec<&ZoneProfile> = census.values().collect();
    order.sort_by(|a, b| {
        a.population_density
            .total_cmp(&b.population_density)
            .then_with(|| a.da_id.cmp(&b.da_id))
    });
    let n = order.len();
    let third = n / 3;
    order
        .iter()
        .enumerate()
        .map(|(rank, p)| {
            let t = if rank < third {
                ZoneType::Commercial
            } else if rank < n - third {
                ZoneType::Mixed
            } else {
                ZoneType::Residential
            };
            (p.da_id.clone(), t)
        })
        .collect()
}

fn draw_count<R: Rng>(process: DemandProcess, mean: f64, dispersion: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let lambda = match process {
        DemandProcess::Poisson => mean,
        DemandProcess::NegativeBinomial => Gamma::new(dispersion, mean / dispersion)
            .expect("validated gamma parameters")
            .sample(rng),
    };
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("positive finite rate").sample(rng) as u64
}

/// One trip record per generated trip, ordered by day, then origin zone.
pub fn generate_trips(cfg: &SynthConfig, census: &CensusRegistry) -> Result<Vec<TripRecord>> {
    cfg.validate()?;
    if census.is_empty() {
        return Ok(Vec::new());
    }
    let cal = cfg.calendar()?;
    let zones: Vec<&ZoneProfile> = census.values().collect();
    let types: std::collections::BTreeMap<ZoneId, ZoneType> = zone_types(census).into_iter().collect();
    let weights: Vec<f64> = zones
        .iter()
        .map(|p| p.population_density.powf(cfg.destination_exponent))
        .collect();
    let kernel = WeightedIndex::new(&weights).map_err(|e| Error::config(format!("destination kernel: {e}")))?;
    let stream = derive_seed(cfg.seed, TRIP_STREAM);
    let days: Vec<(usize, NaiveDate)> = cal.days().enumerate().collect();
    let per_day: Vec<Vec<TripRecord>> = days
        .par_iter()
        .map(|&(i, date)| {
            let mut rng = rng_from_seed(derive_seed(stream, i as u64));
            let ctx = cal.context(date)?;
            let weekend = matches!(date.weekday(), Weekday::Sat | Weekday::Sun);
            let season = 1.0 + cfg.month_effect * (4.0 - f64::from(ctx.month_of_year - 1)) / 4.0;
            let day_factor = season * if weekend { cfg.weekend_multiplier } else { 1.0 };
            let mut trips = Vec::new();
            for p in &zones {
                let rate = match types[&p.da_id] {
                    ZoneType::Commercial => cfg.rates.commercial,
                    ZoneType::Mixed => cfg.rates.mixed,
                    ZoneType::Residential => cfg.rates.residential,
                };
                let n = draw_count(cfg.demand_process, rate.mean * day_factor, rate.dispersion, &mut rng)
                    .min(u64::from(cfg.daily_cap));
                for _ in 0..n {
                    trips.push(TripRecord {
                        origin_da: p.da_id.clone(),
                        dest_da: zones[kernel.sample(&mut rng)].da_id.clone(),
                        date,
                        riders: 1,
                    });
                }
            }
            Ok(trips)
        })
        .collect::<Result<_>>()?;
    Ok(per_day.into_iter().flatten().collect())
}

/// Sample (min, max, mean, std) of a column; std uses `n - 1`.
pub fn describe(values: &[f64]) -> Option<VariableTarget> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some(VariableTarget {
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean,
        std: var.sqrt(),
    })
}
