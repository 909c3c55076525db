//! Trip-log and census parsing, the service calendar, and aggregation into
//! daily production and distribution datasets.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::cluster::DemandLabeler;
use crate::data::{FeatureKind, FeatureMeta, LabeledDataset, TripContext, TripRecord, ZoneId, ZoneProfile};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type CensusRegistry = BTreeMap<ZoneId, ZoneProfile>;

pub const STUDY_START: (i32, u32, u32) = (2018, 9, 18);
pub const STUDY_END: (i32, u32, u32) = (2019, 5, 29);

pub const CONTEXT_FIELDS: [&str; 3] = ["hours_of_operation", "day_of_week", "month_of_year"];

/// Column names of the logical trip fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripSchema {
    pub origin_da: String,
    pub dest_da: String,
    pub date: String,
    /// Read when present in the header.
    pub riders: Option<String>,
}

impl Default for TripSchema {
    fn default() -> Self {
        TripSchema {
            origin_da: "origin_da".into(),
            dest_da: "dest_da".into(),
            date: "date".into(),
            riders: Some("riders".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    /// 1-based line in the source, header included.
    pub line: u64,
    pub raw: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub rejects: Vec<Reject>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CensusParse {
    pub profiles: CensusRegistry,
    pub rejects: Vec<Reject>,
    /// Zone ids seen more than once; the last row won.
    pub duplicates: Vec<ZoneId>,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::MissingColumn(name.to_string()))
}

fn raw_line(rec: &csv::StringRecord) -> String {
    rec.iter().collect::<Vec<_>>().join(",")
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source)
}

/// Parses a trip log. Rows with bad dates, bad rider counts or zones
/// outside `known_zones` (when given) become rejects.
pub fn parse_trips<R: Read>(
    source: R,
    schema: &TripSchema,
    known_zones: Option<&BTreeSet<ZoneId>>,
) -> Result<Parsed<TripRecord>> {
    let mut rdr = reader(source);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Ok(Parsed {
            records: Vec::new(),
            rejects: Vec::new(),
        });
    }
    let o = column(&headers, &schema.origin_da)?;
    let dcol = column(&headers, &schema.dest_da)?;
    let t = column(&headers, &schema.date)?;
    let r = schema
        .riders
        .as_deref()
        .and_then(|name| headers.iter().position(|h| h.trim() == name));
    let mut records = Vec::new();
    let mut rejects = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        match trip_from(&rec, o, dcol, t, r, known_zones) {
            Ok(trip) => records.push(trip),
            Err(reason) => rejects.push(Reject {
                line: line_of(&rec),
                raw: raw_line(&rec),
                reason,
            }),
        }
    }
    if !rejects.is_empty() {
        log::warn!("{} trip rows rejected", rejects.len());
    }
    Ok(Parsed { records, rejects })
}

fn trip_from(
    rec: &csv::StringRecord,
    o: usize,
    d: usize,
    t: usize,
    r: Option<usize>,
    known: Option<&BTreeSet<ZoneId>>,
) -> std::result::Result<TripRecord, String> {
    let field = |i: usize| rec.get(i).ok_or_else(|| format!("missing field {}", i + 1));
    let date_text = field(t)?;
    let date = NaiveDate::parse_from_str(date_text, "%Y-%m-%d").map_err(|e| format!("invalid date `{date_text}`: {e}"))?;
    let zone = |i: usize| -> std::result::Result<ZoneId, String> {
        let id = field(i)?;
        if id.is_empty() {
            return Err("empty zone id".into());
        }
        let id = ZoneId::new(id);
        match known {
            Some(k) if !k.contains(&id) => Err(format!("unknown zone `{id}`")),
            _ => Ok(id),
        }
    };
    let origin_da = zone(o)?;
    let dest_da = zone(d)?;
    let riders = match r.and_then(|i| rec.get(i)).filter(|s| !s.is_empty()) {
        None => 1,
        Some(s) => match s.parse::<u32>() {
            Ok(n) if n >= 1 => n,
            _ => return Err(format!("invalid riders `{s}`")),
        },
    };
    Ok(TripRecord {
        origin_da,
        dest_da,
        date,
        riders,
    })
}

pub fn parse_census<R: Read>(source: R) -> Result<CensusParse> {
    let mut rdr = reader(source);
    let headers = rdr.headers()?.clone();
    let id = column(&headers, "da_id")?;
    let cols = ZoneProfile::FIELD_NAMES
        .iter()
        .map(|n| column(&headers, n))
        .collect::<Result<Vec<_>>>()?;
    let mut profiles = CensusRegistry::new();
    let mut rejects = Vec::new();
    let mut duplicates = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        match profile_from(&rec, id, &cols) {
            Ok(p) => {
                if profiles.contains_key(&p.da_id) {
                    log::warn!("duplicate census row for zone `{}`; keeping the last", p.da_id);
                    duplicates.push(p.da_id.clone());
                }
                profiles.insert(p.da_id.clone(), p);
            }
            Err(reason) => rejects.push(Reject {
                line: line_of(&rec),
                raw: raw_line(&rec),
                reason,
            }),
        }
    }
    Ok(CensusParse {
        profiles,
        rejects,
        duplicates,
    })
}

fn profile_from(rec: &csv::StringRecord, id: usize, cols: &[usize]) -> std::result::Result<ZoneProfile, String> {
    let da = rec.get(id).filter(|s| !s.is_empty()).ok_or("missing da_id")?;
    let mut v = [0.0; 5];
    for (slot, (&c, name)) in v.iter_mut().zip(cols.iter().zip(ZoneProfile::FIELD_NAMES)) {
        let text = rec.get(c).ok_or_else(|| format!("missing {name}"))?;
        *slot = text
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| format!("invalid {name} `{text}`"))?;
    }
    let p = ZoneProfile {
        da_id: ZoneId::new(da),
        population_density: v[0],
        median_income: v[1],
        avg_household_size: v[2],
        pct_male: v[3],
        pct_working_age: v[4],
    };
    p.check()?;
    Ok(p)
}

/// Service days of the study window with their temporal context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceCalendar {
    pub start: NaiveDate,
    pub end: NaiveDate,
    /// Per-date hours_of_operation overrides.
    #[serde(default)]
    pub hours_overrides: BTreeMap<NaiveDate, u8>,
}

impl Default for ServiceCalendar {
    fn default() -> Self {
        let d = |(y, m, d): (i32, u32, u32)| NaiveDate::from_ymd_opt(y, m, d).expect("valid study date");
        ServiceCalendar {
            start: d(STUDY_START),
            end: d(STUDY_END),
            hours_overrides: BTreeMap::new(),
        }
    }
}

impl ServiceCalendar {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if end < start {
            return Err(Error::config(format!("calendar ends ({end}) before it starts ({start})")));
        }
        Ok(ServiceCalendar {
            start,
            end,
            hours_overrides: BTreeMap::new(),
        })
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        (self.start..=self.end).contains(&date)
    }

    pub fn n_days(&self) -> usize {
        (self.end - self.start).num_days() as usize + 1
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.start.iter_days().take(self.n_days())
    }

    pub fn context(&self, date: NaiveDate) -> Result<TripContext> {
        if !self.contains(date) {
            return Err(Error::DateOutsideCalendar(date));
        }
        let weekend = matches!(date.weekday(), Weekday::Sat | Weekday::Sun);
        let hours = self
            .hours_overrides
            .get(&date)
            .copied()
            .unwrap_or(u8::from(weekend));
        let month = (date.month() + 3) % 12 + 1;
        if month > 9 {
            return Err(Error::DateOutsideCalendar(date));
        }
        TripContext::new(hours, day_of_week(date), month as u8)
    }
}

/// 1 = Saturday ... 7 = Friday.
pub fn day_of_week(date: NaiveDate) -> u8 {
    ((date.weekday().num_days_from_monday() + 2) % 7 + 1) as u8
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductionRow {
    pub da_id: ZoneId,
    pub date: NaiveDate,
    pub context: TripContext,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub origin_da: ZoneId,
    pub dest_da: ZoneId,
    pub date: NaiveDate,
    pub context: TripContext,
    pub count: u32,
}

/// Daily trips produced by each origin zone, sorted by (zone, date).
pub fn aggregate_production(trips: &[TripRecord], calendar: &ServiceCalendar) -> Result<Vec<ProductionRow>> {
    let mut groups: BTreeMap<(&ZoneId, NaiveDate), u32> = BTreeMap::new();
    for t in trips {
        *groups.entry((&t.origin_da, t.date)).or_default() += 1;
    }
    groups
        .into_iter()
        .map(|((z, date), count)| {
            Ok(ProductionRow {
                da_id: z.clone(),
                date,
                context: calendar.context(date)?,
                count,
            })
        })
        .collect()
}

/// Daily trips per origin-destination pair, sorted by (origin, dest, date).
pub fn aggregate_distribution(
    trips: &[TripRecord],
    calendar: &ServiceCalendar,
    include_intra_zone: bool,
) -> Result<Vec<DistributionRow>> {
    let mut groups: BTreeMap<(&ZoneId, &ZoneId, NaiveDate), u32> = BTreeMap::new();
    for t in trips {
        if include_intra_zone || t.origin_da != t.dest_da {
            *groups.entry((&t.origin_da, &t.dest_da, t.date)).or_default() += 1;
        }
    }
    groups
        .into_iter()
        .map(|((o, d, date), count)| {
            Ok(DistributionRow {
                origin_da: o.clone(),
                dest_da: d.clone(),
                date,
                context: calendar.context(date)?,
                count,
            })
        })
        .collect()
}

pub fn production_feature_meta() -> Vec<FeatureMeta> {
    let mut meta: Vec<FeatureMeta> = ZoneProfile::FIELD_NAMES
        .iter()
        .map(|n| FeatureMeta::new(*n, FeatureKind::Continuous))
        .collect();
    meta.extend(context_meta());
    meta
}

pub fn distribution_feature_meta() -> Vec<FeatureMeta> {
    let mut meta = Vec::new();
    for side in ["origin", "dest"] {
        meta.extend(
            ZoneProfile::FIELD_NAMES
                .iter()
                .map(|n| FeatureMeta::new(format!("{side}_{n}"), FeatureKind::Continuous)),
        );
    }
    meta.extend(context_meta());
    meta
}

fn context_meta() -> [FeatureMeta; 3] {
    [
        FeatureMeta::new(CONTEXT_FIELDS[0], FeatureKind::Binary),
        FeatureMeta::new(CONTEXT_FIELDS[1], FeatureKind::Discrete),
        FeatureMeta::new(CONTEXT_FIELDS[2], FeatureKind::Discrete),
    ]
}

fn profile<'a>(census: &'a CensusRegistry, z: &ZoneId) -> Result<&'a ZoneProfile> {
    census.get(z).ok_or_else(|| Error::MissingProfile(z.to_string()))
}

pub fn build_production_dataset<F: Scalar>(
    rows: &[ProductionRow],
    census: &CensusRegistry,
    labeler: &DemandLabeler,
) -> Result<LabeledDataset<F>> {
    let mut features = Vec::with_capacity(rows.len() * 8);
    let mut labels = Vec::with_capacity(rows.len());
    for r in rows {
        let p = profile(census, &r.da_id)?;
        features.extend(p.values().into_iter().chain(r.context.values()).map(F::of));
        labels.push(labeler.label(r.count)?);
    }
    LabeledDataset::new(features, labels, production_feature_meta())
}

pub fn build_distribution_dataset<F: Scalar>(
    rows: &[DistributionRow],
    census: &CensusRegistry,
    labeler: &DemandLabeler,
) -> Result<LabeledDataset<F>> {
    let mut features = Vec::with_capacity(rows.len() * 13);
    let mut labels = Vec::with_capacity(rows.len());
    for r in rows {
        let o = profile(census, &r.origin_da)?;
        let d = profile(census, &r.dest_da)?;
        features.extend(
            o.values()
                .into_iter()
                .chain(d.values())
                .chain(r.context.values())
                .map(F::of),
        );
        labels.push(labeler.label(r.count)?);
    }
    LabeledDataset::new(features, labels, distribution_feature_meta())
}

pub fn write_rejects<W: Write>(w: W, rejects: &[Reject]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["line", "raw", "reason"])?;
    for r in rejects {
        out.write_record([r.line.to_string(), r.raw.clone(), r.reason.clone()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_trips<W: Write>(w: W, trips: &[TripRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["origin_da", "dest_da", "date", "riders"])?;
    for t in trips {
        out.write_record([
            t.origin_da.as_str(),
            t.dest_da.as_str(),
            &t.date.format("%Y-%m-%d").to_string(),
            &t.riders.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_census<W: Write>(w: W, census: &CensusRegistry) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["da_id"];
    header.extend(ZoneProfile::FIELD_NAMES);
    out.write_record(&header)?;
    for p in census.values() {
        let mut rec = vec![p.da_id.to_string()];
        rec.extend(p.values().iter().map(|v| v.to_string()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ProductionCsv {
    da_id: ZoneId,
    date: NaiveDate,
    hours_of_operation: u8,
    day_of_week: u8,
    month_of_year: u8,
    count: u32,
}

#[derive(Serialize, Deserialize)]
struct DistributionCsv {
    origin_da: ZoneId,
    dest_da: ZoneId,
    date: NaiveDate,
    hours_of_operation: u8,
    day_of_week: u8,
    month_of_year: u8,
    count: u32,
}

fn write_rows<W: Write, T: Serialize>(w: W, rows: impl Iterator<Item = T>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

fn count_of(count: u32) -> Result<u32> {
    if count == 0 {
        return Err(Error::input("count tables hold counts of at least 1"));
    }
    Ok(count)
}

/// Count-table CSV for production rows.
pub fn write_production_rows<W: Write>(w: W, rows: &[ProductionRow]) -> Result<()> {
    write_rows(
        w,
        rows.iter().map(|r| ProductionCsv {
            da_id: r.da_id.clone(),
            date: r.date,
            hours_of_operation: r.context.hours_of_operation,
            day_of_week: r.context.day_of_week,
            month_of_year: r.context.month_of_year,
            count: r.count,
        }),
    )
}

pub fn read_production_rows<R: Read>(r: R) -> Result<Vec<ProductionRow>> {
    csv::Reader::from_reader(r)
        .deserialize::<ProductionCsv>()
        .map(|rec| {
            let rec = rec?;
            Ok(ProductionRow {
                da_id: rec.da_id,
                date: rec.date,
                context: TripContext::new(rec.hours_of_operation, rec.day_of_week, rec.month_of_year)?,
                count: count_of(rec.count)?,
            })
        })
        .collect()
}

pub fn write_distribution_rows<W: Write>(w: W, rows: &[DistributionRow]) -> Result<()> {
    write_rows(
        w,
        rows.iter().map(|r| DistributionCsv {
            origin_da: r.origin_da.clone(),
            dest_da: r.dest_da.clone(),
            date: r.date,
            hours_of_operation: r.context.hours_of_operation,
            day_of_week: r.context.day_of_week,
            month_of_year: r.context.month_of_year,
            count: r.count,
        }),
    )
}

pub fn read_distribution_rows<R: Read>(r: R) -> Result<Vec<DistributionRow>> {
    csv::Reader::from_reader(r)
        .deserialize::<DistributionCsv>()
        .map(|rec| {
            let rec = rec?;
            Ok(DistributionRow {
                origin_da: rec.origin_da,
                dest_da: rec.dest_da,
                date: rec.date,
                context: TripContext::new(rec.hours_of_operation, rec.day_of_week, rec.month_of_year)?,
                count: count_of(rec.count)?,
            })
        })
        .collect()
}
