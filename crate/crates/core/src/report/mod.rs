//! Aggregated views over stored records: protocol panel, server geography,
//! CDN table, time series and A/B comparison.

mod render;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::delivery::{Continent, CountryTable};
use crate::protocol::Protocol;
use crate::record::{DeliveryCell, MeasurementRecord, RecordFilter, SessionStatus};

pub use render::{render, Format, RenderError};

/// Group name for resources whose server location is unknown.
pub const UNLOCATED: &str = "unlocated";

macro_rules! str_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let wanted = s.trim().replace('-', "_");
                $name::ALL
                    .iter()
                    .copied()
                    .find(|v| v.as_str().eq_ignore_ascii_case(&wanted))
                    .ok_or_else(|| {
                        let known: Vec<&str> = $name::ALL.iter().map(|v| v.as_str()).collect();
                        format!("{s:?} is not one of {}", known.join(", "))
                    })
            }
        }
    };
}

str_enum!(ReportKind {
    ProtocolPanel => "protocol_panel",
    GeoPanel => "geo_panel",
    CdnTable => "cdn_table",
    Timeseries => "timeseries",
    Compare => "compare",
});

str_enum!(GroupBy {
    Protocol => "protocol",
    Provider => "provider",
    Continent => "continent",
    Country => "country",
    City => "city",
});

str_enum!(Metric {
    Count => "count",
    Plt => "plt",
    Tfvr => "tfvr",
    Fp => "fp",
    Processing => "processing",
});

str_enum!(CompareBy {
    Browser => "browser",
    RequestedProtocol => "requested_protocol",
});

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportOptions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_by: Option<GroupBy>,
    #[serde(default = "default_metric")]
    pub metric: Metric,
    /// Time-series bucket width in whole UTC days.
    #[serde(default = "one")]
    pub bucket_days: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare_by: Option<CompareBy>,
    /// Comparison baseline; the first value in sort order when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
}

fn default_metric() -> Metric {
    Metric::Count
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            group_by: None,
            metric: Metric::Count,
            bucket_days: 1,
            compare_by: None,
            baseline: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRow {
    pub group: Option<String>,
    pub protocol: Protocol,
    pub count: u64,
    /// Share of the group's resources.
    pub fraction: f64,
    /// Mean of per-page fractions, ungrouped panels only.
    pub mean_page_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoRow {
    pub group: String,
    pub continent: Option<Continent>,
    pub country: Option<String>,
    pub city: Option<String>,
    pub latitude: Option<f64>,
    pub longitude: Option<f64>,
    pub weight: u64,
    pub providers: BTreeMap<String, u64>,
    pub protocols: BTreeMap<Protocol, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdnRow {
    pub provider: String,
    pub count: u64,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub records: u64,
    pub mean: f64,
    pub median: f64,
    pub p90: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeseriesRow {
    pub bucket_start: DateTime<Utc>,
    pub bucket_end: DateTime<Utc>,
    /// The selection does not cover the whole bucket.
    pub partial: bool,
    pub group: Option<String>,
    #[serde(flatten)]
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub value: String,
    pub baseline: bool,
    #[serde(flatten)]
    pub summary: Summary,
    pub delta_vs_baseline: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "rows", rename_all = "snake_case")]
pub enum Rows {
    ProtocolPanel(Vec<ProtocolRow>),
    GeoPanel(Vec<GeoRow>),
    CdnTable(Vec<CdnRow>),
    Timeseries(Vec<TimeseriesRow>),
    Compare(Vec<CompareRow>),
}

impl Rows {
    pub fn kind(&self) -> ReportKind {
        match self {
            Rows::ProtocolPanel(_) => ReportKind::ProtocolPanel,
            Rows::GeoPanel(_) => ReportKind::GeoPanel,
            Rows::CdnTable(_) => ReportKind::CdnTable,
            Rows::Timeseries(_) => ReportKind::Timeseries,
            Rows::Compare(_) => ReportKind::Compare,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Rows::ProtocolPanel(r) => r.len(),
            Rows::GeoPanel(r) => r.len(),
            Rows::CdnTable(r) => r.len(),
            Rows::Timeseries(r) => r.len(),
            Rows::Compare(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub filters: RecordFilter,
    pub options: ReportOptions,
    /// Records that passed the filters.
    pub record_count: u64,
    /// No record matched.
    pub empty: bool,
    pub generated_at: DateTime<Utc>,
    #[serde(flatten)]
    pub rows: Rows,
}

impl Report {
    pub fn kind(&self) -> ReportKind {
        self.rows.kind()
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReportError {
    #[error("{kind} does not support {option}")]
    UnsupportedOption { kind: ReportKind, option: String },
    #[error("bucket_days must be at least 1")]
    ZeroBucket,
    #[error("baseline {0:?} does not occur in the selection")]
    UnknownBaseline(String),
}

fn summary(mut values: Vec<f64>) -> Summary {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let quantile = |q: f64| {
        if n == 0 {
            return 0.0;
        }
        let pos = q * (n - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
    };
    Summary {
        records: n as u64,
        mean: if n == 0 {
            0.0
        } else {
            values.iter().sum::<f64>() / n as f64
        },
        median: quantile(0.5),
        p90: quantile(0.9),
    }
}

fn metric_value(r: &MeasurementRecord, metric: Metric) -> Option<f64> {
    if metric == Metric::Count {
        return (r.status != SessionStatus::Failed).then_some(r.stats.resource_count as f64);
    }
    if r.status != SessionStatus::Complete {
        return None;
    }
    let t = r.timings.as_ref()?;
    match metric {
        Metric::Count => unreachable!(),
        Metric::Plt => Some(t.page_load_time_ms),
        Metric::Tfvr => t.tfvr_ms,
        Metric::Fp => t.first_paint_ms,
        Metric::Processing => Some(t.processing_time_ms),
    }
}

fn cell_group(cell: &DeliveryCell, by: GroupBy) -> String {
    match by {
        GroupBy::Protocol => cell.protocol.as_str().to_string(),
        GroupBy::Provider => cell.provider.clone(),
        GroupBy::Continent => cell
            .continent
            .map_or(UNLOCATED.to_string(), |c| c.code().to_string()),
        GroupBy::Country => cell.country.clone().unwrap_or_else(|| UNLOCATED.to_string()),
        GroupBy::City => match (&cell.city, &cell.country) {
            (Some(city), Some(country)) => format!("{city}, {country}"),
            (None, Some(country)) => country.clone(),
            _ => UNLOCATED.to_string(),
        },
    }
}

/// Per-group resource counts of one record.
fn record_groups(r: &MeasurementRecord, by: GroupBy) -> BTreeMap<String, u64> {
    match by {
        GroupBy::Provider => r.per_provider.clone(),
        GroupBy::Continent => {
            let mut m: BTreeMap<String, u64> = r
                .per_continent
                .iter()
                .map(|(c, n)| (c.code().to_string(), *n))
                .collect();
            if r.unattributed_count > 0 {
                m.insert(UNLOCATED.to_string(), r.unattributed_count);
            }
            m
        }
        GroupBy::Protocol => r
            .distribution
            .counts
            .iter()
            .filter(|(_, n)| **n > 0)
            .map(|(p, n)| (p.as_str().to_string(), *n))
            .collect(),
        GroupBy::Country | GroupBy::City => {
            let mut m = BTreeMap::new();
            for c in &r.deliveries {
                *m.entry(cell_group(c, by)).or_default() += c.count;
            }
            m
        }
    }
}

fn protocol_panel(records: &[&MeasurementRecord], group_by: Option<GroupBy>) -> Vec<ProtocolRow> {
    let mut rows = Vec::new();
    match group_by {
        None | Some(GroupBy::Protocol) => {
            let mut counts: BTreeMap<Protocol, u64> = BTreeMap::new();
            for r in records {
                for (p, n) in &r.distribution.counts {
                    *counts.entry(*p).or_default() += n;
                }
            }
            let total: u64 = counts.values().sum();
            let pages: Vec<_> = records.iter().filter(|r| r.distribution.total() > 0).collect();
            for (p, n) in counts.into_iter().filter(|(_, n)| *n > 0) {
                let page_mean = pages
                    .iter()
                    .map(|r| r.distribution.fractions.get(&p).copied().unwrap_or(0.0))
                    .sum::<f64>()
                    / pages.len() as f64;
                rows.push(ProtocolRow {
                    group: None,
                    protocol: p,
                    count: n,
                    fraction: n as f64 / total as f64,
                    mean_page_fraction: Some(page_mean),
                });
            }
        }
        Some(by) => {
            let mut groups: BTreeMap<String, BTreeMap<Protocol, u64>> = BTreeMap::new();
            for c in records.iter().flat_map(|r| &r.deliveries) {
                *groups
                    .entry(cell_group(c, by))
                    .or_default()
                    .entry(c.protocol)
                    .or_default() += c.count;
            }
            for (g, counts) in groups {
                let total: u64 = counts.values().sum();
                for (p, n) in counts.into_iter().filter(|(_, n)| *n > 0) {
                    rows.push(ProtocolRow {
                        group: Some(g.clone()),
                        protocol: p,
                        count: n,
                        fraction: n as f64 / total as f64,
                        mean_page_fraction: None,
                    });
                }
            }
        }
    }
    rows
}

fn geo_panel(records: &[&MeasurementRecord], by: GroupBy) -> Vec<GeoRow> {
    let countries = CountryTable::bundled();
    let mut groups: BTreeMap<String, GeoRow> = BTreeMap::new();
    for c in records.iter().flat_map(|r| &r.deliveries) {
        let key = cell_group(c, by);
        let row = groups.entry(key.clone()).or_insert_with(|| {
            let country = countries.get(c.country.as_deref().unwrap_or(""));
            let centroid = |country: Option<&crate::delivery::CountryInfo>| {
                country
                    .map(|i| (i.latitude, i.longitude))
                    .or_else(|| c.continent.map(Continent::centroid))
            };
            let (coords, continent, country_code, city) = if key == UNLOCATED {
                (None, None, None, None)
            } else {
                match by {
                    GroupBy::Continent => (c.continent.map(Continent::centroid), c.continent, None, None),
                    GroupBy::City => {
                        let exact = c.latitude.zip(c.longitude);
                        (
                            exact.or_else(|| centroid(country)),
                            c.continent,
                            c.country.clone(),
                            c.city.clone(),
                        )
                    }
                    _ => (centroid(country), c.continent, c.country.clone(), None),
                }
            };
            GeoRow {
                group: key,
                continent,
                country: country_code,
                city,
                latitude: coords.map(|(lat, _)| lat),
                longitude: coords.map(|(_, lon)| lon),
                weight: 0,
                providers: BTreeMap::new(),
                protocols: BTreeMap::new(),
            }
        });
        row.weight += c.count;
        *row.providers.entry(c.provider.clone()).or_default() += c.count;
        *row.protocols.entry(c.protocol).or_default() += c.count;
    }
    let mut rows: Vec<GeoRow> = groups.into_values().filter(|r| r.weight > 0).collect();
    rows.sort_by(|a, b| b.weight.cmp(&a.weight).then_with(|| a.group.cmp(&b.group)));
    rows
}

fn cdn_table(records: &[&MeasurementRecord]) -> Vec<CdnRow> {
    let mut totals: BTreeMap<&str, u64> = BTreeMap::new();
    for r in records {
        for (p, n) in &r.per_provider {
            *totals.entry(p.as_str()).or_default() += n;
        }
    }
    let total: u64 = totals.values().sum();
    let mut rows: Vec<CdnRow> = totals
        .into_iter()
        .filter(|(_, n)| *n > 0)
        .map(|(p, n)| CdnRow {
            provider: p.to_string(),
            count: n,
            share: n as f64 / total as f64,
        })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.provider.cmp(&b.provider)));
    rows
}

fn bucket_start(t: DateTime<Utc>, days: u32) -> DateTime<Utc> {
    let day = t.timestamp().div_euclid(86_400);
    let start_day = day - day.rem_euclid(days as i64);
    Utc.timestamp_opt(start_day * 86_400, 0).unwrap()
}

fn timeseries(
    records: &[&MeasurementRecord],
    filters: &RecordFilter,
    options: &ReportOptions,
) -> Vec<TimeseriesRow> {
    let Some(first) = records.iter().map(|r| r.timestamp).min() else {
        return Vec::new();
    };
    let last = records.iter().map(|r| r.timestamp).max().unwrap();
    let range = filters.time_range.unwrap_or_default();
    let covered_from = range.from.unwrap_or(first);
    // Exclusive end of the covered span.
    let covered_to = range.to.unwrap_or(last + Duration::milliseconds(1));
    let width = Duration::days(options.bucket_days as i64);

    let mut buckets: BTreeMap<DateTime<Utc>, Vec<&MeasurementRecord>> = BTreeMap::new();
    for r in records {
        buckets
            .entry(bucket_start(r.timestamp, options.bucket_days))
            .or_default()
            .push(r);
    }

    let mut rows = Vec::new();
    for (start, members) in buckets {
        let end = start + width;
        let partial = covered_from > start || covered_to < end;
        let row = |group: Option<String>, values: Vec<f64>| TimeseriesRow {
            bucket_start: start,
            bucket_end: end,
            partial,
            group,
            summary: summary(values),
        };
        match options.group_by.filter(|_| options.metric == Metric::Count) {
            None => {
                let values: Vec<f64> = members
                    .iter()
                    .filter_map(|r| metric_value(r, options.metric))
                    .collect();
                if !values.is_empty() {
                    rows.push(row(None, values));
                }
            }
            Some(by) => {
                let measured: Vec<_> = members
                    .iter()
                    .filter(|r| r.status != SessionStatus::Failed)
                    .collect();
                let per_record: Vec<BTreeMap<String, u64>> =
                    measured.iter().map(|r| record_groups(r, by)).collect();
                let names: BTreeSet<&String> = per_record.iter().flat_map(|m| m.keys()).collect();
                for name in names {
                    let values = per_record
                        .iter()
                        .map(|m| m.get(name).copied().unwrap_or(0) as f64)
                        .collect();
                    rows.push(row(Some(name.clone()), values));
                }
            }
        }
    }
    rows
}

fn compare(records: &[&MeasurementRecord], options: &ReportOptions) -> Result<Vec<CompareRow>, ReportError> {
    let by = options.compare_by.unwrap_or(CompareBy::Browser);
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        let key = match by {
            CompareBy::Browser => r.browser.name.clone(),
            CompareBy::RequestedProtocol => r.requested_protocol.as_str().to_string(),
        };
        if let Some(v) = metric_value(r, options.metric) {
            groups.entry(key).or_default().push(v);
        }
    }
    let baseline = match &options.baseline {
        Some(b) => groups
            .keys()
            .find(|k| k.eq_ignore_ascii_case(b))
            .cloned()
            .ok_or_else(|| ReportError::UnknownBaseline(b.clone()))?,
        None => match groups.keys().next() {
            Some(k) => k.clone(),
            None => return Ok(Vec::new()),
        },
    };
    let summaries: Vec<(String, Summary)> = groups.into_iter().map(|(k, v)| (k, summary(v))).collect();
    let base_mean = summaries
        .iter()
        .find(|(k, _)| *k == baseline)
        .map(|(_, s)| s.mean)
        .unwrap_or(0.0);
    Ok(summaries
        .into_iter()
        .map(|(value, s)| CompareRow {
            baseline: value == baseline,
            delta_vs_baseline: s.mean - base_mean,
            value,
            summary: s,
        })
        .collect())
}

/// Aggregate the records that pass `filters`. Deterministic in its inputs
/// apart from `generated_at`. Timing metrics use complete sessions only;
/// counts use every session that was not a failure.
pub fn aggregate(
    records: &[MeasurementRecord],
    kind: ReportKind,
    filters: &RecordFilter,
    options: &ReportOptions,
) -> Result<Report, ReportError> {
    let unsupported = |option: String| ReportError::UnsupportedOption { kind, option };
    if options.bucket_days == 0 {
        return Err(ReportError::ZeroBucket);
    }
    let selected: Vec<&MeasurementRecord> = records.iter().filter(|r| filters.matches(r)).collect();
    let rows = match kind {
        ReportKind::ProtocolPanel => Rows::ProtocolPanel(protocol_panel(&selected, options.group_by)),
        ReportKind::GeoPanel => {
            let by = options.group_by.unwrap_or(GroupBy::Country);
            if !matches!(by, GroupBy::Continent | GroupBy::Country | GroupBy::City) {
                return Err(unsupported(format!("group_by={by}")));
            }
            Rows::GeoPanel(geo_panel(&selected, by))
        }
        ReportKind::CdnTable => Rows::CdnTable(cdn_table(&selected)),
        ReportKind::Timeseries => {
            if options.group_by.is_some() && options.metric != Metric::Count {
                return Err(unsupported(format!("group_by with metric={}", options.metric)));
            }
            Rows::Timeseries(timeseries(&selected, filters, options))
        }
        ReportKind::Compare => Rows::Compare(compare(&selected, options)?),
    };
    Ok(Report {
        filters: filters.clone(),
        options: options.clone(),
        record_count: selected.len() as u64,
        empty: selected.is_empty(),
        generated_at: Utc::now(),
        rows,
    })
}
