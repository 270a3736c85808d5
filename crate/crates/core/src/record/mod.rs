//! The per-pageview measurement record, its append-only store and queries.

mod export;
mod filter;
mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};

use crate::delivery::{Continent, DeliveryAttribution, OriginClass};
use crate::har::{HarSession, SuffixRules};
use crate::metrics::{resource_stats, ResourceStats, Timings};
use crate::probe::SessionConfig;
use crate::protocol::{
    normalize_protocol, protocol_distribution, quic_enabled_domains, Protocol, ProtocolDistribution,
    RequestedProtocol,
};

pub use export::write_csv;
pub use filter::{FilterError, RecordFilter, TimeRange, FILTER_KEYS};
pub use store::{RecordStore, StoreError, StoredRecord};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeLocation {
    pub city: String,
    pub country: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AccessNetworkKind {
    Fiber,
    #[serde(rename = "ADSL")]
    Adsl,
    WiFi,
}

impl AccessNetworkKind {
    pub const ALL: [AccessNetworkKind; 3] = [
        AccessNetworkKind::Fiber,
        AccessNetworkKind::Adsl,
        AccessNetworkKind::WiFi,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AccessNetworkKind::Fiber => "Fiber",
            AccessNetworkKind::Adsl => "ADSL",
            AccessNetworkKind::WiFi => "WiFi",
        }
    }
}

impl fmt::Display for AccessNetworkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AccessNetworkKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim().replace('-', "");
        AccessNetworkKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(&wanted))
            .ok_or_else(|| format!("unknown access network {s:?} (Fiber, ADSL, WiFi)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessNetwork {
    pub kind: AccessNetworkKind,
    pub operator: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrowserInfo {
    pub name: String,
    pub version: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Window {
    pub width: u32,
    pub height: u32,
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl FromStr for Window {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (w, h) = s
            .trim()
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("window {s:?} is not WIDTHxHEIGHT"))?;
        let dim = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("window {s:?}: {e}"));
        Ok(Window {
            width: dim(w)?,
            height: dim(h)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Complete,
    Timeout,
    Failed,
}

impl SessionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionStatus::Complete => "complete",
            SessionStatus::Timeout => "timeout",
            SessionStatus::Failed => "failed",
        }
    }
}

/// Free-form parameter value kept in [`MeasurementRecord::extra`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Bool(v) => write!(f, "{v}"),
            Scalar::Int(v) => write!(f, "{v}"),
            Scalar::Float(v) => write!(f, "{v}"),
            Scalar::Text(v) => f.write_str(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSummary {
    pub count: u64,
    pub bytes: u64,
    pub origin_class: OriginClass,
}

/// Resources sharing provider, server location, protocol and origin class.
/// Reports derive their provider × location × protocol views from these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryCell {
    pub provider: String,
    pub continent: Option<Continent>,
    pub country: Option<String>,
    pub city: Option<String>,
    pub latitude: Option<f64>,
    pub longitude: Option<f64>,
    pub protocol: Protocol,
    pub origin_class: OriginClass,
    pub count: u64,
}

impl DeliveryCell {
    fn same_key(&self, other: &DeliveryCell) -> bool {
        self.provider == other.provider
            && self.continent == other.continent
            && self.country == other.country
            && self.city == other.city
            && self.latitude == other.latitude
            && self.longitude == other.longitude
            && self.protocol == other.protocol
            && self.origin_class == other.origin_class
    }
}

mod timestamp_millis {
    use chrono::{DateTime, SecondsFormat, SubsecRound, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Millis, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&raw)
            .map(|t| t.with_timezone(&Utc).trunc_subsecs(3))
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub schema_version: u32,
    pub probe_id: String,
    pub probe_location: ProbeLocation,
    pub access_network: AccessNetwork,
    pub browser: BrowserInfo,
    pub window: Window,
    pub adblock: bool,
    pub requested_protocol: RequestedProtocol,
    /// Registrable domain of `url`.
    pub website: String,
    pub url: String,
    #[serde(with = "timestamp_millis")]
    pub timestamp: DateTime<Utc>,
    pub status: SessionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status_reason: Option<String>,
    pub timings: Option<Timings>,
    pub stats: ResourceStats,
    pub distribution: ProtocolDistribution,
    pub per_domain: BTreeMap<String, DomainSummary>,
    pub per_provider: BTreeMap<String, u64>,
    pub per_continent: BTreeMap<Continent, u64>,
    /// Resources whose server could not be placed on a continent.
    pub unattributed_count: u64,
    pub deliveries: Vec<DeliveryCell>,
    pub quic_domains: BTreeSet<String>,
    pub warnings: Vec<String>,
    #[serde(default)]
    pub extra: BTreeMap<String, Scalar>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{attributions} attributions for {entries} completed entries")]
pub struct AlignmentError {
    pub attributions: usize,
    pub entries: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("record violates conservation: {0}")]
pub struct ConservationError(pub String);

fn website_of(url: &str, suffixes: &SuffixRules) -> String {
    crate::har::host_of(url)
        .map(|h| suffixes.registrable_domain(&h))
        .unwrap_or_default()
}

impl MeasurementRecord {
    /// A record with identity fields filled in and every aggregate zeroed.
    pub fn empty(
        config: &SessionConfig,
        url: &str,
        timestamp: DateTime<Utc>,
        status: SessionStatus,
        suffixes: &SuffixRules,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            probe_id: config.probe.id.clone(),
            probe_location: config.probe.location.clone(),
            access_network: config.probe.access_network.clone(),
            browser: config.browser.clone(),
            window: config.window,
            adblock: config.adblock,
            requested_protocol: config.policy.requested,
            website: website_of(url, suffixes),
            url: url.to_string(),
            timestamp: timestamp.trunc_subsecs(3),
            status,
            status_reason: None,
            timings: None,
            stats: ResourceStats::default(),
            distribution: ProtocolDistribution::default(),
            per_domain: BTreeMap::new(),
            per_provider: BTreeMap::new(),
            per_continent: BTreeMap::new(),
            unattributed_count: 0,
            deliveries: Vec::new(),
            quic_domains: BTreeSet::new(),
            warnings: Vec::new(),
            extra: BTreeMap::new(),
        }
    }

    /// A failed session: zeroed aggregates, reason kept in `status_reason`
    /// and `warnings`.
    pub fn failed(
        config: &SessionConfig,
        url: &str,
        timestamp: DateTime<Utc>,
        reason: impl Into<String>,
        suffixes: &SuffixRules,
    ) -> Self {
        let reason = reason.into();
        let mut r = Self::empty(config, url, timestamp, SessionStatus::Failed, suffixes);
        r.warnings.push(reason.clone());
        r.status_reason = Some(reason);
        r
    }

    pub fn set_timestamp(&mut self, timestamp: DateTime<Utc>) {
        self.timestamp = timestamp.trunc_subsecs(3);
    }

    /// Provider, continent and cross-tab totals all equal the resource count.
    pub fn validate(&self) -> Result<(), ConservationError> {
        let n = self.stats.resource_count;
        let providers: u64 = self.per_provider.values().sum();
        let continents: u64 = self.per_continent.values().sum();
        let cells: u64 = self.deliveries.iter().map(|c| c.count).sum();
        let domains: u64 = self.per_domain.values().map(|d| d.count).sum();
        let checks = [
            ("per_provider", providers),
            (
                "per_continent + unattributed",
                continents + self.unattributed_count,
            ),
            ("deliveries", cells),
            ("distribution", self.distribution.total()),
            ("per_domain", domains),
        ];
        for (what, total) in checks {
            if total != n {
                return Err(ConservationError(format!(
                    "{what} sums to {total}, resource_count is {n}"
                )));
            }
        }
        if self.status == SessionStatus::Timeout && self.warnings.is_empty() {
            return Err(ConservationError("timeout record without warnings".into()));
        }
        Ok(())
    }

    /// Total over `per_provider` for one provider name, case-insensitive.
    pub fn provider_count(&self, provider: &str) -> u64 {
        self.per_provider
            .iter()
            .filter(|(name, _)| name.eq_ignore_ascii_case(provider))
            .map(|(_, n)| n)
            .sum()
    }
}

/// Aggregate a parsed session and its per-resource attributions.
///
/// `attributions[i]` belongs to the i-th completed (non-aborted) entry.
/// The timestamp is the session start; status is `complete`.
pub fn build_record(
    session: &HarSession,
    config: &SessionConfig,
    url: &str,
    attributions: &[DeliveryAttribution],
    timings: Option<Timings>,
    suffixes: &SuffixRules,
) -> Result<MeasurementRecord, AlignmentError> {
    let completed: Vec<_> = session.completed_entries().collect();
    if completed.len() != attributions.len() {
        return Err(AlignmentError {
            attributions: attributions.len(),
            entries: completed.len(),
        });
    }

    let mut r = MeasurementRecord::empty(config, url, session.started_at, SessionStatus::Complete, suffixes);
    r.timings = timings;
    r.stats = resource_stats(session, suffixes);
    r.distribution = protocol_distribution(session);
    r.quic_domains = quic_enabled_domains(session, suffixes);
    r.warnings = session.warnings.clone();

    for (entry, a) in completed.iter().zip(attributions) {
        let domain = entry
            .host()
            .map(|h| suffixes.registrable_domain(&h))
            .unwrap_or_default();
        let d = r.per_domain.entry(domain).or_insert(DomainSummary {
            count: 0,
            bytes: 0,
            origin_class: a.origin_class,
        });
        d.count += 1;
        d.bytes += entry.body_size_bytes.max(0) as u64;

        *r.per_provider.entry(a.provider.clone()).or_default() += 1;
        match a.continent {
            Some(c) => *r.per_continent.entry(c).or_default() += 1,
            None => r.unattributed_count += 1,
        }

        let cell = DeliveryCell {
            provider: a.provider.clone(),
            continent: a.continent,
            country: a.country.clone(),
            city: a.city.clone(),
            latitude: a.latitude,
            longitude: a.longitude,
            protocol: normalize_protocol(&entry.http_version_raw),
            origin_class: a.origin_class,
            count: 1,
        };
        match r.deliveries.iter_mut().find(|c| c.same_key(&cell)) {
            Some(existing) => existing.count += 1,
            None => r.deliveries.push(cell),
        }
    }
    Ok(r)
}
