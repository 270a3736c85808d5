use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use super::{AccessNetworkKind, MeasurementRecord, Window};
use crate::protocol::RequestedProtocol;

pub const FILTER_KEYS: [&str; 9] = [
    "website",
    "browser",
    "access_network",
    "probe_location",
    "window",
    "adblock",
    "requested_protocol",
    "time_range",
    "provider",
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FilterError {
    #[error("unknown filter {0:?}; known filters: {keys}", keys = FILTER_KEYS.join(", "))]
    UnknownKey(String),
    #[error("filter {0:?} is not key=value")]
    Malformed(String),
    #[error("filter {key}={value:?}: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
}

/// Half-open `[from, to)`; either end may be open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TimeRange {
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
}

impl TimeRange {
    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.from.is_none_or(|f| t >= f) && self.to.is_none_or(|e| t < e)
    }
}

fn parse_instant(s: &str) -> Result<Option<DateTime<Utc>>, String> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(Some(t.with_timezone(&Utc)));
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(|d| Some(d.and_hms_opt(0, 0, 0).unwrap().and_utc()))
        .map_err(|_| format!("{s:?} is neither RFC 3339 nor YYYY-MM-DD"))
}

impl FromStr for TimeRange {
    type Err = String;

    /// `FROM..TO`, each an RFC 3339 instant or a UTC date; either may be empty.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (from, to) = s
            .split_once("..")
            .ok_or_else(|| "expected FROM..TO".to_string())?;
        Ok(TimeRange {
            from: parse_instant(from)?,
            to: parse_instant(to)?,
        })
    }
}

/// Conjunctive record selection; unset fields match everything.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecordFilter {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub website: Option<String>,
    /// Browser name, or `name/version`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub browser: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub access_network: Option<AccessNetworkKind>,
    /// Probe city or country.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_location: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<Window>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adblock: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub requested_protocol: Option<RequestedProtocol>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_range: Option<TimeRange>,
    /// Records with at least one resource from this provider.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provider: Option<String>,
}

impl RecordFilter {
    /// Build from `key=value` pairs. A repeated key keeps the last value.
    pub fn from_pairs<S: AsRef<str>>(pairs: &[S]) -> Result<Self, FilterError> {
        let mut f = RecordFilter::default();
        for pair in pairs {
            let pair = pair.as_ref();
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| FilterError::Malformed(pair.to_string()))?;
            f.set(key.trim(), value.trim())?;
        }
        Ok(f)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), FilterError> {
        let bad = |reason: String| FilterError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            reason,
        };
        match key {
            "website" => self.website = Some(value.to_ascii_lowercase()),
            "browser" => self.browser = Some(value.to_string()),
            "access_network" => self.access_network = Some(value.parse().map_err(bad)?),
            "probe_location" => self.probe_location = Some(value.to_string()),
            "window" => self.window = Some(value.parse().map_err(bad)?),
            "adblock" => {
                self.adblock = Some(match value.to_ascii_lowercase().as_str() {
                    "true" | "yes" | "1" | "on" => true,
                    "false" | "no" | "0" | "off" => false,
                    _ => return Err(bad("expected true or false".into())),
                })
            }
            "requested_protocol" => {
                self.requested_protocol = Some(
                    value
                        .parse()
                        .map_err(|e: crate::protocol::ProtocolError| bad(e.to_string()))?,
                )
            }
            "time_range" => self.time_range = Some(value.parse().map_err(bad)?),
            "provider" => self.provider = Some(value.to_string()),
            other => return Err(FilterError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        *self == RecordFilter::default()
    }

    pub fn matches(&self, r: &MeasurementRecord) -> bool {
        let browser_ok = |b: &String| match b.split_once('/') {
            Some((name, version)) => {
                r.browser.name.eq_ignore_ascii_case(name) && r.browser.version == version
            }
            None => r.browser.name.eq_ignore_ascii_case(b),
        };
        self.website
            .as_ref()
            .is_none_or(|w| r.website.eq_ignore_ascii_case(w))
            && self.browser.as_ref().is_none_or(browser_ok)
            && self.access_network.is_none_or(|k| r.access_network.kind == k)
            && self.probe_location.as_ref().is_none_or(|l| {
                r.probe_location.city.eq_ignore_ascii_case(l)
                    || r.probe_location.country.eq_ignore_ascii_case(l)
            })
            && self.window.is_none_or(|w| r.window == w)
            && self.adblock.is_none_or(|a| r.adblock == a)
            && self.requested_protocol.is_none_or(|p| r.requested_protocol == p)
            && self.time_range.is_none_or(|t| t.contains(r.timestamp))
            && self.provider.as_ref().is_none_or(|p| r.provider_count(p) > 0)
    }
}
