//! HAR 1.2 session model.
//!
//! [`parse_har`] turns one browser navigation's HTTP Archive export into a
//! [`HarSession`]: entries ordered by start offset, phase timings validated,
//! header multimaps preserved in wire order. Only the first page of a
//! multi-page archive is kept.

mod domain;
mod write;

use std::net::IpAddr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use domain::{host_of, registrable_domain, SuffixRules, SuffixRulesError};

/// Milliseconds, fractional.
pub type Millis = f64;

/// Slack allowed between an entry's total time and the sum of its phases.
const PHASE_SUM_SLACK_MS: Millis = 1.0;

#[derive(Debug, thiserror::Error)]
pub enum HarError {
    #[error("malformed HAR document: {0}")]
    MalformedDocument(String),
    #[error("unsupported HAR version {0:?} (expected 1.x)")]
    UnsupportedVersion(String),
}

/// Ordered header multimap. Lookups compare names case-insensitively.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Headers(Vec<(String, String)>);

impl Headers {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: impl Into<String>) {
        self.0.push((name.into(), value.into()));
    }

    /// First value for `name`.
    pub fn get(&self, name: &str) -> Option<&str> {
        self.get_all(name).next()
    }

    /// Every value for `name`, in wire order.
    pub fn get_all<'a, 'n>(&'a self, name: &'n str) -> impl Iterator<Item = &'a str> + use<'a, 'n> {
        self.0
            .iter()
            .filter(move |(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(n, v)| (n.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<N: Into<String>, V: Into<String>> FromIterator<(N, V)> for Headers {
    fn from_iter<I: IntoIterator<Item = (N, V)>>(iter: I) -> Self {
        Self(iter.into_iter().map(|(n, v)| (n.into(), v.into())).collect())
    }
}

/// Per-request phase durations. `None` is the HAR `-1` (not applicable).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub blocked: Option<Millis>,
    pub dns: Option<Millis>,
    pub connect: Option<Millis>,
    pub ssl: Option<Millis>,
    pub send: Option<Millis>,
    pub wait: Option<Millis>,
    pub receive: Option<Millis>,
}

impl PhaseTimings {
    pub const ABSENT: PhaseTimings = PhaseTimings {
        blocked: None,
        dns: None,
        connect: None,
        ssl: None,
        send: None,
        wait: None,
        receive: None,
    };

    /// Sum of the phases that make up the entry's total time. `ssl` is
    /// already contained in `connect`, so it is not added again.
    pub fn sum(&self) -> Millis {
        [
            self.blocked,
            self.dns,
            self.connect,
            self.send,
            self.wait,
            self.receive,
        ]
        .into_iter()
        .flatten()
        .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarEntry {
    pub url: String,
    pub method: String,
    pub status: u16,
    pub http_version_raw: String,
    pub response_headers: Headers,
    pub mime_type: String,
    /// `-1` when unknown.
    pub body_size_bytes: i64,
    /// `-1` when unknown.
    pub transfer_size_bytes: i64,
    pub server_ip: Option<IpAddr>,
    pub start_offset_ms: Millis,
    pub total_time_ms: Millis,
    pub phase_times: PhaseTimings,
}

impl HarEntry {
    pub fn end_offset_ms(&self) -> Millis {
        self.start_offset_ms + self.total_time_ms
    }

    /// Aborted requests carry status 0.
    pub fn is_aborted(&self) -> bool {
        self.status == 0
    }

    pub fn host(&self) -> Option<String> {
        host_of(&self.url)
    }

    pub fn is_https(&self) -> bool {
        self.url
            .get(..8)
            .is_some_and(|scheme| scheme.eq_ignore_ascii_case("https://"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarSession {
    pub page_url: String,
    pub started_at: DateTime<Utc>,
    pub browser_name: String,
    pub browser_version: String,
    pub on_content_load_ms: Option<Millis>,
    pub on_load_ms: Option<Millis>,
    pub entries: Vec<HarEntry>,
    /// Non-fatal irregularities found while parsing.
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl HarSession {
    /// Entries with a non-zero status.
    pub fn completed_entries(&self) -> impl Iterator<Item = &HarEntry> {
        self.entries.iter().filter(|e| !e.is_aborted())
    }

    /// Serialize back to a HAR 1.2 document.
    pub fn to_har_json(&self) -> Value {
        write::session_to_har(self)
    }
}

// Raw HAR shapes. Unknown fields are ignored; anything that varies between
// browser exporters is read as a loose `Value`.

#[derive(Deserialize)]
struct RawDocument {
    log: Option<RawLog>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawLog {
    version: Option<String>,
    creator: Option<RawAgent>,
    browser: Option<RawAgent>,
    #[serde(default)]
    pages: Vec<RawPage>,
    #[serde(default)]
    entries: Vec<RawEntry>,
}

#[derive(Deserialize, Default)]
struct RawAgent {
    #[serde(default)]
    name: String,
    #[serde(default)]
    version: String,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawPage {
    started_date_time: Option<String>,
    id: Option<String>,
    title: Option<String>,
    page_timings: Option<RawPageTimings>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawPageTimings {
    on_content_load: Option<Value>,
    on_load: Option<Value>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawEntry {
    pageref: Option<String>,
    started_date_time: Option<String>,
    time: Option<Value>,
    request: Option<RawRequest>,
    response: Option<RawResponse>,
    timings: Option<Value>,
    #[serde(rename = "serverIPAddress")]
    server_ip_address: Option<String>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawRequest {
    #[serde(default)]
    method: String,
    #[serde(default)]
    url: String,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawResponse {
    status: Option<Value>,
    #[serde(default)]
    http_version: String,
    #[serde(default)]
    headers: Vec<RawHeader>,
    content: Option<RawContent>,
    body_size: Option<Value>,
    headers_size: Option<Value>,
    #[serde(rename = "_transferSize")]
    transfer_size: Option<Value>,
}

#[derive(Deserialize)]
struct RawHeader {
    #[serde(default)]
    name: String,
    #[serde(default)]
    value: String,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawContent {
    #[serde(default)]
    mime_type: String,
}

fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64().filter(|x| x.is_finite()),
        Value::String(s) => s.trim().parse::<f64>().ok().filter(|x| x.is_finite()),
        _ => None,
    }
}

fn non_negative(v: Option<&Value>) -> Option<Millis> {
    v.and_then(number).filter(|x| *x >= 0.0)
}

fn size(v: Option<&Value>) -> Option<i64> {
    v.and_then(number).map(|x| x.round() as i64).filter(|x| *x >= 0)
}

fn parse_time(s: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s.trim())
        .ok()
        .map(|t| t.with_timezone(&Utc))
}

fn parse_ip(raw: &str) -> Option<IpAddr> {
    raw.trim()
        .trim_start_matches('[')
        .trim_end_matches(']')
        .parse()
        .ok()
}

/// Parse phases. Returns `None` when any phase is not a number or is below
/// the `-1` sentinel.
fn parse_phases(timings: &Value) -> Option<PhaseTimings> {
    let obj = timings.as_object()?;
    let phase = |name: &str| -> Result<Option<Millis>, ()> {
        match obj.get(name) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => match number(v) {
                Some(x) if x >= 0.0 => Ok(Some(x)),
                Some(x) if x >= -1.0 => Ok(None),
                _ => Err(()),
            },
        }
    };
    Some(PhaseTimings {
        blocked: phase("blocked").ok()?,
        dns: phase("dns").ok()?,
        connect: phase("connect").ok()?,
        ssl: phase("ssl").ok()?,
        send: phase("send").ok()?,
        wait: phase("wait").ok()?,
        receive: phase("receive").ok()?,
    })
}

fn offset_ms(from: DateTime<Utc>, to: DateTime<Utc>) -> Millis {
    let delta = to - from;
    match delta.num_nanoseconds() {
        Some(ns) => ns as f64 / 1e6,
        None => delta.num_milliseconds() as f64,
    }
}

/// Parse a HAR 1.2 document.
pub fn parse_har(bytes: &[u8]) -> Result<HarSession, HarError> {
    let doc: RawDocument =
        serde_json::from_slice(bytes).map_err(|e| HarError::MalformedDocument(e.to_string()))?;
    let log = doc
        .log
        .ok_or_else(|| HarError::MalformedDocument("missing `log` object".into()))?;

    if let Some(version) = &log.version {
        let major = version.trim().split('.').next().unwrap_or_default();
        if !major.is_empty() && major != "1" {
            return Err(HarError::UnsupportedVersion(version.clone()));
        }
    }

    let mut warnings = Vec::new();
    let agent = log.browser.or(log.creator).unwrap_or_default();

    let mut pages = log.pages.into_iter();
    let page = pages.next();
    let extra_pages = pages.count();
    if extra_pages > 0 {
        warnings.push(format!("{extra_pages} additional page(s) ignored"));
    }
    let page_id = page.as_ref().and_then(|p| p.id.clone());

    let mut raw_entries = log.entries;
    if let Some(id) = &page_id {
        let before = raw_entries.len();
        raw_entries.retain(|e| e.pageref.as_deref().is_none_or(|r| r == id));
        let dropped = before - raw_entries.len();
        if dropped > 0 {
            warnings.push(format!("{dropped} entries of other pages ignored"));
        }
    }

    let entry_times: Vec<Option<DateTime<Utc>>> = raw_entries
        .iter()
        .map(|e| e.started_date_time.as_deref().and_then(parse_time))
        .collect();

    let started_at = page
        .as_ref()
        .and_then(|p| p.started_date_time.as_deref())
        .and_then(parse_time)
        .or_else(|| entry_times.iter().flatten().min().copied())
        .unwrap_or_else(|| {
            warnings.push("no navigation start time; using the Unix epoch".into());
            DateTime::<Utc>::UNIX_EPOCH
        });

    let (on_content_load_ms, on_load_ms) = page
        .as_ref()
        .and_then(|p| p.page_timings.as_ref())
        .map(|t| {
            (
                non_negative(t.on_content_load.as_ref()),
                non_negative(t.on_load.as_ref()),
            )
        })
        .unwrap_or((None, None));

    let mut entries = Vec::with_capacity(raw_entries.len());
    for (index, (raw, started)) in raw_entries.into_iter().zip(entry_times).enumerate() {
        entries.push(convert_entry(index, raw, started, started_at, &mut warnings));
    }
    entries.sort_by(|a, b| a.start_offset_ms.total_cmp(&b.start_offset_ms));

    let page_url = page
        .as_ref()
        .and_then(|p| p.title.clone())
        .filter(|t| t.contains("://"))
        .or_else(|| entries.first().map(|e| e.url.clone()))
        .unwrap_or_default();

    Ok(HarSession {
        page_url,
        started_at,
        browser_name: agent.name,
        browser_version: agent.version,
        on_content_load_ms,
        on_load_ms,
        entries,
        warnings,
    })
}

fn convert_entry(
    index: usize,
    raw: RawEntry,
    started: Option<DateTime<Utc>>,
    session_start: DateTime<Utc>,
    warnings: &mut Vec<String>,
) -> HarEntry {
    let request = raw.request.unwrap_or(RawRequest {
        method: String::new(),
        url: String::new(),
    });
    let response = raw.response;

    let mut start_offset_ms = match started {
        Some(t) => offset_ms(session_start, t),
        None => {
            warnings.push(format!("entry {index}: missing startedDateTime"));
            0.0
        }
    };
    if start_offset_ms < 0.0 {
        warnings.push(format!(
            "entry {index}: negative start offset {start_offset_ms:.3} ms clamped to 0"
        ));
        start_offset_ms = 0.0;
    }

    let parsed_phases = raw.timings.as_ref().and_then(parse_phases);
    let declared_total = non_negative(raw.time.as_ref());
    let (phase_times, total_time_ms) = match (parsed_phases, declared_total) {
        (Some(p), Some(total)) if total + PHASE_SUM_SLACK_MS >= p.sum() => (p, total),
        (Some(p), None) => (p, p.sum()),
        (Some(_), Some(total)) => {
            warnings.push(format!(
                "entry {index}: phase times exceed total time; phases dropped"
            ));
            (PhaseTimings::ABSENT, total)
        }
        (None, total) => {
            if raw.timings.is_some() {
                warnings.push(format!("entry {index}: malformed timings; phases dropped"));
            }
            (PhaseTimings::ABSENT, total.unwrap_or(0.0))
        }
    };

    let (status, http_version_raw, response_headers, mime_type, body, transfer) = match response {
        Some(r) => {
            let status = r
                .status
                .as_ref()
                .and_then(number)
                .filter(|s| (0.0..=999.0).contains(s))
                .map(|s| s as u16)
                .unwrap_or(0);
            let body = size(r.body_size.as_ref());
            let transfer = size(r.transfer_size.as_ref()).or_else(|| {
                let headers = size(r.headers_size.as_ref())?;
                Some(headers + body?)
            });
            let headers: Headers = r.headers.into_iter().map(|h| (h.name, h.value)).collect();
            let mime = r.content.map(|c| c.mime_type).unwrap_or_default();
            (status, r.http_version, headers, mime, body, transfer)
        }
        None => (0, String::new(), Headers::new(), String::new(), None, None),
    };

    let server_ip = match raw.server_ip_address.as_deref().map(str::trim) {
        None | Some("") => None,
        Some(s) => {
            let ip = parse_ip(s);
            if ip.is_none() {
                warnings.push(format!("entry {index}: invalid server IP {s:?}"));
            }
            ip
        }
    };

    HarEntry {
        url: request.url,
        method: request.method,
        status,
        http_version_raw,
        response_headers,
        mime_type,
        body_size_bytes: body.unwrap_or(-1),
        transfer_size_bytes: transfer.unwrap_or(-1),
        server_ip,
        start_offset_ms,
        total_time_ms,
        phase_times,
    }
}
