//! Loading-time metrics and per-resource statistics computed from a
//! [`HarSession`].
//!
//! Four timings are produced: first paint (FP), page load time (PLT), time
//! for full visual rendering (TFVR) and processing time. HAR carries no
//! layout, so TFVR uses a network-log approximation: the completion time of
//! the critical set, which is the main document, every stylesheet, every
//! font, and the scripts and images requested before first paint.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::har::{HarEntry, HarSession, Millis, SuffixRules};

pub const FIRST_PAINT: &str = "first-paint";
pub const FIRST_CONTENTFUL_PAINT: &str = "first-contentful-paint";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("session has no entries and no load event; timings are undefined")]
    EmptySession,
}

/// A paint notification reported by the browser driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaintEvent {
    pub name: String,
    pub offset_ms: Millis,
}

impl PaintEvent {
    pub fn new(name: impl Into<String>, offset_ms: Millis) -> Self {
        Self {
            name: name.into(),
            offset_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FpSource {
    DriverEvent,
    FallbackEstimate,
    Absent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub first_paint_ms: Option<Millis>,
    pub page_load_time_ms: Millis,
    pub tfvr_ms: Option<Millis>,
    pub processing_time_ms: Millis,
    pub network_busy_ms: Millis,
    pub fp_source: FpSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MimeClass {
    Document,
    Script,
    Stylesheet,
    Image,
    Font,
    Media,
    Other,
}

impl MimeClass {
    pub const ALL: [MimeClass; 7] = [
        MimeClass::Document,
        MimeClass::Script,
        MimeClass::Stylesheet,
        MimeClass::Image,
        MimeClass::Font,
        MimeClass::Media,
        MimeClass::Other,
    ];

    pub fn of(mime_type: &str) -> MimeClass {
        let essence = mime_type
            .split(';')
            .next()
            .unwrap_or_default()
            .trim()
            .to_ascii_lowercase();
        let (top, sub) = essence.split_once('/').unwrap_or((essence.as_str(), ""));
        match (top, sub) {
            ("text", "html") | ("application", "xhtml+xml") => MimeClass::Document,
            ("text", "css") => MimeClass::Stylesheet,
            ("text", "js") => MimeClass::Script,
            (_, s) if s.ends_with("javascript") || s == "ecmascript" => MimeClass::Script,
            ("image", _) => MimeClass::Image,
            ("font", _) => MimeClass::Font,
            (_, s) if s.starts_with("font-") || s.starts_with("x-font-") => MimeClass::Font,
            ("audio", _) | ("video", _) => MimeClass::Media,
            _ => MimeClass::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MimeClass::Document => "document",
            MimeClass::Script => "script",
            MimeClass::Stylesheet => "stylesheet",
            MimeClass::Image => "image",
            MimeClass::Font => "font",
            MimeClass::Media => "media",
            MimeClass::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTotals {
    pub count: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceStats {
    pub resource_count: u64,
    pub aborted_count: u64,
    pub domain_count: u64,
    pub total_body_bytes: u64,
    pub total_transfer_bytes: u64,
    pub per_mime_class: BTreeMap<MimeClass, ClassTotals>,
    pub mean_transfer_rate_bytes_per_s: f64,
    pub https_fraction: f64,
}

impl Default for ResourceStats {
    fn default() -> Self {
        Self {
            resource_count: 0,
            aborted_count: 0,
            domain_count: 0,
            total_body_bytes: 0,
            total_transfer_bytes: 0,
            per_mime_class: MimeClass::ALL
                .into_iter()
                .map(|c| (c, ClassTotals::default()))
                .collect(),
            mean_transfer_rate_bytes_per_s: 0.0,
            https_fraction: 0.0,
        }
    }
}

/// Length of the union of `[start, min(start + duration, horizon)]`.
pub fn network_busy_time(intervals: &[(Millis, Millis)], horizon_ms: Millis) -> Millis {
    let mut clipped: Vec<(Millis, Millis)> = intervals
        .iter()
        .map(|&(start, duration)| (start.max(0.0), (start + duration.max(0.0)).min(horizon_ms)))
        .filter(|(start, end)| end > start)
        .collect();
    clipped.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut busy = 0.0;
    let mut current: Option<(Millis, Millis)> = None;
    for (start, end) in clipped {
        current = match current {
            Some((cs, ce)) if start <= ce => Some((cs, ce.max(end))),
            Some((cs, ce)) => {
                busy += ce - cs;
                Some((start, end))
            }
            None => Some((start, end)),
        };
    }
    if let Some((cs, ce)) = current {
        busy += ce - cs;
    }
    busy
}

fn main_document(session: &HarSession) -> Option<&HarEntry> {
    session
        .completed_entries()
        .find(|e| MimeClass::of(&e.mime_type) == MimeClass::Document)
        .or_else(|| session.completed_entries().next())
}

fn driver_first_paint(events: &[PaintEvent]) -> Option<Millis> {
    let earliest = |name: &str| {
        events
            .iter()
            .filter(|e| e.name == name && e.offset_ms.is_finite() && e.offset_ms >= 0.0)
            .map(|e| e.offset_ms)
            .min_by(f64::total_cmp)
    };
    earliest(FIRST_PAINT).or_else(|| earliest(FIRST_CONTENTFUL_PAINT))
}

/// FP, PLT, TFVR and processing time for one navigation.
///
/// `viewport` is accepted for parity with drivers that report layout; the
/// network-log approximation does not consult it.
pub fn compute_timings(
    session: &HarSession,
    paint_events: Option<&[PaintEvent]>,
    viewport: (u32, u32),
) -> Result<Timings, MetricsError> {
    let _ = viewport;
    if session.entries.is_empty() && session.on_load_ms.is_none() {
        return Err(MetricsError::EmptySession);
    }

    let entry_end = session
        .entries
        .iter()
        .map(HarEntry::end_offset_ms)
        .fold(0.0, f64::max);
    let plt = session.on_load_ms.unwrap_or(entry_end);

    let main = main_document(session);
    let main_end = main.map(HarEntry::end_offset_ms);

    let driver_fp = paint_events.and_then(driver_first_paint);
    let (fp, fp_source) = match (driver_fp, main_end) {
        (Some(fp), _) => (Some(fp), FpSource::DriverEvent),
        (None, Some(doc_end)) => {
            let blocking_end = session
                .completed_entries()
                .filter(|e| {
                    MimeClass::of(&e.mime_type) == MimeClass::Stylesheet && e.start_offset_ms < doc_end
                })
                .map(HarEntry::end_offset_ms)
                .fold(doc_end, f64::max);
            (Some(blocking_end), FpSource::FallbackEstimate)
        }
        (None, None) => (None, FpSource::Absent),
    };
    let fp = fp.map(|v| v.min(plt));

    let tfvr = main_end.map(|doc_end| {
        let started_before_fp = |e: &HarEntry| fp.is_some_and(|fp| e.start_offset_ms < fp);
        let critical_end = session
            .completed_entries()
            .filter(|e| match MimeClass::of(&e.mime_type) {
                MimeClass::Stylesheet | MimeClass::Font => true,
                MimeClass::Script | MimeClass::Image => started_before_fp(e),
                _ => false,
            })
            .map(HarEntry::end_offset_ms)
            .fold(doc_end, f64::max);
        critical_end.max(fp.unwrap_or(0.0)).min(plt)
    });

    let intervals: Vec<(Millis, Millis)> = session
        .entries
        .iter()
        .map(|e| (e.start_offset_ms, e.total_time_ms))
        .collect();
    let busy = network_busy_time(&intervals, plt);

    Ok(Timings {
        first_paint_ms: fp,
        page_load_time_ms: plt,
        tfvr_ms: tfvr,
        processing_time_ms: (plt - busy).max(0.0),
        network_busy_ms: busy,
        fp_source,
    })
}

/// Counts, sizes and rates over non-aborted entries.
pub fn resource_stats(session: &HarSession, suffixes: &SuffixRules) -> ResourceStats {
    let mut stats = ResourceStats {
        aborted_count: session.entries.iter().filter(|e| e.is_aborted()).count() as u64,
        ..ResourceStats::default()
    };
    let mut domains = BTreeSet::new();
    let mut https = 0u64;
    let mut rate_sum = 0.0;
    let mut rate_n = 0u64;

    for e in session.completed_entries() {
        stats.resource_count += 1;
        let body = e.body_size_bytes.max(0) as u64;
        stats.total_body_bytes += body;
        stats.total_transfer_bytes += e.transfer_size_bytes.max(0) as u64;
        let class = stats
            .per_mime_class
            .entry(MimeClass::of(&e.mime_type))
            .or_default();
        class.count += 1;
        class.bytes += body;
        if let Some(host) = e.host() {
            domains.insert(suffixes.registrable_domain(&host));
        }
        if e.is_https() {
            https += 1;
        }
        if let Some(receive) = e.phase_times.receive.filter(|r| *r > 0.0) {
            if e.transfer_size_bytes >= 0 {
                rate_sum += e.transfer_size_bytes as f64 / (receive / 1000.0);
                rate_n += 1;
            }
        }
    }

    stats.domain_count = domains.len() as u64;
    if stats.resource_count > 0 {
        stats.https_fraction = https as f64 / stats.resource_count as f64;
    }
    if rate_n > 0 {
        stats.mean_transfer_rate_bytes_per_s = rate_sum / rate_n as f64;
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::har::{Headers, PhaseTimings};
    use chrono::{TimeZone, Utc};

    fn entry(url: &str, mime: &str, start: Millis, total: Millis) -> HarEntry {
        HarEntry {
            url: url.into(),
            method: "GET".into(),
            status: 200,
            http_version_raw: "h2".into(),
            response_headers: Headers::new(),
            mime_type: mime.into(),
            body_size_bytes: 100,
            transfer_size_bytes: 120,
            server_ip: None,
            start_offset_ms: start,
            total_time_ms: total,
            phase_times: PhaseTimings::ABSENT,
        }
    }

    fn session(entries: Vec<HarEntry>, on_load: Option<Millis>) -> HarSession {
        HarSession {
            page_url: "https://www.example.com/".into(),
            started_at: Utc.with_ymd_and_hms(2019, 6, 1, 10, 0, 0).unwrap(),
            browser_name: "Chrome".into(),
            browser_version: "76".into(),
            on_content_load_ms: None,
            on_load_ms: on_load,
            entries,
            warnings: vec![],
        }
    }

    /// 1 ms-step occupancy scan.
    fn busy_scan_1ms(intervals: &[(Millis, Millis)], horizon: Millis) -> Millis {
        let mut busy = 0.0;
        let mut t = 0.0;
        while t < horizon {
            if intervals.iter().any(|&(s, d)| s <= t && t < s + d) {
                busy += 1.0;
            }
            t += 1.0;
        }
        busy
    }

    #[test]
    fn busy_overlapping_pair() {
        let iv = [(0.0, 100.0), (50.0, 100.0)];
        // oracle: 1 ms-step brute force gives 150
        assert_eq!(busy_scan_1ms(&iv, 200.0), 150.0);
        assert_eq!(network_busy_time(&iv, 200.0), 150.0);
    }

    #[test]
    fn busy_empty_and_disjoint() {
        assert_eq!(network_busy_time(&[], 100.0), 0.0);
        assert_eq!(network_busy_time(&[(0.0, 10.0), (20.0, 10.0)], 100.0), 20.0);
    }

    #[test]
    fn busy_clipped_at_horizon() {
        assert_eq!(
            network_busy_time(&[(0.0, 10.0), (90.0, 50.0), (150.0, 5.0)], 100.0),
            20.0
        );
    }

    #[test]
    fn single_entry_timings() {
        let s = session(
            vec![entry("https://a.com/", "text/html", 0.0, 300.0)],
            Some(320.0),
        );
        let t = compute_timings(&s, None, (1440, 900)).unwrap();
        assert_eq!(t.page_load_time_ms, 320.0);
        assert_eq!(t.network_busy_ms, 300.0);
        assert_eq!(t.processing_time_ms, 20.0);
        assert_eq!(t.fp_source, FpSource::FallbackEstimate);
        assert_eq!(t.first_paint_ms, Some(300.0));
    }

    #[test]
    fn overlapping_entries_processing() {
        let s = session(
            vec![
                entry("https://a.com/", "text/html", 0.0, 100.0),
                entry("https://a.com/x.js", "application/javascript", 50.0, 100.0),
            ],
            Some(200.0),
        );
        let t = compute_timings(&s, None, (1440, 900)).unwrap();
        // 200 - 150 (union length from the occupancy oracle above)
        assert_eq!(t.processing_time_ms, 50.0);
    }

    #[test]
    fn driver_paint_event_passthrough() {
        let s = session(
            vec![entry("https://a.com/", "text/html", 0.0, 300.0)],
            Some(900.0),
        );
        let events = [
            PaintEvent::new(FIRST_CONTENTFUL_PAINT, 380.0),
            PaintEvent::new(FIRST_PAINT, 410.0),
        ];
        let t = compute_timings(&s, Some(&events), (1440, 900)).unwrap();
        assert_eq!(t.first_paint_ms, Some(410.0));
        assert_eq!(t.fp_source, FpSource::DriverEvent);
        assert_eq!(t.tfvr_ms, Some(410.0));
    }

    #[test]
    fn unrecognized_paint_names_fall_back() {
        let s = session(vec![entry("https://a.com/", "text/html", 0.0, 300.0)], None);
        let events = [PaintEvent::new("largest-contentful-paint", 10.0)];
        let t = compute_timings(&s, Some(&events), (1440, 900)).unwrap();
        assert_eq!(t.fp_source, FpSource::FallbackEstimate);
    }

    #[test]
    fn fallback_fp_includes_blocking_stylesheets() {
        let s = session(
            vec![
                entry("https://a.com/", "text/html", 0.0, 100.0),
                entry("https://a.com/a.css", "text/css", 40.0, 100.0),
                entry("https://a.com/late.css", "text/css", 150.0, 100.0),
                entry("https://a.com/i.png", "image/png", 120.0, 30.0),
                entry("https://a.com/j.png", "image/png", 200.0, 300.0),
                entry("https://a.com/f.woff2", "font/woff2", 300.0, 50.0),
                entry("https://a.com/x.js", "text/javascript", 100.0, 10.0),
            ],
            Some(600.0),
        );
        let t = compute_timings(&s, None, (1440, 900)).unwrap();
        assert_eq!(t.first_paint_ms, Some(140.0));
        // critical: doc 100, a.css 140, late.css 250, i.png 150 (< fp), font 350, x.js 110
        assert_eq!(t.tfvr_ms, Some(350.0));
        assert_eq!(t.page_load_time_ms, 600.0);
    }

    #[test]
    fn plt_from_entries_without_onload() {
        let s = session(
            vec![
                entry("https://a.com/", "text/html", 0.0, 100.0),
                entry("https://a.com/z.bin", "application/octet-stream", 400.0, 50.0),
            ],
            None,
        );
        let t = compute_timings(&s, None, (800, 600)).unwrap();
        assert_eq!(t.page_load_time_ms, 450.0);
        assert_eq!(t.network_busy_ms, 150.0);
    }

    #[test]
    fn empty_session_is_an_error() {
        let s = session(vec![], None);
        assert_eq!(compute_timings(&s, None, (1, 1)), Err(MetricsError::EmptySession));
        let t = compute_timings(&session(vec![], Some(50.0)), None, (1, 1)).unwrap();
        assert_eq!(t.page_load_time_ms, 50.0);
        assert_eq!(t.fp_source, FpSource::Absent);
        assert_eq!(t.tfvr_ms, None);
    }

    #[test]
    fn paint_after_load_is_clamped() {
        let s = session(
            vec![entry("https://a.com/", "text/html", 0.0, 100.0)],
            Some(200.0),
        );
        let t = compute_timings(&s, Some(&[PaintEvent::new(FIRST_PAINT, 500.0)]), (1, 1)).unwrap();
        assert_eq!(t.first_paint_ms, Some(200.0));
        assert_eq!(t.tfvr_ms, Some(200.0));
    }

    #[test]
    fn mime_classes() {
        assert_eq!(MimeClass::of("text/html; charset=utf-8"), MimeClass::Document);
        assert_eq!(MimeClass::of("application/javascript"), MimeClass::Script);
        assert_eq!(MimeClass::of("application/x-javascript"), MimeClass::Script);
        assert_eq!(MimeClass::of("text/js"), MimeClass::Script);
        assert_eq!(MimeClass::of("text/css"), MimeClass::Stylesheet);
        assert_eq!(MimeClass::of("image/webp"), MimeClass::Image);
        assert_eq!(MimeClass::of("font/woff2"), MimeClass::Font);
        assert_eq!(MimeClass::of("application/font-woff"), MimeClass::Font);
        assert_eq!(MimeClass::of("video/mp4"), MimeClass::Media);
        assert_eq!(MimeClass::of("audio/mpeg"), MimeClass::Media);
        assert_eq!(MimeClass::of("application/json"), MimeClass::Other);
        assert_eq!(MimeClass::of(""), MimeClass::Other);
    }

    #[test]
    fn stats_exclude_aborted_and_compute_rate() {
        let mut a = entry("https://a.com/", "text/html", 0.0, 100.0);
        a.phase_times.receive = Some(500.0);
        a.transfer_size_bytes = 1000;
        let mut b = entry("http://cdn.b.net/x.js", "application/javascript", 0.0, 100.0);
        b.phase_times.receive = Some(1000.0);
        b.transfer_size_bytes = 4000;
        let mut aborted = entry("https://c.org/", "image/png", 0.0, 1.0);
        aborted.status = 0;
        let st = resource_stats(&session(vec![a, b, aborted], None), SuffixRules::bundled());
        assert_eq!(st.resource_count, 2);
        assert_eq!(st.aborted_count, 1);
        assert_eq!(st.domain_count, 2);
        assert_eq!(st.https_fraction, 0.5);
        assert_eq!(st.total_transfer_bytes, 5000);
        // (1000 / 0.5 s + 4000 / 1 s) / 2
        assert_eq!(st.mean_transfer_rate_bytes_per_s, 3000.0);
        assert_eq!(st.per_mime_class[&MimeClass::Document].count, 1);
        assert_eq!(st.per_mime_class[&MimeClass::Image].count, 0);
    }

    #[test]
    fn empty_stats_are_zero() {
        let st = resource_stats(&session(vec![], None), SuffixRules::bundled());
        assert_eq!(st, ResourceStats::default());
    }
}
