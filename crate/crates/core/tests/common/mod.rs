#![allow(dead_code)]

use std::net::IpAddr;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use serde_json::Value;
use webview_core::delivery::Enrichers;
use webview_core::har::{HarEntry, HarSession, Headers, PhaseTimings};
use webview_core::probe::{analyze, ingest_capture, CampaignConfig, SessionConfig};
use webview_core::protocol::{ProtocolPolicy, RequestedProtocol};
use webview_core::record::{AccessNetworkKind, MeasurementRecord, RecordFilter, Window};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn enrichers() -> Enrichers {
    Enrichers::from_dir(&fixtures().join("tables")).unwrap()
}

pub fn config() -> SessionConfig {
    CampaignConfig::load(&fixtures().join("campaign.json"))
        .unwrap()
        .session
}

pub fn ingest(corpus: &str, file: &str) -> MeasurementRecord {
    ingest_capture(&fixtures().join(corpus).join(file), &config(), &enrichers())
}

/// Addresses covered by the fixture tables, plus one nobody owns.
const IPS: [&str; 11] = [
    "23.32.1.10",
    "23.32.2.10",
    "151.101.120.80",
    "172.217.18.10",
    "52.84.1.2",
    "185.152.65.1",
    "185.172.149.1",
    "195.154.10.1",
    "47.95.1.1",
    "4.2.2.1",
    "203.0.113.9",
];
const HOSTS: [&str; 6] = [
    "www.site.com",
    "cdn.site.com",
    "static.akamaized.net",
    "fonts.googleapis.com",
    "img.other.org",
    "x.cloudfront.net",
];
const VERSIONS: [&str; 6] = ["http/1.1", "h2", "h3", "h3-29", "http/2.0", "spdy/3"];
const MIMES: [&str; 7] = [
    "text/html",
    "text/css",
    "application/javascript",
    "image/png",
    "font/woff2",
    "video/mp4",
    "application/json",
];

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn random_entry(rng: &mut StdRng, start: f64, duration: f64) -> HarEntry {
    let mut headers = Headers::new();
    if rng.random_bool(0.3) {
        headers.push("X-Cache", *["HIT", "MISS", "MISS, HIT"].choose(rng).unwrap());
    }
    HarEntry {
        url: format!(
            "https://{}/r{}",
            HOSTS.choose(rng).unwrap(),
            rng.random_range(0..1000)
        ),
        method: "GET".into(),
        status: if rng.random_bool(0.05) { 0 } else { 200 },
        http_version_raw: VERSIONS.choose(rng).unwrap().to_string(),
        response_headers: headers,
        mime_type: MIMES.choose(rng).unwrap().to_string(),
        body_size_bytes: rng.random_range(-1..50_000),
        transfer_size_bytes: rng.random_range(-1..50_000),
        server_ip: rng
            .random_bool(0.95)
            .then(|| IPS.choose(rng).unwrap().parse::<IpAddr>().unwrap()),
        start_offset_ms: start,
        total_time_ms: duration,
        phase_times: PhaseTimings::ABSENT,
    }
}

/// Random session with up to `max_entries` requests and a load event after
/// the last one.
pub fn random_session(rng: &mut StdRng, max_entries: usize, started_at: DateTime<Utc>) -> HarSession {
    let n = rng.random_range(1..=max_entries);
    let entries: Vec<HarEntry> = (0..n)
        .map(|i| {
            let start = if i == 0 {
                0.0
            } else {
                rng.random_range(0.0..3000.0)
            };
            let duration = rng.random_range(0.0..800.0);
            let mut e = random_entry(rng, start, duration);
            if i == 0 {
                e.mime_type = "text/html".into();
                e.status = 200;
            }
            e
        })
        .collect();
    let last = entries.iter().map(HarEntry::end_offset_ms).fold(0.0, f64::max);
    HarSession {
        page_url: "https://www.site.com/".into(),
        started_at,
        browser_name: "Chrome".into(),
        browser_version: "120".into(),
        on_content_load_ms: None,
        on_load_ms: rng.random_bool(0.9).then(|| last + rng.random_range(0.0..300.0)),
        entries,
        warnings: Vec::new(),
    }
}

const SITES: [&str; 5] = [
    "youtube.com",
    "lefigaro.fr",
    "csdn.net",
    "wikipedia.org",
    "site.com",
];
const BROWSERS: [(&str, &str); 3] = [("Chrome", "120"), ("Firefox", "121"), ("Chrome", "119")];
const PLACES: [(&str, &str); 3] = [("Paris", "FR"), ("Lyon", "FR"), ("Tokyo", "JP")];
const WINDOWS: [(u32, u32); 2] = [(1920, 1080), (1366, 768)];

pub fn epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2026, 3, 1, 0, 0, 0).unwrap()
}

/// Records varying along every filterable dimension.
pub fn random_corpus(seed: u64, n: usize) -> Vec<MeasurementRecord> {
    let mut rng = rng(seed);
    let enrichers = enrichers();
    let base = config();
    (0..n)
        .map(|_| {
            let mut c = base.clone();
            let (name, version) = *BROWSERS.choose(&mut rng).unwrap();
            c.browser.name = name.into();
            c.browser.version = version.into();
            c.policy = ProtocolPolicy::for_requested(*RequestedProtocol::ALL.choose(&mut rng).unwrap());
            let (w, h) = *WINDOWS.choose(&mut rng).unwrap();
            c.window = Window { width: w, height: h };
            c.adblock = rng.random_bool(0.5);
            let (city, country) = *PLACES.choose(&mut rng).unwrap();
            c.probe.location.city = city.into();
            c.probe.location.country = country.into();
            c.probe.access_network.kind = *AccessNetworkKind::ALL.choose(&mut rng).unwrap();
            let at = epoch() + Duration::milliseconds(rng.random_range(0..10 * 86_400_000));
            let session = random_session(&mut rng, 12, at);
            let url = format!("https://www.{}/", SITES.choose(&mut rng).unwrap());
            analyze(&session, None, &c, &url, &enrichers)
        })
        .collect()
}

/// Filter semantics re-derived from the stored JSON rather than the typed
/// record.
pub fn oracle_matches(filter: &RecordFilter, line: &Value) -> bool {
    let text = |ptr: &str| {
        line.pointer(ptr)
            .and_then(Value::as_str)
            .unwrap_or("")
            .to_string()
    };
    let eq = |a: &str, b: &str| a.to_lowercase() == b.to_lowercase();
    if let Some(w) = &filter.website {
        if !eq(&text("/website"), w) {
            return false;
        }
    }
    if let Some(b) = &filter.browser {
        let name = text("/browser/name");
        let version = text("/browser/version");
        let ok = match b.split_once('/') {
            Some((n, v)) => eq(&name, n) && version == v,
            None => eq(&name, b),
        };
        if !ok {
            return false;
        }
    }
    if let Some(k) = filter.access_network {
        if text("/access_network/kind") != serde_json::to_value(k).unwrap().as_str().unwrap() {
            return false;
        }
    }
    if let Some(l) = &filter.probe_location {
        if !eq(&text("/probe_location/city"), l) && !eq(&text("/probe_location/country"), l) {
            return false;
        }
    }
    if let Some(w) = filter.window {
        let dims = (line.pointer("/window/width"), line.pointer("/window/height"));
        if dims != (Some(&Value::from(w.width)), Some(&Value::from(w.height))) {
            return false;
        }
    }
    if let Some(a) = filter.adblock {
        if line.pointer("/adblock") != Some(&Value::Bool(a)) {
            return false;
        }
    }
    if let Some(p) = filter.requested_protocol {
        if text("/requested_protocol") != serde_json::to_value(p).unwrap().as_str().unwrap() {
            return false;
        }
    }
    if let Some(range) = filter.time_range {
        let t: DateTime<Utc> = text("/timestamp").parse().unwrap();
        if range.from.is_some_and(|f| t < f) || range.to.is_some_and(|e| t >= e) {
            return false;
        }
    }
    if let Some(p) = &filter.provider {
        let count: u64 = line
            .pointer("/per_provider")
            .and_then(Value::as_object)
            .map(|m| {
                m.iter()
                    .filter(|(k, _)| eq(k, p))
                    .filter_map(|(_, v)| v.as_u64())
                    .sum()
            })
            .unwrap_or(0);
        if count == 0 {
            return false;
        }
    }
    true
}

/// Stored records as raw JSON, straight from the file.
pub fn raw_lines(path: &Path) -> Vec<(u64, Value)> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            (v["id"].as_u64().unwrap(), v["record"].clone())
        })
        .collect()
}

/// One single-field filter per key and per distinct value in the corpus.
pub fn single_field_filters(records: &[MeasurementRecord]) -> Vec<RecordFilter> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    let mut add = |k: &str, v: String| {
        let p = (k.to_string(), v);
        if !pairs.contains(&p) {
            pairs.push(p);
        }
    };
    for r in records {
        add("website", r.website.clone());
        add("browser", r.browser.name.clone());
        add("browser", format!("{}/{}", r.browser.name, r.browser.version));
        add("access_network", r.access_network.kind.to_string());
        add("probe_location", r.probe_location.city.clone());
        add("probe_location", r.probe_location.country.clone());
        add("window", r.window.to_string());
        add("adblock", r.adblock.to_string());
        add("requested_protocol", r.requested_protocol.to_string());
        for p in r.per_provider.keys() {
            add("provider", p.clone());
        }
    }
    add("website", "absent.example".into());
    add("provider", "Nobody".into());
    for day in [1, 4, 9] {
        let from = epoch() + Duration::days(day);
        let to = from + Duration::hours(36);
        add(
            "time_range",
            format!("{}..{}", from.to_rfc3339(), to.to_rfc3339()),
        );
    }
    add("time_range", "2026-03-05..".into());
    pairs
        .into_iter()
        .map(|(k, v)| RecordFilter::from_pairs(&[format!("{k}={v}")]).unwrap())
        .collect()
}
