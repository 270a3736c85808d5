use chrono::{DateTime, Duration, SecondsFormat, Utc};
use serde_json::{json, Value};

use super::{HarEntry, HarSession, Millis};

const PAGE_ID: &str = "page_1";

fn timestamp(base: DateTime<Utc>, offset: Millis) -> String {
    let at = base + Duration::nanoseconds((offset * 1e6).round() as i64);
    at.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

fn phase(value: Option<Millis>) -> Value {
    value.map_or(json!(-1), |v| json!(v))
}

fn entry_to_har(base: DateTime<Utc>, e: &HarEntry) -> Value {
    let headers: Vec<Value> = e
        .response_headers
        .iter()
        .map(|(name, value)| json!({"name": name, "value": value}))
        .collect();
    let p = &e.phase_times;
    let mut entry = json!({
        "pageref": PAGE_ID,
        "startedDateTime": timestamp(base, e.start_offset_ms),
        "time": e.total_time_ms,
        "request": {
            "method": e.method,
            "url": e.url,
            "httpVersion": e.http_version_raw,
            "headers": [],
            "queryString": [],
            "cookies": [],
            "headersSize": -1,
            "bodySize": -1,
        },
        "response": {
            "status": e.status,
            "statusText": "",
            "httpVersion": e.http_version_raw,
            "headers": headers,
            "cookies": [],
            "content": {"size": e.body_size_bytes.max(0), "mimeType": e.mime_type},
            "redirectURL": "",
            "headersSize": -1,
            "bodySize": e.body_size_bytes,
            "_transferSize": e.transfer_size_bytes,
        },
        "cache": {},
        "timings": {
            "blocked": phase(p.blocked),
            "dns": phase(p.dns),
            "connect": phase(p.connect),
            "ssl": phase(p.ssl),
            "send": phase(p.send),
            "wait": phase(p.wait),
            "receive": phase(p.receive),
        },
    });
    if let Some(ip) = e.server_ip {
        entry["serverIPAddress"] = json!(ip.to_string());
    }
    entry
}

pub(super) fn session_to_har(session: &HarSession) -> Value {
    let opt = |v: Option<Millis>| v.map_or(json!(-1), |v| json!(v));
    json!({
        "log": {
            "version": "1.2",
            "creator": {"name": "webview", "version": env!("CARGO_PKG_VERSION")},
            "browser": {"name": session.browser_name, "version": session.browser_version},
            "pages": [{
                "startedDateTime": session.started_at.to_rfc3339_opts(SecondsFormat::AutoSi, true),
                "id": PAGE_ID,
                "title": session.page_url,
                "pageTimings": {
                    "onContentLoad": opt(session.on_content_load_ms),
                    "onLoad": opt(session.on_load_ms),
                },
            }],
            "entries": session
                .entries
                .iter()
                .map(|e| entry_to_har(session.started_at, e))
                .collect::<Vec<_>>(),
        }
    })
}
