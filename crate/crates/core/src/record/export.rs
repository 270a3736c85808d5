//! Flat CSV export: one row per record, maps exploded into
//! `<map>.<key>` columns.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use super::MeasurementRecord;
use crate::metrics::MimeClass;
use crate::protocol::Protocol;

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

const SCALAR_COLUMNS: [&str; 32] = [
    "schema_version",
    "probe_id",
    "probe_city",
    "probe_country",
    "access_network",
    "operator",
    "browser_name",
    "browser_version",
    "window_width",
    "window_height",
    "adblock",
    "requested_protocol",
    "website",
    "url",
    "timestamp",
    "status",
    "status_reason",
    "first_paint_ms",
    "page_load_time_ms",
    "tfvr_ms",
    "processing_time_ms",
    "network_busy_ms",
    "resource_count",
    "aborted_count",
    "domain_count",
    "total_body_bytes",
    "total_transfer_bytes",
    "mean_transfer_rate_bytes_per_s",
    "https_fraction",
    "unattributed_count",
    "quic_domains",
    "warnings",
];

fn fixed_header() -> Vec<String> {
    let mut h: Vec<String> = SCALAR_COLUMNS.iter().map(|c| c.to_string()).collect();
    for class in MimeClass::ALL {
        h.push(format!("mime.{}.count", class.as_str()));
        h.push(format!("mime.{}.bytes", class.as_str()));
    }
    for p in Protocol::ALL {
        h.push(format!("protocol.{}.count", p.as_str()));
        h.push(format!("protocol.{}.fraction", p.as_str()));
    }
    h
}

/// Values in [`fixed_header`] order.
fn fixed_values(r: &MeasurementRecord) -> Vec<String> {
    let t = r.timings.as_ref();
    let scalars: [String; 32] = [
        r.schema_version.to_string(),
        r.probe_id.clone(),
        r.probe_location.city.clone(),
        r.probe_location.country.clone(),
        r.access_network.kind.to_string(),
        r.access_network.operator.clone(),
        r.browser.name.clone(),
        r.browser.version.clone(),
        r.window.width.to_string(),
        r.window.height.to_string(),
        r.adblock.to_string(),
        r.requested_protocol.to_string(),
        r.website.clone(),
        r.url.clone(),
        r.timestamp.to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        r.status.as_str().to_string(),
        r.status_reason.clone().unwrap_or_default(),
        opt(t.and_then(|t| t.first_paint_ms)),
        opt(t.map(|t| t.page_load_time_ms)),
        opt(t.and_then(|t| t.tfvr_ms)),
        opt(t.map(|t| t.processing_time_ms)),
        opt(t.map(|t| t.network_busy_ms)),
        r.stats.resource_count.to_string(),
        r.stats.aborted_count.to_string(),
        r.stats.domain_count.to_string(),
        r.stats.total_body_bytes.to_string(),
        r.stats.total_transfer_bytes.to_string(),
        r.stats.mean_transfer_rate_bytes_per_s.to_string(),
        r.stats.https_fraction.to_string(),
        r.unattributed_count.to_string(),
        r.quic_domains.iter().cloned().collect::<Vec<_>>().join(";"),
        r.warnings.join(" | "),
    ];
    let mut v = scalars.to_vec();
    for class in MimeClass::ALL {
        let totals = r.stats.per_mime_class.get(&class).copied().unwrap_or_default();
        v.push(totals.count.to_string());
        v.push(totals.bytes.to_string());
    }
    for p in Protocol::ALL {
        v.push(r.distribution.counts.get(&p).copied().unwrap_or(0).to_string());
        v.push(
            r.distribution
                .fractions
                .get(&p)
                .copied()
                .unwrap_or(0.0)
                .to_string(),
        );
    }
    v
}

fn map_columns(r: &MeasurementRecord) -> BTreeMap<String, String> {
    let mut cols = BTreeMap::new();
    for (k, v) in &r.per_provider {
        cols.insert(format!("per_provider.{k}"), v.to_string());
    }
    for (k, v) in &r.per_continent {
        cols.insert(format!("per_continent.{k}"), v.to_string());
    }
    for (k, v) in &r.per_domain {
        cols.insert(format!("per_domain.{k}"), v.count.to_string());
    }
    for (k, v) in &r.extra {
        cols.insert(format!("extra.{k}"), v.to_string());
    }
    cols
}

/// Header row plus one row per record. Map columns are the union over all
/// records, sorted; missing cells are empty.
pub fn write_csv<W: Write>(records: &[MeasurementRecord], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let fixed = fixed_header();
    let maps: Vec<BTreeMap<String, String>> = records.iter().map(map_columns).collect();
    let dynamic: BTreeSet<&String> = maps.iter().flat_map(|m| m.keys()).collect();

    w.write_record(fixed.iter().chain(dynamic.iter().copied()))?;
    for (r, m) in records.iter().zip(&maps) {
        let row = fixed_values(r)
            .into_iter()
            .chain(dynamic.iter().map(|k| m.get(*k).cloned().unwrap_or_default()));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}
