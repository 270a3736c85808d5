use std::collections::BTreeMap;
use std::fmt::{self, Display, Write as _};
use std::str::FromStr;

use geojson::{Feature, FeatureCollection, Geometry, JsonObject};
use serde_json::json;

use super::{Report, ReportKind, Rows, Summary};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
    Geojson,
    Html,
}

impl Format {
    pub const ALL: [Format; 4] = [Format::Json, Format::Csv, Format::Geojson, Format::Html];

    pub fn as_str(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
            Format::Geojson => "geojson",
            Format::Html => "html",
        }
    }
}

impl Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Format::ALL
            .into_iter()
            .find(|f| f.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("{s:?} is not one of json, csv, geojson, html"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("{format} output is not available for {kind} reports")]
    FormatMismatch { kind: ReportKind, format: Format },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

fn joined<K: Display>(m: &BTreeMap<K, u64>) -> String {
    m.iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

fn summary_cells(s: &Summary) -> [String; 4] {
    [
        s.records.to_string(),
        s.mean.to_string(),
        s.median.to_string(),
        s.p90.to_string(),
    ]
}

fn table(rows: &Rows) -> (Vec<&'static str>, Vec<Vec<String>>) {
    match rows {
        Rows::ProtocolPanel(rows) => (
            vec!["group", "protocol", "count", "fraction", "mean_page_fraction"],
            rows.iter()
                .map(|r| {
                    vec![
                        opt(&r.group),
                        r.protocol.as_str().to_string(),
                        r.count.to_string(),
                        r.fraction.to_string(),
                        opt(&r.mean_page_fraction),
                    ]
                })
                .collect(),
        ),
        Rows::GeoPanel(rows) => (
            vec![
                "group",
                "continent",
                "country",
                "city",
                "latitude",
                "longitude",
                "weight",
                "providers",
                "protocols",
            ],
            rows.iter()
                .map(|r| {
                    vec![
                        r.group.clone(),
                        opt(&r.continent),
                        opt(&r.country),
                        opt(&r.city),
                        opt(&r.latitude),
                        opt(&r.longitude),
                        r.weight.to_string(),
                        joined(&r.providers),
                        joined(&r.protocols.iter().map(|(p, n)| (p.as_str(), *n)).collect()),
                    ]
                })
                .collect(),
        ),
        Rows::CdnTable(rows) => (
            vec!["provider", "count", "share"],
            rows.iter()
                .map(|r| vec![r.provider.clone(), r.count.to_string(), r.share.to_string()])
                .collect(),
        ),
        Rows::Timeseries(rows) => (
            vec![
                "bucket_start",
                "bucket_end",
                "partial",
                "group",
                "records",
                "mean",
                "median",
                "p90",
            ],
            rows.iter()
                .map(|r| {
                    let mut cells = vec![
                        r.bucket_start.to_rfc3339(),
                        r.bucket_end.to_rfc3339(),
                        r.partial.to_string(),
                        opt(&r.group),
                    ];
                    cells.extend(summary_cells(&r.summary));
                    cells
                })
                .collect(),
        ),
        Rows::Compare(rows) => (
            vec![
                "value",
                "baseline",
                "records",
                "mean",
                "median",
                "p90",
                "delta_vs_baseline",
            ],
            rows.iter()
                .map(|r| {
                    let mut cells = vec![r.value.clone(), r.baseline.to_string()];
                    cells.extend(summary_cells(&r.summary));
                    cells.push(r.delta_vs_baseline.to_string());
                    cells
                })
                .collect(),
        ),
    }
}

fn render_csv(report: &Report) -> Result<Vec<u8>, RenderError> {
    let (header, rows) = table(&report.rows);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner()
        .map_err(|e| RenderError::Csv(e.into_error().into()))
}

fn geo_collection(report: &Report) -> Result<FeatureCollection, RenderError> {
    let Rows::GeoPanel(rows) = &report.rows else {
        return Err(RenderError::FormatMismatch {
            kind: report.kind(),
            format: Format::Geojson,
        });
    };
    let features = rows.iter().map(|r| {
        let mut properties = JsonObject::new();
        properties.insert("group".into(), json!(r.group));
        properties.insert("weight".into(), json!(r.weight));
        properties.insert("providers".into(), json!(r.providers));
        properties.insert("protocols".into(), json!(r.protocols));
        Feature {
            geometry: r
                .latitude
                .zip(r.longitude)
                .map(|(lat, lon)| Geometry::new_point([lon, lat])),
            properties: Some(properties),
            ..Feature::default()
        }
    });
    Ok(FeatureCollection::from_iter(features))
}

fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn render_html(report: &Report) -> Result<Vec<u8>, RenderError> {
    let (header, rows) = table(&report.rows);
    // `</` would end the script element early.
    let data = serde_json::to_string(report)?.replace("</", "<\\/");
    let title = escape_html(&format!("{} report", report.kind()));
    let mut html = String::new();
    let _ = write!(
        html,
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>{title}</title>\n\
         <style>body{{font-family:sans-serif}}table{{border-collapse:collapse}}\
         td,th{{border:1px solid #999;padding:2px 6px;text-align:left}}</style>\n</head>\n<body>\n\
         <h1>{title}</h1>\n<p>{} records matched. Generated {}.</p>\n",
        report.record_count,
        report.generated_at.to_rfc3339(),
    );
    if report.empty {
        html.push_str("<p>No records matched the filters.</p>\n");
    }
    html.push_str("<table>\n<thead><tr>");
    for h in header {
        let _ = write!(html, "<th>{}</th>", escape_html(h));
    }
    html.push_str("</tr></thead>\n<tbody>\n");
    for row in rows {
        html.push_str("<tr>");
        for cell in row {
            let _ = write!(html, "<td>{}</td>", escape_html(&cell));
        }
        html.push_str("</tr>\n");
    }
    html.push_str("</tbody>\n</table>\n");
    let _ = write!(
        html,
        "<script type=\"application/json\" id=\"report-data\">{data}</script>\n</body>\n</html>\n"
    );
    Ok(html.into_bytes())
}

/// Serialize a report. GeoJSON is only defined for geographic panels.
pub fn render(report: &Report, format: Format) -> Result<Vec<u8>, RenderError> {
    match format {
        Format::Json => Ok(serde_json::to_vec_pretty(report)?),
        Format::Csv => render_csv(report),
        Format::Geojson => Ok(serde_json::to_vec_pretty(&geo_collection(report)?)?),
        Format::Html => render_html(report),
    }
}
