//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use common::*;
use rand::Rng;
use webview_core::har::{parse_har, HarSession};
use webview_core::metrics::{compute_timings, PaintEvent};
use webview_core::probe::{
    run_session, BrowserDriver, DriverError, Instrumented, LaunchOptions, Navigation, ReplayDriver,
    SessionConfig, DEFAULT_TIMEOUT_MS, GRACE_MS,
};
use webview_core::protocol::{protocol_distribution, Protocol, ProtocolPolicy, RequestedProtocol};
use webview_core::record::{MeasurementRecord, RecordFilter, RecordStore, SessionStatus, StoreError};
use webview_core::report::{aggregate, render, Format, GroupBy, ReportKind, ReportOptions, Rows};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn FnOnce() -> Outcome + 'a>);

fn check(cond: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(message())
    }
}

fn c1_single_resource_pipeline() -> Outcome {
    let started = Instant::now();
    let path = fixtures().join("example/example.com.har");
    let record = ingest("example", "example.com.har");
    let session = parse_har(&std::fs::read(&path).unwrap()).map_err(|e| e.to_string())?;
    let a = enrichers().attribute(&session.entries[0], "example.com");
    let elapsed = started.elapsed();
    check(a.provider == "Fastly", || format!("provider {}", a.provider))?;
    check(a.served_from_cache, || "served_from_cache is false".into())?;
    check(
        a.delivering_server_label.as_deref() == Some("cache-cdg20761-CDG"),
        || format!("delivering server {:?}", a.delivering_server_label),
    )?;
    check(
        record.status == SessionStatus::Complete && record.provider_count("Fastly") == 1,
        || format!("record {:?} {:?}", record.status, record.per_provider),
    )?;
    check(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "Fastly, HIT at cache-cdg20761-CDG in {} ms",
        elapsed.as_millis()
    ))
}

fn c2_cdn_table() -> Outcome {
    let record = ingest("lefigaro", "lefigaro.fr.har");
    let report = aggregate(
        &[record],
        ReportKind::CdnTable,
        &RecordFilter::default(),
        &ReportOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let Rows::CdnTable(rows) = report.rows else {
        unreachable!()
    };
    let got: Vec<(&str, u64)> = rows.iter().map(|r| (r.provider.as_str(), r.count)).collect();
    let want = [
        ("Akamai", 60),
        ("No CDN", 55),
        ("Fastly", 25),
        ("Google", 7),
        ("Amazon", 2),
        ("Cdn77", 1),
        ("KeyCdn", 1),
    ];
    check(got == want, || format!("rows {got:?}"))?;
    let total: u64 = got.iter().map(|(_, n)| n).sum();
    check(total == 151, || format!("total {total}"))?;
    Ok(format!("{got:?}, total {total}"))
}

fn c3_csdn_geo() -> Outcome {
    let record = ingest("csdn", "csdn.net.har");
    let records = [record];
    let options = ReportOptions {
        group_by: Some(GroupBy::Continent),
        ..ReportOptions::default()
    };
    let geo = aggregate(&records, ReportKind::GeoPanel, &RecordFilter::default(), &options)
        .map_err(|e| e.to_string())?;
    let Rows::GeoPanel(rows) = geo.rows else {
        unreachable!()
    };
    let continents: BTreeMap<&str, u64> = rows.iter().map(|r| (r.group.as_str(), r.weight)).collect();
    let want = BTreeMap::from([("AS", 50), ("EU", 81), ("NA", 2)]);
    check(continents == want, || format!("continents {continents:?}"))?;
    check(continents.values().sum::<u64>() == 133, || {
        "total is not 133".into()
    })?;

    let panel = aggregate(
        &records,
        ReportKind::ProtocolPanel,
        &RecordFilter::default(),
        &ReportOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let Rows::ProtocolPanel(rows) = panel.rows else {
        unreachable!()
    };
    let fraction = |p: Protocol| rows.iter().find(|r| r.protocol == p).map_or(0.0, |r| r.fraction);
    let (h2, h1) = (fraction(Protocol::H2), fraction(Protocol::H1));
    check((h2 - 0.63).abs() <= 0.005 && (h1 - 0.37).abs() <= 0.005, || {
        format!("H2 {h2}, H1 {h1}")
    })?;
    Ok(format!("{continents:?} of 133, H2 {h2:.4}, H1 {h1:.4}"))
}

fn expected_protocol(raw: &str) -> Protocol {
    match raw {
        "http/1.1" => Protocol::H1,
        "h2" | "http/2.0" => Protocol::H2,
        "h3" | "h3-29" => Protocol::Quic,
        _ => Protocol::Other,
    }
}

fn c4_protocol_distribution() -> Outcome {
    let mut rng = rng(4);
    let mut worst = 0.0_f64;
    for i in 0..200 {
        let session = random_session(&mut rng, 100, epoch());
        let d = protocol_distribution(&session);
        let mut oracle: BTreeMap<Protocol, u64> = Protocol::ALL.into_iter().map(|p| (p, 0)).collect();
        for e in session.entries.iter().filter(|e| e.status != 0) {
            *oracle.get_mut(&expected_protocol(&e.http_version_raw)).unwrap() += 1;
        }
        check(d.counts == oracle, || {
            format!("session {i}: {:?} vs {oracle:?}", d.counts)
        })?;
        if d.total() > 0 {
            let sum: f64 = d.fractions.values().sum();
            worst = worst.max((sum - 1.0).abs());
            check((sum - 1.0).abs() <= 1e-9, || {
                format!("session {i}: fractions sum to {sum}")
            })?;
        }
    }
    Ok(format!("200 sessions, max |sum - 1| = {worst:e}"))
}

/// Session whose request intervals and load event lie on a 0.1 ms grid.
fn grid_session(rng: &mut rand::rngs::StdRng) -> (HarSession, Option<Vec<PaintEvent>>) {
    let mut s = random_session(rng, 50, epoch());
    let tenth = |v: f64| (v * 10.0).round() / 10.0;
    for e in &mut s.entries {
        e.start_offset_ms = tenth(e.start_offset_ms);
        e.total_time_ms = tenth(e.total_time_ms);
    }
    s.on_load_ms = s.on_load_ms.map(tenth);
    let paint = rng.random_bool(0.5).then(|| {
        vec![PaintEvent::new(
            "first-paint",
            tenth(rng.random_range(0.0..4000.0)),
        )]
    });
    (s, paint)
}

fn brute_force_busy(session: &HarSession, plt: f64) -> f64 {
    let steps = (plt * 10.0).round() as i64;
    let covered = (0..steps)
        .filter(|&k| {
            let t = (k as f64 + 0.5) / 10.0;
            session
                .entries
                .iter()
                .any(|e| e.start_offset_ms <= t && t < e.start_offset_ms + e.total_time_ms)
        })
        .count();
    covered as f64 / 10.0
}

fn c5_timing_oracle() -> Outcome {
    let mut rng = rng(5);
    let mut worst = 0.0_f64;
    for i in 0..200 {
        let (session, paint) = grid_session(&mut rng);
        let t = compute_timings(&session, paint.as_deref(), (1920, 1080)).map_err(|e| e.to_string())?;
        let busy = brute_force_busy(&session, t.page_load_time_ms);
        let processing = t.page_load_time_ms - busy;
        let err = (t.network_busy_ms - busy)
            .abs()
            .max((t.processing_time_ms - processing).abs());
        worst = worst.max(err);
        check(err <= 0.2, || {
            format!("session {i}: busy {} vs {busy}", t.network_busy_ms)
        })?;
        if let Some(tfvr) = t.tfvr_ms {
            check(tfvr <= t.page_load_time_ms, || {
                format!("session {i}: TFVR {tfvr} > PLT")
            })?;
            if let Some(fp) = t.first_paint_ms {
                check(fp <= tfvr, || format!("session {i}: FP {fp} > TFVR {tfvr}"))?;
            }
        }
    }
    Ok(format!("200 sessions, max deviation {worst:.4} ms"))
}

fn session_config(requested: RequestedProtocol, timeout_ms: u64) -> SessionConfig {
    SessionConfig {
        policy: ProtocolPolicy::for_requested(requested),
        timeout_ms,
        ..config()
    }
}

fn c6_repeat_mode(rt: &tokio::runtime::Runtime) -> Outcome {
    let replay = fixtures().join("example");
    let run = |requested| {
        let mut driver = Instrumented::new(ReplayDriver::new(&replay));
        let record = rt.block_on(run_session(
            &session_config(requested, DEFAULT_TIMEOUT_MS),
            "https://www.example.com/",
            &mut driver,
            &enrichers(),
        ));
        (record, driver.calls())
    };
    let (record, calls) = run(RequestedProtocol::QuicRepeat);
    let want = [
        "launch",
        "clear_resource_cache",
        "navigate",
        "close",
        "clear_resource_cache",
        "launch",
        "navigate",
        "close",
    ];
    check(calls == want, || format!("repeat calls {calls:?}"))?;
    check(record.status == SessionStatus::Complete, || {
        format!("repeat status {:?}", record.status)
    })?;
    let (_, single) = run(RequestedProtocol::Quic);
    check(
        single == ["launch", "clear_resource_cache", "navigate", "close"],
        || format!("single-pass calls {single:?}"),
    )?;
    Ok(calls.join(", "))
}

/// Accepts every command and never finishes loading.
struct Stalling;

#[async_trait]
impl BrowserDriver for Stalling {
    async fn launch(&mut self, _: &LaunchOptions) -> Result<(), DriverError> {
        Ok(())
    }
    async fn navigate(&mut self, _: &str, _: Duration) -> Result<Navigation, DriverError> {
        std::future::pending().await
    }
    async fn clear_resource_cache(&mut self) -> Result<(), DriverError> {
        Ok(())
    }
    async fn clear_dns_cache(&mut self) -> Result<(), DriverError> {
        Ok(())
    }
    async fn close(&mut self) -> Result<(), DriverError> {
        Ok(())
    }
}

fn c7_timeout(rt: &tokio::runtime::Runtime) -> Outcome {
    let limit = Duration::from_millis(DEFAULT_TIMEOUT_MS + GRACE_MS);
    let results = rt.block_on(async {
        let runs = (0..3).map(|_| {
            tokio::spawn(async {
                let started = Instant::now();
                let record = run_session(
                    &session_config(RequestedProtocol::H2, DEFAULT_TIMEOUT_MS),
                    "https://stalled.example/",
                    &mut Stalling,
                    &enrichers(),
                )
                .await;
                (record, started.elapsed())
            })
        });
        futures_util::future::join_all(runs).await
    });
    let mut times = Vec::new();
    for r in results {
        let (record, elapsed) = r.map_err(|e| e.to_string())?;
        check(record.status == SessionStatus::Timeout, || {
            format!("status {:?}", record.status)
        })?;
        check(!record.warnings.is_empty(), || {
            "timeout record without warnings".into()
        })?;
        check(elapsed <= limit, || format!("session took {elapsed:?}"))?;
        times.push(format!("{} ms", elapsed.as_millis()));
    }
    Ok(format!("3 timeout records in {}", times.join(", ")))
}

fn c8_store(corpus: &[MeasurementRecord]) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.jsonl");
    let mut store = RecordStore::open(&path).map_err(|e| e.to_string())?;
    for r in corpus {
        store.append(r).map_err(|e| e.to_string())?;
    }
    drop(store);

    let stored = RecordStore::read_all(&path).map_err(|e| e.to_string())?;
    check(stored.len() == corpus.len(), || {
        format!("{} of {} records read back", stored.len(), corpus.len())
    })?;
    for (s, r) in stored.iter().zip(corpus) {
        check(&s.record == r, || {
            format!("record {} differs after round trip", s.id)
        })?;
    }

    let raw = raw_lines(&path);
    let filters = single_field_filters(corpus);
    for f in &filters {
        let mut expected: Vec<(String, u64, MeasurementRecord)> = raw
            .iter()
            .filter(|(_, v)| oracle_matches(f, v))
            .map(|(id, v)| {
                (
                    v["timestamp"].as_str().unwrap().to_string(),
                    *id,
                    serde_json::from_value(v.clone()).unwrap(),
                )
            })
            .collect();
        expected.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
        let expected: Vec<MeasurementRecord> = expected.into_iter().map(|(_, _, r)| r).collect();
        let got = RecordStore::query(&path, f).map_err(|e| e.to_string())?;
        check(got == expected, || {
            format!("filter {f:?}: {} vs oracle {}", got.len(), expected.len())
        })?;
    }

    // Flip one digit inside a record; the line stays valid JSON.
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let target = lines.len() / 2;
    let pos = lines[target].find("\"resource_count\":").unwrap() + "\"resource_count\":".len();
    let digit = lines[target].as_bytes()[pos];
    let replacement = if digit == b'9' { '8' } else { (digit + 1) as char };
    lines[target].replace_range(pos..pos + 1, &replacement.to_string());
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    match RecordStore::read_all(&path) {
        Err(StoreError::Corrupt { line, .. }) => check(line == target + 1, || {
            format!("corruption reported on line {line}, expected {}", target + 1)
        })?,
        other => return Err(format!("corruption not detected: {:?}", other.map(|r| r.len()))),
    }
    Ok(format!(
        "{} records, {} single-field filters, corrupt line {} detected",
        corpus.len(),
        filters.len(),
        target + 1
    ))
}

fn c9_conservation(corpus: &[MeasurementRecord]) -> Outcome {
    let mut filters = single_field_filters(corpus);
    filters.push(RecordFilter::default());
    filters.push(RecordFilter::from_pairs(&["browser=Chrome", "adblock=true", "probe_location=FR"]).unwrap());
    for f in &filters {
        let total: u64 = corpus
            .iter()
            .filter(|r| f.matches(r))
            .map(|r| r.stats.resource_count)
            .sum();
        let cdn = aggregate(corpus, ReportKind::CdnTable, f, &ReportOptions::default())
            .map_err(|e| e.to_string())?;
        let Rows::CdnTable(rows) = &cdn.rows else {
            unreachable!()
        };
        let cdn_total: u64 = rows.iter().map(|r| r.count).sum();
        check(cdn_total == total, || {
            format!("{f:?}: cdn_table {cdn_total} vs {total}")
        })?;
        for by in [GroupBy::Continent, GroupBy::Country, GroupBy::City] {
            let options = ReportOptions {
                group_by: Some(by),
                ..ReportOptions::default()
            };
            let geo = aggregate(corpus, ReportKind::GeoPanel, f, &options).map_err(|e| e.to_string())?;
            let Rows::GeoPanel(rows) = &geo.rows else {
                unreachable!()
            };
            let weight: u64 = rows.iter().map(|r| r.weight).sum();
            check(weight == total, || {
                format!("{f:?} by {by}: geo weight {weight} vs {total}")
            })?;
            let doc: serde_json::Value =
                serde_json::from_slice(&render(&geo, Format::Geojson).unwrap()).unwrap();
            let features: u64 = doc["features"]
                .as_array()
                .unwrap()
                .iter()
                .map(|f| f["properties"]["weight"].as_u64().unwrap())
                .sum();
            check(features == total, || {
                format!("{f:?} by {by}: geojson weight {features} vs {total}")
            })?;
        }
    }
    Ok(format!("{} filters over {} records", filters.len(), corpus.len()))
}

/// One capture of `entries` requests padded to roughly `bytes` in total.
fn large_har(entries: usize, bytes: usize) -> Vec<u8> {
    let mut rng = rng(10);
    let mut session = random_session(&mut rng, 1, epoch());
    session.entries = (0..entries)
        .map(|i| {
            let mut e = random_entry(&mut rng, i as f64 * 5.0, 40.0);
            e.status = 200;
            e
        })
        .collect();
    session.on_load_ms = Some(entries as f64 * 5.0 + 100.0);
    let mut doc = session.to_har_json();
    let padding = "x".repeat(bytes / entries);
    for e in doc["log"]["entries"].as_array_mut().unwrap() {
        e["response"]["content"]["text"] = padding.clone().into();
    }
    serde_json::to_vec(&doc).unwrap()
}

fn c10_performance() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.har");
    let bytes = large_har(500, 10 * 1024 * 1024);
    std::fs::write(&path, &bytes).unwrap();
    let enrichers = enrichers();
    let config = config();
    let started = Instant::now();
    let record = webview_core::probe::ingest_capture(&path, &config, &enrichers);
    let elapsed = started.elapsed();
    check(
        record.status == SessionStatus::Complete && record.stats.resource_count == 500,
        || {
            format!(
                "status {:?}, {} resources",
                record.status, record.stats.resource_count
            )
        },
    )?;
    check(elapsed < Duration::from_secs(2), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{:.1} MB, 500 entries in {} ms",
        bytes.len() as f64 / 1048576.0,
        elapsed.as_millis()
    ))
}

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .unwrap();
    let corpus = random_corpus(8, 1000);
    let criteria: Vec<Criterion<'_>> = vec![
        ("single-resource pipeline", Box::new(c1_single_resource_pipeline)),
        ("CDN table regression", Box::new(c2_cdn_table)),
        ("geo regression", Box::new(c3_csdn_geo)),
        ("protocol distribution", Box::new(c4_protocol_distribution)),
        ("timing oracle", Box::new(c5_timing_oracle)),
        ("repeat-mode contract", Box::new(|| c6_repeat_mode(&rt))),
        ("timeout contract", Box::new(|| c7_timeout(&rt))),
        ("store round trip", Box::new(|| c8_store(&corpus))),
        ("report conservation", Box::new(|| c9_conservation(&corpus))),
        ("performance", Box::new(c10_performance)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
