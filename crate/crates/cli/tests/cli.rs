use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::Duration;
use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use serde_json::Value;
use webview_core::delivery::Enrichers;
use webview_core::probe::{ingest_capture, CampaignConfig};
use webview_core::protocol::RequestedProtocol;
use webview_core::record::{AccessNetworkKind, MeasurementRecord, RecordStore, Window};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn webview(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_webview"))
        .args(args)
        .env("RUST_LOG", "info")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&out.stdout)
        )
    })
}

fn ingest_all(store: &Path) {
    let config = fixtures().join("campaign.json");
    for corpus in ["example", "lefigaro", "csdn"] {
        let out = webview(&[
            "ingest",
            "--har",
            s(&fixtures().join(corpus)),
            "--config",
            s(&config),
            "--store",
            s(store),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(json(&out)["complete"], 1);
    }
}

#[test]
fn ingest_then_cdn_table() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store.jsonl");
    let out = webview(&[
        "ingest",
        "--har",
        s(&fixtures().join("example/example.com.har")),
        "--config",
        s(&fixtures().join("campaign.json")),
        "--store",
        s(&store),
    ]);
    assert!(out.status.success());
    // Logs went to stderr only.
    assert!(!out.stderr.is_empty());
    assert_eq!(json(&out)["record_ids"], serde_json::json!([1]));

    let out = webview(&[
        "report",
        "--store",
        s(&store),
        "--kind",
        "cdn_table",
        "--format",
        "csv",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        text.lines().collect::<Vec<_>>(),
        ["provider,count,share", "Fastly,1,1"]
    );
}

#[test]
fn reports_to_files_in_every_format() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store.jsonl");
    ingest_all(&store);
    for format in ["json", "csv", "geojson", "html"] {
        let out_path = dir.path().join(format!("geo.{format}"));
        let out = webview(&[
            "report",
            "--store",
            s(&store),
            "--kind",
            "geo_panel",
            "--group-by",
            "continent",
            "--filter",
            "website=csdn.net",
            "--format",
            format,
            "--out",
            s(&out_path),
        ]);
        assert!(
            out.status.success(),
            "{format}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(out.stdout.is_empty());
        assert!(std::fs::metadata(&out_path).unwrap().len() > 0);
    }
    let report: Value = serde_json::from_slice(&std::fs::read(dir.path().join("geo.json")).unwrap()).unwrap();
    let weights: Vec<(String, u64)> = report["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| {
            (
                r["group"].as_str().unwrap().to_string(),
                r["weight"].as_u64().unwrap(),
            )
        })
        .collect();
    assert_eq!(
        weights,
        [
            ("EU".to_string(), 81),
            ("AS".to_string(), 50),
            ("NA".to_string(), 2)
        ]
    );
}

#[test]
fn empty_store_gives_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store.jsonl");
    std::fs::write(&store, "").unwrap();
    for kind in [
        "protocol_panel",
        "geo_panel",
        "cdn_table",
        "timeseries",
        "compare",
    ] {
        let out = webview(&["report", "--store", s(&store), "--kind", kind]);
        assert_eq!(out.status.code(), Some(0), "{kind}");
        let report = json(&out);
        assert_eq!(report["empty"], true);
        assert_eq!(report["rows"], serde_json::json!([]));
    }
    let out = webview(&[
        "report",
        "--store",
        s(&store),
        "--kind",
        "geo_panel",
        "--format",
        "geojson",
    ]);
    assert_eq!(json(&out)["type"], "FeatureCollection");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store.jsonl");
    std::fs::write(&store, "").unwrap();
    let missing = dir.path().join("missing.jsonl");
    let config = fixtures().join("campaign.json");
    let code = |args: &[&str]| webview(args).status.code();

    assert_eq!(code(&["--help"]), Some(0));
    assert_eq!(code(&["--version"]), Some(0));
    assert_eq!(code(&[]), Some(1));
    assert_eq!(
        code(&["report", "--store", s(&store), "--kind", "pie_chart"]),
        Some(1)
    );
    assert_eq!(
        code(&["query", "--store", s(&store), "--filter", "colour=red"]),
        Some(1)
    );
    assert_eq!(
        code(&["query", "--store", s(&store), "--filter", "adblock=maybe"]),
        Some(1)
    );
    assert_eq!(
        code(&[
            "report",
            "--store",
            s(&store),
            "--kind",
            "cdn_table",
            "--format",
            "geojson"
        ]),
        Some(1)
    );
    assert_eq!(
        code(&["report", "--store", s(&missing), "--kind", "cdn_table"]),
        Some(2)
    );
    assert_eq!(code(&["query", "--store", s(&missing)]), Some(2));
    assert_eq!(
        code(&[
            "measure",
            "--config",
            s(&dir.path().join("none.json")),
            "--store",
            s(&store)
        ]),
        Some(1)
    );
    assert_eq!(
        code(&[
            "measure",
            "--config",
            s(&config),
            "--driver",
            "replay:/nonexistent",
            "--store",
            s(&store)
        ]),
        Some(1)
    );

    std::fs::write(&store, "{\"id\":1,\"crc32\":0,\"record\":{}}\n").unwrap();
    let out = webview(&["query", "--store", s(&store)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains(":1: store corrupt"));
}

#[test]
fn measure_with_replay_driver() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store.jsonl");
    let replay = dir.path().join("captures");
    std::fs::create_dir(&replay).unwrap();
    for (corpus, file) in [("example", "example.com.har"), ("lefigaro", "lefigaro.fr.har")] {
        std::fs::copy(fixtures().join(corpus).join(file), replay.join(file)).unwrap();
    }
    let driver = format!("replay:{}", s(&replay));
    let out = webview(&[
        "measure",
        "--config",
        s(&fixtures().join("campaign.json")),
        "--driver",
        &driver,
        "--store",
        s(&store),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = json(&out);
    assert_eq!(
        (summary["complete"].as_u64(), summary["failed"].as_u64()),
        (Some(2), Some(1))
    );

    let out = webview(&["query", "--store", s(&store), "--filter", "provider=Akamai"]);
    let records = json(&out);
    assert_eq!(records.as_array().unwrap().len(), 1);
    assert_eq!(records[0]["website"], "lefigaro.fr");
}

/// Fixture records copied with randomized filterable fields.
fn variants(n: usize) -> Vec<MeasurementRecord> {
    let config = CampaignConfig::load(&fixtures().join("campaign.json")).unwrap();
    let enrichers = Enrichers::from_dir(&fixtures().join("tables")).unwrap();
    let bases: Vec<MeasurementRecord> = [
        ("example", "example.com.har"),
        ("lefigaro", "lefigaro.fr.har"),
        ("csdn", "csdn.net.har"),
    ]
    .iter()
    .map(|(c, f)| ingest_capture(&fixtures().join(c).join(f), &config.session, &enrichers))
    .collect();
    let mut rng = StdRng::seed_from_u64(1000);
    (0..n)
        .map(|_| {
            let mut r = bases.choose(&mut rng).unwrap().clone();
            r.browser.name = ["Chrome", "Firefox"].choose(&mut rng).unwrap().to_string();
            r.browser.version = ["119", "120"].choose(&mut rng).unwrap().to_string();
            r.adblock = rng.random_bool(0.5);
            r.window = *[
                Window {
                    width: 1920,
                    height: 1080,
                },
                Window {
                    width: 800,
                    height: 600,
                },
            ]
            .choose(&mut rng)
            .unwrap();
            r.access_network.kind = *AccessNetworkKind::ALL.choose(&mut rng).unwrap();
            r.requested_protocol = *RequestedProtocol::ALL.choose(&mut rng).unwrap();
            let (city, country) = *[("Paris", "FR"), ("Osaka", "JP")].choose(&mut rng).unwrap();
            r.probe_location.city = city.into();
            r.probe_location.country = country.into();
            let at = r.timestamp + Duration::minutes(rng.random_range(0..60 * 24 * 30));
            r.set_timestamp(at);
            r
        })
        .collect()
}

/// Linear scan over the raw store lines.
fn oracle(store: &Path, pairs: &[(&str, &str)]) -> Vec<Value> {
    let mut hits: Vec<(String, u64, Value)> = std::fs::read_to_string(store)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter(|line| {
            let r = &line["record"];
            pairs.iter().all(|(k, v)| {
                let lower = |x: &Value| x.as_str().unwrap_or("").to_lowercase();
                match *k {
                    "website" => lower(&r["website"]) == v.to_lowercase(),
                    "browser" => match v.split_once('/') {
                        Some((n, ver)) => {
                            lower(&r["browser"]["name"]) == n.to_lowercase()
                                && r["browser"]["version"] == *ver
                        }
                        None => lower(&r["browser"]["name"]) == v.to_lowercase(),
                    },
                    "adblock" => r["adblock"] == (*v == "true"),
                    "window" => format!("{}x{}", r["window"]["width"], r["window"]["height"]) == *v,
                    "access_network" => r["access_network"]["kind"] == *v,
                    "requested_protocol" => r["requested_protocol"] == *v,
                    "probe_location" => {
                        lower(&r["probe_location"]["city"]) == v.to_lowercase()
                            || lower(&r["probe_location"]["country"]) == v.to_lowercase()
                    }
                    "provider" => r["per_provider"]
                        .as_object()
                        .unwrap()
                        .iter()
                        .any(|(name, n)| name.eq_ignore_ascii_case(v) && n.as_u64().unwrap() > 0),
                    other => panic!("oracle does not know {other}"),
                }
            })
        })
        .map(|line| {
            (
                line["record"]["timestamp"].as_str().unwrap().to_string(),
                line["id"].as_u64().unwrap(),
                line["record"].clone(),
            )
        })
        .collect();
    hits.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
    hits.into_iter().map(|(_, _, r)| r).collect()
}

#[test]
fn query_agrees_with_linear_scan() {
    let dir = tempfile::tempdir().unwrap();
    let store_path = dir.path().join("store.jsonl");
    let mut store = RecordStore::open(&store_path).unwrap();
    for r in variants(1000) {
        store.append(&r).unwrap();
    }
    drop(store);

    let cases: &[&[(&str, &str)]] = &[
        &[],
        &[("website", "lefigaro.fr")],
        &[("website", "csdn.net"), ("requested_protocol", "QUIC")],
        &[("browser", "Firefox")],
        &[("browser", "chrome/120"), ("adblock", "true")],
        &[("window", "800x600"), ("access_network", "ADSL")],
        &[("probe_location", "JP")],
        &[("probe_location", "paris"), ("provider", "Fastly")],
        &[("provider", "Level 3"), ("requested_protocol", "H2_REPEAT")],
        &[("website", "nowhere.test")],
    ];
    for pairs in cases {
        let mut args = vec!["query".to_string(), "--store".into(), s(&store_path).into()];
        for (k, v) in *pairs {
            args.push("--filter".into());
            args.push(format!("{k}={v}"));
        }
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = webview(&args);
        assert!(
            out.status.success(),
            "{pairs:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let got = json(&out);
        let want = oracle(&store_path, pairs);
        assert_eq!(got.as_array().unwrap(), &want, "{pairs:?}");
    }

    let out = webview(&[
        "query",
        "--store",
        s(&store_path),
        "--filter",
        "website=csdn.net",
        "--format",
        "csv",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        text.lines().count(),
        oracle(&store_path, &[("website", "csdn.net")]).len() + 1
    );
    assert!(text.lines().next().unwrap().contains("per_provider.Level 3"));
}
