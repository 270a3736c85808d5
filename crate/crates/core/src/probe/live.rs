//! Chromium driven over its remote debugging WebSocket.
//!
//! The browser runs with a private profile directory that survives restarts
//! within one driver, so a repeat-mode second pass starts with the resource
//! cache the session cleared and whatever resolver state the OS kept.

use std::collections::{HashMap, VecDeque};
use std::path::PathBuf;
use std::process::Stdio;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use async_trait::async_trait;
use chrono::{DateTime, SecondsFormat, Utc};
use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::io::{AsyncBufReadExt, BufReader};
use tokio::net::TcpStream;
use tokio::process::{Child, Command};
use tokio::time::{timeout_at, Instant};
use tokio_tungstenite::{tungstenite::Message, MaybeTlsStream, WebSocketStream};

use super::driver::{BrowserDriver, DriverError, LaunchOptions, Navigation};
use crate::metrics::PaintEvent;

/// A debugging-protocol notification.
#[derive(Debug, Clone, PartialEq)]
pub struct CdpEvent {
    pub method: String,
    pub params: Value,
}

impl CdpEvent {
    pub fn new(method: impl Into<String>, params: Value) -> Self {
        Self {
            method: method.into(),
            params,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LiveDriverOptions {
    pub binary: PathBuf,
    pub headless: bool,
    pub extra_args: Vec<String>,
    /// Unpacked extension loaded when the session asks for an ad blocker.
    pub adblock_extension: Option<PathBuf>,
    /// How long to keep collecting network events after the load event.
    pub settle: Duration,
    pub startup_timeout: Duration,
}

impl Default for LiveDriverOptions {
    fn default() -> Self {
        Self {
            binary: std::env::var_os("WEBVIEW_BROWSER")
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("chromium")),
            headless: true,
            extra_args: Vec::new(),
            adblock_extension: None,
            settle: Duration::from_millis(500),
            startup_timeout: Duration::from_secs(20),
        }
    }
}

type Socket = WebSocketStream<MaybeTlsStream<TcpStream>>;

struct Connection {
    ws: Socket,
    next_id: u64,
    /// Notifications read while waiting for a command reply.
    backlog: VecDeque<Value>,
}

fn protocol_error(e: impl std::fmt::Display) -> DriverError {
    DriverError::Protocol(e.to_string())
}

impl Connection {
    async fn recv(&mut self) -> Result<Value, DriverError> {
        loop {
            match self.ws.next().await {
                Some(Ok(Message::Text(text))) => {
                    return serde_json::from_str(text.as_str()).map_err(protocol_error)
                }
                Some(Ok(Message::Close(_))) | None => {
                    return Err(DriverError::Protocol("browser closed the connection".into()))
                }
                Some(Ok(_)) => continue,
                Some(Err(e)) => return Err(protocol_error(e)),
            }
        }
    }

    async fn read(&mut self) -> Result<Value, DriverError> {
        match self.backlog.pop_front() {
            Some(v) => Ok(v),
            None => self.recv().await,
        }
    }

    async fn call(
        &mut self,
        method: &str,
        params: Value,
        session: Option<&str>,
    ) -> Result<Value, DriverError> {
        self.next_id += 1;
        let id = self.next_id;
        let mut msg = json!({"id": id, "method": method, "params": params});
        if let Some(s) = session {
            msg["sessionId"] = json!(s);
        }
        self.ws
            .send(Message::text(msg.to_string()))
            .await
            .map_err(protocol_error)?;
        let mut held = Vec::new();
        let reply = loop {
            let v = self.recv().await?;
            if v.get("id").and_then(Value::as_u64) == Some(id) {
                break v;
            }
            held.push(v);
        };
        self.backlog.extend(held);
        if let Some(err) = reply.get("error") {
            return Err(DriverError::Protocol(format!("{method}: {err}")));
        }
        Ok(reply.get("result").cloned().unwrap_or(Value::Null))
    }
}

struct Running {
    child: Child,
    conn: Connection,
    session: String,
    product: String,
}

pub struct CdpDriver {
    options: LiveDriverOptions,
    profile: PathBuf,
    running: Option<Running>,
}

static PROFILE_SEQ: AtomicU64 = AtomicU64::new(0);

impl CdpDriver {
    pub fn new(options: LiveDriverOptions) -> Self {
        let profile = std::env::temp_dir().join(format!(
            "webview-profile-{}-{}",
            std::process::id(),
            PROFILE_SEQ.fetch_add(1, Ordering::Relaxed)
        ));
        Self {
            options,
            profile,
            running: None,
        }
    }

    fn args(&self, launch: &LaunchOptions) -> Vec<String> {
        let mut args = vec![
            "--remote-debugging-port=0".to_string(),
            format!("--user-data-dir={}", self.profile.display()),
            "--no-first-run".into(),
            "--no-default-browser-check".into(),
            format!("--window-size={},{}", launch.window.width, launch.window.height),
        ];
        if self.options.headless {
            args.push("--headless=new".into());
        }
        args.extend(launch.settings.chromium_switches().into_iter().map(String::from));
        match (&self.options.adblock_extension, launch.adblock) {
            (Some(ext), true) => args.push(format!("--load-extension={}", ext.display())),
            (None, true) => tracing::warn!("ad blocking requested but no extension configured"),
            _ => {}
        }
        args.extend(self.options.extra_args.iter().cloned());
        args.push("about:blank".into());
        args
    }

    fn running(&mut self) -> Result<&mut Running, DriverError> {
        self.running
            .as_mut()
            .ok_or_else(|| DriverError::Navigation("browser is not running".into()))
    }
}

impl Drop for CdpDriver {
    fn drop(&mut self) {
        if let Some(r) = &mut self.running {
            let _ = r.child.start_kill();
        }
        let _ = std::fs::remove_dir_all(&self.profile);
    }
}

async fn devtools_url(child: &mut Child, deadline: Instant) -> Result<String, DriverError> {
    let stderr = child
        .stderr
        .take()
        .ok_or_else(|| DriverError::Launch("browser stderr not captured".into()))?;
    let mut lines = BufReader::new(stderr).lines();
    loop {
        let line = timeout_at(deadline, lines.next_line())
            .await
            .map_err(|_| DriverError::Deadline("browser startup"))??;
        match line {
            Some(l) => {
                if let Some(url) = l.split("DevTools listening on ").nth(1) {
                    // Keep draining so the browser never blocks on a full pipe.
                    tokio::spawn(async move { while let Ok(Some(_)) = lines.next_line().await {} });
                    return Ok(url.trim().to_string());
                }
            }
            None => return Err(DriverError::Launch("browser exited during startup".into())),
        }
    }
}

fn session_event(session: &str, v: &Value) -> Option<CdpEvent> {
    let method = v.get("method")?.as_str()?;
    if v.get("sessionId").and_then(Value::as_str) != Some(session) {
        return None;
    }
    Some(CdpEvent::new(
        method,
        v.get("params").cloned().unwrap_or(Value::Null),
    ))
}

#[async_trait]
impl BrowserDriver for CdpDriver {
    async fn launch(&mut self, options: &LaunchOptions) -> Result<(), DriverError> {
        if self.running.is_some() {
            return Err(DriverError::Launch("browser already running".into()));
        }
        std::fs::create_dir_all(&self.profile)?;
        let mut child = Command::new(&self.options.binary)
            .args(self.args(options))
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .kill_on_drop(true)
            .spawn()
            .map_err(|e| DriverError::Launch(format!("{}: {e}", self.options.binary.display())))?;
        let deadline = Instant::now() + self.options.startup_timeout;
        let ws_url = devtools_url(&mut child, deadline).await?;
        let (ws, _) = timeout_at(deadline, tokio_tungstenite::connect_async(ws_url.as_str()))
            .await
            .map_err(|_| DriverError::Deadline("debugger connection"))?
            .map_err(protocol_error)?;
        let mut conn = Connection {
            ws,
            next_id: 0,
            backlog: VecDeque::new(),
        };

        let version = conn.call("Browser.getVersion", json!({}), None).await?;
        let product = version["product"].as_str().unwrap_or_default().to_string();
        let target = conn
            .call("Target.createTarget", json!({"url": "about:blank"}), None)
            .await?;
        let target_id = target["targetId"].as_str().unwrap_or_default().to_string();
        let attached = conn
            .call(
                "Target.attachToTarget",
                json!({"targetId": target_id, "flatten": true}),
                None,
            )
            .await?;
        let session = attached["sessionId"]
            .as_str()
            .ok_or_else(|| DriverError::Protocol("attachToTarget returned no session".into()))?
            .to_string();
        for method in ["Network.enable", "Page.enable"] {
            conn.call(method, json!({}), Some(&session)).await?;
        }
        self.running = Some(Running {
            child,
            conn,
            session,
            product,
        });
        Ok(())
    }

    async fn navigate(&mut self, url: &str, timeout: Duration) -> Result<Navigation, DriverError> {
        let settle = self.options.settle;
        let r = self.running()?;
        let deadline = Instant::now() + timeout;
        r.conn.backlog.clear();
        let nav = timeout_at(
            deadline,
            r.conn
                .call("Page.navigate", json!({"url": url}), Some(&r.session)),
        )
        .await;
        let mut events = Vec::new();
        let mut loaded_at: Option<Instant> = None;
        if matches!(nav, Ok(Ok(_))) {
            loop {
                let stop = loaded_at.map_or(deadline, |t| (t + settle).min(deadline));
                let Ok(msg) = timeout_at(stop, r.conn.read()).await else {
                    break;
                };
                let msg = msg?;
                if let Some(ev) = session_event(&r.session, &msg) {
                    if ev.method == "Page.loadEventFired" && loaded_at.is_none() {
                        loaded_at = Some(Instant::now());
                    }
                    events.push(ev);
                }
            }
        }
        if let Ok(Err(e)) = nav {
            return Err(e);
        }

        let (name, version) = r.product.split_once('/').unwrap_or((&r.product, ""));
        let har = har_from_events(&events, url, name, version)
            .to_string()
            .into_bytes();
        if loaded_at.is_none() {
            return Ok(Navigation::Timeout {
                partial_har: Some(har),
                paint: Vec::new(),
            });
        }
        let paint = r
            .conn
            .call(
                "Runtime.evaluate",
                json!({
                    "expression": "JSON.stringify(performance.getEntriesByType('paint').map(e => ({name: e.name, offset_ms: e.startTime})))",
                    "returnByValue": true
                }),
                Some(&r.session),
            )
            .await
            .ok()
            .and_then(|v| v["result"]["value"].as_str().map(str::to_string))
            .and_then(|s| serde_json::from_str::<Vec<PaintEvent>>(&s).ok())
            .unwrap_or_default();
        Ok(Navigation::Complete { har, paint })
    }

    async fn clear_resource_cache(&mut self) -> Result<(), DriverError> {
        match self.running.as_mut() {
            Some(r) => {
                let session = r.session.clone();
                r.conn
                    .call("Network.clearBrowserCache", json!({}), Some(&session))
                    .await?;
            }
            None => {
                for dir in ["Default/Cache", "Default/Code Cache"] {
                    let p = self.profile.join(dir);
                    if p.exists() {
                        std::fs::remove_dir_all(p)?;
                    }
                }
            }
        }
        Ok(())
    }

    async fn clear_dns_cache(&mut self) -> Result<(), DriverError> {
        Err(DriverError::Unsupported("clearing the host resolver cache"))
    }

    async fn close(&mut self) -> Result<(), DriverError> {
        let Some(mut r) = self.running.take() else {
            return Ok(());
        };
        let _ = timeout_at(
            Instant::now() + Duration::from_millis(300),
            r.conn.call("Browser.close", json!({}), None),
        )
        .await;
        if timeout_at(Instant::now() + Duration::from_millis(300), r.child.wait())
            .await
            .is_err()
        {
            r.child.kill().await?;
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
struct Request {
    url: String,
    method: String,
    start: f64,
    wall: Option<f64>,
    response: Option<Value>,
    end: Option<f64>,
    encoded_length: Option<f64>,
    data_length: f64,
    failed: bool,
}

fn ms(v: &Value, key: &str) -> Option<f64> {
    v.get(key).and_then(Value::as_f64).filter(|x| *x >= 0.0)
}

fn instant(epoch_seconds: f64) -> DateTime<Utc> {
    DateTime::<Utc>::from_timestamp_micros((epoch_seconds * 1e6).round() as i64).unwrap_or_default()
}

/// `base` shifted by a difference of two protocol timestamps, in seconds.
fn shifted(base: DateTime<Utc>, seconds: f64) -> String {
    (base + chrono::Duration::microseconds((seconds * 1e6).round() as i64))
        .to_rfc3339_opts(SecondsFormat::Micros, true)
}

/// HAR phases from a response `timing` block and the request's issue and
/// finish times (seconds on the protocol's monotonic clock).
fn phases(timing: Option<&Value>, start: f64, end: f64) -> Value {
    let Some(t) = timing else {
        return json!({"blocked": -1, "dns": -1, "connect": -1, "ssl": -1, "send": 0,
                      "wait": ((end - start) * 1000.0).max(0.0), "receive": 0});
    };
    let request_time = t.get("requestTime").and_then(Value::as_f64).unwrap_or(start);
    let queued = ((request_time - start) * 1000.0).max(0.0);
    let span = |a: &str, b: &str| match (ms(t, a), ms(t, b)) {
        (Some(x), Some(y)) if y >= x => y - x,
        _ => -1.0,
    };
    let first_activity = ["dnsStart", "connectStart", "sendStart"]
        .iter()
        .find_map(|k| ms(t, k))
        .unwrap_or(0.0);
    let send_end = ms(t, "sendEnd").unwrap_or(first_activity);
    let headers_end = ms(t, "receiveHeadersEnd").unwrap_or(send_end);
    let receive = ((end - request_time) * 1000.0 - headers_end).max(0.0);
    json!({
        "blocked": queued + first_activity,
        "dns": span("dnsStart", "dnsEnd"),
        "connect": span("connectStart", "connectEnd"),
        "ssl": span("sslStart", "sslEnd"),
        "send": span("sendStart", "sendEnd").max(0.0),
        "wait": (headers_end - send_end).max(0.0),
        "receive": receive,
    })
}

fn header_list(headers: Option<&Value>) -> Vec<Value> {
    let Some(obj) = headers.and_then(Value::as_object) else {
        return Vec::new();
    };
    obj.iter()
        .flat_map(|(name, value)| {
            value
                .as_str()
                .unwrap_or_default()
                .split('\n')
                .map(|v| json!({"name": name, "value": v}))
                .collect::<Vec<_>>()
        })
        .collect()
}

fn entry(req: &Request, base_ts: f64, base_wall: DateTime<Utc>, last_ts: f64) -> Value {
    let end = req.end.unwrap_or(last_ts).max(req.start);
    let resp = req.response.as_ref();
    let status = if req.failed && resp.is_none() {
        0
    } else {
        resp.and_then(|r| r.get("status"))
            .and_then(Value::as_u64)
            .unwrap_or(0)
    };
    let protocol = resp
        .and_then(|r| r.get("protocol"))
        .and_then(Value::as_str)
        .unwrap_or("");
    let ip = resp
        .and_then(|r| r.get("remoteIPAddress"))
        .and_then(Value::as_str)
        .map(|s| s.trim_start_matches('[').trim_end_matches(']'));
    let mut e = json!({
        "pageref": "page_1",
        "startedDateTime": shifted(base_wall, req.start - base_ts),
        "time": (end - req.start) * 1000.0,
        "request": {"method": req.method, "url": req.url, "httpVersion": protocol,
                    "headers": [], "queryString": [], "cookies": [], "headersSize": -1, "bodySize": -1},
        "response": {
            "status": status,
            "statusText": resp.and_then(|r| r.get("statusText")).cloned().unwrap_or(json!("")),
            "httpVersion": protocol,
            "headers": header_list(resp.and_then(|r| r.get("headers"))),
            "cookies": [],
            "content": {"size": req.data_length,
                        "mimeType": resp.and_then(|r| r.get("mimeType")).cloned().unwrap_or(json!(""))},
            "redirectURL": "",
            "headersSize": -1,
            "bodySize": req.data_length,
            "_transferSize": req.encoded_length.unwrap_or(-1.0),
        },
        "cache": {},
        "timings": phases(resp.and_then(|r| r.get("timing")), req.start, end),
    });
    if let Some(ip) = ip.filter(|s| !s.is_empty()) {
        e["serverIPAddress"] = json!(ip);
    }
    e
}

/// Build a HAR 1.2 document from the network and page notifications of one
/// navigation. Requests still open at the end are closed at the last event.
pub fn har_from_events(events: &[CdpEvent], page_url: &str, browser: &str, version: &str) -> Value {
    let mut open: HashMap<String, Request> = HashMap::new();
    let mut done: Vec<Request> = Vec::new();
    let mut last_ts = 0.0f64;
    let mut on_load = None;
    let mut on_content_load = None;

    for ev in events {
        let p = &ev.params;
        let id = p
            .get("requestId")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        let ts = p.get("timestamp").and_then(Value::as_f64);
        if let Some(ts) = ts {
            last_ts = last_ts.max(ts);
        }
        match ev.method.as_str() {
            "Network.requestWillBeSent" => {
                if let Some(mut prev) = open.remove(&id) {
                    if let Some(redirect) = p.get("redirectResponse") {
                        prev.response = Some(redirect.clone());
                    }
                    prev.end = ts;
                    done.push(prev);
                }
                open.insert(
                    id,
                    Request {
                        url: p["request"]["url"].as_str().unwrap_or_default().to_string(),
                        method: p["request"]["method"].as_str().unwrap_or("GET").to_string(),
                        start: ts.unwrap_or(last_ts),
                        wall: p.get("wallTime").and_then(Value::as_f64),
                        ..Request::default()
                    },
                );
            }
            "Network.responseReceived" => {
                if let Some(r) = open.get_mut(&id) {
                    r.response = p.get("response").cloned();
                }
            }
            "Network.dataReceived" => {
                if let Some(r) = open.get_mut(&id) {
                    r.data_length += p.get("dataLength").and_then(Value::as_f64).unwrap_or(0.0);
                }
            }
            "Network.loadingFinished" => {
                if let Some(mut r) = open.remove(&id) {
                    r.end = ts;
                    r.encoded_length = p.get("encodedDataLength").and_then(Value::as_f64);
                    done.push(r);
                }
            }
            "Network.loadingFailed" => {
                if let Some(mut r) = open.remove(&id) {
                    r.end = ts;
                    r.failed = true;
                    done.push(r);
                }
            }
            "Page.loadEventFired" => on_load = ts,
            "Page.domContentEventFired" => on_content_load = ts,
            _ => {}
        }
    }
    done.extend(open.into_values());
    done.sort_by(|a, b| a.start.total_cmp(&b.start));

    let first = done.first();
    let base_ts = first.map_or(0.0, |r| r.start);
    let base_wall = instant(first.and_then(|r| r.wall).unwrap_or(0.0));
    let since_start = |t: Option<f64>| t.map_or(-1.0, |t| ((t - base_ts) * 1000.0).max(0.0));
    let entries: Vec<Value> = done
        .iter()
        .map(|r| entry(r, base_ts, base_wall, last_ts))
        .collect();

    json!({"log": {
        "version": "1.2",
        "creator": {"name": "webview", "version": env!("CARGO_PKG_VERSION")},
        "browser": {"name": browser, "version": version},
        "pages": [{
            "startedDateTime": shifted(base_wall, 0.0),
            "id": "page_1",
            "title": page_url,
            "pageTimings": {"onContentLoad": since_start(on_content_load), "onLoad": since_start(on_load)},
        }],
        "entries": entries,
    }})
}
