//! Measurement sessions and campaigns.

mod driver;
pub mod live;

use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tokio::time::{timeout_at, Instant};

use crate::delivery::Enrichers;
use crate::har::{parse_har, HarSession};
use crate::metrics::{compute_timings, PaintEvent};
use crate::protocol::{policy_settings, ProtocolPolicy};
use crate::record::{
    build_record, AccessNetwork, BrowserInfo, MeasurementRecord, ProbeLocation, RecordStore, SessionStatus,
    StoreError, Window,
};

pub use driver::{
    BrowserDriver, CallLog, DriverCall, DriverError, Instrumented, LaunchOptions, Navigation, ReplayDriver,
};

pub const DEFAULT_TIMEOUT_MS: u64 = 18_000;
/// Allowance over the navigation timeout for driver teardown.
pub const GRACE_MS: u64 = 1_000;
/// Share of the grace period a stuck `navigate` may use before it is cut off.
const NAVIGATE_OVERRUN_MS: u64 = 500;

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_MS
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeIdentity {
    pub id: String,
    pub location: ProbeLocation,
    pub access_network: AccessNetwork,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub browser: BrowserInfo,
    pub policy: ProtocolPolicy,
    pub window: Window,
    #[serde(default)]
    pub adblock: bool,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    pub probe: ProbeIdentity,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.timeout_ms == 0 {
            return Err(ConfigError::Invalid("timeout_ms must be positive".into()));
        }
        if self.window.width == 0 || self.window.height == 0 {
            return Err(ConfigError::Invalid(format!(
                "window {} has a zero dimension",
                self.window
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WebsiteList {
    Inline(Vec<String>),
    /// Path to a file of one URL per line; relative to the config file.
    File(PathBuf),
}

/// Campaign configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    #[serde(flatten)]
    pub session: SessionConfig,
    pub websites: WebsiteList,
    /// Directory of enrichment tables; relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixtures: Option<PathBuf>,
}

/// `https://` is assumed for bare domains. Blank lines and `#` comments
/// are skipped.
pub fn parse_website_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(normalize_url)
        .collect()
}

fn normalize_url(site: &str) -> String {
    if site.contains("://") {
        site.to_string()
    } else {
        format!("https://{site}/")
    }
}

impl CampaignConfig {
    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Load and validate, resolving relative paths against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut c = Self::parse(&text).map_err(|source| ConfigError::Json {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let WebsiteList::File(p) = &mut c.websites {
            *p = base.join(&*p);
        }
        if let Some(f) = &mut c.fixtures {
            *f = base.join(&*f);
        }
        c.session.validate()?;
        Ok(c)
    }

    pub fn urls(&self) -> Result<Vec<String>, ConfigError> {
        let urls = match &self.websites {
            WebsiteList::Inline(sites) => sites.iter().map(|s| normalize_url(s.trim())).collect(),
            WebsiteList::File(p) => {
                parse_website_list(&std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.display().to_string(),
                    source,
                })?)
            }
        };
        Ok(urls)
    }
}

/// Turn a parsed capture into a record: attribute every completed entry,
/// compute timings, aggregate. Timestamp is the capture's start.
pub fn analyze(
    session: &HarSession,
    paint: Option<&[PaintEvent]>,
    config: &SessionConfig,
    url: &str,
    enrichers: &Enrichers,
) -> MeasurementRecord {
    let suffixes = enrichers.suffixes.as_ref();
    let homepage = crate::har::host_of(url)
        .map(|h| suffixes.registrable_domain(&h))
        .unwrap_or_default();
    let attributions: Vec<_> = session
        .completed_entries()
        .map(|e| enrichers.attribute(e, &homepage))
        .collect();
    let viewport = (config.window.width, config.window.height);
    let timings = compute_timings(session, paint, viewport);
    let mut record = build_record(
        session,
        config,
        url,
        &attributions,
        timings.as_ref().ok().cloned(),
        suffixes,
    )
    .expect("one attribution per completed entry");
    if session.entries.is_empty() {
        record.warnings.push("capture contains no requests".into());
    }
    if let Err(e) = timings {
        record.warnings.push(e.to_string());
    }
    record
}

/// Analyze a HAR file captured elsewhere, with its optional
/// `<stem>.paint.json` sibling. Unreadable or malformed captures become
/// `failed` records stamped with the current time.
pub fn ingest_capture(path: &Path, config: &SessionConfig, enrichers: &Enrichers) -> MeasurementRecord {
    let fallback_url = format!("file://{}", path.display());
    let failed = |reason: String| {
        tracing::warn!(path = %path.display(), %reason, "capture rejected");
        MeasurementRecord::failed(
            config,
            &fallback_url,
            Utc::now(),
            reason,
            enrichers.suffixes.as_ref(),
        )
    };
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) => return failed(e.to_string()),
    };
    let session = match parse_har(&bytes) {
        Ok(s) => s,
        Err(e) => return failed(format!("unusable capture: {e}")),
    };
    let paint = match driver::read_paint(path) {
        Ok(p) => p,
        Err(e) => return failed(e.to_string()),
    };
    let url = if session.page_url.is_empty() {
        session
            .entries
            .first()
            .map(|e| e.url.clone())
            .unwrap_or(fallback_url.clone())
    } else {
        session.page_url.clone()
    };
    let paint = (!paint.is_empty()).then_some(paint.as_slice());
    analyze(&session, paint, config, &url, enrichers)
}

enum PassOutcome {
    Measured(Navigation),
    Failed(DriverError),
}

async fn bounded<T>(
    deadline: Instant,
    what: &'static str,
    fut: impl std::future::Future<Output = Result<T, DriverError>>,
) -> Result<T, DriverError> {
    timeout_at(deadline, fut)
        .await
        .unwrap_or(Err(DriverError::Deadline(what)))
}

/// One browser lifetime: start, navigate, close. `clear_before_launch`
/// selects whether the resource cache is emptied before the browser starts
/// or right after.
async fn pass(
    driver: &mut dyn BrowserDriver,
    options: &LaunchOptions,
    url: &str,
    timeout: Duration,
    clear_before_launch: bool,
    warnings: &mut Vec<String>,
) -> PassOutcome {
    let setup_deadline = Instant::now() + timeout;
    let setup = async {
        if clear_before_launch {
            bounded(
                setup_deadline,
                "clear_resource_cache",
                driver.clear_resource_cache(),
            )
            .await?;
            bounded(setup_deadline, "launch", driver.launch(options)).await
        } else {
            bounded(setup_deadline, "launch", driver.launch(options)).await?;
            bounded(
                setup_deadline,
                "clear_resource_cache",
                driver.clear_resource_cache(),
            )
            .await
        }
    };
    if let Err(e) = setup.await {
        let _ = timeout_at(Instant::now() + Duration::from_millis(GRACE_MS), driver.close()).await;
        return PassOutcome::Failed(e);
    }

    let started = Instant::now();
    let hard_stop = started + timeout + Duration::from_millis(GRACE_MS);
    let nav_stop = started + timeout + Duration::from_millis(NAVIGATE_OVERRUN_MS);
    let navigation = match timeout_at(nav_stop, driver.navigate(url, timeout)).await {
        Ok(Ok(n)) => Ok(n),
        Ok(Err(e)) => Err(e),
        Err(_) => Ok(Navigation::Timeout {
            partial_har: None,
            paint: Vec::new(),
        }),
    };
    match timeout_at(hard_stop, driver.close()).await {
        Ok(Ok(())) => {}
        Ok(Err(e)) => warnings.push(format!("closing the browser failed: {e}")),
        Err(_) => warnings.push("browser did not close within the grace period".into()),
    }
    match navigation {
        Ok(n) => PassOutcome::Measured(n),
        Err(e) => PassOutcome::Failed(e),
    }
}

/// Measure one page. Never fails: driver problems become `failed`
/// records, an expired timeout becomes a `timeout` record.
pub async fn run_session(
    config: &SessionConfig,
    url: &str,
    driver: &mut dyn BrowserDriver,
    enrichers: &Enrichers,
) -> MeasurementRecord {
    let suffixes = enrichers.suffixes.as_ref();
    let failed = |at: DateTime<Utc>, reason: String| {
        tracing::warn!(url, %reason, "session failed");
        MeasurementRecord::failed(config, url, at, reason, suffixes)
    };
    let settings = match policy_settings(&config.policy) {
        Ok(s) => s,
        Err(e) => return failed(Utc::now(), e.to_string()),
    };
    let options = LaunchOptions {
        settings,
        window: config.window,
        adblock: config.adblock,
    };
    let timeout = Duration::from_millis(config.timeout_ms);
    let mut warnings = Vec::new();

    if settings.two_pass {
        let warm_up_at = Utc::now();
        match pass(driver, &options, url, timeout, false, &mut warnings).await {
            PassOutcome::Measured(Navigation::Complete { .. }) => {}
            PassOutcome::Measured(Navigation::Timeout { .. }) => {
                let mut r =
                    MeasurementRecord::empty(config, url, warm_up_at, SessionStatus::Timeout, suffixes);
                r.warnings = warnings;
                r.warnings.push(format!(
                    "warm-up navigation timed out after {} ms",
                    config.timeout_ms
                ));
                return r;
            }
            PassOutcome::Failed(e) => return failed(warm_up_at, format!("warm-up: {e}")),
        }
    }

    let measured_at = Utc::now();
    let outcome = pass(driver, &options, url, timeout, settings.two_pass, &mut warnings).await;
    let mut record = match outcome {
        PassOutcome::Failed(e) => failed(measured_at, e.to_string()),
        PassOutcome::Measured(Navigation::Complete { har, paint }) => match parse_har(&har) {
            Ok(session) => {
                let paint = (!paint.is_empty()).then_some(paint.as_slice());
                analyze(&session, paint, config, url, enrichers)
            }
            Err(e) => failed(measured_at, format!("unusable capture: {e}")),
        },
        PassOutcome::Measured(Navigation::Timeout { partial_har, paint }) => {
            let partial = partial_har.as_deref().map(parse_har);
            let mut r = match partial {
                Some(Ok(session)) => {
                    let paint = (!paint.is_empty()).then_some(paint.as_slice());
                    analyze(&session, paint, config, url, enrichers)
                }
                Some(Err(e)) => {
                    let mut r =
                        MeasurementRecord::empty(config, url, measured_at, SessionStatus::Timeout, suffixes);
                    r.warnings.push(format!("partial capture unusable: {e}"));
                    r
                }
                None => MeasurementRecord::empty(config, url, measured_at, SessionStatus::Timeout, suffixes),
            };
            r.status = SessionStatus::Timeout;
            r.warnings
                .push(format!("navigation timed out after {} ms", config.timeout_ms));
            r
        }
    };
    record.set_timestamp(measured_at);
    record.warnings.extend(warnings);
    record
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub complete: usize,
    pub timeout: usize,
    pub failed: usize,
    pub record_ids: Vec<u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum CampaignError {
    #[error("the website list is empty")]
    NoWebsites,
    #[error("storing a record failed, campaign aborted: {0}")]
    Store(#[from] StoreError),
}

pub type DriverFactory<'a> = dyn FnMut(&str) -> Result<Box<dyn BrowserDriver>, DriverError> + Send + 'a;

/// Visit `urls` one after another with a fresh driver each, appending
/// every outcome. Per-site failures are recorded and the campaign goes on;
/// a store failure stops it.
pub async fn run_campaign(
    config: &SessionConfig,
    urls: &[String],
    factory: &mut DriverFactory<'_>,
    store: &mut RecordStore,
    enrichers: &Enrichers,
) -> Result<CampaignSummary, CampaignError> {
    if urls.is_empty() {
        return Err(CampaignError::NoWebsites);
    }
    let mut summary = CampaignSummary::default();
    let mut last: Option<DateTime<Utc>> = None;
    for url in urls {
        tracing::info!(url, "measuring");
        let mut record = match factory(url) {
            Ok(mut driver) => run_session(config, url, driver.as_mut(), enrichers).await,
            Err(e) => MeasurementRecord::failed(
                config,
                url,
                Utc::now(),
                e.to_string(),
                enrichers.suffixes.as_ref(),
            ),
        };
        // Keep list order visible in the stored timestamps even when two
        // sessions land in the same millisecond.
        if let Some(prev) = last.filter(|p| record.timestamp <= *p) {
            record.set_timestamp(prev + chrono::Duration::milliseconds(1));
        }
        last = Some(record.timestamp);
        match record.status {
            SessionStatus::Complete => summary.complete += 1,
            SessionStatus::Timeout => summary.timeout += 1,
            SessionStatus::Failed => summary.failed += 1,
        }
        summary.record_ids.push(store.append(&record)?);
    }
    Ok(summary)
}
