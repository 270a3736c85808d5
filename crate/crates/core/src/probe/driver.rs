use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;

use crate::har::{host_of, SuffixRules};
use crate::metrics::PaintEvent;
use crate::protocol::DriverSettings;
use crate::record::Window;

#[derive(Debug, Clone, PartialEq)]
pub struct LaunchOptions {
    pub settings: DriverSettings,
    pub window: Window,
    pub adblock: bool,
}

/// Result of one navigation.
#[derive(Debug, Clone, PartialEq)]
pub enum Navigation {
    Complete {
        har: Vec<u8>,
        paint: Vec<PaintEvent>,
    },
    /// The load event did not fire in time. `partial_har` holds whatever
    /// the driver captured before giving up.
    Timeout {
        partial_har: Option<Vec<u8>>,
        paint: Vec<PaintEvent>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum DriverError {
    #[error("browser launch failed: {0}")]
    Launch(String),
    #[error("navigation failed: {0}")]
    Navigation(String),
    #[error("debugging protocol error: {0}")]
    Protocol(String),
    #[error("{0} is not supported by this driver")]
    Unsupported(&'static str),
    #[error("{0} did not finish before its deadline")]
    Deadline(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Browser control needed by a measurement session.
#[async_trait]
pub trait BrowserDriver: Send {
    async fn launch(&mut self, options: &LaunchOptions) -> Result<(), DriverError>;
    async fn navigate(&mut self, url: &str, timeout: Duration) -> Result<Navigation, DriverError>;
    async fn clear_resource_cache(&mut self) -> Result<(), DriverError>;
    async fn clear_dns_cache(&mut self) -> Result<(), DriverError>;
    async fn close(&mut self) -> Result<(), DriverError>;
}

/// Serves captured HARs from a directory: `<host>.har`, falling back to
/// `<registrable domain>.har`, with optional `<same stem>.paint.json`
/// holding `[{"name": ..., "offset_ms": ...}]`.
#[derive(Debug, Clone)]
pub struct ReplayDriver {
    dir: PathBuf,
    launched: bool,
}

impl ReplayDriver {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            launched: false,
        }
    }

    fn capture_for(&self, url: &str) -> Option<PathBuf> {
        let host = host_of(url)?;
        let registrable = SuffixRules::bundled().registrable_domain(&host);
        let bare = host.strip_prefix("www.").unwrap_or(&host).to_string();
        [host.clone(), bare, registrable]
            .into_iter()
            .map(|stem| self.dir.join(format!("{stem}.har")))
            .find(|p| p.is_file())
    }
}

pub(crate) fn read_paint(har_path: &Path) -> Result<Vec<PaintEvent>, DriverError> {
    let paint_path = har_path.with_extension("paint.json");
    if !paint_path.is_file() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(&paint_path)?;
    serde_json::from_str(&text).map_err(|e| DriverError::Navigation(format!("{}: {e}", paint_path.display())))
}

#[async_trait]
impl BrowserDriver for ReplayDriver {
    async fn launch(&mut self, _: &LaunchOptions) -> Result<(), DriverError> {
        self.launched = true;
        Ok(())
    }

    async fn navigate(&mut self, url: &str, _: Duration) -> Result<Navigation, DriverError> {
        if !self.launched {
            return Err(DriverError::Navigation("browser is not running".into()));
        }
        let path = self.capture_for(url).ok_or_else(|| {
            DriverError::Navigation(format!("no capture for {url} in {}", self.dir.display()))
        })?;
        let har = tokio::fs::read(&path).await?;
        let paint = read_paint(&path)?;
        Ok(Navigation::Complete { har, paint })
    }

    async fn clear_resource_cache(&mut self) -> Result<(), DriverError> {
        Ok(())
    }

    async fn clear_dns_cache(&mut self) -> Result<(), DriverError> {
        Ok(())
    }

    async fn close(&mut self) -> Result<(), DriverError> {
        self.launched = false;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DriverCall {
    Launch,
    Navigate(String),
    ClearResourceCache,
    ClearDnsCache,
    Close,
}

impl DriverCall {
    pub fn name(&self) -> &'static str {
        match self {
            DriverCall::Launch => "launch",
            DriverCall::Navigate(_) => "navigate",
            DriverCall::ClearResourceCache => "clear_resource_cache",
            DriverCall::ClearDnsCache => "clear_dns_cache",
            DriverCall::Close => "close",
        }
    }
}

pub type CallLog = Arc<Mutex<Vec<DriverCall>>>;

/// Wraps a driver and logs every call before delegating.
pub struct Instrumented<D> {
    inner: D,
    log: CallLog,
}

impl<D: BrowserDriver> Instrumented<D> {
    pub fn new(inner: D) -> Self {
        Self {
            inner,
            log: CallLog::default(),
        }
    }

    pub fn log(&self) -> CallLog {
        Arc::clone(&self.log)
    }

    /// Call names in order.
    pub fn calls(&self) -> Vec<&'static str> {
        self.log.lock().unwrap().iter().map(DriverCall::name).collect()
    }

    fn push(&self, call: DriverCall) {
        self.log.lock().unwrap().push(call);
    }
}

#[async_trait]
impl<D: BrowserDriver> BrowserDriver for Instrumented<D> {
    async fn launch(&mut self, options: &LaunchOptions) -> Result<(), DriverError> {
        self.push(DriverCall::Launch);
        self.inner.launch(options).await
    }

    async fn navigate(&mut self, url: &str, timeout: Duration) -> Result<Navigation, DriverError> {
        self.push(DriverCall::Navigate(url.to_string()));
        self.inner.navigate(url, timeout).await
    }

    async fn clear_resource_cache(&mut self) -> Result<(), DriverError> {
        self.push(DriverCall::ClearResourceCache);
        self.inner.clear_resource_cache().await
    }

    async fn clear_dns_cache(&mut self) -> Result<(), DriverError> {
        self.push(DriverCall::ClearDnsCache);
        self.inner.clear_dns_cache().await
    }

    async fn close(&mut self) -> Result<(), DriverError> {
        self.push(DriverCall::Close);
        self.inner.close().await
    }
}
