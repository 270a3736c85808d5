use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::{IpAddr, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};

use super::tables::{self, PrefixTable, TableError};
use super::LookupError;

pub const NO_CDN: &str = "No CDN";
pub const UNKNOWN: &str = "Unknown";

const BUNDLED_PROVIDERS: &str = include_str!("../../data/providers.tsv");

/// Registered assignee of an address block.
pub trait WhoisClient: Send + Sync {
    /// `Ok(None)` when the registry has no assignee for `ip`.
    fn assignee(&self, ip: IpAddr) -> Result<Option<String>, LookupError>;
}

/// Offline WHOIS backed by an `ip_prefix<TAB>assignee` table.
#[derive(Debug, Clone, Default)]
pub struct WhoisTable {
    table: PrefixTable<String>,
}

impl WhoisTable {
    pub fn parse(text: &str) -> Result<Self, TableError> {
        let mut table = PrefixTable::default();
        for (line, fields) in tables::rows(text) {
            let [prefix, assignee, ..] = fields[..] else {
                return Err(tables::syntax(line, "expected ip_prefix<TAB>assignee"));
            };
            table.insert(tables::parse_prefix(line, prefix)?, assignee.to_string());
        }
        Ok(Self { table })
    }

    pub fn load(path: &Path) -> Result<Self, TableError> {
        Self::parse(&tables::read(path)?)
    }
}

impl WhoisClient for WhoisTable {
    fn assignee(&self, ip: IpAddr) -> Result<Option<String>, LookupError> {
        Ok(self.table.lookup(ip).cloned())
    }
}

/// Port-43 WHOIS: asks IANA for the responsible registry, then queries it.
#[derive(Debug, Clone)]
pub struct LiveWhois {
    pub root_server: String,
    pub timeout: Duration,
}

impl Default for LiveWhois {
    fn default() -> Self {
        Self {
            root_server: "whois.iana.org".into(),
            timeout: Duration::from_secs(5),
        }
    }
}

impl LiveWhois {
    fn query(&self, server: &str, question: &str) -> Result<String, LookupError> {
        let addr = (server, 43)
            .to_socket_addrs()
            .map_err(|e| LookupError::Unavailable(format!("{server}: {e}")))?
            .next()
            .ok_or_else(|| LookupError::Unavailable(format!("{server}: no address")))?;
        let mut stream = TcpStream::connect_timeout(&addr, self.timeout)
            .map_err(|e| LookupError::Unavailable(format!("{server}: {e}")))?;
        stream.set_read_timeout(Some(self.timeout)).ok();
        stream
            .write_all(format!("{question}\r\n").as_bytes())
            .map_err(|e| LookupError::Unavailable(e.to_string()))?;
        let mut reply = Vec::new();
        stream
            .read_to_end(&mut reply)
            .map_err(|e| LookupError::Unavailable(e.to_string()))?;
        Ok(String::from_utf8_lossy(&reply).into_owned())
    }
}

/// First assignee-like field of a WHOIS reply.
pub fn assignee_from_reply(reply: &str) -> Option<String> {
    const KEYS: [&str; 5] = ["orgname", "org-name", "organization", "owner", "descr"];
    for key in KEYS {
        for line in reply.lines() {
            if let Some((k, v)) = line.split_once(':') {
                if k.trim().eq_ignore_ascii_case(key) && !v.trim().is_empty() {
                    return Some(v.trim().to_string());
                }
            }
        }
    }
    None
}

fn referral(reply: &str) -> Option<String> {
    reply.lines().find_map(|line| {
        let (k, v) = line.split_once(':')?;
        (k.trim().eq_ignore_ascii_case("refer") || k.trim().eq_ignore_ascii_case("whois"))
            .then(|| v.trim().to_string())
            .filter(|v| !v.is_empty())
    })
}

impl WhoisClient for LiveWhois {
    fn assignee(&self, ip: IpAddr) -> Result<Option<String>, LookupError> {
        let root = self.query(&self.root_server, &ip.to_string())?;
        let reply = match referral(&root) {
            Some(server) => self.query(&server, &ip.to_string())?,
            None => root,
        };
        Ok(assignee_from_reply(&reply))
    }
}

/// Assignee substring → canonical provider name, first match wins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderMap {
    rules: Vec<(String, String)>,
}

impl ProviderMap {
    pub fn parse(text: &str) -> Result<Self, TableError> {
        let mut rules = Vec::new();
        for (line, fields) in tables::rows(text) {
            let [needle, name, ..] = fields[..] else {
                return Err(tables::syntax(line, "expected substring<TAB>canonical_name"));
            };
            rules.push((needle.to_lowercase(), name.to_string()));
        }
        Ok(Self { rules })
    }

    pub fn load(path: &Path) -> Result<Self, TableError> {
        Self::parse(&tables::read(path)?)
    }

    pub fn canonical(&self, assignee: &str) -> Option<&str> {
        let lower = assignee.to_lowercase();
        self.rules
            .iter()
            .find(|(needle, _)| lower.contains(needle.as_str()))
            .map(|(_, name)| name.as_str())
    }
}

impl Default for ProviderMap {
    fn default() -> Self {
        Self::parse(BUNDLED_PROVIDERS).expect("bundled provider map is valid")
    }
}

/// Addresses that never reach a WHOIS registry.
pub fn is_non_routable(ip: IpAddr) -> bool {
    match ip {
        IpAddr::V4(v4) => {
            let [a, b, ..] = v4.octets();
            v4.is_private()
                || v4.is_loopback()
                || v4.is_link_local()
                || v4.is_unspecified()
                || v4.is_broadcast()
                || (a == 100 && (64..128).contains(&b))
        }
        IpAddr::V6(v6) => {
            if let Some(v4) = v6.to_ipv4_mapped() {
                return is_non_routable(IpAddr::V4(v4));
            }
            let first = v6.segments()[0];
            v6.is_loopback()
                || v6.is_unspecified()
                || (first & 0xfe00) == 0xfc00
                || (first & 0xffc0) == 0xfe80
        }
    }
}

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

#[derive(Debug, Clone)]
struct CachedAssignee {
    assignee: Option<String>,
    fetched_at: DateTime<Utc>,
}

/// Per-IP WHOIS cache with a validity window. Concurrent lookups for the
/// same address are serialized on a per-key lock so only one of them
/// queries the registry.
pub struct WhoisCache {
    slots: Mutex<HashMap<IpAddr, Arc<Mutex<Option<CachedAssignee>>>>>,
    validity: chrono::Duration,
    clock: Clock,
}

impl std::fmt::Debug for WhoisCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WhoisCache")
            .field("validity", &self.validity)
            .finish_non_exhaustive()
    }
}

impl Default for WhoisCache {
    fn default() -> Self {
        Self::new(chrono::Duration::days(7), Arc::new(Utc::now))
    }
}

impl WhoisCache {
    pub fn new(validity: chrono::Duration, clock: Clock) -> Self {
        Self {
            slots: Mutex::new(HashMap::new()),
            validity,
            clock,
        }
    }

    pub fn assignee(&self, ip: IpAddr, whois: &dyn WhoisClient) -> Result<Option<String>, LookupError> {
        let slot = {
            let mut slots = self.slots.lock().expect("whois cache poisoned");
            Arc::clone(slots.entry(ip).or_default())
        };
        let mut cached = slot.lock().expect("whois cache slot poisoned");
        let now = (self.clock)();
        if let Some(c) = cached.as_ref() {
            if now - c.fetched_at < self.validity {
                return Ok(c.assignee.clone());
            }
        }
        let assignee = whois.assignee(ip)?;
        *cached = Some(CachedAssignee {
            assignee: assignee.clone(),
            fetched_at: now,
        });
        Ok(assignee)
    }

    pub fn len(&self) -> usize {
        self.slots
            .lock()
            .expect("whois cache poisoned")
            .values()
            .filter(|s| s.lock().map(|c| c.is_some()).unwrap_or(false))
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// CDN provider serving `server_ip`: `"No CDN"` for non-routable addresses
/// and unmapped assignees, `"Unknown"` when WHOIS is unavailable.
pub fn identify_provider(
    server_ip: IpAddr,
    whois: &dyn WhoisClient,
    provider_map: &ProviderMap,
    cache: &WhoisCache,
) -> String {
    if is_non_routable(server_ip) {
        return NO_CDN.to_string();
    }
    match cache.assignee(server_ip, whois) {
        Ok(Some(assignee)) => provider_map.canonical(&assignee).unwrap_or(NO_CDN).to_string(),
        Ok(None) => NO_CDN.to_string(),
        Err(e) => {
            tracing::warn!(%server_ip, error = %e, "WHOIS unavailable");
            UNKNOWN.to_string()
        }
    }
}
