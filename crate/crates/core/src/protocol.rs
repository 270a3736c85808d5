//! Requested-protocol policies, their driver switch sets, and the
//! distribution of protocols actually received.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::har::{HarSession, SuffixRules};

/// Received protocol, after normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Protocol {
    H1,
    H2,
    #[serde(rename = "QUIC")]
    Quic,
    #[serde(rename = "OTHER")]
    Other,
}

impl Protocol {
    pub const ALL: [Protocol; 4] = [Protocol::H1, Protocol::H2, Protocol::Quic, Protocol::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::H1 => "H1",
            Protocol::H2 => "H2",
            Protocol::Quic => "QUIC",
            Protocol::Other => "OTHER",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The protocol a measurement asks the browser for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RequestedProtocol {
    H1,
    H2,
    Quic,
    H2Repeat,
    QuicRepeat,
}

impl RequestedProtocol {
    pub const ALL: [RequestedProtocol; 5] = [
        RequestedProtocol::H1,
        RequestedProtocol::H2,
        RequestedProtocol::Quic,
        RequestedProtocol::H2Repeat,
        RequestedProtocol::QuicRepeat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RequestedProtocol::H1 => "H1",
            RequestedProtocol::H2 => "H2",
            RequestedProtocol::Quic => "QUIC",
            RequestedProtocol::H2Repeat => "H2_REPEAT",
            RequestedProtocol::QuicRepeat => "QUIC_REPEAT",
        }
    }
}

impl fmt::Display for RequestedProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RequestedProtocol {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim().replace('-', "_");
        RequestedProtocol::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(&wanted))
            .ok_or_else(|| ProtocolError::UnknownProtocol(s.to_string()))
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("invalid protocol policy: {0}")]
    InvalidPolicy(String),
    #[error("unknown requested protocol {0:?}")]
    UnknownProtocol(String),
}

/// Requested protocol plus the enable flags it implies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PolicyDocument")]
pub struct ProtocolPolicy {
    pub requested: RequestedProtocol,
    pub h2_enabled: bool,
    pub quic_enabled: bool,
    pub repeat: bool,
}

impl ProtocolPolicy {
    /// The unique valid policy for `requested`.
    pub fn for_requested(requested: RequestedProtocol) -> Self {
        use RequestedProtocol::*;
        let (h2_enabled, quic_enabled) = match requested {
            H1 => (false, false),
            H2 | H2Repeat => (true, false),
            Quic | QuicRepeat => (true, true),
        };
        Self {
            requested,
            h2_enabled,
            quic_enabled,
            repeat: matches!(requested, H2Repeat | QuicRepeat),
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        let expected = Self::for_requested(self.requested);
        if *self == expected {
            Ok(())
        } else {
            Err(ProtocolError::InvalidPolicy(format!(
                "{} requires h2_enabled={}, quic_enabled={}, repeat={}",
                self.requested, expected.h2_enabled, expected.quic_enabled, expected.repeat
            )))
        }
    }
}

/// Config documents may give just the requested protocol or the full flag set.
#[derive(Deserialize)]
#[serde(untagged)]
enum PolicyDocument {
    Requested(RequestedProtocol),
    Full {
        requested: RequestedProtocol,
        h2_enabled: bool,
        quic_enabled: bool,
        repeat: bool,
    },
}

impl TryFrom<PolicyDocument> for ProtocolPolicy {
    type Error = ProtocolError;

    fn try_from(doc: PolicyDocument) -> Result<Self, Self::Error> {
        let policy = match doc {
            PolicyDocument::Requested(r) => ProtocolPolicy::for_requested(r),
            PolicyDocument::Full {
                requested,
                h2_enabled,
                quic_enabled,
                repeat,
            } => ProtocolPolicy {
                requested,
                h2_enabled,
                quic_enabled,
                repeat,
            },
        };
        policy.validate()?;
        Ok(policy)
    }
}

/// Protocol switches and cache directives handed to the browser driver.
///
/// HTTP/1.1 is never switched off: fallback to it is left to the browser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriverSettings {
    pub h2: bool,
    pub quic: bool,
    /// Warm-up navigation, browser restart, then the measured navigation.
    pub two_pass: bool,
    pub clear_resource_cache: bool,
    pub keep_dns_cache: bool,
}

impl DriverSettings {
    /// Chromium command-line switches for these settings.
    pub fn chromium_switches(&self) -> Vec<&'static str> {
        let mut switches = Vec::new();
        if !self.h2 {
            switches.push("--disable-http2");
        }
        switches.push(if self.quic {
            "--enable-quic"
        } else {
            "--disable-quic"
        });
        switches
    }
}

pub fn policy_settings(policy: &ProtocolPolicy) -> Result<DriverSettings, ProtocolError> {
    policy.validate()?;
    Ok(DriverSettings {
        h2: policy.h2_enabled,
        quic: policy.quic_enabled,
        two_pass: policy.repeat,
        clear_resource_cache: true,
        keep_dns_cache: policy.repeat,
    })
}

static H3_FAMILY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(h3(-[0-9]+)?|http/3(\.0)?)$").unwrap());

/// Map an HAR `httpVersion` string onto H1 / H2 / QUIC / OTHER.
pub fn normalize_protocol(http_version_raw: &str) -> Protocol {
    let v = http_version_raw.trim().to_ascii_lowercase();
    match v.as_str() {
        "http/1.0" | "http/1.1" => Protocol::H1,
        "h2" | "http/2" | "http/2.0" | "h2c" => Protocol::H2,
        _ if v.contains("quic") || H3_FAMILY.is_match(&v) => Protocol::Quic,
        _ => Protocol::Other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolDistribution {
    pub counts: BTreeMap<Protocol, u64>,
    pub fractions: BTreeMap<Protocol, f64>,
}

impl ProtocolDistribution {
    pub fn from_counts(counts: BTreeMap<Protocol, u64>) -> Self {
        let mut full: BTreeMap<Protocol, u64> = Protocol::ALL.into_iter().map(|p| (p, 0)).collect();
        for (p, n) in counts {
            *full.entry(p).or_default() += n;
        }
        let total: u64 = full.values().sum();
        let fractions = full
            .iter()
            .map(|(&p, &n)| (p, if total == 0 { 0.0 } else { n as f64 / total as f64 }))
            .collect();
        Self {
            counts: full,
            fractions,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

impl Default for ProtocolDistribution {
    fn default() -> Self {
        Self::from_counts(BTreeMap::new())
    }
}

pub fn protocol_distribution(session: &HarSession) -> ProtocolDistribution {
    let mut counts = BTreeMap::new();
    for e in session.completed_entries() {
        *counts.entry(normalize_protocol(&e.http_version_raw)).or_default() += 1;
    }
    ProtocolDistribution::from_counts(counts)
}

/// Registrable domains with at least one resource received over QUIC.
pub fn quic_enabled_domains(session: &HarSession, suffixes: &SuffixRules) -> BTreeSet<String> {
    session
        .completed_entries()
        .filter(|e| normalize_protocol(&e.http_version_raw) == Protocol::Quic)
        .filter_map(|e| e.host())
        .map(|h| suffixes.registrable_domain(&h))
        .collect()
}
