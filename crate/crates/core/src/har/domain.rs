use std::net::IpAddr;
use std::path::Path;
use std::sync::LazyLock;

use publicsuffix::{List, Psl};

const BUNDLED_RULES: &str = include_str!("../../data/public_suffix.dat");

static BUNDLED: LazyLock<SuffixRules> =
    LazyLock::new(|| SuffixRules::parse(BUNDLED_RULES).expect("bundled suffix rules are valid"));

#[derive(Debug, thiserror::Error)]
pub enum SuffixRulesError {
    #[error("reading suffix rules: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid suffix rules: {0}")]
    Invalid(String),
}

/// Public-suffix rule set (`!` exception and `*` wildcard rules supported).
#[derive(Debug, Clone)]
pub struct SuffixRules {
    list: List,
}

impl SuffixRules {
    /// The rule file compiled into the crate.
    pub fn bundled() -> &'static SuffixRules {
        &BUNDLED
    }

    /// Parse a rule file: one rule per line, `//` comments. Files in the
    /// upstream list format keep their ICANN/PRIVATE section markers; plain
    /// rule files are read as a single ICANN section.
    pub fn parse(text: &str) -> Result<Self, SuffixRulesError> {
        let list = if text.contains("===BEGIN ") {
            text.parse::<List>()
        } else {
            format!("// ===BEGIN ICANN DOMAINS===\n{text}").parse::<List>()
        }
        .map_err(|e| SuffixRulesError::Invalid(e.to_string()))?;
        Ok(Self { list })
    }

    pub fn load(path: &Path) -> Result<Self, SuffixRulesError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn registrable_domain(&self, hostname: &str) -> String {
        let host = hostname.trim().trim_end_matches('.');
        let unbracketed = host.trim_start_matches('[').trim_end_matches(']');
        if unbracketed.parse::<IpAddr>().is_ok() {
            return unbracketed.to_string();
        }
        let host = host.to_ascii_lowercase();
        match self.list.domain(host.as_bytes()) {
            Some(domain) => String::from_utf8_lossy(domain.as_bytes()).into_owned(),
            None => host,
        }
    }
}

/// Public suffix plus one label. IP literals and names without a registrable
/// part (a bare suffix, `localhost`) come back unchanged.
pub fn registrable_domain(hostname: &str, rules: &SuffixRules) -> String {
    rules.registrable_domain(hostname)
}

/// Lower-cased host of a URL, `None` when the URL has no host.
pub fn host_of(url: &str) -> Option<String> {
    let parsed = url::Url::parse(url).ok()?;
    match parsed.host()? {
        url::Host::Domain(d) => Some(d.to_ascii_lowercase()),
        url::Host::Ipv4(ip) => Some(ip.to_string()),
        url::Host::Ipv6(ip) => Some(ip.to_string()),
    }
}
