use serde::{Deserialize, Serialize};

use crate::har::Headers;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Hit,
    Miss,
    Other,
}

impl Verdict {
    fn classify(token: &str) -> Verdict {
        let upper = token.trim_start().to_ascii_uppercase();
        if upper.starts_with("HIT") {
            Verdict::Hit
        } else if upper.starts_with("MISS") {
            Verdict::Miss
        } else {
            Verdict::Other
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheHop {
    pub verdict: Verdict,
    pub server_label: Option<String>,
    pub source_header: String,
}

/// Cache verdicts in header order, left to right.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheChain {
    pub hops: Vec<CacheHop>,
}

impl CacheChain {
    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }

    pub fn has_hit(&self) -> bool {
        self.hops.iter().any(|h| h.verdict == Verdict::Hit)
    }
}

/// How a registry header contributes to the chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum HeaderRole {
    /// Comma-separated HIT/MISS verdicts, one hop each.
    Verdict,
    /// Comma-separated server names aligned by index with the hops of
    /// another header (`X-Served-By` labels `X-Cache`).
    Labels { target: String },
    /// `Via`-style proxy list: one OTHER hop per proxy, labelled with the
    /// proxy's pseudonym.
    ProxyList,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub name: String,
    #[serde(flatten)]
    pub role: HeaderRole,
}

/// Ordered list of cache headers, upstream caches first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HeaderRegistry(pub Vec<RegistryEntry>);

impl HeaderRegistry {
    fn entry(name: &str, role: HeaderRole) -> RegistryEntry {
        RegistryEntry {
            name: name.to_string(),
            role,
        }
    }
}

impl Default for HeaderRegistry {
    fn default() -> Self {
        use HeaderRole::*;
        Self(vec![
            Self::entry("X-App-Cache", Verdict),
            Self::entry("X-Cache", Verdict),
            Self::entry(
                "X-Served-By",
                Labels {
                    target: "X-Cache".into(),
                },
            ),
            Self::entry("X-Cache-Status", Verdict),
            Self::entry("CF-Cache-Status", Verdict),
            Self::entry("Via", ProxyList),
        ])
    }
}

fn tokens<'a>(headers: &'a Headers, name: &'a str) -> impl Iterator<Item = &'a str> + 'a {
    headers
        .get_all(name)
        .flat_map(|v| v.split(','))
        .map(str::trim)
        .filter(|t| !t.is_empty())
}

/// `HIT from cache-01.example` carries its own server name.
fn inline_label(token: &str) -> Option<String> {
    let lower = token.to_ascii_lowercase();
    let at = lower.find(" from ")?;
    let label = token[at + 6..].trim();
    (!label.is_empty()).then(|| label.to_string())
}

pub fn parse_cache_chain(headers: &Headers, registry: &HeaderRegistry) -> CacheChain {
    let mut hops: Vec<CacheHop> = Vec::new();
    for entry in &registry.0 {
        match &entry.role {
            HeaderRole::Verdict => {
                for token in tokens(headers, &entry.name) {
                    hops.push(CacheHop {
                        verdict: Verdict::classify(token),
                        server_label: inline_label(token),
                        source_header: entry.name.clone(),
                    });
                }
            }
            HeaderRole::Labels { target } => {
                let mut targets = hops
                    .iter_mut()
                    .filter(|h| h.source_header.eq_ignore_ascii_case(target));
                for label in tokens(headers, &entry.name) {
                    match targets.next() {
                        Some(hop) => hop.server_label = Some(label.to_string()),
                        None => break,
                    }
                }
            }
            HeaderRole::ProxyList => {
                for token in tokens(headers, &entry.name) {
                    let pseudonym = token.split_whitespace().nth(1).unwrap_or(token);
                    hops.push(CacheHop {
                        verdict: Verdict::Other,
                        server_label: Some(pseudonym.to_string()),
                        source_header: entry.name.clone(),
                    });
                }
            }
        }
    }
    CacheChain { hops }
}

/// The last HIT hop delivered the bytes. Without a HIT, the last hop's
/// label (if any) is reported and the resource counts as not cached.
pub fn delivering_hop(chain: &CacheChain) -> (bool, Option<String>) {
    match chain.hops.iter().rev().find(|h| h.verdict == Verdict::Hit) {
        Some(hit) => (true, hit.server_label.clone()),
        None => (false, chain.hops.last().and_then(|h| h.server_label.clone())),
    }
}
