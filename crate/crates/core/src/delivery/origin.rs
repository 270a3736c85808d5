use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tables::{self, TableError};
use super::LookupError;
use crate::har::SuffixRules;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OriginClass {
    SameOrigin,
    NonOrigin,
    Unknown,
}

/// Authoritative name servers of a domain.
pub trait NsResolver: Send + Sync {
    fn authoritative_ns(&self, domain: &str) -> Result<Vec<String>, LookupError>;
}

/// Offline resolver backed by a `domain<TAB>ns1,ns2,...` table.
#[derive(Debug, Clone, Default)]
pub struct NsTable {
    servers: HashMap<String, Vec<String>>,
}

impl NsTable {
    pub fn parse(text: &str) -> Result<Self, TableError> {
        let mut servers = HashMap::new();
        for (line, fields) in tables::rows(text) {
            let [domain, list, ..] = fields[..] else {
                return Err(tables::syntax(line, "expected domain<TAB>ns1,ns2,..."));
            };
            let ns = list
                .split(',')
                .map(|s| s.trim().trim_end_matches('.').to_ascii_lowercase())
                .filter(|s| !s.is_empty())
                .collect();
            servers.insert(domain.to_ascii_lowercase(), ns);
        }
        Ok(Self { servers })
    }

    pub fn load(path: &Path) -> Result<Self, TableError> {
        Self::parse(&tables::read(path)?)
    }
}

impl NsResolver for NsTable {
    fn authoritative_ns(&self, domain: &str) -> Result<Vec<String>, LookupError> {
        self.servers
            .get(&domain.to_ascii_lowercase())
            .cloned()
            .ok_or_else(|| LookupError::NotFound(domain.to_string()))
    }
}

fn ns_domains(
    domain: &str,
    dns: &dyn NsResolver,
    suffixes: &SuffixRules,
) -> Result<BTreeSet<String>, LookupError> {
    let servers = dns.authoritative_ns(domain)?;
    if servers.is_empty() {
        return Err(LookupError::NotFound(domain.to_string()));
    }
    Ok(servers.iter().map(|ns| suffixes.registrable_domain(ns)).collect())
}

/// Same-Origin when the two domains share an authoritative name-server
/// domain, Non-Origin when they share none, Unknown when either lookup fails.
pub fn classify_origin(
    resource_domain: &str,
    homepage_domain: &str,
    dns: &dyn NsResolver,
    suffixes: &SuffixRules,
) -> OriginClass {
    if resource_domain.eq_ignore_ascii_case(homepage_domain) {
        return OriginClass::SameOrigin;
    }
    let lookup = ns_domains(resource_domain, dns, suffixes)
        .and_then(|r| Ok((r, ns_domains(homepage_domain, dns, suffixes)?)));
    match lookup {
        Ok((resource, homepage)) if resource.is_disjoint(&homepage) => OriginClass::NonOrigin,
        Ok(_) => OriginClass::SameOrigin,
        Err(_) => OriginClass::Unknown,
    }
}
