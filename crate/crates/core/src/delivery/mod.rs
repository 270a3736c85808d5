//! Per-resource delivery attribution: which cache served a resource, which
//! CDN operates it, where it sits, and whether its domain shares the
//! homepage's name servers.
//!
//! WHOIS, geolocation and name-server lookups are traits so campaigns can
//! run against offline fixture tables; [`Enrichers::from_dir`] loads the
//! standard fixture layout.

mod cache_chain;
mod geo;
mod origin;
mod provider;
mod tables;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::har::{HarEntry, SuffixRules};

pub use cache_chain::{
    delivering_hop, parse_cache_chain, CacheChain, CacheHop, HeaderRegistry, HeaderRole, RegistryEntry,
    Verdict,
};
pub use geo::{geolocate, Continent, CountryInfo, CountryTable, GeoProvider, GeoRecord, GeoTable};
pub use origin::{classify_origin, NsResolver, NsTable, OriginClass};
pub use provider::{
    assignee_from_reply, identify_provider, is_non_routable, Clock, LiveWhois, ProviderMap, WhoisCache,
    WhoisClient, WhoisTable, NO_CDN, UNKNOWN,
};
pub use tables::{PrefixTable, TableError};

/// Provider name for cached deliveries whose operator could not be mapped.
pub const UNKNOWN_CDN: &str = "Unknown-CDN";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LookupError {
    #[error("lookup service unavailable: {0}")]
    Unavailable(String),
    #[error("no record for {0}")]
    NotFound(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryAttribution {
    pub provider: String,
    pub delivering_server_label: Option<String>,
    pub served_from_cache: bool,
    pub city: Option<String>,
    pub country: Option<String>,
    pub continent: Option<Continent>,
    pub latitude: Option<f64>,
    pub longitude: Option<f64>,
    pub origin_class: OriginClass,
}

#[derive(Debug, thiserror::Error)]
pub enum EnrichmentError {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Suffix(#[from] crate::har::SuffixRulesError),
    #[error("header registry {path}: {message}")]
    Registry { path: String, message: String },
}

/// Lookup services and configuration shared by every attribution.
pub struct Enrichers {
    pub whois: Arc<dyn WhoisClient>,
    pub geo: Arc<dyn GeoProvider>,
    pub dns: Arc<dyn NsResolver>,
    pub registry: HeaderRegistry,
    pub provider_map: ProviderMap,
    pub suffixes: Arc<SuffixRules>,
    pub whois_cache: WhoisCache,
}

impl Enrichers {
    /// Empty lookup tables: every resource resolves to "No CDN", no
    /// location, Unknown origin.
    pub fn offline_empty() -> Self {
        Self {
            whois: Arc::new(WhoisTable::default()),
            geo: Arc::new(GeoTable::default()),
            dns: Arc::new(NsTable::default()),
            registry: HeaderRegistry::default(),
            provider_map: ProviderMap::default(),
            suffixes: Arc::new(SuffixRules::bundled().clone()),
            whois_cache: WhoisCache::default(),
        }
    }

    /// Load fixture tables from `dir`. Every file is optional:
    /// `whois.tsv`, `geo.tsv`, `ns.tsv`, `providers.tsv`,
    /// `cache_headers.json`, `public_suffix.dat`.
    pub fn from_dir(dir: &Path) -> Result<Self, EnrichmentError> {
        let mut e = Self::offline_empty();
        let file = |name: &str| Some(dir.join(name)).filter(|p| p.is_file());
        if let Some(p) = file("whois.tsv") {
            e.whois = Arc::new(WhoisTable::load(&p)?);
        }
        if let Some(p) = file("geo.tsv") {
            e.geo = Arc::new(GeoTable::load(&p)?);
        }
        if let Some(p) = file("ns.tsv") {
            e.dns = Arc::new(NsTable::load(&p)?);
        }
        if let Some(p) = file("providers.tsv") {
            e.provider_map = ProviderMap::load(&p)?;
        }
        if let Some(p) = file("public_suffix.dat") {
            e.suffixes = Arc::new(SuffixRules::load(&p)?);
        }
        if let Some(p) = file("cache_headers.json") {
            let registry_error = |message: String| EnrichmentError::Registry {
                path: p.display().to_string(),
                message,
            };
            let text = std::fs::read_to_string(&p).map_err(|err| registry_error(err.to_string()))?;
            e.registry = serde_json::from_str(&text).map_err(|err| registry_error(err.to_string()))?;
        }
        Ok(e)
    }

    pub fn attribute(&self, entry: &HarEntry, homepage_domain: &str) -> DeliveryAttribution {
        attribute_delivery(entry, homepage_domain, self)
    }
}

impl std::fmt::Debug for Enrichers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Enrichers")
            .field("registry", &self.registry)
            .field("provider_map", &self.provider_map)
            .finish_non_exhaustive()
    }
}

/// Cache chain → delivering hop → provider → location → origin class.
pub fn attribute_delivery(
    entry: &HarEntry,
    homepage_domain: &str,
    enrichers: &Enrichers,
) -> DeliveryAttribution {
    let chain = parse_cache_chain(&entry.response_headers, &enrichers.registry);
    let (served_from_cache, delivering_server_label) = delivering_hop(&chain);

    let (mut provider, location) = match entry.server_ip {
        Some(ip) => (
            identify_provider(
                ip,
                enrichers.whois.as_ref(),
                &enrichers.provider_map,
                &enrichers.whois_cache,
            ),
            geolocate(ip, enrichers.geo.as_ref()),
        ),
        None => (UNKNOWN.to_string(), GeoRecord::default()),
    };
    if served_from_cache && provider == NO_CDN {
        provider = UNKNOWN_CDN.to_string();
    }

    let origin_class = match entry.host() {
        Some(host) => classify_origin(
            &enrichers.suffixes.registrable_domain(&host),
            homepage_domain,
            enrichers.dns.as_ref(),
            &enrichers.suffixes,
        ),
        None => OriginClass::Unknown,
    };

    DeliveryAttribution {
        provider,
        delivering_server_label,
        served_from_cache,
        city: location.city,
        country: location.country,
        continent: location.continent,
        latitude: location.latitude,
        longitude: location.longitude,
        origin_class,
    }
}
