use std::collections::HashMap;
use std::fmt;
use std::net::IpAddr;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use super::tables::{self, PrefixTable, TableError};

const BUNDLED_COUNTRIES: &str = include_str!("../../data/countries.tsv");

static COUNTRIES: LazyLock<CountryTable> =
    LazyLock::new(|| CountryTable::parse(BUNDLED_COUNTRIES).expect("bundled country table is valid"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Continent {
    AF,
    AN,
    AS,
    EU,
    NA,
    OC,
    SA,
}

impl Continent {
    pub const ALL: [Continent; 7] = [
        Continent::AF,
        Continent::AN,
        Continent::AS,
        Continent::EU,
        Continent::NA,
        Continent::OC,
        Continent::SA,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Continent::AF => "AF",
            Continent::AN => "AN",
            Continent::AS => "AS",
            Continent::EU => "EU",
            Continent::NA => "NA",
            Continent::OC => "OC",
            Continent::SA => "SA",
        }
    }

    /// Representative map point (latitude, longitude).
    pub fn centroid(self) -> (f64, f64) {
        match self {
            Continent::AF => (2.0, 21.0),
            Continent::AN => (-82.0, 0.0),
            Continent::AS => (34.0, 100.0),
            Continent::EU => (50.0, 15.0),
            Continent::NA => (45.0, -100.0),
            Continent::OC => (-22.0, 140.0),
            Continent::SA => (-15.0, -60.0),
        }
    }
}

impl fmt::Display for Continent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Continent {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Continent::ALL
            .into_iter()
            .find(|c| c.code().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown continent code {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountryInfo {
    pub continent: Continent,
    pub latitude: f64,
    pub longitude: f64,
    pub name: String,
}

/// ISO-3166 alpha-2 → continent and centroid.
#[derive(Debug, Clone, Default)]
pub struct CountryTable {
    countries: HashMap<String, CountryInfo>,
}

impl CountryTable {
    pub fn bundled() -> &'static CountryTable {
        &COUNTRIES
    }

    pub fn parse(text: &str) -> Result<Self, TableError> {
        let mut countries = HashMap::new();
        for (line, f) in tables::rows(text) {
            let [iso, continent, lat, lon, name, ..] = f[..] else {
                return Err(tables::syntax(line, "expected iso2, continent, lat, lon, name"));
            };
            let continent = continent.parse().map_err(|e| tables::syntax(line, e))?;
            let coord = |v: &str| {
                v.parse::<f64>()
                    .map_err(|e| tables::syntax(line, format!("bad coordinate {v:?}: {e}")))
            };
            countries.insert(
                iso.to_ascii_uppercase(),
                CountryInfo {
                    continent,
                    latitude: coord(lat)?,
                    longitude: coord(lon)?,
                    name: name.to_string(),
                },
            );
        }
        Ok(Self { countries })
    }

    pub fn get(&self, iso2: &str) -> Option<&CountryInfo> {
        self.countries.get(&iso2.to_ascii_uppercase())
    }

    pub fn len(&self) -> usize {
        self.countries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.countries.is_empty()
    }
}

/// What a geolocation database knows about an address.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GeoRecord {
    pub city: Option<String>,
    pub country: Option<String>,
    pub continent: Option<Continent>,
    pub latitude: Option<f64>,
    pub longitude: Option<f64>,
}

pub trait GeoProvider: Send + Sync {
    fn lookup(&self, ip: IpAddr) -> Option<GeoRecord>;
}

/// Offline geolocation from an
/// `ip_prefix<TAB>city<TAB>country<TAB>continent[<TAB>lat<TAB>lon]` table.
#[derive(Debug, Clone, Default)]
pub struct GeoTable {
    table: PrefixTable<GeoRecord>,
}

impl GeoTable {
    pub fn parse(text: &str) -> Result<Self, TableError> {
        let mut table = PrefixTable::default();
        for (line, f) in tables::rows(text) {
            if f.len() < 4 {
                return Err(tables::syntax(
                    line,
                    "expected ip_prefix<TAB>city<TAB>country<TAB>continent",
                ));
            }
            let prefix = tables::parse_prefix(line, f[0])?;
            let continent = tables::optional(f.get(3))
                .map(|c| c.parse::<Continent>())
                .transpose()
                .map_err(|e| tables::syntax(line, e))?;
            let coord = |i: usize| -> Result<Option<f64>, TableError> {
                tables::optional(f.get(i))
                    .map(|v| {
                        v.parse::<f64>()
                            .map_err(|e| tables::syntax(line, format!("bad coordinate {v:?}: {e}")))
                    })
                    .transpose()
            };
            table.insert(
                prefix,
                GeoRecord {
                    city: tables::optional(f.get(1)),
                    country: tables::optional(f.get(2)).map(|c| c.to_ascii_uppercase()),
                    continent,
                    latitude: coord(4)?,
                    longitude: coord(5)?,
                },
            );
        }
        Ok(Self { table })
    }

    pub fn load(path: &Path) -> Result<Self, TableError> {
        Self::parse(&tables::read(path)?)
    }
}

impl GeoProvider for GeoTable {
    fn lookup(&self, ip: IpAddr) -> Option<GeoRecord> {
        self.table.lookup(ip).cloned()
    }
}

/// Town, country and continent of a server. A continent is filled in
/// from the country when the database omits it, and dropped when no
/// country is known.
pub fn geolocate(server_ip: IpAddr, geo: &dyn GeoProvider) -> GeoRecord {
    let Some(mut record) = geo.lookup(server_ip) else {
        return GeoRecord::default();
    };
    match &record.country {
        Some(country) => {
            if record.continent.is_none() {
                record.continent = CountryTable::bundled().get(country).map(|c| c.continent);
            }
        }
        None => record.continent = None,
    }
    record
}
