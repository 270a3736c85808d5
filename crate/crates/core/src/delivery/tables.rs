//! Tab-separated fixture tables. Blank lines and `#` comments are skipped.

use std::net::IpAddr;
use std::path::Path;

use ipnet::IpNet;

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
}

pub(crate) fn read(path: &Path) -> Result<String, TableError> {
    std::fs::read_to_string(path).map_err(|source| TableError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Data rows as `(line number, fields)`.
pub(crate) fn rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
            None
        } else {
            Some((i + 1, trimmed.split('\t').map(str::trim).collect()))
        }
    })
}

pub(crate) fn syntax(line: usize, message: impl Into<String>) -> TableError {
    TableError::Syntax {
        line,
        message: message.into(),
    }
}

/// `-` and empty cells are absent values.
pub(crate) fn optional(field: Option<&&str>) -> Option<String> {
    field
        .map(|s| s.trim())
        .filter(|s| !s.is_empty() && *s != "-")
        .map(str::to_string)
}

pub(crate) fn parse_prefix(line: usize, raw: &str) -> Result<IpNet, TableError> {
    if raw.contains('/') {
        raw.parse::<IpNet>()
            .map(|n| n.trunc())
            .map_err(|e| syntax(line, format!("bad prefix {raw:?}: {e}")))
    } else {
        raw.parse::<IpAddr>()
            .map(IpNet::from)
            .map_err(|e| syntax(line, format!("bad address {raw:?}: {e}")))
    }
}

/// Longest-prefix-match table.
#[derive(Debug, Clone)]
pub struct PrefixTable<T> {
    entries: Vec<(IpNet, T)>,
}

impl<T> Default for PrefixTable<T> {
    fn default() -> Self {
        Self { entries: Vec::new() }
    }
}

impl<T> PrefixTable<T> {
    pub fn insert(&mut self, prefix: IpNet, value: T) {
        self.entries.push((prefix, value));
    }

    pub fn lookup(&self, ip: IpAddr) -> Option<&T> {
        self.entries
            .iter()
            .filter(|(net, _)| net.contains(&ip))
            .max_by_key(|(net, _)| net.prefix_len())
            .map(|(_, v)| v)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
