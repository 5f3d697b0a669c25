//! Company registry: the list of (name, domain, sector) rows seeding the crawl
//! and the report harvest.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const DEFAULT_SECTORS: &str = include_str!("../data/sectors.txt");

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed registry CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("registry row {row}: {reason}")]
    InvalidRow { row: usize, reason: String },
}

/// The configured economic sector labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectorList {
    labels: Vec<String>,
}

impl SectorList {
    pub fn parse(text: &str) -> Self {
        let labels = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(String::from)
            .collect();
        Self { labels }
    }

    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        let text = fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::parse(&text))
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl Default for SectorList {
    /// The 27 sectors of the reference company base.
    fn default() -> Self {
        Self::parse(DEFAULT_SECTORS)
    }
}

/// One registry row.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CompanyEntry {
    pub name: String,
    pub domain: String,
    pub sector: String,
}

impl CompanyEntry {
    /// Builds an entry, normalizing the domain to its bare lowercase host form.
    pub fn new(name: &str, domain: &str, sector: &str) -> Result<Self, String> {
        let name = name.trim();
        if name.is_empty() {
            return Err("empty company name".into());
        }
        let domain = normalize_domain(domain)?;
        let sector = sector.trim();
        if sector.is_empty() {
            return Err("empty sector".into());
        }
        Ok(Self {
            name: name.to_string(),
            domain,
            sector: sector.to_string(),
        })
    }
}

/// Lowercases a domain and rejects anything carrying a scheme, path, port or
/// whitespace.
pub fn normalize_domain(raw: &str) -> Result<String, String> {
    let d = raw.trim().trim_end_matches('.').to_ascii_lowercase();
    if d.is_empty() {
        return Err("empty domain".into());
    }
    if d.contains("://") || d.contains('/') || d.contains(':') {
        return Err(format!("domain '{raw}' must not contain a scheme, port or path"));
    }
    if d.chars().any(|c| c.is_whitespace()) || !d.contains('.') {
        return Err(format!("'{raw}' is not a domain"));
    }
    if d.split('.').any(|label| label.is_empty()) {
        return Err(format!("'{raw}' has an empty label"));
    }
    Ok(d)
}

/// Reads a `name,domain,sector` CSV. Every sector must belong to `sectors`;
/// duplicated domains are rejected.
pub fn load_registry(path: &Path, sectors: &SectorList) -> Result<Vec<CompanyEntry>, RegistryError> {
    let text = fs::read_to_string(path).map_err(|source| RegistryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_registry(&text, sectors)
}

pub fn parse_registry(text: &str, sectors: &SectorList) -> Result<Vec<CompanyEntry>, RegistryError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let expected = ["name", "domain", "sector"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(RegistryError::InvalidRow {
            row: 0,
            reason: format!("header must be name,domain,sector (got {:?})", headers),
        });
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let entry = CompanyEntry::new(&rec[0], &rec[1], &rec[2])
            .map_err(|reason| RegistryError::InvalidRow { row, reason })?;
        if !sectors.contains(&entry.sector) {
            return Err(RegistryError::InvalidRow {
                row,
                reason: format!("unknown sector '{}'", entry.sector),
            });
        }
        if !seen.insert(entry.domain.clone()) {
            return Err(RegistryError::InvalidRow {
                row,
                reason: format!("duplicate domain '{}'", entry.domain),
            });
        }
        out.push(entry);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sector_list_has_27_labels() {
        assert_eq!(SectorList::default().len(), 27);
        assert!(SectorList::default().contains("Business services"));
    }

    #[test]
    fn parses_quoted_fields_and_normalizes_domain() {
        let csv = "name,domain,sector\n\"Acme, SA\",ACME.fr,Business services\n";
        let rows = parse_registry(csv, &SectorList::default()).unwrap();
        assert_eq!(rows[0].name, "Acme, SA");
        assert_eq!(rows[0].domain, "acme.fr");
    }

    #[test]
    fn rejects_scheme_and_unknown_sector() {
        let sectors = SectorList::default();
        let bad_domain = "name,domain,sector\nA,https://a.com,Business services\n";
        assert!(parse_registry(bad_domain, &sectors).is_err());
        let bad_sector = "name,domain,sector\nA,a.com,Space piracy\n";
        assert!(matches!(
            parse_registry(bad_sector, &sectors),
            Err(RegistryError::InvalidRow { row: 1, .. })
        ));
    }

    #[test]
    fn rejects_duplicate_domain_and_bad_header() {
        let sectors = SectorList::default();
        let dup = "name,domain,sector\nA,a.com,Utilities\nB,a.com,Utilities\n";
        assert!(parse_registry(dup, &sectors).is_err());
        assert!(parse_registry("company,url\nA,a.com\n", &sectors).is_err());
    }
}
