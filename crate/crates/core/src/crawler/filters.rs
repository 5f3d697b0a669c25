use std::fs;
use std::path::Path;
use std::time::Duration;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use url::Url;

use super::CrawlError;

const DEFAULT_FILTERS: &str = include_str!("../../data/url_filters.txt");

/// Default number of accessible pages a domain needs to enter the corpus.
pub const DEFAULT_MIN_PAGES_FOR_INCLUSION: usize = 1000;

/// Parses a filter file: one regex per line, `#` comments and blank lines
/// skipped.
pub fn parse_filter_patterns(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect()
}

pub fn default_filter_patterns() -> Vec<String> {
    parse_filter_patterns(DEFAULT_FILTERS)
}

pub fn load_filter_patterns(path: &Path) -> Result<Vec<String>, CrawlError> {
    let text = fs::read_to_string(path).map_err(|e| CrawlError::InvalidPolicy(format!("{}: {e}", path.display())))?;
    Ok(parse_filter_patterns(&text))
}

/// Serializable crawl settings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrawlPolicySpec {
    pub per_domain_delay_ms: u64,
    pub max_pages_per_domain: usize,
    pub min_pages_for_inclusion: usize,
    pub url_exclude_patterns: Vec<String>,
    pub allowed_schemes: Vec<String>,
    /// Scheme of the seed URL built from a bare domain.
    pub seed_scheme: String,
}

impl Default for CrawlPolicySpec {
    fn default() -> Self {
        Self {
            per_domain_delay_ms: 1000,
            max_pages_per_domain: 2000,
            min_pages_for_inclusion: DEFAULT_MIN_PAGES_FOR_INCLUSION,
            url_exclude_patterns: default_filter_patterns(),
            allowed_schemes: vec!["http".into(), "https".into()],
            seed_scheme: "https".into(),
        }
    }
}

/// Validated crawl settings with compiled exclusion patterns.
#[derive(Debug, Clone)]
pub struct CrawlPolicy {
    pub per_domain_delay: Duration,
    pub max_pages_per_domain: usize,
    pub min_pages_for_inclusion: usize,
    pub url_exclude_patterns: Vec<String>,
    pub allowed_schemes: Vec<String>,
    pub seed_scheme: String,
    compiled: Vec<Regex>,
}

impl CrawlPolicy {
    pub fn new(spec: CrawlPolicySpec) -> Result<Self, CrawlError> {
        if spec.max_pages_per_domain == 0 {
            return Err(CrawlError::InvalidPolicy("max_pages_per_domain must be at least 1".into()));
        }
        if spec.min_pages_for_inclusion == 0 {
            return Err(CrawlError::InvalidPolicy("min_pages_for_inclusion must be at least 1".into()));
        }
        let allowed: Vec<String> = spec.allowed_schemes.iter().map(|s| s.to_ascii_lowercase()).collect();
        if allowed.is_empty() || allowed.iter().any(|s| s != "http" && s != "https") {
            return Err(CrawlError::InvalidPolicy(format!(
                "allowed_schemes must be a non-empty subset of {{http, https}}, got {:?}",
                spec.allowed_schemes
            )));
        }
        let seed_scheme = spec.seed_scheme.to_ascii_lowercase();
        if !allowed.contains(&seed_scheme) {
            return Err(CrawlError::InvalidPolicy(format!("seed scheme '{seed_scheme}' is not allowed")));
        }
        let compiled = spec
            .url_exclude_patterns
            .iter()
            .map(|p| {
                RegexBuilder::new(p)
                    .case_insensitive(true)
                    .build()
                    .map_err(|source| CrawlError::BadPattern {
                        pattern: p.clone(),
                        source,
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            per_domain_delay: Duration::from_millis(spec.per_domain_delay_ms),
            max_pages_per_domain: spec.max_pages_per_domain,
            min_pages_for_inclusion: spec.min_pages_for_inclusion,
            url_exclude_patterns: spec.url_exclude_patterns,
            allowed_schemes: allowed,
            seed_scheme,
            compiled,
        })
    }

    pub fn is_excluded(&self, url: &str) -> bool {
        self.compiled.iter().any(|re| re.is_match(url))
    }

    /// Whether `url` is well-formed, uses an allowed scheme, lies within
    /// `domain` (subdomains included) and matches no exclusion pattern.
    pub fn accepts(&self, url: &str, domain: &str) -> bool {
        let Ok(parsed) = Url::parse(url) else {
            return false;
        };
        if !self.allowed_schemes.iter().any(|s| s == parsed.scheme()) {
            return false;
        }
        match parsed.host_str() {
            Some(host) if in_domain(host, domain) => {}
            _ => return false,
        }
        !self.is_excluded(url)
    }
}

impl Default for CrawlPolicy {
    fn default() -> Self {
        Self::new(CrawlPolicySpec::default()).expect("default policy is valid")
    }
}

/// `host` equals `domain` or is one of its subdomains.
pub fn in_domain(host: &str, domain: &str) -> bool {
    let host = host.trim_end_matches('.').to_ascii_lowercase();
    let domain = domain.trim_end_matches('.').to_ascii_lowercase();
    host == domain || host.ends_with(&format!(".{domain}"))
}

/// Keeps, in input order, the URLs that `policy` accepts for `domain`.
pub fn apply_url_filters<S: AsRef<str>>(urls: &[S], policy: &CrawlPolicy, domain: &str) -> Vec<String> {
    urls.iter()
        .map(AsRef::as_ref)
        .filter(|u| policy.accepts(u, domain))
        .map(String::from)
        .collect()
}
