use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use url::Url;

use super::CrawlError;

/// Disallow prefixes of the generic (`User-agent: *`) group of one host's
/// robots.txt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobotsRules {
    pub domain: String,
    pub disallow_prefixes: Vec<String>,
    pub fetched_at: DateTime<Utc>,
}

impl RobotsRules {
    /// Rules for a host without a robots file.
    pub fn allow_all(domain: &str) -> Self {
        Self {
            domain: domain.to_ascii_lowercase(),
            disallow_prefixes: Vec::new(),
            fetched_at: Utc::now(),
        }
    }

    /// Parses a robots.txt body. Only `Disallow` lines of groups naming the
    /// `*` agent are kept. Wildcard patterns are truncated to their literal
    /// prefix (a pattern starting with `*` is dropped), and a trailing `$` is
    /// ignored. Allow, Crawl-delay and Sitemap lines are ignored.
    pub fn parse(domain: &str, body: &str) -> Self {
        let mut prefixes: Vec<String> = Vec::new();
        let mut group_agents: Vec<String> = Vec::new();
        let mut in_rules = false;
        for raw in body.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            let Some((key, value)) = line.split_once(':') else {
                continue;
            };
            let key = key.trim().to_ascii_lowercase();
            let value = value.trim();
            match key.as_str() {
                "user-agent" => {
                    if in_rules {
                        group_agents.clear();
                        in_rules = false;
                    }
                    group_agents.push(value.to_ascii_lowercase());
                }
                "disallow" => {
                    in_rules = true;
                    if !group_agents.iter().any(|a| a == "*") || value.is_empty() {
                        continue;
                    }
                    let literal = value.split('*').next().unwrap_or("").trim_end_matches('$');
                    if literal.is_empty() {
                        continue;
                    }
                    let prefix = if literal.starts_with('/') {
                        literal.to_string()
                    } else {
                        format!("/{literal}")
                    };
                    if !prefixes.contains(&prefix) {
                        prefixes.push(prefix);
                    }
                }
                _ => {
                    if !group_agents.is_empty() {
                        in_rules = true;
                    }
                }
            }
        }
        Self {
            domain: domain.to_ascii_lowercase(),
            disallow_prefixes: prefixes,
            fetched_at: Utc::now(),
        }
    }

    pub fn allows(&self, url: &Url) -> bool {
        let path = match url.query() {
            Some(q) => format!("{}?{}", url.path(), q),
            None => url.path().to_string(),
        };
        !self.disallow_prefixes.iter().any(|p| path.starts_with(p.as_str()))
    }
}

/// `false` iff the URL's path starts with one of the disallowed prefixes.
pub fn is_allowed_by_robots(rules: &RobotsRules, url: &str) -> Result<bool, CrawlError> {
    let parsed = Url::parse(url).map_err(|e| CrawlError::InvalidUrl(format!("{url}: {e}")))?;
    let host = parsed.host_str().ok_or_else(|| CrawlError::InvalidUrl(format!("{url}: no host")))?;
    if !host.eq_ignore_ascii_case(&rules.domain) {
        return Err(CrawlError::HostMismatch {
            url: url.to_string(),
            domain: rules.domain.clone(),
        });
    }
    Ok(rules.allows(&parsed))
}
