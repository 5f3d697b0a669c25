//! Polite per-domain crawling: robots rules, URL filters, link discovery and
//! the breadth-first traversal itself.

mod crawl;
mod fetch;
mod filters;
mod links;
mod robots;

use thiserror::Error;

pub use crawl::{crawl_all, crawl_domain, CrawlStats, CrawledPage, DomainCrawl, DomainOutcome};
pub use fetch::{FetchError, FetchResponse, Fetcher, HttpFetcher, MemoryFetcher, PoliteGate, DEFAULT_USER_AGENT};
pub use filters::{
    apply_url_filters, default_filter_patterns, in_domain, load_filter_patterns, parse_filter_patterns, CrawlPolicy,
    CrawlPolicySpec, DEFAULT_MIN_PAGES_FOR_INCLUSION,
};
pub use links::{contains_year, years_in, find_links, find_pdf_anchors, find_pdf_links, is_annual_report, is_pdf_url, AnnualReportMatcher, Link};
pub use robots::{is_allowed_by_robots, RobotsRules};

#[derive(Debug, Error)]
pub enum CrawlError {
    #[error("invalid url {0}")]
    InvalidUrl(String),
    #[error("url {url} is not on host {domain}")]
    HostMismatch { url: String, domain: String },
    #[error("invalid crawl policy: {0}")]
    InvalidPolicy(String),
    #[error("bad exclusion pattern '{pattern}': {source}")]
    BadPattern {
        pattern: String,
        #[source]
        source: regex::Error,
    },
    #[error("robots.txt unavailable for {host}: {reason}")]
    RobotsUnavailable { host: String, reason: String },
}
