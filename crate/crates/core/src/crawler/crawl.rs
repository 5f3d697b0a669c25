use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tracing::{debug, info, warn};
use url::Url;

use super::fetch::{FetchResponse, Fetcher};
use super::filters::CrawlPolicy;
use super::links::find_links;
use super::robots::RobotsRules;
use super::CrawlError;
use crate::registry::CompanyEntry;

const NON_HTML_EXTENSIONS: &[&str] = &[
    "pdf", "doc", "docx", "rtf", "odt", "xls", "xlsx", "ppt", "pptx", "csv", "zip", "gz", "tgz", "rar", "7z", "tar",
    "jpg", "jpeg", "png", "gif", "svg", "webp", "bmp", "ico", "tif", "tiff", "mp3", "mp4", "avi", "mov", "wmv", "webm",
    "css", "js", "json", "xml", "rss", "woff", "woff2", "ttf", "eot", "exe", "dmg", "apk",
];

/// One successfully fetched HTML page.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrawledPage {
    pub url: String,
    pub status: u16,
    pub depth: usize,
    pub last_modified: Option<String>,
    pub html: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrawlStats {
    /// Content requests issued (robots files excluded).
    pub fetched: usize,
    /// HTML pages returned with a 2xx status.
    pub accessible: usize,
    /// Transport errors and non-2xx, non-redirect responses.
    pub failed: usize,
    pub redirects: usize,
    pub non_html: usize,
    pub blocked_by_robots: usize,
    pub robots_requests: usize,
}

/// Breadth-first crawl of one company domain, yielding pages in fetch order.
pub struct DomainCrawl<'a, F: Fetcher + ?Sized> {
    domain: String,
    policy: &'a CrawlPolicy,
    fetcher: &'a F,
    queue: VecDeque<(Url, usize)>,
    seen: HashSet<String>,
    robots: HashMap<String, Option<RobotsRules>>,
    last_request: Option<Instant>,
    stats: CrawlStats,
}

/// Starts a crawl of `entry.domain`. The seed host's robots.txt is fetched
/// before this returns; if it is unavailable for any reason other than a
/// 404/410 the domain is skipped with [`CrawlError::RobotsUnavailable`].
pub fn crawl_domain<'a, F: Fetcher + ?Sized>(
    entry: &CompanyEntry,
    policy: &'a CrawlPolicy,
    fetcher: &'a F,
) -> Result<DomainCrawl<'a, F>, CrawlError> {
    let seed_str = format!("{}://{}/", policy.seed_scheme, entry.domain);
    let seed = Url::parse(&seed_str).map_err(|e| CrawlError::InvalidUrl(format!("{seed_str}: {e}")))?;
    let mut crawl = DomainCrawl {
        domain: entry.domain.clone(),
        policy,
        fetcher,
        queue: VecDeque::new(),
        seen: HashSet::new(),
        robots: HashMap::new(),
        last_request: None,
        stats: CrawlStats::default(),
    };
    let host = seed.host_str().unwrap_or_default().to_string();
    if let Err(reason) = crawl.load_robots(&seed) {
        return Err(CrawlError::RobotsUnavailable { host, reason });
    }
    crawl.enqueue(seed, 0);
    Ok(crawl)
}

impl<'a, F: Fetcher + ?Sized> DomainCrawl<'a, F> {
    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn stats(&self) -> &CrawlStats {
        &self.stats
    }

    /// Drains the crawl, returning every page and the final counters.
    pub fn collect_all(mut self) -> (Vec<CrawledPage>, CrawlStats) {
        let pages: Vec<_> = self.by_ref().collect();
        (pages, self.stats)
    }

    fn wait_turn(&self) {
        if let Some(prev) = self.last_request {
            let ready = prev + self.policy.per_domain_delay;
            let now = Instant::now();
            if ready > now {
                thread::sleep(ready - now);
            }
        }
    }

    /// Waits out the delay counted from the end of the previous request.
    fn request(&mut self, url: &Url) -> Result<FetchResponse, String> {
        self.wait_turn();
        let out = self.fetcher.fetch(url).map_err(|e| e.to_string());
        self.last_request = Some(Instant::now());
        out
    }

    fn host_key(url: &Url) -> String {
        match url.port() {
            Some(p) => format!("{}:{p}", url.host_str().unwrap_or_default()),
            None => url.host_str().unwrap_or_default().to_string(),
        }
    }

    fn load_robots(&mut self, any_url: &Url) -> Result<(), String> {
        let key = Self::host_key(any_url);
        if self.robots.contains_key(&key) {
            return Ok(());
        }
        let robots_url = any_url.join("/robots.txt").map_err(|e| e.to_string())?;
        self.stats.robots_requests += 1;
        let outcome = match self.request(&robots_url) {
            Ok(resp) if resp.is_success() => Ok(Some(RobotsRules::parse(
                any_url.host_str().unwrap_or_default(),
                &resp.text(),
            ))),
            Ok(resp) if resp.status == 404 || resp.status == 410 => {
                Ok(Some(RobotsRules::allow_all(any_url.host_str().unwrap_or_default())))
            }
            Ok(resp) => Err(format!("status {}", resp.status)),
            Err(e) => Err(e),
        };
        match outcome {
            Ok(rules) => {
                self.robots.insert(key, rules);
                Ok(())
            }
            Err(reason) => {
                warn!(host = %key, %reason, "robots.txt unavailable");
                self.robots.insert(key, None);
                Err(reason)
            }
        }
    }

    fn enqueue(&mut self, mut url: Url, depth: usize) {
        url.set_fragment(None);
        let key = url.to_string();
        if self.seen.contains(&key) {
            return;
        }
        if !self.policy.accepts(&key, &self.domain) || has_non_html_extension(&url) {
            self.seen.insert(key);
            return;
        }
        self.seen.insert(key);
        self.queue.push_back((url, depth));
    }

    fn allowed(&mut self, url: &Url) -> bool {
        let key = Self::host_key(url);
        if !self.robots.contains_key(&key) {
            let _ = self.load_robots(url);
        }
        match self.robots.get(&key) {
            Some(Some(rules)) => rules.allows(url),
            _ => false,
        }
    }
}

impl<F: Fetcher + ?Sized> Iterator for DomainCrawl<'_, F> {
    type Item = CrawledPage;

    fn next(&mut self) -> Option<CrawledPage> {
        while self.stats.fetched < self.policy.max_pages_per_domain {
            let (url, depth) = self.queue.pop_front()?;
            if !self.allowed(&url) {
                self.stats.blocked_by_robots += 1;
                debug!(%url, "blocked by robots");
                continue;
            }
            self.stats.fetched += 1;
            let resp = match self.request(&url) {
                Ok(r) => r,
                Err(reason) => {
                    self.stats.failed += 1;
                    warn!(%url, %reason, "fetch failed");
                    continue;
                }
            };
            if resp.is_redirect() {
                self.stats.redirects += 1;
                if let Some(target) = resp.location.as_deref().and_then(|l| url.join(l).ok()) {
                    self.enqueue(target, depth);
                }
                continue;
            }
            if !resp.is_success() {
                self.stats.failed += 1;
                debug!(%url, status = resp.status, "non-success status");
                continue;
            }
            if !resp.is_html() {
                self.stats.non_html += 1;
                continue;
            }
            self.stats.accessible += 1;
            let html = resp.text();
            for link in find_links(&html, url.as_str()) {
                if let Ok(u) = Url::parse(&link.url) {
                    self.enqueue(u, depth + 1);
                }
            }
            return Some(CrawledPage {
                url: url.to_string(),
                status: resp.status,
                depth,
                last_modified: resp.last_modified,
                html,
            });
        }
        None
    }
}

fn has_non_html_extension(url: &Url) -> bool {
    let last = url.path_segments().and_then(|mut s| s.next_back()).unwrap_or("");
    match last.rsplit_once('.') {
        Some((_, ext)) => NON_HTML_EXTENSIONS.contains(&ext.to_ascii_lowercase().as_str()),
        None => false,
    }
}

/// Result of crawling one registry entry.
#[derive(Debug, Clone)]
pub struct DomainOutcome {
    pub entry: CompanyEntry,
    pub stats: CrawlStats,
    /// Set when the domain was skipped before any content request.
    pub skipped: Option<String>,
}

/// Crawls every entry with up to `workers` domains in flight. Each page is
/// handed to `sink` as soon as it is fetched; pages of one domain arrive in
/// fetch order. Outcomes are returned in registry order.
pub fn crawl_all<F, S>(
    entries: &[CompanyEntry],
    policy: &CrawlPolicy,
    fetcher: &F,
    workers: usize,
    sink: S,
) -> Vec<DomainOutcome>
where
    F: Fetcher + ?Sized,
    S: Fn(&CompanyEntry, CrawledPage) + Sync,
{
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<DomainOutcome>>> = Mutex::new(vec![None; entries.len()]);
    thread::scope(|s| {
        for _ in 0..workers.clamp(1, entries.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(entry) = entries.get(i) else { break };
                let outcome = match crawl_domain(entry, policy, fetcher) {
                    Ok(mut crawl) => {
                        for page in crawl.by_ref() {
                            sink(entry, page);
                        }
                        info!(domain = %entry.domain, accessible = crawl.stats.accessible, "domain crawled");
                        DomainOutcome {
                            entry: entry.clone(),
                            stats: crawl.stats.clone(),
                            skipped: None,
                        }
                    }
                    Err(e) => {
                        warn!(domain = %entry.domain, error = %e, "domain skipped");
                        DomainOutcome {
                            entry: entry.clone(),
                            stats: CrawlStats {
                                robots_requests: 1,
                                ..Default::default()
                            },
                            skipped: Some(e.to_string()),
                        }
                    }
                };
                results.lock().expect("results lock")[i] = Some(outcome);
            });
        }
    });
    results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|o| o.expect("every entry crawled"))
        .collect()
}
