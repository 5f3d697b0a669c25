//! Page fetching behind a trait so crawls can run against HTTP, a fixture
//! server or an in-memory site.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::net::{SocketAddr, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;
use url::Url;

pub const DEFAULT_USER_AGENT: &str = concat!("prisme-forge/", env!("CARGO_PKG_VERSION"), " (research corpus crawler)");

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("transport error for {url}: {reason}")]
    Transport { url: String, reason: String },
    #[error("body of {url} exceeds {limit} bytes")]
    TooLarge { url: String, limit: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FetchResponse {
    pub status: u16,
    pub content_type: Option<String>,
    pub last_modified: Option<String>,
    pub location: Option<String>,
    pub body: Vec<u8>,
}

impl FetchResponse {
    pub fn ok_html(body: &str) -> Self {
        Self {
            status: 200,
            content_type: Some("text/html; charset=utf-8".into()),
            body: body.as_bytes().to_vec(),
            ..Default::default()
        }
    }

    pub fn status(status: u16) -> Self {
        Self {
            status,
            ..Default::default()
        }
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    pub fn is_redirect(&self) -> bool {
        (300..400).contains(&self.status)
    }

    pub fn is_html(&self) -> bool {
        match &self.content_type {
            None => true,
            Some(ct) => {
                let ct = ct.to_ascii_lowercase();
                ct.starts_with("text/html") || ct.starts_with("application/xhtml")
            }
        }
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }
}

/// Fetches one URL without following redirects. Non-2xx statuses are
/// returned as responses, not errors. Implementations must tolerate calls
/// from several threads.
pub trait Fetcher: Send + Sync {
    fn fetch(&self, url: &Url) -> Result<FetchResponse, FetchError>;
}

impl<F: Fetcher + ?Sized> Fetcher for Arc<F> {
    fn fetch(&self, url: &Url) -> Result<FetchResponse, FetchError> {
        (**self).fetch(url)
    }
}

impl<F: Fetcher + ?Sized> Fetcher for &F {
    fn fetch(&self, url: &Url) -> Result<FetchResponse, FetchError> {
        (**self).fetch(url)
    }
}

/// Blocking HTTP client. `resolve` pins host names to socket addresses, in
/// the manner of `curl --resolve`.
pub struct HttpFetcher {
    agent: ureq::Agent,
    max_body_bytes: u64,
}

impl HttpFetcher {
    pub fn new(user_agent: &str, timeout: Duration, resolve: BTreeMap<String, SocketAddr>) -> Self {
        let resolve = Arc::new(resolve);
        let agent = ureq::AgentBuilder::new()
            .user_agent(user_agent)
            .timeout(timeout)
            .redirects(0)
            .resolver(move |netloc: &str| -> std::io::Result<Vec<SocketAddr>> {
                let host = netloc.rsplit_once(':').map_or(netloc, |(h, _)| h);
                if let Some(addr) = resolve.get(&host.to_ascii_lowercase()) {
                    return Ok(vec![*addr]);
                }
                netloc.to_socket_addrs().map(Iterator::collect)
            })
            .build();
        Self {
            agent,
            max_body_bytes: 50 * 1024 * 1024,
        }
    }

    pub fn with_max_body(mut self, bytes: u64) -> Self {
        self.max_body_bytes = bytes;
        self
    }
}

impl Default for HttpFetcher {
    fn default() -> Self {
        Self::new(DEFAULT_USER_AGENT, Duration::from_secs(30), BTreeMap::new())
    }
}

impl Fetcher for HttpFetcher {
    fn fetch(&self, url: &Url) -> Result<FetchResponse, FetchError> {
        let transport = |reason: String| FetchError::Transport {
            url: url.to_string(),
            reason,
        };
        let resp = match self.agent.request_url("GET", url).call() {
            Ok(r) => r,
            Err(ureq::Error::Status(_, r)) => r,
            Err(ureq::Error::Transport(t)) => return Err(transport(t.to_string())),
        };
        let status = resp.status();
        let content_type = resp.header("content-type").map(String::from);
        let last_modified = resp.header("last-modified").map(String::from);
        let location = resp.header("location").map(String::from);
        let mut body = Vec::new();
        resp.into_reader()
            .take(self.max_body_bytes + 1)
            .read_to_end(&mut body)
            .map_err(|e| transport(e.to_string()))?;
        if body.len() as u64 > self.max_body_bytes {
            return Err(FetchError::TooLarge {
                url: url.to_string(),
                limit: self.max_body_bytes,
            });
        }
        Ok(FetchResponse {
            status,
            content_type,
            last_modified,
            location,
            body,
        })
    }
}

/// In-memory site: URL → response. Unknown URLs answer 404. Every request is
/// logged with its arrival time.
#[derive(Default)]
pub struct MemoryFetcher {
    pages: HashMap<String, FetchResponse>,
    failures: HashMap<String, String>,
    log: Mutex<Vec<(Instant, String)>>,
}

impl MemoryFetcher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn page(mut self, url: &str, html: &str) -> Self {
        self.pages.insert(url.to_string(), FetchResponse::ok_html(html));
        self
    }

    pub fn response(mut self, url: &str, resp: FetchResponse) -> Self {
        self.pages.insert(url.to_string(), resp);
        self
    }

    /// Makes `url` fail at the transport level.
    pub fn failing(mut self, url: &str, reason: &str) -> Self {
        self.failures.insert(url.to_string(), reason.to_string());
        self
    }

    pub fn requests(&self) -> Vec<String> {
        self.log.lock().expect("log lock").iter().map(|(_, u)| u.clone()).collect()
    }

    pub fn timed_requests(&self) -> Vec<(Instant, String)> {
        self.log.lock().expect("log lock").clone()
    }
}

impl Fetcher for MemoryFetcher {
    fn fetch(&self, url: &Url) -> Result<FetchResponse, FetchError> {
        let key = url.to_string();
        self.log.lock().expect("log lock").push((Instant::now(), key.clone()));
        if let Some(reason) = self.failures.get(&key) {
            return Err(FetchError::Transport {
                url: key,
                reason: reason.clone(),
            });
        }
        Ok(self.pages.get(&key).cloned().unwrap_or_else(|| FetchResponse::status(404)))
    }
}

/// Serializes requests per key (host or registrable domain). A request starts
/// at least `delay` after the previous one for the same key finished.
pub struct PoliteGate {
    delay: Duration,
    slots: Mutex<HashMap<String, Arc<Mutex<Option<Instant>>>>>,
}

impl PoliteGate {
    pub fn new(delay: Duration) -> Self {
        Self {
            delay,
            slots: Mutex::new(HashMap::new()),
        }
    }

    /// Runs `f` once the key's previous request finished at least `delay` ago.
    pub fn run<T>(&self, key: &str, f: impl FnOnce() -> T) -> T {
        let slot = {
            let mut slots = self.slots.lock().expect("gate lock");
            Arc::clone(slots.entry(key.to_ascii_lowercase()).or_default())
        };
        let mut last = slot.lock().expect("slot lock");
        if let Some(prev) = *last {
            let ready = prev + self.delay;
            let now = Instant::now();
            if ready > now {
                thread::sleep(ready - now);
            }
        }
        let out = f();
        *last = Some(Instant::now());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memory_fetcher_serves_and_logs() {
        let f = MemoryFetcher::new()
            .page("https://a.com/", "<p>hi</p>")
            .failing("https://a.com/down", "reset");
        let ok = f.fetch(&Url::parse("https://a.com/").unwrap()).unwrap();
        assert!(ok.is_success() && ok.is_html());
        assert_eq!(f.fetch(&Url::parse("https://a.com/x").unwrap()).unwrap().status, 404);
        assert!(f.fetch(&Url::parse("https://a.com/down").unwrap()).is_err());
        assert_eq!(f.requests().len(), 3);
    }

    #[test]
    fn gate_spaces_requests_per_key() {
        let gate = Arc::new(PoliteGate::new(Duration::from_millis(40)));
        let times = Arc::new(Mutex::new(Vec::new()));
        thread::scope(|s| {
            for _ in 0..3 {
                let gate = Arc::clone(&gate);
                let times = Arc::clone(&times);
                s.spawn(move || gate.run("a.com", || times.lock().unwrap().push(Instant::now())));
            }
        });
        let mut t = times.lock().unwrap().clone();
        t.sort();
        for w in t.windows(2) {
            assert!(w[1] - w[0] >= Duration::from_millis(39));
        }
    }

    #[test]
    fn content_type_sniffing() {
        assert!(FetchResponse::status(200).is_html());
        let pdf = FetchResponse {
            status: 200,
            content_type: Some("application/pdf".into()),
            ..Default::default()
        };
        assert!(!pdf.is_html());
    }
}
