//! Shared test helpers: a static multi-host HTTP server over the fixture sites.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Instant;

use tiny_http::{Header, Response, Server};

pub const LAST_MODIFIED: &str = "Fri, 01 May 2020 10:00:00 GMT";

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

#[derive(Debug, Clone)]
pub struct Hit {
    pub at: Instant,
    pub host: String,
    pub path: String,
    pub status: u16,
}

/// Serves `<root>/<host>/...`, picking the site from the Host header.
///
/// `robots.txt` is served when present and answers 404 otherwise. A
/// `redirects.txt` file holds `from to` pairs answered with 301. Paths ending
/// in `/` map to `index.html`.
pub struct FixtureServer {
    pub addr: SocketAddr,
    server: Arc<Server>,
    log: Arc<Mutex<Vec<Hit>>>,
    handle: Option<JoinHandle<()>>,
}

impl FixtureServer {
    pub fn start(root: &Path) -> Self {
        let server = Arc::new(Server::http("127.0.0.1:0").expect("bind fixture server"));
        let addr = server.server_addr().to_ip().expect("tcp listener");
        let log = Arc::new(Mutex::new(Vec::new()));
        let root = root.to_path_buf();
        let handle = {
            let server = Arc::clone(&server);
            let log = Arc::clone(&log);
            std::thread::spawn(move || {
                for req in server.incoming_requests() {
                    let host = req
                        .headers()
                        .iter()
                        .find(|h| h.field.equiv("Host"))
                        .map(|h| h.value.as_str().split(':').next().unwrap_or("").to_ascii_lowercase())
                        .unwrap_or_default();
                    let path = req.url().split('?').next().unwrap_or("/").to_string();
                    let (status, body, ctype, location) = route(&root.join(&host), &path);
                    log.lock().unwrap().push(Hit {
                        at: Instant::now(),
                        host,
                        path: path.clone(),
                        status,
                    });
                    let mut resp = Response::from_data(body).with_status_code(status);
                    resp.add_header(Header::from_bytes("Content-Type", ctype).unwrap());
                    resp.add_header(Header::from_bytes("Last-Modified", LAST_MODIFIED).unwrap());
                    if let Some(loc) = location {
                        resp.add_header(Header::from_bytes("Location", loc).unwrap());
                    }
                    let _ = req.respond(resp);
                }
            })
        };
        Self {
            addr,
            server,
            log,
            handle: Some(handle),
        }
    }

    pub fn hits(&self) -> Vec<Hit> {
        self.log.lock().unwrap().clone()
    }

    /// `crawl.resolve` entries pointing every host at this server.
    pub fn resolve(&self, hosts: &[&str]) -> BTreeMap<String, String> {
        hosts.iter().map(|h| (h.to_string(), self.addr.to_string())).collect()
    }
}

impl Drop for FixtureServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn route(site: &Path, path: &str) -> (u16, Vec<u8>, &'static str, Option<String>) {
    let not_found = (404, b"not found".to_vec(), "text/plain", None);
    if !site.is_dir() || path.contains("..") {
        return not_found;
    }
    if let Ok(redirects) = fs::read_to_string(site.join("redirects.txt")) {
        for line in redirects.lines() {
            if let Some((from, to)) = line.split_once(' ') {
                if from == path {
                    return (301, Vec::new(), "text/html", Some(to.trim().to_string()));
                }
            }
        }
    }
    let mut rel = path.trim_start_matches('/').to_string();
    if rel.is_empty() || rel.ends_with('/') {
        rel.push_str("index.html");
    }
    if rel == "redirects.txt" {
        return not_found;
    }
    let file = site.join(&rel);
    let ctype = match file.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("pdf") => "application/pdf",
        Some("png") => "image/png",
        _ => "text/plain",
    };
    match fs::read(&file) {
        Ok(body) if file.is_file() => (200, body, ctype, None),
        _ => not_found,
    }
}

pub const FIXTURE_HOSTS: [&str; 3] = ["acme.test", "borealis.test", "cobalt.test"];

/// The fixture pipeline configuration pointed at `server`, writing to `out`.
pub fn e2e_config(server: &FixtureServer, out: &Path) -> prisme_core::pipeline::PipelineConfig {
    let mut cfg = prisme_core::pipeline::PipelineConfig::load(&fixtures().join("e2e/config.toml")).expect("fixture config");
    cfg.crawl.resolve = server.resolve(&FIXTURE_HOSTS);
    cfg.paths.out = out.to_path_buf();
    cfg
}
