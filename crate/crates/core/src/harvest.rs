//! Annual-report harvesting: search queries, candidate URL filters, year and
//! length filters, per company-year deduplication and the download/convert
//! loop writing the report manifest.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, SystemTime};

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};
use url::Url;

use crate::crawler::{years_in, Fetcher, PoliteGate, RobotsRules};
use crate::extractor::{normalize_text, tokenize};
use crate::registry::CompanyEntry;
use crate::store::csv_writer;
use crate::util::{fnv1a64, write_atomic};

pub const DEFAULT_MIN_YEAR: u32 = 2017;
pub const DEFAULT_MIN_TOKENS: usize = 1000;
pub const YEAR_RANGE: (u32, u32) = (1990, 2035);

pub const MANIFEST_HEADER: [&str; 8] = [
    "company",
    "domain",
    "url",
    "year",
    "token_count",
    "status",
    "reason",
    "local_path",
];

pub const DEFAULT_BLOCKED_HOSTS: &[&str] = &[
    "facebook.com",
    "fb.com",
    "twitter.com",
    "x.com",
    "linkedin.com",
    "instagram.com",
    "youtube.com",
    "youtu.be",
    "tiktok.com",
    "pinterest.com",
    "reddit.com",
    "tumblr.com",
    "weibo.com",
    "vk.com",
    "amazon.com",
    "ebay.com",
    "alibaba.com",
    "aliexpress.com",
    "etsy.com",
    "netflix.com",
    "spotify.com",
    "twitch.tv",
    "vimeo.com",
    "dailymotion.com",
    "imdb.com",
];

#[derive(Debug, Error)]
pub enum HarvestError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("search backend failed: {0}")]
    Search(String),
    #[error("manifest row {row}: {reason}")]
    BadRow { row: usize, reason: String },
}

/// `<COMPANY> intext:"Annual Report" AND inurl:<domain>`
pub fn build_search_query(company: &str, domain: &str) -> String {
    format!("{company} intext:\"Annual Report\" AND inurl:{domain}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Format,
    Host,
    Year,
    TooShort,
    Duplicate,
    Robots,
    Download,
    NoText,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Format => "format",
            Self::Host => "host",
            Self::Year => "year",
            Self::TooShort => "too_short",
            Self::Duplicate => "duplicate",
            Self::Robots => "robots",
            Self::Download => "download",
            Self::NoText => "no_text",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RejectReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "format" => Self::Format,
            "host" => Self::Host,
            "year" => Self::Year,
            "too_short" => Self::TooShort,
            "duplicate" => Self::Duplicate,
            "robots" => Self::Robots,
            "download" => Self::Download,
            "no_text" => Self::NoText,
            other => return Err(format!("unknown reason '{other}'")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateDecision {
    Accept,
    Reject(RejectReason),
}

/// Hosts whose URLs are never treated as report candidates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostBlocklist {
    hosts: Vec<String>,
}

impl HostBlocklist {
    pub fn new<S: AsRef<str>>(hosts: &[S]) -> Self {
        Self {
            hosts: hosts.iter().map(|h| h.as_ref().trim().to_ascii_lowercase()).collect(),
        }
    }

    pub fn blocks(&self, host: &str) -> bool {
        let host = host.trim_end_matches('.').to_ascii_lowercase();
        self.hosts
            .iter()
            .any(|b| host == *b || host.ends_with(&format!(".{b}")))
    }
}

impl Default for HostBlocklist {
    fn default() -> Self {
        Self::new(DEFAULT_BLOCKED_HOSTS)
    }
}

pub fn filter_candidate_url(url: &str) -> CandidateDecision {
    filter_candidate_url_with(url, &HostBlocklist::default())
}

/// Rejects word-processing and other non-PDF targets (`format`), then URLs
/// on blocked hosts (`host`).
pub fn filter_candidate_url_with(url: &str, blocklist: &HostBlocklist) -> CandidateDecision {
    let Ok(parsed) = Url::parse(url) else {
        return CandidateDecision::Reject(RejectReason::Format);
    };
    let path = parsed.path().to_ascii_lowercase();
    if !path.ends_with(".pdf") {
        return CandidateDecision::Reject(RejectReason::Format);
    }
    if parsed.host_str().is_some_and(|h| blocklist.blocks(h)) {
        return CandidateDecision::Reject(RejectReason::Host);
    }
    CandidateDecision::Accept
}

fn in_year_range(y: u32) -> bool {
    (YEAR_RANGE.0..=YEAR_RANGE.1).contains(&y)
}

/// Largest plausible year in the file name, else the most frequent one in
/// the first-page text (ties → the later year).
pub fn extract_report_year(filename: &str, first_page_text: &str) -> Option<u32> {
    if let Some(y) = years_in(filename).filter(|y| in_year_range(*y)).max() {
        return Some(y);
    }
    let mut freq: BTreeMap<u32, usize> = BTreeMap::new();
    for y in years_in(first_page_text).filter(|y| in_year_range(*y)) {
        *freq.entry(y).or_insert(0) += 1;
    }
    freq.into_iter().max_by_key(|&(y, c)| (c, y)).map(|(y, _)| y)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum ReportStatus {
    #[default]
    Pending,
    Accepted,
    Rejected(RejectReason),
}

impl ReportStatus {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Pending => "pending",
            Self::Accepted => "accepted",
            Self::Rejected(_) => "rejected",
        }
    }

    pub fn reason(&self) -> Option<RejectReason> {
        match self {
            Self::Rejected(r) => Some(*r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ReportDoc {
    pub company: String,
    pub domain: String,
    pub url: String,
    pub local_path: String,
    pub year: Option<u32>,
    pub token_count: usize,
    pub published_date: Option<NaiveDate>,
    pub status: ReportStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReportThresholds {
    pub min_year: u32,
    pub min_tokens: usize,
}

impl Default for ReportThresholds {
    fn default() -> Self {
        Self {
            min_year: DEFAULT_MIN_YEAR,
            min_tokens: DEFAULT_MIN_TOKENS,
        }
    }
}

pub fn apply_report_filters(doc: ReportDoc) -> ReportDoc {
    apply_report_filters_with(doc, ReportThresholds::default())
}

/// Year first (unknown years fail), then length; both bounds inclusive.
pub fn apply_report_filters_with(mut doc: ReportDoc, t: ReportThresholds) -> ReportDoc {
    doc.status = match doc.year {
        None => ReportStatus::Rejected(RejectReason::Year),
        Some(y) if y < t.min_year => ReportStatus::Rejected(RejectReason::Year),
        _ if doc.token_count < t.min_tokens => ReportStatus::Rejected(RejectReason::TooShort),
        _ => ReportStatus::Accepted,
    };
    doc
}

/// One report per (company, year): the latest `published_date` wins (an
/// unknown date counts as oldest), ties go to the smallest URL. Output is
/// sorted by (company, year).
pub fn dedupe_reports(docs: Vec<ReportDoc>) -> Vec<ReportDoc> {
    dedupe_reports_split(docs).0
}

/// Like [`dedupe_reports`], also returning the losers.
pub fn dedupe_reports_split(docs: Vec<ReportDoc>) -> (Vec<ReportDoc>, Vec<ReportDoc>) {
    let mut best: BTreeMap<(String, Option<u32>), ReportDoc> = BTreeMap::new();
    let mut losers = Vec::new();
    for d in docs {
        let key = (d.company.clone(), d.year);
        match best.get_mut(&key) {
            None => {
                best.insert(key, d);
            }
            Some(cur) => {
                let better = d.published_date > cur.published_date
                    || (d.published_date == cur.published_date && d.url < cur.url);
                if better {
                    losers.push(std::mem::replace(cur, d));
                } else {
                    losers.push(d);
                }
            }
        }
    }
    (best.into_values().collect(), losers)
}

/// Finds candidate report URLs for a company.
pub trait SearchBackend: Send + Sync {
    fn search(&self, entry: &CompanyEntry, query: &str) -> Result<Vec<String>, HarvestError>;
}

/// Reads prepared `company,url` rows; company matched by name or domain.
#[derive(Debug, Clone, Default)]
pub struct OfflineBackend {
    urls: Vec<(String, String)>,
}

impl OfflineBackend {
    pub fn parse(text: &str) -> Result<Self, HarvestError> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header: Vec<String> = rd.headers()?.iter().map(|h| h.to_ascii_lowercase()).collect();
        if header != ["company", "url"] {
            return Err(HarvestError::BadRow {
                row: 1,
                reason: format!("expected header company,url, got {header:?}"),
            });
        }
        let mut urls = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            urls.push((rec.get(0).unwrap_or("").to_string(), rec.get(1).unwrap_or("").to_string()));
        }
        Ok(Self { urls })
    }

    pub fn load(path: &Path) -> Result<Self, HarvestError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Builds the backend from `(company or domain, url)` pairs.
    pub fn from_pairs(urls: Vec<(String, String)>) -> Self {
        Self { urls }
    }
}

impl SearchBackend for OfflineBackend {
    fn search(&self, entry: &CompanyEntry, _query: &str) -> Result<Vec<String>, HarvestError> {
        Ok(self
            .urls
            .iter()
            .filter(|(c, _)| c.eq_ignore_ascii_case(&entry.name) || c.eq_ignore_ascii_case(&entry.domain))
            .map(|(_, u)| u.clone())
            .collect())
    }
}

/// Generic JSON search API: `endpoint` holds a `{query}` placeholder and the
/// response lists hits as `items[].link`.
pub struct HttpSearchBackend<F: Fetcher> {
    pub endpoint: String,
    pub fetcher: F,
}

impl<F: Fetcher> SearchBackend for HttpSearchBackend<F> {
    fn search(&self, _entry: &CompanyEntry, query: &str) -> Result<Vec<String>, HarvestError> {
        let encoded: String = url::form_urlencoded::byte_serialize(query.as_bytes()).collect();
        let raw = self.endpoint.replace("{query}", &encoded);
        let url = Url::parse(&raw).map_err(|e| HarvestError::Search(format!("{raw}: {e}")))?;
        let resp = self.fetcher.fetch(&url).map_err(|e| HarvestError::Search(e.to_string()))?;
        if !resp.is_success() {
            return Err(HarvestError::Search(format!("status {}", resp.status)));
        }
        parse_search_items(&resp.body)
    }
}

pub fn parse_search_items(body: &[u8]) -> Result<Vec<String>, HarvestError> {
    let v: serde_json::Value = serde_json::from_slice(body).map_err(|e| HarvestError::Search(e.to_string()))?;
    Ok(v.get("items")
        .and_then(|i| i.as_array())
        .map(|items| {
            items
                .iter()
                .filter_map(|it| it.get("link").and_then(|l| l.as_str()).map(String::from))
                .collect()
        })
        .unwrap_or_default())
}

/// How report text is obtained from a downloaded PDF: a `.txt` file next to
/// the source, or an external converter run with `{pdf}` and `{txt}`
/// substituted into its arguments.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TextConverter {
    pub command: Vec<String>,
}

impl TextConverter {
    pub fn convert(&self, pdf: &Path, txt: &Path) -> Result<String, String> {
        let Some((prog, args)) = self.command.split_first() else {
            return Err("no converter configured and no .txt sidecar".into());
        };
        let sub = |s: &str| {
            s.replace("{pdf}", &pdf.display().to_string())
                .replace("{txt}", &txt.display().to_string())
        };
        let status = Command::new(sub(prog))
            .args(args.iter().map(|a| sub(a)))
            .status()
            .map_err(|e| format!("cannot run {prog}: {e}"))?;
        if !status.success() {
            return Err(format!("{prog} exited with {status}"));
        }
        fs::read_to_string(txt).map_err(|e| format!("{}: {e}", txt.display()))
    }
}

#[derive(Debug, Clone)]
pub struct HarvestOptions {
    pub thresholds: ReportThresholds,
    pub blocklist: HostBlocklist,
    pub converter: TextConverter,
    pub per_host_delay: Duration,
    pub workers: usize,
    pub respect_robots: bool,
}

impl Default for HarvestOptions {
    fn default() -> Self {
        Self {
            thresholds: ReportThresholds::default(),
            blocklist: HostBlocklist::default(),
            converter: TextConverter::default(),
            per_host_delay: Duration::from_millis(1000),
            workers: 4,
            respect_robots: true,
        }
    }
}

/// Text before the first form feed, or the first 3000 characters.
fn first_page(text: &str) -> &str {
    match text.find('\x0c') {
        Some(i) => &text[..i],
        None => match text.char_indices().nth(3000) {
            Some((i, _)) => &text[..i],
            None => text,
        },
    }
}

fn http_date(value: &str) -> Option<NaiveDate> {
    httpdate::parse_http_date(value)
        .ok()
        .map(|t| DateTime::<Utc>::from(t).date_naive())
}

fn mtime_date(path: &Path) -> Option<NaiveDate> {
    let t: SystemTime = fs::metadata(path).ok()?.modified().ok()?;
    Some(DateTime::<Utc>::from(t).date_naive())
}

struct Downloader<'a, F: Fetcher + ?Sized> {
    fetcher: &'a F,
    gate: PoliteGate,
    robots: Mutex<HashMap<String, Option<RobotsRules>>>,
    respect_robots: bool,
}

impl<F: Fetcher + ?Sized> Downloader<'_, F> {
    fn host_key(url: &Url) -> String {
        format!("{}:{}", url.host_str().unwrap_or_default(), url.port_or_known_default().unwrap_or(0))
    }

    fn allowed(&self, url: &Url) -> bool {
        if !self.respect_robots {
            return true;
        }
        let key = Self::host_key(url);
        if let Some(r) = self.robots.lock().expect("robots lock").get(&key) {
            return r.as_ref().is_some_and(|r| r.allows(url));
        }
        let rules = url.join("/robots.txt").ok().and_then(|robots_url| {
            match self.gate.run(&key, || self.fetcher.fetch(&robots_url)) {
                Ok(r) if r.is_success() => Some(RobotsRules::parse(url.host_str().unwrap_or_default(), &r.text())),
                Ok(r) if r.status == 404 || r.status == 410 => {
                    Some(RobotsRules::allow_all(url.host_str().unwrap_or_default()))
                }
                _ => None,
            }
        });
        let ok = rules.as_ref().is_some_and(|r| r.allows(url));
        self.robots.lock().expect("robots lock").insert(key, rules);
        ok
    }

    /// Copies the document to `dest`, returning its Last-Modified date.
    fn download(&self, url: &Url, dest: &Path) -> Result<Option<NaiveDate>, RejectReason> {
        if url.scheme() == "file" {
            let src = url.to_file_path().map_err(|_| RejectReason::Download)?;
            fs::copy(&src, dest).map_err(|_| RejectReason::Download)?;
            return Ok(mtime_date(&src));
        }
        if !self.allowed(url) {
            return Err(RejectReason::Robots);
        }
        let resp = self
            .gate
            .run(&Self::host_key(url), || self.fetcher.fetch(url))
            .map_err(|e| {
                warn!(%url, error = %e, "report download failed");
                RejectReason::Download
            })?;
        if !resp.is_success() {
            debug!(%url, status = resp.status, "report download refused");
            return Err(RejectReason::Download);
        }
        write_atomic(dest, |w| w.write_all(&resp.body)).map_err(|_| RejectReason::Download)?;
        Ok(resp.last_modified.as_deref().and_then(http_date))
    }
}

fn sidecar_text(url: &Url) -> Option<String> {
    if url.scheme() != "file" {
        return None;
    }
    let p = url.to_file_path().ok()?;
    fs::read_to_string(p.with_extension("txt")).ok()
}

/// Runs search, candidate filtering, download, conversion and the report
/// filters for every company, then deduplicates. Returns every candidate
/// (accepted or rejected) sorted by (company, year, url). PDFs land under
/// `out_dir/pdfs/<domain>/`.
pub fn harvest<B, F>(
    entries: &[CompanyEntry],
    backend: &B,
    fetcher: &F,
    opts: &HarvestOptions,
    out_dir: &Path,
) -> Result<Vec<ReportDoc>, HarvestError>
where
    B: SearchBackend + ?Sized,
    F: Fetcher + ?Sized,
{
    let dl = Downloader {
        fetcher,
        gate: PoliteGate::new(opts.per_host_delay),
        robots: Mutex::new(HashMap::new()),
        respect_robots: opts.respect_robots,
    };
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<ReportDoc>> = Mutex::new(Vec::new());
    let first_err: Mutex<Option<HarvestError>> = Mutex::new(None);
    thread::scope(|s| {
        for _ in 0..opts.workers.clamp(1, entries.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(entry) = entries.get(i) else { break };
                match harvest_company(entry, backend, &dl, opts, out_dir) {
                    Ok(docs) => results.lock().expect("results lock").extend(docs),
                    Err(e) => {
                        first_err.lock().expect("error lock").get_or_insert(e);
                    }
                }
            });
        }
    });
    if let Some(e) = first_err.into_inner().expect("error lock") {
        return Err(e);
    }
    let all = results.into_inner().expect("results lock");
    let (accepted, mut rest): (Vec<_>, Vec<_>) = all.into_iter().partition(|d| d.status == ReportStatus::Accepted);
    let (kept, mut dupes) = dedupe_reports_split(accepted);
    for d in &mut dupes {
        d.status = ReportStatus::Rejected(RejectReason::Duplicate);
    }
    rest.extend(kept);
    rest.extend(dupes);
    rest.sort_by(|a, b| (&a.company, a.year, &a.url).cmp(&(&b.company, b.year, &b.url)));
    Ok(rest)
}

fn harvest_company<B, F>(
    entry: &CompanyEntry,
    backend: &B,
    dl: &Downloader<'_, F>,
    opts: &HarvestOptions,
    out_dir: &Path,
) -> Result<Vec<ReportDoc>, HarvestError>
where
    B: SearchBackend + ?Sized,
    F: Fetcher + ?Sized,
{
    let query = build_search_query(&entry.name, &entry.domain);
    let mut urls = backend.search(entry, &query)?;
    let mut seen = std::collections::HashSet::new();
    urls.retain(|u| seen.insert(u.clone()));
    let pdf_dir = out_dir.join("pdfs").join(&entry.domain);
    let mut out = Vec::new();
    for raw in urls {
        let mut doc = ReportDoc {
            company: entry.name.clone(),
            domain: entry.domain.clone(),
            url: raw.clone(),
            ..Default::default()
        };
        let decision = if raw.starts_with("file:") {
            filter_file_candidate(&raw)
        } else {
            filter_candidate_url_with(&raw, &opts.blocklist)
        };
        if let CandidateDecision::Reject(r) = decision {
            doc.status = ReportStatus::Rejected(r);
            out.push(doc);
            continue;
        }
        let url = Url::parse(&raw).expect("accepted candidates parse");
        fs::create_dir_all(&pdf_dir)?;
        let rel = format!("pdfs/{}/{:016x}.pdf", entry.domain, fnv1a64(raw.as_bytes()));
        let dest = out_dir.join(&rel);
        doc.local_path = rel;
        match dl.download(&url, &dest) {
            Err(r) => {
                doc.status = ReportStatus::Rejected(r);
                doc.local_path.clear();
                out.push(doc);
                continue;
            }
            Ok(date) => doc.published_date = date,
        }
        let text = match sidecar_text(&url) {
            Some(t) => Ok(t),
            None => opts.converter.convert(&dest, &dest.with_extension("txt")),
        };
        let text = match text {
            Ok(t) => t,
            Err(reason) => {
                warn!(url = %raw, %reason, "no text for report");
                doc.status = ReportStatus::Rejected(RejectReason::NoText);
                out.push(doc);
                continue;
            }
        };
        if !dest.with_extension("txt").exists() {
            write_atomic(&dest.with_extension("txt"), |w| w.write_all(text.as_bytes()))?;
        }
        let filename = url.path_segments().and_then(|mut s| s.next_back()).unwrap_or("");
        doc.year = extract_report_year(filename, first_page(&text));
        doc.token_count = tokenize(&normalize_text(&text)).len();
        out.push(apply_report_filters_with(doc, opts.thresholds));
    }
    Ok(out)
}

fn filter_file_candidate(raw: &str) -> CandidateDecision {
    match Url::parse(raw) {
        Ok(u) if u.path().to_ascii_lowercase().ends_with(".pdf") => CandidateDecision::Accept,
        _ => CandidateDecision::Reject(RejectReason::Format),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ManifestRow {
    company: String,
    domain: String,
    url: String,
    year: Option<u32>,
    token_count: usize,
    status: String,
    reason: String,
    local_path: String,
}

pub fn write_manifest(docs: &[ReportDoc], path: &Path) -> Result<(), HarvestError> {
    write_atomic(path, |w| {
        let mut wr = csv_writer(w);
        wr.write_record(MANIFEST_HEADER)?;
        for d in docs {
            wr.serialize(ManifestRow {
                company: d.company.clone(),
                domain: d.domain.clone(),
                url: d.url.clone(),
                year: d.year,
                token_count: d.token_count,
                status: d.status.label().to_string(),
                reason: d.status.reason().map(|r| r.to_string()).unwrap_or_default(),
                local_path: d.local_path.clone(),
            })?;
        }
        wr.flush()
    })?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ReportDoc>, HarvestError> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in rd.deserialize::<ManifestRow>().enumerate() {
        let row = row?;
        let bad = |reason: String| HarvestError::BadRow { row: i + 2, reason };
        let status = match row.status.as_str() {
            "accepted" => ReportStatus::Accepted,
            "pending" => ReportStatus::Pending,
            "rejected" => ReportStatus::Rejected(row.reason.parse().map_err(bad)?),
            other => return Err(bad(format!("unknown status '{other}'"))),
        };
        out.push(ReportDoc {
            company: row.company,
            domain: row.domain,
            url: row.url,
            local_path: row.local_path,
            year: row.year,
            token_count: row.token_count,
            published_date: None,
            status,
        });
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct CandidateRow {
    company: String,
    domain: String,
    url: String,
    year: Option<u32>,
    token_count: usize,
    published_date: Option<NaiveDate>,
}

/// Reads pre-measured candidates: `company,domain,url,year,token_count,published_date`.
pub fn read_candidates(path: &Path) -> Result<Vec<ReportDoc>, HarvestError> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in rd.deserialize::<CandidateRow>() {
        let row = row?;
        out.push(ReportDoc {
            company: row.company,
            domain: row.domain,
            url: row.url,
            year: row.year,
            token_count: row.token_count,
            published_date: row.published_date,
            ..Default::default()
        });
    }
    Ok(out)
}

/// Filters then deduplicates pre-measured candidates; the accepted set.
pub fn select_reports(candidates: Vec<ReportDoc>, t: ReportThresholds) -> Vec<ReportDoc> {
    let accepted = candidates
        .into_iter()
        .map(|d| apply_report_filters_with(d, t))
        .filter(|d| d.status == ReportStatus::Accepted)
        .collect();
    dedupe_reports(accepted)
}

pub fn local_path(out_dir: &Path, doc: &ReportDoc) -> Option<PathBuf> {
    (!doc.local_path.is_empty()).then(|| out_dir.join(&doc.local_path))
}
