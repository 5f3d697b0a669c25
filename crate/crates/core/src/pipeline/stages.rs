use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use tracing::{info, warn};

use super::manifest::{StageReport, StageWork};
use super::{InputSpec, Pipeline, PipelineError, RunOptions, Stage};
use crate::crawler::{
    crawl_all, default_filter_patterns, find_pdf_anchors, load_filter_patterns, AnnualReportMatcher, CrawlPolicy,
    CrawlPolicySpec, DomainOutcome, HttpFetcher,
};
use crate::dataset::{annotate, build_examples, emit_dataset, term_key, Anonymizer, CategoryLexicon, DatasetRow};
use crate::extractor::{extract_visible_text, normalize_text_with, normalize_whitespace, tokenize, detect_lang_attr};
use crate::harvest::{
    harvest, read_manifest, write_manifest, HarvestOptions, HostBlocklist, HttpSearchBackend, OfflineBackend,
    ReportStatus, ReportThresholds, SearchBackend, TextConverter,
};
use crate::langid::{validate, LanguageDetector, UNDETERMINED};
use crate::registry::{load_registry, CompanyEntry, SectorList};
use crate::store::{
    aggregate_results_to_csv, contains_any, count_occurrences, csv_writer, deduplicate_records, expand_variants,
    export_plain_text, extract_context_snippets, snippet_hash, KeywordLexicon, SnippetRecord, VariantTable,
};
use crate::termlab::{
    company_name_tokens, compute_tfidf, default_stopwords, filter_ngrams, frequency_threshold, intersect_sectors,
    load_stopwords, quantile_candidates, remove_stopwords, top_terms, DocumentNgrams, NgramStat, TargetWordSet,
    TermWeight,
};
use crate::util::{bytes_digest, fnv1a64, write_atomic};

pub const CORPUS_STATS_HEADER: [&str; 4] = ["Language", "URL count", "Sectors covered", "Token count"];

fn runtime(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Runtime(e.to_string())
}

fn invalid(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Validation(e.to_string())
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), PipelineError> {
    write_atomic(path, |w| {
        let mut wr = csv_writer(w);
        wr.write_record(header)?;
        for r in rows {
            wr.serialize(r)?;
        }
        wr.flush()
    })?;
    Ok(())
}

fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    rd.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn doc_id(url: &str) -> String {
    format!("{:016x}", fnv1a64(url.as_bytes()))
}

/// The `date_seen` value: the configured date, else the UTC date of
/// `SOURCE_DATE_EPOCH`, else today.
pub fn date_seen(configured: Option<&str>) -> String {
    if let Some(d) = configured {
        return d.to_string();
    }
    let pinned = env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| DateTime::<Utc>::from_timestamp(secs, 0));
    pinned.unwrap_or_else(Utc::now).date_naive().to_string()
}

/// English name of a language code, or the code itself when unknown.
pub fn language_name(code: &str) -> &str {
    match code {
        "ca" => "Catalan",
        "da" => "Danish",
        "de" => "German",
        "en" => "English",
        "es" => "Spanish",
        "fi" => "Finnish",
        "fr" => "French",
        "it" => "Italian",
        "ko" => "Korean",
        "nl" => "Dutch",
        "pl" => "Polish",
        "pt" => "Portuguese",
        "ru" => "Russian",
        "sv" => "Swedish",
        "uk" => "Ukrainian",
        "zh" => "Chinese",
        UNDETERMINED => "Undetermined",
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageRow {
    pub domain: String,
    pub url: String,
    pub depth: usize,
    pub status: u16,
    pub last_modified: String,
    pub sha256: String,
    pub path: String,
}

const PAGE_HEADER: [&str; 7] = ["domain", "url", "depth", "status", "last_modified", "sha256", "path"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PdfLinkRow {
    pub domain: String,
    pub page_url: String,
    pub pdf_url: String,
    pub anchor_text: String,
    pub annual_report: bool,
}

const PDF_LINK_HEADER: [&str; 5] = ["domain", "page_url", "pdf_url", "anchor_text", "annual_report"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainRow {
    pub domain: String,
    pub name: String,
    pub sector: String,
    pub fetched: usize,
    pub accessible: usize,
    pub failed: usize,
    pub redirects: usize,
    pub non_html: usize,
    pub blocked_by_robots: usize,
    pub included: bool,
    pub reason: String,
}

const DOMAIN_HEADER: [&str; 11] = [
    "domain",
    "name",
    "sector",
    "fetched",
    "accessible",
    "failed",
    "redirects",
    "non_html",
    "blocked_by_robots",
    "included",
    "reason",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InclusionDecision {
    pub domain: String,
    pub accessible: usize,
    /// `None` when the domain is kept.
    pub reason: Option<&'static str>,
}

/// Keeps domains whose crawl reached `min_pages` accessible pages. Skipped
/// crawls are excluded as `crawl_skipped`, short ones as `below_min_pages`.
pub fn domain_inclusion_filter(outcomes: &[DomainOutcome], min_pages: usize) -> Vec<InclusionDecision> {
    outcomes
        .iter()
        .map(|o| InclusionDecision {
            domain: o.entry.domain.clone(),
            accessible: o.stats.accessible,
            reason: if o.skipped.is_some() {
                Some("crawl_skipped")
            } else if o.stats.accessible < min_pages {
                Some("below_min_pages")
            } else {
                None
            },
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRow {
    pub doc_id: String,
    pub kind: String,
    pub domain: String,
    pub sector: String,
    pub url: String,
    pub declared_lang: String,
    pub detected_lang: String,
    pub lang_confidence: String,
    pub lang: String,
    pub token_count: usize,
    /// `lemma:count` pairs joined by `;`.
    pub keywords: String,
    pub text_sha256: String,
    pub text_path: String,
}

const DOCUMENT_HEADER: [&str; 13] = [
    "doc_id",
    "kind",
    "domain",
    "sector",
    "url",
    "declared_lang",
    "detected_lang",
    "lang_confidence",
    "lang",
    "token_count",
    "keywords",
    "text_sha256",
    "text_path",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageStats {
    pub language: String,
    pub url_count: usize,
    pub sectors_covered: usize,
    pub token_count: usize,
}

pub(crate) fn inputs(p: &Pipeline, stage: Stage, opts: &RunOptions) -> Result<Vec<InputSpec>, PipelineError> {
    let cfg = p.config();
    let paths = &cfg.paths;
    let mut v = vec![InputSpec::required(
        cfg.registry_path().to_path_buf(),
        "paths.registry must name the company registry CSV",
    )];
    let optional = |q: &Option<PathBuf>| q.clone().map(InputSpec::optional);
    v.extend(optional(&paths.sectors));
    let upstream = |stage: Stage, file: &str, producer: Stage| {
        InputSpec::required(
            p.stage_dir(stage).join(file),
            format!("run `prisme-forge {}` first", producer.name()),
        )
    };
    match stage {
        Stage::Prepare => {
            for q in [
                &paths.keywords,
                &paths.url_filters,
                &paths.targets,
                &paths.stopwords,
                &paths.category_lexicon,
                &paths.report_urls,
            ] {
                v.extend(optional(q));
            }
        }
        Stage::Crawl => v.extend(optional(&paths.url_filters)),
        Stage::HarvestPdf => {
            if let Some(r) = &paths.report_urls {
                v.push(InputSpec::required(r.clone(), "paths.report_urls"));
            } else if cfg.harvest.search_endpoint.is_none() {
                v.push(upstream(Stage::Crawl, "pdf_links.csv", Stage::Crawl));
            }
        }
        Stage::Structure => {
            let crawl = p.stage_dir(Stage::Crawl);
            let harvest = p.stage_dir(Stage::HarvestPdf);
            if !crawl.join("pages.csv").is_file() && !harvest.join("reports.csv").is_file() {
                return Err(PipelineError::Missing {
                    path: crawl.join("pages.csv"),
                    hint: "structure needs crawl or harvest-pdf output; run `prisme-forge crawl` first".into(),
                });
            }
            v.push(InputSpec::optional(crawl.join("pages.csv")));
            v.push(InputSpec::optional(crawl.join("domains.csv")));
            v.push(InputSpec::optional(harvest.join("reports.csv")));
            v.extend(optional(&paths.keywords));
        }
        Stage::Terms => {
            v.push(corpus_input(p, opts));
            v.extend(optional(&paths.targets));
            v.extend(optional(&paths.stopwords));
        }
        Stage::Dataset => {
            v.push(corpus_input(p, opts));
            match &paths.category_lexicon {
                Some(l) => v.push(InputSpec::required(l.clone(), "paths.category_lexicon")),
                None => {
                    return Err(PipelineError::Validation(
                        "dataset needs paths.category_lexicon (a term,category CSV)".into(),
                    ))
                }
            }
            if cfg.dataset.include_term_candidates {
                v.push(upstream(Stage::Terms, "candidates.csv", Stage::Terms));
            }
        }
        Stage::Vectorize => {
            if cfg.vectorize.command.is_empty() {
                return Err(PipelineError::Validation(
                    "vectorize.command is not configured; the vectorizer is an external program".into(),
                ));
            }
            v.push(upstream(Stage::Dataset, "dataset.csv", Stage::Dataset));
        }
        Stage::Report => v.push(corpus_input(p, opts)),
    }
    Ok(v)
}

fn corpus_input(p: &Pipeline, opts: &RunOptions) -> InputSpec {
    InputSpec::required(
        p.corpus_dir(opts).join("documents.csv"),
        "run `prisme-forge structure` first or point --corpus at a structure directory",
    )
}

pub(crate) fn execute(
    p: &Pipeline,
    stage: Stage,
    opts: &RunOptions,
    work: &StageWork,
) -> Result<StageReport, PipelineError> {
    match stage {
        Stage::Prepare => prepare(p, work),
        Stage::Crawl => crawl(p, work),
        Stage::HarvestPdf => harvest_pdf(p, work),
        Stage::Structure => structure(p, work),
        Stage::Terms => terms(p, &p.corpus_dir(opts), work),
        Stage::Dataset => dataset(p, &p.corpus_dir(opts), work),
        Stage::Vectorize => vectorize(p, work),
        Stage::Report => report(&p.corpus_dir(opts), work),
    }
}

fn sectors(p: &Pipeline) -> Result<SectorList, PipelineError> {
    match &p.config().paths.sectors {
        Some(path) => SectorList::load(path).map_err(invalid),
        None => Ok(SectorList::default()),
    }
}

fn registry(p: &Pipeline) -> Result<Vec<CompanyEntry>, PipelineError> {
    load_registry(p.config().registry_path(), &sectors(p)?).map_err(invalid)
}

fn keyword_lexicon(p: &Pipeline) -> Result<KeywordLexicon, PipelineError> {
    match &p.config().paths.keywords {
        Some(path) => KeywordLexicon::load(path).map_err(invalid),
        None => Ok(KeywordLexicon::default()),
    }
}

fn crawl_policy(p: &Pipeline) -> Result<CrawlPolicy, PipelineError> {
    let c = &p.config().crawl;
    let patterns = match &p.config().paths.url_filters {
        Some(path) => load_filter_patterns(path).map_err(invalid)?,
        None => default_filter_patterns(),
    };
    CrawlPolicy::new(CrawlPolicySpec {
        per_domain_delay_ms: c.delay_ms,
        max_pages_per_domain: c.max_pages,
        min_pages_for_inclusion: c.min_pages_for_inclusion,
        url_exclude_patterns: patterns,
        allowed_schemes: c.allowed_schemes.clone(),
        seed_scheme: c.seed_scheme.clone(),
    })
    .map_err(invalid)
}

fn http_fetcher(p: &Pipeline) -> Result<HttpFetcher, PipelineError> {
    let c = &p.config().crawl;
    Ok(HttpFetcher::new(
        &c.user_agent,
        Duration::from_secs(c.timeout_secs),
        p.config().resolve_map()?,
    ))
}

/// Loads and cross-checks every configured resource, then writes the
/// normalized registry.
fn prepare(p: &Pipeline, work: &StageWork) -> Result<StageReport, PipelineError> {
    let cfg = p.config();
    let mut rep = StageReport::default();
    let sector_list = sectors(p)?;
    let entries = registry(p)?;
    if entries.is_empty() {
        rep.warn("the registry lists no company".into());
    }
    let lex = keyword_lexicon(p)?;
    crawl_policy(p)?;
    if let Some(t) = &cfg.paths.targets {
        rep.count("target_words", TargetWordSet::load(t).map_err(invalid)?.words.len() as u64);
    }
    if let Some(s) = &cfg.paths.stopwords {
        rep.count("stopwords", load_stopwords(s).map_err(invalid)?.len() as u64);
    }
    if let Some(l) = &cfg.paths.category_lexicon {
        let cats = CategoryLexicon::load(l).map_err(invalid)?;
        cats.check_category_count(cfg.dataset.expected_categories).map_err(invalid)?;
        rep.count("lexicon_terms", cats.len() as u64);
    }
    if let Some(r) = &cfg.paths.report_urls {
        OfflineBackend::load(r).map_err(invalid)?;
    }
    if let Some(d) = &cfg.paths.langid_profiles {
        LanguageDetector::from_dir(d).map_err(invalid)?;
    }
    let used: BTreeSet<&str> = entries.iter().map(|e| e.sector.as_str()).collect();
    rep.count("companies", entries.len() as u64);
    rep.count("sectors_declared", sector_list.len() as u64);
    rep.count("sectors_used", used.len() as u64);
    rep.count("keyword_languages", lex.languages().count() as u64);
    write_csv(&work.path("registry.csv")?, &["name", "domain", "sector"], &entries)?;
    Ok(rep)
}

/// (registry index, page sequence, row, PDF links found on the page)
type CollectedPage = (usize, usize, PageRow, Vec<PdfLinkRow>);

fn crawl(p: &Pipeline, work: &StageWork) -> Result<StageReport, PipelineError> {
    let cfg = p.config();
    let entries = registry(p)?;
    let policy = crawl_policy(p)?;
    let fetcher = http_fetcher(p)?;
    let order: HashMap<&str, usize> = entries.iter().enumerate().map(|(i, e)| (e.domain.as_str(), i)).collect();
    let matcher = AnnualReportMatcher::default();
    let pages_dir = work.path("pages")?;
    let collected: Mutex<Vec<CollectedPage>> = Mutex::new(Vec::new());
    let seq: Mutex<HashMap<String, usize>> = Mutex::new(HashMap::new());
    let write_err: Mutex<Option<std::io::Error>> = Mutex::new(None);

    let outcomes = crawl_all(&entries, &policy, &fetcher, cfg.crawl.workers, |entry, page| {
        let n = {
            let mut s = seq.lock().expect("seq lock");
            let c = s.entry(entry.domain.clone()).or_default();
            *c += 1;
            *c
        };
        let rel = format!("pages/{}/{}.html", entry.domain, doc_id(&page.url));
        let dest = pages_dir.join(&entry.domain).join(format!("{}.html", doc_id(&page.url)));
        let written = fs::create_dir_all(dest.parent().expect("page path has a parent"))
            .and_then(|_| write_atomic(&dest, |w| w.write_all(page.html.as_bytes())));
        if let Err(e) = written {
            write_err.lock().expect("error lock").get_or_insert(e);
            return;
        }
        let pdfs = find_pdf_anchors(&page.html, &page.url)
            .into_iter()
            .map(|l| PdfLinkRow {
                domain: entry.domain.clone(),
                page_url: page.url.clone(),
                annual_report: matcher.matches(&l.url, &l.anchor_text),
                pdf_url: l.url,
                anchor_text: l.anchor_text,
            })
            .collect();
        let row = PageRow {
            domain: entry.domain.clone(),
            url: page.url.clone(),
            depth: page.depth,
            status: page.status,
            last_modified: page.last_modified.clone().unwrap_or_default(),
            sha256: bytes_digest(page.html.as_bytes()),
            path: rel,
        };
        collected
            .lock()
            .expect("pages lock")
            .push((order[entry.domain.as_str()], n, row, pdfs));
    });
    if let Some(e) = write_err.into_inner().expect("error lock") {
        return Err(e.into());
    }

    let mut collected = collected.into_inner().expect("pages lock");
    collected.sort_by_key(|(i, n, _, _)| (*i, *n));
    let mut pages = Vec::new();
    let mut pdf_links = Vec::new();
    let mut seen_pdf = BTreeSet::new();
    for (_, _, row, pdfs) in collected {
        pages.push(row);
        for l in pdfs {
            if seen_pdf.insert((l.domain.clone(), l.pdf_url.clone())) {
                pdf_links.push(l);
            }
        }
    }

    let mut rep = StageReport::default();
    let decisions = domain_inclusion_filter(&outcomes, cfg.crawl.min_pages_for_inclusion);
    let mut domains = Vec::new();
    for (o, d) in outcomes.iter().zip(&decisions) {
        let s = &o.stats;
        rep.count("pages_fetched", s.fetched as u64);
        rep.count("pages_accessible", s.accessible as u64);
        rep.count("pages_failed", s.failed as u64);
        rep.count("redirects", s.redirects as u64);
        rep.count("non_html", s.non_html as u64);
        rep.count("blocked_by_robots", s.blocked_by_robots as u64);
        rep.count("robots_requests", s.robots_requests as u64);
        match d.reason {
            Some(reason) => {
                let detail = match &o.skipped {
                    Some(why) => why.clone(),
                    None => format!("{} accessible pages < {}", d.accessible, cfg.crawl.min_pages_for_inclusion),
                };
                rep.exclude(&d.domain, reason, detail);
            }
            None => rep.count("domains_included", 1),
        }
        domains.push(DomainRow {
            domain: o.entry.domain.clone(),
            name: o.entry.name.clone(),
            sector: o.entry.sector.clone(),
            fetched: s.fetched,
            accessible: s.accessible,
            failed: s.failed,
            redirects: s.redirects,
            non_html: s.non_html,
            blocked_by_robots: s.blocked_by_robots,
            included: d.reason.is_none(),
            reason: d.reason.unwrap_or_default().to_string(),
        });
    }
    rep.count("domains", entries.len() as u64);
    rep.count("pdf_links", pdf_links.len() as u64);
    rep.count(
        "annual_report_links",
        pdf_links.iter().filter(|l| l.annual_report).count() as u64,
    );
    write_csv(&work.path("pages.csv")?, &PAGE_HEADER, &pages)?;
    write_csv(&work.path("domains.csv")?, &DOMAIN_HEADER, &domains)?;
    write_csv(&work.path("pdf_links.csv")?, &PDF_LINK_HEADER, &pdf_links)?;
    Ok(rep)
}

fn harvest_pdf(p: &Pipeline, work: &StageWork) -> Result<StageReport, PipelineError> {
    let cfg = p.config();
    let h = &cfg.harvest;
    let entries = registry(p)?;
    let fetcher = http_fetcher(p)?;
    let backend: Box<dyn SearchBackend> = if let Some(r) = &cfg.paths.report_urls {
        Box::new(OfflineBackend::load(r).map_err(invalid)?)
    } else if let Some(endpoint) = &h.search_endpoint {
        Box::new(HttpSearchBackend {
            endpoint: endpoint.clone(),
            fetcher: http_fetcher(p)?,
        })
    } else {
        let links: Vec<PdfLinkRow> = read_csv(&p.stage_dir(Stage::Crawl).join("pdf_links.csv"))?;
        Box::new(OfflineBackend::from_pairs(
            links
                .into_iter()
                .filter(|l| l.annual_report)
                .map(|l| (l.domain, l.pdf_url))
                .collect(),
        ))
    };
    let opts = HarvestOptions {
        thresholds: ReportThresholds {
            min_year: h.min_year,
            min_tokens: h.min_tokens,
        },
        blocklist: match &h.blocked_hosts {
            Some(hosts) => HostBlocklist::new(hosts),
            None => HostBlocklist::default(),
        },
        converter: TextConverter {
            command: h.converter.clone(),
        },
        per_host_delay: Duration::from_millis(h.delay_ms),
        workers: h.workers,
        respect_robots: h.respect_robots,
    };
    let docs = harvest(&entries, backend.as_ref(), &fetcher, &opts, work.dir()).map_err(runtime)?;
    let mut rep = StageReport::default();
    rep.count("candidates", docs.len() as u64);
    for d in &docs {
        match d.status.reason() {
            None => rep.count(d.status.label(), 1),
            Some(r) => {
                rep.count(&format!("rejected_{r}"), 1);
                rep.exclude(&d.url, r.as_str(), d.company.clone());
            }
        }
    }
    write_manifest(&docs, &work.path("reports.csv")?).map_err(runtime)?;
    Ok(rep)
}

/// Language, keyword and snippet processing shared by pages and reports.
struct Structurer<'a> {
    detector: LanguageDetector,
    lexicon: KeywordLexicon,
    tables: HashMap<String, VariantTable>,
    threshold: f64,
    accent: crate::extractor::AccentMode,
    window: usize,
    date_seen: String,
    work: &'a StageWork,
    documents: Vec<DocumentRow>,
    records: Vec<SnippetRecord>,
}

struct RawDoc<'a> {
    kind: &'static str,
    domain: &'a str,
    sector: &'a str,
    url: &'a str,
    declared: Option<String>,
    text: &'a str,
}

impl Structurer<'_> {
    /// Returns false when the document holds no keyword.
    fn add(&mut self, d: RawDoc<'_>) -> Result<bool, PipelineError> {
        let display = normalize_whitespace(d.text);
        let detected = self.detector.detect(&display);
        let verdict = validate(d.declared.as_deref(), &detected, self.threshold);
        let tokens = tokenize(&normalize_text_with(d.text, self.accent));
        let lexicon = &self.lexicon;
        let table = self
            .tables
            .entry(verdict.lang.clone())
            .or_insert_with(|| expand_variants(lexicon, &verdict.lang));
        if !contains_any(&tokens, table) {
            return Ok(false);
        }
        let counts = count_occurrences(&tokens, table);
        let id = doc_id(d.url);
        let text_path = format!("text/{id}.txt");
        write_atomic(&self.work.path(&text_path)?, |w| w.write_all(display.as_bytes()))?;
        let mut seen = BTreeSet::new();
        for snip in extract_context_snippets(&tokens, table, self.window) {
            let hash = snippet_hash(&snip.text);
            if !seen.insert(hash) {
                continue;
            }
            self.records.push(SnippetRecord {
                domain: d.domain.to_string(),
                url: d.url.to_string(),
                lang: verdict.lang.clone(),
                sector: d.sector.to_string(),
                token_count: tokens.len(),
                date_seen: self.date_seen.clone(),
                count: counts.get(&snip.lemma).copied().unwrap_or(0),
                keyword: snip.lemma,
                snippet_hash: hash,
                snippet: snip.text,
            });
        }
        self.documents.push(DocumentRow {
            doc_id: id,
            kind: d.kind.to_string(),
            domain: d.domain.to_string(),
            sector: d.sector.to_string(),
            url: d.url.to_string(),
            declared_lang: d.declared.unwrap_or_default(),
            detected_lang: detected.lang,
            lang_confidence: format!("{:.6}", detected.confidence),
            lang: verdict.lang,
            token_count: tokens.len(),
            keywords: counts.iter().map(|(k, v)| format!("{k}:{v}")).collect::<Vec<_>>().join(";"),
            text_sha256: bytes_digest(display.as_bytes()),
            text_path,
        });
        Ok(true)
    }
}

fn structure(p: &Pipeline, work: &StageWork) -> Result<StageReport, PipelineError> {
    let cfg = p.config();
    let s = &cfg.structure;
    let entries = registry(p)?;
    let sector_of: HashMap<&str, &str> = entries.iter().map(|e| (e.domain.as_str(), e.sector.as_str())).collect();
    let detector = match &cfg.paths.langid_profiles {
        Some(d) => LanguageDetector::from_dir(d).map_err(invalid)?,
        None => LanguageDetector::builtin(),
    };
    let mut st = Structurer {
        detector,
        lexicon: keyword_lexicon(p)?,
        tables: HashMap::new(),
        threshold: s.lang_threshold,
        accent: s.accent_mode,
        window: s.snippet_window,
        date_seen: date_seen(s.date_seen.as_deref()),
        work,
        documents: Vec::new(),
        records: Vec::new(),
    };
    let mut rep = StageReport::default();

    let crawl_dir = p.stage_dir(Stage::Crawl);
    if crawl_dir.join("pages.csv").is_file() {
        let domains: Vec<DomainRow> = read_csv(&crawl_dir.join("domains.csv"))?;
        let included: BTreeSet<&str> = domains.iter().filter(|d| d.included).map(|d| d.domain.as_str()).collect();
        for d in domains.iter().filter(|d| !d.included) {
            rep.exclude(&d.domain, &d.reason, String::new());
        }
        let pages: Vec<PageRow> = read_csv(&crawl_dir.join("pages.csv"))?;
        for page in pages.iter().filter(|pg| included.contains(pg.domain.as_str())) {
            let html = fs::read_to_string(crawl_dir.join(&page.path))
                .map_err(|e| runtime(format!("{}: {e}", crawl_dir.join(&page.path).display())))?;
            let text = extract_visible_text(&html);
            if tokenize(&normalize_text_with(&text, s.accent_mode)).len() < s.min_tokens_page {
                rep.count("pages_too_short", 1);
                continue;
            }
            let kept = st.add(RawDoc {
                kind: "page",
                domain: &page.domain,
                sector: sector_of.get(page.domain.as_str()).copied().unwrap_or_default(),
                url: &page.url,
                declared: detect_lang_attr(&html),
                text: &text,
            })?;
            rep.count(if kept { "pages_kept" } else { "pages_without_keyword" }, 1);
        }
    }

    let harvest_dir = p.stage_dir(Stage::HarvestPdf);
    if harvest_dir.join("reports.csv").is_file() {
        let reports = read_manifest(&harvest_dir.join("reports.csv")).map_err(runtime)?;
        for r in reports.iter().filter(|r| r.status == ReportStatus::Accepted) {
            let txt = harvest_dir.join(&r.local_path).with_extension("txt");
            let text = fs::read_to_string(&txt).map_err(|e| runtime(format!("{}: {e}", txt.display())))?;
            let kept = st.add(RawDoc {
                kind: "report",
                domain: &r.domain,
                sector: sector_of.get(r.domain.as_str()).copied().unwrap_or_default(),
                url: &r.url,
                declared: None,
                text: &text,
            })?;
            rep.count(if kept { "reports_kept" } else { "reports_without_keyword" }, 1);
        }
    }

    let mut documents = st.documents;
    documents.sort_by(|a, b| (&a.domain, &a.kind, &a.url).cmp(&(&b.domain, &b.kind, &b.url)));
    for d in &documents {
        rep.count(&format!("lang_{}", d.lang), 1);
    }
    let records = deduplicate_records(st.records);
    rep.count("documents", documents.len() as u64);
    rep.count("snippets", records.len() as u64);
    write_csv(&work.path("documents.csv")?, &DOCUMENT_HEADER, &documents)?;
    aggregate_results_to_csv(&records, &work.path("snippets.csv")?).map_err(runtime)?;
    let txt_dir = work.dir().join("snippets_txt");
    fs::create_dir_all(&txt_dir)?;
    export_plain_text(&records, &txt_dir).map_err(runtime)?;
    Ok(rep)
}

fn load_documents(corpus: &Path) -> Result<Vec<(DocumentRow, String)>, PipelineError> {
    let rows: Vec<DocumentRow> = read_csv(&corpus.join("documents.csv"))?;
    rows.into_iter()
        .map(|r| {
            let path = corpus.join(&r.text_path);
            let text = fs::read_to_string(&path).map_err(|e| PipelineError::Missing {
                path: path.clone(),
                hint: format!("document text listed in documents.csv is unreadable: {e}"),
            })?;
            Ok((r, text))
        })
        .collect()
}

#[derive(Serialize)]
struct TermRow<'a> {
    sector: &'a str,
    term: &'a str,
    weight: f64,
    rank: usize,
}

fn terms(p: &Pipeline, corpus: &Path, work: &StageWork) -> Result<StageReport, PipelineError> {
    let cfg = p.config();
    let t = &cfg.terms;
    let entries = registry(p)?;
    let targets = match &cfg.paths.targets {
        Some(path) => TargetWordSet::load(path).map_err(invalid)?,
        None => TargetWordSet::default(),
    };
    let stopwords = match &cfg.paths.stopwords {
        Some(path) => load_stopwords(path).map_err(invalid)?,
        None => default_stopwords(),
    };
    let names: Vec<&str> = entries.iter().map(|e| e.name.as_str()).collect();
    let company_tokens = company_name_tokens(&names);
    let docs = load_documents(corpus)?;
    let mut rep = StageReport::default();
    rep.count("documents", docs.len() as u64);

    // One n-gram bag per company domain.
    let mut per_domain: BTreeMap<String, (String, DocumentNgrams)> = BTreeMap::new();
    for (row, text) in &docs {
        let mut tokens = tokenize(&normalize_text_with(text, cfg.structure.accent_mode));
        if t.remove_stopwords {
            tokens = remove_stopwords(&tokens, &stopwords);
        }
        let grams = DocumentNgrams::from_tokens(&tokens, t.n_min, t.n_max).map_err(invalid)?;
        let slot = per_domain
            .entry(row.domain.clone())
            .or_insert_with(|| (row.sector.clone(), DocumentNgrams::default()));
        for (g, c) in grams.counts {
            *slot.1.counts.entry(g).or_default() += c;
        }
        slot.1.total += grams.total;
    }
    rep.count("companies", per_domain.len() as u64);

    let mut stats = Vec::new();
    for (domain, (sector, bag)) in &per_domain {
        for (g, c) in &bag.counts {
            stats.push(NgramStat {
                ngram: g.clone(),
                freq: *c,
                domain: domain.clone(),
                sector: sector.clone(),
            });
        }
    }
    let distinct: BTreeSet<&str> = stats.iter().map(|s| s.ngram.as_str()).collect();
    rep.count("ngrams_distinct", distinct.len() as u64);
    let mut freqs: BTreeMap<String, usize> = BTreeMap::new();
    for s in filter_ngrams(stats, &company_tokens, &targets) {
        *freqs.entry(s.ngram).or_default() += s.freq;
    }
    rep.count("ngrams_filtered", freqs.len() as u64);
    let selected = frequency_threshold(&freqs);
    rep.count("ngrams_selected", selected.len() as u64);
    if selected.is_empty() {
        rep.warn("no n-gram passed the frequency threshold".into());
    }

    let present: BTreeSet<&str> = per_domain.values().map(|(s, _)| s.as_str()).collect();
    let chosen: Vec<String> = if t.sectors.is_empty() {
        present.iter().map(|s| s.to_string()).collect()
    } else {
        for s in &t.sectors {
            if !present.contains(s.as_str()) {
                return Err(invalid(format!("sector '{s}' has no document in the corpus")));
            }
        }
        t.sectors.clone()
    };

    let mut top_rows: Vec<(String, Vec<TermWeight>)> = Vec::new();
    let mut candidates = Vec::new();
    for sector in &chosen {
        let bags: Vec<DocumentNgrams> = per_domain
            .values()
            .filter(|(s, _)| s == sector)
            .map(|(_, b)| b.clone())
            .collect();
        let weights = compute_tfidf(sector, &bags, &selected);
        candidates.extend(quantile_candidates(&weights, t.tfidf_quantile).map_err(invalid)?);
        top_rows.push((sector.clone(), top_terms(&weights, t.top_k)));
    }
    rep.count("sectors", chosen.len() as u64);

    let term_rows: Vec<TermRow> = top_rows
        .iter()
        .flat_map(|(sector, ws)| {
            ws.iter().enumerate().map(move |(i, w)| TermRow {
                sector,
                term: &w.term,
                weight: w.weight,
                rank: i + 1,
            })
        })
        .collect();
    write_csv(&work.path("terms.csv")?, &["sector", "term", "weight", "rank"], &term_rows)?;
    write_csv(&work.path("candidates.csv")?, &["term", "sector", "weight"], &candidates)?;

    let mut inter = Vec::new();
    for (i, (a, wa)) in top_rows.iter().enumerate() {
        for (b, wb) in &top_rows[i + 1..] {
            let ta: Vec<&str> = wa.iter().map(|w| w.term.as_str()).collect();
            let tb: Vec<&str> = wb.iter().map(|w| w.term.as_str()).collect();
            for (k, term) in intersect_sectors(&ta, &tb).into_iter().enumerate() {
                inter.push((a.clone(), b.clone(), k + 1, term));
            }
        }
    }
    write_csv(
        &work.path("intersections.csv")?,
        &["sector_a", "sector_b", "rank", "term"],
        &inter,
    )?;
    let selected_rows: Vec<(&String, usize)> = selected.iter().map(|g| (g, freqs[g])).collect();
    write_csv(&work.path("selected_ngrams.csv")?, &["ngram", "freq"], &selected_rows)?;
    Ok(rep)
}

#[derive(Deserialize)]
struct CandidateRow {
    term: String,
}

fn dataset(p: &Pipeline, corpus: &Path, work: &StageWork) -> Result<StageReport, PipelineError> {
    let cfg = p.config();
    let d = &cfg.dataset;
    let lex_path = cfg
        .paths
        .category_lexicon
        .as_deref()
        .ok_or_else(|| invalid("dataset needs paths.category_lexicon"))?;
    let lexicon = CategoryLexicon::load(lex_path).map_err(invalid)?;
    lexicon.check_category_count(d.expected_categories).map_err(invalid)?;
    let mut rep = StageReport::default();

    let mut terms: BTreeMap<String, String> = lexicon
        .terms()
        .map(|(t, c)| (term_key(t), c.to_string()))
        .collect();
    if d.include_term_candidates {
        let rows: Vec<CandidateRow> = read_csv(&p.stage_dir(Stage::Terms).join("candidates.csv"))?;
        let mut unknown = BTreeSet::new();
        for r in rows {
            match annotate(&r.term, &lexicon) {
                Some(c) => {
                    terms.insert(term_key(&r.term), c.to_string());
                }
                None => {
                    unknown.insert(r.term);
                }
            }
        }
        if !unknown.is_empty() {
            rep.warn(format!("{} weighted terms have no category and were left out", unknown.len()));
        }
        rep.count("unknown_terms", unknown.len() as u64);
    }
    let terms: Vec<(String, String)> = terms.into_iter().collect();
    rep.count("terms", terms.len() as u64);

    let entries = registry(p)?;
    let names: Vec<&str> = entries.iter().map(|e| e.name.as_str()).collect();
    let anonymizer = Anonymizer::new(&names);
    let mut rows = Vec::new();
    for (doc, text) in load_documents(corpus)? {
        if !d.languages.is_empty() && !d.languages.iter().any(|l| l == &doc.lang) {
            rep.count("documents_other_language", 1);
            continue;
        }
        rep.count("documents_used", 1);
        for ex in build_examples(&doc.doc_id, &text, &terms, d.mode, d.token_width) {
            rows.push(DatasetRow::from_example(&ex, &anonymizer));
        }
    }
    rep.count("examples", rows.len() as u64);
    emit_dataset(&rows, &work.path("dataset.csv")?).map_err(runtime)?;
    Ok(rep)
}

fn vectorize(p: &Pipeline, work: &StageWork) -> Result<StageReport, PipelineError> {
    let cmd = &p.config().vectorize.command;
    let dataset = p.stage_dir(Stage::Dataset).join("dataset.csv");
    let args: Vec<String> = cmd
        .iter()
        .map(|a| {
            a.replace("{dataset}", &dataset.display().to_string())
                .replace("{out}", &work.dir().display().to_string())
        })
        .collect();
    info!(command = ?args, "running vectorizer");
    let out = Command::new(&args[0])
        .args(&args[1..])
        .output()
        .map_err(|e| runtime(format!("cannot start {}: {e}", args[0])))?;
    if !out.status.success() {
        return Err(runtime(format!(
            "vectorizer exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    let mut rep = StageReport::default();
    let produced = super::list_files(work.dir())?;
    if produced.is_empty() {
        rep.warn("the vectorizer wrote no file".into());
    }
    rep.count("files", produced.len() as u64);
    Ok(rep)
}

/// Per-language totals over the structured corpus, largest token count first.
fn language_stats(docs: &[DocumentRow]) -> Vec<LanguageStats> {
    let mut by_lang: BTreeMap<&str, (BTreeSet<&str>, BTreeSet<&str>, usize)> = BTreeMap::new();
    for d in docs {
        let e = by_lang.entry(d.lang.as_str()).or_default();
        e.0.insert(&d.url);
        e.1.insert(&d.sector);
        e.2 += d.token_count;
    }
    let mut out: Vec<LanguageStats> = by_lang
        .into_iter()
        .map(|(lang, (urls, sectors, tokens))| LanguageStats {
            language: language_name(lang).to_string(),
            url_count: urls.len(),
            sectors_covered: sectors.len(),
            token_count: tokens,
        })
        .collect();
    out.sort_by(|a, b| b.token_count.cmp(&a.token_count).then_with(|| a.language.cmp(&b.language)));
    out
}

fn report(corpus: &Path, work: &StageWork) -> Result<StageReport, PipelineError> {
    let docs: Vec<DocumentRow> = read_csv(&corpus.join("documents.csv"))?;
    let stats = language_stats(&docs);
    write_csv(&work.path("corpus_stats.csv")?, &CORPUS_STATS_HEADER, &stats)?;
    let mut md = format!("| {} |\n|---|---:|---:|---:|\n", CORPUS_STATS_HEADER.join(" | "));
    for s in &stats {
        md.push_str(&format!(
            "| {} | {} | {} | {} |\n",
            s.language, s.url_count, s.sectors_covered, s.token_count
        ));
    }
    let total_sectors: BTreeSet<&str> = docs.iter().map(|d| d.sector.as_str()).collect();
    let total_urls: BTreeSet<&str> = docs.iter().map(|d| d.url.as_str()).collect();
    let total_tokens: usize = docs.iter().map(|d| d.token_count).sum();
    md.push_str(&format!(
        "| Total | {} | {} | {} |\n",
        total_urls.len(),
        total_sectors.len(),
        total_tokens
    ));
    write_atomic(&work.path("corpus_stats.md")?, |w| w.write_all(md.as_bytes()))?;
    let mut rep = StageReport::default();
    rep.count("languages", stats.len() as u64);
    rep.count("documents", docs.len() as u64);
    if docs.iter().any(|d| d.lang == UNDETERMINED) {
        warn!("some documents have an undetermined language");
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crawler::CrawlStats;

    fn outcome(domain: &str, accessible: usize, skipped: Option<&str>) -> DomainOutcome {
        DomainOutcome {
            entry: CompanyEntry::new("X", domain, "Business services").unwrap(),
            stats: CrawlStats {
                accessible,
                ..Default::default()
            },
            skipped: skipped.map(String::from),
        }
    }

    #[test]
    fn inclusion_filter_reasons() {
        let d = domain_inclusion_filter(
            &[
                outcome("a.com", 5, None),
                outcome("b.com", 4, None),
                outcome("c.com", 0, Some("robots.txt unavailable")),
            ],
            5,
        );
        assert_eq!(d[0].reason, None);
        assert_eq!(d[1].reason, Some("below_min_pages"));
        assert_eq!(d[2].reason, Some("crawl_skipped"));
    }

    #[test]
    fn pinned_date_wins() {
        assert_eq!(date_seen(Some("2024-02-03")), "2024-02-03");
    }

    #[test]
    fn language_stats_group_and_sort() {
        let doc = |url: &str, lang: &str, sector: &str, n: usize| DocumentRow {
            doc_id: doc_id(url),
            kind: "page".into(),
            domain: "a.com".into(),
            sector: sector.into(),
            url: url.into(),
            declared_lang: String::new(),
            detected_lang: lang.into(),
            lang_confidence: "1.000000".into(),
            lang: lang.into(),
            token_count: n,
            keywords: String::new(),
            text_sha256: String::new(),
            text_path: String::new(),
        };
        let s = language_stats(&[
            doc("u1", "fr", "S1", 10),
            doc("u2", "en", "S1", 30),
            doc("u3", "en", "S2", 5),
        ]);
        assert_eq!(s[0].language, "English");
        assert_eq!((s[0].url_count, s[0].sectors_covered, s[0].token_count), (2, 2, 35));
        assert_eq!(s[1].language, "French");
    }
}
