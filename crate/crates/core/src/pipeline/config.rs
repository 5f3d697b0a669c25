use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::dataset::BlockMode;
use crate::extractor::AccentMode;

/// The whole run configuration. Every section has defaults, so a config file
/// only needs `paths.registry`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub crawl: CrawlConfig,
    pub harvest: HarvestConfig,
    pub structure: StructureConfig,
    pub terms: TermsConfig,
    pub dataset: DatasetConfig,
    pub vectorize: VectorizeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub registry: Option<PathBuf>,
    pub out: PathBuf,
    pub sectors: Option<PathBuf>,
    pub keywords: Option<PathBuf>,
    pub url_filters: Option<PathBuf>,
    pub targets: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub category_lexicon: Option<PathBuf>,
    /// `company,url` rows used instead of a search backend.
    pub report_urls: Option<PathBuf>,
    /// Directory of `<lang>.tsv` profiles replacing the builtin ones.
    pub langid_profiles: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            registry: None,
            out: PathBuf::from("out"),
            sectors: None,
            keywords: None,
            url_filters: None,
            targets: None,
            stopwords: None,
            category_lexicon: None,
            report_urls: None,
            langid_profiles: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrawlConfig {
    pub delay_ms: u64,
    pub max_pages: usize,
    pub min_pages_for_inclusion: usize,
    pub workers: usize,
    pub seed_scheme: String,
    pub allowed_schemes: Vec<String>,
    pub user_agent: String,
    pub timeout_secs: u64,
    /// Host to socket address overrides, e.g. `"acme.test" = "127.0.0.1:8080"`.
    pub resolve: BTreeMap<String, String>,
}

impl Default for CrawlConfig {
    fn default() -> Self {
        Self {
            delay_ms: 1000,
            max_pages: 2000,
            min_pages_for_inclusion: crate::crawler::DEFAULT_MIN_PAGES_FOR_INCLUSION,
            workers: 4,
            seed_scheme: "https".into(),
            allowed_schemes: vec!["http".into(), "https".into()],
            user_agent: crate::crawler::DEFAULT_USER_AGENT.into(),
            timeout_secs: 30,
            resolve: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarvestConfig {
    pub min_year: u32,
    pub min_tokens: usize,
    pub delay_ms: u64,
    pub workers: usize,
    /// PDF to text command; `{pdf}` and `{txt}` are substituted.
    pub converter: Vec<String>,
    /// Search URL template with a `{query}` placeholder.
    pub search_endpoint: Option<String>,
    pub blocked_hosts: Option<Vec<String>>,
    pub respect_robots: bool,
}

impl Default for HarvestConfig {
    fn default() -> Self {
        Self {
            min_year: crate::harvest::DEFAULT_MIN_YEAR,
            min_tokens: crate::harvest::DEFAULT_MIN_TOKENS,
            delay_ms: 1000,
            workers: 4,
            converter: vec!["pdftotext".into(), "-layout".into(), "{pdf}".into(), "{txt}".into()],
            search_endpoint: None,
            blocked_hosts: None,
            respect_robots: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StructureConfig {
    pub min_tokens_page: usize,
    pub snippet_window: usize,
    pub lang_threshold: f64,
    pub accent_mode: AccentMode,
    /// `YYYY-MM-DD` written in the `date_seen` column. Falls back to
    /// `SOURCE_DATE_EPOCH`, then to today.
    pub date_seen: Option<String>,
}

impl Default for StructureConfig {
    fn default() -> Self {
        Self {
            min_tokens_page: crate::extractor::DEFAULT_MIN_TOKENS_PAGE,
            snippet_window: crate::store::DEFAULT_SNIPPET_WINDOW,
            lang_threshold: crate::langid::DEFAULT_OVERRIDE_THRESHOLD,
            accent_mode: AccentMode::Fold,
            date_seen: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TermsConfig {
    pub top_k: usize,
    pub tfidf_quantile: f64,
    pub n_min: usize,
    pub n_max: usize,
    pub remove_stopwords: bool,
    /// Sectors to weight and intersect; empty means every sector in the corpus.
    pub sectors: Vec<String>,
}

impl Default for TermsConfig {
    fn default() -> Self {
        Self {
            top_k: crate::termlab::DEFAULT_TOP_K,
            tfidf_quantile: crate::termlab::DEFAULT_TFIDF_QUANTILE,
            n_min: crate::termlab::NGRAM_MIN,
            n_max: crate::termlab::NGRAM_MAX,
            remove_stopwords: true,
            sectors: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub mode: BlockMode,
    pub token_width: usize,
    /// Document languages kept; empty keeps all.
    pub languages: Vec<String>,
    pub expected_categories: usize,
    /// Also annotate the weighted candidates from the terms stage.
    pub include_term_candidates: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            mode: BlockMode::default(),
            token_width: crate::dataset::DEFAULT_TOKEN_WIDTH,
            languages: vec!["en".into()],
            expected_categories: crate::dataset::DEFAULT_CATEGORY_COUNT,
            include_term_candidates: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VectorizeConfig {
    /// External command; `{dataset}` and `{out}` are substituted.
    pub command: Vec<String>,
}

impl PipelineConfig {
    /// Parses a TOML file. Relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Missing {
            path: path.to_path_buf(),
            hint: format!("cannot read config: {e}"),
        })?;
        let mut cfg: Self =
            toml::from_str(&text).map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    pub fn rebase(&mut self, base: &Path) {
        let p = &mut self.paths;
        let fix = |q: &mut PathBuf| {
            if q.is_relative() {
                *q = base.join(&*q);
            }
        };
        fix(&mut p.out);
        for q in [
            &mut p.registry,
            &mut p.sectors,
            &mut p.keywords,
            &mut p.url_filters,
            &mut p.targets,
            &mut p.stopwords,
            &mut p.category_lexicon,
            &mut p.report_urls,
            &mut p.langid_profiles,
        ]
        .into_iter()
        .flatten()
        {
            fix(q);
        }
    }

    /// Checks thresholds and that every referenced file exists.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Validation(m.to_string()));
        match &self.paths.registry {
            None => return bad("paths.registry is required"),
            Some(r) => require_file(r, "paths.registry")?,
        }
        let p = &self.paths;
        for (q, key) in [
            (&p.sectors, "paths.sectors"),
            (&p.keywords, "paths.keywords"),
            (&p.url_filters, "paths.url_filters"),
            (&p.targets, "paths.targets"),
            (&p.stopwords, "paths.stopwords"),
            (&p.category_lexicon, "paths.category_lexicon"),
            (&p.report_urls, "paths.report_urls"),
        ] {
            if let Some(q) = q {
                require_file(q, key)?;
            }
        }
        if let Some(d) = &p.langid_profiles {
            if !d.is_dir() {
                return Err(PipelineError::Missing {
                    path: d.clone(),
                    hint: "paths.langid_profiles must be a directory of <lang>.tsv files".into(),
                });
            }
        }
        let c = &self.crawl;
        if c.max_pages == 0 || c.min_pages_for_inclusion == 0 || c.workers == 0 || c.timeout_secs == 0 {
            return bad("crawl.max_pages, crawl.min_pages_for_inclusion, crawl.workers and crawl.timeout_secs must be positive");
        }
        self.resolve_map()?;
        let h = &self.harvest;
        if h.min_tokens == 0 || h.workers == 0 {
            return bad("harvest.min_tokens and harvest.workers must be positive");
        }
        if let Some(e) = &h.search_endpoint {
            if !e.contains("{query}") {
                return bad("harvest.search_endpoint needs a {query} placeholder");
            }
        }
        let s = &self.structure;
        if s.min_tokens_page == 0 || s.snippet_window == 0 {
            return bad("structure.min_tokens_page and structure.snippet_window must be positive");
        }
        if !(0.0..=1.0).contains(&s.lang_threshold) {
            return bad("structure.lang_threshold must lie in [0, 1]");
        }
        if let Some(d) = &s.date_seen {
            if chrono::NaiveDate::parse_from_str(d, "%Y-%m-%d").is_err() {
                return bad("structure.date_seen must be YYYY-MM-DD");
            }
        }
        let t = &self.terms;
        if t.top_k == 0 {
            return bad("terms.top_k must be positive");
        }
        if t.n_min < 2 || t.n_min > t.n_max {
            return bad("terms.n_min must be at least 2 and not above terms.n_max");
        }
        if !(0.0..=1.0).contains(&t.tfidf_quantile) {
            return bad("terms.tfidf_quantile must lie in [0, 1]");
        }
        let d = &self.dataset;
        if d.token_width == 0 || d.expected_categories == 0 {
            return bad("dataset.token_width and dataset.expected_categories must be positive");
        }
        Ok(())
    }

    pub fn resolve_map(&self) -> Result<BTreeMap<String, SocketAddr>, PipelineError> {
        self.crawl
            .resolve
            .iter()
            .map(|(host, addr)| {
                addr.parse()
                    .map(|a| (host.to_ascii_lowercase(), a))
                    .map_err(|_| PipelineError::Validation(format!("crawl.resolve.{host}: '{addr}' is not host:port")))
            })
            .collect()
    }

    pub fn registry_path(&self) -> &Path {
        self.paths.registry.as_deref().unwrap_or(Path::new("registry.csv"))
    }
}

fn require_file(path: &Path, key: &str) -> Result<(), PipelineError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(PipelineError::Missing {
            path: path.to_path_buf(),
            hint: format!("{key} points to a file that does not exist"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_has_defaults() {
        let cfg: PipelineConfig = toml::from_str("").unwrap();
        assert_eq!(cfg.crawl.max_pages, 2000);
        assert_eq!(cfg.terms.top_k, 20);
        assert_eq!(cfg.dataset.languages, vec!["en".to_string()]);
        assert!(cfg.vectorize.command.is_empty());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<PipelineConfig>("[crawl]\nmax_page = 3\n").is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_dir() {
        let mut cfg: PipelineConfig = toml::from_str("[paths]\nregistry = \"r.csv\"\nout = \"/abs\"\n").unwrap();
        cfg.rebase(Path::new("/etc/run"));
        assert_eq!(cfg.paths.registry.unwrap(), PathBuf::from("/etc/run/r.csv"));
        assert_eq!(cfg.paths.out, PathBuf::from("/abs"));
    }

    #[test]
    fn validation_catches_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let reg = dir.path().join("r.csv");
        fs::write(&reg, "name,domain,sector\n").unwrap();
        let mut cfg = PipelineConfig::default();
        assert!(matches!(cfg.validate(), Err(PipelineError::Validation(_))));
        cfg.paths.registry = Some(reg);
        cfg.validate().unwrap();
        cfg.terms.n_min = 1;
        assert!(cfg.validate().is_err());
        cfg.terms.n_min = 2;
        cfg.crawl.resolve.insert("a.test".into(), "nowhere".into());
        assert!(cfg.validate().is_err());
        cfg.crawl.resolve.clear();
        cfg.paths.targets = Some(dir.path().join("missing.txt"));
        assert!(matches!(cfg.validate(), Err(PipelineError::Missing { .. })));
    }
}
