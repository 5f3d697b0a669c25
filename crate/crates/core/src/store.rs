//! Keyword matching, context snippets, deduplication and CSV export of the
//! snippet corpus.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extractor::{normalize_text, tokenize};
use crate::util::{fnv1a64, write_atomic};

const DEFAULT_KEYWORDS: &str = include_str!("../data/keywords.tsv");

pub const DEFAULT_SNIPPET_WINDOW: usize = 50;

pub const RESULTS_HEADER: [&str; 10] = [
    "domain",
    "url",
    "lang",
    "sector",
    "token_count",
    "date_seen",
    "keyword",
    "count",
    "snippet_hash",
    "snippet",
];

/// Elided articles and pronouns glued to the next word by an apostrophe
/// ("l'innovation", "dell'innovazione").
const ELISION_PREFIXES: &[&str] = &[
    "l", "d", "j", "m", "n", "s", "t", "c", "qu", "lorsqu", "puisqu", "jusqu", "dell", "all", "dall", "nell", "sull",
];

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("keyword lexicon line {line}: {reason}")]
    Lexicon { line: usize, reason: String },
    #[error("results row {row}: {reason}")]
    BadRow { row: usize, reason: String },
}

/// Keyword lemmas per language with their surface variants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordLexicon {
    langs: BTreeMap<String, Vec<(String, Vec<String>)>>,
    pub fallback_lang: String,
}

impl KeywordLexicon {
    /// Parses `lang<TAB>lemma<TAB>variant1,variant2,…` lines. Blank lines and
    /// `#` comments are skipped. The lemma is always one of its variants.
    pub fn parse(text: &str) -> Result<Self, StoreError> {
        let mut langs: BTreeMap<String, Vec<(String, Vec<String>)>> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let bad = |reason: &str| StoreError::Lexicon {
                line: i + 1,
                reason: reason.to_string(),
            };
            let mut cols = line.split('\t');
            let (Some(lang), Some(lemma)) = (cols.next(), cols.next()) else {
                return Err(bad("expected lang<TAB>lemma<TAB>variants"));
            };
            let lang = lang.trim().to_ascii_lowercase();
            let lemma = lemma.trim().to_string();
            if lang.is_empty() || lemma.is_empty() {
                return Err(bad("empty language or lemma"));
            }
            let mut variants = vec![lemma.clone()];
            for v in cols.next().unwrap_or("").split(',').map(str::trim).filter(|v| !v.is_empty()) {
                if !variants.iter().any(|x| x == v) {
                    variants.push(v.to_string());
                }
            }
            let entries = langs.entry(lang).or_default();
            if entries.iter().any(|(l, _)| *l == lemma) {
                return Err(bad(&format!("duplicate lemma '{lemma}'")));
            }
            entries.push((lemma, variants));
        }
        if langs.is_empty() {
            return Err(StoreError::Lexicon {
                line: 0,
                reason: "no entries".into(),
            });
        }
        let fallback_lang = if langs.contains_key("en") {
            "en".to_string()
        } else {
            langs.keys().next().cloned().unwrap_or_default()
        };
        Ok(Self { langs, fallback_lang })
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.langs.keys().map(String::as_str)
    }

    pub fn lemmas(&self, lang: &str) -> Vec<&str> {
        self.langs
            .get(lang)
            .map(|e| e.iter().map(|(l, _)| l.as_str()).collect())
            .unwrap_or_default()
    }

    /// Surface variants of `lemma` in `lang`, as written in the lexicon.
    pub fn variants(&self, lang: &str, lemma: &str) -> Option<&[String]> {
        self.langs
            .get(lang)?
            .iter()
            .find(|(l, _)| l == lemma)
            .map(|(_, v)| v.as_slice())
    }
}

impl Default for KeywordLexicon {
    fn default() -> Self {
        Self::parse(DEFAULT_KEYWORDS).expect("bundled keyword lexicon is valid")
    }
}

/// Matchable variants for one language: per lemma, the token sequences of
/// its folded variants, longest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariantTable {
    pub entries: Vec<(String, Vec<Vec<String>>)>,
}

impl VariantTable {
    pub fn lemmas(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(l, _)| l.as_str())
    }

    /// Variants of `lemma` re-joined with single spaces.
    pub fn variant_strings(&self, lemma: &str) -> Vec<String> {
        self.entries
            .iter()
            .find(|(l, _)| l == lemma)
            .map(|(_, v)| v.iter().map(|p| p.join(" ")).collect())
            .unwrap_or_default()
    }

    fn from_pairs<'a>(pairs: impl Iterator<Item = (&'a str, Vec<&'a str>)>) -> Self {
        let entries = pairs
            .map(|(lemma, variants)| {
                let mut pats: Vec<Vec<String>> = Vec::new();
                for v in variants {
                    let toks: Vec<String> = tokenize(&normalize_text(v)).iter().map(|t| match_key(t).to_string()).collect();
                    if !toks.is_empty() && !pats.contains(&toks) {
                        pats.push(toks);
                    }
                }
                pats.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
                (lemma.to_string(), pats)
            })
            .collect();
        Self { entries }
    }
}

/// The variant table for `lang`. A language missing from the lexicon gets
/// the fallback language's lemmas, each matching only itself.
pub fn expand_variants(lexicon: &KeywordLexicon, lang: &str) -> VariantTable {
    match lexicon.langs.get(lang) {
        Some(entries) => VariantTable::from_pairs(
            entries
                .iter()
                .map(|(l, v)| (l.as_str(), v.iter().map(String::as_str).collect())),
        ),
        None => VariantTable::from_pairs(lexicon.lemmas(&lexicon.fallback_lang).into_iter().map(|l| (l, vec![l]))),
    }
}

/// Token form used for matching: the token with a leading elided clitic
/// removed.
pub fn match_key(token: &str) -> &str {
    if let Some((head, rest)) = token.split_once('\'') {
        if !rest.is_empty() && ELISION_PREFIXES.contains(&head) {
            return rest;
        }
    }
    token
}

/// One keyword occurrence: `len` tokens starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeywordMatch {
    pub lemma: usize,
    pub start: usize,
    pub len: usize,
}

/// Occurrences of every lemma, scanned independently per lemma left to right
/// without overlap (the longest variant wins at a position). Sorted by
/// position, then lemma index.
pub fn find_matches<S: AsRef<str>>(tokens: &[S], table: &VariantTable) -> Vec<KeywordMatch> {
    let keys: Vec<&str> = tokens.iter().map(|t| match_key(t.as_ref())).collect();
    let mut out = Vec::new();
    for (li, (_, pats)) in table.entries.iter().enumerate() {
        let mut i = 0;
        while i < keys.len() {
            let hit = pats
                .iter()
                .find(|p| i + p.len() <= keys.len() && p.iter().zip(&keys[i..]).all(|(a, b)| a == b));
            match hit {
                Some(p) => {
                    out.push(KeywordMatch {
                        lemma: li,
                        start: i,
                        len: p.len(),
                    });
                    i += p.len();
                }
                None => i += 1,
            }
        }
    }
    out.sort_by_key(|m| (m.start, m.lemma));
    out
}

pub fn contains_any<S: AsRef<str>>(tokens: &[S], table: &VariantTable) -> bool {
    !find_matches(tokens, table).is_empty()
}

/// Per-lemma occurrence counts; lemmas with no occurrence are omitted.
pub fn count_occurrences<S: AsRef<str>>(tokens: &[S], table: &VariantTable) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for m in find_matches(tokens, table) {
        *counts.entry(table.entries[m.lemma].0.clone()).or_insert(0) += 1;
    }
    counts
}

/// A context window around one or more occurrences of a lemma.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextSnippet {
    pub lemma: String,
    /// First and last token index, inclusive.
    pub first: usize,
    pub last: usize,
    pub text: String,
}

/// For each occurrence, tokens `[p - window, p + len - 1 + window]` clipped
/// to the document; overlapping windows of the same lemma are merged.
/// Snippets are ordered by start token, then lemma order.
pub fn extract_context_snippets<S: AsRef<str>>(
    tokens: &[S],
    table: &VariantTable,
    window: usize,
) -> Vec<ContextSnippet> {
    if tokens.is_empty() {
        return Vec::new();
    }
    let mut spans: Vec<Vec<(usize, usize)>> = vec![Vec::new(); table.entries.len()];
    for m in find_matches(tokens, table) {
        let first = m.start.saturating_sub(window);
        let last = (m.start + m.len - 1 + window).min(tokens.len() - 1);
        let lemma_spans = &mut spans[m.lemma];
        match lemma_spans.last_mut() {
            Some(prev) if first <= prev.1 => prev.1 = prev.1.max(last),
            _ => lemma_spans.push((first, last)),
        }
    }
    let mut out: Vec<(usize, usize, usize)> = spans
        .iter()
        .enumerate()
        .flat_map(|(li, s)| s.iter().map(move |&(a, b)| (a, li, b)))
        .collect();
    out.sort();
    out.into_iter()
        .map(|(first, li, last)| ContextSnippet {
            lemma: table.entries[li].0.clone(),
            first,
            last,
            text: tokens[first..=last].iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" "),
        })
        .collect()
}

/// FNV-1a 64 of the lowercased, whitespace-collapsed snippet.
pub fn snippet_hash(snippet: &str) -> u64 {
    let norm = snippet.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    fnv1a64(norm.as_bytes())
}

/// Keeps the first snippet per hash, preserving order.
pub fn deduplicate_snippets<S: AsRef<str>>(snips: Vec<S>) -> Vec<S> {
    let mut seen = HashSet::new();
    snips.into_iter().filter(|s| seen.insert(snippet_hash(s.as_ref()))).collect()
}

/// One exported snippet row. `count` is the number of occurrences of
/// `keyword` on the source page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnippetRecord {
    pub domain: String,
    pub url: String,
    pub lang: String,
    pub sector: String,
    pub token_count: usize,
    pub date_seen: String,
    pub keyword: String,
    pub count: usize,
    #[serde(with = "hex_u64")]
    pub snippet_hash: u64,
    pub snippet: String,
}

impl SnippetRecord {
    fn sort_key(&self) -> (&str, &str, u64, &str, &str) {
        (&self.domain, &self.url, self.snippet_hash, &self.keyword, &self.snippet)
    }
}

mod hex_u64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:016x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let s = String::deserialize(d)?;
        u64::from_str_radix(&s, 16).map_err(serde::de::Error::custom)
    }
}

/// Unique on (domain, url, snippet_hash); the first record of each key is kept.
pub fn deduplicate_records(records: Vec<SnippetRecord>) -> Vec<SnippetRecord> {
    let mut seen = HashSet::new();
    records
        .into_iter()
        .filter(|r| seen.insert((r.domain.clone(), r.url.clone(), r.snippet_hash)))
        .collect()
}

pub(crate) fn csv_writer<W: io::Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

/// Writes the results CSV sorted by (domain, url, snippet_hash). The file is
/// replaced atomically.
pub fn aggregate_results_to_csv(records: &[SnippetRecord], path: &Path) -> Result<(), StoreError> {
    let mut sorted: Vec<&SnippetRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    write_atomic(path, |w| {
        let mut wr = csv_writer(w);
        wr.write_record(RESULTS_HEADER)?;
        for r in &sorted {
            wr.serialize(r)?;
        }
        wr.flush()
    })?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<SnippetRecord>, StoreError> {
    let mut rd = csv::Reader::from_path(path)?;
    let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
    if header != RESULTS_HEADER {
        return Err(StoreError::BadRow {
            row: 0,
            reason: format!("unexpected header {header:?}"),
        });
    }
    Ok(rd.deserialize().collect::<Result<Vec<SnippetRecord>, _>>()?)
}

/// One `<domain>.txt` per domain under `dir`, one snippet per line, in the
/// same order as the CSV export.
pub fn export_plain_text(records: &[SnippetRecord], dir: &Path) -> Result<Vec<std::path::PathBuf>, StoreError> {
    fs::create_dir_all(dir)?;
    let mut by_domain: BTreeMap<&str, Vec<&SnippetRecord>> = BTreeMap::new();
    for r in records {
        by_domain.entry(&r.domain).or_default().push(r);
    }
    let mut written = Vec::new();
    for (domain, mut recs) in by_domain {
        recs.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        let path = dir.join(format!("{domain}.txt"));
        write_atomic(&path, |w| {
            for r in recs {
                writeln!(w, "{}", r.snippet.split_whitespace().collect::<Vec<_>>().join(" "))?;
            }
            Ok(())
        })?;
        written.push(path);
    }
    Ok(written)
}
