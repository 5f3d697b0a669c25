//! Context-block dataset: sentence splitting, 5-sentence and token-window
//! blocks around lexicon terms, category annotation, rule-based PII
//! scrubbing and the 4-column export.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use regex::{Captures, Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extractor::{normalize_text, tokenize, tokenize_spans, TokenSpan};
use crate::store::{csv_writer, match_key};
use crate::util::write_atomic;

pub const DATASET_HEADER: [&str; 4] = ["word_labels", "keywords", "source", "sentence_anonymized"];
pub const DEFAULT_CATEGORY_COUNT: usize = 7;
pub const SENTENCES_BEFORE: usize = 2;
pub const SENTENCES_AFTER: usize = 2;
pub const DEFAULT_TOKEN_WIDTH: usize = 500;

const ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "etc.", "cf.", "vs.", "dr.", "mr.", "mrs.", "ms.", "prof.", "st.", "inc.", "ltd.", "co.", "corp.",
    "jr.", "sr.", "no.", "fig.", "approx.", "dept.", "est.", "s.a.", "n.v.", "b.v.", "s.p.a.", "mme.", "mlle.", "p.",
    "pp.", "vol.",
];

const LEGAL_SUFFIXES: &[&str] = &[
    "sa", "s.a.", "sas", "sarl", "se", "ag", "gmbh", "inc", "inc.", "ltd", "ltd.", "plc", "llc", "corp", "corp.",
    "corporation", "co", "co.", "nv", "n.v.", "bv", "b.v.", "ab", "oy", "oyj", "asa", "spa", "s.p.a.", "srl", "limited",
];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("category lexicon row {row}: {reason}")]
    Lexicon { row: usize, reason: String },
    #[error("index {index} out of range for {len} items")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("unknown block mode '{0}' (expected sentence5 or token500)")]
    BadMode(String),
    #[error("dataset header {0:?} does not match the expected columns")]
    BadHeader(Vec<String>),
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | '\u{201d}' | '\u{2019}' | '\u{bb}' | ')' | ']')
}

fn is_opener(c: char) -> bool {
    matches!(c, '"' | '\'' | '\u{201c}' | '\u{2018}' | '\u{ab}' | '(' | '[')
}

fn is_abbreviation(word: &str) -> bool {
    let w = word.trim_start_matches(is_opener);
    if ABBREVIATIONS.contains(&w.to_lowercase().as_str()) {
        return true;
    }
    // initials ("J.") and dotted acronyms ("U.S.")
    let body = w.trim_end_matches('.');
    !body.is_empty() && body.split('.').all(|p| p.chars().count() == 1 && p.chars().all(char::is_uppercase))
}

/// Sentences of `text`, as trimmed slices. A break follows `.`, `!` or `?`
/// (plus closing quotes or brackets) when whitespace and then an uppercase
/// letter or an opening quote come next. Periods ending a known
/// abbreviation or an initial never break.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut i = 0;
    while i < chars.len() {
        let (_, c) = chars[i];
        if !matches!(c, '.' | '!' | '?') {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < chars.len() && matches!(chars[j].1, '.' | '!' | '?') {
            j += 1;
        }
        while j < chars.len() && is_closer(chars[j].1) {
            j += 1;
        }
        let mut k = j;
        while k < chars.len() && chars[k].1.is_whitespace() {
            k += 1;
        }
        let boundary = k > j && k < chars.len() && (chars[k].1.is_uppercase() || is_opener(chars[k].1));
        if boundary && c == '.' && j == i + 1 {
            let word_start = chars[..i]
                .iter()
                .rposition(|(_, ch)| ch.is_whitespace())
                .map_or(0, |p| p + 1);
            let word = &text[chars[word_start].0..chars[j - 1].0 + chars[j - 1].1.len_utf8()];
            if is_abbreviation(word) {
                i = j;
                continue;
            }
        }
        if boundary {
            let end = chars[j - 1].0 + chars[j - 1].1.len_utf8();
            push_trimmed(&mut out, &text[start..end]);
            start = chars[k].0;
            i = k;
        } else {
            i = j;
        }
    }
    push_trimmed(&mut out, &text[start..]);
    out
}

fn push_trimmed<'a>(out: &mut Vec<&'a str>, s: &'a str) {
    let t = s.trim();
    if !t.is_empty() {
        out.push(t);
    }
}

/// Sentences `[i - before, i + after]`, clipped, joined by single spaces.
pub fn extract_sentence_block<S: AsRef<str>>(
    sentences: &[S],
    i: usize,
    before: usize,
    after: usize,
) -> Result<String, DatasetError> {
    let (lo, hi) = sentence_block_range(sentences.len(), i, before, after)?;
    Ok(sentences[lo..=hi].iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" "))
}

pub fn sentence_block_range(len: usize, i: usize, before: usize, after: usize) -> Result<(usize, usize), DatasetError> {
    if i >= len {
        return Err(DatasetError::IndexOutOfRange { index: i, len });
    }
    Ok((i.saturating_sub(before), (i + after).min(len - 1)))
}

/// Token indices `[p - width, p + width]`, clipped.
pub fn token_block_range(len: usize, p: usize, width: usize) -> Result<(usize, usize), DatasetError> {
    if p >= len {
        return Err(DatasetError::IndexOutOfRange { index: p, len });
    }
    Ok((p.saturating_sub(width), (p + width).min(len - 1)))
}

/// The slice of `text` covering tokens `[p - width, p + width]`.
pub fn extract_token_block<'a>(
    text: &'a str,
    spans: &[TokenSpan],
    p: usize,
    width: usize,
) -> Result<&'a str, DatasetError> {
    let (lo, hi) = token_block_range(spans.len(), p, width)?;
    Ok(&text[spans[lo].start..spans[hi].end])
}

/// Term → thematic category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryLexicon {
    terms: BTreeMap<String, String>,
    categories: BTreeSet<String>,
}

/// Lookup key for a lexicon term: folded tokens joined by single spaces.
pub fn term_key(term: &str) -> String {
    tokenize(&normalize_text(term))
        .iter()
        .map(|t| match_key(t))
        .collect::<Vec<_>>()
        .join(" ")
}

impl CategoryLexicon {
    /// Reads a `term,category` CSV. A term listed twice must map to the same
    /// category both times.
    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header: Vec<String> = rd.headers()?.iter().map(|h| h.to_ascii_lowercase()).collect();
        if header != ["term", "category"] {
            return Err(DatasetError::Lexicon {
                row: 1,
                reason: format!("expected header term,category, got {header:?}"),
            });
        }
        let mut terms = BTreeMap::new();
        let mut categories = BTreeSet::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let row = i + 2;
            let (term, cat) = (rec.get(0).unwrap_or(""), rec.get(1).unwrap_or(""));
            let key = term_key(term);
            if key.is_empty() || cat.is_empty() {
                return Err(DatasetError::Lexicon {
                    row,
                    reason: "empty term or category".into(),
                });
            }
            if let Some(prev) = terms.insert(key.clone(), cat.to_string()) {
                if prev != cat {
                    return Err(DatasetError::Lexicon {
                        row,
                        reason: format!("term '{key}' mapped to both '{prev}' and '{cat}'"),
                    });
                }
            }
            categories.insert(cat.to_string());
        }
        Ok(Self { terms, categories })
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.categories.iter().map(String::as_str)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, &str)> {
        self.terms.iter().map(|(t, c)| (t.as_str(), c.as_str()))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn check_category_count(&self, expected: usize) -> Result<(), DatasetError> {
        if self.categories.len() != expected {
            return Err(DatasetError::Lexicon {
                row: 0,
                reason: format!("expected {expected} categories, found {}", self.categories.len()),
            });
        }
        Ok(())
    }
}

/// Category of `term`, or `None` when the lexicon does not list it.
pub fn annotate<'a>(term: &str, lexicon: &'a CategoryLexicon) -> Option<&'a str> {
    lexicon.terms.get(&term_key(term)).map(String::as_str)
}

/// Rule-based scrubber replacing e-mail addresses, URLs, phone numbers and
/// company names with placeholders in a single left-to-right pass.
#[derive(Debug, Clone)]
pub struct Anonymizer {
    re: Regex,
}

impl Anonymizer {
    pub fn new<S: AsRef<str>>(company_names: &[S]) -> Self {
        let mut names: BTreeSet<String> = BTreeSet::new();
        for n in company_names {
            let n = n.as_ref().split_whitespace().collect::<Vec<_>>().join(" ");
            if n.is_empty() {
                continue;
            }
            let mut words: Vec<&str> = n.split(' ').collect();
            while words.len() > 1 && LEGAL_SUFFIXES.contains(&words[words.len() - 1].to_lowercase().as_str()) {
                words.pop();
            }
            let short = words.join(" ");
            if short.chars().count() > 1 {
                names.insert(short);
            }
            names.insert(n);
        }
        let mut names: Vec<String> = names.into_iter().collect();
        names.sort_by(|a, b| b.chars().count().cmp(&a.chars().count()).then_with(|| a.cmp(b)));
        let mut alts = vec![
            r"(?P<keep><(?:EMAIL|URL|PHONE|ORG)>)".to_string(),
            r"(?P<email>[\w.%+-]+@[\w-]+(?:\.[\w-]+)*\.[A-Za-z]{2,})".to_string(),
            r#"(?P<url>(?:https?://|www\.)[^\s<>"]+)"#.to_string(),
            r"(?P<phone>\+?\(?\d[\d ().-]{6,}\d)".to_string(),
        ];
        if !names.is_empty() {
            let body = names
                .iter()
                .map(|n| {
                    let esc = regex::escape(n);
                    let lead = if n.starts_with(|c: char| c.is_alphanumeric() || c == '_') { r"\b" } else { "" };
                    let trail = if n.ends_with(|c: char| c.is_alphanumeric() || c == '_') { r"\b" } else { "" };
                    format!("{lead}{esc}{trail}")
                })
                .collect::<Vec<_>>()
                .join("|");
            alts.push(format!("(?P<org>{body})"));
        }
        let re = RegexBuilder::new(&alts.join("|"))
            .case_insensitive(true)
            .build()
            .expect("anonymizer pattern compiles");
        Self { re }
    }

    pub fn anonymize(&self, text: &str) -> String {
        self.re
            .replace_all(text, |c: &Captures| {
                if let Some(m) = c.name("keep") {
                    return m.as_str().to_string();
                }
                if c.name("email").is_some() {
                    return "<EMAIL>".into();
                }
                if let Some(m) = c.name("url") {
                    let s = m.as_str();
                    let core = s.trim_end_matches(|ch: char| ".,;:!?)]'\"".contains(ch));
                    return format!("<URL>{}", &s[core.len()..]);
                }
                if let Some(m) = c.name("phone") {
                    return if looks_like_phone(m.as_str()) {
                        "<PHONE>".into()
                    } else {
                        m.as_str().to_string()
                    };
                }
                "<ORG>".into()
            })
            .into_owned()
    }
}

/// 8 to 15 digits that are not simply a list of years.
fn looks_like_phone(s: &str) -> bool {
    let digits = s.chars().filter(char::is_ascii_digit).count();
    if !(8..=15).contains(&digits) {
        return false;
    }
    let groups: Vec<&str> = s.split(|c: char| !c.is_ascii_digit()).filter(|g| !g.is_empty()).collect();
    let all_years = groups
        .iter()
        .all(|g| g.len() == 4 && g.parse::<u32>().is_ok_and(|y| (1900..=2099).contains(&y)));
    !all_years
}

pub fn anonymize<S: AsRef<str>>(text: &str, company_names: &[S]) -> String {
    Anonymizer::new(company_names).anonymize(text)
}

/// Patterns whose matches must never survive anonymization.
pub fn pii_patterns() -> [Regex; 3] {
    [
        Regex::new(r"[\w.%+-]+@[\w-]+(?:\.[\w-]+)*\.[A-Za-z]{2,}").expect("static"),
        Regex::new(r"(?i)(?:https?://|www\.)\S").expect("static"),
        Regex::new(r"\+?\(?\d(?:[ ().-]?\d){7,14}").expect("static"),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BlockMode {
    #[default]
    #[serde(rename = "sentence5")]
    Sentence5,
    #[serde(rename = "token500")]
    Token500,
}

impl FromStr for BlockMode {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sentence5" => Ok(Self::Sentence5),
            "token500" => Ok(Self::Token500),
            other => Err(DatasetError::BadMode(other.to_string())),
        }
    }
}

impl fmt::Display for BlockMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sentence5 => "sentence5",
            Self::Token500 => "token500",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextExample {
    pub term: String,
    pub category: String,
    pub block: String,
    pub mode: BlockMode,
    pub source: String,
    /// Sentence index (sentence5) or token offset (token500) of the match.
    pub offset: usize,
}

fn find_term(keys: &[String], pat: &[&str]) -> Vec<usize> {
    if pat.is_empty() || pat.len() > keys.len() {
        return Vec::new();
    }
    (0..=keys.len() - pat.len())
        .filter(|&i| pat.iter().zip(&keys[i..]).all(|(a, b)| a == b))
        .collect()
}

fn match_keys(tokens: &[TokenSpan]) -> Vec<String> {
    tokens
        .iter()
        .map(|t| match_key(&normalize_text(&t.text)).to_string())
        .collect()
}

/// Context blocks for every occurrence of the given terms in one document.
/// Sentence mode yields one example per (term, sentence); token mode one per
/// occurrence. Terms are matched on folded tokens.
pub fn build_examples(
    source: &str,
    text: &str,
    terms: &[(String, String)],
    mode: BlockMode,
    width: usize,
) -> Vec<ContextExample> {
    let mut out = Vec::new();
    match mode {
        BlockMode::Sentence5 => {
            let sentences = split_sentences(text);
            let keys: Vec<Vec<String>> = sentences.iter().map(|s| match_keys(&tokenize_spans(s))).collect();
            for (term, category) in terms {
                let pat: Vec<&str> = term.split(' ').collect();
                for (i, k) in keys.iter().enumerate() {
                    if find_term(k, &pat).is_empty() {
                        continue;
                    }
                    let block = extract_sentence_block(&sentences, i, SENTENCES_BEFORE, SENTENCES_AFTER)
                        .expect("index within sentences");
                    out.push(ContextExample {
                        term: term.clone(),
                        category: category.clone(),
                        block,
                        mode,
                        source: source.to_string(),
                        offset: i,
                    });
                }
            }
        }
        BlockMode::Token500 => {
            let spans = tokenize_spans(text);
            let keys = match_keys(&spans);
            for (term, category) in terms {
                let pat: Vec<&str> = term.split(' ').collect();
                for p in find_term(&keys, &pat) {
                    let (lo, hi) = token_block_range(spans.len(), p, width).expect("occurrence within tokens");
                    let hi = hi.max(p + pat.len() - 1);
                    out.push(ContextExample {
                        term: term.clone(),
                        category: category.clone(),
                        block: text[spans[lo].start..spans[hi].end].to_string(),
                        mode,
                        source: source.to_string(),
                        offset: p,
                    });
                }
            }
        }
    }
    out.sort_by(|a, b| (a.offset, &a.term).cmp(&(b.offset, &b.term)));
    out
}

/// Whether `block` contains `term` as consecutive folded tokens.
pub fn block_contains_term(block: &str, term: &str) -> bool {
    let keys = match_keys(&tokenize_spans(block));
    let pat: Vec<&str> = term.split(' ').collect();
    !find_term(&keys, &pat).is_empty()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub word_labels: String,
    pub keywords: String,
    pub source: String,
    pub sentence_anonymized: String,
    #[serde(skip)]
    pub offset: usize,
}

impl DatasetRow {
    pub fn from_example(ex: &ContextExample, anonymizer: &Anonymizer) -> Self {
        Self {
            word_labels: ex.category.clone(),
            keywords: ex.term.clone(),
            source: ex.source.clone(),
            sentence_anonymized: anonymizer.anonymize(&ex.block),
            offset: ex.offset,
        }
    }
}

/// Writes the dataset CSV, rows ordered by (source, offset) with the
/// remaining columns as tie-breakers.
pub fn emit_dataset(rows: &[DatasetRow], path: &Path) -> Result<(), DatasetError> {
    let mut sorted: Vec<&DatasetRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.source, a.offset, &a.keywords, &a.word_labels, &a.sentence_anonymized).cmp(&(
            &b.source,
            b.offset,
            &b.keywords,
            &b.word_labels,
            &b.sentence_anonymized,
        ))
    });
    write_atomic(path, |w| {
        let mut wr = csv_writer(w);
        wr.write_record(DATASET_HEADER)?;
        for r in sorted {
            wr.serialize(r)?;
        }
        wr.flush()
    })?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRow>, DatasetError> {
    let mut rd = csv::Reader::from_path(path)?;
    let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
    if header != DATASET_HEADER {
        return Err(DatasetError::BadHeader(header));
    }
    Ok(rd.deserialize().collect::<Result<Vec<DatasetRow>, _>>()?)
}
