//! Term candidates: n-gram statistics, target-word filtering, the
//! median + 3σ frequency cut and sector-level TF-IDF.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extractor::{normalize_text, tokenize};

const DEFAULT_TARGETS: &str = include_str!("../data/targets.txt");
const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");

pub const NGRAM_MIN: usize = 2;
pub const NGRAM_MAX: usize = 5;
pub const DEFAULT_TOP_K: usize = 20;
pub const DEFAULT_TFIDF_QUANTILE: f64 = 0.95;

/// Legal-form tokens ignored when turning company names into blocked tokens.
const LEGAL_FORMS: &[&str] = &[
    "sa", "sas", "sasu", "sarl", "se", "sca", "snc", "ag", "gmbh", "kg", "kgaa", "inc", "incorporated", "ltd",
    "limited", "plc", "llc", "llp", "lp", "corp", "corporation", "co", "nv", "bv", "ab", "oy", "oyj", "asa", "spa",
    "srl", "sl", "sau", "kk", "pty", "bhd",
];

#[derive(Debug, Error)]
pub enum TermError {
    #[error("n-gram range [{0}, {1}] is invalid (need 2 <= min <= max)")]
    BadRange(usize, usize),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("quantile {0} outside [0, 1]")]
    BadQuantile(f64),
}

fn check_range(n_min: usize, n_max: usize) -> Result<(), TermError> {
    if n_min < 2 || n_min > n_max {
        return Err(TermError::BadRange(n_min, n_max));
    }
    Ok(())
}

/// Every contiguous window of `n_min..=n_max` tokens, space-joined, grouped
/// by length and then by start position.
pub fn generate_ngrams<S: AsRef<str>>(tokens: &[S], n_min: usize, n_max: usize) -> Result<Vec<String>, TermError> {
    check_range(n_min, n_max)?;
    let mut out = Vec::new();
    for n in n_min..=n_max {
        for w in tokens.windows(n) {
            out.push(w.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" "));
        }
    }
    Ok(out)
}

/// Expected number of windows: Σ max(0, |T| − n + 1).
pub fn ngram_count(len: usize, n_min: usize, n_max: usize) -> usize {
    (n_min..=n_max).map(|n| (len + 1).saturating_sub(n)).sum()
}

/// N-gram multiplicities of one document plus the total number generated.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DocumentNgrams {
    pub counts: HashMap<String, usize>,
    pub total: usize,
}

impl DocumentNgrams {
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S], n_min: usize, n_max: usize) -> Result<Self, TermError> {
        let grams = generate_ngrams(tokens, n_min, n_max)?;
        let total = grams.len();
        let mut counts = HashMap::new();
        for g in grams {
            *counts.entry(g).or_insert(0) += 1;
        }
        Ok(Self { counts, total })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramStat {
    pub ngram: String,
    pub freq: usize,
    pub domain: String,
    pub sector: String,
}

impl NgramStat {
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.ngram.split(' ')
    }
}

/// Words of which an n-gram must contain at least one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetWordSet {
    pub words: BTreeSet<String>,
}

impl TargetWordSet {
    /// One word per line, `#` comments allowed. Words are accent-folded and
    /// lowercased.
    pub fn parse(text: &str) -> Self {
        Self {
            words: parse_word_list(text),
        }
    }

    pub fn load(path: &Path) -> Result<Self, TermError> {
        Ok(Self::parse(&fs::read_to_string(path)?))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }
}

impl Default for TargetWordSet {
    fn default() -> Self {
        Self::parse(DEFAULT_TARGETS)
    }
}

fn parse_word_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .flat_map(|l| tokenize(&normalize_text(l)))
        .collect()
}

pub fn default_stopwords() -> BTreeSet<String> {
    parse_word_list(DEFAULT_STOPWORDS)
}

pub fn load_stopwords(path: &Path) -> Result<BTreeSet<String>, TermError> {
    Ok(parse_word_list(&fs::read_to_string(path)?))
}

pub fn remove_stopwords<S: AsRef<str>>(tokens: &[S], stopwords: &BTreeSet<String>) -> Vec<String> {
    tokens
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| !stopwords.contains(*t))
        .map(String::from)
        .collect()
}

/// Tokens identifying the given companies, legal forms and one-letter
/// tokens excluded.
pub fn company_name_tokens<S: AsRef<str>>(names: &[S]) -> BTreeSet<String> {
    names
        .iter()
        .flat_map(|n| tokenize(&normalize_text(n.as_ref())))
        .filter(|t| t.chars().count() > 1 && !LEGAL_FORMS.contains(&t.as_str()))
        .collect()
}

fn is_url_or_email_like(token: &str) -> bool {
    token.contains(['@', '.', '/', ':']) || matches!(token, "http" | "https" | "www")
}

fn has_digit(token: &str) -> bool {
    token.chars().any(char::is_numeric)
}

/// Lexical filter: drops n-grams holding a company-name, URL/email-shaped or
/// digit-bearing token, then keeps those with at least one target word.
pub fn filter_ngrams(
    stats: Vec<NgramStat>,
    company_tokens: &BTreeSet<String>,
    targets: &TargetWordSet,
) -> Vec<NgramStat> {
    stats
        .into_iter()
        .filter(|s| ngram_passes(&s.ngram, company_tokens, targets))
        .collect()
}

pub fn ngram_passes(ngram: &str, company_tokens: &BTreeSet<String>, targets: &TargetWordSet) -> bool {
    let toks: Vec<&str> = ngram.split(' ').collect();
    if toks
        .iter()
        .any(|t| company_tokens.contains(*t) || is_url_or_email_like(t) || has_digit(t))
    {
        return false;
    }
    toks.iter().any(|t| targets.contains(t))
}

/// `median + 3·σ` of the frequency distribution, σ being the population
/// standard deviation. `None` for an empty map.
pub fn threshold_value<K>(freqs: &BTreeMap<K, usize>) -> Option<f64> {
    if freqs.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = freqs.values().map(|&f| f as f64).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    };
    let mean = v.iter().sum::<f64>() / n as f64;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    Some(median + 3.0 * var.sqrt())
}

/// N-grams whose frequency is strictly above [`threshold_value`].
pub fn frequency_threshold<K: Ord + Clone>(freqs: &BTreeMap<K, usize>) -> BTreeSet<K> {
    let Some(t) = threshold_value(freqs) else {
        return BTreeSet::new();
    };
    freqs
        .iter()
        .filter(|(_, &f)| f as f64 > t)
        .map(|(k, _)| k.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermWeight {
    pub term: String,
    pub sector: String,
    pub weight: f64,
}

/// Σ_d tf(t,d)·idf(t) for each selected n-gram occurring in the sector,
/// with tf = count / total n-grams of d and idf = ln((1+N)/(1+df)) + 1.
pub fn raw_tfidf(docs: &[DocumentNgrams], selected: &BTreeSet<String>) -> BTreeMap<String, f64> {
    let n = docs.len() as f64;
    let mut out = BTreeMap::new();
    for term in selected {
        let df = docs.iter().filter(|d| d.counts.contains_key(term)).count();
        if df == 0 {
            continue;
        }
        let idf = ((1.0 + n) / (1.0 + df as f64)).ln() + 1.0;
        let w: f64 = docs
            .iter()
            .filter_map(|d| d.counts.get(term).map(|&c| c as f64 / d.total as f64 * idf))
            .sum();
        if w > 0.0 {
            out.insert(term.clone(), w);
        }
    }
    out
}

/// Sector TF-IDF divided by the sector maximum, so the top term weighs 1.0.
/// Terms absent from every document are left out.
pub fn compute_tfidf(sector: &str, docs: &[DocumentNgrams], selected: &BTreeSet<String>) -> Vec<TermWeight> {
    let raw = raw_tfidf(docs, selected);
    let max = raw.values().copied().fold(0.0_f64, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    raw.into_iter()
        .map(|(term, w)| TermWeight {
            term,
            sector: sector.to_string(),
            weight: if w == max { 1.0 } else { w / max },
        })
        .collect()
}

/// Highest weights first, ties by term; at most `k` entries.
pub fn top_terms(weights: &[TermWeight], k: usize) -> Vec<TermWeight> {
    let mut v = weights.to_vec();
    v.sort_by(|a, b| b.weight.total_cmp(&a.weight).then_with(|| a.term.cmp(&b.term)));
    v.truncate(k);
    v
}

/// Terms present in both lists, in `a`'s order, each once.
pub fn intersect_sectors<S: AsRef<str>, T: AsRef<str>>(a: &[S], b: &[T]) -> Vec<String> {
    let in_b: BTreeSet<&str> = b.iter().map(AsRef::as_ref).collect();
    let mut seen = BTreeSet::new();
    a.iter()
        .map(AsRef::as_ref)
        .filter(|t| in_b.contains(t) && seen.insert(*t))
        .map(String::from)
        .collect()
}

/// Linear-interpolation quantile of the weights.
pub fn weight_quantile(weights: &[TermWeight], q: f64) -> Result<Option<f64>, TermError> {
    if !(0.0..=1.0).contains(&q) {
        return Err(TermError::BadQuantile(q));
    }
    if weights.is_empty() {
        return Ok(None);
    }
    let mut v: Vec<f64> = weights.iter().map(|w| w.weight).collect();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)))
}

/// Terms whose weight reaches the `q` quantile of their sector.
pub fn quantile_candidates(weights: &[TermWeight], q: f64) -> Result<Vec<TermWeight>, TermError> {
    let Some(cut) = weight_quantile(weights, q)? else {
        return Ok(Vec::new());
    };
    Ok(top_terms(weights, weights.len())
        .into_iter()
        .filter(|w| w.weight >= cut)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn ngram_examples() {
        let mut g = generate_ngrams(&toks("a b c"), 2, 3).unwrap();
        g.sort();
        assert_eq!(g, ["a b", "a b c", "b c"]);
        assert!(generate_ngrams(&toks("a"), 2, 5).unwrap().is_empty());
        assert_eq!(generate_ngrams(&toks("a b c d e f"), 2, 5).unwrap().len(), 14);
        assert!(generate_ngrams(&toks("a b"), 1, 5).is_err());
        assert!(generate_ngrams(&toks("a b"), 4, 3).is_err());
    }

    #[test]
    fn filter_examples() {
        let targets = TargetWordSet::default();
        let company = company_name_tokens(&["Acme SA"]);
        assert_eq!(company.iter().collect::<Vec<_>>(), ["acme"]);
        let pass = |g: &str| ngram_passes(g, &company, &targets);
        assert!(pass("sustainable development"));
        assert!(!pass("annual meeting"));
        assert!(!pass("acme innovation"));
        assert!(!pass("innovation 2020"));
        assert!(!pass("www innovation"));
        assert!(pass("new product"));
    }

    #[test]
    fn three_sigma_fixture() {
        let mut f: BTreeMap<String, usize> = (0..100).map(|i| (format!("g{i:03}"), 1)).collect();
        f.insert("hot".into(), 20);
        let t = threshold_value(&f).unwrap();
        assert!((t - 6.6429).abs() < 1e-3, "{t}");
        assert_eq!(frequency_threshold(&f).into_iter().collect::<Vec<_>>(), ["hot"]);

        let flat: BTreeMap<_, _> = (0..10).map(|i| (i, 7)).collect();
        assert!(frequency_threshold(&flat).is_empty());
        let one: BTreeMap<_, _> = [("x", 3)].into_iter().collect();
        assert!(frequency_threshold(&one).is_empty());
        assert!(frequency_threshold::<String>(&BTreeMap::new()).is_empty());
    }

    #[test]
    fn even_median_is_midpoint() {
        let f: BTreeMap<_, _> = [("a", 1), ("b", 3)].into_iter().collect();
        assert_eq!(threshold_value(&f).unwrap(), 2.0 + 3.0);
    }

    #[test]
    fn single_doc_single_ngram() {
        let d = DocumentNgrams::from_tokens(&toks("new product"), 2, 5).unwrap();
        let sel: BTreeSet<String> = ["new product".to_string()].into();
        let w = compute_tfidf("S", &[d], &sel);
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].weight, 1.0);
    }

    #[test]
    fn empty_sector() {
        assert!(compute_tfidf("S", &[], &BTreeSet::new()).is_empty());
    }

    #[test]
    fn top_and_intersection() {
        let w = |t: &str, x: f64| TermWeight {
            term: t.into(),
            sector: "S".into(),
            weight: x,
        };
        let list = vec![w("b", 0.5), w("a", 1.0), w("c", 0.5)];
        let top = top_terms(&list, 10);
        assert_eq!(top.iter().map(|t| t.term.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
        assert_eq!(top_terms(&list, 1)[0].weight, 1.0);
        assert!(intersect_sectors(&["x"], &["y"]).is_empty());
        assert_eq!(intersect_sectors(&["x", "y"], &["x", "y"]), ["x", "y"]);
    }

    #[test]
    fn quantiles() {
        let ws: Vec<TermWeight> = (1..=5)
            .map(|i| TermWeight {
                term: format!("t{i}"),
                sector: "S".into(),
                weight: i as f64 / 5.0,
            })
            .collect();
        assert!((weight_quantile(&ws, 0.5).unwrap().unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(quantile_candidates(&ws, 1.0).unwrap().len(), 1);
        assert!(weight_quantile(&ws, 1.5).is_err());
    }

    #[test]
    fn stopwords_collapse_connectives() {
        let sw = default_stopwords();
        assert_eq!(remove_stopwords(&toks("research and development of the product"), &sw), toks("research development product"));
    }
}
