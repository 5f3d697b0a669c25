//! Offline language identification with rank-ordered character n-gram
//! profiles, and reconciliation with the language declared in the page.
//!
//! A profile keeps the `K` most frequent 1- to 4-character n-grams of a
//! language (words padded with one space on each side). A text is profiled the
//! same way and compared to every model by the out-of-place distance: the sum
//! over the text's n-grams of `|rank_text - rank_model|`, or `K` when the
//! model lacks the n-gram.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Profile size.
pub const PROFILE_SIZE: usize = 300;
/// Longest n-gram kept in a profile.
pub const MAX_NGRAM: usize = 4;
/// Texts shorter than this (in characters) are not classified.
pub const MIN_TEXT_CHARS: usize = 20;
/// Default confidence needed for the detector to override a declared language.
pub const DEFAULT_OVERRIDE_THRESHOLD: f64 = 0.5;

pub const UNDETERMINED: &str = "und";

/// The languages with a shipped profile.
pub const BUILTIN_LANGUAGES: [&str; 16] = [
    "ca", "da", "de", "en", "es", "fi", "fr", "it", "ko", "nl", "pl", "pt", "ru", "sv", "uk", "zh",
];

const BUILTIN_PROFILES: [(&str, &str); 16] = [
    ("ca", include_str!("../data/langid/ca.tsv")),
    ("da", include_str!("../data/langid/da.tsv")),
    ("de", include_str!("../data/langid/de.tsv")),
    ("en", include_str!("../data/langid/en.tsv")),
    ("es", include_str!("../data/langid/es.tsv")),
    ("fi", include_str!("../data/langid/fi.tsv")),
    ("fr", include_str!("../data/langid/fr.tsv")),
    ("it", include_str!("../data/langid/it.tsv")),
    ("ko", include_str!("../data/langid/ko.tsv")),
    ("nl", include_str!("../data/langid/nl.tsv")),
    ("pl", include_str!("../data/langid/pl.tsv")),
    ("pt", include_str!("../data/langid/pt.tsv")),
    ("ru", include_str!("../data/langid/ru.tsv")),
    ("sv", include_str!("../data/langid/sv.tsv")),
    ("uk", include_str!("../data/langid/uk.tsv")),
    ("zh", include_str!("../data/langid/zh.tsv")),
];

#[derive(Debug, Error)]
pub enum LangIdError {
    #[error("no language profiles loaded")]
    NoProfiles,
    #[error("profile '{lang}' line {line}: {reason}")]
    BadProfile { lang: String, line: usize, reason: String },
    #[error("cannot read profile {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Where a verdict's language came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LangSource {
    Declared,
    Detected,
    Reconciled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LangVerdict {
    pub lang: String,
    pub confidence: f64,
    pub source: LangSource,
}

impl LangVerdict {
    pub fn undetermined() -> Self {
        Self {
            lang: UNDETERMINED.to_string(),
            confidence: 0.0,
            source: LangSource::Detected,
        }
    }

    pub fn is_undetermined(&self) -> bool {
        self.lang == UNDETERMINED
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LangProfile {
    lang: String,
    ranks: HashMap<String, usize>,
}

impl LangProfile {
    pub fn lang(&self) -> &str {
        &self.lang
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    pub fn rank(&self, ngram: &str) -> Option<usize> {
        self.ranks.get(ngram).copied()
    }

    /// Profile of a running text.
    pub fn from_text(lang: &str, text: &str) -> Self {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for word in words(text) {
            add_word_ngrams(&word, 1, &mut counts);
        }
        Self::from_counts(lang, counts)
    }

    /// Profile of a weighted word list, e.g. a frequency dictionary.
    pub fn from_weighted_words<'a, I>(lang: &str, entries: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, u64)>,
    {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for (entry, weight) in entries {
            for word in words(entry) {
                add_word_ngrams(&word, weight, &mut counts);
            }
        }
        Self::from_counts(lang, counts)
    }

    fn from_counts(lang: &str, counts: HashMap<String, u64>) -> Self {
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(PROFILE_SIZE);
        let ranks = ranked.into_iter().enumerate().map(|(i, (g, _))| (g, i)).collect();
        Self {
            lang: lang.to_string(),
            ranks,
        }
    }

    /// Parses `ngram<TAB>rank` lines. The n-gram may carry leading or trailing
    /// spaces, so only the last tab separates the fields.
    pub fn parse(lang: &str, text: &str) -> Result<Self, LangIdError> {
        let bad = |line: usize, reason: String| LangIdError::BadProfile {
            lang: lang.to_string(),
            line,
            reason,
        };
        let mut ranks = HashMap::new();
        let mut seen_rank = vec![false; PROFILE_SIZE];
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (gram, rank) = line
                .rsplit_once('\t')
                .ok_or_else(|| bad(i + 1, "missing tab".into()))?;
            let rank: usize = rank.trim().parse().map_err(|_| bad(i + 1, format!("bad rank '{rank}'")))?;
            if rank >= PROFILE_SIZE {
                return Err(bad(i + 1, format!("rank {rank} outside 0..{PROFILE_SIZE}")));
            }
            if std::mem::replace(&mut seen_rank[rank], true) {
                return Err(bad(i + 1, format!("duplicate rank {rank}")));
            }
            let n = gram.chars().count();
            if n == 0 || n > MAX_NGRAM {
                return Err(bad(i + 1, format!("n-gram length {n}")));
            }
            if ranks.insert(gram.to_string(), rank).is_some() {
                return Err(bad(i + 1, format!("duplicate n-gram '{gram}'")));
            }
        }
        Ok(Self {
            lang: lang.to_string(),
            ranks,
        })
    }

    /// Serializes to `ngram<TAB>rank` lines in rank order.
    pub fn to_tsv(&self) -> String {
        let mut items: Vec<(&String, &usize)> = self.ranks.iter().collect();
        items.sort_by_key(|(_, r)| **r);
        items.into_iter().map(|(g, r)| format!("{g}\t{r}\n")).collect()
    }

    /// Out-of-place distance from `text_profile` to this model.
    pub fn distance(&self, text_profile: &LangProfile) -> usize {
        text_profile
            .ranks
            .iter()
            .map(|(g, &r)| match self.ranks.get(g) {
                Some(&m) => r.abs_diff(m),
                None => PROFILE_SIZE,
            })
            .sum()
    }
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphabetic())
        .filter(|w| !w.is_empty())
        .map(|w| w.chars().flat_map(char::to_lowercase).collect())
}

fn add_word_ngrams(word: &str, weight: u64, counts: &mut HashMap<String, u64>) {
    let padded: Vec<char> = std::iter::once(' ')
        .chain(word.chars())
        .chain(std::iter::once(' '))
        .collect();
    for n in 1..=MAX_NGRAM {
        for window in padded.windows(n) {
            if window.iter().all(|c| *c == ' ') {
                continue;
            }
            *counts.entry(window.iter().collect()).or_default() += weight;
        }
    }
}

/// A set of immutable profiles. Verdicts do not depend on load order.
#[derive(Debug, Clone)]
pub struct LanguageDetector {
    profiles: Vec<LangProfile>,
}

impl LanguageDetector {
    pub fn new(mut profiles: Vec<LangProfile>) -> Result<Self, LangIdError> {
        if profiles.is_empty() {
            return Err(LangIdError::NoProfiles);
        }
        profiles.sort_by(|a, b| a.lang.cmp(&b.lang));
        profiles.dedup_by(|a, b| a.lang == b.lang);
        Ok(Self { profiles })
    }

    /// The 16 shipped profiles.
    pub fn builtin() -> Self {
        let profiles = BUILTIN_PROFILES
            .iter()
            .map(|(lang, tsv)| LangProfile::parse(lang, tsv).expect("shipped profile is well-formed"))
            .collect();
        Self::new(profiles).expect("shipped profiles are not empty")
    }

    /// Loads every `<lang>.tsv` file in `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self, LangIdError> {
        let io_err = |source| LangIdError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut profiles = Vec::new();
        for entry in fs::read_dir(dir).map_err(io_err)? {
            let path = entry.map_err(io_err)?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("tsv") {
                continue;
            }
            let lang = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let text = fs::read_to_string(&path).map_err(|source| LangIdError::Io {
                path: path.display().to_string(),
                source,
            })?;
            profiles.push(LangProfile::parse(&lang, &text)?);
        }
        Self::new(profiles)
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.profiles.iter().map(|p| p.lang.as_str())
    }

    /// Distances to every profile, ascending, ties by language code.
    pub fn distances(&self, text: &str) -> Vec<(String, usize)> {
        let text_profile = LangProfile::from_text("", text);
        let mut out: Vec<(String, usize)> = self
            .profiles
            .iter()
            .map(|p| (p.lang.clone(), p.distance(&text_profile)))
            .collect();
        out.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        out
    }

    /// Minimum-distance language. Confidence is `1 - best / worst`.
    pub fn detect(&self, text: &str) -> LangVerdict {
        if text.chars().count() < MIN_TEXT_CHARS {
            return LangVerdict::undetermined();
        }
        let text_profile = LangProfile::from_text("", text);
        if text_profile.is_empty() {
            return LangVerdict::undetermined();
        }
        let mut best: Option<(&str, usize)> = None;
        let mut worst = 0usize;
        for p in &self.profiles {
            let d = p.distance(&text_profile);
            worst = worst.max(d);
            // Profiles are sorted by code, so strict `<` keeps the smallest
            // code on ties.
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((p.lang.as_str(), d));
            }
        }
        let (lang, best) = best.expect("detector holds at least one profile");
        let confidence = if worst == 0 {
            1.0
        } else {
            (1.0 - best as f64 / worst as f64).clamp(0.0, 1.0)
        };
        LangVerdict {
            lang: lang.to_string(),
            confidence,
            source: LangSource::Detected,
        }
    }
}

/// Free-function form of [`LanguageDetector::detect`].
pub fn detect_language(detector: &LanguageDetector, text: &str) -> LangVerdict {
    detector.detect(text)
}

fn primary_subtag(code: &str) -> Option<String> {
    let p = code.trim().split(['-', '_']).next()?.trim().to_ascii_lowercase();
    if p.is_empty() || p == UNDETERMINED {
        None
    } else {
        Some(p)
    }
}

/// Reconciles the declared page language with the detector's verdict.
///
/// Agreement keeps the shared code; a missing side defers to the other; on
/// disagreement the detector wins when its confidence reaches `threshold`.
pub fn validate(declared: Option<&str>, detected: &LangVerdict, threshold: f64) -> LangVerdict {
    let declared = declared.and_then(primary_subtag);
    let detected_code = primary_subtag(&detected.lang);
    match (declared, detected_code) {
        (None, None) => LangVerdict::undetermined(),
        (None, Some(d)) => LangVerdict {
            lang: d,
            confidence: detected.confidence,
            source: LangSource::Detected,
        },
        (Some(decl), None) => LangVerdict {
            lang: decl,
            confidence: 0.0,
            source: LangSource::Declared,
        },
        (Some(decl), Some(d)) if decl == d => LangVerdict {
            lang: d,
            confidence: detected.confidence,
            source: LangSource::Reconciled,
        },
        (Some(decl), Some(d)) => {
            if detected.confidence >= threshold {
                LangVerdict {
                    lang: d,
                    confidence: detected.confidence,
                    source: LangSource::Detected,
                }
            } else {
                LangVerdict {
                    lang: decl,
                    confidence: detected.confidence,
                    source: LangSource::Declared,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn verdict(lang: &str, confidence: f64) -> LangVerdict {
        LangVerdict {
            lang: lang.into(),
            confidence,
            source: LangSource::Detected,
        }
    }

    #[test]
    fn builtin_profiles_are_complete() {
        let det = LanguageDetector::builtin();
        assert_eq!(det.languages().collect::<Vec<_>>(), BUILTIN_LANGUAGES);
        for p in &det.profiles {
            assert_eq!(p.len(), PROFILE_SIZE, "{}", p.lang);
            let mut ranks: Vec<usize> = p.ranks.values().copied().collect();
            ranks.sort_unstable();
            assert_eq!(ranks, (0..PROFILE_SIZE).collect::<Vec<_>>());
        }
    }

    #[test]
    fn short_text_is_undetermined() {
        let det = LanguageDetector::builtin();
        let v = det.detect("");
        assert_eq!((v.lang.as_str(), v.confidence), ("und", 0.0));
        assert!(det.detect("Bonjour à tous").is_undetermined());
        assert!(det.detect("12345 67890 12345 67890 !!").is_undetermined());
    }

    #[test]
    fn french_sample() {
        let det = LanguageDetector::builtin();
        let text = "Notre entreprise investit chaque année dans la recherche et le développement \
                    afin de proposer des solutions innovantes à ses clients. La stratégie du groupe \
                    repose sur une démarche de design centrée sur les usages et sur la qualité.";
        let v = det.detect(text);
        assert_eq!(v.lang, "fr");
        assert!(v.confidence > 0.0 && v.confidence <= 1.0);
    }

    #[test]
    fn self_match_has_zero_distance() {
        let text = "Die Forschung und Entwicklung neuer Produkte gehört zu den wichtigsten \
                    Aufgaben unseres Unternehmens, das seit vielen Jahren international tätig ist.";
        let own = LangProfile::from_text("de", text);
        let mut profiles: Vec<LangProfile> = LanguageDetector::builtin()
            .profiles
            .into_iter()
            .filter(|p| p.lang != "de")
            .collect();
        profiles.push(own);
        let det = LanguageDetector::new(profiles).unwrap();
        let d = det.distances(text);
        assert_eq!(d[0], ("de".to_string(), 0));
        let v = det.detect(text);
        assert_eq!(v.lang, "de");
        assert_eq!(v.confidence, 1.0);
    }

    #[test]
    fn no_profiles_is_a_configuration_error() {
        assert!(matches!(LanguageDetector::new(vec![]), Err(LangIdError::NoProfiles)));
    }

    #[test]
    fn profile_tsv_round_trip_and_validation() {
        let p = LangProfile::from_text("xx", "hello world, hello there");
        let back = LangProfile::parse("xx", &p.to_tsv()).unwrap();
        assert_eq!(p, back);
        assert!(LangProfile::parse("xx", "ab\t0\ncd\t0\n").is_err());
        assert!(LangProfile::parse("xx", "ab\t300\n").is_err());
        assert!(LangProfile::parse("xx", "no tab here\n").is_err());
        // Padding spaces are part of the n-gram.
        let padded = LangProfile::parse("xx", " th\t0\nhe \t1\n").unwrap();
        assert_eq!(padded.rank(" th"), Some(0));
        assert_eq!(padded.rank("he "), Some(1));
    }

    #[test]
    fn load_order_does_not_matter() {
        let det = LanguageDetector::builtin();
        let mut reversed = det.profiles.clone();
        reversed.reverse();
        let det2 = LanguageDetector::new(reversed).unwrap();
        let text = "Vi arbetar varje dag med forskning och utveckling för att skapa nya produkter.";
        assert_eq!(det.detect(text), det2.detect(text));
    }

    #[test]
    fn validate_rules() {
        assert_eq!(validate(Some("fr"), &verdict("fr", 0.9), 0.5).lang, "fr");
        assert_eq!(validate(None, &verdict("en", 0.8), 0.5).lang, "en");
        assert_eq!(validate(Some("en"), &verdict("de", 0.9), 0.5).lang, "de");
        assert_eq!(validate(Some("en"), &verdict("de", 0.2), 0.5).lang, "en");
        assert_eq!(validate(None, &LangVerdict::undetermined(), 0.5).lang, "und");
        assert_eq!(validate(Some("en-US"), &LangVerdict::undetermined(), 0.5).lang, "en");
        assert_eq!(validate(Some("und"), &LangVerdict::undetermined(), 0.5).lang, "und");
        assert_eq!(validate(Some("fr"), &verdict("fr", 0.9), 0.5).source, LangSource::Reconciled);
    }
}
