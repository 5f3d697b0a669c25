//! HTML to text: whitelisted-tag extraction, normalization, tokenization and
//! the declared `lang` attribute.

use scraper::{ElementRef, Html, Node};
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Elements whose text is kept.
pub const TEXT_TAGS: [&str; 4] = ["title", "p", "h1", "h2"];

const SKIPPED_TAGS: [&str; 4] = ["script", "style", "noscript", "template"];

/// Minimum token count for a crawled web page.
pub const DEFAULT_MIN_TOKENS_PAGE: usize = 50;
/// Minimum token count for an annual report.
pub const DEFAULT_MIN_TOKENS_REPORT: usize = 1000;

/// How accented Latin letters are treated by [`normalize_text_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccentMode {
    /// `é` becomes `e`.
    #[default]
    Fold,
    /// The accented letter is deleted.
    Remove,
    /// Accents are left untouched; only whitespace is normalized.
    Keep,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedText {
    pub text: String,
    pub tokens: Vec<String>,
    pub token_count: usize,
    pub declared_lang: Option<String>,
}

impl ExtractedText {
    pub fn from_html(html: &str) -> Self {
        let text = normalize_text(&extract_visible_text(html));
        let tokens = tokenize(&text);
        Self {
            token_count: tokens.len(),
            tokens,
            text,
            declared_lang: detect_lang_attr(html),
        }
    }
}

/// Text of the `title`, `p`, `h1` and `h2` elements in document order, one
/// element per line. Inline markup inside those elements is flattened.
pub fn extract_visible_text(html: &str) -> String {
    let doc = Html::parse_document(html);
    let mut blocks = Vec::new();
    for node in doc.root_element().descendants() {
        let Some(el) = ElementRef::wrap(node) else {
            continue;
        };
        if !TEXT_TAGS.contains(&el.value().name()) || has_text_ancestor(el) {
            continue;
        }
        let mut buf = String::new();
        collect_text(el, &mut buf);
        let block = buf.split_whitespace().collect::<Vec<_>>().join(" ");
        if !block.is_empty() {
            blocks.push(block);
        }
    }
    blocks.join("\n")
}

fn has_text_ancestor(el: ElementRef) -> bool {
    el.ancestors()
        .filter_map(ElementRef::wrap)
        .any(|a| TEXT_TAGS.contains(&a.value().name()))
}

fn collect_text(el: ElementRef, buf: &mut String) {
    for child in el.children() {
        match child.value() {
            Node::Text(t) => buf.push_str(t),
            Node::Element(e) => {
                let name = e.name();
                if SKIPPED_TAGS.contains(&name) {
                    continue;
                }
                if name == "br" {
                    buf.push(' ');
                    continue;
                }
                if let Some(child_el) = ElementRef::wrap(child) {
                    collect_text(child_el, buf);
                }
            }
            _ => {}
        }
    }
}

/// Whitespace normalization with accent folding.
pub fn normalize_text(raw: &str) -> String {
    normalize_text_with(raw, AccentMode::Fold)
}

/// Replaces line breaks and tabs by spaces, drops control characters,
/// collapses whitespace runs and applies `mode` to accented Latin letters.
/// Non-Latin scripts pass through unchanged.
pub fn normalize_text_with(raw: &str, mode: AccentMode) -> String {
    let cleaned: String = raw
        .chars()
        .filter_map(|c| {
            if c.is_whitespace() {
                Some(' ')
            } else if c.is_control() || is_invisible_format(c) {
                None
            } else {
                Some(c)
            }
        })
        .collect();
    let accented = match mode {
        AccentMode::Keep => cleaned.nfc().collect(),
        AccentMode::Fold => fold_accents(&cleaned, false),
        AccentMode::Remove => fold_accents(&cleaned, true),
    };
    accented.split(' ').filter(|s| !s.is_empty()).collect::<Vec<_>>().join(" ")
}

/// Whitespace-only normalization, keeping accents. Used where the original
/// spelling matters (language detection, dataset sentences).
pub fn normalize_whitespace(raw: &str) -> String {
    normalize_text_with(raw, AccentMode::Keep)
}

fn is_invisible_format(c: char) -> bool {
    matches!(c, '\u{200B}'..='\u{200D}' | '\u{2060}' | '\u{FEFF}' | '\u{00AD}')
}

fn is_latin_letter(c: char) -> bool {
    c.is_ascii_alphabetic()
        || matches!(c, '\u{00C0}'..='\u{024F}' | '\u{1E00}'..='\u{1EFF}' | '\u{2C60}'..='\u{2C7F}' | '\u{A720}'..='\u{A7FF}')
}

fn is_combining_mark(c: char) -> bool {
    matches!(c, '\u{0300}'..='\u{036F}' | '\u{1AB0}'..='\u{1AFF}' | '\u{1DC0}'..='\u{1DFF}' | '\u{20D0}'..='\u{20FF}')
}

/// Letters with a stroke or other non-decomposable diacritic.
fn stroke_base(c: char) -> Option<char> {
    Some(match c {
        'ø' => 'o',
        'Ø' => 'O',
        'ł' => 'l',
        'Ł' => 'L',
        'đ' => 'd',
        'Đ' => 'D',
        'ħ' => 'h',
        'Ħ' => 'H',
        'ı' => 'i',
        _ => return None,
    })
}

fn fold_accents(s: &str, remove: bool) -> String {
    let mut out = String::with_capacity(s.len());
    // Decompose, drop marks that sit on a Latin base, then recompose so that
    // Cyrillic, Hangul etc. come back in their composed form.
    let mut base_is_latin = false;
    let mut pending_base: Option<char> = None;
    let mut base_had_mark = false;
    let flush = |out: &mut String, base: Option<char>, had_mark: bool| {
        if let Some(b) = base {
            if !(remove && had_mark) {
                out.push(b);
            }
        }
    };
    for c in s.nfd() {
        if is_combining_mark(c) {
            if base_is_latin {
                base_had_mark = true;
                continue;
            }
            flush(&mut out, pending_base.take(), base_had_mark);
            base_had_mark = false;
            out.push(c);
            continue;
        }
        flush(&mut out, pending_base.take(), base_had_mark);
        base_had_mark = false;
        if let Some(b) = stroke_base(c) {
            base_is_latin = true;
            if remove {
                base_had_mark = true;
            }
            pending_base = Some(b);
        } else {
            base_is_latin = is_latin_letter(c);
            pending_base = Some(c);
        }
    }
    flush(&mut out, pending_base.take(), base_had_mark);
    out.nfc().collect()
}

/// A token together with its byte span in the text it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSpan {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

fn is_joiner(c: char) -> bool {
    matches!(c, '-' | '\'' | '\u{2019}' | '\u{2010}' | '\u{2011}')
}

/// Lowercased word tokens with their byte spans. Hyphens and apostrophes are
/// kept when they sit between two word characters; tokens made only of
/// digits are dropped.
pub fn tokenize_spans(text: &str) -> Vec<TokenSpan> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].1.is_alphanumeric() {
            i += 1;
            continue;
        }
        let start = i;
        let mut end = i + 1;
        loop {
            while end < chars.len() && chars[end].1.is_alphanumeric() {
                end += 1;
            }
            if end + 1 < chars.len() && is_joiner(chars[end].1) && chars[end + 1].1.is_alphanumeric() {
                end += 2;
                continue;
            }
            break;
        }
        let byte_start = chars[start].0;
        let byte_end = chars.get(end).map_or(text.len(), |c| c.0);
        let raw = &text[byte_start..byte_end];
        if !raw.chars().all(|c| c.is_numeric()) {
            let lowered: String = raw
                .chars()
                .map(|c| if c == '\u{2019}' { '\'' } else if matches!(c, '\u{2010}' | '\u{2011}') { '-' } else { c })
                .flat_map(char::to_lowercase)
                .collect();
            out.push(TokenSpan {
                text: lowered,
                start: byte_start,
                end: byte_end,
            });
        }
        i = end;
    }
    out
}

pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_spans(text).into_iter().map(|t| t.text).collect()
}

/// Primary subtag of the root element's `lang` (or `xml:lang`) attribute,
/// lowercased.
pub fn detect_lang_attr(html: &str) -> Option<String> {
    let doc = Html::parse_document(html);
    let root = doc.root_element();
    let raw = root.value().attr("lang").or_else(|| root.value().attr("xml:lang"))?;
    let primary = raw.trim().split(['-', '_']).next()?.trim().to_ascii_lowercase();
    if primary.is_empty() {
        None
    } else {
        Some(primary)
    }
}

/// Inclusive lower bound on the token count.
pub fn passes_min_tokens<T>(tokens: &[T], min_tokens: usize) -> bool {
    tokens.len() >= min_tokens
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn whitelist_keeps_title_and_paragraphs_only() {
        assert_eq!(
            extract_visible_text("<title>A</title><p>B</p><div>C</div>"),
            "A\nB"
        );
    }

    #[test]
    fn empty_paragraph_gives_empty_text() {
        assert_eq!(extract_visible_text("<p></p>"), "");
        assert_eq!(extract_visible_text(""), "");
        assert_eq!(extract_visible_text("just text, no tags"), "");
    }

    #[test]
    fn nested_markup_is_flattened() {
        assert_eq!(extract_visible_text("<h1>X <b>Y</b></h1>"), "X Y");
        assert_eq!(
            extract_visible_text("<p>one<br>two <script>var x=1;</script><style>p{}</style>three</p>"),
            "one two three"
        );
    }

    #[test]
    fn script_at_top_level_is_ignored_and_malformed_markup_survives() {
        let html = "<html><head><script>document.write('<p>no</p>')</script></head><body><h2>Yes<p>also</body>";
        let text = extract_visible_text(html);
        assert!(text.contains("Yes"));
        assert!(text.contains("also"));
        assert!(!text.contains("no\n") && !text.contains("document"));
    }

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize_text("Stratégie\nd'innovation"), "Strategie d'innovation");
        assert_eq!(normalize_text("a  b"), "a b");
        assert_eq!(normalize_text("研究"), "研究");
        assert_eq!(normalize_text("\tÜber\r\n  Ærø  "), "Uber Æro");
        assert_eq!(normalize_text("Łódź"), "Lodz");
    }

    #[test]
    fn normalization_keeps_non_latin_diacritics() {
        assert_eq!(normalize_text("йод і їжак"), "йод і їжак");
        assert_eq!(normalize_text("한국어 연구"), "한국어 연구");
    }

    #[test]
    fn decomposed_input_is_folded() {
        assert_eq!(normalize_text("e\u{301}te\u{301}"), "ete");
    }

    #[test]
    fn remove_and_keep_modes() {
        assert_eq!(normalize_text_with("Stratégie  été", AccentMode::Remove), "Stratgie t");
        assert_eq!(normalize_text_with("Stratégie\n été", AccentMode::Keep), "Stratégie été");
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Product-design & Strategy."), vec!["product-design", "strategy"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("R&D 2020 report"), vec!["r", "d", "report"]);
        assert_eq!(tokenize("l'innovation -- covid-19 'quoted'"), vec!["l'innovation", "covid-19", "quoted"]);
        assert_eq!(tokenize("L’Oréal"), vec!["l'oréal"]);
    }

    #[test]
    fn token_spans_point_into_text() {
        let text = "Our Innovation-lab, 2021.";
        for t in tokenize_spans(text) {
            assert_eq!(text[t.start..t.end].to_lowercase(), t.text);
        }
    }

    #[test]
    fn lang_attribute() {
        assert_eq!(detect_lang_attr("<html lang=\"fr\"><p>x</p></html>").as_deref(), Some("fr"));
        assert_eq!(detect_lang_attr("<html><p>x</p></html>"), None);
        assert_eq!(detect_lang_attr("<html lang=\"en-GB\">").as_deref(), Some("en"));
        assert_eq!(detect_lang_attr("<html lang=\"  \">"), None);
        assert_eq!(detect_lang_attr("<!doctype html><html lang=\"DE_at\">").as_deref(), Some("de"));
    }

    #[test]
    fn min_tokens_boundary() {
        assert!(!passes_min_tokens(&vec!["x"; 999], 1000));
        assert!(passes_min_tokens::<&str>(&[], 0));
        assert!(passes_min_tokens(&vec!["x"; 50], 50));
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,80}") {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once.clone());
            prop_assert!(!once.contains("  "));
            prop_assert!(!once.chars().any(|c| c.is_control()));
        }

        #[test]
        fn tokens_are_non_empty_without_whitespace(s in "\\PC{0,80}") {
            for t in tokenize(&normalize_text(&s)) {
                prop_assert!(!t.is_empty());
                prop_assert!(!t.chars().any(char::is_whitespace));
            }
        }

        #[test]
        fn extraction_ignores_non_whitelisted_content(noise in "[a-z ]{0,30}", body in "[a-z ]{1,30}") {
            let a = format!("<div class=\"x\" id=\"y\">{noise}</div><p>{body}</p><span>{noise}</span>");
            let b = format!("<div id=\"y\" class=\"x\">zzz</div><p>{body}</p>");
            prop_assert_eq!(extract_visible_text(&a), extract_visible_text(&b));
        }
    }
}
