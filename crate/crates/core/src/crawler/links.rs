use std::collections::HashSet;

use scraper::{Html, Selector};
use serde::{Deserialize, Serialize};
use url::Url;

/// A resolved anchor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub url: String,
    pub anchor_text: String,
}

/// Absolute, fragment-free targets of every `<a href>` in `html`, resolved
/// against `base_url`, deduplicated in document order. Unresolvable hrefs are
/// skipped.
pub fn find_links(html: &str, base_url: &str) -> Vec<Link> {
    let Ok(base) = Url::parse(base_url) else {
        return Vec::new();
    };
    let doc = Html::parse_document(html);
    let sel = Selector::parse("a[href]").expect("static selector");
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for a in doc.select(&sel) {
        let Some(href) = a.value().attr("href") else {
            continue;
        };
        let href = href.trim();
        if href.is_empty() || href.starts_with('#') {
            continue;
        }
        let Ok(mut resolved) = base.join(href) else {
            continue;
        };
        resolved.set_fragment(None);
        let url = resolved.to_string();
        if seen.insert(url.clone()) {
            let anchor_text = a.text().collect::<Vec<_>>().join(" ");
            out.push(Link {
                url,
                anchor_text: crate::util::squash_whitespace(&anchor_text),
            });
        }
    }
    out
}

/// Whether the URL's path ends with `.pdf`, ignoring case, query and fragment.
pub fn is_pdf_url(url: &str) -> bool {
    match Url::parse(url) {
        Ok(u) => u.path().to_ascii_lowercase().ends_with(".pdf"),
        Err(_) => url.split(['?', '#']).next().unwrap_or("").to_ascii_lowercase().ends_with(".pdf"),
    }
}

/// Anchors pointing at PDF files.
pub fn find_pdf_anchors(html: &str, base_url: &str) -> Vec<Link> {
    find_links(html, base_url).into_iter().filter(|l| is_pdf_url(&l.url)).collect()
}

/// Absolute PDF URLs linked from `html`.
pub fn find_pdf_links(html: &str, base_url: &str) -> Vec<String> {
    find_pdf_anchors(html, base_url).into_iter().map(|l| l.url).collect()
}

/// Keyword + year heuristic for spotting annual reports among PDF links.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnualReportMatcher {
    pub keywords: Vec<String>,
}

impl Default for AnnualReportMatcher {
    fn default() -> Self {
        Self {
            keywords: ["annual report", "annual-report", "rapport annuel", "annualreport"]
                .into_iter()
                .map(String::from)
                .collect(),
        }
    }
}

impl AnnualReportMatcher {
    /// True iff the URL path or the anchor text contains a report keyword, or
    /// contains both "report" and a year between 1990 and 2099.
    pub fn matches(&self, url: &str, anchor_text: &str) -> bool {
        let path = Url::parse(url)
            .map(|u| u.path().to_string())
            .unwrap_or_else(|_| url.to_string());
        [path.as_str(), anchor_text].iter().any(|field| self.field_matches(field))
    }

    fn field_matches(&self, field: &str) -> bool {
        let lower = field.to_lowercase().replace("%20", " ");
        let spaced: String = lower
            .chars()
            .map(|c| if matches!(c, '-' | '_' | '+' | '.') { ' ' } else { c })
            .collect();
        let keyword_hit = self
            .keywords
            .iter()
            .map(|k| k.to_lowercase())
            .any(|k| lower.contains(&k) || spaced.contains(&k));
        keyword_hit || (lower.contains("report") && contains_year(&lower, 1990, 2099))
    }
}

pub fn is_annual_report(url: &str, anchor_text: &str) -> bool {
    AnnualReportMatcher::default().matches(url, anchor_text)
}

/// Whether `s` holds a standalone 4-digit number within `[lo, hi]`.
pub fn contains_year(s: &str, lo: u32, hi: u32) -> bool {
    years_in(s).any(|y| (lo..=hi).contains(&y))
}

/// Every standalone 4-digit number in `s`, in order.
pub fn years_in(s: &str) -> impl Iterator<Item = u32> + '_ {
    let bytes = s.as_bytes();
    let mut i = 0;
    std::iter::from_fn(move || {
        while i < bytes.len() {
            if bytes[i].is_ascii_digit() {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i - start == 4 {
                    return s[start..i].parse().ok();
                }
            } else {
                i += 1;
            }
        }
        None
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolves_relative_pdf_link() {
        assert_eq!(
            find_pdf_links("<a href=\"/ar/2020.pdf\">AR</a>", "https://a.com/x"),
            vec!["https://a.com/ar/2020.pdf"]
        );
    }

    #[test]
    fn no_anchors() {
        assert!(find_pdf_links("<p>nothing here</p>", "https://a.com/").is_empty());
    }

    #[test]
    fn mixed_fixture_page() {
        let html = r#"<html><body>
            <a href="/about.html">About</a>
            <a href="reports/AR-2019.PDF">Annual report 2019</a>
            <a href="https://a.com/news">News</a>
            <a href="https://cdn.a.com/files/sustainability.pdf?v=2#page=3">Sustainability</a>
            <a href="reports/AR-2019.PDF#p2">duplicate</a>
            <a href="contact">Contact</a>
        </body></html>"#;
        assert_eq!(
            find_pdf_links(html, "https://a.com/investors/"),
            vec![
                "https://a.com/investors/reports/AR-2019.PDF",
                "https://cdn.a.com/files/sustainability.pdf?v=2",
            ]
        );
    }

    #[test]
    fn unresolvable_links_are_skipped() {
        let html = r#"<a href="http://[::1">x.pdf</a><a href="ok.pdf">ok</a>"#;
        assert_eq!(find_pdf_links(html, "https://a.com/"), vec!["https://a.com/ok.pdf"]);
    }

    #[test]
    fn annual_report_heuristic() {
        assert!(is_annual_report("acme-annual-report-2020.pdf", ""));
        assert!(!is_annual_report("catalogue.pdf", "Product catalogue"));
        assert!(is_annual_report("fy-report-2019.pdf", ""));
        assert!(is_annual_report("https://a.com/docs/x.pdf", "Rapport annuel 2018"));
        assert!(is_annual_report("https://a.com/docs/Annual_Report.pdf", ""));
        assert!(!is_annual_report("https://a.com/report-12345.pdf", ""));
        assert!(!is_annual_report("https://a.com/report-1989.pdf", ""));
    }

    #[test]
    fn years_are_standalone_runs() {
        assert_eq!(years_in("ar2019-20201").collect::<Vec<_>>(), vec![2019]);
        assert_eq!(years_in("2017 and 2021").collect::<Vec<_>>(), vec![2017, 2021]);
    }
}
