#!/usr/bin/env python3
"""Regenerate the shipped language profiles and the held-out evaluation set.

Profiles: top-300 character n-grams (1-4 chars, words padded with one space)
weighted by the `wordfreq` frequency lists (top 20k words per language).

Held-out samples: paragraphs of the Universal Declaration of Human Rights
(npm package `udhr`), concatenated until each sample reaches 200 characters.

    pip install wordfreq
    npm pack udhr && tar xzf udhr-*.tgz
    python3 tools/build_langid_data.py package/declaration
"""
import collections
import html
import re
import sys
from pathlib import Path

import wordfreq

K = 300
TOP_WORDS = 20000
MIN_SAMPLE_CHARS = 200

LANGS = {
    "en": ["eng"], "zh": ["cmn_hans", "cmn_hant"], "fr": ["fra"], "de": ["deu_1996"],
    "es": ["spa"], "it": ["ita"], "ko": ["kor"], "nl": ["nld"], "ca": ["cat"],
    "pt": ["por_PT"], "da": ["dan"], "ru": ["rus"], "sv": ["swe"], "pl": ["pol"],
    "fi": ["fin"], "uk": ["ukr"],
}

ROOT = Path(__file__).resolve().parent.parent
PROFILE_DIR = ROOT / "crates/core/data/langid"
HELDOUT_DIR = ROOT / "crates/core/tests/data/langid_heldout"


def words(text):
    return re.findall(r"[^\W\d_]+", text.lower())


def grams(word):
    padded = f" {word} "
    for n in range(1, 5):
        for i in range(len(padded) - n + 1):
            g = padded[i : i + n]
            if g.strip():
                yield g


def profile(lang):
    counts = collections.Counter()
    for i, (w, f) in enumerate(wordfreq.get_frequency_dict(lang).items()):
        if i >= TOP_WORDS:
            break
        for part in words(w):
            for g in grams(part):
                counts[g] += f
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:K]
    return [g for g, _ in ranked]


def paragraphs(path):
    src = path.read_text(encoding="utf8")
    for block in re.findall(r"<(?:header|article)[^>]*>(.*?)</(?:header|article)>", src, re.S):
        for p in re.findall(r"<(?:p|li)>(.*?)</(?:p|li)>", block, re.S):
            text = html.unescape(re.sub(r"<[^>]+>", "", p)).strip()
            if text:
                yield " ".join(text.split())


def samples(paras):
    cur = ""
    for p in paras:
        cur = f"{cur} {p}".strip()
        if len(cur) >= MIN_SAMPLE_CHARS:
            yield cur
            cur = ""


def main(declarations):
    PROFILE_DIR.mkdir(parents=True, exist_ok=True)
    HELDOUT_DIR.mkdir(parents=True, exist_ok=True)
    for lang, codes in LANGS.items():
        with open(PROFILE_DIR / f"{lang}.tsv", "w", encoding="utf8") as out:
            for rank, g in enumerate(profile(lang)):
                out.write(f"{g}\t{rank}\n")
        lines = []
        for code in codes:
            lines.extend(samples(paragraphs(Path(declarations) / f"{code}.html")))
        extra = HELDOUT_DIR / f"{lang}.extra.txt"
        if extra.exists():
            lines.extend(l for l in extra.read_text(encoding="utf8").splitlines() if l.strip())
        (HELDOUT_DIR / f"{lang}.txt").write_text("\n".join(lines) + "\n", encoding="utf8")
        print(lang, len(lines))


if __name__ == "__main__":
    main(sys.argv[1])
