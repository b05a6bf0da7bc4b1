//! Retrieval and answer metrics. All functions are pure.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Default relative tolerance for numeric answers.
pub const DEFAULT_TOLERANCE: f64 = 0.10;

static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?").unwrap());
static THOUSANDS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(\d),(\d{3})").unwrap());
static RANGE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\[\s*([^,\]]+?)\s*,\s*([^,\]]+?)\s*\]$").unwrap());

/// Gold value for a numeric question.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NumericGold {
    Scalar(f64),
    Range(f64, f64),
}

impl NumericGold {
    /// Parses `"1450"`, `"1,450"` or `"[3.5, 4]"`. Range bounds may be
    /// given in either order.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        if let Some(c) = RANGE.captures(s) {
            let a = parse_plain(&c[1])?;
            let b = parse_plain(&c[2])?;
            return Some(NumericGold::Range(a.min(b), a.max(b)));
        }
        parse_plain(s).map(NumericGold::Scalar)
    }
}

fn parse_plain(s: &str) -> Option<f64> {
    let v: f64 = s.trim().replace(',', "").parse().ok()?;
    v.is_finite().then_some(v)
}

/// First number appearing in free text, with thousands separators removed.
pub fn parse_number(text: &str) -> Option<f64> {
    let mut cleaned = text.to_string();
    // Applied twice so "1,234,567" collapses fully.
    for _ in 0..2 {
        cleaned = THOUSANDS.replace_all(&cleaned, "$1$2").into_owned();
    }
    NUMBER
        .find(&cleaned)
        .and_then(|m| m.as_str().parse::<f64>().ok())
        .filter(|v| v.is_finite())
}

/// Fraction of samples whose gold entity appears in the first `k` ranks.
/// Samples without gold count as misses. An empty input scores 0.
pub fn recall_at_k<S: AsRef<str>>(ranked: &[Vec<S>], gold: &[Option<S>], k: usize) -> f64 {
    assert_eq!(ranked.len(), gold.len(), "one gold per ranking");
    if ranked.is_empty() {
        return 0.0;
    }
    let hits = ranked
        .iter()
        .zip(gold)
        .filter(|(r, g)| match g {
            Some(g) => r.iter().take(k).any(|e| e.as_ref() == g.as_ref()),
            None => false,
        })
        .count();
    hits as f64 / ranked.len() as f64
}

/// Fraction of samples whose top-1 (entity, section) pair equals the gold.
pub fn section_recall_at_1(predicted: &[(String, usize)], gold: &[Option<(String, usize)>]) -> f64 {
    assert_eq!(predicted.len(), gold.len(), "one gold per prediction");
    if predicted.is_empty() {
        return 0.0;
    }
    let hits = predicted
        .iter()
        .zip(gold)
        .filter(|(p, g)| g.as_ref() == Some(*p))
        .count();
    hits as f64 / predicted.len() as f64
}

/// Lowercase, collapse whitespace, drop terminal punctuation and one
/// leading article.
pub fn normalize_answer(s: &str) -> String {
    let lower = s.to_lowercase();
    let collapsed = lower.split_whitespace().collect::<Vec<_>>().join(" ");
    let trimmed = collapsed.trim_end_matches(|c: char| c.is_ascii_punctuation()).trim_end();
    let stripped = ["the ", "an ", "a "]
        .iter()
        .find_map(|a| trimmed.strip_prefix(a))
        .unwrap_or(trimmed);
    stripped.trim().to_string()
}

/// 1 when the normalized prediction equals any normalized valid answer.
pub fn vqa_accuracy(prediction: &str, valid_answers: &[String]) -> u8 {
    let p = normalize_answer(prediction);
    valid_answers.iter().any(|a| normalize_answer(a) == p) as u8
}

/// 1 when the first number in `prediction` lies within `tolerance`
/// (relative) of a scalar gold, or inside a range gold. A zero gold needs
/// an exact match.
pub fn relaxed_accuracy(prediction: &str, gold: &NumericGold, tolerance: f64) -> u8 {
    let Some(p) = parse_number(prediction) else {
        return 0;
    };
    let ok = match *gold {
        NumericGold::Scalar(g) => (p - g).abs() <= tolerance * g.abs(),
        NumericGold::Range(a, b) => (a..=b).contains(&p),
    };
    ok as u8
}
