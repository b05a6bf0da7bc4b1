//! Rule-based article segmentation.
//!
//! Lines beginning with one to six `#` characters followed by a space start a
//! new section. Text without heading markers, and any heading block longer
//! than the policy allows, is split into paragraph-packed sections.
//! Section bodies are always disjoint, in-order substrings of the input;
//! everything outside a body is a heading line or whitespace.

use serde::{Deserialize, Serialize};

use super::{CorpusError, SectionRecord};

pub const DEFAULT_MAX_CHARS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationPolicy {
    /// Upper bound on body length in characters. A single paragraph longer
    /// than this becomes its own section.
    pub max_chars: usize,
    /// Optional cap on paragraphs packed into one section.
    #[serde(default)]
    pub max_paragraphs: Option<usize>,
}

impl Default for SegmentationPolicy {
    fn default() -> Self {
        Self {
            max_chars: DEFAULT_MAX_CHARS,
            max_paragraphs: None,
        }
    }
}

/// Byte span of a section body inside the raw text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BodySpan {
    pub heading: String,
    pub start: usize,
    pub end: usize,
}

pub fn segment_article(
    raw_text: &str,
    policy: &SegmentationPolicy,
) -> Result<Vec<SectionRecord>, CorpusError> {
    let spans = segment_spans(raw_text, policy)?;
    Ok(spans
        .into_iter()
        .enumerate()
        .map(|(index, s)| SectionRecord {
            index,
            heading: s.heading,
            body: raw_text[s.start..s.end].to_string(),
        })
        .collect())
}

/// Same as [`segment_article`] but returns body offsets.
pub fn segment_spans(raw: &str, policy: &SegmentationPolicy) -> Result<Vec<BodySpan>, CorpusError> {
    if raw.trim().is_empty() {
        return Err(CorpusError::EmptyText);
    }
    let headings = heading_lines(raw);
    let mut out = Vec::new();
    if headings.is_empty() {
        pack(raw, 0, raw.len(), "", policy, &mut out);
        return Ok(out);
    }
    pack(raw, 0, headings[0].start, "", policy, &mut out);
    for (i, h) in headings.iter().enumerate() {
        let end = headings.get(i + 1).map_or(raw.len(), |n| n.start);
        pack(raw, h.end, end, &h.text, policy, &mut out);
    }
    Ok(out)
}

struct HeadingLine {
    start: usize,
    /// First byte after the line terminator.
    end: usize,
    text: String,
}

fn heading_lines(raw: &str) -> Vec<HeadingLine> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in raw.split_inclusive('\n') {
        let content = line.trim_end_matches(['\n', '\r']);
        let hashes = content.bytes().take_while(|&b| b == b'#').count();
        if (1..=6).contains(&hashes) && content[hashes..].starts_with(' ') {
            out.push(HeadingLine {
                start: offset,
                end: offset + line.len(),
                text: content[hashes..].trim().to_string(),
            });
        }
        offset += line.len();
    }
    out
}

/// Paragraph spans (trimmed, non-empty) within `raw[from..to]`.
fn paragraphs(raw: &str, from: usize, to: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut current: Option<(usize, usize)> = None;
    let mut offset = from;
    for line in raw[from..to].split_inclusive('\n') {
        let line_start = offset;
        offset += line.len();
        if line.trim().is_empty() {
            if let Some(p) = current.take() {
                out.push(p);
            }
            continue;
        }
        let lead = line.len() - line.trim_start().len();
        let content_end = line_start + line.trim_end().len();
        match current.as_mut() {
            Some(p) => p.1 = content_end,
            None => current = Some((line_start + lead, content_end)),
        }
    }
    if let Some(p) = current {
        out.push(p);
    }
    out
}

fn pack(
    raw: &str,
    from: usize,
    to: usize,
    heading: &str,
    policy: &SegmentationPolicy,
    out: &mut Vec<BodySpan>,
) {
    let max_paras = policy.max_paragraphs.unwrap_or(usize::MAX).max(1);
    let mut group: Option<(usize, usize, usize, usize)> = None; // start, end, chars, paras
    for (ps, pe) in paragraphs(raw, from, to) {
        match group {
            Some((gs, ge, chars, n)) => {
                let grown = chars + raw[ge..pe].chars().count();
                if n < max_paras && grown <= policy.max_chars {
                    group = Some((gs, pe, grown, n + 1));
                } else {
                    out.push(BodySpan {
                        heading: heading.to_string(),
                        start: gs,
                        end: ge,
                    });
                    group = Some((ps, pe, raw[ps..pe].chars().count(), 1));
                }
            }
            None => group = Some((ps, pe, raw[ps..pe].chars().count(), 1)),
        }
    }
    if let Some((gs, ge, _, _)) = group {
        out.push(BodySpan {
            heading: heading.to_string(),
            start: gs,
            end: ge,
        });
    }
}
