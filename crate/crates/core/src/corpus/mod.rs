//! Knowledge-base and query-set records.
//!
//! A [`Corpus`] is immutable once loaded. [`Corpus::attach_summaries`]
//! returns a new revision rather than editing in place, so an index built
//! from one revision can always be traced back to the exact summaries it
//! embedded.

mod segment;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io;
use std::path::Path;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::eval::NumericGold;
use crate::jsonl::{self, JsonlError, JsonlWriter};

pub use segment::{segment_article, segment_spans, BodySpan, SegmentationPolicy, DEFAULT_MAX_CHARS};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("malformed record at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("duplicate entity_id {id:?} (line {line})")]
    DuplicateEntity { id: String, line: usize },
    #[error("invalid entity {id:?}: {reason}")]
    InvalidEntity { id: String, reason: String },
    #[error("unknown entity ids: {}", .0.join(", "))]
    UnknownEntities(Vec<String>),
    #[error("cannot segment empty text")]
    EmptyText,
    #[error("duplicate sample_id {id:?} (line {line})")]
    DuplicateSample { id: String, line: usize },
    #[error("invalid sample {id:?}: {reason}")]
    InvalidSample { id: String, reason: String },
}

impl From<JsonlError> for CorpusError {
    fn from(e: JsonlError) -> Self {
        match e {
            JsonlError::Io { source, .. } => CorpusError::Io(source),
            JsonlError::Parse {
                path,
                line,
                message,
            } => CorpusError::Parse {
                path,
                line,
                message,
            },
        }
    }
}

/// Where the pixels of an image live.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImageSource {
    Uri { uri: String },
    Inline { bytes_b64: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub ref_id: String,
    #[serde(flatten)]
    pub source: ImageSource,
}

const PLACEHOLDER_ID: &str = "__placeholder__";
const PLACEHOLDER_URI: &str = "placeholder://zero";

impl ImageRef {
    pub fn uri(ref_id: impl Into<String>, uri: impl Into<String>) -> Self {
        Self {
            ref_id: ref_id.into(),
            source: ImageSource::Uri { uri: uri.into() },
        }
    }

    pub fn inline(ref_id: impl Into<String>, bytes: &[u8]) -> Self {
        Self {
            ref_id: ref_id.into(),
            source: ImageSource::Inline {
                bytes_b64: base64::engine::general_purpose::STANDARD.encode(bytes),
            },
        }
    }

    /// Stand-in for entities without a main image. Providers embed it with
    /// seed zero (deterministic) or omit the image part (HTTP).
    pub fn placeholder() -> Self {
        Self::uri(PLACEHOLDER_ID, PLACEHOLDER_URI)
    }

    pub fn is_placeholder(&self) -> bool {
        self.ref_id == PLACEHOLDER_ID
            && matches!(&self.source, ImageSource::Uri { uri } if uri == PLACEHOLDER_URI)
    }

    /// Decoded inline payload, if any.
    pub fn inline_bytes(&self) -> Option<Result<Vec<u8>, base64::DecodeError>> {
        match &self.source {
            ImageSource::Inline { bytes_b64 } => {
                Some(base64::engine::general_purpose::STANDARD.decode(bytes_b64))
            }
            ImageSource::Uri { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionRecord {
    pub index: usize,
    #[serde(default)]
    pub heading: String,
    pub body: String,
}

impl SectionRecord {
    /// Text fed to encoders and text scorers: heading line plus body.
    pub fn text(&self) -> String {
        if self.heading.is_empty() {
            self.body.clone()
        } else {
            format!("{}\n{}", self.heading, self.body)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub entity_id: String,
    pub title: String,
    pub summary: Option<String>,
    pub sections: Vec<SectionRecord>,
    pub main_image: Option<ImageRef>,
    #[serde(default)]
    pub aux_images: Vec<ImageRef>,
}

impl EntityRecord {
    /// Full article text with `## heading` lines, as fed to the summarizer.
    pub fn article_text(&self) -> String {
        let mut out = String::new();
        for s in &self.sections {
            if !out.is_empty() {
                out.push_str("\n\n");
            }
            if !s.heading.is_empty() {
                out.push_str("## ");
                out.push_str(&s.heading);
                out.push('\n');
            }
            out.push_str(&s.body);
        }
        out
    }

    pub fn section(&self, index: usize) -> Option<&SectionRecord> {
        self.sections.get(index)
    }

    fn check(&self) -> Result<(), String> {
        if self.entity_id.is_empty() {
            return Err("empty entity_id".into());
        }
        if self.sections.is_empty() {
            return Err("no sections".into());
        }
        for (i, s) in self.sections.iter().enumerate() {
            if s.index != i {
                return Err(format!("section indices must be 0..{} in order", self.sections.len()));
            }
            if s.body.trim().is_empty() {
                return Err(format!("section {i} has an empty body"));
            }
        }
        Ok(())
    }
}

/// On-disk entity line; `article` is accepted as raw text to be segmented
/// when `sections` is empty.
#[derive(Deserialize)]
struct EntityLine {
    entity_id: String,
    title: String,
    #[serde(default)]
    summary: Option<String>,
    #[serde(default)]
    sections: Vec<SectionRecord>,
    #[serde(default)]
    main_image: Option<ImageRef>,
    #[serde(default)]
    aux_images: Vec<ImageRef>,
    #[serde(default)]
    article: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerKind {
    String,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySample {
    pub sample_id: String,
    pub image: ImageRef,
    pub question: String,
    #[serde(default)]
    pub gold_entity_id: Option<String>,
    #[serde(default)]
    pub gold_section_index: Option<usize>,
    #[serde(default)]
    pub valid_answers: Vec<String>,
    pub answer_kind: AnswerKind,
    /// Free-form split tag, passed through to reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RecordCounts {
    pub entities: usize,
    pub sections: usize,
    pub main_images: usize,
    pub aux_images: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub counts: RecordCounts,
    pub missing_main_image: Vec<String>,
    pub missing_summary: Vec<String>,
    pub segmentation: Option<SegmentationPolicy>,
    pub revision: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    entities: Vec<EntityRecord>,
    by_id: HashMap<String, usize>,
    revision: u32,
    segmentation: Option<SegmentationPolicy>,
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    match format {
        CorpusFormat::Jsonl => Corpus::load_with(path, &SegmentationPolicy::default()),
    }
}

pub fn validate_corpus(corpus: &Corpus) -> CorpusManifest {
    corpus.manifest()
}

impl Corpus {
    pub fn from_entities(entities: Vec<EntityRecord>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(entities.len());
        for (i, e) in entities.iter().enumerate() {
            e.check().map_err(|reason| CorpusError::InvalidEntity {
                id: e.entity_id.clone(),
                reason,
            })?;
            if by_id.insert(e.entity_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateEntity {
                    id: e.entity_id.clone(),
                    line: i + 1,
                });
            }
        }
        Ok(Self {
            entities,
            by_id,
            revision: 0,
            segmentation: None,
        })
    }

    /// Loads a corpus JSONL file. Entities given as a raw `article` are
    /// segmented with `policy`.
    pub fn load_with(path: &Path, policy: &SegmentationPolicy) -> Result<Self, CorpusError> {
        let lines: Vec<(usize, EntityLine)> = jsonl::read_records(path)?;
        let mut entities = Vec::with_capacity(lines.len());
        let mut seen = HashSet::new();
        let mut segmented = false;
        for (line, raw) in lines {
            if !seen.insert(raw.entity_id.clone()) {
                return Err(CorpusError::DuplicateEntity {
                    id: raw.entity_id,
                    line,
                });
            }
            let sections = match (raw.sections.is_empty(), raw.article) {
                (true, Some(article)) => {
                    segmented = true;
                    segment_article(&article, policy).map_err(|e| CorpusError::InvalidEntity {
                        id: raw.entity_id.clone(),
                        reason: e.to_string(),
                    })?
                }
                _ => raw.sections,
            };
            entities.push(EntityRecord {
                entity_id: raw.entity_id,
                title: raw.title,
                summary: raw.summary,
                sections,
                main_image: raw.main_image,
                aux_images: raw.aux_images,
            });
        }
        let mut corpus = Self::from_entities(entities)?;
        if segmented {
            corpus.segmentation = Some(*policy);
        }
        Ok(corpus)
    }

    /// Writes the canonical JSONL form: one entity per line, fields in
    /// declaration order, no header.
    pub fn persist(&self, path: &Path) -> io::Result<()> {
        let mut w = JsonlWriter::create(path)?;
        for e in &self.entities {
            w.write(e)?;
        }
        w.finish()
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn revision(&self) -> u32 {
        self.revision
    }

    pub fn entities(&self) -> &[EntityRecord] {
        &self.entities
    }

    pub fn get(&self, entity_id: &str) -> Option<&EntityRecord> {
        self.by_id.get(entity_id).map(|&i| &self.entities[i])
    }

    pub fn contains(&self, entity_id: &str) -> bool {
        self.by_id.contains_key(entity_id)
    }

    /// Returns a new revision with the named summaries replaced.
    pub fn attach_summaries(&self, summaries: &BTreeMap<String, String>) -> Result<Corpus, CorpusError> {
        let unknown: Vec<String> = summaries
            .keys()
            .filter(|k| !self.by_id.contains_key(*k))
            .cloned()
            .collect();
        if !unknown.is_empty() {
            return Err(CorpusError::UnknownEntities(unknown));
        }
        if summaries.is_empty() {
            return Ok(self.clone());
        }
        let mut next = self.clone();
        for (id, text) in summaries {
            let i = self.by_id[id];
            next.entities[i].summary = Some(text.clone());
        }
        next.revision += 1;
        Ok(next)
    }

    pub fn manifest(&self) -> CorpusManifest {
        let mut counts = RecordCounts {
            entities: self.entities.len(),
            ..Default::default()
        };
        let mut missing_main_image = Vec::new();
        let mut missing_summary = Vec::new();
        for e in &self.entities {
            counts.sections += e.sections.len();
            counts.aux_images += e.aux_images.len();
            match e.main_image {
                Some(_) => counts.main_images += 1,
                None => missing_main_image.push(e.entity_id.clone()),
            }
            if e.summary.as_deref().is_none_or(|s| s.trim().is_empty()) {
                missing_summary.push(e.entity_id.clone());
            }
        }
        CorpusManifest {
            counts,
            missing_main_image,
            missing_summary,
            segmentation: self.segmentation,
            revision: self.revision,
        }
    }
}

/// Loads a query-sample JSONL file.
pub fn load_queries(path: &Path) -> Result<Vec<QuerySample>, CorpusError> {
    let lines: Vec<(usize, QuerySample)> = jsonl::read_records(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(lines.len());
    for (line, s) in lines {
        if !seen.insert(s.sample_id.clone()) {
            return Err(CorpusError::DuplicateSample {
                id: s.sample_id,
                line,
            });
        }
        check_sample(&s)?;
        out.push(s);
    }
    Ok(out)
}

pub fn check_sample(s: &QuerySample) -> Result<(), CorpusError> {
    let bad = |reason: String| CorpusError::InvalidSample {
        id: s.sample_id.clone(),
        reason,
    };
    if s.question.trim().is_empty() {
        return Err(bad("empty question".into()));
    }
    if s.gold_section_index.is_some() && s.gold_entity_id.is_none() {
        return Err(bad("gold_section_index without gold_entity_id".into()));
    }
    if s.answer_kind == AnswerKind::Numeric {
        for a in &s.valid_answers {
            if NumericGold::parse(a).is_none() {
                return Err(bad(format!("numeric answer {a:?} does not parse")));
            }
        }
    }
    Ok(())
}
