use super::PipelineError;
use crate::corpus::Corpus;
use crate::index::{IndexMetadata, IndexOptions, VectorIndex};
use crate::provider::Provider;

const EMBED_CHUNK: usize = 64;

/// Embeds every entity summary and indexes it under the entity id.
/// `meta` supplies the timestamp and provenance; provider id and truncated
/// ids are filled in here.
pub fn build_summary_index(
    corpus: &Corpus,
    provider: &dyn Provider,
    options: IndexOptions,
    mut meta: IndexMetadata,
) -> Result<VectorIndex, PipelineError> {
    let missing: Vec<&str> = corpus
        .entities()
        .iter()
        .filter(|e| e.summary.as_deref().is_none_or(|s| s.trim().is_empty()))
        .map(|e| e.entity_id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(PipelineError::Precondition(format!(
            "{} entities have no summary (first: {:?}); run summarize first",
            missing.len(),
            missing[0]
        )));
    }
    let mut entries = Vec::with_capacity(corpus.len());
    let mut truncated = Vec::new();
    for chunk in corpus.entities().chunks(EMBED_CHUNK) {
        let texts: Vec<&str> = chunk.iter().filter_map(|e| e.summary.as_deref()).collect();
        let out = provider
            .embed_text_detailed(&texts)
            .map_err(PipelineError::provider("embedding summaries"))?;
        if out.vectors.len() != chunk.len() {
            return Err(PipelineError::Precondition("provider returned the wrong number of vectors".into()));
        }
        for ((e, v), t) in chunk.iter().zip(out.vectors).zip(out.truncated) {
            if t {
                truncated.push(e.entity_id.clone());
            }
            entries.push((e.entity_id.clone(), v));
        }
    }
    meta.provider_id = provider.id();
    meta.truncated = truncated;
    Ok(VectorIndex::build(entries, options, meta)?)
}
