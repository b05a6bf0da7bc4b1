use serde::{Deserialize, Serialize};

use super::fusion::{argmax_first, choose_section, fuse_candidates};
use super::maxsim::maxsim;
use super::{ImagelessPolicy, PipelineConfig, PipelineError};
use crate::corpus::{Corpus, EntityRecord, ImageRef, SectionRecord};
use crate::index::VectorIndex;
use crate::provider::{Provider, TokenMatrix};

/// The query side of a VQA sample.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub image: &'a ImageRef,
    pub question: &'a str,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOneResult {
    pub entity_id: String,
    pub sim_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTwoResult {
    pub entity_id: String,
    /// Stage-1 similarity, carried forward.
    pub sim_c: f64,
    /// MaxSim per section, indexed by section index.
    pub section_sims: Vec<f64>,
    pub sim_m_max: f64,
    pub fused: f64,
    /// Scored with the placeholder image.
    pub imageless: bool,
    /// Ranked after every imaged candidate.
    pub demoted: bool,
}

impl StageTwoResult {
    pub fn best_section(&self) -> usize {
        argmax_first(&self.section_sims)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalContext {
    pub entity_id: String,
    pub title: String,
    pub section: SectionRecord,
    pub sim_m: f64,
    pub sim_t: f64,
    pub fused_section: f64,
}

pub(crate) fn check_provider(index: &VectorIndex, provider: &dyn Provider) -> Result<(), PipelineError> {
    let built_with = &index.metadata().provider_id;
    let using = provider.id();
    if !built_with.is_empty() && *built_with != using {
        return Err(PipelineError::ProviderMismatch {
            index: built_with.clone(),
            provider: using,
        });
    }
    Ok(())
}

/// Top-k entities by inner product between the query image and the
/// indexed summaries.
pub fn stage1_search(
    provider: &dyn Provider,
    query_image: &ImageRef,
    corpus: &Corpus,
    index: &VectorIndex,
    k: usize,
) -> Result<Vec<StageOneResult>, PipelineError> {
    check_provider(index, provider)?;
    let v = provider
        .embed_image(std::slice::from_ref(query_image))
        .map_err(PipelineError::provider(format!("embedding query image {:?}", query_image.ref_id)))?
        .pop()
        .ok_or_else(|| PipelineError::Precondition("provider returned no vector".into()))?;
    let hits = index.search(&v, k)?;
    hits.into_iter()
        .map(|h| {
            if !corpus.contains(&h.record_id) {
                return Err(PipelineError::Consistency(format!(
                    "indexed entity {:?} is not in the corpus",
                    h.record_id
                )));
            }
            Ok(StageOneResult {
                entity_id: h.record_id,
                sim_c: h.score,
            })
        })
        .collect()
}

/// Section-level MaxSim of an entity against a precomputed query matrix.
/// `fused` is left at zero.
pub fn score_entity_sections(
    query_matrix: &TokenMatrix,
    entity: &EntityRecord,
    sim_c: f64,
    provider: &dyn Provider,
    policy: ImagelessPolicy,
) -> Result<StageTwoResult, PipelineError> {
    if entity.sections.is_empty() {
        return Err(PipelineError::Precondition(format!("entity {:?} has no sections", entity.entity_id)));
    }
    let placeholder;
    let image = match &entity.main_image {
        Some(img) => img,
        None => {
            placeholder = ImageRef::placeholder();
            &placeholder
        }
    };
    let texts: Vec<String> = entity.sections.iter().map(SectionRecord::text).collect();
    let items: Vec<(&ImageRef, &str)> = texts.iter().map(|t| (image, t.as_str())).collect();
    let matrices = provider
        .embed_fused_batch(&items)
        .map_err(PipelineError::provider(format!("fused features for entity {:?}", entity.entity_id)))?;
    let section_sims = matrices
        .iter()
        .map(|c| maxsim(query_matrix, c))
        .collect::<Result<Vec<_>, _>>()?;
    let sim_m_max = section_sims[argmax_first(&section_sims)];
    let imageless = entity.main_image.is_none();
    Ok(StageTwoResult {
        entity_id: entity.entity_id.clone(),
        sim_c,
        section_sims,
        sim_m_max,
        fused: 0.0,
        imageless,
        demoted: imageless && policy == ImagelessPolicy::DemoteToBottom,
    })
}

/// Section-level MaxSim of an entity against the query `(image, question)`.
pub fn entity_multimodal_score(
    query: Query<'_>,
    entity: &EntityRecord,
    provider: &dyn Provider,
    policy: ImagelessPolicy,
) -> Result<StageTwoResult, PipelineError> {
    let q = query_matrix(query, provider)?;
    score_entity_sections(&q, entity, 0.0, provider, policy)
}

pub(crate) fn query_matrix(query: Query<'_>, provider: &dyn Provider) -> Result<TokenMatrix, PipelineError> {
    provider
        .embed_fused(query.image, query.question)
        .map_err(PipelineError::provider("fused features for the query"))
}

/// Scores every stage-1 candidate and sorts by fused score, best first.
pub fn rerank_entities(
    stage1: &[StageOneResult],
    query: Query<'_>,
    corpus: &Corpus,
    provider: &dyn Provider,
    config: &PipelineConfig,
) -> Result<Vec<StageTwoResult>, PipelineError> {
    if stage1.is_empty() {
        return Err(PipelineError::Precondition("no stage-1 candidates to rerank".into()));
    }
    let q = query_matrix(query, provider)?;
    let scored = stage1
        .iter()
        .map(|c| {
            let entity = corpus
                .get(&c.entity_id)
                .ok_or_else(|| PipelineError::Consistency(format!("candidate {:?} is not in the corpus", c.entity_id)))?;
            score_entity_sections(&q, entity, c.sim_c, provider, config.imageless)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(fuse_candidates(scored, config))
}

/// Text-scores the sections of the top entity and picks the best section.
pub fn select_section(
    top1: &StageTwoResult,
    question: &str,
    corpus: &Corpus,
    provider: &dyn Provider,
    config: &PipelineConfig,
) -> Result<FinalContext, PipelineError> {
    let entity = corpus
        .get(&top1.entity_id)
        .ok_or_else(|| PipelineError::Consistency(format!("entity {:?} is not in the corpus", top1.entity_id)))?;
    if top1.section_sims.len() != entity.sections.len() {
        return Err(PipelineError::Precondition(format!(
            "{} section scores for {} sections of {:?}",
            top1.section_sims.len(),
            entity.sections.len(),
            entity.entity_id
        )));
    }
    let sim_t = section_text_scores(entity, question, provider)?;
    Ok(context_from_scores(top1, entity, &sim_t, config))
}

/// Text-scorer relevance of every section of `entity` to the question.
pub(crate) fn section_text_scores(
    entity: &EntityRecord,
    question: &str,
    provider: &dyn Provider,
) -> Result<Vec<f64>, PipelineError> {
    let texts: Vec<String> = entity.sections.iter().map(SectionRecord::text).collect();
    let passages: Vec<&str> = texts.iter().map(String::as_str).collect();
    let sim_t = provider
        .score_text_pairs(question, &passages)
        .map_err(PipelineError::provider(format!("text scores for entity {:?}", entity.entity_id)))?;
    if sim_t.len() != passages.len() {
        return Err(PipelineError::Precondition("text scorer returned the wrong number of scores".into()));
    }
    Ok(sim_t)
}

pub(crate) fn context_from_scores(
    top1: &StageTwoResult,
    entity: &EntityRecord,
    sim_t: &[f64],
    config: &PipelineConfig,
) -> FinalContext {
    let (best, fused) = choose_section(&top1.section_sims, sim_t, config);
    FinalContext {
        entity_id: entity.entity_id.clone(),
        title: entity.title.clone(),
        section: entity.sections[best].clone(),
        sim_m: top1.section_sims[best],
        sim_t: sim_t[best],
        fused_section: fused[best],
    }
}
