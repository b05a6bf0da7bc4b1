//! Three-stage retrieval: entity search, fused reranking, section selection.

mod fusion;
mod indexing;
mod maxsim;
mod prompt;
mod run;
mod stages;

use serde::{Deserialize, Serialize};

use crate::index::IndexError;
use crate::provider::ProviderError;

pub use fusion::{choose_section, fuse_candidates, normalize_scores, ScoreNorm};
pub use indexing::build_summary_index;
pub use maxsim::{maxsim, maxsim_many};
pub use prompt::{assemble_prompt, summary_prompt, PromptStyle};
pub use run::{run_batch, run_pipeline, PipelineOutput, ResultRecord, ResultScores, StageTimings};
pub use stages::{
    entity_multimodal_score, rerank_entities, score_entity_sections, select_section, stage1_search,
    FinalContext, Query, StageOneResult, StageTwoResult,
};
pub(crate) use fusion::argmax_first;
pub(crate) use stages::{context_from_scores, section_text_scores};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "stage1")]
    EntitySearch,
    #[serde(rename = "stage2")]
    Rerank,
    #[serde(rename = "stage3")]
    SectionSelect,
    #[serde(rename = "generate")]
    Generate,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::EntitySearch => "stage1",
            Stage::Rerank => "stage2",
            Stage::SectionSelect => "stage3",
            Stage::Generate => "generate",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("index was built with provider {index:?} but the pipeline uses {provider:?}")]
    ProviderMismatch { index: String, provider: String },
    #[error("index and corpus disagree: {0}")]
    Consistency(String),
    #[error("{context}: {source}")]
    Provider {
        context: String,
        #[source]
        source: ProviderError,
    },
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("maxsim dims mismatch: query {query}, candidate {candidate}")]
    DimsMismatch { query: usize, candidate: usize },
    #[error("unknown prompt style {0:?}")]
    UnknownStyle(String),
    #[error("{0}")]
    Precondition(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<PipelineError>,
    },
}

impl PipelineError {
    pub(crate) fn provider(context: impl Into<String>) -> impl FnOnce(ProviderError) -> Self {
        let context = context.into();
        move |source| PipelineError::Provider { context, source }
    }

    pub(crate) fn at(stage: Stage) -> impl FnOnce(PipelineError) -> Self {
        move |e| PipelineError::Stage {
            stage,
            source: Box::new(e),
        }
    }
}

/// What to do with candidates that have no main image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImagelessPolicy {
    /// Score with the zero-seed placeholder image and flag the result.
    #[default]
    Placeholder,
    /// Score with the placeholder but rank after every imaged candidate.
    DemoteToBottom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Stage-1 candidates passed to fused reranking.
    pub k: usize,
    /// Weight of the stage-1 similarity in the entity fusion.
    pub alpha: f64,
    /// Weight of the stage-2 section similarity in the section fusion.
    pub beta: f64,
    pub score_norm: ScoreNorm,
    /// Softmax temperature shared with the contrastive loss.
    pub temperature: f64,
    pub imageless: ImagelessPolicy,
    /// Samples processed concurrently in batch runs.
    pub parallelism: usize,
    pub style: PromptStyle,
    pub max_tokens: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 20,
            alpha: 0.9,
            beta: 0.2,
            score_norm: ScoreNorm::MinMax,
            temperature: 1.0,
            imageless: ImagelessPolicy::Placeholder,
            parallelism: 4,
            style: PromptStyle::Evqa,
            max_tokens: 64,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.k == 0 {
            return bad("k must be ≥ 1".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta {} outside [0, 1]", self.beta));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature {} must be positive", self.temperature));
        }
        if self.parallelism == 0 {
            return bad("parallelism must be ≥ 1".into());
        }
        Ok(())
    }
}
