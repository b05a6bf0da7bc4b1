use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::prompt::assemble_prompt;
use super::stages::{rerank_entities, select_section, stage1_search, FinalContext, Query, StageOneResult, StageTwoResult};
use super::{PipelineConfig, PipelineError, Stage};
use crate::corpus::{Corpus, QuerySample};
use crate::index::VectorIndex;
use crate::par::Exec;
use crate::provider::{GenerateParams, Provider};

/// Wall-clock milliseconds per stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub stage1: f64,
    pub stage2: f64,
    pub stage3: f64,
    pub generate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub sample_id: String,
    pub stage1: Vec<StageOneResult>,
    pub reranked: Vec<StageTwoResult>,
    pub context: FinalContext,
    pub prompt: Option<String>,
    pub answer: Option<String>,
    pub timings: StageTimings,
}

impl PipelineOutput {
    pub fn top1(&self) -> &StageTwoResult {
        &self.reranked[0]
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed().as_secs_f64() * 1e3)
}

/// Runs the three stages for one sample, optionally followed by generation.
pub fn run_pipeline(
    sample: &QuerySample,
    corpus: &Corpus,
    index: &VectorIndex,
    provider: &dyn Provider,
    config: &PipelineConfig,
    with_generation: bool,
) -> Result<PipelineOutput, PipelineError> {
    config.validate()?;
    let query = Query {
        image: &sample.image,
        question: &sample.question,
    };
    let (stage1, t1) = timed(|| stage1_search(provider, &sample.image, corpus, index, config.k));
    let stage1 = stage1.map_err(PipelineError::at(Stage::EntitySearch))?;
    let (reranked, t2) = timed(|| rerank_entities(&stage1, query, corpus, provider, config));
    let reranked = reranked.map_err(PipelineError::at(Stage::Rerank))?;
    let (context, t3) = timed(|| select_section(&reranked[0], &sample.question, corpus, provider, config));
    let context = context.map_err(PipelineError::at(Stage::SectionSelect))?;

    let mut timings = StageTimings {
        stage1: t1,
        stage2: t2,
        stage3: t3,
        generate: None,
    };
    let (mut prompt, mut answer) = (None, None);
    if with_generation {
        let p = assemble_prompt(&context, &sample.question, config.style);
        let params = GenerateParams {
            max_tokens: config.max_tokens,
        };
        let (a, tg) = timed(|| provider.generate(&p, &params));
        let a = a
            .map_err(PipelineError::provider("generating the answer"))
            .map_err(PipelineError::at(Stage::Generate))?;
        timings.generate = Some(tg);
        prompt = Some(p);
        answer = Some(a);
    }
    Ok(PipelineOutput {
        sample_id: sample.sample_id.clone(),
        stage1,
        reranked,
        context,
        prompt,
        answer,
        timings,
    })
}

/// Runs samples concurrently up to `config.parallelism`; output order
/// matches input order.
pub fn run_batch(
    samples: &[QuerySample],
    corpus: &Corpus,
    index: &VectorIndex,
    provider: &dyn Provider,
    config: &PipelineConfig,
    with_generation: bool,
    exec: Exec,
) -> Vec<Result<PipelineOutput, PipelineError>> {
    exec.install(config.parallelism, || {
        exec.map(samples, |s| run_pipeline(s, corpus, index, provider, config, with_generation))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultScores {
    pub sim_c: f64,
    pub sim_m: f64,
    pub sim_t: f64,
    pub fused_entity: f64,
    pub fused_section: f64,
}

/// One line of a batch results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub sample_id: String,
    pub stage1: Vec<StageOneResult>,
    pub top1_entity: String,
    pub best_section_index: usize,
    pub scores: ResultScores,
    pub timings_ms: Option<StageTimings>,
    pub answer: Option<String>,
    /// Entity ids after fused reranking, best first.
    #[serde(default)]
    pub reranked: Vec<String>,
    /// Reranked entities scored with the placeholder image.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub imageless: Vec<String>,
}

impl ResultRecord {
    /// Timings are wall-clock and vary run to run; leave them out when the
    /// file must be reproducible.
    pub fn from_output(out: &PipelineOutput, with_timings: bool) -> Self {
        let top = out.top1();
        Self {
            sample_id: out.sample_id.clone(),
            stage1: out.stage1.clone(),
            top1_entity: top.entity_id.clone(),
            best_section_index: out.context.section.index,
            scores: ResultScores {
                sim_c: top.sim_c,
                sim_m: out.context.sim_m,
                sim_t: out.context.sim_t,
                fused_entity: top.fused,
                fused_section: out.context.fused_section,
            },
            timings_ms: with_timings.then_some(out.timings),
            answer: out.answer.clone(),
            reranked: out.reranked.iter().map(|r| r.entity_id.clone()).collect(),
            imageless: out
                .reranked
                .iter()
                .filter(|r| r.imageless)
                .map(|r| r.entity_id.clone())
                .collect(),
        }
    }
}
