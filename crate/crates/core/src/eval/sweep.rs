//! One evaluation per grid point over a fixed benchmark.
//!
//! α and β points reuse per-sample stage-1 results, section MaxSims and
//! text scores, so only fusion and selection rerun. k points change the
//! candidate set and rerun the whole pipeline.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{recall_at_k, section_recall_at_1};
use super::EvalError;
use crate::corpus::{Corpus, QuerySample};
use crate::index::VectorIndex;
use crate::par::Exec;
use crate::pipeline::{
    context_from_scores, fuse_candidates, rerank_entities, run_pipeline, section_text_scores, stage1_search,
    PipelineConfig, Query, StageOneResult, StageTwoResult,
};
use crate::provider::Provider;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Alpha,
    Beta,
    K,
}

impl std::str::FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "alpha" => Ok(Self::Alpha),
            "beta" => Ok(Self::Beta),
            "k" => Ok(Self::K),
            other => Err(format!("unknown sweep parameter {other:?} (expected alpha, beta or k)")),
        }
    }
}

impl std::fmt::Display for SweepParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Alpha => "alpha",
            Self::Beta => "beta",
            Self::K => "k",
        })
    }
}

/// One metric at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub metric: String,
    pub score: f64,
    /// Mean per-sample wall time of the stages recomputed at this point:
    /// stage 2 for k, fusion plus selection for α and β. Absent in
    /// parallel mode.
    pub latency_ms_mean: Option<f64>,
}

/// Metric names emitted for every grid point, in output order.
pub const SWEEP_METRICS: [&str; 5] = ["recall@1", "recall@5", "recall@k", "stage1_recall@k", "section_recall@1"];

struct PointOutcome {
    stage1: Vec<String>,
    reranked: Vec<String>,
    top1: (String, usize),
    ms: f64,
}

struct Cached {
    stage1: Vec<StageOneResult>,
    scored: Vec<StageTwoResult>,
    sim_t: Mutex<HashMap<String, Vec<f64>>>,
}

fn point_config(param: SweepParam, value: f64, base: &PipelineConfig) -> Result<PipelineConfig, EvalError> {
    let mut cfg = base.clone();
    match param {
        SweepParam::Alpha => cfg.alpha = value,
        SweepParam::Beta => cfg.beta = value,
        SweepParam::K => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(EvalError::Precondition(format!("k grid value {value} is not a positive integer")));
            }
            cfg.k = value as usize;
        }
    }
    cfg.validate().map_err(|e| EvalError::Precondition(e.to_string()))?;
    Ok(cfg)
}

fn pipeline_err(sample: &QuerySample) -> impl FnOnce(crate::pipeline::PipelineError) -> EvalError + '_ {
    |source| EvalError::Pipeline {
        sample: sample.sample_id.clone(),
        source,
    }
}

fn build_cache(
    samples: &[QuerySample],
    corpus: &Corpus,
    index: &VectorIndex,
    provider: &dyn Provider,
    config: &PipelineConfig,
    exec: Exec,
) -> Result<Vec<Cached>, EvalError> {
    exec.try_map(samples, |s| {
        let stage1 = stage1_search(provider, &s.image, corpus, index, config.k).map_err(pipeline_err(s))?;
        let query = Query {
            image: &s.image,
            question: &s.question,
        };
        let scored = rerank_entities(&stage1, query, corpus, provider, config).map_err(pipeline_err(s))?;
        Ok(Cached {
            stage1,
            scored,
            sim_t: Mutex::new(HashMap::new()),
        })
    })
}

fn refuse(
    sample: &QuerySample,
    cached: &Cached,
    corpus: &Corpus,
    provider: &dyn Provider,
    cfg: &PipelineConfig,
) -> Result<PointOutcome, EvalError> {
    let start = Instant::now();
    let fused = fuse_candidates(cached.scored.clone(), cfg);
    let top = &fused[0];
    let entity = corpus.get(&top.entity_id).ok_or_else(|| {
        EvalError::Precondition(format!("candidate {:?} is not in the corpus", top.entity_id))
    })?;
    let sim_t = {
        let mut memo = cached.sim_t.lock().expect("sim_t cache poisoned");
        match memo.get(&top.entity_id) {
            Some(v) => v.clone(),
            None => {
                let v = section_text_scores(entity, &sample.question, provider).map_err(pipeline_err(sample))?;
                memo.insert(top.entity_id.clone(), v.clone());
                v
            }
        }
    };
    let ctx = context_from_scores(top, entity, &sim_t, cfg);
    Ok(PointOutcome {
        stage1: cached.stage1.iter().map(|c| c.entity_id.clone()).collect(),
        reranked: fused.iter().map(|c| c.entity_id.clone()).collect(),
        top1: (ctx.entity_id, ctx.section.index),
        ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

fn rows_for(
    param: SweepParam,
    value: f64,
    cfg: &PipelineConfig,
    samples: &[QuerySample],
    outcomes: &[PointOutcome],
    with_latency: bool,
) -> Vec<SweepRow> {
    let gold: Vec<Option<String>> = samples.iter().map(|s| s.gold_entity_id.clone()).collect();
    let reranked: Vec<Vec<String>> = outcomes.iter().map(|o| o.reranked.clone()).collect();
    let stage1: Vec<Vec<String>> = outcomes.iter().map(|o| o.stage1.clone()).collect();
    let sec_pred: Vec<(String, usize)> = outcomes.iter().map(|o| o.top1.clone()).collect();
    let sec_gold: Vec<Option<(String, usize)>> = samples
        .iter()
        .map(|s| s.gold_entity_id.clone().zip(s.gold_section_index))
        .collect();
    let latency = (with_latency && !outcomes.is_empty())
        .then(|| outcomes.iter().map(|o| o.ms).sum::<f64>() / outcomes.len() as f64);
    let scores = [
        recall_at_k(&reranked, &gold, 1),
        recall_at_k(&reranked, &gold, 5),
        recall_at_k(&reranked, &gold, cfg.k),
        recall_at_k(&stage1, &gold, cfg.k),
        section_recall_at_1(&sec_pred, &sec_gold),
    ];
    SWEEP_METRICS
        .iter()
        .zip(scores)
        .map(|(m, score)| SweepRow {
            param,
            value,
            metric: m.to_string(),
            score,
            latency_ms_mean: latency,
        })
        .collect()
}

/// Evaluates `samples` at every grid point. Points run in grid order;
/// `exec` controls parallelism across samples within a point, and a
/// parallel run reports no latency.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    param: SweepParam,
    grid: &[f64],
    samples: &[QuerySample],
    corpus: &Corpus,
    index: &VectorIndex,
    provider: &dyn Provider,
    config: &PipelineConfig,
    exec: Exec,
) -> Result<Vec<SweepRow>, EvalError> {
    if grid.is_empty() {
        return Err(EvalError::Precondition("empty sweep grid".into()));
    }
    if samples.is_empty() {
        return Err(EvalError::Precondition("no samples to sweep over".into()));
    }
    let configs = grid
        .iter()
        .map(|&v| point_config(param, v, config))
        .collect::<Result<Vec<_>, _>>()?;
    let with_latency = !exec.is_parallel();
    let mut rows = Vec::with_capacity(grid.len() * SWEEP_METRICS.len());

    match param {
        SweepParam::Alpha | SweepParam::Beta => {
            let cache = build_cache(samples, corpus, index, provider, config, exec)?;
            let pairs: Vec<(&QuerySample, &Cached)> = samples.iter().zip(&cache).collect();
            for (&value, cfg) in grid.iter().zip(&configs) {
                let outcomes = exec.try_map(&pairs, |(s, c)| refuse(s, c, corpus, provider, cfg))?;
                rows.extend(rows_for(param, value, cfg, samples, &outcomes, with_latency));
            }
        }
        SweepParam::K => {
            for (&value, cfg) in grid.iter().zip(&configs) {
                let outcomes = exec.try_map(samples, |s| {
                    let out = run_pipeline(s, corpus, index, provider, cfg, false).map_err(pipeline_err(s))?;
                    Ok::<_, EvalError>(PointOutcome {
                        stage1: out.stage1.iter().map(|c| c.entity_id.clone()).collect(),
                        reranked: out.reranked.iter().map(|c| c.entity_id.clone()).collect(),
                        top1: (out.context.entity_id.clone(), out.context.section.index),
                        ms: out.timings.stage2,
                    })
                })?;
                rows.extend(rows_for(param, value, cfg, samples, &outcomes, with_latency));
            }
        }
    }
    Ok(rows)
}

/// CSV with header `param,value,metric,score,latency_ms_mean`.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
