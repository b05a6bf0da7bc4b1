use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::latency::{measure_latency, LatencySummary};
use super::metrics::{recall_at_k, relaxed_accuracy, section_recall_at_1, vqa_accuracy, NumericGold};
use super::EvalError;
use crate::corpus::{AnswerKind, QuerySample};
use crate::jsonl::JsonlWriter;
use crate::pipeline::{ResultRecord, StageTimings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Cutoffs for the recall curve.
    pub ks: Vec<usize>,
    /// Relative tolerance for numeric answers.
    pub tolerance: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ks: vec![1, 5, 10, 20],
            tolerance: super::DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Recall@K over the reranked list.
    pub recall: BTreeMap<usize, f64>,
    /// Recall@K over the stage-1 list.
    pub stage1_recall: BTreeMap<usize, f64>,
    pub section_recall_1: Option<f64>,
    pub vqa_acc: Option<f64>,
    pub relaxed_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub sample_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    pub gold_entity_id: Option<String>,
    pub top1_entity: Option<String>,
    /// 1-based rank of the gold entity after reranking.
    pub rank: Option<usize>,
    pub section_hit: Option<bool>,
    pub vqa: Option<u8>,
    pub relaxed: Option<u8>,
    /// No result record was found for this sample.
    pub missing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: serde_json::Value,
    pub metrics: Metrics,
    pub latency_ms: Option<LatencySummary>,
    pub samples: Vec<SampleOutcome>,
}

fn mean(xs: impl Iterator<Item = u8>) -> Option<f64> {
    let (sum, n) = xs.fold((0u64, 0u64), |(s, n), x| (s + x as u64, n + 1));
    (n > 0).then(|| sum as f64 / n as f64)
}

/// Scores result records against gold samples. Samples without a record
/// count as misses.
pub fn evaluate(
    records: &[ResultRecord],
    samples: &[QuerySample],
    timings: &[StageTimings],
    opts: &EvalOptions,
    config: serde_json::Value,
) -> Result<EvalReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::Precondition("no samples to evaluate".into()));
    }
    if opts.ks.contains(&0) {
        return Err(EvalError::Precondition("recall cutoffs must be ≥ 1".into()));
    }
    if opts.tolerance.is_nan() || opts.tolerance < 0.0 {
        return Err(EvalError::Precondition(format!("tolerance {} must be ≥ 0", opts.tolerance)));
    }
    let by_id: HashMap<&str, &ResultRecord> = records.iter().map(|r| (r.sample_id.as_str(), r)).collect();

    let mut outcomes = Vec::with_capacity(samples.len());
    let (mut reranked, mut stage1, mut gold) = (vec![], vec![], vec![]);
    let (mut sec_pred, mut sec_gold) = (vec![], vec![]);
    for s in samples {
        let rec = by_id.get(s.sample_id.as_str()).copied();
        let ranking: Vec<String> = rec
            .map(|r| {
                if r.reranked.is_empty() {
                    r.stage1.iter().map(|c| c.entity_id.clone()).collect()
                } else {
                    r.reranked.clone()
                }
            })
            .unwrap_or_default();
        if s.gold_entity_id.is_some() {
            reranked.push(ranking.clone());
            stage1.push(
                rec.map(|r| r.stage1.iter().map(|c| c.entity_id.clone()).collect())
                    .unwrap_or_default(),
            );
            gold.push(s.gold_entity_id.clone());
        }
        let gold_section = s.gold_entity_id.clone().zip(s.gold_section_index);
        let predicted_section = rec.map(|r| (r.top1_entity.clone(), r.best_section_index));
        if let Some(g) = &gold_section {
            sec_pred.push(predicted_section.clone().unwrap_or_default());
            sec_gold.push(Some(g.clone()));
        }
        let answer = rec.and_then(|r| r.answer.as_deref());
        let (vqa, relaxed) = match (answer, s.answer_kind) {
            (Some(a), AnswerKind::String) if !s.valid_answers.is_empty() => (Some(vqa_accuracy(a, &s.valid_answers)), None),
            (Some(a), AnswerKind::Numeric) if !s.valid_answers.is_empty() => {
                let hit = s
                    .valid_answers
                    .iter()
                    .filter_map(|g| NumericGold::parse(g))
                    .map(|g| relaxed_accuracy(a, &g, opts.tolerance))
                    .max()
                    .unwrap_or(0);
                (None, Some(hit))
            }
            _ => (None, None),
        };
        outcomes.push(SampleOutcome {
            sample_id: s.sample_id.clone(),
            tag: s.tag.clone(),
            gold_entity_id: s.gold_entity_id.clone(),
            top1_entity: rec.map(|r| r.top1_entity.clone()),
            rank: s
                .gold_entity_id
                .as_ref()
                .and_then(|g| ranking.iter().position(|e| e == g))
                .map(|p| p + 1),
            section_hit: gold_section.map(|g| predicted_section.as_ref() == Some(&g)),
            vqa,
            relaxed,
            missing: rec.is_none(),
        });
    }

    let curve = |lists: &[Vec<String>]| {
        opts.ks
            .iter()
            .map(|&k| (k, recall_at_k(lists, &gold, k)))
            .collect::<BTreeMap<_, _>>()
    };
    let metrics = Metrics {
        recall: curve(&reranked),
        stage1_recall: curve(&stage1),
        section_recall_1: (!sec_gold.is_empty()).then(|| section_recall_at_1(&sec_pred, &sec_gold)),
        vqa_acc: mean(outcomes.iter().filter_map(|o| o.vqa)),
        relaxed_acc: mean(outcomes.iter().filter_map(|o| o.relaxed)),
    };
    let timings: Vec<StageTimings> = if timings.is_empty() {
        records.iter().filter_map(|r| r.timings_ms).collect()
    } else {
        timings.to_vec()
    };
    Ok(EvalReport {
        config,
        metrics,
        latency_ms: measure_latency(&timings),
        samples: outcomes,
    })
}

#[derive(Serialize)]
struct Prediction<'a> {
    sample_id: &'a str,
    question: &'a str,
    prediction: &'a str,
    references: &'a [String],
    answer_kind: AnswerKind,
}

/// Writes question/prediction/reference triples for an external answer
/// equivalence scorer. Samples without an answer are skipped; returns the
/// number written.
pub fn write_predictions(path: &Path, records: &[ResultRecord], samples: &[QuerySample]) -> Result<usize, EvalError> {
    let by_id: HashMap<&str, &ResultRecord> = records.iter().map(|r| (r.sample_id.as_str(), r)).collect();
    let mut w = JsonlWriter::create(path)?;
    let mut n = 0;
    for s in samples {
        let Some(answer) = by_id.get(s.sample_id.as_str()).and_then(|r| r.answer.as_deref()) else {
            continue;
        };
        w.write(&Prediction {
            sample_id: &s.sample_id,
            question: &s.question,
            prediction: answer,
            references: &s.valid_answers,
            answer_kind: s.answer_kind,
        })?;
        n += 1;
    }
    w.finish()?;
    Ok(n)
}
