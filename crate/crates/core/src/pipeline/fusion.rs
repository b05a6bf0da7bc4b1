//! Score normalization and the two weighted fusions.
//!
//! Entity fusion blends the stage-1 similarity with the best section MaxSim:
//!
//! ```text
//! fused_e = α·norm(sim_c) + (1 − α)·norm(max_h sim_m)
//! ```
//!
//! Section fusion blends the stage-2 section MaxSim with the text score:
//!
//! ```text
//! fused_s = β·norm(sim_m) + (1 − β)·norm(sim_t)
//! ```
//!
//! Both normalizations run over the current candidate set.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{PipelineConfig, StageTwoResult};
use crate::provider::FUSED_ROWS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreNorm {
    /// Affine map onto [0, 1]; a constant set maps to 0.5.
    #[default]
    #[serde(rename = "minmax")]
    MinMax,
    /// Divide MaxSim scores by the 32 query rows. Bounded similarities
    /// (cosine, text scores) pass through unchanged.
    ByQueryLen,
    None,
}

impl std::str::FromStr for ScoreNorm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "minmax" => Ok(Self::MinMax),
            "by_query_len" => Ok(Self::ByQueryLen),
            "none" => Ok(Self::None),
            other => Err(format!("unknown score_norm {other:?}")),
        }
    }
}

impl ScoreNorm {
    /// Mode applied to scores already bounded to a unit range.
    fn for_bounded(self) -> ScoreNorm {
        match self {
            ScoreNorm::ByQueryLen => ScoreNorm::None,
            other => other,
        }
    }
}

pub fn normalize_scores(values: &[f64], mode: ScoreNorm) -> Vec<f64> {
    match mode {
        ScoreNorm::None => values.to_vec(),
        ScoreNorm::ByQueryLen => values.iter().map(|v| v / FUSED_ROWS as f64).collect(),
        ScoreNorm::MinMax => {
            let (lo, hi) = values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let span = hi - lo;
            if span > 0.0 && span.is_finite() {
                values.iter().map(|v| (v - lo) / span).collect()
            } else {
                vec![0.5; values.len()]
            }
        }
    }
}

/// Sets `fused` on every candidate and sorts best first.
///
/// Order: demoted candidates last, then descending fused score, then
/// ascending entity id.
pub fn fuse_candidates(mut candidates: Vec<StageTwoResult>, config: &PipelineConfig) -> Vec<StageTwoResult> {
    if candidates.is_empty() {
        return candidates;
    }
    let sim_c: Vec<f64> = candidates.iter().map(|c| c.sim_c).collect();
    let sim_m: Vec<f64> = candidates.iter().map(|c| c.sim_m_max).collect();
    let nc = normalize_scores(&sim_c, config.score_norm.for_bounded());
    let nm = normalize_scores(&sim_m, config.score_norm);
    for (i, c) in candidates.iter_mut().enumerate() {
        c.fused = config.alpha * nc[i] + (1.0 - config.alpha) * nm[i];
    }
    candidates.sort_by(|a, b| {
        a.demoted
            .cmp(&b.demoted)
            .then_with(|| b.fused.total_cmp(&a.fused))
            .then_with(|| a.entity_id.cmp(&b.entity_id))
    });
    candidates
}

/// Picks the best section from per-section MaxSim and text scores.
/// Returns the winning index and every fused score; ties go to the lower
/// index.
pub fn choose_section(sim_m: &[f64], sim_t: &[f64], config: &PipelineConfig) -> (usize, Vec<f64>) {
    assert_eq!(sim_m.len(), sim_t.len(), "one text score per section");
    assert!(!sim_m.is_empty(), "entity has no sections");
    let nm = normalize_scores(sim_m, config.score_norm);
    let nt = normalize_scores(sim_t, config.score_norm.for_bounded());
    let fused: Vec<f64> = nm
        .iter()
        .zip(&nt)
        .map(|(m, t)| config.beta * m + (1.0 - config.beta) * t)
        .collect();
    let best = argmax_first(&fused);
    (best, fused)
}

/// Index of the largest value; the first one wins ties.
pub(crate) fn argmax_first(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| match v.total_cmp(&values[best]) {
            Ordering::Greater => i,
            _ => best,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(id: &str, sim_c: f64, sim_m: f64) -> StageTwoResult {
        StageTwoResult {
            entity_id: id.into(),
            sim_c,
            section_sims: vec![sim_m],
            sim_m_max: sim_m,
            fused: 0.0,
            imageless: false,
            demoted: false,
        }
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(normalize_scores(&[2.0, 4.0, 6.0], ScoreNorm::MinMax), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize_scores(&[5.0, 5.0, 5.0], ScoreNorm::MinMax), vec![0.5; 3]);
        assert_eq!(normalize_scores(&[64.0], ScoreNorm::ByQueryLen), vec![2.0]);
        assert_eq!(normalize_scores(&[3.0, -1.0], ScoreNorm::None), vec![3.0, -1.0]);
    }

    #[test]
    fn fused_promotes_strong_multimodal_match() {
        // Gold is second on sim_c by a hair and first on sim_m by a mile.
        let cfg = PipelineConfig::default();
        let out = fuse_candidates(
            vec![
                cand("distractor", 0.80, 10.0),
                cand("gold", 0.79, 30.0),
                cand("other", 0.10, 5.0),
            ],
            &cfg,
        );
        // By hand: norm sim_c = [1, 0.98571, 0], norm sim_m = [0.2, 1, 0].
        // distractor 0.9·1 + 0.1·0.2 = 0.92; gold 0.9·0.98571 + 0.1 = 0.98714.
        assert_eq!(out[0].entity_id, "gold");
        assert!((out[0].fused - 0.987_142_857_142_857).abs() < 1e-12);
        assert!((out[1].fused - 0.92).abs() < 1e-12);
    }

    #[test]
    fn alpha_extremes() {
        let cs = vec![cand("a", 0.9, 1.0), cand("b", 0.5, 9.0), cand("c", 0.7, 4.0)];
        let a1 = fuse_candidates(cs.clone(), &PipelineConfig { alpha: 1.0, ..Default::default() });
        assert_eq!(a1.iter().map(|c| c.entity_id.as_str()).collect::<Vec<_>>(), ["a", "c", "b"]);
        let a0 = fuse_candidates(cs, &PipelineConfig { alpha: 0.0, ..Default::default() });
        assert_eq!(a0.iter().map(|c| c.entity_id.as_str()).collect::<Vec<_>>(), ["b", "c", "a"]);
    }

    #[test]
    fn demoted_go_last() {
        let mut top = cand("top", 1.0, 30.0);
        top.demoted = true;
        let out = fuse_candidates(vec![top, cand("x", 0.1, 1.0)], &PipelineConfig::default());
        assert_eq!(out[0].entity_id, "x");
    }

    #[test]
    fn ties_go_to_lower_entity_id() {
        let out = fuse_candidates(vec![cand("b", 0.5, 1.0), cand("a", 0.5, 1.0)], &PipelineConfig::default());
        assert_eq!(out[0].entity_id, "a");
    }

    #[test]
    fn section_choice_by_hand() {
        // β = 0.2. norm sim_m = [0, 1, 0.5, 0.25]; norm sim_t = [1, 0, 0.75, 0.5].
        // fused = [0.8, 0.2, 0.7, 0.45].
        let cfg = PipelineConfig::default();
        let (best, fused) = choose_section(&[10.0, 18.0, 14.0, 12.0], &[0.9, 0.1, 0.7, 0.5], &cfg);
        assert_eq!(best, 0);
        let want = [0.8, 0.2, 0.7, 0.45];
        for (f, w) in fused.iter().zip(want) {
            assert!((f - w).abs() < 1e-12, "{fused:?}");
        }
        // β = 1 → pure sim_m; β = 0 → pure sim_t.
        let (b1, _) = choose_section(&[10.0, 18.0, 14.0, 12.0], &[0.9, 0.1, 0.8, 0.5], &PipelineConfig { beta: 1.0, ..cfg.clone() });
        assert_eq!(b1, 1);
        let (b0, _) = choose_section(&[10.0, 18.0, 14.0, 12.0], &[0.7, 0.1, 0.8, 0.5], &PipelineConfig { beta: 0.0, ..cfg });
        assert_eq!(b0, 2);
        let (tie, _) = choose_section(&[3.0, 3.0], &[0.5, 0.5], &PipelineConfig::default());
        assert_eq!(tie, 0);
    }

    #[test]
    fn argmax_first_on_ties() {
        assert_eq!(argmax_first(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax_first(&[2.0]), 0);
    }
}
