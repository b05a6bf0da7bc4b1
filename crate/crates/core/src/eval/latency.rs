use serde::{Deserialize, Serialize};

use crate::pipeline::StageTimings;

/// Order statistics over one stage, in milliseconds. Percentiles use the
/// nearest-rank method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

impl LatencyStats {
    pub fn from_samples(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            count: sorted.len(),
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            p50: nearest_rank(&sorted, 50.0),
            p95: nearest_rank(&sorted, 95.0),
            max: sorted[sorted.len() - 1],
        })
    }
}

fn nearest_rank(sorted: &[f64], pct: f64) -> f64 {
    let rank = (pct / 100.0 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub stage1: LatencyStats,
    pub stage2: LatencyStats,
    pub stage3: LatencyStats,
    /// Present when at least one record ran generation.
    pub generate: Option<LatencyStats>,
    /// Sum of the retrieval stages.
    pub retrieval: LatencyStats,
}

/// Per-stage aggregation; `None` for an empty input.
pub fn measure_latency(records: &[StageTimings]) -> Option<LatencySummary> {
    let col = |f: fn(&StageTimings) -> f64| records.iter().map(f).collect::<Vec<_>>();
    let generate: Vec<f64> = records.iter().filter_map(|r| r.generate).collect();
    Some(LatencySummary {
        stage1: LatencyStats::from_samples(&col(|r| r.stage1))?,
        stage2: LatencyStats::from_samples(&col(|r| r.stage2))?,
        stage3: LatencyStats::from_samples(&col(|r| r.stage3))?,
        generate: LatencyStats::from_samples(&generate),
        retrieval: LatencyStats::from_samples(&col(|r| r.stage1 + r.stage2 + r.stage3))?,
    })
}
