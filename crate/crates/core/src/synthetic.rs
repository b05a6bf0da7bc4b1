//! Planted benchmarks for the deterministic provider.
//!
//! Every summary, main image and section body carries a `[seed:...]` tag,
//! so the query for entity `e` and section `s` matches them exactly:
//! the query image shares the summary's seed (cosine 1 in stage 1) and the
//! question shares the evidence section's seed. Noisy queries blend the
//! gold image seed with a slightly heavier distractor seed, which flips
//! stage 1 while the fused features still point at the gold entity.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnswerKind, Corpus, CorpusError, EntityRecord, ImageRef, QuerySample, SectionRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub entities: usize,
    /// Inclusive range of sections per entity.
    pub min_sections: usize,
    pub max_sections: usize,
    pub queries: usize,
    /// Fraction of queries whose image is blended with a distractor.
    pub distractor_rate: f64,
    /// Distractor weight range relative to the gold seed (weight 1).
    pub distractor_weight: (f64, f64),
    /// Fraction of entities without a main image.
    pub imageless_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            entities: 100,
            min_sections: 2,
            max_sections: 5,
            queries: 100,
            distractor_rate: 0.0,
            distractor_weight: (1.01, 1.06),
            imageless_rate: 0.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub corpus: Corpus,
    pub samples: Vec<QuerySample>,
}

// None of these may appear in the question template.
const FILLER: [&str; 24] = [
    "river", "stone", "ancient", "valley", "northern", "built", "century", "known", "large", "forest", "bridge",
    "harbor", "museum", "species", "colour", "winter", "trade", "market", "painted", "tower", "coastal", "granite",
    "festival", "orchard",
];
const HEADINGS: [&str; 6] = ["History", "Geography", "Architecture", "Ecology", "Culture", "Economy"];
const QUESTION: &str = "What is described here?";

fn filler(rng: &mut ChaCha8Rng, words: usize) -> String {
    (0..words)
        .map(|_| *FILLER.choose(rng).expect("non-empty"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn entity_id(i: usize, total: usize) -> String {
    let width = total.saturating_sub(1).to_string().len().max(4);
    format!("e{i:0width$}")
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticBenchmark, CorpusError> {
    assert!(spec.entities >= 2, "need at least two entities");
    assert!(
        1 <= spec.min_sections && spec.min_sections <= spec.max_sections,
        "bad section range"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let entities: Vec<EntityRecord> = (0..spec.entities)
        .map(|i| {
            let id = entity_id(i, spec.entities);
            let n = rng.random_range(spec.min_sections..=spec.max_sections);
            let sections = (0..n)
                .map(|s| {
                    let words = rng.random_range(8..40);
                    SectionRecord {
                        index: s,
                        heading: HEADINGS[s % HEADINGS.len()].to_string(),
                        body: format!("[seed:{id}/s{s}] {}.", filler(&mut rng, words)),
                    }
                })
                .collect();
            let imageless = rng.random_bool(spec.imageless_rate.clamp(0.0, 1.0));
            EntityRecord {
                title: format!("Entity {id}"),
                summary: Some(format!("[seed:{id}] {}.", filler(&mut rng, 12))),
                sections,
                main_image: (!imageless).then(|| ImageRef::uri(format!("{id}/main[seed:{id}]"), format!("synthetic://{id}/main.jpg"))),
                aux_images: vec![ImageRef::uri(format!("{id}/aux0"), format!("synthetic://{id}/aux0.jpg"))],
                entity_id: id,
            }
        })
        .collect();

    let samples = (0..spec.queries)
        .map(|q| {
            let g = rng.random_range(0..spec.entities);
            let gold = &entities[g];
            let sec = rng.random_range(0..gold.sections.len());
            let gid = &gold.entity_id;
            let tag = if rng.random_bool(spec.distractor_rate.clamp(0.0, 1.0)) {
                let mut d = rng.random_range(0..spec.entities - 1);
                if d >= g {
                    d += 1;
                }
                let (lo, hi) = spec.distractor_weight;
                let w = if hi > lo { rng.random_range(lo..hi) } else { lo };
                format!("[seed:{gid}*1+{}*{w:.4}]", entities[d].entity_id)
            } else {
                format!("[seed:{gid}]")
            };
            let numeric = q % 5 == 4;
            QuerySample {
                sample_id: format!("q{q:05}"),
                image: ImageRef::uri(format!("q{q:05}{tag}"), format!("synthetic://queries/q{q:05}.jpg")),
                question: format!("[seed:{gid}/s{sec}] {QUESTION}"),
                gold_entity_id: Some(gid.clone()),
                gold_section_index: Some(sec),
                valid_answers: if numeric {
                    vec![format!("{}", 100 + g)]
                } else {
                    vec![format!("{} {}", gold.title, HEADINGS[sec % HEADINGS.len()])]
                },
                answer_kind: if numeric { AnswerKind::Numeric } else { AnswerKind::String },
                tag: Some(if tag.contains('+') { "noisy" } else { "clean" }.to_string()),
            }
        })
        .collect();

    Ok(SyntheticBenchmark {
        corpus: Corpus::from_entities(entities)?,
        samples,
    })
}
