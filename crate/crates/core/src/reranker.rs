//! Contrastive training pairs for the fused encoder and the InfoNCE loss
//! they are scored with.

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, EntityRecord, ImageRef, QuerySample};
use crate::jsonl::{read_records, JsonlError, JsonlWriter};
use crate::pipeline::StageOneResult;
use crate::provider::{Provider, ProviderError};

#[derive(Debug, thiserror::Error)]
pub enum RerankerError {
    #[error("{0}")]
    Precondition(String),
    #[error("sample {sample}: gold section {section} missing from entity {entity:?}")]
    MissingGoldSection { sample: String, entity: String, section: usize },
    #[error("sample {sample}: need {needed} candidate negatives, only {available} usable stage-1 candidates")]
    Shortfall {
        sample: String,
        needed: usize,
        available: usize,
    },
    #[error("score {index} is not finite")]
    NonFinite { index: usize },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairConfig {
    /// Pairs per sample, positive included.
    pub n: usize,
    /// Upper bound on same-article negatives.
    pub max_hard: usize,
    pub seed: u64,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            n: 16,
            max_hard: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastivePair {
    pub entity_id: String,
    pub section_index: usize,
    pub image_ref: ImageRef,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastivePairSet {
    pub sample_id: String,
    pub positive_index: usize,
    pub pairs: Vec<ContrastivePair>,
    pub seed: u64,
    pub hard_negatives: usize,
}

impl ContrastivePairSet {
    pub fn positive(&self) -> &ContrastivePair {
        &self.pairs[self.positive_index]
    }
}

/// The candidate most similar to the query image; the first wins ties.
pub fn select_positive_image(
    query_image: &ImageRef,
    candidates: &[ImageRef],
    provider: &dyn Provider,
) -> Result<ImageRef, RerankerError> {
    if candidates.is_empty() {
        return Err(RerankerError::Precondition("no candidate images".into()));
    }
    if candidates.len() == 1 {
        return Ok(candidates[0].clone());
    }
    let q = provider
        .embed_image(std::slice::from_ref(query_image))?
        .pop()
        .ok_or_else(|| ProviderError::Protocol("empty image response".into()))?;
    let vs = provider.embed_image(candidates)?;
    let best = vs
        .iter()
        .map(|v| q.dot(v))
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bs), (i, s)| if s > bs { (i, s) } else { (bi, bs) })
        .0;
    Ok(candidates[best].clone())
}

fn negative_image(entity: &EntityRecord) -> ImageRef {
    entity
        .main_image
        .clone()
        .or_else(|| entity.aux_images.first().cloned())
        .unwrap_or_else(ImageRef::placeholder)
}

fn sample_rng(seed: u64, sample_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ crate::provider::hash64(sample_id.as_bytes()))
}

/// One positive, up to `max_hard` negatives from other sections of the gold
/// article (longest first), and random (main image, first section)
/// negatives from the other stage-1 candidates. The list is shuffled with
/// the same per-sample RNG.
pub fn build_pairs(
    sample: &QuerySample,
    stage1: &[StageOneResult],
    corpus: &Corpus,
    config: &PairConfig,
    provider: &dyn Provider,
) -> Result<ContrastivePairSet, RerankerError> {
    if config.n < 2 {
        return Err(RerankerError::Precondition("need at least two pairs per sample".into()));
    }
    let (Some(gold_id), Some(gold_sec)) = (&sample.gold_entity_id, sample.gold_section_index) else {
        return Err(RerankerError::Precondition(format!(
            "sample {:?} lacks a gold entity or evidence section",
            sample.sample_id
        )));
    };
    let gold = corpus
        .get(gold_id)
        .ok_or_else(|| RerankerError::Precondition(format!("gold entity {gold_id:?} not in corpus")))?;
    let evidence = gold.section(gold_sec).ok_or_else(|| RerankerError::MissingGoldSection {
        sample: sample.sample_id.clone(),
        entity: gold_id.clone(),
        section: gold_sec,
    })?;

    let gold_images: Vec<ImageRef> = gold.main_image.iter().chain(&gold.aux_images).cloned().collect();
    let positive_image = if gold_images.is_empty() {
        ImageRef::placeholder()
    } else {
        select_positive_image(&sample.image, &gold_images, provider)?
    };
    let mut pairs = vec![ContrastivePair {
        entity_id: gold_id.clone(),
        section_index: gold_sec,
        image_ref: positive_image,
        text: evidence.text(),
    }];

    let mut others: Vec<_> = gold.sections.iter().filter(|s| s.index != gold_sec).collect();
    others.sort_by(|a, b| b.body.chars().count().cmp(&a.body.chars().count()).then(a.index.cmp(&b.index)));
    let neg_image = negative_image(gold);
    let hard = others.len().min(config.max_hard).min(config.n - 1);
    pairs.extend(others.iter().take(hard).map(|s| ContrastivePair {
        entity_id: gold_id.clone(),
        section_index: s.index,
        image_ref: neg_image.clone(),
        text: s.text(),
    }));

    let mut seen = std::collections::HashSet::new();
    let pool: Vec<&EntityRecord> = stage1
        .iter()
        .filter(|c| c.entity_id != *gold_id && seen.insert(c.entity_id.as_str()))
        .filter_map(|c| corpus.get(&c.entity_id))
        .filter(|e| e.main_image.is_some())
        .collect();
    let needed = config.n - pairs.len();
    if pool.len() < needed {
        return Err(RerankerError::Shortfall {
            sample: sample.sample_id.clone(),
            needed,
            available: pool.len(),
        });
    }
    let mut rng = sample_rng(config.seed, &sample.sample_id);
    let mut picks = index::sample(&mut rng, pool.len(), needed).into_vec();
    picks.sort_unstable();
    pairs.extend(picks.into_iter().map(|i| {
        let e = pool[i];
        let first = &e.sections[0];
        ContrastivePair {
            entity_id: e.entity_id.clone(),
            section_index: first.index,
            image_ref: negative_image(e),
            text: first.text(),
        }
    }));

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    let positive_index = order.iter().position(|&i| i == 0).expect("positive present");
    let mut slots: Vec<Option<ContrastivePair>> = pairs.into_iter().map(Some).collect();
    let pairs = order.iter().map(|&i| slots[i].take().expect("each pair once")).collect();
    Ok(ContrastivePairSet {
        sample_id: sample.sample_id.clone(),
        positive_index,
        pairs,
        seed: config.seed,
        hard_negatives: hard,
    })
}

/// `−log softmax(scores / t)[positive]`, stabilized by the max score.
/// The exponentials are summed in ascending order, so any permutation of
/// `scores` (with the positive index following it) gives a bit-identical
/// loss.
pub fn contrastive_loss(scores: &[f64], positive_index: usize, temperature: f64) -> Result<f64, RerankerError> {
    if scores.len() < 2 {
        return Err(RerankerError::Precondition("need at least two scores".into()));
    }
    if positive_index >= scores.len() {
        return Err(RerankerError::Precondition(format!(
            "positive index {positive_index} out of range for {} scores",
            scores.len()
        )));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(RerankerError::Precondition(format!("temperature {temperature} must be positive")));
    }
    if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
        return Err(RerankerError::NonFinite { index });
    }
    let z: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
    let top = crate::pipeline::argmax_first(&z);
    let m = z[top];
    let mut terms: Vec<f64> = z
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .map(|(_, v)| (v - m).exp())
        .collect();
    terms.sort_by(f64::total_cmp);
    let rest: f64 = terms.iter().sum();
    Ok((m - z[positive_index]) + rest.ln_1p())
}

/// Streams pair sets to JSONL after an optional provenance header.
/// Returns the number of sets written; an empty input is an error and
/// creates no file.
pub fn export_pairs<I>(path: &Path, meta: Option<&serde_json::Value>, sets: I) -> Result<usize, RerankerError>
where
    I: IntoIterator<Item = Result<ContrastivePairSet, RerankerError>>,
{
    let mut it = sets.into_iter();
    let Some(first) = it.next() else {
        return Err(RerankerError::Precondition("no pair sets to export".into()));
    };
    let first = first?;
    let mut w = JsonlWriter::create(path)?;
    if let Some(m) = meta {
        w.write_meta(m)?;
    }
    w.write(&first)?;
    let mut n = 1;
    for set in it {
        w.write(&set?)?;
        n += 1;
    }
    w.finish()?;
    Ok(n)
}

pub fn load_pairs(path: &Path) -> Result<Vec<ContrastivePairSet>, RerankerError> {
    Ok(read_records(path)?.into_iter().map(|(_, s)| s).collect())
}
