//! Offline provider whose outputs are pure functions of their inputs.
//!
//! Every input maps to one or more 64-bit seeds. By default the seed is a
//! hash of the input bytes (text, or an image's `ref_id`). An input that
//! contains a seed tag instead uses the seeds named in the tag:
//!
//! ```text
//! [seed:e0042]                  one key
//! [seed:e0042*1+e0007*1.15]     weighted mixture of keys
//! ```
//!
//! Inputs carrying the same tag embed to the same vector whatever their
//! modality, which is how synthetic benchmarks plant exact matches between
//! a query image and an entity summary. Mixtures produce controlled
//! near-misses.
//!
//! Dense vectors are seeded Gaussian draws, L2-normalized. Fused matrices
//! have 32 rows; row `r` is the normalized sum of an image component and a
//! text component, each drawn from its own stream indexed by `r`.

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use super::{
    check_texts, l2_norm, DenseVector, GenerateParams, Provider, ProviderError, TextEmbeddings,
    TokenMatrix, FUSED_ROWS,
};
use crate::corpus::{ImageRef, ImageSource};
use crate::par::Exec;

const DENSE_STREAM: u64 = 0;
const FUSED_IMAGE_STREAM: u64 = 1 << 32;
const FUSED_TEXT_STREAM: u64 = 2 << 32;
const ECHO_CHARS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeterministicConfig {
    pub text_dims: usize,
    pub fused_dims: usize,
    /// Texts longer than this many characters are truncated before seeding.
    pub max_text_chars: Option<usize>,
}

impl Default for DeterministicConfig {
    fn default() -> Self {
        Self {
            text_dims: 256,
            fused_dims: 64,
            max_text_chars: Some(8192),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeterministicProvider {
    config: DeterministicConfig,
    exec: Exec,
}

impl Default for DeterministicProvider {
    fn default() -> Self {
        Self::new(DeterministicConfig::default())
    }
}

/// `(seed, weight)` terms of an input.
type SeedTerms = Vec<(u64, f64)>;

impl DeterministicProvider {
    pub fn new(config: DeterministicConfig) -> Self {
        assert!(config.text_dims > 0 && config.fused_dims > 0, "dims must be positive");
        Self {
            config,
            exec: Exec::default(),
        }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &DeterministicConfig {
        &self.config
    }

    fn truncate<'a>(&self, text: &'a str) -> (&'a str, bool) {
        match self.config.max_text_chars {
            Some(limit) => match text.char_indices().nth(limit) {
                Some((byte, _)) => (&text[..byte], true),
                None => (text, false),
            },
            None => (text, false),
        }
    }

    fn text_terms(&self, text: &str) -> (SeedTerms, bool) {
        let (text, truncated) = self.truncate(text);
        (terms_for(text), truncated)
    }

    fn image_terms(image: &ImageRef) -> Result<SeedTerms, ProviderError> {
        if image.is_placeholder() {
            return Ok(vec![(0, 1.0)]);
        }
        resolve(image)?;
        Ok(terms_for(&image.ref_id))
    }

    fn fused(&self, image: &SeedTerms, text: &SeedTerms) -> TokenMatrix {
        let d = self.config.fused_dims;
        let mut values = Vec::with_capacity(FUSED_ROWS * d);
        for r in 0..FUSED_ROWS as u64 {
            let a = mixture(image, FUSED_IMAGE_STREAM | r, d);
            let b = mixture(text, FUSED_TEXT_STREAM | r, d);
            let mut row: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            normalize_or_fallback(&mut row, &a);
            values.extend_from_slice(&row);
        }
        TokenMatrix::new(FUSED_ROWS, d, values).expect("shape is fixed")
    }
}

impl Provider for DeterministicProvider {
    fn id(&self) -> String {
        format!(
            "deterministic-v1:text{}:fused{}",
            self.config.text_dims, self.config.fused_dims
        )
    }

    fn embed_text_detailed(&self, texts: &[&str]) -> Result<TextEmbeddings, ProviderError> {
        check_texts(texts)?;
        let dims = self.config.text_dims;
        let out = self.exec.map(texts, |t| {
            let (terms, truncated) = self.text_terms(t);
            (unit_vector(&terms, DENSE_STREAM, dims), truncated)
        });
        let (vectors, truncated) = out.into_iter().unzip();
        Ok(TextEmbeddings { vectors, truncated })
    }

    fn embed_image(&self, images: &[ImageRef]) -> Result<Vec<DenseVector>, ProviderError> {
        if images.is_empty() {
            return Err(ProviderError::Precondition("empty image batch".into()));
        }
        let dims = self.config.text_dims;
        self.exec.try_map(images, |img| {
            let terms = Self::image_terms(img)?;
            Ok(unit_vector(&terms, DENSE_STREAM, dims))
        })
    }

    fn embed_fused_batch(&self, items: &[(&ImageRef, &str)]) -> Result<Vec<TokenMatrix>, ProviderError> {
        if items.is_empty() {
            return Err(ProviderError::Precondition("empty fused batch".into()));
        }
        let texts: Vec<&str> = items.iter().map(|(_, t)| *t).collect();
        check_texts(&texts)?;
        self.exec.try_map(items, |(img, text)| {
            let image = Self::image_terms(img)?;
            let (text, _) = self.text_terms(text);
            Ok(self.fused(&image, &text))
        })
    }

    fn score_text_pairs(&self, question: &str, passages: &[&str]) -> Result<Vec<f64>, ProviderError> {
        if passages.is_empty() {
            return Err(ProviderError::Precondition("no passages to score".into()));
        }
        let q = tokens(question);
        Ok(passages
            .iter()
            .map(|p| {
                if q.is_empty() {
                    return 0.0;
                }
                let p = tokens(p);
                q.intersection(&p).count() as f64 / q.len() as f64
            })
            .collect())
    }

    fn generate(&self, prompt: &str, _params: &GenerateParams) -> Result<String, ProviderError> {
        if prompt.is_empty() {
            return Err(ProviderError::Precondition("empty prompt".into()));
        }
        Ok(format!("ECHO:{}", prompt.chars().take(ECHO_CHARS).collect::<String>()))
    }
}

pub(crate) fn hash64(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Parses the first `[seed:...]` tag in `input` into `(key, weight)` terms.
/// Returns `None` when there is no well-formed tag.
pub fn parse_seed_tag(input: &str) -> Option<Vec<(&str, f64)>> {
    let start = input.find("[seed:")? + "[seed:".len();
    let len = input[start..].find(']')?;
    let body = &input[start..start + len];
    let mut terms = Vec::new();
    for term in body.split('+') {
        let (key, weight) = match term.split_once('*') {
            Some((k, w)) => (k.trim(), w.trim().parse::<f64>().ok()?),
            None => (term.trim(), 1.0),
        };
        if key.is_empty() || !weight.is_finite() || weight <= 0.0 {
            return None;
        }
        terms.push((key, weight));
    }
    Some(terms)
}

fn terms_for(input: &str) -> SeedTerms {
    match parse_seed_tag(input) {
        Some(terms) => terms.into_iter().map(|(k, w)| (hash64(k.as_bytes()), w)).collect(),
        None => vec![(hash64(input.as_bytes()), 1.0)],
    }
}

fn gaussian_unit(seed: u64, stream: u64, dims: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut v: Vec<f64> = (0..dims).map(|_| rng.sample(StandardNormal)).collect();
    let n = l2_norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn mixture(terms: &SeedTerms, stream: u64, dims: usize) -> Vec<f64> {
    if let [(seed, _)] = terms.as_slice() {
        return gaussian_unit(*seed, stream, dims);
    }
    let mut acc = vec![0.0; dims];
    for &(seed, w) in terms {
        for (a, g) in acc.iter_mut().zip(gaussian_unit(seed, stream, dims)) {
            *a += w * g;
        }
    }
    let first = gaussian_unit(terms[0].0, stream, dims);
    normalize_or_fallback(&mut acc, &first);
    acc
}

fn normalize_or_fallback(v: &mut Vec<f64>, fallback: &[f64]) {
    let n = l2_norm(v);
    if n > 1e-12 && n.is_finite() {
        v.iter_mut().for_each(|x| *x /= n);
    } else {
        v.clear();
        v.extend_from_slice(fallback);
    }
}

fn unit_vector(terms: &SeedTerms, stream: u64, dims: usize) -> DenseVector {
    DenseVector::unit(mixture(terms, stream, dims)).expect("mixture is unit length")
}

fn tokens(text: &str) -> HashSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Checks that an image payload can be located without reading it.
fn resolve(image: &ImageRef) -> Result<(), ProviderError> {
    let fail = |reason: String| ProviderError::Resolution {
        ref_id: image.ref_id.clone(),
        reason,
    };
    match &image.source {
        ImageSource::Inline { .. } => match image.inline_bytes() {
            Some(Ok(_)) => Ok(()),
            Some(Err(e)) => Err(fail(format!("bad base64 payload: {e}"))),
            None => unreachable!(),
        },
        ImageSource::Uri { uri } => {
            let path = match uri.split_once("://") {
                Some(("file", rest)) => rest,
                Some(("http" | "https" | "synthetic" | "placeholder", _)) => return Ok(()),
                Some((scheme, _)) => return Err(fail(format!("unsupported scheme {scheme:?}"))),
                None => uri.as_str(),
            };
            if Path::new(path).exists() {
                Ok(())
            } else {
                Err(fail(format!("{path} does not exist")))
            }
        }
    }
}
