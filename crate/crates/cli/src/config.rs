//! Run configuration: defaults, then the TOML file, then `OMGM_*`
//! environment variables, then flags.

use std::path::{Path, PathBuf};

use omgm_core::eval::{EvalOptions, DEFAULT_TOLERANCE};
use omgm_core::pipeline::{PipelineConfig, PromptStyle};
use omgm_core::provider::{ProviderEndpoint, RetryPolicy};
use omgm_core::reranker::PairConfig;
use serde::{Deserialize, Serialize};

use crate::error::usage;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub provider_url: Option<String>,
    pub pipeline: PipelineConfig,
    pub eval: EvalSection,
    pub pairs: PairsSection,
    pub index: IndexSection,
    pub provider: ProviderSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub ks: Vec<usize>,
    pub tolerance: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            ks: vec![1, 5, 10, 20],
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairsSection {
    pub n: usize,
    pub max_hard: usize,
}

impl Default for PairsSection {
    fn default() -> Self {
        let d = PairConfig::default();
        Self {
            n: d.n,
            max_hard: d.max_hard,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexSection {
    pub normalize: bool,
}

impl Default for IndexSection {
    fn default() -> Self {
        Self { normalize: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSection {
    pub timeout_ms: u64,
    pub max_batch: usize,
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for ProviderSection {
    fn default() -> Self {
        let e = ProviderEndpoint::new("");
        Self {
            timeout_ms: e.timeout_ms,
            max_batch: e.max_batch,
            max_retries: e.retry.max_retries,
            backoff_ms: e.retry.backoff_ms,
        }
    }
}

/// Flag values that override the file and environment.
#[derive(Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub provider_url: Option<String>,
    pub k: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub style: Option<PromptStyle>,
    pub out: Option<PathBuf>,
}

/// Fully resolved settings, written into every output for provenance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub provider_url: Option<String>,
    pub provider: ProviderSection,
    pub pipeline: PipelineConfig,
    pub eval: EvalSection,
    pub pairs: PairsSection,
    pub index: IndexSection,
    pub out: Option<PathBuf>,
}

/// Environment lookups, injectable for tests.
pub trait Env {
    fn var(&self, key: &str) -> Option<String>;
}

pub struct ProcessEnv;

impl Env for ProcessEnv {
    fn var(&self, key: &str) -> Option<String> {
        std::env::var(key).ok().filter(|v| !v.is_empty())
    }
}

fn env_parse<T: std::str::FromStr>(env: &dyn Env, key: &str) -> anyhow::Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    env.var(key)
        .map(|v| v.parse::<T>().map_err(|e| usage(format!("{key}={v:?}: {e}"))))
        .transpose()
}

impl RunConfig {
    pub fn resolve(file: Option<&Path>, env: &dyn Env, flags: Overrides) -> anyhow::Result<Self> {
        let fc = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| usage(format!("--config {}: {e}", path.display())))?;
                toml::from_str::<FileConfig>(&text).map_err(|e| usage(format!("--config {}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };
        let mut cfg = RunConfig {
            seed: fc.seed.unwrap_or(0),
            provider_url: fc.provider_url,
            provider: fc.provider,
            pipeline: fc.pipeline,
            eval: fc.eval,
            pairs: fc.pairs,
            index: fc.index,
            out: None,
        };

        if let Some(url) = env.var("OMGM_PROVIDER_URL") {
            cfg.provider_url = Some(url);
        }
        if let Some(seed) = env_parse(env, "OMGM_SEED")? {
            cfg.seed = seed;
        }
        if let Some(p) = env_parse(env, "OMGM_PARALLELISM")? {
            cfg.pipeline.parallelism = p;
        }

        let Overrides {
            seed,
            provider_url,
            k,
            alpha,
            beta,
            style,
            out,
        } = flags;
        for (flag, v) in [("--alpha", alpha), ("--beta", beta)] {
            if let Some(v) = v.filter(|v| !(0.0..=1.0).contains(v)) {
                return Err(usage(format!("{flag} {v}: must lie in [0, 1]")));
            }
        }
        if k == Some(0) {
            return Err(usage("--k 0: must be at least 1"));
        }
        cfg.seed = seed.unwrap_or(cfg.seed);
        cfg.provider_url = provider_url.or(cfg.provider_url);
        cfg.pipeline.k = k.unwrap_or(cfg.pipeline.k);
        cfg.pipeline.alpha = alpha.unwrap_or(cfg.pipeline.alpha);
        cfg.pipeline.beta = beta.unwrap_or(cfg.pipeline.beta);
        cfg.pipeline.style = style.unwrap_or(cfg.pipeline.style);
        cfg.out = out;

        cfg.pipeline.validate().map_err(|e| usage(format!("config: {e}")))?;
        if cfg.pairs.n < 2 {
            return Err(usage("config: pairs.n must be at least 2"));
        }
        if cfg.eval.ks.contains(&0) || cfg.eval.tolerance.is_nan() || cfg.eval.tolerance < 0.0 {
            return Err(usage("config: eval.ks must be ≥ 1 and eval.tolerance ≥ 0"));
        }
        Ok(cfg)
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            ks: self.eval.ks.clone(),
            tolerance: self.eval.tolerance,
        }
    }

    pub fn pair_config(&self) -> PairConfig {
        PairConfig {
            n: self.pairs.n,
            max_hard: self.pairs.max_hard,
            seed: self.seed,
        }
    }

    pub fn endpoint(&self) -> Option<ProviderEndpoint> {
        self.provider_url.as_ref().map(|url| ProviderEndpoint {
            timeout_ms: self.provider.timeout_ms,
            max_batch: self.provider.max_batch,
            retry: RetryPolicy {
                max_retries: self.provider.max_retries,
                backoff_ms: self.provider.backoff_ms,
            },
            max_in_flight: self.pipeline.parallelism,
            ..ProviderEndpoint::new(url.clone())
        })
    }
}
