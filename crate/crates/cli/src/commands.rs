use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use omgm_core::corpus::{load_queries, validate_corpus, Corpus, CorpusFormat, QuerySample, SegmentationPolicy};
use omgm_core::eval::{evaluate, sweep, write_predictions, write_sweep_csv, SweepParam};
use omgm_core::index::{IndexMetadata, IndexOptions};
use omgm_core::jsonl::{read_records, JsonlWriter};
use omgm_core::par::Exec;
use omgm_core::pipeline::{
    build_summary_index, run_batch, stage1_search, summary_prompt, ResultRecord, StageTimings,
};
use omgm_core::provider::{DeterministicProvider, GenerateParams, HttpProvider};
use omgm_core::reranker::{build_pairs, export_pairs, RerankerError};
use omgm_core::synthetic::{generate, SyntheticSpec};
use omgm_core::{Provider, VectorIndex, ENGINE_VERSION};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{domain, usage};

/// Provenance block written at the head of (or beside) every output.
#[derive(Serialize)]
struct Meta<'a> {
    engine_version: &'static str,
    command: &'static str,
    provider_id: Option<String>,
    inputs: BTreeMap<&'static str, String>,
    run_config: &'a RunConfig,
}

pub struct Ctx {
    pub cfg: RunConfig,
    pub command: &'static str,
    inputs: BTreeMap<&'static str, String>,
    provider: Option<Box<dyn Provider>>,
}

impl Ctx {
    pub fn new(cfg: RunConfig, command: &'static str) -> Self {
        Self {
            cfg,
            command,
            inputs: BTreeMap::new(),
            provider: None,
        }
    }

    /// Checks that a required path flag was given and exists.
    pub fn input(&mut self, flag: &'static str, path: Option<&Path>) -> anyhow::Result<PathBuf> {
        let path = path.ok_or_else(|| usage(format!("{} requires --{flag}", self.command)))?;
        if !path.exists() {
            return Err(usage(format!("--{flag} {}: no such file", path.display())));
        }
        self.inputs.insert(flag, path.display().to_string());
        Ok(path.to_path_buf())
    }

    pub fn out(&self) -> anyhow::Result<PathBuf> {
        self.cfg
            .out
            .clone()
            .ok_or_else(|| usage(format!("{} requires --out", self.command)))
    }

    fn provider(&mut self) -> anyhow::Result<&dyn Provider> {
        if self.provider.is_none() {
            let p: Box<dyn Provider> = match self.cfg.endpoint() {
                Some(ep) => Box::new(HttpProvider::new(ep).map_err(domain("provider"))?),
                None => Box::new(DeterministicProvider::default()),
            };
            self.provider = Some(p);
        }
        Ok(self.provider.as_deref().expect("set above"))
    }

    fn meta(&self) -> Meta<'_> {
        Meta {
            engine_version: ENGINE_VERSION,
            command: self.command,
            provider_id: self.provider.as_ref().map(|p| p.id()),
            inputs: self.inputs.clone(),
            run_config: &self.cfg,
        }
    }

    fn meta_value(&self) -> serde_json::Value {
        serde_json::to_value(self.meta()).expect("meta serializes")
    }

    fn jsonl(&self, path: &Path) -> anyhow::Result<JsonlWriter<File>> {
        let mut w = JsonlWriter::create(path).with_context(|| format!("creating {}", path.display()))?;
        w.write_meta(&self.meta())?;
        Ok(w)
    }

    fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// `dir/name.ext` becomes `dir/name.{tag}.{ext}`.
pub fn sidecar(path: &Path, tag: &str, ext: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{tag}.{ext}"))
}

fn load_corpus_arg(ctx: &mut Ctx, corpus: Option<&Path>) -> anyhow::Result<Corpus> {
    let path = ctx.input("corpus", corpus)?;
    omgm_core::corpus::load_corpus(&path, CorpusFormat::Jsonl).map_err(domain("corpus"))
}

fn load_samples_arg(ctx: &mut Ctx, samples: Option<&Path>) -> anyhow::Result<Vec<QuerySample>> {
    let path = ctx.input("samples", samples)?;
    load_queries(&path).map_err(domain("corpus"))
}

fn load_index_arg(ctx: &mut Ctx, index: Option<&Path>) -> anyhow::Result<VectorIndex> {
    let path = ctx.input("index", index)?;
    VectorIndex::load(&path).map_err(domain("index"))
}

fn write_corpus(ctx: &Ctx, path: &Path, corpus: &Corpus) -> anyhow::Result<()> {
    let mut w = ctx.jsonl(path)?;
    for e in corpus.entities() {
        w.write(e)?;
    }
    w.finish()?;
    Ok(())
}

pub fn ingest(ctx: &mut Ctx, corpus: Option<&Path>, max_chars: Option<usize>) -> anyhow::Result<()> {
    let path = ctx.input("corpus", corpus)?;
    let out = ctx.out()?;
    let policy = SegmentationPolicy {
        max_chars: max_chars.unwrap_or(SegmentationPolicy::default().max_chars),
        ..Default::default()
    };
    let corpus = Corpus::load_with(&path, &policy).map_err(domain("corpus"))?;
    let manifest = validate_corpus(&corpus);
    write_corpus(ctx, &out, &corpus)?;
    ctx.write_json(
        &sidecar(&out, "manifest", "json"),
        &serde_json::json!({"_meta": ctx.meta(), "manifest": manifest}),
    )?;
    eprintln!(
        "ingested {} entities ({} sections); {} without main image, {} without summary",
        manifest.counts.entities,
        manifest.counts.sections,
        manifest.missing_main_image.len(),
        manifest.missing_summary.len()
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct SummaryLine {
    entity_id: String,
    prompt_hash: String,
    summary: String,
}

fn prompt_hash(prompt: &str) -> String {
    Sha256::digest(prompt.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Generates one summary per entity. The output file doubles as the
/// cache: entries whose (entity_id, prompt hash) already appear in it are
/// reused.
pub fn summarize(ctx: &mut Ctx, corpus: Option<&Path>) -> anyhow::Result<()> {
    let corpus = load_corpus_arg(ctx, corpus)?;
    let out = ctx.out()?;
    let mut cache: HashMap<(String, String), String> = HashMap::new();
    if out.exists() {
        for (_, l) in read_records::<SummaryLine>(&out).map_err(domain("corpus"))? {
            cache.insert((l.entity_id, l.prompt_hash), l.summary);
        }
    }
    let params = GenerateParams {
        max_tokens: ctx.cfg.pipeline.max_tokens,
    };
    let mut lines = Vec::with_capacity(corpus.len());
    let mut generated = 0;
    for e in corpus.entities() {
        let prompt = summary_prompt(e);
        let key = (e.entity_id.clone(), prompt_hash(&prompt));
        let summary = match cache.remove(&key) {
            Some(s) => s,
            None => {
                generated += 1;
                ctx.provider()?
                    .generate(&prompt, &params)
                    .map_err(domain("provider"))
                    .with_context(|| format!("summarizing {}", e.entity_id))?
            }
        };
        lines.push(SummaryLine {
            entity_id: key.0,
            prompt_hash: key.1,
            summary,
        });
    }
    ctx.provider()?;
    let mut w = ctx.jsonl(&out)?;
    for l in &lines {
        w.write(l)?;
    }
    w.finish()?;
    eprintln!("{} summaries ({generated} generated, {} cached)", lines.len(), lines.len() - generated);
    Ok(())
}

pub fn index(ctx: &mut Ctx, corpus: Option<&Path>, summaries: Option<&Path>) -> anyhow::Result<()> {
    let mut corpus = load_corpus_arg(ctx, corpus)?;
    if summaries.is_some() {
        let path = ctx.input("summaries", summaries)?;
        let map: BTreeMap<String, String> = read_records::<SummaryLine>(&path)
            .map_err(domain("corpus"))?
            .into_iter()
            .map(|(_, l)| (l.entity_id, l.summary))
            .collect();
        corpus = corpus.attach_summaries(&map).map_err(domain("corpus"))?;
    }
    let out = ctx.out()?;
    ctx.provider()?;
    let meta = IndexMetadata {
        built_at: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        run_config: Some(ctx.meta_value()),
        ..Default::default()
    };
    let options = IndexOptions {
        normalize: ctx.cfg.index.normalize,
    };
    let index = build_summary_index(&corpus, ctx.provider()?, options, meta).map_err(domain("pipeline"))?;
    index.persist(&out).map_err(domain("index"))?;
    eprintln!("indexed {} entities ({} dims)", index.len(), index.dims());
    if !index.metadata().truncated.is_empty() {
        eprintln!("{} summaries were truncated by the provider", index.metadata().truncated.len());
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
pub struct TimingLine {
    pub sample_id: String,
    pub timings_ms: StageTimings,
}

/// Writes `results.jsonl` without timings so reruns are byte-identical;
/// wall-clock timings go to the `results.timings.jsonl` sidecar.
pub fn query(
    ctx: &mut Ctx,
    samples: Option<&Path>,
    corpus: Option<&Path>,
    index: Option<&Path>,
    with_generation: bool,
) -> anyhow::Result<()> {
    let samples = load_samples_arg(ctx, samples)?;
    let corpus = load_corpus_arg(ctx, corpus)?;
    let index = load_index_arg(ctx, index)?;
    let out = ctx.out()?;
    ctx.provider()?;
    let provider = ctx.provider.as_deref().expect("provider resolved");
    let outputs = run_batch(
        &samples,
        &corpus,
        &index,
        provider,
        &ctx.cfg.pipeline,
        with_generation,
        Exec::Parallel,
    );
    let mut results = ctx.jsonl(&out)?;
    let mut timings = ctx.jsonl(&sidecar(&out, "timings", "jsonl"))?;
    for (s, o) in samples.iter().zip(outputs) {
        let o = o
            .map_err(domain("pipeline"))
            .with_context(|| format!("sample {}", s.sample_id))?;
        results.write(&ResultRecord::from_output(&o, false))?;
        timings.write(&TimingLine {
            sample_id: o.sample_id.clone(),
            timings_ms: o.timings,
        })?;
    }
    results.finish()?;
    timings.finish()?;
    eprintln!("wrote {} results to {}", samples.len(), out.display());
    Ok(())
}

pub fn eval(
    ctx: &mut Ctx,
    results: Option<&Path>,
    samples: Option<&Path>,
    predictions: Option<&Path>,
) -> anyhow::Result<()> {
    let results_path = ctx.input("results", results)?;
    let samples = load_samples_arg(ctx, samples)?;
    let records: Vec<ResultRecord> = read_records(&results_path)
        .map_err(domain("eval"))?
        .into_iter()
        .map(|(_, r)| r)
        .collect();
    let timing_path = sidecar(&results_path, "timings", "jsonl");
    let timings: Vec<StageTimings> = if timing_path.exists() {
        read_records::<TimingLine>(&timing_path)
            .map_err(domain("eval"))?
            .into_iter()
            .map(|(_, t)| t.timings_ms)
            .collect()
    } else {
        Vec::new()
    };
    let report = evaluate(&records, &samples, &timings, &ctx.cfg.eval_options(), ctx.meta_value())
        .map_err(domain("eval"))?;
    if let Some(p) = predictions {
        let n = write_predictions(p, &records, &samples).map_err(domain("eval"))?;
        eprintln!("wrote {n} predictions to {}", p.display());
    }
    match &ctx.cfg.out {
        Some(out) => ctx.write_json(out, &report)?,
        None => {
            let text = serde_json::to_string_pretty(&report)?;
            // A closed pipe (`omgm eval | head`) is not a failure.
            match writeln!(std::io::stdout().lock(), "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
                _ => {}
            }
        }
    }
    let r = &report.metrics.recall;
    eprintln!(
        "recall {}",
        r.iter().map(|(k, v)| format!("@{k}={v:.4}")).collect::<Vec<_>>().join(" ")
    );
    Ok(())
}

pub fn parse_grid(param: SweepParam, grid: &str) -> anyhow::Result<Vec<f64>> {
    let values = grid
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| usage(format!("--grid {v:?}: {e}"))))
        .collect::<anyhow::Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(usage("--grid is empty"));
    }
    let ok = |v: f64| match param {
        SweepParam::K => v >= 1.0 && v.fract() == 0.0,
        SweepParam::Alpha | SweepParam::Beta => (0.0..=1.0).contains(&v),
    };
    if let Some(bad) = values.iter().find(|v| !ok(**v)) {
        return Err(usage(format!("--grid value {bad} is out of range for {param}")));
    }
    Ok(values)
}

/// Grid points run one after another with samples sequential inside each
/// point, so the latency column measures uncontended stage time.
pub fn sweep_cmd(
    ctx: &mut Ctx,
    param: SweepParam,
    grid: &[f64],
    samples: Option<&Path>,
    corpus: Option<&Path>,
    index: Option<&Path>,
) -> anyhow::Result<()> {
    let samples = load_samples_arg(ctx, samples)?;
    let corpus = load_corpus_arg(ctx, corpus)?;
    let index = load_index_arg(ctx, index)?;
    let out = ctx.out()?;
    ctx.provider()?;
    let provider = ctx.provider.as_deref().expect("provider resolved");
    let rows = sweep(param, grid, &samples, &corpus, &index, provider, &ctx.cfg.pipeline, Exec::Sequential)
        .map_err(domain("eval"))?;
    write_sweep_csv(&out, &rows).map_err(domain("eval"))?;
    ctx.write_json(
        &sidecar(&out, "meta", "json"),
        &serde_json::json!({"_meta": ctx.meta(), "rows": rows}),
    )?;
    eprintln!("wrote {} rows to {}", rows.len(), out.display());
    Ok(())
}

pub fn export_pairs_cmd(
    ctx: &mut Ctx,
    samples: Option<&Path>,
    corpus: Option<&Path>,
    index: Option<&Path>,
) -> anyhow::Result<()> {
    let samples = load_samples_arg(ctx, samples)?;
    let corpus = load_corpus_arg(ctx, corpus)?;
    let index = load_index_arg(ctx, index)?;
    let out = ctx.out()?;
    ctx.provider()?;
    let meta = ctx.meta_value();
    let provider = ctx.provider.as_deref().expect("provider resolved");
    let pair_cfg = ctx.cfg.pair_config();
    let k = ctx.cfg.pipeline.k;
    let sets = samples.iter().map(|s| {
        let stage1 = stage1_search(provider, &s.image, &corpus, &index, k)
            .map_err(|e| RerankerError::Precondition(format!("sample {}: {e}", s.sample_id)))?;
        build_pairs(s, &stage1, &corpus, &pair_cfg, provider)
    });
    let n = export_pairs(&out, Some(&meta), sets).map_err(domain("reranker"))?;
    eprintln!("wrote {n} pair sets to {}", out.display());
    Ok(())
}

pub fn synth(ctx: &mut Ctx, spec: SyntheticSpec) -> anyhow::Result<()> {
    let out = ctx.out()?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let bench = generate(&spec).map_err(domain("synthetic"))?;
    write_corpus(ctx, &out.join("corpus.jsonl"), &bench.corpus)?;
    let mut w = ctx.jsonl(&out.join("samples.jsonl"))?;
    for s in &bench.samples {
        w.write(s)?;
    }
    w.finish()?;
    eprintln!(
        "wrote {} entities and {} samples to {}",
        bench.corpus.len(),
        bench.samples.len(),
        out.display()
    );
    Ok(())
}
