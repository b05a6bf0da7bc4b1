mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use omgm_core::eval::SweepParam;
use omgm_core::pipeline::PromptStyle;
use omgm_core::synthetic::SyntheticSpec;

use crate::commands::Ctx;
use crate::config::{Overrides, ProcessEnv, RunConfig};

#[derive(Parser)]
#[command(name = "omgm", version, about = "Coarse-to-fine multimodal retrieval for knowledge-based VQA")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML config file; sections mirror the pipeline config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    index: Option<PathBuf>,
    #[arg(long, global = true)]
    samples: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Stage-1 candidates passed to reranking.
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Model service base URL; the offline deterministic provider is used
    /// when unset.
    #[arg(long, global = true)]
    provider_url: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    style: Option<StyleArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StyleArg {
    Evqa,
    Infoseek,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and normalize a corpus, segmenting raw articles.
    Ingest {
        /// Section length bound for raw articles, in characters.
        #[arg(long)]
        max_chars: Option<usize>,
    },
    /// Generate entity summaries, reusing cached ones in --out.
    Summarize,
    /// Embed summaries and persist the entity index.
    Index {
        /// Summaries file from `summarize`, attached before embedding.
        #[arg(long)]
        summaries: Option<PathBuf>,
    },
    /// Run the pipeline over a sample file.
    Query {
        #[arg(long)]
        with_generation: bool,
    },
    /// Score a results file against gold samples.
    Eval {
        #[arg(long)]
        results: Option<PathBuf>,
        /// Also write question/prediction/reference triples here.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Sweep alpha, beta or k over a grid.
    Sweep {
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values, e.g. `10,20,50`.
        #[arg(long)]
        grid: String,
    },
    /// Export contrastive training pairs.
    ExportPairs,
    /// Write a synthetic benchmark with planted seeds.
    Synth {
        #[arg(long, default_value_t = 100)]
        entities: usize,
        #[arg(long, default_value_t = 100)]
        queries: usize,
        /// Fraction of query images blended with a distractor.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0.0)]
        imageless: f64,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Summarize => "summarize",
            Command::Index { .. } => "index",
            Command::Query { .. } => "query",
            Command::Eval { .. } => "eval",
            Command::Sweep { .. } => "sweep",
            Command::ExportPairs => "export-pairs",
            Command::Synth { .. } => "synth",
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = cli.global;
    let cfg = RunConfig::resolve(
        g.config.as_deref(),
        &ProcessEnv,
        Overrides {
            seed: g.seed,
            provider_url: g.provider_url,
            k: g.k,
            alpha: g.alpha,
            beta: g.beta,
            style: g.style.map(|s| match s {
                StyleArg::Evqa => PromptStyle::Evqa,
                StyleArg::Infoseek => PromptStyle::Infoseek,
            }),
            out: g.out,
        },
    )?;
    let mut ctx = Ctx::new(cfg, cli.command.name());
    let (corpus, index, samples) = (g.corpus.as_deref(), g.index.as_deref(), g.samples.as_deref());
    match cli.command {
        Command::Ingest { max_chars } => commands::ingest(&mut ctx, corpus, max_chars),
        Command::Summarize => commands::summarize(&mut ctx, corpus),
        Command::Index { summaries } => commands::index(&mut ctx, corpus, summaries.as_deref()),
        Command::Query { with_generation } => commands::query(&mut ctx, samples, corpus, index, with_generation),
        Command::Eval { results, predictions } => {
            commands::eval(&mut ctx, results.as_deref(), samples, predictions.as_deref())
        }
        Command::Sweep { param, grid } => {
            let grid = commands::parse_grid(param, &grid)?;
            commands::sweep_cmd(&mut ctx, param, &grid, samples, corpus, index)
        }
        Command::ExportPairs => commands::export_pairs_cmd(&mut ctx, samples, corpus, index),
        Command::Synth {
            entities,
            queries,
            noise,
            imageless,
        } => {
            if !(0.0..=1.0).contains(&noise) || !(0.0..=1.0).contains(&imageless) {
                return Err(error::usage("--noise and --imageless must lie in [0, 1]"));
            }
            let spec = SyntheticSpec {
                entities,
                queries,
                distractor_rate: noise,
                imageless_rate: imageless,
                seed: ctx.cfg.seed,
                ..Default::default()
            };
            commands::synth(&mut ctx, spec)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if error::is_usage(&e) => {
            eprintln!("usage error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
