use omgm_core::corpus::QuerySample;
use omgm_core::eval::recall_at_k;
use omgm_core::index::{IndexMetadata, IndexOptions};
use omgm_core::par::Exec;
use omgm_core::pipeline::{
    build_summary_index, rerank_entities, run_batch, run_pipeline, stage1_search, PipelineConfig, PipelineError,
    PipelineOutput, Query, Stage,
};
use omgm_core::provider::{DeterministicConfig, DeterministicProvider, Provider};
use omgm_core::synthetic::{generate, SyntheticBenchmark, SyntheticSpec};
use omgm_core::{Corpus, VectorIndex};

fn setup(spec: &SyntheticSpec) -> (SyntheticBenchmark, VectorIndex, DeterministicProvider) {
    let bench = generate(spec).unwrap();
    let provider = DeterministicProvider::default();
    let index = build_summary_index(&bench.corpus, &provider, IndexOptions::default(), IndexMetadata::default()).unwrap();
    (bench, index, provider)
}

fn run_all(bench: &SyntheticBenchmark, index: &VectorIndex, p: &dyn Provider, cfg: &PipelineConfig) -> Vec<PipelineOutput> {
    run_batch(&bench.samples, &bench.corpus, index, p, cfg, false, Exec::Parallel)
        .into_iter()
        .map(Result::unwrap)
        .collect()
}

fn golds(samples: &[QuerySample]) -> Vec<Option<String>> {
    samples.iter().map(|s| s.gold_entity_id.clone()).collect()
}

#[test]
fn planted_sample_finds_gold_entity_and_section() {
    let (bench, index, p) = setup(&SyntheticSpec {
        entities: 60,
        queries: 30,
        ..Default::default()
    });
    for s in &bench.samples {
        let out = run_pipeline(s, &bench.corpus, &index, &p, &PipelineConfig::default(), false).unwrap();
        assert_eq!(out.stage1[0].entity_id, *s.gold_entity_id.as_ref().unwrap());
        assert!((out.stage1[0].sim_c - 1.0).abs() < 1e-9);
        assert_eq!(out.context.entity_id, *s.gold_entity_id.as_ref().unwrap());
        assert_eq!(out.context.section.index, s.gold_section_index.unwrap());
        assert!(out.answer.is_none());
    }
}

#[test]
fn stage1_returns_k_sorted() {
    let (bench, index, p) = setup(&SyntheticSpec {
        entities: 100,
        queries: 5,
        ..Default::default()
    });
    let hits = stage1_search(&p, &bench.samples[0].image, &bench.corpus, &index, 20).unwrap();
    assert_eq!(hits.len(), 20);
    assert!(hits.windows(2).all(|w| w[0].sim_c >= w[1].sim_c));
}

#[test]
fn k1_passes_single_candidate() {
    let (bench, index, p) = setup(&SyntheticSpec {
        entities: 30,
        queries: 5,
        distractor_rate: 1.0,
        ..Default::default()
    });
    let cfg = PipelineConfig { k: 1, ..Default::default() };
    for s in &bench.samples {
        let out = run_pipeline(s, &bench.corpus, &index, &p, &cfg, false).unwrap();
        assert_eq!(out.reranked.len(), 1);
        assert_eq!(out.reranked[0].entity_id, out.stage1[0].entity_id);
    }
}

#[test]
fn generation_echoes_prompt() {
    let (bench, index, p) = setup(&SyntheticSpec {
        entities: 10,
        queries: 2,
        ..Default::default()
    });
    let out = run_pipeline(&bench.samples[0], &bench.corpus, &index, &p, &PipelineConfig::default(), true).unwrap();
    let answer = out.answer.unwrap();
    assert!(answer.starts_with("ECHO:"));
    assert!(out.prompt.unwrap().ends_with("The answer is:"));
    assert!(out.timings.generate.is_some());
}

#[test]
fn noisy_queries_reranking_recovers_gold() {
    let (bench, index, p) = setup(&SyntheticSpec {
        entities: 200,
        queries: 200,
        distractor_rate: 0.4,
        ..Default::default()
    });
    let outs = run_all(&bench, &index, &p, &PipelineConfig::default());
    let gold = golds(&bench.samples);
    let s1: Vec<Vec<String>> = outs.iter().map(|o| o.stage1.iter().map(|c| c.entity_id.clone()).collect()).collect();
    let s2: Vec<Vec<String>> = outs.iter().map(|o| o.reranked.iter().map(|c| c.entity_id.clone()).collect()).collect();
    let r1 = recall_at_k(&s1, &gold, 1);
    let r2 = recall_at_k(&s2, &gold, 1);
    assert!((0.5..=0.7).contains(&r1), "stage-1 R@1 {r1}");
    assert!(r2 >= r1, "stage-2 {r2} < stage-1 {r1}");
    assert!(r2 > 0.95, "stage-2 R@1 {r2}");
}

#[test]
fn batch_matches_sequential_runs() {
    let (bench, index, p) = setup(&SyntheticSpec {
        entities: 40,
        queries: 12,
        distractor_rate: 0.5,
        ..Default::default()
    });
    let cfg = PipelineConfig::default();
    let par = run_batch(&bench.samples, &bench.corpus, &index, &p, &cfg, false, Exec::Parallel);
    let seq = run_batch(&bench.samples, &bench.corpus, &index, &p, &cfg, false, Exec::Sequential);
    for (a, b) in par.into_iter().zip(seq) {
        let (a, b) = (a.unwrap(), b.unwrap());
        assert_eq!(a.sample_id, b.sample_id);
        assert_eq!(a.reranked, b.reranked);
        assert_eq!(a.context, b.context);
    }
}

#[test]
fn provider_mismatch_is_refused() {
    let (bench, index, _) = setup(&SyntheticSpec {
        entities: 10,
        queries: 1,
        ..Default::default()
    });
    let other = DeterministicProvider::new(DeterministicConfig {
        text_dims: 128,
        ..Default::default()
    });
    let err = run_pipeline(&bench.samples[0], &bench.corpus, &index, &other, &PipelineConfig::default(), false).unwrap_err();
    match err {
        PipelineError::Stage { stage, source } => {
            assert_eq!(stage, Stage::EntitySearch);
            assert!(matches!(*source, PipelineError::ProviderMismatch { .. }));
        }
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn index_entry_missing_from_corpus_is_consistency_error() {
    let (bench, index, p) = setup(&SyntheticSpec {
        entities: 10,
        queries: 1,
        ..Default::default()
    });
    let smaller = Corpus::from_entities(bench.corpus.entities()[1..].to_vec()).unwrap();
    let err = stage1_search(&p, &bench.samples[0].image, &smaller, &index, 10).unwrap_err();
    assert!(matches!(err, PipelineError::Consistency(_)), "{err}");
}

#[test]
fn rerank_needs_candidates() {
    let (bench, _, p) = setup(&SyntheticSpec {
        entities: 10,
        queries: 1,
        ..Default::default()
    });
    let s = &bench.samples[0];
    let q = Query {
        image: &s.image,
        question: &s.question,
    };
    assert!(rerank_entities(&[], q, &bench.corpus, &p, &PipelineConfig::default()).is_err());
}

#[test]
fn imageless_demotion_ranks_last() {
    let (bench, index, p) = setup(&SyntheticSpec {
        entities: 50,
        queries: 20,
        imageless_rate: 0.3,
        ..Default::default()
    });
    let cfg = PipelineConfig {
        imageless: omgm_core::pipeline::ImagelessPolicy::DemoteToBottom,
        ..Default::default()
    };
    for s in &bench.samples {
        let out = run_pipeline(s, &bench.corpus, &index, &p, &cfg, false).unwrap();
        let first_demoted = out.reranked.iter().position(|r| r.demoted).unwrap_or(out.reranked.len());
        assert!(out.reranked[first_demoted..].iter().all(|r| r.demoted && r.imageless));
    }
}
