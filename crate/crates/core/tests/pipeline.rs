use std::fs;
use std::path::Path;

use momentir_core::config::{JudgeSpec, Overrides, PipelineConfig};
use momentir_core::eval::{candidate_recall, load_run};
use momentir_core::fixture::{generate, Fixture, FixtureParams};
use momentir_core::pipeline::{run_pipeline, Pipeline, PipelineError, StageRecord, RUN_FILE};
use momentir_core::rewrite::FixtureClient;

fn small_fixture(dir: &Path) -> Fixture {
    let f = generate(FixtureParams {
        seed: 11,
        images: 1500,
        days: 6,
        topics: 4,
        dim: 256,
        noise: 0.004,
    })
    .unwrap();
    f.write_to(dir).unwrap();
    f
}

fn config(f: &Fixture, dir: &Path, preset: &str) -> PipelineConfig {
    let text = f.config(preset).to_toml_string().unwrap();
    PipelineConfig::from_toml_str(&text, dir).unwrap()
}

fn topic_stages<'a>(log: &'a [StageRecord], topic: &str) -> Vec<(&'a str, usize)> {
    log.iter()
        .filter(|r| r.topic.as_deref() == Some(topic))
        .map(|r| (r.stage.as_str(), r.size))
        .collect()
}

#[test]
fn lsat01_emits_k_out_rows_per_topic() {
    let dir = tempfile::tempdir().unwrap();
    let f = small_fixture(dir.path());
    let cfg = config(&f, dir.path(), "lsat01");
    let out = run_pipeline(&cfg).unwrap();
    let text = fs::read(cfg.paths.output.join(RUN_FILE)).unwrap();
    let (run, warnings) = load_run(text.as_slice()).unwrap();
    assert!(warnings.is_empty());
    assert_eq!(run.run_tag, "lsat01");
    assert_eq!(run.topics.len(), 4);
    for (t, rows) in &run.topics {
        let mem = &out.run.topics[t];
        assert!(rows
            .iter()
            .zip(mem)
            .all(|(a, b)| a.0 == b.0 && (a.1 - b.1).abs() <= 5e-7));
    }
    for rows in run.topics.values() {
        assert_eq!(rows.len(), 100);
    }
    for name in [
        "provenance.tsv",
        "stages.log",
        "rewrites.tsv",
        "report.txt",
        "report.kv",
    ] {
        assert!(cfg.paths.output.join(name).is_file(), "{name}");
    }
}

#[test]
fn k_out_above_corpus_returns_whole_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let f = small_fixture(dir.path());
    let mut cfg = config(&f, dir.path(), "lsat03");
    cfg.apply_overrides(&Overrides {
        k_out: Some(100_000),
        ..Default::default()
    });
    let p = Pipeline::prepare(&cfg).unwrap();
    let out = p.execute().unwrap();
    for rows in out.run.topics.values() {
        assert_eq!(rows.len(), p.store.len());
        assert!(rows.windows(2).all(|w| w[0].1 >= w[1].1));
    }
}

#[test]
fn more_rounds_never_lose_recall() {
    let dir = tempfile::tempdir().unwrap();
    let f = small_fixture(dir.path());
    let run = |preset| {
        Pipeline::prepare(&config(&f, dir.path(), preset))
            .unwrap()
            .execute()
            .unwrap()
    };
    let (five, six) = (run("lsat05"), run("lsat06"));
    for (a, b) in five.pools.iter().zip(&six.pools) {
        let grades = f.qrels.topic(&a.topic_id).unwrap();
        let ra = candidate_recall(a.ids(), grades).unwrap();
        let rb = candidate_recall(b.ids(), grades).unwrap();
        assert!(rb >= ra, "{}: {rb} < {ra}", a.topic_id);
    }
}

#[test]
fn stage_log_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let f = small_fixture(dir.path());
    for preset in ["lsat04", "lsat06"] {
        let out = Pipeline::prepare(&config(&f, dir.path(), preset))
            .unwrap()
            .execute()
            .unwrap();
        let global: Vec<_> = out.stage_log.iter().filter(|r| r.topic.is_none()).collect();
        assert_eq!(global[0].stage, "corpus");
        assert_eq!(global[1].stage, "blur_filter");
        assert!(global[1].size < global[0].size);
        for t in &f.topics {
            let stages = topic_stages(&out.stage_log, &t.topic_id);
            // expansion up to rerank, filtering down to the cutoff, then padding
            let rerank = stages.iter().position(|(s, _)| *s == "rerank").unwrap();
            assert!(stages[..=rerank].windows(2).all(|w| w[0].1 <= w[1].1), "{stages:?}");
            assert_eq!(stages[rerank + 1].0, "cutoff");
            assert!(stages[rerank + 1].1 <= stages[rerank].1);
            assert_eq!(stages[rerank + 2], ("output", 100));
        }
        if preset == "lsat06" {
            let stages = topic_stages(&out.stage_log, "T01");
            let names: Vec<&str> = stages.iter().map(|s| s.0).collect();
            assert_eq!(
                names,
                [
                    "first_stage",
                    "event_round_1",
                    "event_round_2",
                    "event_round_3",
                    "rerank",
                    "cutoff",
                    "output"
                ]
            );
        } else {
            assert_eq!(topic_stages(&out.stage_log, "T01")[1].0, "temporal_expansion");
        }
    }
}

#[test]
fn temporal_expansion_grows_by_at_most_the_window() {
    let dir = tempfile::tempdir().unwrap();
    let f = small_fixture(dir.path());
    let out = Pipeline::prepare(&config(&f, dir.path(), "lsat04"))
        .unwrap()
        .execute()
        .unwrap();
    for t in &f.topics {
        let stages = topic_stages(&out.stage_log, &t.topic_id);
        assert!(stages[1].1 - stages[0].1 <= 161 + 100);
    }
}

#[test]
fn missing_store_fails_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let f = small_fixture(dir.path());
    let mut cfg = config(&f, dir.path(), "lsat06");
    cfg.paths.store = dir.path().join("nope.lmeb");
    match run_pipeline(&cfg) {
        Err(PipelineError::Config(e)) => assert!(e.to_string().contains("paths.store")),
        other => panic!("{other:?}"),
    }
    assert!(!cfg.paths.output.exists());
}

#[test]
fn stage_failure_names_stage_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let f = small_fixture(dir.path());
    // Drop one topic's completions so rewriting fails.
    let mut partial = FixtureClient::new();
    partial.insert("unrelated", "x");
    partial
        .write(fs::File::create(dir.path().join("llm_fixture.tsv")).unwrap())
        .unwrap();
    let cfg = config(&f, dir.path(), "lsat01");
    let err = run_pipeline(&cfg).unwrap_err();
    assert_eq!(err.stage(), Some("rewrite"));
    assert!(err.to_string().contains("rewrite"));
    assert!(!cfg.paths.output.exists());
}

#[test]
fn judge_outage_degrades_and_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let f = small_fixture(dir.path());
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let mut cfg = config(&f, dir.path(), "lsat03");
    cfg.providers.judge = JudgeSpec::Http {
        url: Some(format!("http://127.0.0.1:{port}")),
    };
    let baseline = Pipeline::prepare(&config(&f, dir.path(), "lsat01"))
        .unwrap()
        .execute()
        .unwrap();
    let out = run_pipeline(&cfg).unwrap();
    assert_eq!(out.degraded_topics.len(), f.topics.len());
    let report = fs::read_to_string(cfg.paths.output.join("report.txt")).unwrap();
    assert!(report.contains("degraded"));
    let ids = |r: &momentir_core::eval::RunFile| -> Vec<Vec<String>> {
        r.topics
            .values()
            .map(|rows| rows.iter().map(|x| x.0.clone()).collect())
            .collect()
    };
    assert_eq!(ids(&out.run), ids(&baseline.run));
}

#[test]
fn rewrite_off_uses_topic_text() {
    let dir = tempfile::tempdir().unwrap();
    let f = small_fixture(dir.path());
    let mut cfg = config(&f, dir.path(), "lsat01");
    cfg.preset = None;
    cfg.stages.rewrite = false;
    cfg.paths.llm_fixture = None;
    let out = Pipeline::prepare(&cfg).unwrap().execute().unwrap();
    assert!(out.rewrites[0].text.starts_with(&f.topics[0].title));
    assert!(out.rewrites.iter().all(|r| r.word_count <= 30));
}
