//! End-to-end orchestration: clean, rewrite, retrieve, expand, rerank, evaluate.

use std::collections::{HashMap, HashSet};
use std::error::Error as StdError;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{
    endpoint, ConfigError, EmbedderSpec, JudgeSpec, LlmSpec, Params, PipelineConfig, StageToggles, ENV_EMBED_URL,
    ENV_JUDGE_URL, ENV_LLM_API_KEY, ENV_LLM_MODEL, ENV_LLM_URL,
};
use crate::corpus::{
    calibrate_threshold, filter_blurred, parse_captions, parse_id_list, parse_manifest, parse_sharpness, sample_scores,
    CorpusManifest,
};
use crate::embedding::{load_store, EmbeddingProvider, EmbeddingStore, HttpEmbeddingProvider, MockEmbeddingProvider};
use crate::eval::{evaluate_run, load_qrels, write_run, MetricReport, Qrels, RunFile};
use crate::events::{segment_corpus, Event};
use crate::rerank::{posterior_filter, HttpJudge, MockJudge, RelevanceJudge};
use crate::retrieval::{
    extend_with_event_rounds, rank_images, score_ids, temporal_expand, top_events, write_provenance, CandidatePool,
    ExpansionParams, Provenance, ScoredCandidate, TemporalOptions,
};
use crate::rewrite::{
    read_topics, rewrite_all, write_rewrites, FixtureClient, HttpChatClient, RewrittenQuery, TextLlmClient, Topic,
};

type BoxError = Box<dyn StdError + Send + Sync>;

const DEFAULT_LLM_MODEL: &str = "gpt-3.5-turbo";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: BoxError,
    },
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl PipelineError {
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            PipelineError::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}

fn at<E: Into<BoxError>>(stage: &'static str) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        source: e.into(),
    }
}

fn open(stage: &'static str, path: &Path) -> Result<BufReader<File>, PipelineError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| at(stage)(format!("{}: {e}", path.display())))
}

/// Pool size after a stage. `topic` is `None` for corpus-wide stages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageRecord {
    pub topic: Option<String>,
    pub stage: String,
    pub size: usize,
}

pub fn write_stage_log<W: Write>(records: &[StageRecord], mut w: W) -> io::Result<()> {
    for r in records {
        writeln!(w, "{}\t{}\t{}", r.topic.as_deref().unwrap_or("*"), r.stage, r.size)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub run: RunFile,
    pub report: Option<MetricReport>,
    /// Candidate pool per topic before reranking, in topic order.
    pub pools: Vec<CandidatePool>,
    pub rewrites: Vec<RewrittenQuery>,
    pub stage_log: Vec<StageRecord>,
    /// Topics whose judge calls all failed.
    pub degraded_topics: Vec<String>,
    pub judge_failures: usize,
}

/// Loaded inputs and providers, ready to execute.
pub struct Pipeline {
    pub stages: StageToggles,
    pub params: Params,
    pub run_tag: String,
    pub manifest: CorpusManifest,
    pub store: EmbeddingStore,
    pub events: Vec<Event>,
    pub topics: Vec<Topic>,
    pub qrels: Option<Qrels>,
    embedder: Box<dyn EmbeddingProvider>,
    llm: Option<Box<dyn TextLlmClient>>,
    judge: Option<Box<dyn RelevanceJudge>>,
    corpus_log: Vec<StageRecord>,
}

impl Pipeline {
    /// Validates the config, then loads and cleans the corpus and builds providers.
    pub fn prepare(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        let stages = cfg.validate()?;
        let params = cfg.params.clone();
        let paths = &cfg.paths;
        let embedder = build_embedder(&cfg.providers.embedder)?;

        let mut manifest = parse_manifest(open("ingest", &paths.manifest)?).map_err(at("ingest"))?;
        let mut corpus_log = vec![StageRecord {
            topic: None,
            stage: "corpus".into(),
            size: manifest.len(),
        }];
        let store = load_store(&paths.store).map_err(at("load_store"))?;
        if store.dim() != embedder.dim() {
            return Err(ConfigError::OutOfRange {
                field: "providers.embedder.dim",
                value: embedder.dim().to_string(),
                expected: "must equal the embedding store dimension",
            }
            .into());
        }
        if let Some(id) = manifest.ids().find(|id| !store.contains(id)) {
            return Err(at("load_store")(format!("image {id} has no embedding")));
        }

        if let Some(sharpness) = &paths.sharpness {
            let scores = parse_sharpness(open("filter_blur", sharpness)?).map_err(at("filter_blur"))?;
            manifest.attach_sharpness(&scores);
            let threshold = match (params.blur_threshold, &paths.blurry_sample) {
                (Some(t), _) => t,
                (None, Some(sample)) => {
                    let ids = parse_id_list(open("filter_blur", sample)?).map_err(at("filter_blur"))?;
                    let s = sample_scores(&manifest, ids.iter().map(String::as_str)).map_err(at("filter_blur"))?;
                    calibrate_threshold(&s).map_err(at("filter_blur"))?
                }
                (None, None) => unreachable!("validate requires a threshold source"),
            };
            let (kept, removed) = filter_blurred(&manifest, threshold).map_err(at("filter_blur"))?;
            log::info!("blur threshold {threshold:.4}: removed {} images", removed.len());
            manifest = kept;
            corpus_log.push(StageRecord {
                topic: None,
                stage: "blur_filter".into(),
                size: manifest.len(),
            });
        }
        if manifest.is_empty() {
            return Err(at("filter_blur")("no images left in the corpus"));
        }
        let store = store.retain_ids(manifest.ids());

        let events = segment_corpus(&manifest, &store, params.tau).map_err(at("segment"))?;
        corpus_log.push(StageRecord {
            topic: None,
            stage: "events".into(),
            size: events.len(),
        });

        let topics = read_topics(open("topics", &paths.topics)?).map_err(at("topics"))?;
        let qrels = match &paths.qrels {
            Some(p) => Some(load_qrels(open("evaluate", p)?).map_err(at("evaluate"))?),
            None => None,
        };

        let llm: Option<Box<dyn TextLlmClient>> = if stages.rewrite {
            Some(match &cfg.providers.llm {
                LlmSpec::Fixture => {
                    let path = paths.llm_fixture.as_ref().expect("validated");
                    Box::new(FixtureClient::read(open("rewrite", path)?).map_err(at("rewrite"))?)
                }
                LlmSpec::Http { url, model } => {
                    let url = endpoint(url, ENV_LLM_URL)?;
                    let model = model
                        .clone()
                        .or_else(|| std::env::var(ENV_LLM_MODEL).ok())
                        .unwrap_or_else(|| DEFAULT_LLM_MODEL.to_string());
                    let key = std::env::var(ENV_LLM_API_KEY).ok();
                    Box::new(HttpChatClient::new(&url, model, key).map_err(at("rewrite"))?)
                }
            })
        } else {
            None
        };

        let judge: Option<Box<dyn RelevanceJudge>> = if stages.rerank {
            Some(match &cfg.providers.judge {
                JudgeSpec::Mock(rule) => {
                    let captions = match &paths.captions {
                        Some(p) => parse_captions(open("rerank", p)?).map_err(at("rerank"))?,
                        None => HashMap::new(),
                    };
                    let locations = manifest
                        .images
                        .iter()
                        .filter_map(|r| r.location.clone().map(|l| (r.id.clone(), l)))
                        .collect();
                    Box::new(
                        MockJudge::new(rule.clone())
                            .with_captions(captions)
                            .with_locations(locations),
                    )
                }
                JudgeSpec::Http { url } => {
                    Box::new(HttpJudge::new(&endpoint(url, ENV_JUDGE_URL)?).map_err(at("rerank"))?)
                }
            })
        } else {
            None
        };

        Ok(Self {
            stages,
            params,
            run_tag: cfg.run_tag(),
            manifest,
            store,
            events,
            topics,
            qrels,
            embedder,
            llm,
            judge,
            corpus_log,
        })
    }

    pub fn execute(&self) -> Result<PipelineOutput, PipelineError> {
        let p = &self.params;
        let rewrites = match &self.llm {
            Some(llm) => {
                rewrite_all(&self.topics, llm.as_ref(), p.rewrite_retries, p.parallelism).map_err(at("rewrite"))?
            }
            None => self
                .topics
                .iter()
                .map(|t| {
                    RewrittenQuery::capped(&t.topic_id, &format!("{} {}", t.title, t.description))
                        .ok_or_else(|| at("rewrite")(format!("topic {} has no query text", t.topic_id)))
                })
                .collect::<Result<_, _>>()?,
        };
        let texts: Vec<String> = rewrites.iter().map(|r| r.text.clone()).collect();
        let queries = self.embedder.embed_texts(&texts).map_err(at("embed_query"))?;
        if queries.len() != texts.len() {
            return Err(at("embed_query")("embedder returned the wrong number of vectors"));
        }

        let mut stage_log = self.corpus_log.clone();
        let mut run = RunFile::new(self.run_tag.clone());
        let mut pools = Vec::with_capacity(self.topics.len());
        let mut degraded_topics = Vec::new();
        let mut judge_failures = 0;
        for ((topic, rewrite), q) in self.topics.iter().zip(&rewrites).zip(&queries) {
            let tid = &topic.topic_id;
            let mut log = |stage: String, size: usize| {
                stage_log.push(StageRecord {
                    topic: Some(tid.clone()),
                    stage,
                    size,
                })
            };

            let full = rank_images(q, &self.store, self.store.len()).map_err(at("first_stage"))?;
            let mut pool = CandidatePool::from_candidates(tid.clone(), full.iter().take(p.k_images).cloned());
            log("first_stage".into(), pool.len());

            if self.stages.temporal_expand {
                let ids = self.temporal_window(q, &full).map_err(at("temporal_expansion"))?;
                let fresh: Vec<&str> = ids.iter().map(String::as_str).filter(|id| !pool.contains(id)).collect();
                let scored = score_ids(q, &fresh, &self.store, Provenance::TemporalExpansion)
                    .map_err(at("temporal_expansion"))?;
                pool.merge(scored);
                log("temporal_expansion".into(), pool.len());
            }

            if self.stages.event_rounds > 0 {
                let before = pool.round_history.len();
                let params = ExpansionParams {
                    rounds: self.stages.event_rounds,
                    k_events: p.k_events,
                    m: p.m,
                    k_images: p.k_images,
                };
                extend_with_event_rounds(&mut pool, q, &self.store, &self.events, params)
                    .map_err(at("event_expansion"))?;
                for (r, size) in pool.round_history[before..].iter().copied().enumerate() {
                    log(format!("event_round_{}", r + 1), size);
                }
            }

            let head: Vec<(String, f64)> = match &self.judge {
                Some(judge) => {
                    let out = posterior_filter(
                        &pool,
                        judge.as_ref(),
                        &rewrite.text,
                        topic.location_hint.as_deref(),
                        p.k_out,
                        p.parallelism,
                    )
                    .map_err(at("rerank"))?;
                    judge_failures += out.failures;
                    if out.degraded {
                        degraded_topics.push(tid.clone());
                    }
                    log("rerank".into(), pool.len());
                    out.ranked.into_iter().zip(out.scores).collect()
                }
                None => pool
                    .candidates()
                    .iter()
                    .take(p.k_out)
                    .map(|c| (c.image_id.clone(), c.score))
                    .collect(),
            };
            log("cutoff".into(), head.len());
            let rows = fill_to_cutoff(head, &full, p.k_out);
            log("output".into(), rows.len());
            run.topics.insert(tid.clone(), rows);
            pools.push(pool);
        }

        let report = match &self.qrels {
            Some(q) => Some(evaluate_run(&run, q).map_err(at("evaluate"))?),
            None => None,
        };
        Ok(PipelineOutput {
            run,
            report,
            pools,
            rewrites,
            stage_log,
            degraded_topics,
            judge_failures,
        })
    }

    /// Reranks the rows of an existing run with the configured judge. Topics
    /// use `queries` when given, otherwise title and description.
    pub fn rerank_run(&self, run: &RunFile, queries: &[RewrittenQuery]) -> Result<PipelineOutput, PipelineError> {
        let judge = self
            .judge
            .as_ref()
            .ok_or_else(|| at("rerank")("no judge configured: enable the rerank stage"))?;
        let texts: HashMap<&str, &str> = queries.iter().map(|r| (r.topic_id.as_str(), r.text.as_str())).collect();
        let mut out = RunFile::new(self.run_tag.clone());
        let mut stage_log = Vec::new();
        let mut pools = Vec::new();
        let mut degraded_topics = Vec::new();
        let mut judge_failures = 0;
        for (tid, rows) in &run.topics {
            let topic = self
                .topics
                .iter()
                .find(|t| &t.topic_id == tid)
                .ok_or_else(|| at("rerank")(format!("run topic {tid} is not in the topics file")))?;
            let fallback = format!("{} {}", topic.title, topic.description);
            let query = texts.get(tid.as_str()).copied().unwrap_or(fallback.as_str());
            let pool = CandidatePool::from_candidates(
                tid.clone(),
                rows.iter().map(|(id, score)| ScoredCandidate {
                    image_id: id.clone(),
                    score: *score,
                    provenance: Provenance::FirstStage,
                }),
            );
            let r = posterior_filter(
                &pool,
                judge.as_ref(),
                query,
                topic.location_hint.as_deref(),
                self.params.k_out,
                self.params.parallelism,
            )
            .map_err(at("rerank"))?;
            judge_failures += r.failures;
            if r.degraded {
                degraded_topics.push(tid.clone());
            }
            stage_log.push(StageRecord {
                topic: Some(tid.clone()),
                stage: "rerank".into(),
                size: r.ranked.len(),
            });
            out.topics
                .insert(tid.clone(), r.ranked.into_iter().zip(r.scores).collect());
            pools.push(pool);
        }
        let report = match &self.qrels {
            Some(q) => Some(evaluate_run(&out, q).map_err(at("evaluate"))?),
            None => None,
        };
        Ok(PipelineOutput {
            run: out,
            report,
            pools,
            rewrites: queries.to_vec(),
            stage_log,
            degraded_topics,
            judge_failures,
        })
    }

    /// Temporal window around the best image of each top event.
    fn temporal_window(
        &self,
        q: &crate::embedding::EmbeddingVector,
        full: &[ScoredCandidate],
    ) -> Result<std::collections::BTreeSet<String>, crate::retrieval::RetrievalError> {
        let score: HashMap<&str, &ScoredCandidate> = full.iter().map(|c| (c.image_id.as_str(), c)).collect();
        let reps: Vec<ScoredCandidate> = top_events(q, &self.events, self.params.k_events)?
            .into_iter()
            .filter_map(|e| {
                e.members
                    .iter()
                    .filter_map(|id| score.get(id.as_str()).copied())
                    .min_by(|a, b| crate::retrieval::rank_order(a.score, &a.image_id, b.score, &b.image_id))
                    .cloned()
            })
            .collect();
        temporal_expand(
            &reps,
            &self.manifest,
            TemporalOptions {
                window: self.params.w,
                clip_to_day: self.params.clip_window_to_day,
            },
        )
    }
}

/// Pads `head` with the best remaining corpus images up to
/// `min(k_out, corpus size)` rows. Both inputs are non-increasing in score;
/// the stable merge keeps head rows first on ties.
fn fill_to_cutoff(head: Vec<(String, f64)>, full: &[ScoredCandidate], k_out: usize) -> Vec<(String, f64)> {
    let target = k_out.min(full.len());
    let taken: HashSet<&str> = head.iter().map(|(id, _)| id.as_str()).collect();
    let need = target.saturating_sub(head.len());
    let fill: Vec<(String, f64)> = full
        .iter()
        .filter(|c| !taken.contains(c.image_id.as_str()))
        .take(need)
        .map(|c| (c.image_id.clone(), c.score))
        .collect();
    let mut out = Vec::with_capacity(head.len() + fill.len());
    let (mut a, mut b) = (head.into_iter().peekable(), fill.into_iter().peekable());
    loop {
        let take_head = match (a.peek(), b.peek()) {
            (Some(x), Some(y)) => x.1 >= y.1,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => break,
        };
        out.push(if take_head { a.next() } else { b.next() }.expect("peeked"));
    }
    out
}

fn build_embedder(spec: &EmbedderSpec) -> Result<Box<dyn EmbeddingProvider>, PipelineError> {
    Ok(match spec {
        EmbedderSpec::Mock { dim } => Box::new(MockEmbeddingProvider::new(*dim).map_err(at("embed_query"))?),
        EmbedderSpec::Http { url, dim } => {
            Box::new(HttpEmbeddingProvider::new(endpoint(url, ENV_EMBED_URL)?, *dim).map_err(at("embed_query"))?)
        }
    })
}

pub const RUN_FILE: &str = "run.txt";
pub const PROVENANCE_FILE: &str = "provenance.tsv";
pub const STAGE_LOG_FILE: &str = "stages.log";
pub const REWRITES_FILE: &str = "rewrites.tsv";
pub const REPORT_FILE: &str = "report.txt";
pub const REPORT_KV_FILE: &str = "report.kv";

/// Writes all outputs into `dir`. On failure every file written so far is removed.
pub fn write_outputs(out: &PipelineOutput, dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut files: Vec<(&str, Vec<u8>)> = Vec::new();
    let mut buf = Vec::new();
    write_run(&out.run, &mut buf).expect("in-memory write");
    files.push((RUN_FILE, std::mem::take(&mut buf)));
    write_provenance(&out.pools, &mut buf).expect("in-memory write");
    files.push((PROVENANCE_FILE, std::mem::take(&mut buf)));
    write_stage_log(&out.stage_log, &mut buf).expect("in-memory write");
    files.push((STAGE_LOG_FILE, std::mem::take(&mut buf)));
    write_rewrites(&out.rewrites, &mut buf).expect("in-memory write");
    files.push((REWRITES_FILE, std::mem::take(&mut buf)));
    if let Some(report) = &out.report {
        let mut text = report.to_table();
        let mut kv = report.to_kv();
        if !out.degraded_topics.is_empty() {
            text.push_str(&format!(
                "rerank degraded to prior order (judge unavailable): {}\n",
                out.degraded_topics.join(", ")
            ));
        }
        kv.push_str(&format!("rerank.degraded={}\n", out.degraded_topics.join(",")));
        kv.push_str(&format!("rerank.judge_failures={}\n", out.judge_failures));
        files.push((REPORT_FILE, text.into_bytes()));
        files.push((REPORT_KV_FILE, kv.into_bytes()));
    }

    let fail = |path: &Path, source| PipelineError::Output {
        path: path.to_path_buf(),
        source,
    };
    fs::create_dir_all(dir).map_err(|e| fail(dir, e))?;
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        let res = File::create(&path).and_then(|f| {
            let mut w = BufWriter::new(f);
            w.write_all(&bytes)?;
            w.flush()
        });
        if let Err(e) = res {
            let _ = fs::remove_file(&path);
            for p in &written {
                let _ = fs::remove_file(p);
            }
            return Err(fail(&path, e));
        }
        written.push(path);
    }
    Ok(written)
}

/// Prepares, executes and writes outputs to `cfg.paths.output`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    let out = Pipeline::prepare(cfg)?.execute()?;
    write_outputs(&out, &cfg.paths.output)?;
    Ok(out)
}
