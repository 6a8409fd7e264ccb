use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use momentir_core::config::{endpoint, ConfigError, Overrides, PipelineConfig, ENV_EMBED_URL};
use momentir_core::corpus::{
    calibrate_threshold, filter_blurred, parse_captions, parse_id_list, parse_manifest, parse_sharpness, sample_scores,
    score_images, write_sharpness, CorpusManifest,
};
use momentir_core::embedding::{
    load_store, save_store, EmbeddingProvider, EmbeddingStore, HttpEmbeddingProvider, MockEmbeddingProvider,
};
use momentir_core::eval::{evaluate_run, load_qrels, load_run};
use momentir_core::events::{segment_corpus, write_event_table};
use momentir_core::fixture::{generate, FixtureParams};
use momentir_core::pipeline::{write_outputs, Pipeline, PipelineError, PipelineOutput};
use momentir_core::rewrite::read_rewrites;

#[derive(Parser)]
#[command(
    name = "momentir",
    version,
    about = "Moment retrieval over time-stamped image collections"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a manifest and optionally score image sharpness.
    Ingest(IngestArgs),
    /// Drop blurry images from a manifest.
    FilterBlur(FilterBlurArgs),
    /// Embed every manifest image into a vector store.
    Embed(EmbedArgs),
    /// Segment each day into visual events.
    Segment(SegmentArgs),
    /// Run retrieval and expansion stages without reranking or evaluation.
    Retrieve(ConfigArgs),
    /// Rerank an existing run file with the configured judge.
    Rerank(RerankArgs),
    /// Score a run file against relevance judgments.
    Evaluate(EvaluateArgs),
    /// Run every configured stage and evaluate.
    Pipeline(ConfigArgs),
    /// Write a synthetic corpus with planted events, topics and judgments.
    GenFixture(GenFixtureArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Normalized manifest output.
    #[arg(long)]
    out: PathBuf,
    /// Directory of `<id>.png|jpg` rasters to score.
    #[arg(long, requires = "sharpness_out")]
    images: Option<PathBuf>,
    #[arg(long)]
    sharpness_out: Option<PathBuf>,
}

#[derive(Args)]
struct FilterBlurArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    sharpness: PathBuf,
    #[arg(long, conflicts_with = "blurry_sample", required_unless_present = "blurry_sample")]
    threshold: Option<f64>,
    /// Ids of known-blurry images; the threshold is their mean score.
    #[arg(long)]
    blurry_sample: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Where to list removed ids.
    #[arg(long)]
    removed: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderKind {
    Mock,
    Http,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "mock")]
    provider: ProviderKind,
    #[arg(long, default_value_t = 512)]
    dim: usize,
    /// Caption table for the mock provider.
    #[arg(long)]
    captions: Option<PathBuf>,
    /// Embedding service URL; falls back to the environment.
    #[arg(long)]
    url: Option<String>,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    tau: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: OverrideArgs,
}

#[derive(Args)]
struct OverrideArgs {
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    qrels: Option<PathBuf>,
    #[arg(long)]
    run_tag: Option<String>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    w: Option<usize>,
    #[arg(long)]
    rounds: Option<u32>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    k_events: Option<usize>,
    #[arg(long)]
    k_images: Option<usize>,
    #[arg(long)]
    k_out: Option<usize>,
    #[arg(long)]
    blur_threshold: Option<f64>,
    #[arg(long)]
    parallelism: Option<usize>,
}

impl From<OverrideArgs> for Overrides {
    fn from(a: OverrideArgs) -> Self {
        Overrides {
            preset: a.preset,
            output: a.output,
            qrels: a.qrels,
            run_tag: a.run_tag,
            tau: a.tau,
            w: a.w,
            rounds: a.rounds,
            m: a.m,
            k_events: a.k_events,
            k_images: a.k_images,
            k_out: a.k_out,
            blur_threshold: a.blur_threshold,
            parallelism: a.parallelism,
        }
    }
}

#[derive(Args)]
struct RerankArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Run file whose rows form the candidate pools.
    #[arg(long)]
    run: PathBuf,
    /// Rewritten queries (`topic_id<TAB>text`) to judge against.
    #[arg(long)]
    rewrites: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// Print `key=value` lines instead of a table.
    #[arg(long)]
    kv: bool,
}

#[derive(Args)]
struct GenFixtureArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    images: Option<usize>,
    #[arg(long)]
    days: Option<usize>,
    #[arg(long)]
    topics: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}

/// Joins the error chain, skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let s = cause.to_string();
        if !msg.contains(&s) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&s);
        }
    }
    msg
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest(a) => ingest(a).context("ingest"),
        Command::FilterBlur(a) => filter_blur(a).context("filter-blur"),
        Command::Embed(a) => embed(a).context("embed"),
        Command::Segment(a) => segment(a).context("segment"),
        Command::Retrieve(a) => retrieve(a),
        Command::Rerank(a) => rerank(a),
        Command::Evaluate(a) => evaluate(a).context("evaluate"),
        Command::Pipeline(a) => pipeline(a),
        Command::GenFixture(a) => gen_fixture(a).context("gen-fixture"),
    }
}

fn reader(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

/// Writes through a temporary file so a failed command leaves nothing behind.
fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let tmp = path.with_extension("partial");
    let res = File::create(&tmp).and_then(|f| {
        let mut w = BufWriter::new(f);
        fill(&mut w)?;
        w.flush()
    });
    match res.and_then(|()| fs::rename(&tmp, path)) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(anyhow!(e).context(format!("cannot write {}", path.display())))
        }
    }
}

fn load_manifest(path: &Path) -> Result<CorpusManifest> {
    parse_manifest(reader(path)?).with_context(|| format!("bad manifest {}", path.display()))
}

fn ingest(a: IngestArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    if let (Some(dir), Some(out)) = (&a.images, &a.sharpness_out) {
        let ids: Vec<String> = manifest.ids().map(str::to_string).collect();
        let scores = score_images(dir, &ids)?;
        write_atomic(out, |w| write_sharpness(&scores, w))?;
    }
    write_atomic(&a.out, |w| manifest.write_tsv(w))?;
    eprintln!("ingested {} images over {} days", manifest.len(), manifest.days().len());
    Ok(())
}

fn filter_blur(a: FilterBlurArgs) -> Result<()> {
    let mut manifest = load_manifest(&a.manifest)?;
    manifest.attach_sharpness(&parse_sharpness(reader(&a.sharpness)?)?);
    let threshold = match (a.threshold, &a.blurry_sample) {
        (Some(t), _) => t,
        (None, Some(p)) => {
            let ids = parse_id_list(reader(p)?)?;
            calibrate_threshold(&sample_scores(&manifest, ids.iter().map(String::as_str))?)?
        }
        (None, None) => unreachable!("clap requires one threshold source"),
    };
    let (kept, removed) = filter_blurred(&manifest, threshold)?;
    write_atomic(&a.out, |w| kept.write_tsv(w))?;
    if let Some(path) = &a.removed {
        write_atomic(path, |w| removed.iter().try_for_each(|id| writeln!(w, "{id}")))?;
    }
    eprintln!(
        "threshold {threshold:.6}: kept {}, removed {}",
        kept.len(),
        removed.len()
    );
    Ok(())
}

fn embed(a: EmbedArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let provider: Box<dyn EmbeddingProvider> = match a.provider {
        ProviderKind::Mock => {
            let captions = match &a.captions {
                Some(p) => parse_captions(reader(p)?)?,
                None => HashMap::new(),
            };
            Box::new(MockEmbeddingProvider::new(a.dim)?.with_captions(captions))
        }
        ProviderKind::Http => Box::new(HttpEmbeddingProvider::new(endpoint(&a.url, ENV_EMBED_URL)?, a.dim)?),
    };
    let ids: Vec<String> = manifest.ids().map(str::to_string).collect();
    let vectors = provider.embed_images(&ids)?;
    let mut store = EmbeddingStore::new(a.dim)?;
    for (id, v) in ids.into_iter().zip(vectors) {
        store.insert(id, v)?;
    }
    let tmp = a.out.with_extension("partial");
    if let Err(e) = save_store(&store, &tmp).and_then(|()| fs::rename(&tmp, &a.out).map_err(Into::into)) {
        let _ = fs::remove_file(&tmp);
        return Err(anyhow!(e).context(format!("cannot write {}", a.out.display())));
    }
    eprintln!("embedded {} images (dim {})", store.len(), store.dim());
    Ok(())
}

fn segment(a: SegmentArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let store = load_store(&a.store).with_context(|| format!("bad store {}", a.store.display()))?;
    let events = segment_corpus(&manifest, &store, a.tau)?;
    write_atomic(&a.out, |w| write_event_table(&events, w))?;
    eprintln!("{} events over {} days", events.len(), manifest.days().len());
    Ok(())
}

fn load_config(a: ConfigArgs) -> Result<PipelineConfig, ConfigError> {
    let mut cfg = PipelineConfig::load(&a.config)?;
    cfg.apply_overrides(&a.overrides.into());
    Ok(cfg)
}

/// Replaces the preset with its expanded toggles so individual stages can be changed.
fn pin_stages(cfg: &mut PipelineConfig) -> Result<(), ConfigError> {
    let run_tag = cfg.run_tag();
    cfg.stages = cfg.effective_stages()?;
    cfg.run_tag = Some(run_tag);
    cfg.preset = None;
    Ok(())
}

fn report(out: &PipelineOutput, cfg: &PipelineConfig) {
    if let Some(r) = &out.report {
        print!("{}", r.to_table());
    }
    if !out.degraded_topics.is_empty() {
        eprintln!(
            "warning: judge unavailable, prior order kept for {}",
            out.degraded_topics.join(", ")
        );
    }
    eprintln!("outputs written to {}", cfg.paths.output.display());
}

fn finish(cfg: &PipelineConfig, result: Result<PipelineOutput, PipelineError>) -> Result<()> {
    let out = result.and_then(|out| write_outputs(&out, &cfg.paths.output).map(|_| out));
    match out {
        Ok(out) => {
            report(&out, cfg);
            Ok(())
        }
        Err(e) => Err(e.into()),
    }
}

fn pipeline(a: ConfigArgs) -> Result<()> {
    let cfg = load_config(a).context("configuration")?;
    let out = Pipeline::prepare(&cfg).and_then(|p| p.execute());
    finish(&cfg, out)
}

fn retrieve(a: ConfigArgs) -> Result<()> {
    let mut cfg = load_config(a).context("configuration")?;
    pin_stages(&mut cfg).context("configuration")?;
    cfg.stages.rerank = false;
    cfg.paths.qrels = None;
    let out = Pipeline::prepare(&cfg).and_then(|p| p.execute());
    finish(&cfg, out)
}

fn rerank(a: RerankArgs) -> Result<()> {
    let (run, warnings) = load_run(reader(&a.run)?).context("rerank: bad run file")?;
    for w in warnings {
        log::warn!("{}: line {}: {}", a.run.display(), w.line, w.message);
    }
    let queries = match &a.rewrites {
        Some(p) => read_rewrites(reader(p)?).context("rerank: bad rewrites file")?,
        None => Vec::new(),
    };
    let mut cfg = load_config(a.config).context("configuration")?;
    pin_stages(&mut cfg).context("configuration")?;
    cfg.stages.rerank = true;
    cfg.stages.rewrite = false;
    let out = Pipeline::prepare(&cfg).and_then(|p| p.rerank_run(&run, &queries));
    finish(&cfg, out)
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let (run, warnings) = load_run(reader(&a.run)?).with_context(|| format!("bad run file {}", a.run.display()))?;
    for w in warnings {
        log::warn!("{}: line {}: {}", a.run.display(), w.line, w.message);
    }
    let qrels = load_qrels(reader(&a.qrels)?).with_context(|| format!("bad qrels {}", a.qrels.display()))?;
    let report = evaluate_run(&run, &qrels)?;
    if a.kv {
        print!("{}", report.to_kv());
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

fn gen_fixture(a: GenFixtureArgs) -> Result<()> {
    let d = FixtureParams::default();
    let params = FixtureParams {
        seed: a.seed.unwrap_or(d.seed),
        images: a.images.unwrap_or(d.images),
        days: a.days.unwrap_or(d.days),
        topics: a.topics.unwrap_or(d.topics),
        dim: a.dim.unwrap_or(d.dim),
        ..d
    };
    let fixture = generate(params)?;
    let files = fixture.write_to(&a.out)?;
    eprintln!(
        "wrote {} files to {} ({} images, {} topics)",
        files.len(),
        a.out.display(),
        fixture.manifest.len(),
        fixture.topics.len()
    );
    Ok(())
}
