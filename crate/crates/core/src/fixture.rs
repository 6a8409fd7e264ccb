//! Seeded synthetic lifelog corpus with planted relevant events.
//!
//! Every image gets a caption built from its activity segment: a segment
//! context token (weight 3), an activity phrase and one object word. Each
//! topic owns three relevant segments in which some images show all three
//! topic words ("clear" shots, grade 2) and the rest only one ("partial"
//! shots, grade 1), plus two distractor segments at another location that
//! show two topic words. Store vectors are the mock caption embeddings with
//! small Gaussian noise.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::config::{
    ConfigError, EmbedderSpec, JudgeSpec, LlmSpec, Params, Paths, PipelineConfig, Providers, StageToggles,
};
use crate::corpus::{write_captions, write_sharpness, CorpusManifest, ImageRecord};
use crate::embedding::{
    mock_embed, save_store, token_bucket, EmbeddingError, EmbeddingStore, EmbeddingVector, StoreError,
};
use crate::eval::{write_qrels, Qrels};
use crate::rerank::MockJudgeRule;
use crate::rewrite::{build_round1_prompt, build_round2_prompt, write_topics, FixtureClient, RewriteError, Topic};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const STORE_FILE: &str = "store.lmeb";
pub const CAPTIONS_FILE: &str = "captions.tsv";
pub const TOPICS_FILE: &str = "topics.jsonl";
pub const QRELS_FILE: &str = "qrels.txt";
pub const LLM_FIXTURE_FILE: &str = "llm_fixture.tsv";
pub const SHARPNESS_FILE: &str = "sharpness.tsv";
pub const BLURRY_SAMPLE_FILE: &str = "blurry_sample.txt";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Rewrite(#[from] RewriteError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureParams {
    pub seed: u64,
    pub images: usize,
    pub days: usize,
    pub topics: usize,
    pub dim: usize,
    /// Per-coordinate standard deviation of the noise added to store vectors.
    pub noise: f64,
}

impl Default for FixtureParams {
    fn default() -> Self {
        Self {
            seed: 2024,
            images: 5000,
            days: 30,
            topics: 10,
            dim: 512,
            noise: 0.004,
        }
    }
}

struct TopicSpec {
    title: &'static str,
    words: [&'static str; 3],
    location: &'static str,
    description: &'static str,
}

const TOPICS: [TopicSpec; 12] = [
    TopicSpec {
        title: "Birthday cake",
        words: ["birthday", "cake", "candles"],
        location: "home",
        description: "Find the moment when I saw a birthday cake with candles.",
    },
    TopicSpec {
        title: "Guitar practice",
        words: ["guitar", "amplifier", "chords"],
        location: "music studio",
        description: "Find the moment when I was practising guitar chords next to an amplifier.",
    },
    TopicSpec {
        title: "Swimming",
        words: ["swimming", "pool", "lanes"],
        location: "gym",
        description: "Find the moment when I was at a swimming pool with lanes.",
    },
    TopicSpec {
        title: "Boarding a flight",
        words: ["airport", "boarding", "gate"],
        location: "airport",
        description: "Find the moment when I was waiting at an airport boarding gate.",
    },
    TopicSpec {
        title: "Dentist visit",
        words: ["dentist", "clinic", "xray"],
        location: "clinic",
        description: "Find the moment when I was looking at a dental xray in the dentist clinic.",
    },
    TopicSpec {
        title: "Football match",
        words: ["football", "stadium", "crowd"],
        location: "stadium",
        description: "Find the moment when I watched football in a stadium with a crowd.",
    },
    TopicSpec {
        title: "Painting class",
        words: ["painting", "canvas", "brushes"],
        location: "art school",
        description: "Find the moment when I was painting on a canvas with brushes.",
    },
    TopicSpec {
        title: "Barbecue",
        words: ["barbecue", "charcoal", "sausages"],
        location: "park",
        description: "Find the moment when I cooked sausages over charcoal on a barbecue.",
    },
    TopicSpec {
        title: "Library visit",
        words: ["library", "bookshelf", "reading"],
        location: "library",
        description: "Find the moment when I was reading beside a library bookshelf.",
    },
    TopicSpec {
        title: "Cinema night",
        words: ["cinema", "popcorn", "screen"],
        location: "cinema",
        description: "Find the moment when I had popcorn in front of a cinema screen.",
    },
    TopicSpec {
        title: "Skiing",
        words: ["snow", "skiing", "slope"],
        location: "mountain",
        description: "Find the moment when I was skiing down a snow slope.",
    },
    TopicSpec {
        title: "Museum trip",
        words: ["museum", "statue", "exhibit"],
        location: "museum",
        description: "Find the moment when I looked at a statue exhibit in a museum.",
    },
];

const ACTIVITIES: [&str; 12] = [
    "desk monitor keyboard",
    "kitchen stove pan",
    "sofa television remote",
    "street traffic pavement",
    "car dashboard steering",
    "meeting whiteboard marker",
    "corridor door wall",
    "supermarket shelf trolley",
    "bedroom bed pillow",
    "garden grass hedge",
    "bus seat window",
    "restaurant table plate",
];

const OBJECTS: [&str; 12] = [
    "cup", "phone", "bag", "lamp", "book", "bottle", "chair", "clock", "poster", "plant", "shoe", "jacket",
];

const BACKGROUND_LOCATIONS: [&str; 6] = ["home", "office", "cafe", "street", "car", "supermarket"];

const MIN_SEGMENT: usize = 8;
const MAX_SEGMENT: usize = 30;
const BLURRY_FRACTION: f64 = 0.05;

#[derive(Clone, Copy, PartialEq)]
enum Role {
    Background,
    Relevant(usize),
    Distractor(usize),
}

struct Segment {
    start: usize,
    len: usize,
    role: Role,
}

/// In-memory fixture.
pub struct Fixture {
    pub manifest: CorpusManifest,
    pub store: EmbeddingStore,
    pub captions: HashMap<String, String>,
    pub topics: Vec<Topic>,
    pub qrels: Qrels,
    pub llm: FixtureClient,
    pub sharpness: Vec<(String, f64)>,
    pub blurry_sample: Vec<String>,
    pub params: FixtureParams,
}

/// Round-2 answer the fixture LLM returns for a topic.
pub fn fixture_query(topic_words: &[&str]) -> String {
    format!("{QUERY_PREFIX} {}", topic_words.join(" "))
}

const QUERY_PREFIX: &str = "photo of";

pub fn generate(params: FixtureParams) -> Result<Fixture, FixtureError> {
    if params.topics == 0 || params.topics > TOPICS.len() {
        return Err(FixtureError::Invalid(format!("topics must be in 1..={}", TOPICS.len())));
    }
    if params.days == 0 || params.images < params.days * MIN_SEGMENT {
        return Err(FixtureError::Invalid(format!(
            "need at least {MIN_SEGMENT} images per day"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    // Capture times: one image every 3 minutes from 08:00 each day.
    let start_day = NaiveDate::from_ymd_opt(2019, 1, 1).expect("valid date");
    let mut times: Vec<NaiveDateTime> = Vec::with_capacity(params.images);
    let mut day_bounds = Vec::with_capacity(params.days);
    for d in 0..params.days {
        let n = params.images / params.days + usize::from(d < params.images % params.days);
        let base = (start_day + Duration::days(d as i64))
            .and_hms_opt(8, 0, 0)
            .expect("valid time");
        day_bounds.push((times.len(), n));
        times.extend((0..n).map(|i| base + Duration::minutes(3 * i as i64)));
    }

    let mut segments = Vec::new();
    for &(offset, n) in &day_bounds {
        let mut pos = 0;
        while pos < n {
            let mut len = rng.gen_range(MIN_SEGMENT..=MAX_SEGMENT).min(n - pos);
            if n - pos - len < MIN_SEGMENT {
                len = n - pos;
            }
            segments.push(Segment {
                start: offset + pos,
                len,
                role: Role::Background,
            });
            pos += len;
        }
    }
    let needed = params.topics * 5;
    let mut order: Vec<usize> = (0..segments.len()).filter(|&i| segments[i].len <= 20).collect();
    if order.len() < needed {
        return Err(FixtureError::Invalid(
            "corpus too small for the requested topics".into(),
        ));
    }
    order.shuffle(&mut rng);
    for t in 0..params.topics {
        for k in 0..5 {
            let seg = order[t * 5 + k];
            segments[seg].role = if k < 3 { Role::Relevant(t) } else { Role::Distractor(t) };
        }
    }

    let mut captions = HashMap::new();
    let mut records = Vec::with_capacity(params.images);
    let mut qrels = Qrels::default();
    let mut blurry = Vec::new();
    let mut sharpness = Vec::with_capacity(params.images);
    let ids: Vec<String> = times
        .iter()
        .map(|t| format!("{}_000", t.format("%Y%m%d_%H%M%S")))
        .collect();
    let mut contexts = ContextTokens::new(params.dim, params.topics);
    for seg in &segments {
        let ctx = contexts.next_token();
        let activity = ACTIVITIES[rng.gen_range(0..ACTIVITIES.len())];
        let location = match seg.role {
            Role::Relevant(t) => TOPICS[t].location.to_string(),
            Role::Distractor(t) => loop {
                let l = BACKGROUND_LOCATIONS[rng.gen_range(0..BACKGROUND_LOCATIONS.len())];
                if l != TOPICS[t].location {
                    break l.to_string();
                }
            },
            Role::Background => BACKGROUND_LOCATIONS[rng.gen_range(0..BACKGROUND_LOCATIONS.len())].to_string(),
        };
        // Relevant segments get at least two clear and two partial shots.
        let clear_mask: Vec<bool> = {
            let mut m: Vec<bool> = (0..seg.len).map(|i| i < 2 || (i >= 4 && rng.gen_bool(0.5))).collect();
            m.shuffle(&mut rng);
            m
        };
        for (i, &clear) in clear_mask.iter().enumerate() {
            let idx = seg.start + i;
            let id = &ids[idx];
            let object = OBJECTS[rng.gen_range(0..OBJECTS.len())];
            let mut caption = format!("{ctx} {ctx} {ctx} {activity} {object}");
            match seg.role {
                Role::Relevant(t) => {
                    let words = TOPICS[t].words;
                    let tid = topic_id(t);
                    if clear {
                        caption.push(' ');
                        caption.push_str(&words.join(" "));
                        qrels.insert(&tid, id, 2);
                    } else {
                        caption.push(' ');
                        caption.push_str(words[rng.gen_range(0..3)]);
                        qrels.insert(&tid, id, 1);
                    }
                }
                Role::Distractor(t) => {
                    let words = TOPICS[t].words;
                    caption.push_str(&format!(" {} {}", words[0], words[1]));
                    qrels.insert(&topic_id(t), id, 0);
                }
                Role::Background => {}
            }
            let score = if seg.role == Role::Background && rng.gen_bool(BLURRY_FRACTION) {
                blurry.push(id.clone());
                rng.gen_range(2.0..12.0)
            } else {
                rng.gen_range(40.0..120.0)
            };
            sharpness.push((id.clone(), score));
            captions.insert(id.clone(), caption);
            records.push(ImageRecord {
                id: id.clone(),
                capture_time: times[idx],
                day: times[idx].date(),
                sequence_index: idx,
                location: Some(location.clone()),
                sharpness: None,
            });
        }
    }
    let manifest = CorpusManifest::from_records(records, format!("synthetic fixture, seed {}", params.seed));

    let normal = Normal::new(0.0, params.noise).map_err(|e| FixtureError::Invalid(e.to_string()))?;
    let mut store = EmbeddingStore::new(params.dim)?;
    for r in &manifest.images {
        let clean = mock_embed(&captions[&r.id], params.dim)?;
        let noisy: Vec<f32> = clean
            .as_slice()
            .iter()
            .map(|&x| (f64::from(x) + normal.sample(&mut rng)) as f32)
            .collect();
        store.insert(r.id.clone(), EmbeddingVector::normalized(noisy)?)?;
    }

    let mut topics = Vec::with_capacity(params.topics);
    let mut llm = FixtureClient::new();
    for (t, spec) in TOPICS.iter().take(params.topics).enumerate() {
        let topic = Topic {
            topic_id: topic_id(t),
            title: spec.title.to_string(),
            description: spec.description.to_string(),
            narrative: format!(
                "Images showing {} are relevant. Images that only show {} are not relevant.",
                spec.words.join(", "),
                spec.words[..2].join(" and ")
            ),
            location_hint: Some(spec.location.to_string()),
        };
        let summary = format!("{}, {} and {}.", spec.words[0], spec.words[1], spec.words[2]);
        llm.insert(&build_round1_prompt(&topic), summary.clone());
        llm.insert(&build_round2_prompt(&summary)?, fixture_query(&spec.words));
        topics.push(topic);
    }

    blurry.shuffle(&mut rng);
    let sample_size = (blurry.len() / 2).max(1).min(blurry.len());
    let mut blurry_sample: Vec<String> = blurry.into_iter().take(sample_size).collect();
    blurry_sample.sort();

    Ok(Fixture {
        manifest,
        store,
        captions,
        topics,
        qrels,
        llm,
        sharpness,
        blurry_sample,
        params,
    })
}

/// Hands out segment context tokens whose mock-embedding coordinates avoid
/// the fixed vocabulary and, while free coordinates remain, each other.
/// Consecutive tokens never share a coordinate.
struct ContextTokens {
    dim: usize,
    reserved: HashSet<usize>,
    used: HashSet<usize>,
    last: Option<usize>,
    counter: usize,
}

impl ContextTokens {
    fn new(dim: usize, topics: usize) -> Self {
        let fixed = TOPICS[..topics]
            .iter()
            .flat_map(|t| t.words)
            .chain(ACTIVITIES.iter().flat_map(|a| a.split(' ')))
            .chain(OBJECTS)
            .chain(QUERY_PREFIX.split(' '));
        Self {
            dim,
            reserved: fixed.map(|w| token_bucket(w, dim)).collect(),
            used: HashSet::new(),
            last: None,
            counter: 0,
        }
    }

    fn next_token(&mut self) -> String {
        if self.reserved.len() + self.used.len() >= self.dim {
            self.used.clear();
        }
        loop {
            let token = format!("scene{:04}", self.counter);
            self.counter += 1;
            let b = token_bucket(&token, self.dim);
            if self.reserved.contains(&b) || self.used.contains(&b) || self.last == Some(b) {
                continue;
            }
            self.used.insert(b);
            self.last = Some(b);
            return token;
        }
    }
}

fn topic_id(t: usize) -> String {
    format!("T{:02}", t + 1)
}

impl Fixture {
    /// Config for this fixture with file paths relative to the fixture directory.
    pub fn config(&self, preset: &str) -> PipelineConfig {
        PipelineConfig {
            seed: self.params.seed,
            preset: Some(preset.to_string()),
            run_tag: None,
            paths: Paths {
                manifest: MANIFEST_FILE.into(),
                store: STORE_FILE.into(),
                topics: TOPICS_FILE.into(),
                qrels: Some(QRELS_FILE.into()),
                output: "out".into(),
                sharpness: Some(SHARPNESS_FILE.into()),
                blurry_sample: (!self.blurry_sample.is_empty()).then(|| BLURRY_SAMPLE_FILE.into()),
                captions: Some(CAPTIONS_FILE.into()),
                llm_fixture: Some(LLM_FIXTURE_FILE.into()),
            },
            stages: StageToggles::default(),
            params: Params {
                tau: 0.6,
                k_images: 40,
                blur_threshold: self.blurry_sample.is_empty().then_some(0.0),
                ..Params::default()
            },
            providers: Providers {
                embedder: EmbedderSpec::Mock { dim: self.params.dim },
                llm: LlmSpec::Fixture,
                judge: JudgeSpec::Mock(MockJudgeRule {
                    threshold: 0.05,
                    dim: self.params.dim,
                    check_location: true,
                }),
            },
        }
    }

    /// Writes every fixture file plus `config.toml` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>, FixtureError> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut file = |name: &str| -> io::Result<BufWriter<File>> {
            let path = dir.join(name);
            written.push(path.clone());
            File::create(path).map(BufWriter::new)
        };
        self.manifest.write_tsv(file(MANIFEST_FILE)?)?;
        write_captions(&self.captions, file(CAPTIONS_FILE)?)?;
        write_topics(&self.topics, file(TOPICS_FILE)?)?;
        write_qrels(&self.qrels, file(QRELS_FILE)?)?;
        self.llm.write(file(LLM_FIXTURE_FILE)?)?;
        write_sharpness(&self.sharpness, file(SHARPNESS_FILE)?)?;
        let mut w = file(BLURRY_SAMPLE_FILE)?;
        for id in &self.blurry_sample {
            writeln!(w, "{id}")?;
        }
        w.flush()?;
        drop(w);
        let mut cfg = file(CONFIG_FILE)?;
        cfg.write_all(self.config("lsat06").to_toml_string()?.as_bytes())?;
        cfg.flush()?;
        drop(cfg);
        let store_path = dir.join(STORE_FILE);
        save_store(&self.store, &store_path)?;
        written.push(store_path);
        Ok(written)
    }

    /// Ids of images graded relevant for `topic`.
    pub fn relevant(&self, topic: &str) -> BTreeSet<&str> {
        self.qrels
            .topic(topic)
            .map(|g| g.iter().filter(|(_, &v)| v > 0).map(|(k, _)| k.as_str()).collect())
            .unwrap_or_default()
    }
}
