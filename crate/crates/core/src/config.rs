//! Pipeline configuration file and submission presets.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rerank::MockJudgeRule;

pub const PRESETS: [&str; 5] = ["lsat01", "lsat03", "lsat04", "lsat05", "lsat06"];

pub const ENV_EMBED_URL: &str = "MOMENT_EMBED_URL";
pub const ENV_JUDGE_URL: &str = "MOMENT_JUDGE_URL";
pub const ENV_LLM_URL: &str = "MOMENT_LLM_URL";
pub const ENV_LLM_MODEL: &str = "MOMENT_LLM_MODEL";
pub const ENV_LLM_API_KEY: &str = "MOMENT_LLM_API_KEY";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown preset {name:?}; valid presets: {}", PRESETS.join(", "))]
    UnknownPreset { name: String },
    #[error("{field}: file {path} does not exist")]
    MissingFile { field: &'static str, path: PathBuf },
    #[error("{field} is required: {reason}")]
    MissingField { field: &'static str, reason: &'static str },
    #[error("{field} = {value} is out of range: {expected}")]
    OutOfRange {
        field: &'static str,
        value: String,
        expected: &'static str,
    },
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageToggles {
    pub rewrite: bool,
    pub rerank: bool,
    pub temporal_expand: bool,
    /// 0 disables event expansion.
    pub event_rounds: u32,
}

impl Default for StageToggles {
    fn default() -> Self {
        resolve_preset("lsat01", 0).expect("lsat01 is a preset")
    }
}

/// Stage toggles for a submission preset. `multi_rounds` is the round count
/// used by `lsat06` and must exceed 1.
pub fn resolve_preset(name: &str, multi_rounds: u32) -> Result<StageToggles, ConfigError> {
    let base = StageToggles {
        rewrite: true,
        rerank: false,
        temporal_expand: false,
        event_rounds: 0,
    };
    let reranked = StageToggles { rerank: true, ..base };
    match name {
        "lsat01" => Ok(base),
        "lsat03" => Ok(reranked),
        "lsat04" => Ok(StageToggles {
            temporal_expand: true,
            ..reranked
        }),
        "lsat05" => Ok(StageToggles {
            event_rounds: 1,
            ..reranked
        }),
        "lsat06" => {
            if multi_rounds < 2 {
                return Err(ConfigError::OutOfRange {
                    field: "params.rounds",
                    value: multi_rounds.to_string(),
                    expected: "lsat06 needs at least 2 rounds",
                });
            }
            Ok(StageToggles {
                event_rounds: multi_rounds,
                ..reranked
            })
        }
        other => Err(ConfigError::UnknownPreset {
            name: other.to_string(),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub manifest: PathBuf,
    pub store: PathBuf,
    pub topics: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qrels: Option<PathBuf>,
    pub output: PathBuf,
    /// `id<TAB>score` sharpness table; enables blur filtering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sharpness: Option<PathBuf>,
    /// Ids of known-blurry images used to calibrate the threshold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blurry_sample: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub captions: Option<PathBuf>,
    /// Completion table for the fixture LLM client.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm_fixture: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub tau: f64,
    pub w: usize,
    pub rounds: u32,
    pub m: usize,
    pub k_events: usize,
    pub k_images: usize,
    pub k_out: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blur_threshold: Option<f64>,
    pub clip_window_to_day: bool,
    pub parallelism: usize,
    pub rewrite_retries: u32,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            tau: 0.8,
            w: 80,
            rounds: 3,
            m: 5,
            k_events: 100,
            k_images: 1000,
            k_out: 100,
            blur_threshold: None,
            clip_window_to_day: false,
            parallelism: 4,
            rewrite_retries: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EmbedderSpec {
    Mock {
        dim: usize,
    },
    Http {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        url: Option<String>,
        dim: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LlmSpec {
    Fixture,
    Http {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        url: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum JudgeSpec {
    Mock(MockJudgeRule),
    Http {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        url: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Providers {
    pub embedder: EmbedderSpec,
    #[serde(default = "default_llm")]
    pub llm: LlmSpec,
    #[serde(default = "default_judge")]
    pub judge: JudgeSpec,
}

fn default_llm() -> LlmSpec {
    LlmSpec::Fixture
}

fn default_judge() -> JudgeSpec {
    JudgeSpec::Mock(MockJudgeRule {
        threshold: 0.5,
        dim: 512,
        check_location: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Mandatory; only consumed by synthetic fixture generation.
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_tag: Option<String>,
    pub paths: Paths,
    #[serde(default)]
    pub stages: StageToggles,
    #[serde(default)]
    pub params: Params,
    pub providers: Providers,
}

/// Command-line overrides applied on top of a loaded file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub output: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub run_tag: Option<String>,
    pub tau: Option<f64>,
    pub w: Option<usize>,
    pub rounds: Option<u32>,
    pub m: Option<usize>,
    pub k_events: Option<usize>,
    pub k_images: Option<usize>,
    pub k_out: Option<usize>,
    pub blur_threshold: Option<f64>,
    pub parallelism: Option<usize>,
}

impl PipelineConfig {
    /// Parses a config; relative paths are resolved against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: PipelineConfig = toml::from_str(text)?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        fix(&mut p.manifest);
        fix(&mut p.store);
        fix(&mut p.topics);
        fix(&mut p.output);
        for path in [
            &mut p.qrels,
            &mut p.sharpness,
            &mut p.blurry_sample,
            &mut p.captions,
            &mut p.llm_fixture,
        ]
        .into_iter()
        .flatten()
        {
            fix(path);
        }
    }

    pub fn apply_overrides(&mut self, o: &Overrides) {
        macro_rules! set {
            ($src:expr, $dst:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        if o.preset.is_some() {
            self.preset = o.preset.clone();
        }
        if o.qrels.is_some() {
            self.paths.qrels = o.qrels.clone();
        }
        if o.run_tag.is_some() {
            self.run_tag = o.run_tag.clone();
        }
        if o.blur_threshold.is_some() {
            self.params.blur_threshold = o.blur_threshold;
        }
        set!(o.output, self.paths.output);
        set!(o.tau, self.params.tau);
        set!(o.w, self.params.w);
        set!(o.rounds, self.params.rounds);
        set!(o.m, self.params.m);
        set!(o.k_events, self.params.k_events);
        set!(o.k_images, self.params.k_images);
        set!(o.k_out, self.params.k_out);
        set!(o.parallelism, self.params.parallelism);
    }

    /// Stage toggles after preset expansion; a preset replaces `[stages]`.
    pub fn effective_stages(&self) -> Result<StageToggles, ConfigError> {
        match &self.preset {
            Some(name) => resolve_preset(name, self.params.rounds),
            None => Ok(self.stages),
        }
    }

    pub fn run_tag(&self) -> String {
        self.run_tag
            .clone()
            .or_else(|| self.preset.clone())
            .unwrap_or_else(|| "custom".to_string())
    }

    /// Range and file-existence checks. Runs before any data is loaded.
    pub fn validate(&self) -> Result<StageToggles, ConfigError> {
        let stages = self.effective_stages()?;
        let p = &self.params;
        let range = |ok: bool, field: &'static str, value: String, expected: &'static str| {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::OutOfRange { field, value, expected })
            }
        };
        range(
            p.tau > 0.0 && p.tau < 1.0,
            "params.tau",
            p.tau.to_string(),
            "0 < tau < 1",
        )?;
        range(p.w >= 1, "params.w", p.w.to_string(), "w >= 1")?;
        range(p.rounds >= 1, "params.rounds", p.rounds.to_string(), "rounds >= 1")?;
        range(
            p.k_events >= 1,
            "params.k_events",
            p.k_events.to_string(),
            "k_events >= 1",
        )?;
        range(
            p.k_images >= 1,
            "params.k_images",
            p.k_images.to_string(),
            "k_images >= 1",
        )?;
        range(p.k_out >= 1, "params.k_out", p.k_out.to_string(), "k_out >= 1")?;
        range(
            p.parallelism >= 1,
            "params.parallelism",
            p.parallelism.to_string(),
            "parallelism >= 1",
        )?;
        if let Some(t) = p.blur_threshold {
            range(
                t.is_finite() && t >= 0.0,
                "params.blur_threshold",
                t.to_string(),
                "finite and >= 0",
            )?;
        }

        let paths = &self.paths;
        let exists = |field: &'static str, path: &Path| {
            if path.exists() {
                Ok(())
            } else {
                Err(ConfigError::MissingFile {
                    field,
                    path: path.to_path_buf(),
                })
            }
        };
        exists("paths.manifest", &paths.manifest)?;
        exists("paths.store", &paths.store)?;
        exists("paths.topics", &paths.topics)?;
        for (field, path) in [
            ("paths.qrels", &paths.qrels),
            ("paths.sharpness", &paths.sharpness),
            ("paths.blurry_sample", &paths.blurry_sample),
            ("paths.captions", &paths.captions),
            ("paths.llm_fixture", &paths.llm_fixture),
        ] {
            if let Some(path) = path {
                exists(field, path)?;
            }
        }
        if paths.sharpness.is_some() && p.blur_threshold.is_none() && paths.blurry_sample.is_none() {
            return Err(ConfigError::MissingField {
                field: "params.blur_threshold",
                reason: "blur filtering needs a threshold or paths.blurry_sample",
            });
        }
        if stages.rewrite && self.providers.llm == LlmSpec::Fixture && paths.llm_fixture.is_none() {
            return Err(ConfigError::MissingField {
                field: "paths.llm_fixture",
                reason: "the fixture LLM client needs a completion table",
            });
        }
        let (EmbedderSpec::Mock { dim } | EmbedderSpec::Http { dim, .. }) = &self.providers.embedder;
        range(*dim >= 1, "providers.embedder.dim", dim.to_string(), "dim >= 1")?;
        if let JudgeSpec::Mock(rule) = &self.providers.judge {
            range(
                rule.threshold > -1.0 && rule.threshold < 1.0,
                "providers.judge.threshold",
                rule.threshold.to_string(),
                "-1 < threshold < 1",
            )?;
        }
        Ok(stages)
    }
}

/// Endpoint from the config, falling back to an environment variable.
pub fn endpoint(configured: &Option<String>, var: &'static str) -> Result<String, ConfigError> {
    configured
        .clone()
        .or_else(|| env::var(var).ok())
        .filter(|s| !s.trim().is_empty())
        .ok_or(ConfigError::MissingField {
            field: var,
            reason: "no endpoint in the config or environment",
        })
}
