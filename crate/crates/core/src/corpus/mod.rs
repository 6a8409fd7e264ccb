//! Image manifest ingestion, blur scoring and blur filtering.

mod sharpness;

use std::collections::{BTreeSet, HashMap};
use std::io::{self, BufRead, Write};
use std::path::PathBuf;

use chrono::{NaiveDate, NaiveDateTime, Timelike};
use thiserror::Error;

pub use sharpness::{compute_sharpness, load_gray, score_images, GrayMatrix};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate image id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("image {0:?} has no sharpness score")]
    MissingSharpness(String),
    #[error("image must be at least 3x3, got {rows}x{cols}")]
    Dimension { rows: usize, cols: usize },
    #[error("cannot calibrate a threshold from an empty sample")]
    EmptyCalibration,
    #[error("unknown image id {0:?}")]
    UnknownId(String),
    #[error("no raster found for image {id:?} under {dir}")]
    MissingRaster { id: String, dir: PathBuf },
    #[error("failed to decode {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    /// UTC, truncated to the minute.
    pub capture_time: NaiveDateTime,
    pub day: NaiveDate,
    pub sequence_index: usize,
    pub location: Option<String>,
    pub sharpness: Option<f64>,
}

/// Chronologically ordered image records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusManifest {
    pub images: Vec<ImageRecord>,
    pub source_description: String,
}

impl CorpusManifest {
    /// Sorts by (capture time, id) and assigns dense sequence indices.
    pub fn from_records(mut images: Vec<ImageRecord>, source_description: impl Into<String>) -> Self {
        images.sort_by(|a, b| a.capture_time.cmp(&b.capture_time).then_with(|| a.id.cmp(&b.id)));
        for (i, r) in images.iter_mut().enumerate() {
            r.sequence_index = i;
        }
        Self {
            images,
            source_description: source_description.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Id → sequence index lookup table.
    pub fn index(&self) -> HashMap<&str, usize> {
        self.images.iter().map(|r| (r.id.as_str(), r.sequence_index)).collect()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.images.iter().map(|r| r.id.as_str())
    }

    /// Contiguous per-day slices, in chronological order.
    pub fn days(&self) -> Vec<(NaiveDate, &[ImageRecord])> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.images.len() {
            if i == self.images.len() || self.images[i].day != self.images[start].day {
                if i > start {
                    out.push((self.images[start].day, &self.images[start..i]));
                }
                start = i;
            }
        }
        out
    }

    /// Fills in sharpness scores by id; ids absent from `scores` are untouched.
    pub fn attach_sharpness(&mut self, scores: &HashMap<String, f64>) {
        for r in &mut self.images {
            if let Some(&s) = scores.get(&r.id) {
                r.sharpness = Some(s);
            }
        }
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> io::Result<()> {
        for r in &self.images {
            writeln!(
                w,
                "{}\t{}\t{}",
                r.id,
                r.capture_time.format("%Y-%m-%dT%H:%M"),
                r.location.as_deref().unwrap_or("")
            )?;
        }
        Ok(())
    }
}

const TIME_FORMATS: &[&str] = &[
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%d %H:%M",
];

/// Parses an ISO-8601 UTC timestamp (optional `Z` / `+00:00` suffix) and
/// truncates it to minute precision.
pub fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    let s = raw.trim();
    let s = s.strip_suffix('Z').or_else(|| s.strip_suffix("+00:00")).unwrap_or(s);
    TIME_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .and_then(|t| t.with_second(0))
        .and_then(|t| t.with_nanosecond(0))
}

/// Reads `id<TAB>time<TAB>location` lines. `#` lines and blank lines are skipped.
pub fn parse_manifest<R: BufRead>(input: R) -> Result<CorpusManifest, CorpusError> {
    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (n, line) in input.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(CorpusError::Parse {
                line: line_no,
                message: format!("expected 2 or 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(CorpusError::Parse {
                line: line_no,
                message: "empty image id".into(),
            });
        }
        let capture_time = parse_timestamp(fields[1]).ok_or_else(|| CorpusError::Parse {
            line: line_no,
            message: format!("unparseable timestamp {:?}", fields[1]),
        })?;
        if seen.insert(id.to_string(), line_no).is_some() {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: id.to_string(),
            });
        }
        let location = fields
            .get(2)
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(str::to_string);
        records.push(ImageRecord {
            id: id.to_string(),
            capture_time,
            day: capture_time.date(),
            sequence_index: 0,
            location,
            sharpness: None,
        });
    }
    let n = records.len();
    Ok(CorpusManifest::from_records(
        records,
        format!("manifest with {n} images"),
    ))
}

/// Reads precomputed `id<TAB>score` lines.
pub fn parse_sharpness<R: BufRead>(input: R) -> Result<HashMap<String, f64>, CorpusError> {
    let mut out = HashMap::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| CorpusError::Parse { line: n + 1, message };
        let (id, score) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected id<TAB>score".into()))?;
        let score: f64 = score
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("invalid score {score:?}")))?;
        if !score.is_finite() || score < 0.0 {
            return Err(parse_err(format!("score must be finite and non-negative, got {score}")));
        }
        if out.insert(id.trim().to_string(), score).is_some() {
            return Err(CorpusError::DuplicateId {
                line: n + 1,
                id: id.trim().to_string(),
            });
        }
    }
    Ok(out)
}

pub fn write_sharpness<W: Write>(scores: &[(String, f64)], mut w: W) -> io::Result<()> {
    for (id, s) in scores {
        writeln!(w, "{id}\t{s}")?;
    }
    Ok(())
}

/// Reads `id<TAB>caption` lines.
pub fn parse_captions<R: BufRead>(input: R) -> Result<HashMap<String, String>, CorpusError> {
    let mut out = HashMap::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, caption) = line.split_once('\t').ok_or_else(|| CorpusError::Parse {
            line: n + 1,
            message: "expected id<TAB>caption".into(),
        })?;
        if out.insert(id.trim().to_string(), caption.trim().to_string()).is_some() {
            return Err(CorpusError::DuplicateId {
                line: n + 1,
                id: id.trim().to_string(),
            });
        }
    }
    Ok(out)
}

/// Writes captions sorted by id.
pub fn write_captions<W: Write>(captions: &HashMap<String, String>, mut w: W) -> io::Result<()> {
    let mut rows: Vec<_> = captions.iter().collect();
    rows.sort();
    for (id, caption) in rows {
        writeln!(w, "{id}\t{caption}")?;
    }
    Ok(())
}

/// One id per line; blank and `#` lines are skipped.
pub fn parse_id_list<R: BufRead>(input: R) -> Result<Vec<String>, CorpusError> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        let id = line.trim();
        if !id.is_empty() && !id.starts_with('#') {
            out.push(id.to_string());
        }
    }
    Ok(out)
}

/// Blur threshold: the arithmetic mean of scores of known-blurry samples.
pub fn calibrate_threshold(blurry_sample_scores: &[f64]) -> Result<f64, CorpusError> {
    if blurry_sample_scores.is_empty() {
        return Err(CorpusError::EmptyCalibration);
    }
    Ok(blurry_sample_scores.iter().sum::<f64>() / blurry_sample_scores.len() as f64)
}

/// Looks up the sharpness of each sampled id.
pub fn sample_scores<'a>(
    manifest: &CorpusManifest,
    ids: impl IntoIterator<Item = &'a str>,
) -> Result<Vec<f64>, CorpusError> {
    let by_id: HashMap<&str, &ImageRecord> = manifest.images.iter().map(|r| (r.id.as_str(), r)).collect();
    ids.into_iter()
        .map(|id| {
            let r = by_id.get(id).ok_or_else(|| CorpusError::UnknownId(id.to_string()))?;
            r.sharpness.ok_or_else(|| CorpusError::MissingSharpness(id.to_string()))
        })
        .collect()
}

/// Keeps images with `sharpness >= threshold`; the rest are returned as removed ids.
/// Retained records keep their relative order and are re-indexed densely.
pub fn filter_blurred(
    manifest: &CorpusManifest,
    threshold: f64,
) -> Result<(CorpusManifest, BTreeSet<String>), CorpusError> {
    let mut retained = Vec::new();
    let mut removed = BTreeSet::new();
    for r in &manifest.images {
        let s = r.sharpness.ok_or_else(|| CorpusError::MissingSharpness(r.id.clone()))?;
        if s >= threshold {
            retained.push(r.clone());
        } else {
            removed.insert(r.id.clone());
        }
    }
    for (i, r) in retained.iter_mut().enumerate() {
        r.sequence_index = i;
    }
    let kept = retained.len();
    Ok((
        CorpusManifest {
            images: retained,
            source_description: format!(
                "{} (blur threshold {threshold}: kept {kept}, removed {})",
                manifest.source_description,
                removed.len()
            ),
        },
        removed,
    ))
}
