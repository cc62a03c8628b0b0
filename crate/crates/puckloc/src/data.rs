//! Event ingest, frame sampling, clip preprocessing and dataset splits.
//!
//! Events arrive as a CSV with header `clip_id,game_clock_s,event_type,x_ft,
//! y_ft`. Clips live in a store mapping clip ids to per-clip frame-image
//! directories through a `clip_id,path` manifest. Splits are per-clip so a
//! clip never leaks across partitions.

use image::RgbImage;
use ndarray::Array4;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use crate::error::{io_err, Error, Result};
use crate::rink::RinkPoint;
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventType {
    Shot,
    Dump,
    Faceoff,
    Turnover,
    Hit,
    Other,
}

impl EventType {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "shot" => Self::Shot,
            "dump" => Self::Dump,
            "faceoff" => Self::Faceoff,
            "turnover" => Self::Turnover,
            "hit" => Self::Hit,
            "other" => Self::Other,
            _ => return None,
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Shot => "shot",
            Self::Dump => "dump",
            Self::Faceoff => "faceoff",
            Self::Turnover => "turnover",
            Self::Hit => "hit",
            Self::Other => "other",
        }
    }
}

/// One annotated hockey event: a clip reference, a 1-second-resolution game
/// clock, the event type and the approximate puck location.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub clip_id: String,
    pub game_clock_s: u32,
    pub event_type: EventType,
    pub location: RinkPoint,
}

/// Loads and validates an events CSV. Structurally malformed rows abort the
/// load with the row number and field name; rows whose location falls
/// outside the rink are rejected with a warning and the load continues.
pub fn load_events(path: &Path) -> Result<Vec<EventRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => io_err(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, e.to_string()),
            ),
            _ => Error::Config(format!("{}: {e}", path.display())),
        })?;
    {
        let headers = reader
            .headers()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let expect = ["clip_id", "game_clock_s", "event_type", "x_ft", "y_ft"];
        let got: Vec<&str> = headers.iter().collect();
        if got != expect {
            return Err(Error::Config(format!(
                "{}: header must be `{}`, got `{}`",
                path.display(),
                expect.join(","),
                got.join(",")
            )));
        }
    }

    let parse_err = |row: u64, field: &str, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        field: field.to_string(),
        message,
    };

    let mut records = Vec::new();
    let mut rejected = 0usize;
    let mut histogram: HashMap<EventType, usize> = HashMap::new();
    for (i, row) in reader.records().enumerate() {
        // Header is line 1.
        let line = i as u64 + 2;
        let row = row.map_err(|e| parse_err(line, "<row>", e.to_string()))?;
        if row.len() != 5 {
            return Err(parse_err(
                line,
                "<row>",
                format!("expected 5 fields, got {}", row.len()),
            ));
        }
        let clip_id = row[0].trim().to_string();
        if clip_id.is_empty() {
            return Err(parse_err(line, "clip_id", "empty".into()));
        }
        let game_clock_s: u32 = row[1]
            .trim()
            .parse()
            .map_err(|e| parse_err(line, "game_clock_s", format!("{e}")))?;
        let event_type = EventType::parse(row[2].trim())
            .ok_or_else(|| parse_err(line, "event_type", format!("unknown `{}`", &row[2])))?;
        let x: f64 = row[3]
            .trim()
            .parse()
            .map_err(|e| parse_err(line, "x_ft", format!("{e}")))?;
        let y: f64 = row[4]
            .trim()
            .parse()
            .map_err(|e| parse_err(line, "y_ft", format!("{e}")))?;
        match RinkPoint::new(x, y) {
            Ok(location) => {
                *histogram.entry(event_type).or_default() += 1;
                records.push(EventRecord {
                    clip_id,
                    game_clock_s,
                    event_type,
                    location,
                });
            }
            Err(_) => {
                rejected += 1;
                log::warn!(
                    "{}:{line}: location ({x}, {y}) outside the rink, row rejected",
                    path.display()
                );
            }
        }
    }
    let mut hist: Vec<(EventType, usize)> = histogram.into_iter().collect();
    hist.sort_by_key(|(t, _)| t.as_str());
    log::info!(
        "{}: {} events loaded ({} rejected), histogram: {}",
        path.display(),
        records.len(),
        rejected,
        hist.iter()
            .map(|(t, n)| format!("{}={n}", t.as_str()))
            .collect::<Vec<_>>()
            .join(" ")
    );
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    RandomUniform,
    ConstantInterval,
}

/// How the network's input frames are drawn from a clip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    pub mode: SamplingMode,
    /// Frames to draw (the network's temporal extent).
    pub count: usize,
    /// Step for constant-interval mode.
    pub interval: usize,
    pub rng_seed: u64,
}

impl SamplingPolicy {
    pub fn random_uniform(count: usize, rng_seed: u64) -> Self {
        Self {
            mode: SamplingMode::RandomUniform,
            count,
            interval: 4,
            rng_seed,
        }
    }

    pub fn constant_interval(count: usize, interval: usize) -> Self {
        Self {
            mode: SamplingMode::ConstantInterval,
            count,
            interval,
            rng_seed: 0,
        }
    }
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        Self {
            mode: SamplingMode::RandomUniform,
            count: 16,
            interval: 4,
            rng_seed: 0,
        }
    }
}

/// Draws `policy.count` frame indices from `[0, clip_len)`, returned
/// ascending.
///
/// Random mode samples distinct indices uniformly without replacement (a
/// partial Fisher-Yates over the index range, so it is stable across library
/// versions). Constant-interval mode takes `{0, interval, 2*interval, ...}`
/// with indices past the end clamped to the final frame.
pub fn sample_frame_indices(policy: &SamplingPolicy, clip_len: usize) -> Result<Vec<usize>> {
    if policy.count == 0 {
        return Err(Error::InvalidArgument("sampling count must be >= 1".into()));
    }
    if policy.interval == 0 {
        return Err(Error::InvalidArgument(
            "sampling interval must be >= 1".into(),
        ));
    }
    if clip_len < policy.count {
        return Err(Error::InsufficientFrames {
            got: clip_len,
            need: policy.count,
        });
    }
    match policy.mode {
        SamplingMode::ConstantInterval => Ok((0..policy.count)
            .map(|i| (i * policy.interval).min(clip_len - 1))
            .collect()),
        SamplingMode::RandomUniform => {
            let mut rng = rng_for(policy.rng_seed, "frame-sample");
            let mut pool: Vec<usize> = (0..clip_len).collect();
            for i in 0..policy.count {
                let j = i + rng.random_range(0..clip_len - i);
                pool.swap(i, j);
            }
            let mut picked: Vec<usize> = pool[..policy.count].to_vec();
            picked.sort_unstable();
            Ok(picked)
        }
    }
}

/// Per-channel normalization constants applied after scaling pixels to
/// `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Normalization {
    /// The published statistics of the standard video pretraining corpus.
    pub fn kinetics() -> Self {
        Self {
            mean: [0.43216, 0.394666, 0.37645],
            std: [0.22803, 0.22145, 0.216989],
        }
    }

    /// Identity normalization (useful in tests).
    pub fn identity() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

impl Default for Normalization {
    fn default() -> Self {
        Self::kinetics()
    }
}

/// A preprocessed clip: `[frames, 3, size, size]` standardized values plus
/// the record of the normalization that produced them.
#[derive(Debug, Clone)]
pub struct ClipTensor {
    pub frames: Array4<f64>,
    pub normalization: Normalization,
}

impl ClipTensor {
    pub fn num_frames(&self) -> usize {
        self.frames.dim().0
    }

    pub fn size(&self) -> usize {
        self.frames.dim().2
    }

    /// Undoes the standardization, returning `[0, 1]` pixel values.
    pub fn denormalize(&self) -> Array4<f64> {
        let mut out = self.frames.clone();
        for ((_, c, _, _), v) in out.indexed_iter_mut() {
            *v = *v * self.normalization.std[c] + self.normalization.mean[c];
        }
        out
    }
}

/// Resizes, scales and standardizes already-selected frames.
pub fn preprocess_frames(
    frames: &[RgbImage],
    size: usize,
    norm: &Normalization,
) -> Result<ClipTensor> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument("no frames to preprocess".into()));
    }
    if size == 0 {
        return Err(Error::InvalidArgument("target size must be >= 1".into()));
    }
    let mut out = Array4::zeros((frames.len(), 3, size, size));
    for (t, frame) in frames.iter().enumerate() {
        let resized = if frame.dimensions() == (size as u32, size as u32) {
            frame.clone()
        } else {
            image::imageops::resize(
                frame,
                size as u32,
                size as u32,
                image::imageops::FilterType::Triangle,
            )
        };
        for (x, y, px) in resized.enumerate_pixels() {
            for c in 0..3 {
                let v = px.0[c] as f64 / 255.0;
                out[(t, c, y as usize, x as usize)] = (v - norm.mean[c]) / norm.std[c];
            }
        }
    }
    Ok(ClipTensor {
        frames: out,
        normalization: *norm,
    })
}

/// Samples frames from a raw clip per the policy, then preprocesses them.
pub fn preprocess_clip(
    raw_frames: &[RgbImage],
    policy: &SamplingPolicy,
    size: usize,
    norm: &Normalization,
) -> Result<ClipTensor> {
    let indices = sample_frame_indices(policy, raw_frames.len())?;
    let selected: Vec<RgbImage> = indices.iter().map(|&i| raw_frames[i].clone()).collect();
    preprocess_frames(&selected, size, norm)
}

/// Train/val/test fractions. Validation and test sizes are floored, the
/// remainder goes to train.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.train, self.val, self.test];
        if vals.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(
                "split fractions must lie in [0, 1]".into(),
            ));
        }
        if ((self.train + self.val + self.test) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(
                "split fractions must sum to 1".into(),
            ));
        }
        Ok(())
    }
}

/// Disjoint, exhaustive per-clip membership lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub fractions: SplitFractions,
}

/// Deterministically partitions clip ids. Records sharing a clip id stay
/// together.
pub fn make_split(
    records: &[EventRecord],
    fractions: SplitFractions,
    seed: u64,
) -> Result<DatasetSplit> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty dataset".into()));
    }
    fractions.validate()?;
    let mut ids: Vec<String> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for r in records {
        if seen.insert(r.clip_id.clone()) {
            ids.push(r.clip_id.clone());
        }
    }
    let mut rng = rng_for(seed, "split");
    for i in (1..ids.len()).rev() {
        let j = rng.random_range(0..=i);
        ids.swap(i, j);
    }
    let n = ids.len();
    let n_val = (n as f64 * fractions.val).floor() as usize;
    let n_test = (n as f64 * fractions.test).floor() as usize;
    let n_train = n - n_val - n_test;
    Ok(DatasetSplit {
        train: ids[..n_train].to_vec(),
        val: ids[n_train..n_train + n_val].to_vec(),
        test: ids[n_train + n_val..].to_vec(),
        seed,
        fractions,
    })
}

/// Source of decoded RGB frames for a clip. Implementations must allow
/// concurrent read-only use.
pub trait FrameProvider: Send + Sync {
    fn clip_len(&self, clip_id: &str) -> Result<usize>;
    /// Fetches the frames at `indices` (each must be within the clip).
    fn frames(&self, clip_id: &str, indices: &[usize]) -> Result<Vec<RgbImage>>;
}

/// A clip store backed by per-clip frame-image directories, resolved through
/// a `clip_id,path` manifest CSV (paths relative to the manifest location).
/// Video container files are not decodable in this build; pointing the
/// manifest at one produces a clear error.
pub struct DirectoryClipStore {
    paths: HashMap<String, PathBuf>,
    frame_lists: RwLock<HashMap<String, Arc<Vec<PathBuf>>>>,
    cache: RwLock<HashMap<String, Arc<Vec<RgbImage>>>>,
    cache_enabled: bool,
}

impl DirectoryClipStore {
    pub fn open(manifest_path: &Path, cache_enabled: bool) -> Result<Self> {
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(manifest_path)
            .map_err(|e| Error::Config(format!("{}: {e}", manifest_path.display())))?;
        let mut paths = HashMap::new();
        for (i, row) in reader.records().enumerate() {
            let row = row.map_err(|e| Error::Parse {
                path: manifest_path.to_path_buf(),
                row: i as u64 + 2,
                field: "<row>".into(),
                message: e.to_string(),
            })?;
            if row.len() != 2 {
                return Err(Error::Parse {
                    path: manifest_path.to_path_buf(),
                    row: i as u64 + 2,
                    field: "<row>".into(),
                    message: format!("expected 2 fields, got {}", row.len()),
                });
            }
            paths.insert(row[0].to_string(), base.join(&row[1]));
        }
        Ok(Self {
            paths,
            frame_lists: RwLock::new(HashMap::new()),
            cache: RwLock::new(HashMap::new()),
            cache_enabled,
        })
    }

    pub fn clip_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.paths.keys().cloned().collect();
        ids.sort();
        ids
    }

    fn frame_files(&self, clip_id: &str) -> Result<Arc<Vec<PathBuf>>> {
        if let Some(list) = self.frame_lists.read().unwrap().get(clip_id) {
            return Ok(list.clone());
        }
        let dir = self.paths.get(clip_id).ok_or_else(|| {
            Error::InvalidArgument(format!("clip `{clip_id}` not present in the manifest"))
        })?;
        if dir.is_file() {
            return Err(Error::Config(format!(
                "{}: video container files are not supported; provide a frame-image directory",
                dir.display()
            )));
        }
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| io_err(dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|e| e == "png").unwrap_or(false))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Config(format!(
                "{}: clip directory holds no png frames",
                dir.display()
            )));
        }
        let list = Arc::new(files);
        self.frame_lists
            .write()
            .unwrap()
            .insert(clip_id.to_string(), list.clone());
        Ok(list)
    }

    fn decode_all(&self, clip_id: &str) -> Result<Arc<Vec<RgbImage>>> {
        if let Some(frames) = self.cache.read().unwrap().get(clip_id) {
            return Ok(frames.clone());
        }
        let files = self.frame_files(clip_id)?;
        let mut frames = Vec::with_capacity(files.len());
        for (i, file) in files.iter().enumerate() {
            let img = image::open(file)
                .map_err(|e| {
                    Error::Config(format!(
                        "{}: cannot decode frame {i}: {e}",
                        file.display()
                    ))
                })?
                .to_rgb8();
            frames.push(img);
        }
        let frames = Arc::new(frames);
        self.cache
            .write()
            .unwrap()
            .insert(clip_id.to_string(), frames.clone());
        Ok(frames)
    }
}

impl FrameProvider for DirectoryClipStore {
    fn clip_len(&self, clip_id: &str) -> Result<usize> {
        Ok(self.frame_files(clip_id)?.len())
    }

    fn frames(&self, clip_id: &str, indices: &[usize]) -> Result<Vec<RgbImage>> {
        if self.cache_enabled {
            let all = self.decode_all(clip_id)?;
            return indices
                .iter()
                .map(|&i| {
                    all.get(i).cloned().ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "frame index {i} out of range for clip `{clip_id}`"
                        ))
                    })
                })
                .collect();
        }
        let files = self.frame_files(clip_id)?;
        indices
            .iter()
            .map(|&i| {
                let file = files.get(i).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "frame index {i} out of range for clip `{clip_id}`"
                    ))
                })?;
                Ok(image::open(file)
                    .map_err(|e| {
                        Error::Config(format!(
                            "{}: cannot decode frame {i}: {e}",
                            file.display()
                        ))
                    })?
                    .to_rgb8())
            })
            .collect()
    }
}

/// An in-memory provider for tests and synthetic pipelines.
#[derive(Default)]
pub struct MemoryClipStore {
    clips: HashMap<String, Vec<RgbImage>>,
}

impl MemoryClipStore {
    pub fn insert(&mut self, clip_id: impl Into<String>, frames: Vec<RgbImage>) {
        self.clips.insert(clip_id.into(), frames);
    }
}

impl FrameProvider for MemoryClipStore {
    fn clip_len(&self, clip_id: &str) -> Result<usize> {
        self.clips
            .get(clip_id)
            .map(|f| f.len())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown clip `{clip_id}`")))
    }

    fn frames(&self, clip_id: &str, indices: &[usize]) -> Result<Vec<RgbImage>> {
        let frames = self
            .clips
            .get(clip_id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown clip `{clip_id}`")))?;
        indices
            .iter()
            .map(|&i| {
                frames.get(i).cloned().ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "frame index {i} out of range for clip `{clip_id}`"
                    ))
                })
            })
            .collect()
    }
}

/// Event records bound to the store resolving their clips.
#[derive(Clone)]
pub struct ClipDataset {
    pub records: Vec<EventRecord>,
    pub store: Arc<dyn FrameProvider>,
}

impl ClipDataset {
    pub fn new(records: Vec<EventRecord>, store: Arc<dyn FrameProvider>) -> Self {
        Self { records, store }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The subset whose clip ids appear in `ids`, preserving record order.
    pub fn subset(&self, ids: &[String]) -> ClipDataset {
        let wanted: std::collections::HashSet<&String> = ids.iter().collect();
        ClipDataset {
            records: self
                .records
                .iter()
                .filter(|r| wanted.contains(&r.clip_id))
                .cloned()
                .collect(),
            store: self.store.clone(),
        }
    }
}
