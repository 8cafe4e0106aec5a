//! Loading frame sequences, landmark files, contact-PPG traces and cohort
//! manifests from disk, plus the matching writers used by the synthetic
//! cohort generator.
//!
//! Every loaded structure is validated on construction and immutable
//! afterwards, so it can be shared freely between threads.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Below this duration the 0.04 Hz LF band edge has less than one full cycle.
pub const LF_FULL_SUPPORT_S: f64 = 25.0;

/// Maximum tolerated relative deviation of a PPG time step from the median step.
pub const MAX_TIMESTAMP_JITTER: f64 = 0.01;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: no PNG or PPM frames found", .0.display())]
    EmptyDirectory(PathBuf),
    #[error("{}: cannot decode image: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{}: frame is {found_w}x{found_h}, expected {expected_w}x{expected_h}", path.display())]
    MixedDimensions {
        path: PathBuf,
        expected_w: u32,
        expected_h: u32,
        found_w: u32,
        found_h: u32,
    },
    #[error("frame {index}: {source}")]
    AtFrame {
        index: usize,
        #[source]
        source: Box<IngestError>,
    },
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("invalid frame sequence: {0}")]
    InvalidSequence(String),
    #[error("{}: malformed JSON: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("landmarks for frame {frame}: {count} points, at least 3 required")]
    TooFewPoints { frame: usize, count: usize },
    #[error("landmarks for frame {frame}: point ({x}, {y}) outside {width}x{height} frame")]
    PointOutOfBounds {
        frame: usize,
        x: i32,
        y: i32,
        width: u32,
        height: u32,
    },
    #[error("landmark file has {found} entries but the sequence has {expected} frames")]
    LandmarkCount { expected: usize, found: usize },
    #[error("{}: CSV error: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{}: expected header `time_s,amplitude`, found `{found}`", path.display())]
    PpgHeader { path: PathBuf, found: String },
    #[error("PPG row {row}: timestamp {time} does not increase")]
    NonMonotoneTime { row: usize, time: f64 },
    #[error("PPG row {row}: time step deviates {relative:.4} from the median step (limit {MAX_TIMESTAMP_JITTER})")]
    TimestampJitter { row: usize, relative: f64 },
    #[error("PPG has {0} samples, at least 2 required")]
    TooFewSamples(usize),
    #[error("PPG lasts {duration_s:.3} s, at least 2 s required")]
    PpgTooShort { duration_s: f64 },
    #[error("invalid PPG signal: {0}")]
    InvalidPpg(String),
    #[error("unknown activity `{0}` (expected rest, walk or exercise)")]
    UnknownActivity(String),
    #[error("manifest: {0}")]
    Manifest(String),
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Recording condition of a capture session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Activity {
    #[serde(rename = "rest")]
    Rest,
    #[serde(rename = "walk")]
    BriskWalk,
    #[serde(rename = "exercise")]
    Exercise,
}

impl Activity {
    pub const ALL: [Activity; 3] = [Activity::Rest, Activity::BriskWalk, Activity::Exercise];

    pub fn as_str(self) -> &'static str {
        match self {
            Activity::Rest => "rest",
            Activity::BriskWalk => "walk",
            Activity::Exercise => "exercise",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Activity::Rest => 0,
            Activity::BriskWalk => 1,
            Activity::Exercise => 2,
        }
    }
}

impl fmt::Display for Activity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Activity {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rest" => Ok(Activity::Rest),
            "walk" => Ok(Activity::BriskWalk),
            "exercise" => Ok(Activity::Exercise),
            other => Err(IngestError::UnknownActivity(other.to_string())),
        }
    }
}

/// One RGB video frame, row-major, 8 bits per channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: u32,
    height: u32,
    pixels: Vec<[u8; 3]>,
}

impl Frame {
    pub fn new(width: u32, height: u32, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(IngestError::InvalidFrame(format!(
                "zero dimension {width}x{height}"
            )));
        }
        if pixels.len() != width as usize * height as usize {
            return Err(IngestError::InvalidFrame(format!(
                "{} pixels for a {width}x{height} frame",
                pixels.len()
            )));
        }
        Ok(Frame {
            width,
            height,
            pixels,
        })
    }

    /// A frame filled with a single colour.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        Frame::new(width, height, vec![rgb; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        self.pixels[(y * self.width + x) as usize]
    }

    fn from_image(path: &Path, img: image::DynamicImage) -> Result<Self> {
        let rgb = img.into_rgb8();
        let (w, h) = rgb.dimensions();
        let pixels = rgb.pixels().map(|p| p.0).collect();
        Frame::new(w, h, pixels).map_err(|e| match e {
            IngestError::InvalidFrame(msg) => {
                IngestError::InvalidFrame(format!("{}: {msg}", path.display()))
            }
            other => other,
        })
    }

    fn to_image(&self) -> image::RgbImage {
        let raw: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        image::RgbImage::from_raw(self.width, self.height, raw)
            .expect("pixel buffer matches dimensions")
    }
}

/// Raster encoding used when writing frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameFormat {
    Png,
    Ppm,
}

impl FrameFormat {
    pub fn extension(self) -> &'static str {
        match self {
            FrameFormat::Png => "png",
            FrameFormat::Ppm => "ppm",
        }
    }
}

/// The ordered frames of one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Frame>,
    frame_rate: f64,
    subject_id: String,
    activity: Activity,
}

impl FrameSequence {
    pub fn new(
        frames: Vec<Frame>,
        frame_rate: f64,
        subject_id: impl Into<String>,
        activity: Activity,
    ) -> Result<Self> {
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(IngestError::InvalidSequence(format!(
                "frame rate must be positive, got {frame_rate}"
            )));
        }
        let first = frames
            .first()
            .ok_or_else(|| IngestError::InvalidSequence("no frames".to_string()))?;
        let (w, h) = (first.width, first.height);
        if let Some((i, f)) = frames
            .iter()
            .enumerate()
            .find(|(_, f)| f.width != w || f.height != h)
        {
            return Err(IngestError::InvalidSequence(format!(
                "frame {i} is {}x{}, expected {w}x{h}",
                f.width, f.height
            )));
        }
        Ok(FrameSequence {
            frames,
            frame_rate,
            subject_id: subject_id.into(),
            activity,
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn activity(&self) -> Activity {
        self.activity
    }

    pub fn width(&self) -> u32 {
        self.frames[0].width
    }

    pub fn height(&self) -> u32 {
        self.frames[0].height
    }
}

fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let supported = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.eq_ignore_ascii_case("png") || e.eq_ignore_ascii_case("ppm"))
            .unwrap_or(false);
        if supported && path.is_file() {
            files.push(path);
        }
    }
    if files.is_empty() {
        return Err(IngestError::EmptyDirectory(dir.to_path_buf()));
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// Reads every PNG/PPM file in `dir` in lexicographic filename order.
pub fn load_frames(dir: &Path) -> Result<Vec<Frame>> {
    let files = frame_files(dir)?;
    let mut frames: Vec<Frame> = Vec::with_capacity(files.len());
    for (index, path) in files.iter().enumerate() {
        let at = |e| IngestError::AtFrame {
            index,
            source: Box::new(e),
        };
        let img = image::ImageReader::open(path)
            .map_err(io_err(path))
            .and_then(|r| r.with_guessed_format().map_err(io_err(path)))
            .and_then(|r| {
                r.decode().map_err(|source| IngestError::Image {
                    path: path.clone(),
                    source,
                })
            })
            .map_err(at)?;
        let frame = Frame::from_image(path, img).map_err(at)?;
        if let Some(first) = frames.first() {
            if (first.width, first.height) != (frame.width, frame.height) {
                return Err(IngestError::MixedDimensions {
                    path: path.clone(),
                    expected_w: first.width,
                    expected_h: first.height,
                    found_w: frame.width,
                    found_h: frame.height,
                });
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}

pub fn load_frame_sequence(
    dir: &Path,
    frame_rate: f64,
    subject_id: impl Into<String>,
    activity: Activity,
) -> Result<FrameSequence> {
    FrameSequence::new(load_frames(dir)?, frame_rate, subject_id, activity)
}

/// Writes `frame_000001.<ext>`, `frame_000002.<ext>`, ... into `dir`.
pub fn write_frames(dir: &Path, frames: &[Frame], format: FrameFormat) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (i, frame) in frames.iter().enumerate() {
        let path = dir.join(format!("frame_{:06}.{}", i + 1, format.extension()));
        let fmt = match format {
            FrameFormat::Png => image::ImageFormat::Png,
            FrameFormat::Ppm => image::ImageFormat::Pnm,
        };
        // `write_to` needs Seek; encode into memory, then write once.
        let mut buf = std::io::Cursor::new(Vec::new());
        frame
            .to_image()
            .write_to(&mut buf, fmt)
            .map_err(|source| IngestError::Image {
                path: path.clone(),
                source,
            })?;
        fs::write(&path, buf.into_inner()).map_err(io_err(&path))?;
    }
    Ok(())
}

/// An integer pixel coordinate. Points may sit on the far frame edge
/// (`x == width`), since a landmark box is half-open `[min, max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[i32; 2]", into = "[i32; 2]")]
pub struct Point {
    pub x: i32,
    pub y: i32,
}

impl Point {
    pub fn new(x: i32, y: i32) -> Self {
        Point { x, y }
    }
}

impl From<[i32; 2]> for Point {
    fn from([x, y]: [i32; 2]) -> Self {
        Point { x, y }
    }
}

impl From<Point> for [i32; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// Per-frame facial landmark points.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LandmarkSet {
    points: Vec<Vec<Point>>,
}

impl LandmarkSet {
    /// Builds a set, requiring at least three points on every entry.
    pub fn new(points: Vec<Vec<Point>>) -> Result<Self> {
        if let Some((frame, p)) = points.iter().enumerate().find(|(_, p)| p.len() < 3) {
            return Err(IngestError::TooFewPoints {
                frame,
                count: p.len(),
            });
        }
        Ok(LandmarkSet { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points for frame `i`; a single-entry set is broadcast to every frame.
    pub fn for_frame(&self, i: usize) -> &[Point] {
        if self.points.len() == 1 {
            &self.points[0]
        } else {
            &self.points[i]
        }
    }

    pub fn entries(&self) -> &[Vec<Point>] {
        &self.points
    }

    /// Checks the set against a sequence: bounds on every point and an entry
    /// count equal to the frame count, or exactly one entry when `broadcast`.
    pub fn validate(&self, width: u32, height: u32, frames: usize, broadcast: bool) -> Result<()> {
        let count_ok = self.points.len() == frames || (broadcast && self.points.len() == 1);
        if !count_ok {
            return Err(IngestError::LandmarkCount {
                expected: if broadcast { 1 } else { frames },
                found: self.points.len(),
            });
        }
        for (frame, pts) in self.points.iter().enumerate() {
            for p in pts {
                if p.x < 0 || p.y < 0 || p.x as i64 > width as i64 || p.y as i64 > height as i64 {
                    return Err(IngestError::PointOutOfBounds {
                        frame,
                        x: p.x,
                        y: p.y,
                        width,
                        height,
                    });
                }
            }
        }
        Ok(())
    }
}

pub fn load_landmarks(path: &Path) -> Result<LandmarkSet> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let points: Vec<Vec<Point>> =
        serde_json::from_str(&text).map_err(|source| IngestError::Json {
            path: path.to_path_buf(),
            source,
        })?;
    LandmarkSet::new(points)
}

pub fn write_landmarks(path: &Path, landmarks: &LandmarkSet) -> Result<()> {
    let json = serde_json::to_string(landmarks).map_err(|source| IngestError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, json).map_err(io_err(path))
}

/// A uniformly sampled contact-PPG waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct PpgSignal {
    samples: Vec<f64>,
    sample_rate: f64,
    subject_id: String,
    activity: Activity,
}

impl PpgSignal {
    pub fn new(
        samples: Vec<f64>,
        sample_rate: f64,
        subject_id: impl Into<String>,
        activity: Activity,
    ) -> Result<Self> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(IngestError::InvalidPpg(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if samples.len() < 2 {
            return Err(IngestError::TooFewSamples(samples.len()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(IngestError::InvalidPpg(format!("sample {i} is not finite")));
        }
        let duration_s = samples.len() as f64 / sample_rate;
        // 1e-9 slack absorbs the rounding of a rate inferred from timestamps.
        if duration_s < 2.0 * (1.0 - 1e-9) {
            return Err(IngestError::PpgTooShort { duration_s });
        }
        let subject_id = subject_id.into();
        if duration_s < LF_FULL_SUPPORT_S {
            log::warn!(
                "PPG for {subject_id}/{activity} lasts {duration_s:.1} s; LF band analysis needs {LF_FULL_SUPPORT_S} s for full support"
            );
        }
        Ok(PpgSignal {
            samples,
            sample_rate,
            subject_id,
            activity,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn activity(&self) -> Activity {
        self.activity
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Validates timestamps and infers the sample rate as `1 / median(dt)`.
pub fn infer_sample_rate(times: &[f64]) -> Result<f64> {
    if times.len() < 2 {
        return Err(IngestError::TooFewSamples(times.len()));
    }
    let mut steps = Vec::with_capacity(times.len() - 1);
    for (i, w) in times.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(IngestError::NonMonotoneTime {
                row: i + 1,
                time: w[1],
            });
        }
        steps.push(w[1] - w[0]);
    }
    let step = median(&mut steps.clone());
    for (i, dt) in steps.iter().enumerate() {
        let relative = (dt - step).abs() / step;
        if relative > MAX_TIMESTAMP_JITTER {
            return Err(IngestError::TimestampJitter {
                row: i + 1,
                relative,
            });
        }
    }
    Ok(1.0 / step)
}

/// Loads a `time_s,amplitude` CSV.
pub fn load_ppg(path: &Path, subject_id: impl Into<String>, activity: Activity) -> Result<PpgSignal> {
    let csv_err = |source| IngestError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.len() != 2 || &headers[0] != "time_s" || &headers[1] != "amplitude" {
        return Err(IngestError::PpgHeader {
            path: path.to_path_buf(),
            found: headers.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for row in reader.deserialize::<(f64, f64)>() {
        let (t, a) = row.map_err(csv_err)?;
        times.push(t);
        samples.push(a);
    }
    let rate = infer_sample_rate(&times)?;
    PpgSignal::new(samples, rate, subject_id, activity)
}

/// Writes sample `i` at `time_s = i / sample_rate`, in shortest round-trip form.
pub fn write_ppg(path: &Path, signal: &PpgSignal) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "time_s,amplitude").map_err(io_err(path))?;
    for (i, s) in signal.samples.iter().enumerate() {
        let t = i as f64 / signal.sample_rate;
        writeln!(out, "{t},{s}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

fn default_frame_rate() -> f64 {
    30.0
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn is_default_rate(r: &f64) -> bool {
    *r == default_frame_rate()
}

/// One recording in a cohort. Paths are relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub subject_id: String,
    pub activity: Activity,
    pub frames: PathBuf,
    pub landmarks: PathBuf,
    pub ppg: PathBuf,
    #[serde(default = "default_frame_rate", skip_serializing_if = "is_default_rate")]
    pub frame_rate: f64,
    /// A single landmark entry applies to every frame.
    #[serde(default, skip_serializing_if = "is_false")]
    pub landmarks_broadcast: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(records: Vec<ManifestRecord>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for r in &records {
            if r.subject_id.is_empty() {
                return Err(IngestError::Manifest("empty subject_id".to_string()));
            }
            if !seen.insert((r.subject_id.clone(), r.activity)) {
                return Err(IngestError::Manifest(format!(
                    "duplicate record {}/{}",
                    r.subject_id, r.activity
                )));
            }
            if !(r.frame_rate.is_finite() && r.frame_rate > 0.0) {
                return Err(IngestError::Manifest(format!(
                    "{}/{}: frame_rate must be positive",
                    r.subject_id, r.activity
                )));
            }
        }
        Ok(DatasetManifest {
            records,
            base_dir: base_dir.into(),
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Distinct subject ids in sorted order.
    pub fn subjects(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.records.iter().map(|r| r.subject_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    fn check_paths(&self) -> Result<()> {
        for r in &self.records {
            for p in [&r.frames, &r.landmarks, &r.ppg] {
                let full = self.resolve(p);
                if !full.exists() {
                    return Err(IngestError::Manifest(format!(
                        "{}/{}: {} does not exist",
                        r.subject_id,
                        r.activity,
                        full.display()
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let records: Vec<ManifestRecord> =
        serde_json::from_str(&text).map_err(|source| IngestError::Json {
            path: path.to_path_buf(),
            source,
        })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = DatasetManifest::new(records, base)?;
    manifest.check_paths()?;
    Ok(manifest)
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let json =
        serde_json::to_string_pretty(&manifest.records).map_err(|source| IngestError::Json {
            path: path.to_path_buf(),
            source,
        })?;
    fs::write(path, json + "\n").map_err(io_err(path))
}
