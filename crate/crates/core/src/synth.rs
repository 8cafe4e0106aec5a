//! Synthetic cohorts with a known pulse: frame sequences whose face region
//! carries the pulse in the green channel, the matching contact-PPG trace and
//! landmark files, plus the programmed truth for every recording.
//!
//! The pulse waveform for a recording with rate `f0 = PR / 60` is
//!
//! ```text
//! s(t) = (1 + sin(2 pi f0 t)) * (1 + d_lf sin(2 pi f_lf t) + d_hf sin(2 pi f_hf t)) - 1
//! ```
//!
//! The envelope modulates a pulse that rides on a unit baseline, so the LF and
//! HF tones appear both in baseband (where the band powers are measured) and
//! as sidebands around the cardiac peak. Face pixels get
//! `base_green + pulse_amplitude * s(t)` plus Gaussian noise; the PPG is
//! `s(t)` plus independent noise.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::DEFAULT_FOREHEAD_EXTEND;
use crate::ingest::{
    self, Activity, DatasetManifest, Frame, FrameFormat, FrameSequence, IngestError, LandmarkSet,
    ManifestRecord, Point, PpgSignal,
};
use crate::spectral;

pub const PR_CLAMP_BPM: (f64, f64) = (45.0, 180.0);

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic profile: {0}")]
    Profile(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Spectral(#[from] spectral::SpectralError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = SynthError> = std::result::Result<T, E>;

/// Skin rectangle in frame pixels, half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaceBox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthProfile {
    pub n_subjects: usize,
    pub activities: Vec<Activity>,
    /// Cohort mean pulse rate for rest, walk and exercise.
    pub pr_mean_bpm: [f64; 3],
    pub pr_spread_bpm: f64,
    pub duration_s: f64,
    pub frame_rate: f64,
    pub ppg_rate_hz: f64,
    /// Green-intensity units per unit of `s(t)`.
    pub pulse_amplitude: f64,
    /// Per-pixel green noise, intensity units.
    pub noise_sigma: f64,
    /// PPG noise, in units of the unit pulse.
    pub ppg_noise_sigma: f64,
    pub lf_mod_hz: f64,
    pub hf_mod_hz: f64,
    pub lf_depth: f64,
    pub hf_depth: f64,
    /// Each recording draws its depths uniformly from `depth * (1 +/- spread)`.
    pub depth_spread: f64,
    pub base_green: f64,
    pub skin_red: u8,
    pub skin_blue: u8,
    pub background: [u8; 3],
    pub frame_width: u32,
    pub frame_height: u32,
    pub face_box: FaceBox,
    pub frame_format: FrameFormat,
    pub seed: u64,
}

impl Default for SynthProfile {
    fn default() -> Self {
        SynthProfile {
            n_subjects: 20,
            activities: Activity::ALL.to_vec(),
            pr_mean_bpm: [72.9, 79.6, 98.5],
            pr_spread_bpm: 6.0,
            duration_s: 50.0,
            frame_rate: 30.0,
            ppg_rate_hz: 128.0,
            pulse_amplitude: 2.0,
            noise_sigma: 0.5,
            ppg_noise_sigma: 0.05,
            lf_mod_hz: 0.1,
            hf_mod_hz: 0.3,
            lf_depth: 0.2,
            hf_depth: 0.2,
            depth_spread: 0.3,
            base_green: 120.0,
            skin_red: 170,
            skin_blue: 110,
            background: [40, 40, 40],
            frame_width: 64,
            frame_height: 64,
            face_box: FaceBox {
                x: 12,
                y: 10,
                width: 40,
                height: 42,
            },
            frame_format: FrameFormat::Png,
            seed: 0,
        }
    }
}

impl SynthProfile {
    /// Largest `|s(t)|` any recording can reach.
    fn max_excursion(&self) -> f64 {
        let depth = (self.lf_depth + self.hf_depth) * (1.0 + self.depth_spread);
        2.0 * (1.0 + depth) - 1.0
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(SynthError::Profile(m));
        if self.n_subjects == 0 || self.activities.is_empty() {
            return fail("need at least one subject and one activity".into());
        }
        for (name, v) in [
            ("duration_s", self.duration_s),
            ("frame_rate", self.frame_rate),
            ("ppg_rate_hz", self.ppg_rate_hz),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be positive"));
            }
        }
        for (name, v) in [
            ("pr_spread_bpm", self.pr_spread_bpm),
            ("pulse_amplitude", self.pulse_amplitude),
            ("noise_sigma", self.noise_sigma),
            ("ppg_noise_sigma", self.ppg_noise_sigma),
            ("lf_depth", self.lf_depth),
            ("hf_depth", self.hf_depth),
            ("lf_mod_hz", self.lf_mod_hz),
            ("hf_mod_hz", self.hf_mod_hz),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be non-negative"));
            }
        }
        if !(0.0..1.0).contains(&self.depth_spread) {
            return fail("depth_spread must lie in [0, 1)".into());
        }
        let mut seen = self.activities.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.activities.len() {
            return fail("activities repeat".into());
        }
        let margin = self.pulse_amplitude * self.max_excursion() + 4.0 * self.noise_sigma;
        if self.base_green - margin < 0.0 || self.base_green + margin > 255.0 {
            return fail(format!(
                "base_green {} +/- {margin:.2} leaves [0, 255]",
                self.base_green
            ));
        }
        let b = self.face_box;
        if b.width == 0
            || b.height == 0
            || b.x + b.width > self.frame_width
            || b.y + b.height > self.frame_height
        {
            return fail("face_box must lie inside the frame".into());
        }
        let (_, lm_top, _, _) = self.landmark_box();
        if b.width < 20 || b.y + b.height - lm_top < 3 {
            return fail("face_box too small for 20x20 features".into());
        }
        Ok(())
    }

    /// Landmark rectangle `(x0, y0, x1, y1)`: the skin box minus a forehead strip
    /// sized so the default crop extension recovers the whole skin box.
    pub fn landmark_box(&self) -> (u32, u32, u32, u32) {
        let b = self.face_box;
        let lower = (b.height as f64 / (1.0 + DEFAULT_FOREHEAD_EXTEND)).round() as u32;
        (b.x, b.y + b.height - lower, b.x + b.width, b.y + b.height)
    }

    fn landmarks(&self) -> Vec<Point> {
        let (x0, y0, x1, y1) = self.landmark_box();
        let (x0, y0, x1, y1) = (x0 as i32, y0 as i32, x1 as i32, y1 as i32);
        vec![
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x0, y1),
            Point::new(x1, y1),
            Point::new((x0 + x1) / 2, (y0 + y1) / 2),
        ]
    }

    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.frame_rate).round() as usize
    }

    pub fn ppg_count(&self) -> usize {
        (self.duration_s * self.ppg_rate_hz).round() as usize
    }
}

/// The programmed pulse of one recording.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waveform {
    pub pr_bpm: f64,
    pub lf_depth: f64,
    pub hf_depth: f64,
    pub lf_hz: f64,
    pub hf_hz: f64,
}

impl Waveform {
    pub fn f0(&self) -> f64 {
        self.pr_bpm / 60.0
    }

    pub fn at(&self, t: f64) -> f64 {
        let pulse = 1.0 + (2.0 * PI * self.f0() * t).sin();
        let envelope = 1.0
            + self.lf_depth * (2.0 * PI * self.lf_hz * t).sin()
            + self.hf_depth * (2.0 * PI * self.hf_hz * t).sin();
        pulse * envelope - 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub pr_bpm: f64,
    pub lf: f64,
    pub hf: f64,
}

#[derive(Debug, Clone)]
pub struct SynthRecord {
    pub frames: FrameSequence,
    pub landmarks: LandmarkSet,
    pub ppg: PpgSignal,
    pub truth: Truth,
    pub waveform: Waveform,
    /// Channel values clamped to 0 or 255 during quantization.
    pub clipped: usize,
}

pub fn subject_id(index: usize, n_subjects: usize) -> String {
    let width = n_subjects.to_string().len().max(2);
    format!("s{:0width$}", index + 1)
}

/// Independent generator stream for one (subject, activity) pair.
fn record_rng(profile: &SynthProfile, subject_index: usize, activity: Activity) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    rng.set_stream(((subject_index as u64) << 4) | activity.index() as u64);
    rng
}

fn draw_waveform<R: Rng>(profile: &SynthProfile, activity: Activity, rng: &mut R) -> Waveform {
    let mean = profile.pr_mean_bpm[activity.index()];
    let pr = if profile.pr_spread_bpm > 0.0 {
        Normal::new(mean, profile.pr_spread_bpm).unwrap().sample(rng)
    } else {
        mean
    };
    let s = profile.depth_spread;
    let mut depth = |d: f64| if s > 0.0 { d * rng.random_range(1.0 - s..1.0 + s) } else { d };
    Waveform {
        pr_bpm: pr.clamp(PR_CLAMP_BPM.0, PR_CLAMP_BPM.1),
        lf_depth: depth(profile.lf_depth),
        hf_depth: depth(profile.hf_depth),
        lf_hz: profile.lf_mod_hz,
        hf_hz: profile.hf_mod_hz,
    }
}

/// PPG samples of `wave` at the profile rate, with noise when `rng` is given.
pub fn ppg_samples<R: Rng>(profile: &SynthProfile, wave: &Waveform, rng: Option<&mut R>) -> Vec<f64> {
    let mut clean: Vec<f64> = (0..profile.ppg_count())
        .map(|i| wave.at(i as f64 / profile.ppg_rate_hz))
        .collect();
    if let Some(rng) = rng {
        if profile.ppg_noise_sigma > 0.0 {
            let noise = Normal::new(0.0, profile.ppg_noise_sigma).unwrap();
            for v in &mut clean {
                *v += noise.sample(rng);
            }
        }
    }
    clean
}

/// A noisy PPG trace for an explicitly programmed pulse rate.
pub fn synth_ppg(profile: &SynthProfile, pr_bpm: f64, seed: u64) -> Result<PpgSignal> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wave = draw_waveform(profile, Activity::Rest, &mut rng);
    wave.pr_bpm = pr_bpm;
    let samples = ppg_samples(profile, &wave, Some(&mut rng));
    Ok(PpgSignal::new(samples, profile.ppg_rate_hz, "synthetic", Activity::Rest)?)
}

fn render_frames<R: Rng>(profile: &SynthProfile, wave: &Waveform, rng: &mut R) -> (Vec<Frame>, usize) {
    let (w, h) = (profile.frame_width, profile.frame_height);
    let b = profile.face_box;
    let noise = (profile.noise_sigma > 0.0).then(|| Normal::new(0.0, profile.noise_sigma).unwrap());
    let mut clipped = 0;
    let frames = (0..profile.frame_count())
        .map(|i| {
            let level = profile.base_green + profile.pulse_amplitude * wave.at(i as f64 / profile.frame_rate);
            let mut pixels = vec![profile.background; (w * h) as usize];
            for y in b.y..b.y + b.height {
                for x in b.x..b.x + b.width {
                    let g = level + noise.map_or(0.0, |n| n.sample(rng));
                    let q = g.round();
                    if q <= 0.0 || q >= 255.0 {
                        clipped += 1;
                    }
                    pixels[(y * w + x) as usize] = [profile.skin_red, q.clamp(0.0, 255.0) as u8, profile.skin_blue];
                }
            }
            Frame::new(w, h, pixels).expect("sized")
        })
        .collect();
    (frames, clipped)
}

pub fn synth_record(subject_index: usize, activity: Activity, profile: &SynthProfile) -> Result<SynthRecord> {
    profile.validate()?;
    let sid = subject_id(subject_index, profile.n_subjects);
    let mut rng = record_rng(profile, subject_index, activity);
    let wave = draw_waveform(profile, activity, &mut rng);
    let (frames, clipped) = render_frames(profile, &wave, &mut rng);
    if clipped > 0 {
        log::warn!("{sid}/{activity}: {clipped} green values clipped to 0 or 255");
    }
    let ppg = PpgSignal::new(
        ppg_samples(profile, &wave, Some(&mut rng)),
        profile.ppg_rate_hz,
        &sid,
        activity,
    )?;
    let clean = PpgSignal::new(
        ppg_samples::<ChaCha8Rng>(profile, &wave, None),
        profile.ppg_rate_hz,
        &sid,
        activity,
    )?;
    let labels = spectral::ground_truth(&clean)?;
    let landmarks = LandmarkSet::new(vec![profile.landmarks(); frames.len()])?;
    Ok(SynthRecord {
        frames: FrameSequence::new(frames, profile.frame_rate, &sid, activity)?,
        landmarks,
        ppg,
        truth: Truth {
            pr_bpm: wave.pr_bpm,
            lf: labels.lf,
            hf: labels.hf,
        },
        waveform: wave,
        clipped,
    })
}

/// Every `(subject index, activity)` pair of the profile, subject-major.
pub fn cohort_keys(profile: &SynthProfile) -> Vec<(usize, Activity)> {
    (0..profile.n_subjects)
        .flat_map(|s| profile.activities.iter().map(move |&a| (s, a)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub subject_id: String,
    pub activity: Activity,
    pub pr_bpm: f64,
    pub lf: f64,
    pub hf: f64,
}

#[derive(Debug, Clone)]
pub struct CohortSummary {
    pub manifest: DatasetManifest,
    pub truth: Vec<TruthRow>,
    pub clipped: usize,
}

/// Writes a full cohort under `out`: one directory per recording holding
/// `frames/`, `landmarks.json` and `ppg.csv`, plus `manifest.json` and
/// `truth.csv` at the top.
pub fn synth_cohort(profile: &SynthProfile, out: &Path) -> Result<CohortSummary> {
    profile.validate()?;
    fs::create_dir_all(out).map_err(|source| SynthError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let written = cohort_keys(profile)
        .into_par_iter()
        .map(|(s, activity)| -> Result<(ManifestRecord, TruthRow, usize)> {
            let rec = synth_record(s, activity, profile)?;
            let sid = rec.frames.subject_id().to_string();
            let rel = PathBuf::from(format!("{sid}_{activity}"));
            let dir = out.join(&rel);
            ingest::write_frames(&dir.join("frames"), rec.frames.frames(), profile.frame_format)?;
            ingest::write_landmarks(&dir.join("landmarks.json"), &rec.landmarks)?;
            ingest::write_ppg(&dir.join("ppg.csv"), &rec.ppg)?;
            let record = ManifestRecord {
                subject_id: sid.clone(),
                activity,
                frames: rel.join("frames"),
                landmarks: rel.join("landmarks.json"),
                ppg: rel.join("ppg.csv"),
                frame_rate: profile.frame_rate,
                landmarks_broadcast: false,
            };
            let truth = TruthRow {
                subject_id: sid,
                activity,
                pr_bpm: rec.truth.pr_bpm,
                lf: rec.truth.lf,
                hf: rec.truth.hf,
            };
            Ok((record, truth, rec.clipped))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::with_capacity(written.len());
    let mut truth = Vec::with_capacity(written.len());
    let mut clipped = 0;
    for (r, t, c) in written {
        records.push(r);
        truth.push(t);
        clipped += c;
    }
    let manifest = DatasetManifest::new(records, out)?;
    ingest::write_manifest(&out.join("manifest.json"), &manifest)?;
    write_truth_csv(&out.join("truth.csv"), &truth)?;
    Ok(CohortSummary {
        manifest,
        truth,
        clipped,
    })
}

/// `subject_id,activity,pr_bpm,lf,hf`.
pub fn write_truth_csv(path: &Path, rows: &[TruthRow]) -> Result<()> {
    let io = |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut s = String::from("subject_id,activity,pr_bpm,lf,hf\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.subject_id, r.activity, r.pr_bpm, r.lf, r.hf));
    }
    fs::File::create(path).and_then(|mut f| f.write_all(s.as_bytes())).map_err(io)
}
