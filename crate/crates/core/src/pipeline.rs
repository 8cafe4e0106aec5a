//! Recordings to training data: per-frame features plus recording labels,
//! either from a manifest on disk or straight from a synthetic profile.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{self, FeatureError, DEFAULT_FOREHEAD_EXTEND};
use crate::ingest::{self, Activity, DatasetManifest, IngestError, ManifestRecord};
use crate::spectral::{self, GroundTruthLabels, SpectralError, SpectralOptions};
use crate::synth::{self, SynthError, SynthProfile};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{subject_id}/{activity}: {source}")]
    Ingest {
        subject_id: String,
        activity: Activity,
        #[source]
        source: IngestError,
    },
    #[error("{subject_id}/{activity}: {source}")]
    Features {
        subject_id: String,
        activity: Activity,
        #[source]
        source: FeatureError,
    },
    #[error("{subject_id}/{activity}: {source}")]
    Spectral {
        subject_id: String,
        activity: Activity,
        #[source]
        source: SpectralError,
    },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{0}")]
    Dataset(String),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureOptions {
    /// Upward crop extension as a fraction of the landmark box height.
    pub forehead_extend: f64,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        FeatureOptions {
            forehead_extend: DEFAULT_FOREHEAD_EXTEND,
        }
    }
}

/// One recording ready for training: a row per frame and its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordData {
    pub features: Array2<f64>,
    pub labels: GroundTruthLabels,
}

impl RecordData {
    pub fn subject_id(&self) -> &str {
        &self.labels.subject_id
    }

    pub fn activity(&self) -> Activity {
        self.labels.activity
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub records: Vec<RecordData>,
}

impl Dataset {
    pub fn new(records: Vec<RecordData>) -> Result<Self> {
        if let Some(w) = records.first().map(|r| r.features.ncols()) {
            if let Some(r) = records.iter().find(|r| r.features.ncols() != w) {
                return Err(PipelineError::Dataset(format!(
                    "{}/{} has {} feature columns, expected {w}",
                    r.subject_id(),
                    r.activity(),
                    r.features.ncols()
                )));
            }
        }
        if let Some(r) = records.iter().find(|r| r.features.nrows() == 0) {
            return Err(PipelineError::Dataset(format!(
                "{}/{} has no frames",
                r.subject_id(),
                r.activity()
            )));
        }
        Ok(Dataset { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn subject_ids(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.subject_id()).collect()
    }

    pub fn labels(&self) -> Vec<GroundTruthLabels> {
        self.records.iter().map(|r| r.labels.clone()).collect()
    }
}

fn ingest_err(r: &ManifestRecord) -> impl Fn(IngestError) -> PipelineError + '_ {
    move |source| PipelineError::Ingest {
        subject_id: r.subject_id.clone(),
        activity: r.activity,
        source,
    }
}

/// Labels of one manifest record from its PPG file.
pub fn record_labels(
    manifest: &DatasetManifest,
    r: &ManifestRecord,
    spectral_options: &SpectralOptions,
) -> Result<GroundTruthLabels> {
    let ppg = ingest::load_ppg(&manifest.resolve(&r.ppg), &r.subject_id, r.activity).map_err(ingest_err(r))?;
    spectral::ground_truth_with(&ppg, spectral_options).map_err(|source| PipelineError::Spectral {
        subject_id: r.subject_id.clone(),
        activity: r.activity,
        source,
    })
}

/// Per-frame features of one manifest record.
pub fn record_features(
    manifest: &DatasetManifest,
    r: &ManifestRecord,
    feature_options: &FeatureOptions,
) -> Result<features::FeatureMatrix> {
    let seq = ingest::load_frame_sequence(&manifest.resolve(&r.frames), r.frame_rate, &r.subject_id, r.activity)
        .map_err(ingest_err(r))?;
    let lms = ingest::load_landmarks(&manifest.resolve(&r.landmarks)).map_err(ingest_err(r))?;
    let frame = &seq.frames()[0];
    lms.validate(frame.width(), frame.height(), seq.len(), r.landmarks_broadcast)
        .map_err(ingest_err(r))?;
    features::sequence_to_features(&seq, &lms, feature_options.forehead_extend).map_err(|source| {
        PipelineError::Features {
            subject_id: r.subject_id.clone(),
            activity: r.activity,
            source,
        }
    })
}

/// Loads every manifest record, in manifest order.
pub fn dataset_from_manifest(
    manifest: &DatasetManifest,
    feature_options: &FeatureOptions,
    spectral_options: &SpectralOptions,
) -> Result<Dataset> {
    let records = manifest
        .records
        .iter()
        .map(|r| {
            log::info!("loading {}/{}", r.subject_id, r.activity);
            Ok(RecordData {
                features: record_features(manifest, r, feature_options)?.rows().clone(),
                labels: record_labels(manifest, r, spectral_options)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(records)
}

/// Generates a cohort in memory and runs it through the same feature and
/// label path as files on disk (labels come from the noisy PPG). Frames are
/// dropped as soon as their features exist.
pub fn dataset_from_synth(
    profile: &SynthProfile,
    feature_options: &FeatureOptions,
    spectral_options: &SpectralOptions,
) -> Result<Dataset> {
    let records = synth::cohort_keys(profile)
        .into_par_iter()
        .map(|(s, activity)| {
            let rec = synth::synth_record(s, activity, profile)?;
            let subject_id = rec.frames.subject_id().to_string();
            let features = features::sequence_to_features(&rec.frames, &rec.landmarks, feature_options.forehead_extend)
                .map_err(|source| PipelineError::Features {
                    subject_id: subject_id.clone(),
                    activity,
                    source,
                })?;
            let labels = spectral::ground_truth_with(&rec.ppg, spectral_options).map_err(|source| {
                PipelineError::Spectral {
                    subject_id,
                    activity,
                    source,
                }
            })?;
            Ok(RecordData {
                features: features.rows().clone(),
                labels,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthProfile {
        SynthProfile {
            n_subjects: 2,
            activities: vec![Activity::Rest, Activity::Exercise],
            duration_s: 6.0,
            ..SynthProfile::default()
        }
    }

    #[test]
    fn disk_and_memory_paths_agree() {
        let dir = tempfile::tempdir().unwrap();
        let profile = small();
        let summary = synth::synth_cohort(&profile, dir.path()).unwrap();
        let manifest = ingest::load_manifest(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(manifest.records, summary.manifest.records);
        let fo = FeatureOptions::default();
        let so = SpectralOptions::default();
        let disk = dataset_from_manifest(&manifest, &fo, &so).unwrap();
        let mem = dataset_from_synth(&profile, &fo, &so).unwrap();
        assert_eq!(disk.len(), 4);
        assert_eq!(disk.records[0].features.dim(), (180, 400));
        for (a, b) in disk.records.iter().zip(&mem.records) {
            assert_eq!(a.features, b.features);
            assert_eq!(a.labels.subject_id, b.labels.subject_id);
            assert!((a.labels.pr_bpm - b.labels.pr_bpm).abs() < 1e-9);
            assert!((a.labels.lf - b.labels.lf).abs() <= 1e-9 * b.labels.lf.abs().max(1.0));
        }
    }

    #[test]
    fn errors_name_the_record() {
        let dir = tempfile::tempdir().unwrap();
        let summary = synth::synth_cohort(&small(), dir.path()).unwrap();
        let r = &summary.manifest.records[1];
        std::fs::write(dir.path().join(&r.ppg), "time_s,amplitude\n0,1\n").unwrap();
        let err = dataset_from_manifest(&summary.manifest, &FeatureOptions::default(), &SpectralOptions::default())
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with(&format!("{}/{}", r.subject_id, r.activity)), "{msg}");
    }

    #[test]
    fn ragged_widths_are_rejected() {
        let labels = |s: &str| GroundTruthLabels {
            subject_id: s.into(),
            activity: Activity::Rest,
            pr_bpm: 70.0,
            lf: 1.0,
            hf: 1.0,
        };
        let a = RecordData { features: Array2::zeros((3, 4)), labels: labels("a") };
        let b = RecordData { features: Array2::zeros((3, 5)), labels: labels("b") };
        assert!(Dataset::new(vec![a.clone(), b]).is_err());
        let empty = RecordData { features: Array2::zeros((0, 4)), labels: labels("c") };
        assert!(Dataset::new(vec![a, empty]).is_err());
    }
}
