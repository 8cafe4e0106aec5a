//! Leave-one-subject-out evaluation: folds, recording-level aggregation,
//! MAPE / RMSE and the report files.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Activity;
use crate::nn::{self, NetworkConfig, NnError, TrainReport};
use crate::pipeline::Dataset;
use crate::spectral::GroundTruthLabels;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("leave-one-subject-out needs at least 2 subjects, got {0}")]
    TooFewSubjects(usize),
    #[error("no values to aggregate")]
    Empty,
    #[error("true value at index {0} is zero")]
    ZeroTruth(usize),
    #[error("fold {fold} (held out {subject}): {source}")]
    Fold {
        fold: usize,
        subject: String,
        #[source]
        source: NnError,
    },
    #[error("fold {fold}, {subject}/{activity}: prediction is not finite")]
    NonFinitePrediction {
        fold: usize,
        subject: String,
        activity: Activity,
    },
    #[error(
        "projected runtime {:.0} s exceeds the {:.0} s budget after {completed}/{total} iterations",
        projected.as_secs_f64(),
        budget.as_secs_f64()
    )]
    OverBudget {
        projected: Duration,
        budget: Duration,
        completed: usize,
        total: usize,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Target {
    #[serde(rename = "PR")]
    Pr,
    #[serde(rename = "LF")]
    Lf,
    #[serde(rename = "HF")]
    Hf,
}

impl Target {
    pub fn label(self, labels: &GroundTruthLabels) -> f64 {
        match self {
            Target::Pr => labels.pr_bpm,
            Target::Lf => labels.lf,
            Target::Hf => labels.hf,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Target::Pr => "PR",
            Target::Lf => "LF",
            Target::Hf => "HF",
        }
    }

    /// Iterations used by default for this target.
    pub fn default_iterations(self) -> usize {
        match self {
            Target::Pr => nn::DEFAULT_PR_ITERATIONS,
            Target::Lf | Target::Hf => nn::DEFAULT_PRV_ITERATIONS,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "PR" => Ok(Target::Pr),
            "LF" => Ok(Target::Lf),
            "HF" => Ok(Target::Hf),
            _ => Err(format!("unknown target {s:?} (expected PR, LF or HF)")),
        }
    }
}

/// Record indices of one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub held_out_subject: String,
    pub train_records: Vec<usize>,
    pub test_records: Vec<usize>,
}

/// One fold per distinct subject, in sorted subject order. Records are given
/// by their subject ids; folds hold indices into that list.
pub fn loso_folds<S: AsRef<str>>(subject_ids: &[S]) -> Result<Vec<Fold>> {
    let mut subjects: Vec<&str> = subject_ids.iter().map(AsRef::as_ref).collect();
    subjects.sort_unstable();
    subjects.dedup();
    if subjects.len() < 2 {
        return Err(EvalError::TooFewSubjects(subjects.len()));
    }
    Ok(subjects
        .into_iter()
        .map(|held| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..subject_ids.len()).partition(|&i| subject_ids[i].as_ref() == held);
            Fold {
                held_out_subject: held.to_string(),
                train_records: train,
                test_records: test,
            }
        })
        .collect())
}

/// Recording-level prediction: the mean of the frame predictions.
pub fn aggregate_recording(frame_preds: &[f64]) -> Result<f64> {
    if frame_preds.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(frame_preds.iter().sum::<f64>() / frame_preds.len() as f64)
}

/// Mean absolute percentage error over `(true, predicted)` pairs.
pub fn mape(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut sum = 0.0;
    for (i, &(t, p)) in pairs.iter().enumerate() {
        if t == 0.0 {
            return Err(EvalError::ZeroTruth(i));
        }
        sum += ((p - t) / t).abs();
    }
    Ok(100.0 * sum / pairs.len() as f64)
}

pub fn rmse(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    let mse = pairs.iter().map(|(t, p)| (p - t).powi(2)).sum::<f64>() / pairs.len() as f64;
    Ok(mse.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingPrediction {
    pub subject_id: String,
    pub activity: Activity,
    pub truth: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold_index: usize,
    pub held_out_subject: String,
    pub predictions: Vec<RecordingPrediction>,
    pub train_report: TrainReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub target: Target,
    pub config: NetworkConfig,
    /// Over recordings.
    pub mape_percent: f64,
    pub rmse: f64,
    /// Mean of per-subject MAPE / RMSE.
    pub mape_by_subject: f64,
    pub rmse_by_subject: f64,
    pub folds: Vec<FoldResult>,
}

impl EvalReport {
    /// `(true, predicted)` for every recording, fold order.
    pub fn scatter(&self) -> Vec<(f64, f64)> {
        self.recordings().map(|r| (r.truth, r.predicted)).collect()
    }

    pub fn recordings(&self) -> impl Iterator<Item = &RecordingPrediction> {
        self.folds.iter().flat_map(|f| &f.predictions)
    }
}

pub fn mape_by_recording(preds: &[RecordingPrediction]) -> Result<f64> {
    mape(&pairs(preds.iter()))
}

pub fn rmse_by_recording(preds: &[RecordingPrediction]) -> Result<f64> {
    rmse(&pairs(preds.iter()))
}

fn pairs<'a>(preds: impl Iterator<Item = &'a RecordingPrediction>) -> Vec<(f64, f64)> {
    preds.map(|r| (r.truth, r.predicted)).collect()
}

fn by_subject(preds: &[RecordingPrediction]) -> BTreeMap<&str, Vec<&RecordingPrediction>> {
    let mut groups: BTreeMap<&str, Vec<&RecordingPrediction>> = BTreeMap::new();
    for p in preds {
        groups.entry(&p.subject_id).or_default().push(p);
    }
    groups
}

/// Mean over subjects of each subject's MAPE.
pub fn mape_by_subject(preds: &[RecordingPrediction]) -> Result<f64> {
    let groups = by_subject(preds);
    let per = groups
        .values()
        .map(|g| mape(&pairs(g.iter().copied())))
        .collect::<Result<Vec<_>>>()?;
    aggregate_recording(&per)
}

/// Mean over subjects of each subject's RMSE.
pub fn rmse_by_subject(preds: &[RecordingPrediction]) -> Result<f64> {
    let groups = by_subject(preds);
    let per = groups
        .values()
        .map(|g| rmse(&pairs(g.iter().copied())))
        .collect::<Result<Vec<_>>>()?;
    aggregate_recording(&per)
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Folds trained at once; 0 uses the rayon default.
    pub jobs: usize,
    /// Abort once the projected total runtime exceeds this.
    pub budget: Option<Duration>,
}

/// Shared epoch counter for runtime projection across parallel folds.
struct Progress {
    start: Instant,
    done: AtomicUsize,
    total: usize,
    jobs: usize,
    budget: Option<Duration>,
    over: AtomicBool,
    projected: std::sync::Mutex<Duration>,
}

impl Progress {
    /// Records one finished iteration; false once the run should stop.
    fn tick(&self) -> bool {
        if self.over.load(Ordering::Relaxed) {
            return false;
        }
        let done = self.done.fetch_add(1, Ordering::Relaxed) + 1;
        let Some(budget) = self.budget else {
            return true;
        };
        let elapsed = self.start.elapsed();
        // Parallel folds finish `jobs` iterations per wall-clock step; do not
        // project before every worker has reported once.
        let projected = if done >= self.jobs {
            elapsed.mul_f64(self.total as f64 / done as f64)
        } else {
            elapsed
        };
        if projected > budget {
            *self.projected.lock().unwrap() = projected;
            self.over.store(true, Ordering::Relaxed);
            return false;
        }
        true
    }
}

/// Frames of the given records stacked in order, with each frame labelled by
/// its recording's `target` value.
pub fn stack_records(dataset: &Dataset, idx: &[usize], target: Target) -> (Array2<f64>, Vec<f64>) {
    let views: Vec<ArrayView2<f64>> = idx.iter().map(|&i| dataset.records[i].features.view()).collect();
    let x = concatenate(Axis(0), &views).expect("uniform width");
    let y = idx
        .iter()
        .flat_map(|&i| {
            let r = &dataset.records[i];
            std::iter::repeat_n(target.label(&r.labels), r.features.nrows())
        })
        .collect();
    (x, y)
}

fn run_fold(
    dataset: &Dataset,
    fold_index: usize,
    fold: &Fold,
    target: Target,
    cfg: &NetworkConfig,
    progress: &Progress,
) -> Result<FoldResult> {
    let fold_err = |source| EvalError::Fold {
        fold: fold_index,
        subject: fold.held_out_subject.clone(),
        source,
    };
    if progress.over.load(Ordering::Relaxed) {
        return Err(fold_err(NnError::Cancelled {
            completed: 0,
            total: cfg.iterations,
        }));
    }
    let (train_x, train_y) = stack_records(dataset, &fold.train_records, target);
    let (test_x, test_y) = stack_records(dataset, &fold.test_records, target);
    let fold_cfg = NetworkConfig {
        seed: cfg.seed.wrapping_add(fold_index as u64),
        ..cfg.clone()
    };
    log::info!(
        "fold {fold_index}: holding out {} ({} train frames)",
        fold.held_out_subject,
        train_x.nrows()
    );
    let report = nn::train_with_progress(train_x.view(), &train_y, test_x.view(), &test_y, &fold_cfg, |_| {
        progress.tick()
    })
    .map_err(fold_err)?;
    drop(train_x);
    let frame_preds = nn::predict(&report.final_params, test_x.view(), report.target_mean, report.target_std)
        .map_err(fold_err)?;

    let mut predictions = Vec::with_capacity(fold.test_records.len());
    let mut offset = 0;
    for &i in &fold.test_records {
        let r = &dataset.records[i];
        let n = r.features.nrows();
        let predicted = aggregate_recording(&frame_preds[offset..offset + n])?;
        offset += n;
        if !predicted.is_finite() {
            return Err(EvalError::NonFinitePrediction {
                fold: fold_index,
                subject: r.subject_id().to_string(),
                activity: r.activity(),
            });
        }
        predictions.push(RecordingPrediction {
            subject_id: r.subject_id().to_string(),
            activity: r.activity(),
            truth: target.label(&r.labels),
            predicted,
        });
    }
    Ok(FoldResult {
        fold_index,
        held_out_subject: fold.held_out_subject.clone(),
        predictions,
        train_report: report,
    })
}

/// Trains one network per held-out subject and scores the held-out
/// recordings. Fold `k` trains with seed `cfg.seed + k`.
pub fn run_loso(dataset: &Dataset, target: Target, cfg: &NetworkConfig, options: &EvalOptions) -> Result<EvalReport> {
    let folds = loso_folds(&dataset.subject_ids())?;
    let jobs = if options.jobs == 0 {
        rayon::current_num_threads()
    } else {
        options.jobs
    };
    let progress = Progress {
        start: Instant::now(),
        done: AtomicUsize::new(0),
        total: folds.len() * cfg.iterations,
        jobs: jobs.min(folds.len()),
        budget: options.budget,
        over: AtomicBool::new(false),
        projected: std::sync::Mutex::new(Duration::ZERO),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("thread pool");
    let results: Vec<Result<FoldResult>> = pool.install(|| {
        folds
            .par_iter()
            .enumerate()
            .map(|(k, fold)| run_fold(dataset, k, fold, target, cfg, &progress))
            .collect()
    });
    if progress.over.load(Ordering::Relaxed) {
        return Err(EvalError::OverBudget {
            projected: *progress.projected.lock().unwrap(),
            budget: options.budget.unwrap_or_default(),
            completed: progress.done.load(Ordering::Relaxed),
            total: progress.total,
        });
    }
    let folds = results.into_iter().collect::<Result<Vec<_>>>()?;
    let preds: Vec<RecordingPrediction> = folds.iter().flat_map(|f| f.predictions.clone()).collect();
    Ok(EvalReport {
        target,
        config: cfg.clone(),
        mape_percent: mape_by_recording(&preds)?,
        rmse: rmse_by_recording(&preds)?,
        mape_by_subject: mape_by_subject(&preds)?,
        rmse_by_subject: rmse_by_subject(&preds)?,
        folds,
    })
}

#[derive(Serialize)]
struct FoldSummary<'a> {
    fold: usize,
    held_out_subject: &'a str,
    seed: u64,
    final_train_mse: Option<f64>,
    final_test_mse: Option<f64>,
    target_mean: f64,
    target_std: f64,
    recordings: &'a [RecordingPrediction],
}

#[derive(Serialize)]
struct ReportFile<'a, C: Serialize> {
    target: Target,
    recordings: usize,
    mape_percent: f64,
    rmse: f64,
    mape_by_subject_percent: f64,
    rmse_by_subject: f64,
    network: &'a NetworkConfig,
    config: &'a C,
    folds: Vec<FoldSummary<'a>>,
}

/// The `report.json` document; `config` is echoed verbatim.
pub fn report_json<C: Serialize>(report: &EvalReport, config: &C) -> String {
    let doc = ReportFile {
        target: report.target,
        recordings: report.recordings().count(),
        mape_percent: report.mape_percent,
        rmse: report.rmse,
        mape_by_subject_percent: report.mape_by_subject,
        rmse_by_subject: report.rmse_by_subject,
        network: &report.config,
        config,
        folds: report
            .folds
            .iter()
            .map(|f| FoldSummary {
                fold: f.fold_index,
                held_out_subject: &f.held_out_subject,
                seed: report.config.seed.wrapping_add(f.fold_index as u64),
                final_train_mse: f.train_report.train_loss_curve.last().copied(),
                final_test_mse: f.train_report.test_loss_curve.last().copied(),
                target_mean: f.train_report.target_mean,
                target_std: f.train_report.target_std,
                recordings: &f.predictions,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("serializable") + "\n"
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `true,pred,subject_id,activity`.
pub fn scatter_csv(report: &EvalReport) -> String {
    let mut s = String::from("true,pred,subject_id,activity\n");
    for r in report.recordings() {
        s.push_str(&format!("{},{},{},{}\n", r.truth, r.predicted, r.subject_id, r.activity));
    }
    s
}

fn loss_csv(r: &TrainReport) -> String {
    let mut s = String::from("iteration,train_mse,test_mse\n");
    for (i, (a, b)) in r.train_loss_curve.iter().zip(&r.test_loss_curve).enumerate() {
        s.push_str(&format!("{},{a},{b}\n", i + 1));
    }
    s
}

/// Writes `report.json`, `scatter_<target>.csv` and `loss_fold_<k>.csv`
/// (plus SVG plots when asked) into `dir`, returning the paths written.
pub fn write_outputs<C: Serialize>(report: &EvalReport, config: &C, dir: &Path, plots: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|source| EvalError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    let mut put = |name: String, contents: String| -> Result<()> {
        let p = dir.join(name);
        write(&p, &contents)?;
        written.push(p);
        Ok(())
    };
    put("report.json".into(), report_json(report, config))?;
    put(format!("scatter_{}.csv", report.target), scatter_csv(report))?;
    for f in &report.folds {
        put(format!("loss_fold_{}.csv", f.fold_index), loss_csv(&f.train_report))?;
    }
    if plots {
        put(format!("scatter_{}.svg", report.target), plot::scatter_svg(report))?;
        for f in &report.folds {
            put(
                format!("loss_fold_{}.svg", f.fold_index),
                plot::loss_svg(&f.train_report, &f.held_out_subject),
            )?;
        }
    }
    Ok(written)
}

mod plot {
    use super::{EvalReport, TrainReport};
    use std::fmt::Write;

    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const PAD: f64 = 48.0;

    struct Frame {
        x: (f64, f64),
        y: (f64, f64),
    }

    impl Frame {
        fn px(&self, x: f64) -> f64 {
            PAD + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * PAD)
        }
        fn py(&self, y: f64) -> f64 {
            H - PAD - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * PAD)
        }
    }

    fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() || !hi.is_finite() {
            return (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        }
    }

    fn open(title: &str, xlabel: &str, ylabel: &str, f: &Frame) -> String {
        let mut s = String::new();
        writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
        )
        .unwrap();
        writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
        writeln!(
            s,
            r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - 2.0 * PAD,
            H - 2.0 * PAD
        )
        .unwrap();
        writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{title}</text>"#, W / 2.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, W / 2.0, H - 10.0).unwrap();
        writeln!(
            s,
            r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{ylabel}</text>"#,
            H / 2.0,
            H / 2.0
        )
        .unwrap();
        for (v, anchor_x) in [(f.x.0, f.px(f.x.0)), (f.x.1, f.px(f.x.1))] {
            writeln!(s, r#"<text x="{anchor_x:.1}" y="{}" text-anchor="middle">{v:.3}</text>"#, H - PAD + 14.0).unwrap();
        }
        for v in [f.y.0, f.y.1] {
            writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.3}</text>"#, PAD - 4.0, f.py(v) + 4.0).unwrap();
        }
        s
    }

    pub fn scatter_svg(report: &EvalReport) -> String {
        let pts = report.scatter();
        let all = span(pts.iter().flat_map(|&(t, p)| [t, p]));
        let f = Frame { x: all, y: all };
        let mut s = open(
            &format!("{} predictions (MAPE {:.2}%)", report.target, report.mape_percent),
            "true",
            "predicted",
            &f,
        );
        writeln!(
            s,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="4 3"/>"#,
            f.px(all.0),
            f.py(all.0),
            f.px(all.1),
            f.py(all.1)
        )
        .unwrap();
        for (t, p) in pts {
            writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="steelblue"/>"#, f.px(t), f.py(p)).unwrap();
        }
        s.push_str("</svg>\n");
        s
    }

    pub fn loss_svg(r: &TrainReport, subject: &str) -> String {
        let n = r.train_loss_curve.len().max(2) as f64;
        let f = Frame {
            x: (1.0, n),
            y: span(r.train_loss_curve.iter().chain(&r.test_loss_curve).copied().chain([0.0])),
        };
        let mut s = open(&format!("loss, held out {subject}"), "iteration", "MSE (standardized)", &f);
        for (curve, colour) in [(&r.train_loss_curve, "steelblue"), (&r.test_loss_curve, "darkorange")] {
            let path: Vec<String> = curve
                .iter()
                .enumerate()
                .map(|(i, v)| format!("{:.1},{:.1}", f.px(i as f64 + 1.0), f.py(*v)))
                .collect();
            writeln!(s, r#"<polyline points="{}" fill="none" stroke="{colour}"/>"#, path.join(" ")).unwrap();
        }
        writeln!(s, r#"<text x="{}" y="{}" fill="steelblue">train</text>"#, W - PAD - 70.0, PAD + 14.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" fill="darkorange">test</text>"#, W - PAD - 30.0, PAD + 14.0).unwrap();
        s.push_str("</svg>\n");
        s
    }
}
