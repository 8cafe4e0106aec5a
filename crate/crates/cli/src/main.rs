//! `rppg`: synthetic cohorts, feature extraction, spectral labels, training
//! and leave-one-subject-out evaluation from the command line.

mod config;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rppg::eval::{self, EvalError, EvalOptions, Target};
use rppg::ingest::{self, Activity, DatasetManifest, FrameFormat};
use rppg::nn::{self, persist, NetworkConfig};
use rppg::pipeline::{self, Dataset};
use rppg::{features, spectral, synth};

use config::RunConfig;

/// A problem with the invocation or the configuration rather than the data.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

#[derive(Parser)]
#[command(name = "rppg", version, about = "Camera-based pulse rate estimation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MatrixFormat {
    Bin,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort on disk.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        subjects: Option<usize>,
        /// Comma-separated subset of rest, walk, exercise.
        #[arg(long, value_delimiter = ',')]
        activities: Option<Vec<Activity>>,
        /// Per-pixel green noise sigma.
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
    },
    /// Per-frame feature matrices for every manifest record.
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "bin")]
        format: MatrixFormat,
    },
    /// Spectral labels (PR, LF, HF) for every manifest record.
    Spectra {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Labels CSV to write.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also dump each record's power spectrum here.
        #[arg(long)]
        spectra_dir: Option<PathBuf>,
    },
    /// Train on an explicit split and save the model.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Subjects held out for testing (repeatable or comma-separated).
        #[arg(long = "test-subject", value_delimiter = ',', required = true)]
        test_subjects: Vec<String>,
        #[arg(long)]
        target: Option<Target>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recording-level predictions of a saved model.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Predictions CSV to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Leave-one-subject-out cross-validation.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "synth")]
        manifest: Option<PathBuf>,
        /// Evaluate the config's synthetic profile, generated in memory.
        #[arg(long)]
        synth: bool,
        #[arg(long)]
        target: Option<Target>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Folds trained in parallel.
        #[arg(long)]
        jobs: Option<usize>,
        /// Write SVG scatter and loss plots.
        #[arg(long)]
        plots: bool,
        /// Abort when the projected runtime exceeds this many seconds.
        #[arg(long)]
        time_limit: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Png,
    Ppm,
}

fn load_config(common: &Common) -> anyhow::Result<(RunConfig, bool)> {
    let loaded = config::load(common.config.as_deref()).map_err(|e| usage(format!("{e:#}")))?;
    Ok((loaded.config, loaded.iterations_set))
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> anyhow::Result<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| usage(format!("--{name} is required (or set paths.{name} in the config)")))
}

fn open_manifest(path: &Path) -> anyhow::Result<DatasetManifest> {
    let m = ingest::load_manifest(path).with_context(|| format!("loading manifest {}", path.display()))?;
    if m.records.is_empty() {
        return Err(usage(format!("manifest {} has no records", path.display())));
    }
    Ok(m)
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn check_network(cfg: &NetworkConfig) -> anyhow::Result<()> {
    cfg.validate().map_err(|e| usage(e.to_string()))
}

fn resolve_network(
    cfg: &mut RunConfig,
    iterations_set: bool,
    target: Option<Target>,
    iterations: Option<usize>,
    seed: Option<u64>,
) -> anyhow::Result<()> {
    if let Some(t) = target {
        cfg.target = t;
    }
    if let Some(i) = iterations {
        cfg.network.iterations = i;
    } else if !iterations_set {
        cfg.network.iterations = cfg.target.default_iterations();
    }
    if let Some(s) = seed {
        cfg.network.seed = s;
    }
    check_network(&cfg.network)
}

fn cmd_synth(
    common: Common,
    out: Option<PathBuf>,
    subjects: Option<usize>,
    activities: Option<Vec<Activity>>,
    noise: Option<f64>,
    duration: Option<f64>,
    format: Option<FormatArg>,
) -> anyhow::Result<()> {
    let (mut cfg, _) = load_config(&common)?;
    let out = required(out, &cfg.paths.out, "out")?;
    let p = &mut cfg.synth;
    if let Some(n) = subjects {
        p.n_subjects = n;
    }
    if let Some(a) = activities {
        p.activities = a;
    }
    if let Some(n) = noise {
        p.noise_sigma = n;
    }
    if let Some(d) = duration {
        p.duration_s = d;
    }
    if let Some(f) = format {
        p.frame_format = match f {
            FormatArg::Png => FrameFormat::Png,
            FormatArg::Ppm => FrameFormat::Ppm,
        };
    }
    if let Some(s) = common.seed {
        p.seed = s;
    }
    p.validate().map_err(|e| usage(e.to_string()))?;
    let summary = synth::synth_cohort(p, &out)?;
    log::info!(
        "wrote {} records to {} ({} clipped values)",
        summary.manifest.records.len(),
        out.display(),
        summary.clipped
    );
    Ok(())
}

fn cmd_extract(
    common: Common,
    manifest: Option<PathBuf>,
    out: Option<PathBuf>,
    format: MatrixFormat,
) -> anyhow::Result<()> {
    let (cfg, _) = load_config(&common)?;
    let manifest = open_manifest(&required(manifest, &cfg.paths.manifest, "manifest")?)?;
    let out = required(out, &cfg.paths.out, "out")?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    for r in &manifest.records {
        let m = pipeline::record_features(&manifest, r, &cfg.features)?;
        let stem = format!("{}_{}", r.subject_id, r.activity);
        match format {
            MatrixFormat::Bin => features::write_matrix_binary(&out.join(format!("{stem}.pcfm")), &m)?,
            MatrixFormat::Csv => features::write_matrix_csv(&out.join(format!("{stem}.csv")), &m)?,
        }
        log::info!("{stem}: {} frames", m.len());
    }
    Ok(())
}

fn labels_csv(labels: &[spectral::GroundTruthLabels]) -> String {
    let mut s = String::from("subject_id,activity,pr_bpm,lf,hf\n");
    for l in labels {
        s.push_str(&format!("{},{},{},{},{}\n", l.subject_id, l.activity, l.pr_bpm, l.lf, l.hf));
    }
    s
}

fn cmd_spectra(
    common: Common,
    manifest: Option<PathBuf>,
    out: Option<PathBuf>,
    spectra_dir: Option<PathBuf>,
) -> anyhow::Result<()> {
    let (cfg, _) = load_config(&common)?;
    let manifest = open_manifest(&required(manifest, &cfg.paths.manifest, "manifest")?)?;
    let out = required(out, &cfg.paths.out, "out")?;
    if let Some(d) = &spectra_dir {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    let mut labels = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        labels.push(pipeline::record_labels(&manifest, r, &cfg.spectral)?);
        if let Some(d) = &spectra_dir {
            let ppg = ingest::load_ppg(&manifest.resolve(&r.ppg), &r.subject_id, r.activity)?;
            let spec = spectral::periodogram_samples(ppg.samples(), ppg.sample_rate(), cfg.spectral.window)?;
            spectral::write_spectrum_csv(&d.join(format!("{}_{}.csv", r.subject_id, r.activity)), &spec)?;
        }
    }
    write_file(&out, &labels_csv(&labels))
}

/// Splits record indices by membership of the subject in `test`.
fn split(data: &Dataset, test: &[String]) -> (Vec<usize>, Vec<usize>) {
    (0..data.len()).partition(|&i| !test.iter().any(|t| t == data.records[i].subject_id()))
}

fn recording_predictions(
    model: &persist::SavedModel,
    data: &Dataset,
    idx: &[usize],
    target: Option<Target>,
) -> anyhow::Result<String> {
    let mut s = String::from(if target.is_some() {
        "subject_id,activity,true,pred\n"
    } else {
        "subject_id,activity,pred\n"
    });
    for &i in idx {
        let r = &data.records[i];
        let frames = nn::predict(&model.params, r.features.view(), model.target_mean, model.target_std)?;
        let pred = eval::aggregate_recording(&frames)?;
        match target {
            Some(t) => s.push_str(&format!("{},{},{},{pred}\n", r.subject_id(), r.activity(), t.label(&r.labels))),
            None => s.push_str(&format!("{},{},{pred}\n", r.subject_id(), r.activity())),
        }
    }
    Ok(s)
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    common: Common,
    manifest: Option<PathBuf>,
    test_subjects: Vec<String>,
    target: Option<Target>,
    iterations: Option<usize>,
    learning_rate: Option<f64>,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let (mut cfg, iterations_set) = load_config(&common)?;
    resolve_network(&mut cfg, iterations_set, target, iterations, common.seed)?;
    if let Some(lr) = learning_rate {
        cfg.network.learning_rate = lr;
        check_network(&cfg.network)?;
    }
    let manifest = open_manifest(&required(manifest, &cfg.paths.manifest, "manifest")?)?;
    let out = required(out, &cfg.paths.out, "out")?;
    let subjects = manifest.subjects();
    if let Some(t) = test_subjects.iter().find(|t| !subjects.contains(t)) {
        return Err(usage(format!("test subject {t} is not in the manifest")));
    }
    if test_subjects.len() >= subjects.len() {
        return Err(usage("every subject is held out; nothing left to train on"));
    }
    let data = pipeline::dataset_from_manifest(&manifest, &cfg.features, &cfg.spectral)?;
    let (train_idx, test_idx) = split(&data, &test_subjects);
    let (train_x, train_y) = eval::stack_records(&data, &train_idx, cfg.target);
    let (test_x, test_y) = eval::stack_records(&data, &test_idx, cfg.target);
    let report = nn::train(train_x.view(), &train_y, test_x.view(), &test_y, &cfg.network)?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let model = persist::SavedModel {
        config: cfg.network.clone(),
        params: report.final_params.clone(),
        target_mean: report.target_mean,
        target_std: report.target_std,
    };
    persist::save(&out.join("model.pcnn"), &model)?;
    nn::write_loss_curves(&out.join("loss.csv"), &report)?;
    write_file(
        &out.join("predictions.csv"),
        &recording_predictions(&model, &data, &test_idx, Some(cfg.target))?,
    )?;
    write_file(
        &out.join("config.json"),
        &(serde_json::to_string_pretty(&cfg)? + "\n"),
    )?;
    log::info!(
        "final train MSE {:.5}, test MSE {:.5}",
        report.train_loss_curve.last().unwrap_or(&f64::NAN),
        report.test_loss_curve.last().unwrap_or(&f64::NAN)
    );
    Ok(())
}

fn cmd_predict(common: Common, model: PathBuf, manifest: Option<PathBuf>, out: Option<PathBuf>) -> anyhow::Result<()> {
    let (cfg, _) = load_config(&common)?;
    let model = persist::load(&model)?;
    let manifest = open_manifest(&required(manifest, &cfg.paths.manifest, "manifest")?)?;
    let out = required(out, &cfg.paths.out, "out")?;
    let mut s = String::from("subject_id,activity,pred\n");
    for r in &manifest.records {
        let m = pipeline::record_features(&manifest, r, &cfg.features)?;
        let frames = nn::predict(&model.params, m.rows().view(), model.target_mean, model.target_std)?;
        let pred = eval::aggregate_recording(&frames)?;
        s.push_str(&format!("{},{},{pred}\n", r.subject_id, r.activity));
    }
    write_file(&out, &s)
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    common: Common,
    manifest: Option<PathBuf>,
    use_synth: bool,
    target: Option<Target>,
    iterations: Option<usize>,
    jobs: Option<usize>,
    plots: bool,
    time_limit: Option<f64>,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let (mut cfg, iterations_set) = load_config(&common)?;
    resolve_network(&mut cfg, iterations_set, target, iterations, common.seed)?;
    if let Some(j) = jobs {
        cfg.jobs = j;
    }
    cfg.plots |= plots;
    if time_limit.is_some() {
        cfg.time_limit_s = time_limit;
    }
    let budget = match cfg.time_limit_s {
        Some(s) if s.is_finite() && s > 0.0 => Some(Duration::from_secs_f64(s)),
        Some(s) => return Err(usage(format!("time limit must be positive, got {s}"))),
        None => None,
    };
    let out = required(out, &cfg.paths.out, "out")?;
    let data = if use_synth {
        cfg.synth.validate().map_err(|e| usage(e.to_string()))?;
        if cfg.synth.n_subjects < 2 {
            return Err(usage("leave-one-subject-out needs at least 2 subjects"));
        }
        pipeline::dataset_from_synth(&cfg.synth, &cfg.features, &cfg.spectral)?
    } else {
        let manifest = open_manifest(&required(manifest, &cfg.paths.manifest, "manifest")?)?;
        let n = manifest.subjects().len();
        if n < 2 {
            return Err(usage(format!("leave-one-subject-out needs at least 2 subjects, manifest has {n}")));
        }
        pipeline::dataset_from_manifest(&manifest, &cfg.features, &cfg.spectral)?
    };
    let options = EvalOptions { jobs: cfg.jobs, budget };
    let report = match eval::run_loso(&data, cfg.target, &cfg.network, &options) {
        Err(e @ EvalError::TooFewSubjects(_)) => return Err(usage(e.to_string())),
        r => r?,
    };
    eval::write_outputs(&report, &cfg, &out, cfg.plots)?;
    log::info!(
        "{}: MAPE {:.3}%, RMSE {:.4} over {} recordings",
        report.target,
        report.mape_percent,
        report.rmse,
        report.scatter().len()
    );
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth {
            common,
            out,
            subjects,
            activities,
            noise,
            duration,
            format,
        } => cmd_synth(common, out, subjects, activities, noise, duration, format),
        Command::Extract {
            common,
            manifest,
            out,
            format,
        } => cmd_extract(common, manifest, out, format),
        Command::Spectra {
            common,
            manifest,
            out,
            spectra_dir,
        } => cmd_spectra(common, manifest, out, spectra_dir),
        Command::Train {
            common,
            manifest,
            test_subjects,
            target,
            iterations,
            learning_rate,
            out,
        } => cmd_train(common, manifest, test_subjects, target, iterations, learning_rate, out),
        Command::Predict {
            common,
            model,
            manifest,
            out,
        } => cmd_predict(common, model, manifest, out),
        Command::Eval {
            common,
            manifest,
            synth,
            target,
            iterations,
            jobs,
            plots,
            time_limit,
            out,
        } => cmd_eval(common, manifest, synth, target, iterations, jobs, plots, time_limit, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
