//! Periodogram power spectra and the labels derived from them: pulse rate
//! from the spectral peak, LF/HF band powers as areas under the spectrum.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Activity, PpgSignal};

pub const LF_BAND: (f64, f64) = (0.04, 0.15);
pub const HF_BAND: (f64, f64) = (0.15, 0.4);
/// 42 to 240 bpm.
pub const DEFAULT_PR_BAND: (f64, f64) = (0.7, 4.0);

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("signal has {0} samples, at least 2 required")]
    TooShort(usize),
    #[error("sample rate must be positive, got {0}")]
    BadSampleRate(f64),
    #[error("band [{lo}, {hi}] Hz is inverted or outside [0, {nyquist}] Hz")]
    BadBand { lo: f64, hi: f64, nyquist: f64 },
    #[error("no spectrum bins inside [{lo}, {hi}] Hz")]
    EmptyBand { lo: f64, hi: f64 },
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = SpectralError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    /// Plain periodogram.
    #[default]
    Rectangular,
    Hann,
}

impl Window {
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
                .collect(),
        }
    }
}

/// One-sided power spectrum, bins `k = 0..=N/2` at `k * sample_rate / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrum {
    freqs: Vec<f64>,
    power: Vec<f64>,
    resolution_hz: f64,
    n: usize,
}

impl PowerSpectrum {
    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn power(&self) -> &[f64] {
        &self.power
    }

    pub fn resolution_hz(&self) -> f64 {
        self.resolution_hz
    }

    /// Length of the transformed signal.
    pub fn signal_len(&self) -> usize {
        self.n
    }

    pub fn nyquist(&self) -> f64 {
        *self.freqs.last().unwrap()
    }

    /// Sum of the full two-sided spectrum, reconstructed from the stored half:
    /// interior bins appear twice, DC once, and the Nyquist bin once when N is even.
    pub fn two_sided_total(&self) -> f64 {
        let last = self.power.len() - 1;
        self.power
            .iter()
            .enumerate()
            .map(|(k, p)| {
                if k == 0 || (k == last && self.n.is_multiple_of(2)) {
                    *p
                } else {
                    2.0 * p
                }
            })
            .sum()
    }

    /// Linear interpolation of the power at `f`.
    fn power_at(&self, f: f64) -> f64 {
        let pos = f / self.resolution_hz;
        let k = (pos.floor() as usize).min(self.power.len() - 1);
        if k + 1 >= self.power.len() {
            return self.power[k];
        }
        let t = pos - k as f64;
        self.power[k] * (1.0 - t) + self.power[k + 1] * t
    }

    fn check_band(&self, lo: f64, hi: f64) -> Result<()> {
        let nyquist = self.nyquist();
        if !(lo >= 0.0 && lo < hi && hi <= nyquist * (1.0 + 1e-12)) {
            return Err(SpectralError::BadBand { lo, hi, nyquist });
        }
        Ok(())
    }
}

/// Periodogram of the mean-removed samples: `power[k] = |X[k]|^2 / sum(w^2)`,
/// which is `|X[k]|^2 / N` for the rectangular window. Works for any N.
pub fn periodogram_samples(samples: &[f64], sample_rate: f64, window: Window) -> Result<PowerSpectrum> {
    let n = samples.len();
    if n < 2 {
        return Err(SpectralError::TooShort(n));
    }
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(SpectralError::BadSampleRate(sample_rate));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let w = window.coefficients(n);
    let norm: f64 = w.iter().map(|c| c * c).sum();
    let mut buf: Vec<Complex<f64>> = samples
        .iter()
        .zip(&w)
        .map(|(s, c)| Complex::new((s - mean) * c, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let bins = n / 2 + 1;
    let resolution_hz = sample_rate / n as f64;
    Ok(PowerSpectrum {
        freqs: (0..bins).map(|k| k as f64 * resolution_hz).collect(),
        power: buf[..bins].iter().map(|x| x.norm_sqr() / norm).collect(),
        resolution_hz,
        n,
    })
}

pub fn periodogram(sig: &PpgSignal) -> PowerSpectrum {
    periodogram_samples(sig.samples(), sig.sample_rate(), Window::Rectangular)
        .expect("PpgSignal guarantees >= 2 samples and a positive rate")
}

/// Frequency of maximum power inside `[lo, hi]` Hz, times 60. Equal peaks
/// resolve to the lower frequency.
pub fn pulse_rate(spec: &PowerSpectrum, lo: f64, hi: f64) -> Result<f64> {
    spec.check_band(lo, hi)?;
    let mut best: Option<(f64, f64)> = None;
    for (&f, &p) in spec.freqs.iter().zip(&spec.power) {
        if f < lo || f > hi {
            continue;
        }
        if best.is_none_or(|(_, bp)| p > bp) {
            best = Some((f, p));
        }
    }
    best.map(|(f, _)| 60.0 * f)
        .ok_or(SpectralError::EmptyBand { lo, hi })
}

/// Trapezoidal area under the spectrum over `[lo, hi]` Hz, with the band
/// edges linearly interpolated between bins.
pub fn band_power(spec: &PowerSpectrum, lo: f64, hi: f64) -> Result<f64> {
    spec.check_band(lo, hi)?;
    let hi = hi.min(spec.nyquist());
    let mut area = 0.0;
    let mut prev = (lo, spec.power_at(lo));
    for (&f, &p) in spec.freqs.iter().zip(&spec.power) {
        if f <= lo {
            continue;
        }
        if f >= hi {
            break;
        }
        area += 0.5 * (prev.1 + p) * (f - prev.0);
        prev = (f, p);
    }
    let end = spec.power_at(hi);
    area += 0.5 * (prev.1 + end) * (hi - prev.0);
    Ok(area)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralOptions {
    pub window: Window,
    /// Pulse-rate search band in Hz.
    pub pr_band: (f64, f64),
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions {
            window: Window::Rectangular,
            pr_band: DEFAULT_PR_BAND,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLabels {
    pub subject_id: String,
    pub activity: Activity,
    pub pr_bpm: f64,
    pub lf: f64,
    pub hf: f64,
}

/// Labels from a spectrum: pulse rate and LF/HF band powers.
pub fn labels_from_spectrum(spec: &PowerSpectrum, options: &SpectralOptions) -> Result<(f64, f64, f64)> {
    let pr = pulse_rate(spec, options.pr_band.0, options.pr_band.1)?;
    let lf = band_power(spec, LF_BAND.0, LF_BAND.1)?;
    let hf = band_power(spec, HF_BAND.0, HF_BAND.1)?;
    Ok((pr, lf, hf))
}

pub fn ground_truth_with(sig: &PpgSignal, options: &SpectralOptions) -> Result<GroundTruthLabels> {
    let spec = periodogram_samples(sig.samples(), sig.sample_rate(), options.window)?;
    let (pr_bpm, lf, hf) = labels_from_spectrum(&spec, options)?;
    Ok(GroundTruthLabels {
        subject_id: sig.subject_id().to_string(),
        activity: sig.activity(),
        pr_bpm,
        lf,
        hf,
    })
}

pub fn ground_truth(sig: &PpgSignal) -> Result<GroundTruthLabels> {
    ground_truth_with(sig, &SpectralOptions::default())
}

/// `freq_hz,power` CSV dump of a spectrum.
pub fn write_spectrum_csv(path: &Path, spec: &PowerSpectrum) -> Result<()> {
    let io = |source| SpectralError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(fs::File::create(path).map_err(io)?);
    writeln!(out, "freq_hz,power").map_err(io)?;
    for (f, p) in spec.freqs.iter().zip(&spec.power) {
        writeln!(out, "{f},{p}").map_err(io)?;
    }
    out.flush().map_err(io)
}
