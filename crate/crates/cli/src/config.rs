use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use rppg::eval::Target;
use rppg::nn::NetworkConfig;
use rppg::pipeline::FeatureOptions;
use rppg::spectral::SpectralOptions;
use rppg::synth::SynthProfile;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Everything a run needs. Loaded from JSON, then overridden by flags; the
/// resolved value is echoed into reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub spectral: SpectralOptions,
    pub features: FeatureOptions,
    pub synth: SynthProfile,
    pub paths: Paths,
    pub target: Target,
    pub plots: bool,
    pub jobs: usize,
    /// Abort `eval` when its projected runtime exceeds this many seconds.
    pub time_limit_s: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            network: NetworkConfig::default(),
            spectral: SpectralOptions::default(),
            features: FeatureOptions::default(),
            synth: SynthProfile::default(),
            paths: Paths::default(),
            target: Target::Pr,
            plots: false,
            jobs: 1,
            time_limit_s: None,
        }
    }
}

/// A loaded config plus whether it pinned the iteration count, which
/// otherwise follows the target (170 for PR, 200 for LF/HF).
pub struct Loaded {
    pub config: RunConfig,
    pub iterations_set: bool,
}

pub fn load(path: Option<&Path>) -> anyhow::Result<Loaded> {
    let Some(path) = path else {
        return Ok(Loaded {
            config: RunConfig::default(),
            iterations_set: false,
        });
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let raw: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let iterations_set = raw.pointer("/network/iterations").is_some();
    let config: RunConfig =
        serde_json::from_value(raw).with_context(|| format!("invalid config {}", path.display()))?;
    Ok(Loaded {
        config,
        iterations_set,
    })
}
