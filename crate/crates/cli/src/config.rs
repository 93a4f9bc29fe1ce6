//! Flat `key = value` run configuration.

use std::path::Path;

use hmmse::analysis::AnalysisConfig;
use hmmse::enhance::{InterferenceKind, InterferenceSpec, QcConfig};
use hmmse::hmm::{MllrConfig, TrainRecipe};
use hmmse::labels::ContextWidth;
use hmmse::pargen::GvTarget;
use hmmse::signal::WindowKind;
use hmmse::vocoder::{ExcitationConfig, PulseGain};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{key}: {reason}")]
    Invalid { key: String, reason: String },
    #[error("line {line}: expected 'key = value'")]
    Syntax { line: usize },
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub analysis: AnalysisConfig,
    pub excitation: ExcitationConfig,
    pub gv: bool,
    pub gv_weight: f64,
    pub gv_iterations: usize,
    pub gv_step: f64,
    pub interference: InterferenceSpec,
    pub context: ContextWidth,
    pub variance_floor_ratio: f64,
    pub recipe: TrainRecipe,
    pub mllr: MllrConfig,
    pub qc: QcConfig,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            analysis: AnalysisConfig::default(),
            excitation: ExcitationConfig::default(),
            gv: true,
            gv_weight: 0.7,
            gv_iterations: 20,
            gv_step: 0.1,
            interference: InterferenceSpec::noise(10.0, 0),
            context: ContextWidth::Quinphone,
            variance_floor_ratio: 1e-4,
            recipe: TrainRecipe::default(),
            mllr: MllrConfig::default(),
            qc: QcConfig::default(),
            workers: 0,
        }
    }
}

/// Every accepted key with a one-line description, in documentation order.
pub const KEYS: &[(&str, &str)] = &[
    ("frame_length", "analysis window in samples"),
    ("frame_shift", "hop in samples"),
    ("window", "hamming | hann | rectangular"),
    ("fft_size", "FFT length, a power of two"),
    ("order", "cepstral order M"),
    ("alpha", "all-pass warping constant in (-1, 1)"),
    ("f0_min", "lowest pitch in Hz"),
    ("f0_max", "highest pitch in Hz"),
    ("vuv_threshold", "voicing threshold on the normalized autocorrelation"),
    ("median_len", "odd median filter length for the pitch contour"),
    ("seed", "seed of every stochastic step"),
    ("noise_gain", "unvoiced excitation gain"),
    ("pulse_gain", "unit_energy_per_period | unit_amplitude"),
    ("gv", "apply the global-variance correction (true | false)"),
    ("gv_weight", "global-variance weight in [0, 1]"),
    ("gv_iterations", "global-variance iterations"),
    ("gv_step", "global-variance step size"),
    ("interference", "additive_noise | reverberation | competing_speaker"),
    ("snr_db", "signal-to-interference ratio in dB"),
    ("rt60", "reverberation time in seconds"),
    ("context", "triphone | quinphone"),
    ("variance_floor", "variance floor relative to the global variance"),
    ("monophone_iterations", "re-estimation rounds before context cloning"),
    ("context_iterations", "re-estimation rounds of context models"),
    ("min_occupancy", "frames a context model needs to be kept"),
    ("mllr_iterations", "adaptation rounds"),
    ("mllr_ridge", "pull of the adaptation transform toward identity"),
    ("qc_duration_tolerance", "allowed relative label/audio length difference"),
    ("qc_clipping_fraction", "tolerated fraction of full-scale samples"),
    ("qc_inaudible_dbfs", "RMS level below which audio is inaudible"),
    ("qc_min_snr_db", "lowest acceptable estimated SNR"),
    ("workers", "worker threads, 0 for all cores"),
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| invalid(key, format!("cannot parse '{value}': {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(invalid(key, format!("expected true or false, got '{value}'"))),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let a = &mut self.analysis;
        match key {
            "frame_length" => a.frame.frame_length = parse(key, value)?,
            "frame_shift" => a.frame.frame_shift = parse(key, value)?,
            "window" => a.frame.window = value.parse::<WindowKind>().map_err(|e| invalid(key, e.to_string()))?,
            "fft_size" => a.fft_size = parse(key, value)?,
            "order" => a.order = parse(key, value)?,
            "alpha" => a.alpha = parse(key, value)?,
            "f0_min" => a.f0_min = parse(key, value)?,
            "f0_max" => a.f0_max = parse(key, value)?,
            "vuv_threshold" => a.vuv_threshold = parse(key, value)?,
            "median_len" => a.median_len = parse(key, value)?,
            "seed" => {
                let seed = parse(key, value)?;
                self.excitation.seed = seed;
                self.interference.seed = seed;
            }
            "noise_gain" => self.excitation.noise_gain = parse(key, value)?,
            "pulse_gain" => self.excitation.pulse_gain = value.parse::<PulseGain>().map_err(|e| invalid(key, e))?,
            "gv" => self.gv = parse_bool(key, value)?,
            "gv_weight" => self.gv_weight = parse(key, value)?,
            "gv_iterations" => self.gv_iterations = parse(key, value)?,
            "gv_step" => self.gv_step = parse(key, value)?,
            "interference" => {
                self.interference.kind = value.parse::<InterferenceKind>().map_err(|e| invalid(key, e))?
            }
            "snr_db" => self.interference.snr_db = parse(key, value)?,
            "rt60" => self.interference.rt60_seconds = parse(key, value)?,
            "context" => self.context = value.parse::<ContextWidth>().map_err(|e| invalid(key, e.to_string()))?,
            "variance_floor" => self.variance_floor_ratio = parse(key, value)?,
            "monophone_iterations" => self.recipe.monophone_iterations = parse(key, value)?,
            "context_iterations" => self.recipe.context_iterations = parse(key, value)?,
            "min_occupancy" => self.recipe.min_occupancy = parse(key, value)?,
            "mllr_iterations" => self.mllr.iterations = parse(key, value)?,
            "mllr_ridge" => self.mllr.ridge = parse(key, value)?,
            "qc_duration_tolerance" => self.qc.duration_tolerance = parse(key, value)?,
            "qc_clipping_fraction" => self.qc.clipping_fraction = parse(key, value)?,
            "qc_inaudible_dbfs" => self.qc.inaudible_dbfs = parse(key, value)?,
            "qc_min_snr_db" => self.qc.min_snr_db = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            _ => return Err(invalid(key, "unknown key")),
        }
        Ok(())
    }

    /// Checks that do not depend on the sample rate of the audio.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let a = &self.analysis;
        a.frame.validate().map_err(|r| invalid("frame_shift", r))?;
        if !(a.alpha > -1.0 && a.alpha < 1.0) {
            return Err(invalid("alpha", format!("{} outside (-1, 1)", a.alpha)));
        }
        if !a.fft_size.is_power_of_two() || a.fft_size < a.frame.frame_length {
            return Err(invalid("fft_size", "must be a power of two not below frame_length"));
        }
        if 2 * a.order + 2 > a.fft_size / 2 {
            return Err(invalid("order", "too high for fft_size"));
        }
        if !(a.f0_min > 0.0 && a.f0_min < a.f0_max) {
            return Err(invalid("f0_min", "need 0 < f0_min < f0_max"));
        }
        if !(a.vuv_threshold > 0.0 && a.vuv_threshold < 1.0) {
            return Err(invalid("vuv_threshold", "outside (0, 1)"));
        }
        if a.median_len % 2 == 0 {
            return Err(invalid("median_len", "must be odd"));
        }
        if !(self.excitation.noise_gain >= 0.0 && self.excitation.noise_gain.is_finite()) {
            return Err(invalid("noise_gain", "must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.gv_weight) {
            return Err(invalid("gv_weight", "outside [0, 1]"));
        }
        if !(self.gv_step > 0.0 && self.gv_step.is_finite()) {
            return Err(invalid("gv_step", "must be positive"));
        }
        if !self.interference.snr_db.is_finite() {
            return Err(invalid("snr_db", "must be finite"));
        }
        if !(self.interference.rt60_seconds > 0.0 && self.interference.rt60_seconds.is_finite()) {
            return Err(invalid("rt60", "must be positive"));
        }
        if !(self.variance_floor_ratio > 0.0 && self.variance_floor_ratio < 1.0) {
            return Err(invalid("variance_floor", "outside (0, 1)"));
        }
        if !(self.recipe.min_occupancy >= 0.0) {
            return Err(invalid("min_occupancy", "must be non-negative"));
        }
        if !(self.mllr.ridge >= 0.0 && self.mllr.ridge.is_finite()) {
            return Err(invalid("mllr_ridge", "must be non-negative"));
        }
        if !(self.qc.duration_tolerance > 0.0) {
            return Err(invalid("qc_duration_tolerance", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.qc.clipping_fraction) {
            return Err(invalid("qc_clipping_fraction", "outside [0, 1)"));
        }
        Ok(())
    }

    pub fn gv_target(&self, target: Vec<f64>) -> GvTarget {
        GvTarget { target, weight: self.gv_weight, iterations: self.gv_iterations, step: self.gv_step }
    }
}

/// `(line, key, value)` triples of a config document.
pub fn parse_document(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: idx + 1 })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(ConfigError::Syntax { line: idx + 1 });
        }
        out.push((idx + 1, key.to_string(), value.to_string()));
    }
    Ok(out)
}

/// Defaults, then the file, then `overrides` in order.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    if let Some(p) = path {
        let text = std::fs::read_to_string(p)
            .map_err(|e| ConfigError::Io { path: p.display().to_string(), reason: e.to_string() })?;
        for (_, key, value) in parse_document(&text)? {
            cfg.set(&key, &value)?;
        }
    }
    for (key, value) in overrides {
        cfg.set(key, value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Splits a `key=value` command-line override.
pub fn parse_override(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got '{s}'"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}
