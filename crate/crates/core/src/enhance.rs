//! Resynthesis-based enhancement and corpus quality control.
//!
//! The pipeline has four stages: oracle analysis of clean speech, synthetic
//! interference, plain synthesis from text, and enhancement, where the voice
//! model's mel-cepstra are generated on durations aligned to the observed
//! signal and excited with an externally supplied pitch track.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{viterbi_align, AlignError, AlignmentResult};
use crate::analysis::{estimate_f0, mgc_analysis, AnalysisConfig, AnalysisError, F0Track, MelCepstrumSequence};
use crate::hmm::{observations, HmmError, VoiceModel};
use crate::labels::{parse_labels, text_to_phonemes, LabelError, Lexicon, PhoneLabel, UNITS_PER_SECOND};
use crate::pargen::{gv_enhance, mlpg, predict_durations, with_durations, GvTarget, PargenError};
use crate::signal::{mean_square, read_wav, SignalError, Waveform};
use crate::vocoder::{make_excitation, mlsa_filter, ExcitationConfig, VocoderError};

/// Natural log of 1000: an amplitude envelope `exp(-LN_1000 * t / rt60)`
/// falls by 60 dB after `rt60` seconds.
const LN_1000: f64 = 6.907_755_278_982_137;

/// The impulse response runs for this many multiples of RT60.
const RIR_LENGTH_RT60: f64 = 1.5;

#[derive(Debug, Error)]
pub enum EnhanceError {
    #[error("invalid interference: {0}")]
    InvalidInterference(String),
    #[error("competing speaker interference needs a second waveform")]
    MissingCompetingSignal,
    #[error("competing waveform is empty")]
    LengthMismatch,
    #[error("{0} signal has no energy")]
    SilentSignal(&'static str),
    #[error("sample rates differ: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),
    #[error("side information has {side} frames, observed signal {observed}")]
    FrameCountMismatch { side: usize, observed: usize },
    #[error("model frame shift {model} differs from side information shift {side}")]
    FrameShiftMismatch { model: usize, side: usize },
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Pargen(#[from] PargenError),
    #[error(transparent)]
    Vocoder(#[from] VocoderError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Model(#[from] HmmError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterferenceKind {
    AdditiveNoise,
    Reverberation,
    CompetingSpeaker,
}

impl std::str::FromStr for InterferenceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "additive_noise" | "noise" => Ok(Self::AdditiveNoise),
            "reverberation" | "reverb" => Ok(Self::Reverberation),
            "competing_speaker" | "competing" => Ok(Self::CompetingSpeaker),
            other => Err(format!("unknown interference kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterferenceSpec {
    pub kind: InterferenceKind,
    /// Signal-to-interference ratio for noise and competing speech.
    pub snr_db: f64,
    /// Reverberation time for a 60 dB decay.
    pub rt60_seconds: f64,
    pub seed: u64,
}

impl InterferenceSpec {
    pub fn noise(snr_db: f64, seed: u64) -> Self {
        Self { kind: InterferenceKind::AdditiveNoise, snr_db, rt60_seconds: 0.3, seed }
    }

    pub fn validate(&self) -> Result<(), EnhanceError> {
        match self.kind {
            InterferenceKind::Reverberation if !(self.rt60_seconds > 0.0 && self.rt60_seconds.is_finite()) => {
                Err(EnhanceError::InvalidInterference(format!("rt60 {} must be positive", self.rt60_seconds)))
            }
            InterferenceKind::AdditiveNoise | InterferenceKind::CompetingSpeaker if !self.snr_db.is_finite() => {
                Err(EnhanceError::InvalidInterference(format!("snr {} must be finite", self.snr_db)))
            }
            _ => Ok(()),
        }
    }
}

/// `10 log10(P_clean / P_(mixed - clean))`.
pub fn measure_snr(clean: &Waveform, mixed: &Waveform) -> f64 {
    let diff: Vec<f64> = clean.samples.iter().zip(&mixed.samples).map(|(c, m)| m - c).collect();
    10.0 * (mean_square(&clean.samples) / mean_square(&diff)).log10()
}

/// Mixes `interferer` into `clean` so the power ratio equals `snr_db`.
fn mix_at_snr(clean: &Waveform, interferer: &[f64], snr_db: f64) -> Result<Waveform, EnhanceError> {
    let p_clean = mean_square(&clean.samples);
    if p_clean == 0.0 {
        return Err(EnhanceError::SilentSignal("clean"));
    }
    let p_int = mean_square(interferer);
    if p_int == 0.0 {
        return Err(EnhanceError::SilentSignal("interfering"));
    }
    let gain = (p_clean / (p_int * 10f64.powf(snr_db / 10.0))).sqrt();
    let samples = clean.samples.iter().zip(interferer).map(|(c, n)| c + gain * n).collect();
    Ok(Waveform { samples, sample_rate: clean.sample_rate })
}

/// Seeded noise under an exponential envelope with the given RT60, scaled to
/// unit energy.
pub fn rir(rt60_seconds: f64, sample_rate: u32, seed: u64) -> Vec<f64> {
    let sr = f64::from(sample_rate);
    let len = ((RIR_LENGTH_RT60 * rt60_seconds * sr).ceil() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h: Vec<f64> = (0..len)
        .map(|n| {
            let e: f64 = StandardNormal.sample(&mut rng);
            e * (-LN_1000 * n as f64 / (rt60_seconds * sr)).exp()
        })
        .collect();
    let energy = h.iter().map(|x| x * x).sum::<f64>().sqrt();
    h.iter_mut().for_each(|x| *x /= energy);
    h
}

/// Linear convolution truncated to `x.len()` samples.
fn convolve_truncated(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; x.len()];
    }
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let spectrum = |v: &[f64]| {
        let mut buf: Vec<Complex<f64>> = v.iter().map(|&s| Complex::new(s, 0.0)).collect();
        buf.resize(n, Complex::new(0.0, 0.0));
        fwd.process(&mut buf);
        buf
    };
    let mut y: Vec<Complex<f64>> = spectrum(x).iter().zip(spectrum(h)).map(|(a, b)| a * b).collect();
    inv.process(&mut y);
    y[..x.len()].iter().map(|c| c.re / n as f64).collect()
}

/// Degrades a clean waveform. Interference is added to the signal itself.
///
/// Competing speech shorter than `clean` is zero-padded and longer speech is
/// truncated. Reverberant output keeps the peak level of the input.
pub fn add_interference(
    clean: &Waveform,
    spec: &InterferenceSpec,
    competing: Option<&Waveform>,
) -> Result<Waveform, EnhanceError> {
    spec.validate()?;
    match spec.kind {
        InterferenceKind::AdditiveNoise => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let noise: Vec<f64> = (0..clean.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
            mix_at_snr(clean, &noise, spec.snr_db)
        }
        InterferenceKind::CompetingSpeaker => {
            let other = competing.ok_or(EnhanceError::MissingCompetingSignal)?;
            if other.is_empty() {
                return Err(EnhanceError::LengthMismatch);
            }
            if other.sample_rate != clean.sample_rate {
                return Err(EnhanceError::SampleRateMismatch(clean.sample_rate, other.sample_rate));
            }
            let mut int = other.samples.clone();
            int.resize(clean.len(), 0.0);
            mix_at_snr(clean, &int, spec.snr_db)
        }
        InterferenceKind::Reverberation => {
            let h = rir(spec.rt60_seconds, clean.sample_rate, spec.seed);
            let mut y = convolve_truncated(&clean.samples, &h);
            let peak_out = y.iter().fold(0.0f64, |m, s| m.max(s.abs()));
            if peak_out > 0.0 {
                let g = clean.peak() / peak_out;
                y.iter_mut().for_each(|s| *s *= g);
            }
            Ok(Waveform { samples: y, sample_rate: clean.sample_rate })
        }
    }
}

/// Pitch and mel-cepstrum of clean speech.
pub fn oracle_components(clean: &Waveform, cfg: &AnalysisConfig) -> Result<(F0Track, MelCepstrumSequence), EnhanceError> {
    Ok((estimate_f0(clean, cfg)?, mgc_analysis(clean, cfg)?))
}

/// Analysis settings matching a model's feature layout.
pub fn model_analysis_config(model: &VoiceModel, base: &AnalysisConfig) -> AnalysisConfig {
    let mut cfg = *base;
    cfg.order = model.meta.order;
    cfg.alpha = model.meta.alpha;
    cfg.frame.frame_shift = model.meta.frame_shift;
    cfg
}

/// A rendered utterance with the parameters it was rendered from.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub waveform: Waveform,
    pub mel_cepstrum: MelCepstrumSequence,
    pub f0: F0Track,
    pub state_durations: Vec<usize>,
    /// Log-likelihood of the forced alignment, when one was run.
    pub alignment_log_likelihood: Option<f64>,
}

fn apply_gv(spectral: Vec<Vec<f64>>, gv: Option<&GvTarget>) -> Vec<Vec<f64>> {
    match gv {
        Some(g) => gv_enhance(&spectral, g),
        None => spectral,
    }
}

/// Text synthesis with the model's own durations and pitch.
pub fn synthesize_from_labels(
    model: &VoiceModel,
    labels: &[PhoneLabel],
    gv: Option<&GvTarget>,
    ex_cfg: &ExcitationConfig,
) -> Result<Synthesis, EnhanceError> {
    let contexts = model.contexts(labels)?;
    let seq = predict_durations(model, &contexts, 1.0)?;
    let traj = mlpg(model, &seq)?;
    let mut mc = traj.mel_cepstrum(model);
    mc.frames = apply_gv(traj.spectral, gv);
    let excitation = make_excitation(&traj.f0, model.meta.sample_rate, ex_cfg);
    let waveform = mlsa_filter(&mc, &excitation)?;
    Ok(Synthesis { waveform, mel_cepstrum: mc, f0: traj.f0, state_durations: seq.durations, alignment_log_likelihood: None })
}

pub fn synthesize_from_text(
    model: &VoiceModel,
    text: &str,
    lexicon: &Lexicon,
    gv: Option<&GvTarget>,
    ex_cfg: &ExcitationConfig,
) -> Result<Synthesis, EnhanceError> {
    let labels = text_to_phonemes(text, lexicon)?;
    synthesize_from_labels(model, &labels, gv, ex_cfg)
}

/// Mel-cepstra generated on durations aligned to `observed`, excited with
/// `side_f0`. The output has exactly `side_f0.len() * frame_shift` samples.
pub fn enhance_with_side_info(
    model: &VoiceModel,
    labels: &[PhoneLabel],
    observed: &Waveform,
    side_f0: &F0Track,
    analysis: &AnalysisConfig,
    gv: Option<&GvTarget>,
    ex_cfg: &ExcitationConfig,
) -> Result<Synthesis, EnhanceError> {
    if side_f0.frame_shift != model.meta.frame_shift {
        return Err(EnhanceError::FrameShiftMismatch { model: model.meta.frame_shift, side: side_f0.frame_shift });
    }
    let cfg = model_analysis_config(model, analysis);
    let mc_obs = mgc_analysis(observed, &cfg)?;
    if mc_obs.len().abs_diff(side_f0.len()) > 1 {
        return Err(EnhanceError::FrameCountMismatch { side: side_f0.len(), observed: mc_obs.len() });
    }
    let f0_obs = estimate_f0(observed, &cfg)?;
    let obs = observations(&mc_obs, &f0_obs)?;
    let alignment: AlignmentResult = viterbi_align(model, labels, &obs)?;

    let contexts = model.contexts(labels)?;
    let seq = with_durations(model, &contexts, alignment.state_durations())?;
    let traj = mlpg(model, &seq)?;
    let template = traj.mel_cepstrum(model);
    let mut frames = apply_gv(traj.spectral, gv);
    let last = frames.last().cloned().expect("alignment covers at least one frame");
    frames.resize(side_f0.len(), last);

    let mel_cepstrum = MelCepstrumSequence { frames, ..template };
    let excitation = make_excitation(side_f0, observed.sample_rate, ex_cfg);
    let waveform = mlsa_filter(&mel_cepstrum, &excitation)?;
    Ok(Synthesis {
        waveform,
        mel_cepstrum,
        f0: side_f0.clone(),
        state_durations: seq.durations,
        alignment_log_likelihood: Some(alignment.log_likelihood),
    })
}

/// Thresholds of [`validate_corpus`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QcConfig {
    /// Allowed relative deviation of label duration from audio duration.
    pub duration_tolerance: f64,
    /// Largest tolerated fraction of samples at full scale.
    pub clipping_fraction: f64,
    pub inaudible_dbfs: f64,
    pub min_snr_db: f64,
    /// Frame length of the energy-based SNR estimate in seconds.
    pub snr_frame_seconds: f64,
    /// Fraction of quietest and loudest frames used as noise and signal.
    pub snr_percentile: f64,
}

impl Default for QcConfig {
    fn default() -> Self {
        Self {
            duration_tolerance: 0.2,
            clipping_fraction: 0.001,
            inaudible_dbfs: -45.0,
            min_snr_db: 15.0,
            snr_frame_seconds: 0.02,
            snr_percentile: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "finding", rename_all = "snake_case")]
pub enum QcFinding {
    MissingAudio,
    MissingLabel,
    EmptyLabel,
    UnreadableAudio { reason: String },
    UnreadableLabel { reason: String },
    DurationMismatch { audio_seconds: f64, label_seconds: f64 },
    Clipping { fraction: f64 },
    Inaudible { rms_dbfs: f64 },
    LowSnr { snr_db: f64 },
}

impl QcFinding {
    pub fn name(&self) -> &'static str {
        match self {
            QcFinding::MissingAudio => "missing_audio",
            QcFinding::MissingLabel => "missing_label",
            QcFinding::EmptyLabel => "empty_label",
            QcFinding::UnreadableAudio { .. } => "unreadable_audio",
            QcFinding::UnreadableLabel { .. } => "unreadable_label",
            QcFinding::DurationMismatch { .. } => "duration_mismatch",
            QcFinding::Clipping { .. } => "clipping",
            QcFinding::Inaudible { .. } => "inaudible",
            QcFinding::LowSnr { .. } => "low_snr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcEntry {
    pub stem: String,
    pub audio: Option<PathBuf>,
    pub label: Option<PathBuf>,
    pub findings: Vec<QcFinding>,
}

/// One entry per file stem, sorted by stem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcReport {
    pub entries: Vec<QcEntry>,
}

impl QcReport {
    pub fn flagged(&self) -> impl Iterator<Item = &QcEntry> {
        self.entries.iter().filter(|e| !e.findings.is_empty())
    }

    pub fn is_clean(&self) -> bool {
        self.flagged().next().is_none()
    }
}

fn files_with_extension(dir: &Path, ext: &str) -> Result<BTreeMap<String, PathBuf>, EnhanceError> {
    let io_err = |source| EnhanceError::Io { path: dir.to_path_buf(), source };
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(io_err)? {
        let path = entry.map_err(io_err)?.path();
        if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext)) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path);
            }
        }
    }
    Ok(out)
}

/// Ratio of the loudest to the quietest frames, with the noise power
/// subtracted from the loud frames.
pub fn estimate_snr(wf: &Waveform, frame_seconds: f64, percentile: f64) -> f64 {
    let len = ((frame_seconds * f64::from(wf.sample_rate)) as usize).max(1);
    let mut energies: Vec<f64> = wf.samples.chunks_exact(len).map(mean_square).collect();
    if energies.is_empty() {
        return f64::INFINITY;
    }
    energies.sort_by(f64::total_cmp);
    let k = ((energies.len() as f64 * percentile).ceil() as usize).clamp(1, energies.len());
    let noise = energies[..k].iter().sum::<f64>() / k as f64;
    let loud = energies[energies.len() - k..].iter().sum::<f64>() / k as f64;
    if noise == 0.0 {
        return f64::INFINITY;
    }
    10.0 * ((loud - noise).max(0.0) / noise).log10()
}

fn audio_findings(wf: &Waveform, cfg: &QcConfig) -> Vec<QcFinding> {
    let mut out = Vec::new();
    if wf.is_empty() {
        out.push(QcFinding::Inaudible { rms_dbfs: f64::NEG_INFINITY });
        return out;
    }
    // full scale of 16-bit PCM read back as [-1, 32767/32768]
    let top = 32767.0 / 32768.0;
    let clipped = wf.samples.iter().filter(|&&s| s >= top || s <= -1.0).count();
    let fraction = clipped as f64 / wf.len() as f64;
    if fraction > cfg.clipping_fraction {
        out.push(QcFinding::Clipping { fraction });
    }
    let rms_dbfs = 20.0 * wf.rms().log10();
    if rms_dbfs < cfg.inaudible_dbfs {
        out.push(QcFinding::Inaudible { rms_dbfs });
    }
    let snr_db = estimate_snr(wf, cfg.snr_frame_seconds, cfg.snr_percentile);
    if snr_db < cfg.min_snr_db {
        out.push(QcFinding::LowSnr { snr_db });
    }
    out
}

fn check_pair(audio: Option<&PathBuf>, label: Option<&PathBuf>, cfg: &QcConfig) -> Vec<QcFinding> {
    let mut findings = Vec::new();
    let wf = match audio {
        None => {
            findings.push(QcFinding::MissingAudio);
            None
        }
        Some(p) => match read_wav(p) {
            Ok(wf) => Some(wf),
            Err(e) => {
                findings.push(QcFinding::UnreadableAudio { reason: e.to_string() });
                None
            }
        },
    };
    let labels = match label {
        None => {
            findings.push(QcFinding::MissingLabel);
            None
        }
        Some(p) => match std::fs::read_to_string(p) {
            Err(e) => {
                findings.push(QcFinding::UnreadableLabel { reason: e.to_string() });
                None
            }
            Ok(text) => match parse_labels(&text) {
                Ok(l) => Some(l),
                Err(LabelError::EmptyLabelFile) => {
                    findings.push(QcFinding::EmptyLabel);
                    None
                }
                Err(e) => {
                    findings.push(QcFinding::UnreadableLabel { reason: e.to_string() });
                    None
                }
            },
        },
    };
    if let Some(wf) = &wf {
        if let Some(end) = labels.as_ref().and_then(|l| l.last()).and_then(|l| l.end) {
            let audio_seconds = wf.duration_seconds();
            let label_seconds = end as f64 / UNITS_PER_SECOND as f64;
            if audio_seconds > 0.0 && (label_seconds - audio_seconds).abs() > cfg.duration_tolerance * audio_seconds {
                findings.push(QcFinding::DurationMismatch { audio_seconds, label_seconds });
            }
        }
        findings.extend(audio_findings(wf, cfg));
    }
    findings
}

/// Pairs `*.wav` in `audio_dir` with `*.lab` in `label_dir` by file stem and
/// reports the flaws of each pair.
pub fn validate_corpus(
    audio_dir: impl AsRef<Path>,
    label_dir: impl AsRef<Path>,
    cfg: &QcConfig,
) -> Result<QcReport, EnhanceError> {
    let audio = files_with_extension(audio_dir.as_ref(), "wav")?;
    let labels = files_with_extension(label_dir.as_ref(), "lab")?;
    let mut stems: Vec<&String> = audio.keys().chain(labels.keys()).collect();
    stems.sort();
    stems.dedup();
    let entries = stems
        .into_iter()
        .map(|stem| {
            let (a, l) = (audio.get(stem), labels.get(stem));
            QcEntry { stem: stem.clone(), audio: a.cloned(), label: l.cloned(), findings: check_pair(a, l, cfg) }
        })
        .collect();
    Ok(QcReport { entries })
}
