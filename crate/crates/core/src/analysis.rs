//! Extraction of the two source-filter parameter streams: the log-F0 track
//! and the mel-cepstrum sequence that drives the MLSA filter.
//!
//! Analysis frames are centred on the vocoder's output frames: the signal is
//! zero-padded by `(frame_length - frame_shift) / 2` on both sides before
//! framing, so frame `t` describes samples `[t * shift, (t + 1) * shift)` of
//! the resynthesized waveform.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{butterworth_lowpass_sections, frame_samples, FrameConfig, WindowKind, Waveform};

/// Ridge added to the Gram matrix of the warped-cosine least-squares fit.
pub const CEPSTRUM_RIDGE: f64 = 1e-6;

/// Power floor (relative to unit-variance white noise) before taking logs.
const POWER_FLOOR: f64 = 1e-10;

/// Candidates within this fraction of the best correlation win if they have a
/// shorter lag. Suppresses sub-harmonic (octave-down) picks.
const SUBHARMONIC_RATIO: f64 = 0.85;

/// The correlation search runs on a low-passed copy of the signal.
const PITCH_LOWPASS_HZ: f64 = 1000.0;

/// A voiced frame must also reach this overlap-normalized correlation at the
/// chosen period; rejects low-passed noise that passes the voicing threshold.
const PERIODICITY_THRESHOLD: f64 = 0.75;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("invalid analysis configuration: {0}")]
    Config(String),
    #[error("signal too short for a single analysis frame")]
    EmptySignal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub frame: FrameConfig,
    pub fft_size: usize,
    /// Cepstral order M; frames carry M + 1 coefficients.
    pub order: usize,
    pub alpha: f64,
    pub f0_min: f64,
    pub f0_max: f64,
    pub vuv_threshold: f64,
    pub median_len: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            frame: FrameConfig::default(),
            fft_size: 512,
            order: 24,
            alpha: 0.42,
            f0_min: 60.0,
            f0_max: 400.0,
            vuv_threshold: 0.3,
            median_len: 5,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<(), AnalysisError> {
        let sr = f64::from(sample_rate);
        self.frame.validate().map_err(AnalysisError::Config)?;
        if !(self.alpha > -1.0 && self.alpha < 1.0) {
            return Err(AnalysisError::Config(format!("alpha {} outside (-1, 1)", self.alpha)));
        }
        if !(self.f0_min > 0.0 && self.f0_min < self.f0_max && self.f0_max < sr / 2.0) {
            return Err(AnalysisError::Config(format!(
                "need 0 < f0_min ({}) < f0_max ({}) < sr/2 ({})",
                self.f0_min,
                self.f0_max,
                sr / 2.0
            )));
        }
        if !(self.vuv_threshold > 0.0 && self.vuv_threshold < 1.0) {
            return Err(AnalysisError::Config(format!(
                "vuv_threshold {} outside (0, 1)",
                self.vuv_threshold
            )));
        }
        if (sr / self.f0_min).ceil() as usize + 2 >= self.frame.frame_length {
            return Err(AnalysisError::Config(format!(
                "frame_length {} too short for f0_min {} Hz",
                self.frame.frame_length, self.f0_min
            )));
        }
        if !self.fft_size.is_power_of_two() || self.fft_size < self.frame.frame_length {
            return Err(AnalysisError::Config(format!(
                "fft_size {} must be a power of two >= frame_length",
                self.fft_size
            )));
        }
        if 2 * self.order + 2 > self.fft_size / 2 {
            return Err(AnalysisError::Config(format!("order {} too high for fft_size", self.order)));
        }
        if self.median_len == 0 || self.median_len % 2 == 0 {
            return Err(AnalysisError::Config("median_len must be odd".into()));
        }
        Ok(())
    }

    /// Frames produced for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        self.frame.frame_count(len + 2 * self.pad())
    }

    fn pad(&self) -> usize {
        (self.frame.frame_length - self.frame.frame_shift) / 2
    }

    fn padded(&self, samples: &[f64]) -> Vec<f64> {
        let pad = self.pad();
        let mut out = vec![0.0; samples.len() + 2 * pad];
        out[pad..pad + samples.len()].copy_from_slice(samples);
        out
    }
}

/// Per-frame pitch; unvoiced frames carry no value at all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F0Track {
    pub frame_shift: usize,
    /// Natural log of F0 in Hz for voiced frames.
    pub frames: Vec<Option<f64>>,
}

impl F0Track {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn voiced_count(&self) -> usize {
        self.frames.iter().filter(|f| f.is_some()).count()
    }

    pub fn hz(&self, t: usize) -> Option<f64> {
        self.frames[t].map(f64::exp)
    }

    pub fn constant(f0_hz: f64, frames: usize, frame_shift: usize) -> Self {
        Self { frame_shift, frames: vec![Some(f0_hz.ln()); frames] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelCepstrumSequence {
    pub order: usize,
    pub alpha: f64,
    pub frame_shift: usize,
    pub frames: Vec<Vec<f64>>,
}

impl MelCepstrumSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Phase response of the first-order all-pass: the mel-warped frequency.
pub fn warp_frequency(omega: f64, alpha: f64) -> f64 {
    omega + 2.0 * (alpha * omega.sin() / (1.0 - alpha * omega.cos())).atan()
}

pub fn estimate_f0(wf: &Waveform, cfg: &AnalysisConfig) -> Result<F0Track, AnalysisError> {
    cfg.validate(wf.sample_rate)?;
    let sr = f64::from(wf.sample_rate);
    let raw = FrameConfig { window: WindowKind::Rectangular, ..cfg.frame };
    let smoothed = butterworth_lowpass_sections(PITCH_LOWPASS_HZ.min(0.45 * sr), sr)
        .iter()
        .fold(cfg.padded(&wf.samples), |x, sec| sec.run(&x));
    let frames = frame_samples(&smoothed, &raw);
    let mut tracker = PitchTracker::new(cfg, sr);
    let raw_track: Vec<Option<f64>> = frames.iter().map(|f| tracker.frame_lag(f)).map(|lag| {
        lag.map(|l| (sr / l).clamp(cfg.f0_min, cfg.f0_max).ln())
    }).collect();
    Ok(F0Track { frame_shift: cfg.frame.frame_shift, frames: median_smooth(&raw_track, cfg.median_len) })
}

struct PitchTracker {
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    buf: Vec<Complex<f64>>,
    min_lag: usize,
    max_lag: usize,
    threshold: f64,
}

impl PitchTracker {
    fn new(cfg: &AnalysisConfig, sr: f64) -> Self {
        let size = (2 * cfg.frame.frame_length).next_power_of_two();
        let mut planner = FftPlanner::new();
        Self {
            fft: planner.plan_fft_forward(size),
            ifft: planner.plan_fft_inverse(size),
            buf: vec![Complex::new(0.0, 0.0); size],
            min_lag: ((sr / cfg.f0_max).floor() as usize).max(2),
            max_lag: (sr / cfg.f0_min).ceil() as usize,
            threshold: cfg.vuv_threshold,
        }
    }

    /// Fractional pitch period of a frame in samples, or `None` if unvoiced.
    fn frame_lag(&mut self, frame: &[f64]) -> Option<f64> {
        let n = frame.len();
        let mean = frame.iter().sum::<f64>() / n as f64;
        let x: Vec<f64> = frame.iter().map(|s| s - mean).collect();
        self.buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (b, s) in self.buf.iter_mut().zip(&x) {
            b.re = *s;
        }
        self.fft.process(&mut self.buf);
        self.buf.iter_mut().for_each(|c| *c = Complex::new(c.norm_sqr(), 0.0));
        self.ifft.process(&mut self.buf);

        let lo = self.min_lag - 1;
        let hi = (self.max_lag + 1).min(n - 1);
        // the inverse transform is unnormalized
        let scale = self.buf.len() as f64;
        let energy = self.buf[0].re / scale;
        if !(energy > 0.0) {
            return None;
        }
        // voicing: peak of r(lag) / r(0)
        let voicing = (lo + 1..hi)
            .filter(|&l| self.buf[l].re >= self.buf[l - 1].re && self.buf[l].re >= self.buf[l + 1].re)
            .map(|l| self.buf[l].re / scale / energy)
            .fold(f64::NEG_INFINITY, f64::max);
        if !(voicing > self.threshold) {
            return None;
        }

        // period: correlation normalized by the energy of both overlapping
        // segments, so long lags are not penalized by the shrinking overlap
        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(0.0);
        for s in &x {
            prefix.push(prefix.last().copied().unwrap_or(0.0) + s * s);
        }
        let r: Vec<f64> = (lo..=hi)
            .map(|lag| {
                let norm = (prefix[n - lag] * (energy - prefix[lag])).max(0.0).sqrt();
                if norm > 0.0 { self.buf[lag].re / scale / norm } else { 0.0 }
            })
            .collect();
        let peaks: Vec<usize> = (1..r.len() - 1)
            .filter(|&i| r[i] > 0.0 && r[i] >= r[i - 1] && r[i] >= r[i + 1])
            .collect();
        let best = peaks.iter().map(|&i| r[i]).fold(f64::NEG_INFINITY, f64::max);
        let i = *peaks.iter().find(|&&i| r[i] >= SUBHARMONIC_RATIO * best)?;
        if r[i] < PERIODICITY_THRESHOLD {
            return None;
        }
        let (a, b, c) = (r[i - 1], r[i], r[i + 1]);
        let curvature = a - 2.0 * b + c;
        let delta = if curvature < 0.0 { (0.5 * (a - c) / curvature).clamp(-0.5, 0.5) } else { 0.0 };
        Some((lo + i) as f64 + delta)
    }
}

/// Median filter over the voiced contour; unvoiced frames stay unvoiced and
/// do not contribute values.
fn median_smooth(track: &[Option<f64>], len: usize) -> Vec<Option<f64>> {
    let half = len / 2;
    (0..track.len())
        .map(|t| {
            track[t]?;
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(track.len());
            let mut vals: Vec<f64> = track[lo..hi].iter().flatten().copied().collect();
            vals.sort_by(f64::total_cmp);
            Some(vals[vals.len() / 2])
        })
        .collect()
}

/// Least-squares fit of a warped cosine series to a log-magnitude spectrum.
///
/// The log spectrum is sampled on the `fft_size / 2 + 1` bins of a linear
/// frequency grid; the basis is `cos(m * warp(omega))`, `m = 0..=order`, with
/// trapezoidal weights so that at `alpha = 0` the fit reproduces the
/// truncated real cepstrum (doubled for `m >= 1`).
#[derive(Debug, Clone)]
pub struct CepstrumFitter {
    order: usize,
    alpha: f64,
    /// (order+1) × bins
    projection: DMatrix<f64>,
}

impl CepstrumFitter {
    pub fn new(order: usize, alpha: f64, fft_size: usize) -> Self {
        let bins = fft_size / 2 + 1;
        let basis = warped_basis(order, alpha, fft_size);
        let weights = DVector::from_fn(bins, |k, _| if k == 0 || k == bins - 1 { 0.5 } else { 1.0 });
        let weighted = DMatrix::from_fn(bins, order + 1, |k, m| basis[(k, m)] * weights[k]);
        let mut gram = basis.transpose() * &weighted;
        for m in 0..=order {
            gram[(m, m)] += CEPSTRUM_RIDGE;
        }
        let inv = gram
            .cholesky()
            .expect("regularized Gram matrix is positive definite")
            .inverse();
        Self { order, alpha, projection: inv * weighted.transpose() }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `log_magnitude` holds natural-log magnitudes per bin.
    pub fn fit(&self, log_magnitude: &[f64]) -> Vec<f64> {
        let l = DVector::from_column_slice(log_magnitude);
        (&self.projection * l).iter().copied().collect()
    }
}

fn warped_basis(order: usize, alpha: f64, fft_size: usize) -> DMatrix<f64> {
    let bins = fft_size / 2 + 1;
    DMatrix::from_fn(bins, order + 1, |k, m| {
        let omega = 2.0 * PI * k as f64 / fft_size as f64;
        (m as f64 * warp_frequency(omega, alpha)).cos()
    })
}

pub fn mgc_analysis(wf: &Waveform, cfg: &AnalysisConfig) -> Result<MelCepstrumSequence, AnalysisError> {
    cfg.validate(wf.sample_rate)?;
    let frames = frame_samples(&cfg.padded(&wf.samples), &cfg.frame);
    if frames.is_empty() {
        return Err(AnalysisError::EmptySignal);
    }
    let fitter = CepstrumFitter::new(cfg.order, cfg.alpha, cfg.fft_size);
    let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
    let window_energy: f64 = cfg.frame.window.coefficients(cfg.frame.frame_length).iter().map(|w| w * w).sum();
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
    let frames = frames
        .iter()
        .map(|frame| {
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (b, s) in buf.iter_mut().zip(frame) {
                b.re = *s;
            }
            fft.process(&mut buf);
            let log_mag: Vec<f64> = buf[..=cfg.fft_size / 2]
                .iter()
                .map(|c| 0.5 * (c.norm_sqr() / window_energy).max(POWER_FLOOR).ln())
                .collect();
            fitter.fit(&log_mag)
        })
        .collect();
    Ok(MelCepstrumSequence {
        order: cfg.order,
        alpha: cfg.alpha,
        frame_shift: cfg.frame.frame_shift,
        frames,
    })
}

/// Log-magnitude envelope in dB on the `fft_size / 2 + 1` DFT bins.
pub fn mc_to_envelope(coefficients: &[f64], alpha: f64, fft_size: usize) -> Vec<f64> {
    let to_db = 20.0 / std::f64::consts::LN_10;
    (0..=fft_size / 2)
        .map(|k| {
            let warped = warp_frequency(2.0 * PI * k as f64 / fft_size as f64, alpha);
            to_db
                * coefficients
                    .iter()
                    .enumerate()
                    .map(|(m, c)| c * (m as f64 * warped).cos())
                    .sum::<f64>()
        })
        .collect()
}
