//! Source-filter synthesis: pulse/noise excitation shaped by an MLSA filter.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{estimate_f0, mgc_analysis, AnalysisConfig, AnalysisError, F0Track, MelCepstrumSequence};
use crate::signal::Waveform;

/// Internal filter states beyond this magnitude mean the coefficients drove
/// the Padé approximation unstable.
pub const INSTABILITY_LIMIT: f64 = 1e6;

const PADE_ORDER: usize = 5;

/// Coefficients of the order-5 Padé approximant of `exp`, tuned for the
/// modified structure of the MLSA filter.
const PADE5: [f64; PADE_ORDER + 1] =
    [1.0, 0.499_939_1, 0.110_709_8, 0.013_699_84, 0.000_956_485_3, 0.000_030_417_21];

#[derive(Debug, Error, PartialEq)]
pub enum VocoderError {
    #[error("excitation has {excitation} samples, coefficients cover {expected}")]
    LengthMismatch { excitation: usize, expected: usize },
    #[error("MLSA filter became unstable at sample {sample} (frame {frame})")]
    UnstableCoefficients { sample: usize, frame: usize },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseGain {
    /// Pulse amplitude `sqrt(period)`: average power 1 regardless of F0.
    UnitEnergyPerPeriod,
    UnitAmplitude,
}

impl std::str::FromStr for PulseGain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unit_energy_per_period" => Ok(PulseGain::UnitEnergyPerPeriod),
            "unit_amplitude" => Ok(PulseGain::UnitAmplitude),
            other => Err(format!("unknown pulse gain policy '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcitationConfig {
    pub seed: u64,
    pub noise_gain: f64,
    pub pulse_gain: PulseGain,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        Self { seed: 0, noise_gain: 1.0, pulse_gain: PulseGain::UnitEnergyPerPeriod }
    }
}

/// Pulse train in voiced frames, seeded white noise in unvoiced ones.
///
/// The pulse period follows `sr / F0` and is interpolated linearly across a
/// frame when the next frame is voiced as well. Voicing changes only at frame
/// boundaries.
pub fn make_excitation(f0: &F0Track, sample_rate: u32, cfg: &ExcitationConfig) -> Waveform {
    let shift = f0.frame_shift;
    let sr = f64::from(sample_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samples = Vec::with_capacity(f0.len() * shift);
    // samples elapsed since the last pulse
    let mut since_pulse = f64::INFINITY;
    for (t, frame) in f0.frames.iter().enumerate() {
        let Some(log_f0) = frame else {
            since_pulse = f64::INFINITY;
            samples.extend((0..shift).map(|_| {
                let n: f64 = StandardNormal.sample(&mut rng);
                cfg.noise_gain * n
            }));
            continue;
        };
        let period_here = sr / log_f0.exp();
        let period_next = f0.frames.get(t + 1).copied().flatten().map_or(period_here, |l| sr / l.exp());
        for i in 0..shift {
            let period = period_here + (period_next - period_here) * i as f64 / shift as f64;
            if since_pulse >= period {
                since_pulse = if since_pulse.is_finite() { since_pulse - period } else { 0.0 };
                samples.push(match cfg.pulse_gain {
                    PulseGain::UnitEnergyPerPeriod => period.sqrt(),
                    PulseGain::UnitAmplitude => 1.0,
                });
            } else {
                samples.push(0.0);
            }
            since_pulse += 1.0;
        }
    }
    Waveform { samples, sample_rate }
}

/// Mel-cepstrum to MLSA filter coefficients.
pub fn mc_to_b(mc: &[f64], alpha: f64) -> Vec<f64> {
    let mut b = mc.to_vec();
    for m in (0..b.len().saturating_sub(1)).rev() {
        b[m] = mc[m] - alpha * b[m + 1];
    }
    b
}

/// Inverse of [`mc_to_b`].
pub fn b_to_mc(b: &[f64], alpha: f64) -> Vec<f64> {
    let mut mc = b.to_vec();
    for m in 0..b.len().saturating_sub(1) {
        mc[m] = b[m] + alpha * b[m + 1];
    }
    mc
}

/// Sample-by-sample MLSA filter state.
///
/// `exp(F(z))` with `F(z) = sum_{m>=1} b(m) Phi_m(z)` is split into the
/// first-order term and the rest; each factor is realized as a Padé
/// approximant in feedback form.
#[derive(Debug, Clone)]
pub struct MlsaFilter {
    alpha: f64,
    order: usize,
    // first stage
    s1_delay: [f64; PADE_ORDER + 1],
    s1_taps: [f64; PADE_ORDER + 1],
    // second stage: one all-pass chain per Padé term
    s2_chains: Vec<Vec<f64>>,
    s2_taps: [f64; PADE_ORDER + 1],
}

impl MlsaFilter {
    pub fn new(order: usize, alpha: f64) -> Self {
        Self {
            alpha,
            order,
            s1_delay: [0.0; PADE_ORDER + 1],
            s1_taps: [0.0; PADE_ORDER + 1],
            s2_chains: vec![vec![0.0; order + 2]; PADE_ORDER],
            s2_taps: [0.0; PADE_ORDER + 1],
        }
    }

    /// Filters one sample with coefficients `b` (length `order + 1`).
    pub fn step(&mut self, x: f64, b: &[f64]) -> f64 {
        let x = x * b[0].exp();
        let x = self.first_stage(x, b.get(1).copied().unwrap_or(0.0));
        self.second_stage(x, b)
    }

    fn first_stage(&mut self, mut x: f64, b1: f64) -> f64 {
        let a = self.alpha;
        let aa = 1.0 - a * a;
        let mut out = 0.0;
        for i in (1..=PADE_ORDER).rev() {
            self.s1_delay[i] = aa * self.s1_taps[i - 1] + a * self.s1_delay[i];
            self.s1_taps[i] = self.s1_delay[i] * b1;
            let v = self.s1_taps[i] * PADE5[i];
            if i % 2 == 1 {
                x += v;
            } else {
                x -= v;
            }
            out += v;
        }
        self.s1_taps[0] = x;
        out + x
    }

    fn second_stage(&mut self, mut x: f64, b: &[f64]) -> f64 {
        let mut out = 0.0;
        for i in (1..=PADE_ORDER).rev() {
            let input = self.s2_taps[i - 1];
            self.s2_taps[i] = self.all_pass_fir(input, b, i - 1);
            let v = self.s2_taps[i] * PADE5[i];
            if i % 2 == 1 {
                x += v;
            } else {
                x -= v;
            }
            out += v;
        }
        self.s2_taps[0] = x;
        out + x
    }

    /// FIR over the all-pass chain, taps `b(2..=M)`.
    fn all_pass_fir(&mut self, x: f64, b: &[f64], chain: usize) -> f64 {
        let a = self.alpha;
        let aa = 1.0 - a * a;
        let m = self.order;
        let d = &mut self.s2_chains[chain];
        d[0] = x;
        d[1] = aa * d[0] + a * d[1];
        for i in 2..=m {
            d[i] += a * (d[i + 1] - d[i - 1]);
        }
        let y = (2..=m).map(|i| d[i] * b[i]).sum();
        for i in (2..=m + 1).rev() {
            d[i] = d[i - 1];
        }
        y
    }

    fn max_state(&self) -> f64 {
        self.s1_delay
            .iter()
            .chain(&self.s1_taps)
            .chain(&self.s2_taps)
            .chain(self.s2_chains.iter().flatten())
            .fold(0.0_f64, |m, v| if v.is_finite() { m.max(v.abs()) } else { f64::INFINITY })
    }
}

/// Filters `excitation` through the MLSA filter described by `mc`.
///
/// Filter coefficients are interpolated linearly between frame centres;
/// frame `t` is centred on sample `(t + 0.5) * frame_shift`.
pub fn mlsa_filter(mc: &MelCepstrumSequence, excitation: &Waveform) -> Result<Waveform, VocoderError> {
    let shift = mc.frame_shift;
    let expected = mc.len() * shift;
    if excitation.len() != expected {
        return Err(VocoderError::LengthMismatch { excitation: excitation.len(), expected });
    }
    let bs: Vec<Vec<f64>> = mc.frames.iter().map(|f| mc_to_b(f, mc.alpha)).collect();
    let mut filter = MlsaFilter::new(mc.order, mc.alpha);
    let mut b = vec![0.0; mc.order + 1];
    let mut samples = Vec::with_capacity(expected);
    for (n, &x) in excitation.samples.iter().enumerate() {
        let pos = (n as f64 + 0.5) / shift as f64 - 0.5;
        let t0 = pos.floor().max(0.0) as usize;
        let t1 = (t0 + 1).min(bs.len() - 1);
        let w = (pos - t0 as f64).clamp(0.0, 1.0);
        for (bi, (p, q)) in b.iter_mut().zip(bs[t0].iter().zip(&bs[t1])) {
            *bi = p + w * (q - p);
        }
        let y = filter.step(x, &b);
        if !y.is_finite() || y.abs() > INSTABILITY_LIMIT || filter.max_state() > INSTABILITY_LIMIT {
            return Err(VocoderError::UnstableCoefficients { sample: n, frame: n / shift });
        }
        samples.push(y);
    }
    Ok(Waveform { samples, sample_rate: excitation.sample_rate })
}

/// Analysis followed by synthesis: the oracle resynthesis of a clean signal.
pub fn resynthesize(wf: &Waveform, cfg: &AnalysisConfig, ex_cfg: &ExcitationConfig) -> Result<Waveform, VocoderError> {
    let f0 = estimate_f0(wf, cfg)?;
    let mc = mgc_analysis(wf, cfg)?;
    synthesize(&f0, &mc, wf.sample_rate, ex_cfg)
}

/// Excitation from `f0` filtered by `mc`.
pub fn synthesize(
    f0: &F0Track,
    mc: &MelCepstrumSequence,
    sample_rate: u32,
    ex_cfg: &ExcitationConfig,
) -> Result<Waveform, VocoderError> {
    let excitation = make_excitation(f0, sample_rate, ex_cfg);
    mlsa_filter(mc, &excitation)
}
