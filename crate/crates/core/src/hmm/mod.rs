//! Context-dependent phone HMMs over a spectral stream, a two-space pitch
//! stream and explicit state durations.
//!
//! Every phone model has five emitting states, left to right without skips.
//! Self-loop probabilities follow from the state duration means
//! (`a_ii = 1 - 1 / mean`), which is exactly the Baum-Welch transition
//! update for a state visited once per phone instance.

mod adapt;
mod io;
mod train;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{F0Track, MelCepstrumSequence};
use crate::labels::{expand_context, ContextLabel, ContextWidth, LabelError, PhoneLabel, PhoneSet};

pub use adapt::{adapt_mllr, AffineTransform, MllrConfig, MllrTransforms};
pub use io::{decode_model, encode_model, read_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use train::{
    baum_welch, clone_contexts, flat_start, forward_backward, tie_backoff, train_voice, viterbi_log_likelihood,
    Posteriors, TrainConfig, TrainRecipe,
};

pub const STATES_PER_PHONE: usize = 5;

/// Two-point central difference.
pub const DELTA_WINDOW: [f64; 3] = [-0.5, 0.0, 0.5];
/// Second difference.
pub const ACCEL_WINDOW: [f64; 3] = [1.0, -2.0, 1.0];

/// Voiced weights are kept inside `[VOICED_WEIGHT_FLOOR, 1 - VOICED_WEIGHT_FLOOR]`
/// so that neither space ever has zero probability.
pub const VOICED_WEIGHT_FLOOR: f64 = 1e-5;

pub const DURATION_VARIANCE_FLOOR: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum HmmError {
    #[error("sequence of {0} frames is too short for delta computation (need 3)")]
    TooShort(usize),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("feature dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("utterance {utterance}: {frames} frames cannot cover {states} states")]
    TooFewFrames { utterance: usize, frames: usize, states: usize },
    #[error("phoneme '{0}' has no model")]
    UnknownPhone(String),
    #[error("numerical underflow in utterance {0}")]
    NumericalUnderflow(usize),
    #[error("insufficient adaptation data: {frames} occupied frames for {parameters} transform parameters")]
    InsufficientData { frames: f64, parameters: usize },
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error("model file: {0}")]
    Format(String),
}

/// Appends first and second differences to every frame. Boundary frames are
/// replicated before differencing.
pub fn compute_deltas(stream: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, HmmError> {
    if stream.len() < 3 {
        return Err(HmmError::TooShort(stream.len()));
    }
    Ok(with_deltas(stream))
}

pub(crate) fn with_deltas(stream: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = stream.len();
    (0..n)
        .map(|t| {
            let prev = &stream[t.saturating_sub(1)];
            let next = &stream[(t + 1).min(n - 1)];
            let cur = &stream[t];
            let mut row = cur.clone();
            row.extend(cur.iter().enumerate().map(|(d, _)| {
                DELTA_WINDOW[0] * prev[d] + DELTA_WINDOW[1] * cur[d] + DELTA_WINDOW[2] * next[d]
            }));
            row.extend(cur.iter().enumerate().map(|(d, _)| {
                ACCEL_WINDOW[0] * prev[d] + ACCEL_WINDOW[1] * cur[d] + ACCEL_WINDOW[2] * next[d]
            }));
            row
        })
        .collect()
}

/// Pitch observations with deltas taken inside each voiced run.
pub fn pitch_observations(f0: &F0Track) -> Vec<Option<[f64; 3]>> {
    let mut out = vec![None; f0.len()];
    let mut t = 0;
    while t < f0.len() {
        if f0.frames[t].is_none() {
            t += 1;
            continue;
        }
        let start = t;
        while t < f0.len() && f0.frames[t].is_some() {
            t += 1;
        }
        let run: Vec<Vec<f64>> = f0.frames[start..t].iter().map(|v| vec![v.unwrap_or_default()]).collect();
        for (i, row) in with_deltas(&run).into_iter().enumerate() {
            out[start + i] = Some([row[0], row[1], row[2]]);
        }
    }
    out
}

/// One frame of both streams.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// [static, delta, delta-delta] mel-cepstrum
    pub spectral: Vec<f64>,
    /// [log F0, delta, delta-delta] for voiced frames
    pub pitch: Option<[f64; 3]>,
}

/// Augmented observations of both streams for one utterance.
pub fn observations(mc: &MelCepstrumSequence, f0: &F0Track) -> Result<Vec<Observation>, HmmError> {
    if mc.len() != f0.len() {
        return Err(HmmError::DimensionMismatch(format!(
            "{} spectral frames vs {} pitch frames",
            mc.len(),
            f0.len()
        )));
    }
    let spectral = compute_deltas(&mc.frames)?;
    Ok(spectral
        .into_iter()
        .zip(pitch_observations(f0))
        .map(|(spectral, pitch)| Observation { spectral, pitch })
        .collect())
}

/// Training or adaptation material: observations plus the phone sequence.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub obs: Vec<Observation>,
    pub labels: Vec<PhoneLabel>,
}

impl Utterance {
    pub fn from_features(mc: &MelCepstrumSequence, f0: &F0Track, labels: Vec<PhoneLabel>) -> Result<Self, HmmError> {
        Ok(Self { obs: observations(mc, f0)?, labels })
    }
}

/// Diagonal Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Self {
        Self { mean, var }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((xi, m), v) in x.iter().zip(&self.mean).zip(&self.var) {
            let d = xi - m;
            acc += (2.0 * PI * v).ln() + d * d / v;
        }
        -0.5 * acc
    }
}

/// Pitch distribution: a voiced Gaussian with weight `voiced_weight`, and an
/// unvoiced point mass with the remaining weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitchGaussian {
    pub gaussian: Gaussian,
    pub voiced_weight: f64,
}

impl PitchGaussian {
    pub fn log_density(&self, x: Option<&[f64; 3]>) -> f64 {
        let w = self.voiced_weight.clamp(VOICED_WEIGHT_FLOOR, 1.0 - VOICED_WEIGHT_FLOOR);
        match x {
            Some(x) => w.ln() + self.gaussian.log_density(x),
            None => (1.0 - w).ln(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationGaussian {
    /// Frames; at least 1.
    pub mean: f64,
    pub var: f64,
}

impl DurationGaussian {
    pub fn log_density(&self, frames: usize) -> f64 {
        let d = frames as f64 - self.mean;
        -0.5 * ((2.0 * PI * self.var).ln() + d * d / self.var)
    }

    pub fn self_loop(&self) -> f64 {
        1.0 - 1.0 / self.mean.max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmState {
    pub spectral: Gaussian,
    pub pitch: PitchGaussian,
    pub duration: DurationGaussian,
}

impl HmmState {
    pub fn log_emission(&self, obs: &Observation) -> f64 {
        self.spectral.log_density(&obs.spectral) + self.pitch.log_density(obs.pitch.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhoneHmm {
    pub states: Vec<HmmState>,
    /// Frames of training data assigned to this model in the last re-estimation.
    pub occupancy: f64,
}

impl PhoneHmm {
    pub fn new(states: Vec<HmmState>) -> Self {
        assert_eq!(states.len(), STATES_PER_PHONE, "phone models have exactly five states");
        Self { states, occupancy: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Average,
    Adapted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub alpha: f64,
    /// Cepstral order M.
    pub order: usize,
    pub frame_shift: usize,
    pub sample_rate: u32,
    pub context: ContextWidth,
    pub phone_set: PhoneSet,
    pub spectral_floor: Vec<f64>,
    pub pitch_floor: Vec<f64>,
    /// Total log-likelihood per training iteration.
    pub training_log: Vec<f64>,
    /// Per-dimension global-variance target of the static mel-cepstrum.
    pub gv_target: Option<Vec<f64>>,
    pub mllr: Option<MllrTransforms>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoiceModel {
    /// Context-dependent models by [`ContextLabel::key`].
    pub models: BTreeMap<String, PhoneHmm>,
    /// Monophone fallback for every phone in the phone set.
    pub backoff: BTreeMap<String, PhoneHmm>,
    pub meta: ModelMetadata,
    pub kind: ModelKind,
}

/// Where a label's model came from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum ModelRef {
    Context(String),
    Backoff(String),
}

impl VoiceModel {
    pub fn spectral_dim(&self) -> usize {
        3 * (self.meta.order + 1)
    }

    /// Context model if present, otherwise the centre phone's monophone.
    pub fn resolve(&self, ctx: &ContextLabel) -> Result<&PhoneHmm, HmmError> {
        self.model_ref(ctx).map(|r| self.get(&r))
    }

    pub(crate) fn model_ref(&self, ctx: &ContextLabel) -> Result<ModelRef, HmmError> {
        let key = ctx.key();
        if self.models.contains_key(&key) {
            return Ok(ModelRef::Context(key));
        }
        if self.backoff.contains_key(&ctx.center) {
            return Ok(ModelRef::Backoff(ctx.center.clone()));
        }
        Err(HmmError::UnknownPhone(ctx.center.clone()))
    }

    pub(crate) fn get(&self, r: &ModelRef) -> &PhoneHmm {
        match r {
            ModelRef::Context(k) => &self.models[k],
            ModelRef::Backoff(p) => &self.backoff[p],
        }
    }

    pub(crate) fn get_mut(&mut self, r: &ModelRef) -> &mut PhoneHmm {
        match r {
            ModelRef::Context(k) => self.models.get_mut(k).expect("resolved model exists"),
            ModelRef::Backoff(p) => self.backoff.get_mut(p).expect("resolved model exists"),
        }
    }

    pub fn contexts(&self, labels: &[PhoneLabel]) -> Result<Vec<ContextLabel>, HmmError> {
        Ok(expand_context(labels, self.meta.context)?)
    }

    /// The concatenated state sequence of an utterance's labels.
    pub fn state_chain(&self, labels: &[PhoneLabel]) -> Result<Vec<&HmmState>, HmmError> {
        let mut chain = Vec::with_capacity(labels.len() * STATES_PER_PHONE);
        for ctx in self.contexts(labels)? {
            chain.extend(self.resolve(&ctx)?.states.iter());
        }
        Ok(chain)
    }

    pub fn all_models(&self) -> impl Iterator<Item = &PhoneHmm> {
        self.backoff.values().chain(self.models.values())
    }

    pub(crate) fn all_models_mut(&mut self) -> impl Iterator<Item = &mut PhoneHmm> {
        self.backoff.values_mut().chain(self.models.values_mut())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deltas_of_constant_are_zero() {
        let stream = vec![vec![2.0, -1.0]; 6];
        for row in compute_deltas(&stream).unwrap() {
            assert_eq!(&row[2..], &[0.0; 4]);
        }
    }

    #[test]
    fn deltas_of_ramp() {
        let stream: Vec<Vec<f64>> = (0..8).map(|t| vec![t as f64]).collect();
        let out = compute_deltas(&stream).unwrap();
        assert_eq!(out[0].len(), 3);
        for row in &out[1..7] {
            assert_eq!(row[1], 1.0);
            assert_eq!(row[2], 0.0);
        }
        // replicated boundary
        assert_eq!(out[0][1], 0.5);
        assert_eq!(out[0][2], 1.0);
    }

    #[test]
    fn deltas_need_three_frames() {
        assert_eq!(compute_deltas(&[vec![1.0], vec![2.0]]), Err(HmmError::TooShort(2)));
        assert_eq!(compute_deltas(&vec![vec![0.0; 25]; 3]).unwrap()[0].len(), 75);
    }

    #[test]
    fn pitch_deltas_stay_inside_voiced_runs() {
        let f0 = F0Track { frame_shift: 80, frames: vec![Some(1.0), Some(2.0), None, Some(5.0), Some(5.0), Some(5.0)] };
        let obs = pitch_observations(&f0);
        assert_eq!(obs[0], Some([1.0, 0.5, 1.0]));
        assert_eq!(obs[1], Some([2.0, 0.5, -1.0]));
        assert_eq!(obs[2], None);
        assert_eq!(obs[4], Some([5.0, 0.0, 0.0]));
    }

    #[test]
    fn msd_density() {
        let p = PitchGaussian { gaussian: Gaussian::new(vec![0.0; 3], vec![1.0; 3]), voiced_weight: 0.25 };
        assert!((p.log_density(None) - 0.75f64.ln()).abs() < 1e-12);
        let expected = 0.25f64.ln() - 1.5 * (2.0 * PI).ln();
        assert!((p.log_density(Some(&[0.0; 3])) - expected).abs() < 1e-12);
        let certain = PitchGaussian { voiced_weight: 1.0, ..p };
        assert!(certain.log_density(None).is_finite());
    }
}
