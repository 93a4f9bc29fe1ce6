//! Parameter generation: state durations, maximum-likelihood trajectories
//! under the delta constraints used in training, and a global-variance
//! correction against over-smoothing.

use rayon::prelude::*;
use thiserror::Error;

use crate::analysis::{F0Track, MelCepstrumSequence};
use crate::hmm::{HmmError, HmmState, VoiceModel, ACCEL_WINDOW, DELTA_WINDOW};
use crate::labels::ContextLabel;

#[derive(Debug, Error, PartialEq)]
pub enum PargenError {
    #[error("empty state sequence")]
    EmptySequence,
    #[error("normal equations are not positive definite at frame {frame}")]
    SingularSystem { frame: usize },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("durations do not match the state sequence: {0}")]
    DurationMismatch(String),
    #[error(transparent)]
    Model(#[from] HmmError),
}

/// States in synthesis order with their frame counts.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSequence {
    pub states: Vec<HmmState>,
    pub durations: Vec<usize>,
}

impl StateSequence {
    pub fn frames(&self) -> usize {
        self.durations.iter().sum()
    }

    /// State index of every frame.
    pub fn frame_states(&self) -> Vec<usize> {
        self.durations.iter().enumerate().flat_map(|(s, &d)| std::iter::repeat_n(s, d)).collect()
    }
}

fn chain(model: &VoiceModel, contexts: &[ContextLabel]) -> Result<Vec<HmmState>, HmmError> {
    let mut states = Vec::new();
    for c in contexts {
        states.extend(model.resolve(c)?.states.iter().cloned());
    }
    Ok(states)
}

/// `max(1, round(rate * mean))` frames per state.
pub fn predict_durations(model: &VoiceModel, contexts: &[ContextLabel], rate: f64) -> Result<StateSequence, PargenError> {
    let states = chain(model, contexts)?;
    let durations = states.iter().map(|s| ((rate * s.duration.mean).round() as usize).max(1)).collect();
    Ok(StateSequence { states, durations })
}

/// State sequence with externally supplied durations, e.g. from alignment.
pub fn with_durations(
    model: &VoiceModel,
    contexts: &[ContextLabel],
    durations: Vec<usize>,
) -> Result<StateSequence, PargenError> {
    let states = chain(model, contexts)?;
    if states.len() != durations.len() || durations.contains(&0) {
        return Err(PargenError::DurationMismatch(format!("{} states, {} durations", states.len(), durations.len())));
    }
    Ok(StateSequence { states, durations })
}

/// Window rows of frame `t` in a sequence of `n` frames, boundary frames
/// replicated: `(index, coefficient)` pairs for static, delta and accel.
fn window_rows(t: usize, n: usize) -> [[(usize, f64); 3]; 3] {
    let idx = [t.saturating_sub(1), t, (t + 1).min(n - 1)];
    let row = |w: [f64; 3]| [(idx[0], w[0]), (idx[1], w[1]), (idx[2], w[2])];
    [row([0.0, 1.0, 0.0]), row(DELTA_WINDOW), row(ACCEL_WINDOW)]
}

/// Symmetric matrix with two sub-diagonals; `band[i][k]` is entry `(i, i - k)`.
struct Banded {
    band: Vec<[f64; 3]>,
}

impl Banded {
    fn add(&mut self, i: usize, j: usize, v: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        self.band[hi][hi - lo] += v;
    }

    fn mul(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mut y = vec![0.0; n];
        for i in 0..n {
            y[i] += self.band[i][0] * x[i];
            for k in 1..3 {
                if i >= k {
                    y[i] += self.band[i][k] * x[i - k];
                    y[i - k] += self.band[i][k] * x[i];
                }
            }
        }
        y
    }

    fn cholesky(&self) -> Result<Vec<[f64; 3]>, PargenError> {
        let n = self.band.len();
        let mut l = vec![[0.0f64; 3]; n];
        for i in 0..n {
            for k in (1..3).rev() {
                if i < k {
                    continue;
                }
                let j = i - k;
                let mut s = self.band[i][k];
                for m in 1..3 {
                    if k + m < 3 && j >= m {
                        s -= l[i][k + m] * l[j][m];
                    }
                }
                l[i][k] = s / l[j][0];
            }
            let mut d = self.band[i][0];
            for k in 1..3 {
                if i >= k {
                    d -= l[i][k] * l[i][k];
                }
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(PargenError::SingularSystem { frame: i });
            }
            l[i][0] = d.sqrt();
        }
        Ok(l)
    }

    fn solve_factored(l: &[[f64; 3]], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = b[i];
            for k in 1..3 {
                if i >= k {
                    s -= l[i][k] * y[i - k];
                }
            }
            y[i] = s / l[i][0];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in 1..3 {
                if i + k < n {
                    s -= l[i + k][k] * x[i + k];
                }
            }
            x[i] = s / l[i][0];
        }
        x
    }
}

/// One dimension's solution and the relative residual of its normal equations.
#[derive(Debug, Clone, PartialEq)]
pub struct Solved {
    pub trajectory: Vec<f64>,
    pub residual: f64,
}

/// Solves `(Wᵀ P W) c = Wᵀ P μ` for one dimension, where `means[t]` and
/// `variances[t]` hold the static, delta and accel statistics of frame `t`.
/// Infinite variances remove their constraint.
pub fn mlpg_dimension(means: &[[f64; 3]], variances: &[[f64; 3]]) -> Result<Solved, PargenError> {
    let n = means.len();
    if n == 0 {
        return Err(PargenError::EmptySequence);
    }
    let prec: Vec<[f64; 3]> = variances.iter().map(|v| v.map(|x| 1.0 / x)).collect();
    if prec.iter().all(|p| p[1] == 0.0 && p[2] == 0.0) {
        return Ok(Solved { trajectory: means.iter().map(|m| m[0]).collect(), residual: 0.0 });
    }
    let mut a = Banded { band: vec![[0.0; 3]; n] };
    let mut b = vec![0.0; n];
    for t in 0..n {
        for (w, rows) in window_rows(t, n).iter().enumerate() {
            let p = prec[t][w];
            if p == 0.0 {
                continue;
            }
            for &(i, wi) in rows {
                if wi == 0.0 {
                    continue;
                }
                b[i] += p * wi * means[t][w];
                for &(j, wj) in rows {
                    if wj != 0.0 && j <= i {
                        // replicated boundary indices accumulate naturally
                        a.add(i, j, p * wi * wj);
                    }
                }
            }
        }
    }
    let l = a.cholesky()?;
    let mut x = Banded::solve_factored(&l, &b);
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let den = norm(&b).max(f64::MIN_POSITIVE);
    let residual_of = |x: &[f64]| -> Vec<f64> { b.iter().zip(a.mul(x)).map(|(b, ax)| b - ax).collect() };
    let mut r = residual_of(&x);
    // refinement with the same factor recovers accuracy lost to tightly
    // floored dynamic variances
    for _ in 0..3 {
        if norm(&r) / den < 1e-12 {
            break;
        }
        let dx = Banded::solve_factored(&l, &r);
        let candidate: Vec<f64> = x.iter().zip(&dx).map(|(x, d)| x + d).collect();
        let next = residual_of(&candidate);
        if norm(&next) >= norm(&r) {
            break;
        }
        x = candidate;
        r = next;
    }
    Ok(Solved { residual: norm(&r) / den, trajectory: x })
}

/// Generated parameter streams.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Frames × (M + 1) static mel-cepstra.
    pub spectral: Vec<Vec<f64>>,
    pub f0: F0Track,
    /// Largest relative normal-equation residual over all solves.
    pub max_residual: f64,
}

impl Trajectory {
    pub fn mel_cepstrum(&self, model: &VoiceModel) -> MelCepstrumSequence {
        MelCepstrumSequence {
            order: model.meta.order,
            alpha: model.meta.alpha,
            frame_shift: model.meta.frame_shift,
            frames: self.spectral.clone(),
        }
    }
}

/// Static, delta and accel statistics of dimension `d` for each frame. Both
/// streams are laid out as `[static(width), delta(width), accel(width)]`.
fn dim_stats(seq: &StateSequence, frames: &[usize], d: usize, width: usize, pitch: bool) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
    frames
        .iter()
        .map(|&s| {
            let g = if pitch { &seq.states[s].pitch.gaussian } else { &seq.states[s].spectral };
            ([g.mean[d], g.mean[d + width], g.mean[d + 2 * width]], [g.var[d], g.var[d + width], g.var[d + 2 * width]])
        })
        .unzip()
}

/// Maximum-likelihood trajectories of both streams. Pitch is generated over
/// runs of states whose voiced weight exceeds one half; other frames are
/// unvoiced.
pub fn mlpg(model: &VoiceModel, seq: &StateSequence) -> Result<Trajectory, PargenError> {
    if seq.states.is_empty() {
        return Err(PargenError::EmptySequence);
    }
    let frame_states = seq.frame_states();
    let n = frame_states.len();
    let order = model.meta.order;

    let dims: Vec<Solved> = (0..=order)
        .into_par_iter()
        .map(|d| {
            let (m, v) = dim_stats(seq, &frame_states, d, order + 1, false);
            mlpg_dimension(&m, &v)
        })
        .collect::<Result<_, _>>()?;
    let mut max_residual = dims.iter().map(|s| s.residual).fold(0.0, f64::max);
    let spectral = (0..n).map(|t| dims.iter().map(|s| s.trajectory[t]).collect()).collect();

    let voiced: Vec<bool> = frame_states.iter().map(|&s| seq.states[s].pitch.voiced_weight > 0.5).collect();
    let mut f0 = vec![None; n];
    let mut t = 0;
    while t < n {
        if !voiced[t] {
            t += 1;
            continue;
        }
        let start = t;
        while t < n && voiced[t] {
            t += 1;
        }
        let (m, v) = dim_stats(seq, &frame_states[start..t], 0, 1, true);
        let solved = mlpg_dimension(&m, &v)?;
        max_residual = max_residual.max(solved.residual);
        for (i, x) in solved.trajectory.into_iter().enumerate() {
            f0[start + i] = Some(x);
        }
    }
    Ok(Trajectory { spectral, f0: F0Track { frame_shift: model.meta.frame_shift, frames: f0 }, max_residual })
}

/// Durations from the model, then trajectories.
pub fn generate(model: &VoiceModel, contexts: &[ContextLabel], rate: f64) -> Result<Trajectory, PargenError> {
    mlpg(model, &predict_durations(model, contexts, rate)?)
}

/// Settings of the over-smoothing penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct GvTarget {
    /// Per-dimension target variance of the static features.
    pub target: Vec<f64>,
    /// Balance between staying near the input (0) and matching the target (1).
    pub weight: f64,
    pub iterations: usize,
    pub step: f64,
}

impl GvTarget {
    pub fn new(target: Vec<f64>) -> Self {
        Self { target, weight: 0.7, iterations: 20, step: 0.1 }
    }
}

/// Per-dimension population variance over time.
pub fn trajectory_variance(traj: &[Vec<f64>]) -> Vec<f64> {
    let n = traj.len() as f64;
    let dim = traj.first().map_or(0, Vec::len);
    (0..dim)
        .map(|d| {
            let m = traj.iter().map(|r| r[d]).sum::<f64>() / n;
            traj.iter().map(|r| (r[d] - m) * (r[d] - m)).sum::<f64>() / n
        })
        .collect()
}

/// Mean over utterances of each utterance's static-feature variance.
pub fn model_gv_stats(corpus: &[MelCepstrumSequence]) -> Result<GvTarget, PargenError> {
    let used: Vec<&MelCepstrumSequence> = corpus.iter().filter(|m| !m.is_empty()).collect();
    if used.is_empty() {
        return Err(PargenError::EmptyCorpus);
    }
    let vars: Vec<Vec<f64>> = used.iter().map(|m| trajectory_variance(&m.frames)).collect();
    let dim = vars[0].len();
    let target = (0..dim).map(|d| vars.iter().map(|v| v[d]).sum::<f64>() / vars.len() as f64).collect();
    Ok(GvTarget::new(target))
}

/// Moves each dimension's spread toward its target variance while a
/// quadratic term holds frames near the input trajectory.
///
/// Each iteration applies, per dimension,
/// `c += step * ((1 - w) * (c_in - c) + w * g * (c - mean))` with
/// `g = (target - var) / max(var, target)`, a rescaled gradient of the
/// squared variance error. With `w = 1` the variance approaches the target
/// monotonically without overshoot for `step <= 1`.
pub fn gv_enhance(traj: &[Vec<f64>], gv: &GvTarget) -> Vec<Vec<f64>> {
    let n = traj.len();
    if n < 2 || gv.weight == 0.0 {
        return traj.to_vec();
    }
    let dim = traj[0].len();
    let mut out = traj.to_vec();
    for d in 0..dim.min(gv.target.len()) {
        let target = gv.target[d];
        if target <= 0.0 {
            continue;
        }
        let input: Vec<f64> = traj.iter().map(|r| r[d]).collect();
        let mut c = input.clone();
        let spread = |c: &[f64]| {
            let m = c.iter().sum::<f64>() / n as f64;
            (m, c.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64)
        };
        if spread(&c).1 < 1e-24 * target {
            // a constant track has no direction to expand along; seed a ramp
            let eps = 1e-6 * target.sqrt();
            for (t, x) in c.iter_mut().enumerate() {
                *x += eps * (t as f64 / (n - 1) as f64 - 0.5);
            }
        }
        for _ in 0..gv.iterations {
            let (m, v) = spread(&c);
            let g = (target - v) / v.max(target);
            for (x, x0) in c.iter_mut().zip(&input) {
                *x += gv.step * ((1.0 - gv.weight) * (x0 - *x) + gv.weight * g * (*x - m));
            }
        }
        for (row, x) in out.iter_mut().zip(c) {
            row[d] = x;
        }
    }
    out
}
