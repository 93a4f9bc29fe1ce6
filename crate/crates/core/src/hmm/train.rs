use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{
    DurationGaussian, Gaussian, HmmError, HmmState, ModelKind, ModelMetadata, ModelRef, PhoneHmm, PitchGaussian,
    Utterance, VoiceModel, DURATION_VARIANCE_FLOOR, STATES_PER_PHONE, VOICED_WEIGHT_FLOOR,
};
use crate::labels::{ContextWidth, PhoneSet};

/// Smallest variance ever stored, for dimensions that are constant over the
/// whole corpus.
const ABSOLUTE_VARIANCE_MIN: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub context: ContextWidth,
    pub alpha: f64,
    pub order: usize,
    pub frame_shift: usize,
    pub sample_rate: u32,
    /// Variance floor as a fraction of the global variance per dimension.
    pub variance_floor_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            context: ContextWidth::Quinphone,
            alpha: 0.42,
            order: 24,
            frame_shift: 80,
            sample_rate: 16_000,
            variance_floor_ratio: 1e-4,
        }
    }
}

fn check_dims(corpus: &[Utterance], spectral_dim: usize) -> Result<(), HmmError> {
    for (u, utt) in corpus.iter().enumerate() {
        if let Some(o) = utt.obs.iter().find(|o| o.spectral.len() != spectral_dim) {
            return Err(HmmError::DimensionMismatch(format!(
                "utterance {u}: spectral width {} (model expects {spectral_dim})",
                o.spectral.len()
            )));
        }
    }
    Ok(())
}

fn moments<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> (Vec<f64>, Vec<f64>, usize) {
    let mut sum = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    let mut n = 0usize;
    for r in rows {
        for d in 0..dim {
            sum[d] += r[d];
            sq[d] += r[d] * r[d];
        }
        n += 1;
    }
    if n == 0 {
        return (vec![0.0; dim], vec![1.0; dim], 0);
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let var = sq.iter().zip(&mean).map(|(q, m)| (q / n as f64 - m * m).max(0.0)).collect();
    (mean, var, n)
}

/// Monophone models with every state at the global statistics of each stream.
pub fn flat_start(corpus: &[Utterance], phones: &PhoneSet, cfg: &TrainConfig) -> Result<VoiceModel, HmmError> {
    let frames: usize = corpus.iter().map(|u| u.obs.len()).sum();
    let label_count: usize = corpus.iter().map(|u| u.labels.len()).sum();
    if corpus.is_empty() || frames == 0 || label_count == 0 {
        return Err(HmmError::EmptyCorpus);
    }
    let dim = 3 * (cfg.order + 1);
    check_dims(corpus, dim)?;
    for utt in corpus {
        if let Some(l) = utt.labels.iter().find(|l| !phones.contains(&l.phoneme)) {
            return Err(HmmError::UnknownPhone(l.phoneme.clone()));
        }
    }

    let floor = |var: &[f64]| -> Vec<f64> {
        var.iter().map(|v| (v * cfg.variance_floor_ratio).max(ABSOLUTE_VARIANCE_MIN)).collect()
    };
    let (s_mean, s_var, _) = moments(corpus.iter().flat_map(|u| u.obs.iter().map(|o| o.spectral.as_slice())), dim);
    let (p_mean, p_var, voiced) =
        moments(corpus.iter().flat_map(|u| u.obs.iter().filter_map(|o| o.pitch.as_ref().map(|p| p.as_slice()))), 3);
    let spectral_floor = floor(&s_var);
    let pitch_floor = floor(&p_var);
    let clamp = |v: &[f64], f: &[f64]| v.iter().zip(f).map(|(a, b)| a.max(*b)).collect::<Vec<_>>();

    let state_frames = (frames as f64 / label_count as f64 / STATES_PER_PHONE as f64).max(1.0);
    let state = HmmState {
        spectral: Gaussian::new(s_mean, clamp(&s_var, &spectral_floor)),
        pitch: PitchGaussian {
            gaussian: Gaussian::new(p_mean, clamp(&p_var, &pitch_floor)),
            voiced_weight: (voiced as f64 / frames as f64).clamp(VOICED_WEIGHT_FLOOR, 1.0 - VOICED_WEIGHT_FLOOR),
        },
        duration: DurationGaussian { mean: state_frames, var: state_frames.max(DURATION_VARIANCE_FLOOR) },
    };
    let backoff = phones
        .iter()
        .map(|p| (p.to_string(), PhoneHmm::new(vec![state.clone(); STATES_PER_PHONE])))
        .collect();
    Ok(VoiceModel {
        models: BTreeMap::new(),
        backoff,
        meta: ModelMetadata {
            alpha: cfg.alpha,
            order: cfg.order,
            frame_shift: cfg.frame_shift,
            sample_rate: cfg.sample_rate,
            context: cfg.context,
            phone_set: phones.clone(),
            spectral_floor,
            pitch_floor,
            training_log: Vec::new(),
            gv_target: None,
            mllr: None,
        },
        kind: ModelKind::Average,
    })
}

/// Adds a context model, cloned from its monophone, for every context seen in
/// the corpus.
pub fn clone_contexts(model: &VoiceModel, corpus: &[Utterance]) -> Result<VoiceModel, HmmError> {
    let mut out = model.clone();
    for utt in corpus {
        for ctx in model.contexts(&utt.labels)? {
            let key = ctx.key();
            if out.models.contains_key(&key) {
                continue;
            }
            let mono = model.backoff.get(&ctx.center).ok_or_else(|| HmmError::UnknownPhone(ctx.center.clone()))?;
            out.models.insert(key, PhoneHmm { occupancy: 0.0, ..mono.clone() });
        }
    }
    Ok(out)
}

/// Drops context models trained on fewer than `min_occupancy` frames.
pub fn tie_backoff(model: &VoiceModel, min_occupancy: f64) -> VoiceModel {
    let mut out = model.clone();
    out.models.retain(|_, m| m.occupancy >= min_occupancy);
    out
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Per-utterance lattice quantities shared by the forward and Viterbi passes.
struct Chain {
    refs: Vec<ModelRef>,
    /// log emission, frame-major: `emit[t * states + s]`
    emit: Vec<f64>,
    stay: Vec<f64>,
    leave: Vec<f64>,
    frames: usize,
    states: usize,
}

impl Chain {
    fn build(model: &VoiceModel, utt: &Utterance, index: usize) -> Result<Self, HmmError> {
        let refs = model
            .contexts(&utt.labels)?
            .iter()
            .map(|c| model.model_ref(c))
            .collect::<Result<Vec<_>, _>>()?;
        let chain: Vec<&HmmState> = refs.iter().flat_map(|r| model.get(r).states.iter()).collect();
        let (frames, states) = (utt.obs.len(), chain.len());
        if frames < states {
            return Err(HmmError::TooFewFrames { utterance: index, frames, states });
        }
        let spectral_dim = model.spectral_dim();
        if let Some(o) = utt.obs.iter().find(|o| o.spectral.len() != spectral_dim) {
            return Err(HmmError::DimensionMismatch(format!(
                "utterance {index}: spectral width {} (model expects {spectral_dim})",
                o.spectral.len()
            )));
        }
        let mut emit = vec![0.0; frames * states];
        for (t, o) in utt.obs.iter().enumerate() {
            for (s, st) in chain.iter().enumerate() {
                emit[t * states + s] = st.log_emission(o);
            }
        }
        let stay = chain.iter().map(|s| s.duration.self_loop().ln()).collect();
        let leave = chain.iter().map(|s| -s.duration.mean.max(1.0).ln()).collect();
        Ok(Self { refs, emit, stay, leave, frames, states })
    }

    fn forward(&self) -> Vec<f64> {
        let (tn, sn) = (self.frames, self.states);
        let mut alpha = vec![f64::NEG_INFINITY; tn * sn];
        alpha[0] = self.emit[0];
        for t in 1..tn {
            // state s is reachable at frame t only if s <= t, and must still
            // leave room for the remaining states
            let lo = (sn + t).saturating_sub(tn);
            for s in lo..sn.min(t + 1) {
                let mut a = alpha[(t - 1) * sn + s] + self.stay[s];
                if s > 0 {
                    a = log_add(a, alpha[(t - 1) * sn + s - 1] + self.leave[s - 1]);
                }
                alpha[t * sn + s] = a + self.emit[t * sn + s];
            }
        }
        alpha
    }

    fn backward(&self) -> Vec<f64> {
        let (tn, sn) = (self.frames, self.states);
        let mut beta = vec![f64::NEG_INFINITY; tn * sn];
        beta[(tn - 1) * sn + sn - 1] = self.leave[sn - 1];
        for t in (0..tn - 1).rev() {
            let lo = (sn + t).saturating_sub(tn);
            for s in lo..sn.min(t + 1) {
                let mut b = self.stay[s] + self.emit[(t + 1) * sn + s] + beta[(t + 1) * sn + s];
                if s + 1 < sn {
                    b = log_add(b, self.leave[s] + self.emit[(t + 1) * sn + s + 1] + beta[(t + 1) * sn + s + 1]);
                }
                beta[t * sn + s] = b;
            }
        }
        beta
    }

    fn total(&self, alpha: &[f64]) -> f64 {
        alpha[self.frames * self.states - 1] + self.leave[self.states - 1]
    }
}

/// State posteriors of one utterance over its concatenated state chain.
#[derive(Debug, Clone)]
pub struct Posteriors {
    /// `gamma[t][s]`
    pub gamma: Vec<Vec<f64>>,
    pub log_likelihood: f64,
}

fn posteriors(chain: &Chain, index: usize) -> Result<Posteriors, HmmError> {
    let alpha = chain.forward();
    let beta = chain.backward();
    let total = chain.total(&alpha);
    if !total.is_finite() {
        return Err(HmmError::NumericalUnderflow(index));
    }
    let sn = chain.states;
    let gamma = (0..chain.frames)
        .map(|t| (0..sn).map(|s| (alpha[t * sn + s] + beta[t * sn + s] - total).exp()).collect())
        .collect();
    Ok(Posteriors { gamma, log_likelihood: total })
}

pub fn forward_backward(model: &VoiceModel, utt: &Utterance) -> Result<Posteriors, HmmError> {
    posteriors(&Chain::build(model, utt, 0)?, 0)
}

/// Log-likelihood of the single best state path.
pub fn viterbi_log_likelihood(model: &VoiceModel, utt: &Utterance) -> Result<f64, HmmError> {
    let chain = Chain::build(model, utt, 0)?;
    let (tn, sn) = (chain.frames, chain.states);
    let mut prev = vec![f64::NEG_INFINITY; sn];
    prev[0] = chain.emit[0];
    for t in 1..tn {
        let mut cur = vec![f64::NEG_INFINITY; sn];
        for s in 0..sn.min(t + 1) {
            let mut a = prev[s] + chain.stay[s];
            if s > 0 {
                a = a.max(prev[s - 1] + chain.leave[s - 1]);
            }
            cur[s] = a + chain.emit[t * sn + s];
        }
        prev = cur;
    }
    Ok(prev[sn - 1] + chain.leave[sn - 1])
}

#[derive(Debug, Clone)]
pub(crate) struct StateStats {
    pub occ: f64,
    pub sum: Vec<f64>,
    pub sq: Vec<f64>,
    pub voiced_occ: f64,
    pub voiced_sum: [f64; 3],
    pub voiced_sq: [f64; 3],
    pub instances: f64,
    pub dur_sum: f64,
    pub dur_sq: f64,
}

impl StateStats {
    fn new(dim: usize) -> Self {
        Self {
            occ: 0.0,
            sum: vec![0.0; dim],
            sq: vec![0.0; dim],
            voiced_occ: 0.0,
            voiced_sum: [0.0; 3],
            voiced_sq: [0.0; 3],
            instances: 0.0,
            dur_sum: 0.0,
            dur_sq: 0.0,
        }
    }

    fn merge(&mut self, o: &StateStats) {
        self.occ += o.occ;
        for d in 0..self.sum.len() {
            self.sum[d] += o.sum[d];
            self.sq[d] += o.sq[d];
        }
        self.voiced_occ += o.voiced_occ;
        for d in 0..3 {
            self.voiced_sum[d] += o.voiced_sum[d];
            self.voiced_sq[d] += o.voiced_sq[d];
        }
        self.instances += o.instances;
        self.dur_sum += o.dur_sum;
        self.dur_sq += o.dur_sq;
    }
}

pub(crate) type Stats = BTreeMap<ModelRef, Vec<StateStats>>;

pub(crate) struct UttStats {
    pub stats: Stats,
    pub log_likelihood: f64,
}

/// E-step for one utterance. Statistics go only to the model each label
/// resolves to, which keeps every update a true EM step.
pub(crate) fn accumulate(model: &VoiceModel, utt: &Utterance, index: usize) -> Result<UttStats, HmmError> {
    let chain = Chain::build(model, utt, index)?;
    let post = posteriors(&chain, index)?;
    let dim = model.spectral_dim();
    let mut stats: Stats = BTreeMap::new();
    for (l, r) in chain.refs.iter().enumerate() {
        let entry = stats
            .entry(r.clone())
            .or_insert_with(|| (0..STATES_PER_PHONE).map(|_| StateStats::new(dim)).collect());
        for (k, acc) in entry.iter_mut().enumerate() {
            let s = l * STATES_PER_PHONE + k;
            let mut inst = 0.0;
            for (t, o) in utt.obs.iter().enumerate() {
                let g = post.gamma[t][s];
                if g == 0.0 {
                    continue;
                }
                inst += g;
                for (d, x) in o.spectral.iter().enumerate() {
                    acc.sum[d] += g * x;
                    acc.sq[d] += g * x * x;
                }
                if let Some(p) = &o.pitch {
                    acc.voiced_occ += g;
                    for d in 0..3 {
                        acc.voiced_sum[d] += g * p[d];
                        acc.voiced_sq[d] += g * p[d] * p[d];
                    }
                }
            }
            acc.occ += inst;
            acc.instances += 1.0;
            acc.dur_sum += inst;
            acc.dur_sq += inst * inst;
        }
    }
    Ok(UttStats { stats, log_likelihood: post.log_likelihood })
}

/// Runs the E-step over the corpus in parallel and merges in utterance order,
/// so results do not depend on the worker count.
pub(crate) fn collect_stats(model: &VoiceModel, corpus: &[Utterance]) -> Result<(Stats, f64), HmmError> {
    let per_utt: Vec<UttStats> = corpus
        .par_iter()
        .enumerate()
        .map(|(i, u)| accumulate(model, u, i))
        .collect::<Result<_, _>>()?;
    let mut total = 0.0;
    let mut merged: Stats = BTreeMap::new();
    for u in per_utt {
        total += u.log_likelihood;
        for (r, states) in u.stats {
            match merged.get_mut(&r) {
                Some(acc) => acc.iter_mut().zip(&states).for_each(|(a, s)| a.merge(s)),
                None => {
                    merged.insert(r, states);
                }
            }
        }
    }
    Ok((merged, total))
}

fn reestimate(model: &mut VoiceModel, stats: &Stats) {
    let s_floor = model.meta.spectral_floor.clone();
    let p_floor = model.meta.pitch_floor.clone();
    for (r, states) in stats {
        let hmm = model.get_mut(r);
        hmm.occupancy = states.iter().map(|s| s.occ).sum::<f64>() / STATES_PER_PHONE as f64;
        for (st, acc) in hmm.states.iter_mut().zip(states) {
            if acc.occ <= 0.0 {
                continue;
            }
            for d in 0..acc.sum.len() {
                let m = acc.sum[d] / acc.occ;
                st.spectral.mean[d] = m;
                st.spectral.var[d] = (acc.sq[d] / acc.occ - m * m).max(s_floor[d]);
            }
            st.pitch.voiced_weight = (acc.voiced_occ / acc.occ).clamp(VOICED_WEIGHT_FLOOR, 1.0 - VOICED_WEIGHT_FLOOR);
            if acc.voiced_occ > 0.0 {
                for d in 0..3 {
                    let m = acc.voiced_sum[d] / acc.voiced_occ;
                    st.pitch.gaussian.mean[d] = m;
                    st.pitch.gaussian.var[d] = (acc.voiced_sq[d] / acc.voiced_occ - m * m).max(p_floor[d]);
                }
            }
            let mean = (acc.dur_sum / acc.instances).max(1.0);
            st.duration = DurationGaussian {
                mean,
                var: (acc.dur_sq / acc.instances - mean * mean).max(DURATION_VARIANCE_FLOOR),
            };
        }
    }
}

/// `iterations` rounds of embedded re-estimation. The returned log holds the
/// corpus log-likelihood measured at the start of each round.
pub fn baum_welch(
    model: &VoiceModel,
    corpus: &[Utterance],
    iterations: usize,
) -> Result<(VoiceModel, Vec<f64>), HmmError> {
    if corpus.is_empty() {
        return Err(HmmError::EmptyCorpus);
    }
    check_dims(corpus, model.spectral_dim())?;
    let mut current = model.clone();
    let mut log = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let (stats, total) = collect_stats(&current, corpus)?;
        log.push(total);
        reestimate(&mut current, &stats);
    }
    current.meta.training_log.extend_from_slice(&log);
    Ok((current, log))
}

/// Iteration counts of [`train_voice`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecipe {
    pub monophone_iterations: usize,
    pub context_iterations: usize,
    /// Context models below this occupancy fall back to their monophone.
    pub min_occupancy: f64,
}

impl Default for TrainRecipe {
    fn default() -> Self {
        Self { monophone_iterations: 6, context_iterations: 3, min_occupancy: 10.0 }
    }
}

/// Flat start, monophone re-estimation, context cloning, context
/// re-estimation and tying of rare contexts.
pub fn train_voice(
    corpus: &[Utterance],
    phones: &PhoneSet,
    cfg: &TrainConfig,
    recipe: &TrainRecipe,
) -> Result<VoiceModel, HmmError> {
    let flat = flat_start(corpus, phones, cfg)?;
    let (mono, _) = baum_welch(&flat, corpus, recipe.monophone_iterations)?;
    if recipe.context_iterations == 0 {
        return Ok(mono);
    }
    let cloned = clone_contexts(&mono, corpus)?;
    let (ctx, _) = baum_welch(&cloned, corpus, recipe.context_iterations)?;
    Ok(tie_backoff(&ctx, recipe.min_occupancy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::Observation;
    use crate::labels::PhoneLabel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn small_cfg() -> TrainConfig {
        TrainConfig { order: 0, context: ContextWidth::Triphone, ..TrainConfig::default() }
    }

    fn obs(x: f64, voiced: Option<f64>) -> Observation {
        Observation { spectral: vec![x, 0.0, 0.0], pitch: voiced.map(|v| [v, 0.0, 0.0]) }
    }

    fn two_phone_corpus(n: usize, seed: u64) -> Vec<Utterance> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let a = rng.random_range(8..14);
                let b = rng.random_range(8..14);
                let mut o = Vec::new();
                for _ in 0..a {
                    let e: f64 = rng.sample(StandardNormal);
                    o.push(obs(-2.0 + 0.3 * e, Some(4.8 + 0.01 * e)));
                }
                for _ in 0..b {
                    let e: f64 = rng.sample(StandardNormal);
                    o.push(obs(3.0 + 0.3 * e, None));
                }
                Utterance { obs: o, labels: vec![PhoneLabel::untimed("aa"), PhoneLabel::untimed("s")] }
            })
            .collect()
    }

    fn phones() -> PhoneSet {
        PhoneSet::new(["aa", "s"])
    }

    #[test]
    fn flat_start_uses_global_statistics() {
        let corpus = vec![Utterance {
            obs: (0..10).map(|t| obs(t as f64, None)).collect(),
            labels: vec![PhoneLabel::untimed("aa")],
        }];
        let m = flat_start(&corpus, &phones(), &small_cfg()).unwrap();
        assert_eq!(m.backoff.len(), 3);
        for hmm in m.backoff.values() {
            for s in &hmm.states {
                assert!((s.spectral.mean[0] - 4.5).abs() < 1e-12);
                assert!((s.spectral.var[0] - 8.25).abs() < 1e-12);
                // constant delta dimensions are floored
                assert!(s.spectral.var[1] >= ABSOLUTE_VARIANCE_MIN);
                assert_eq!(s.duration.mean, 2.0);
            }
        }
        assert_eq!(flat_start(&[], &phones(), &small_cfg()).unwrap_err(), HmmError::EmptyCorpus);
    }

    #[test]
    fn posteriors_sum_to_one_and_viterbi_bounded() {
        let corpus = two_phone_corpus(4, 1);
        let m = flat_start(&corpus, &phones(), &small_cfg()).unwrap();
        for utt in &corpus {
            let p = forward_backward(&m, utt).unwrap();
            for row in &p.gamma {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-8);
            }
            assert!(viterbi_log_likelihood(&m, utt).unwrap() <= p.log_likelihood + 1e-9);
        }
    }

    #[test]
    fn forward_matches_path_enumeration() {
        // 1 phone, 5 states, 7 frames: sum over all C(6,4) segmentations
        let utt = Utterance {
            obs: [0.3, -1.0, 2.0, 0.5, 0.1, -0.7, 1.2].iter().map(|&x| obs(x, Some(5.0))).collect(),
            labels: vec![PhoneLabel::untimed("aa")],
        };
        let mut m = flat_start(&[utt.clone()], &phones(), &small_cfg()).unwrap();
        for (k, s) in m.backoff.get_mut("aa").unwrap().states.iter_mut().enumerate() {
            s.spectral.mean[0] = k as f64 * 0.4 - 0.8;
            s.duration.mean = 1.0 + 0.3 * k as f64;
        }
        let hmm = &m.backoff["aa"];
        let mut brute = f64::NEG_INFINITY;
        let n = utt.obs.len();
        for mask in 0u32..(1 << (n - 1)) {
            if mask.count_ones() != 4 {
                continue;
            }
            let mut state = 0;
            let mut ll = 0.0;
            for t in 0..n {
                if t > 0 {
                    let st = &hmm.states[state].duration;
                    if mask & (1 << (t - 1)) != 0 {
                        ll += (1.0 - st.self_loop()).ln();
                        state += 1;
                    } else {
                        ll += st.self_loop().ln();
                    }
                }
                ll += hmm.states[state].log_emission(&utt.obs[t]);
            }
            ll += (1.0 - hmm.states[4].duration.self_loop()).ln();
            brute = log_add(brute, ll);
        }
        let fb = forward_backward(&m, &utt).unwrap().log_likelihood;
        assert!((fb - brute).abs() < 1e-9, "{fb} vs {brute}");
    }

    #[test]
    fn single_state_spans_give_sample_means() {
        // five-frame single-phone utterances force one frame per state, so
        // each state mean is the mean of the frames at its position
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let corpus: Vec<Utterance> = (0..7)
            .map(|_| Utterance {
                obs: (0..5).map(|_| obs(rng.random_range(-1.0..1.0), None)).collect(),
                labels: vec![PhoneLabel::untimed("aa")],
            })
            .collect();
        let m = flat_start(&corpus, &phones(), &small_cfg()).unwrap();
        let (m, _) = baum_welch(&m, &corpus, 1).unwrap();
        for k in 0..5 {
            let mean = corpus.iter().map(|u| u.obs[k].spectral[0]).sum::<f64>() / 7.0;
            assert!((m.backoff["aa"].states[k].spectral.mean[0] - mean).abs() < 1e-12);
            assert!((m.backoff["aa"].states[k].duration.mean - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn likelihood_never_decreases() {
        let corpus = two_phone_corpus(20, 7);
        let m = flat_start(&corpus, &phones(), &small_cfg()).unwrap();
        let (m, log) = baum_welch(&m, &corpus, 8).unwrap();
        for w in log.windows(2) {
            assert!(w[1] >= w[0] - 1e-6 * w[0].abs(), "{log:?}");
        }
        assert!(m.backoff["aa"].states[2].spectral.mean[0] < -1.0);
        assert!(m.backoff["s"].states[2].spectral.mean[0] > 2.0);
        assert!(m.backoff["s"].states[2].pitch.voiced_weight < 0.1);
        for hmm in m.all_models() {
            for s in &hmm.states {
                assert!(s.spectral.var.iter().zip(&m.meta.spectral_floor).all(|(v, f)| v >= f));
            }
        }
    }

    #[test]
    fn context_training_and_tying() {
        let corpus = two_phone_corpus(10, 9);
        let m = flat_start(&corpus, &phones(), &small_cfg()).unwrap();
        let (m, _) = baum_welch(&m, &corpus, 3).unwrap();
        let ctx = clone_contexts(&m, &corpus).unwrap();
        assert_eq!(ctx.models.len(), 2);
        let (ctx, log) = baum_welch(&ctx, &corpus, 2).unwrap();
        assert!(log[1] >= log[0] - 1e-6 * log[0].abs());
        assert!(ctx.models.values().all(|h| h.occupancy > 0.0));
        assert_eq!(tie_backoff(&ctx, 0.0), ctx);
        assert!(tie_backoff(&ctx, f64::INFINITY).models.is_empty());
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let corpus = two_phone_corpus(12, 11);
        let m = flat_start(&corpus, &phones(), &small_cfg()).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| baum_welch(&m, &corpus, 2).unwrap())
        };
        let (a, la) = run(1);
        let (b, lb) = run(4);
        assert_eq!(la, lb);
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_frames() {
        let utt = Utterance { obs: vec![obs(0.0, None); 4], labels: vec![PhoneLabel::untimed("aa")] };
        let m = flat_start(&[utt.clone()], &phones(), &small_cfg()).unwrap();
        assert!(matches!(baum_welch(&m, &[utt], 1), Err(HmmError::TooFewFrames { .. })));
    }
}
