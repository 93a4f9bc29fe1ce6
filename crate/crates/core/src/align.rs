//! Forced alignment of a label sequence to observed features.
//!
//! Each state span is scored by its emissions plus the state's duration
//! Gaussian, and every state covers at least one frame. Among equally good
//! segmentations the one with the longest early-state spans wins.

use thiserror::Error;

use crate::hmm::{HmmError, HmmState, Observation, VoiceModel, STATES_PER_PHONE};
use crate::labels::{PhoneLabel, WordPosition, UNITS_PER_SECOND};

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("{frames} frames cannot cover {labels} labels (need at least {needed})")]
    TooFewFrames { frames: usize, labels: usize, needed: usize },
    #[error("label '{0}' has no model")]
    UnalignableLabel(String),
    #[error("segmentation does not match the label sequence")]
    InvalidSegmentation,
    #[error(transparent)]
    Model(#[from] HmmError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPhone {
    pub phoneme: String,
    pub word: Option<WordPosition>,
    /// First frame.
    pub start: usize,
    /// One past the last frame.
    pub end: usize,
    /// Half-open frame span of each state.
    pub states: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    pub phones: Vec<AlignedPhone>,
    pub log_likelihood: f64,
}

impl AlignmentResult {
    pub fn frames(&self) -> usize {
        self.phones.last().map_or(0, |p| p.end)
    }

    /// Frames per state, in chain order.
    pub fn state_durations(&self) -> Vec<usize> {
        self.phones.iter().flat_map(|p| p.states.iter().map(|(a, b)| b - a)).collect()
    }

    pub fn phone_boundaries(&self) -> Vec<usize> {
        self.phones.iter().map(|p| p.end).collect()
    }
}

fn state_chain<'a>(model: &'a VoiceModel, labels: &[PhoneLabel]) -> Result<Vec<&'a HmmState>, AlignError> {
    model.state_chain(labels).map_err(|e| match e {
        HmmError::UnknownPhone(p) => AlignError::UnalignableLabel(p),
        other => AlignError::Model(other),
    })
}

/// `cum[s][t]` is the emission log-likelihood of state `s` over frames `[0, t)`.
fn cumulative_emissions(chain: &[&HmmState], obs: &[Observation]) -> Vec<Vec<f64>> {
    chain
        .iter()
        .map(|st| {
            let mut cum = Vec::with_capacity(obs.len() + 1);
            cum.push(0.0);
            let mut acc = 0.0;
            for o in obs {
                acc += st.log_emission(o);
                cum.push(acc);
            }
            cum
        })
        .collect()
}

fn check_lengths(labels: &[PhoneLabel], frames: usize) -> Result<(), AlignError> {
    let needed = labels.len() * STATES_PER_PHONE;
    if labels.is_empty() || frames < needed {
        return Err(AlignError::TooFewFrames { frames, labels: labels.len(), needed: needed.max(STATES_PER_PHONE) });
    }
    Ok(())
}

/// Log-likelihood of a given segmentation, `durations[s]` frames for chain
/// state `s`.
pub fn score_segmentation(
    model: &VoiceModel,
    labels: &[PhoneLabel],
    obs: &[Observation],
    durations: &[usize],
) -> Result<f64, AlignError> {
    let chain = state_chain(model, labels)?;
    if durations.len() != chain.len() || durations.iter().sum::<usize>() != obs.len() || durations.contains(&0) {
        return Err(AlignError::InvalidSegmentation);
    }
    let mut t = 0;
    let mut score = 0.0;
    for (st, &d) in chain.iter().zip(durations) {
        score += obs[t..t + d].iter().map(|o| st.log_emission(o)).sum::<f64>() + st.duration.log_density(d);
        t += d;
    }
    Ok(score)
}

pub fn viterbi_align(
    model: &VoiceModel,
    labels: &[PhoneLabel],
    obs: &[Observation],
) -> Result<AlignmentResult, AlignError> {
    check_lengths(labels, obs.len())?;
    let chain = state_chain(model, labels)?;
    let cum = cumulative_emissions(&chain, obs);
    let (sn, tn) = (chain.len(), obs.len());

    // best[s][t]: states 0..=s cover frames [0, t) with state s ending at t
    let mut best = vec![vec![f64::NEG_INFINITY; tn + 1]; sn];
    let mut back = vec![vec![0usize; tn + 1]; sn];
    for (s, st) in chain.iter().enumerate() {
        let t_lo = s + 1;
        let t_hi = tn - (sn - 1 - s);
        for t in t_lo..=t_hi {
            let mut top = f64::NEG_INFINITY;
            let mut arg = 0;
            // ascending duration with strict improvement: on ties the latest
            // entry point wins, leaving earlier states their longest spans
            for d in 1..=(t - s) {
                let from = t - d;
                let prev = if s == 0 {
                    if from == 0 { 0.0 } else { continue }
                } else {
                    best[s - 1][from]
                };
                if prev == f64::NEG_INFINITY {
                    continue;
                }
                let v = prev + cum[s][t] - cum[s][from] + st.duration.log_density(d);
                if v > top {
                    top = v;
                    arg = from;
                }
            }
            best[s][t] = top;
            back[s][t] = arg;
        }
    }

    let mut bounds = vec![0usize; sn + 1];
    bounds[sn] = tn;
    for s in (0..sn).rev() {
        bounds[s] = back[s][bounds[s + 1]];
    }
    let phones = labels
        .iter()
        .enumerate()
        .map(|(l, lab)| {
            let states: Vec<(usize, usize)> =
                (0..STATES_PER_PHONE).map(|k| (bounds[l * STATES_PER_PHONE + k], bounds[l * STATES_PER_PHONE + k + 1])).collect();
            AlignedPhone {
                phoneme: lab.phoneme.clone(),
                word: lab.word,
                start: states[0].0,
                end: states[STATES_PER_PHONE - 1].1,
                states,
            }
        })
        .collect();
    Ok(AlignmentResult { phones, log_likelihood: best[sn - 1][tn] })
}

/// Timed labels in 100 ns units.
pub fn alignment_to_labels(result: &AlignmentResult, frame_shift: usize, sample_rate: u32) -> Vec<PhoneLabel> {
    let units = |frame: usize| frame as u64 * frame_shift as u64 * UNITS_PER_SECOND / u64::from(sample_rate);
    result
        .phones
        .iter()
        .map(|p| PhoneLabel {
            phoneme: p.phoneme.clone(),
            start: Some(units(p.start)),
            end: Some(units(p.end)),
            word: p.word,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::{flat_start, TrainConfig, Utterance};
    use crate::labels::{format_labels, parse_labels, ContextWidth, PhoneSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn obs(x: f64) -> Observation {
        Observation { spectral: vec![x, 0.0, 0.0], pitch: None }
    }

    /// Two phones whose states all emit around a phone-specific mean.
    fn model(dur_mean: f64) -> VoiceModel {
        let seed = vec![Utterance { obs: (0..10).map(|t| obs(t as f64)).collect(), labels: labels(&["aa", "s"]) }];
        let cfg = TrainConfig { order: 0, context: ContextWidth::Triphone, ..TrainConfig::default() };
        let mut m = flat_start(&seed, &PhoneSet::new(["aa", "s"]), &cfg).unwrap();
        for (p, mu) in [("aa", -2.0), ("s", 2.0), ("sil", 0.0)] {
            for (k, st) in m.backoff.get_mut(p).unwrap().states.iter_mut().enumerate() {
                st.spectral.mean = vec![mu + 0.1 * k as f64, 0.0, 0.0];
                st.spectral.var = vec![1.0, 1.0, 1.0];
                st.duration.mean = dur_mean;
                st.duration.var = 4.0;
            }
        }
        m
    }

    fn labels(p: &[&str]) -> Vec<PhoneLabel> {
        p.iter().map(|s| PhoneLabel::untimed(*s)).collect()
    }

    fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
        if parts == 1 {
            return vec![vec![total]];
        }
        (1..=total - (parts - 1))
            .flat_map(|first| {
                compositions(total - first, parts - 1).into_iter().map(move |mut rest| {
                    rest.insert(0, first);
                    rest
                })
            })
            .collect()
    }

    #[test]
    fn five_frames_one_phone() {
        let m = model(1.0);
        let r = viterbi_align(&m, &labels(&["aa"]), &vec![obs(0.0); 5]).unwrap();
        assert_eq!(r.state_durations(), vec![1; 5]);
        assert_eq!((r.phones[0].start, r.phones[0].end), (0, 5));
    }

    #[test]
    fn too_few_frames_and_unknown_phone() {
        let m = model(2.0);
        assert!(matches!(
            viterbi_align(&m, &labels(&["aa", "s"]), &vec![obs(0.0); 9]),
            Err(AlignError::TooFewFrames { needed: 10, .. })
        ));
        assert_eq!(
            viterbi_align(&m, &labels(&["zh"]), &vec![obs(0.0); 9]),
            Err(AlignError::UnalignableLabel("zh".into()))
        );
    }

    #[test]
    fn matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = model(2.5);
        for trial in 0..6 {
            let labs = labels(if trial % 2 == 0 { &["aa", "s"] } else { &["s", "aa"] });
            let n = rng.random_range(10..=16);
            let o: Vec<Observation> = (0..n).map(|_| obs(rng.random_range(-3.0..3.0))).collect();
            let r = viterbi_align(&m, &labs, &o).unwrap();
            let brute = compositions(n, 10)
                .iter()
                .map(|d| score_segmentation(&m, &labs, &o, d).unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((r.log_likelihood - brute).abs() < 1e-9);
            let rescored = score_segmentation(&m, &labs, &o, &r.state_durations()).unwrap();
            assert!((rescored - r.log_likelihood).abs() < 1e-9);
        }
    }

    #[test]
    fn ties_favor_early_states() {
        // identical states with duration mean 1.5: one state takes the spare
        // frame and all five placements score the same
        let mut m = model(1.5);
        for st in &mut m.backoff.get_mut("aa").unwrap().states {
            st.spectral.mean = vec![0.0; 3];
        }
        let r = viterbi_align(&m, &labels(&["aa"]), &vec![obs(0.0); 6]).unwrap();
        assert_eq!(r.state_durations(), vec![2, 1, 1, 1, 1]);
    }

    #[test]
    fn recovers_generating_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = model(4.0);
        for boundary in [17, 20, 26] {
            let o: Vec<Observation> = (0..45)
                .map(|t| {
                    let e: f64 = rng.sample(StandardNormal);
                    obs(if t < boundary { -2.2 } else { 2.2 } + 0.5 * e)
                })
                .collect();
            let r = viterbi_align(&m, &labels(&["aa", "s"]), &o).unwrap();
            assert!(r.phone_boundaries()[0].abs_diff(boundary) <= 1, "{:?}", r.phone_boundaries());
        }
    }

    #[test]
    fn label_times() {
        let r = AlignmentResult {
            phones: vec![
                AlignedPhone { phoneme: "aa".into(), word: None, start: 0, end: 10, states: vec![(0, 2); 5] },
                AlignedPhone { phoneme: "s".into(), word: None, start: 10, end: 17, states: vec![(10, 12); 5] },
            ],
            log_likelihood: 0.0,
        };
        let labs = alignment_to_labels(&r, 80, 16_000);
        assert_eq!(labs[0].end, Some(500_000));
        assert_eq!(labs[1].start, labs[0].end);
        assert_eq!(labs[1].end, Some(850_000));
        assert_eq!(parse_labels(&format_labels(&labs)).unwrap(), labs);
    }
}
