//! A small synthetic corpus with known source-filter parameters.
//!
//! Eight phones (four vowels, two nasals, two fricatives) plus silence. Each
//! phone has a fixed spectral envelope built from resonances; utterances are
//! random word sequences whose parameter tracks are rendered through the
//! vocoder, so every waveform comes with its true pitch and mel-cepstrum.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::analysis::{CepstrumFitter, F0Track, MelCepstrumSequence};
use crate::hmm::{Observation, Utterance, VoiceModel};
use crate::labels::{
    text_to_phonemes, write_label_file, LabelError, Lexicon, PhoneLabel, PhoneSet, SILENCE, UNITS_PER_SECOND,
};
use crate::signal::{write_wav, SignalError, Waveform};
use crate::vocoder::{synthesize, ExcitationConfig, VocoderError};

pub const TOY_PHONES: [&str; 8] = ["aa", "iy", "uw", "eh", "m", "n", "s", "f"];

const WORDS: [(&str, &[&str]); 10] = [
    ("ma", &["m", "aa"]),
    ("me", &["m", "iy"]),
    ("new", &["n", "uw"]),
    ("see", &["s", "iy"]),
    ("sue", &["s", "uw"]),
    ("fen", &["f", "eh", "n"]),
    ("miss", &["m", "iy", "s"]),
    ("mess", &["m", "eh", "s"]),
    ("neff", &["n", "eh", "f"]),
    ("off", &["aa", "f"]),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub utterances: usize,
    pub seed: u64,
    pub sample_rate: u32,
    pub frame_shift: usize,
    pub order: usize,
    pub alpha: f64,
    /// Utterance length range in seconds.
    pub min_seconds: f64,
    pub max_seconds: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            utterances: 60,
            seed: 1,
            sample_rate: 16_000,
            frame_shift: 80,
            order: 24,
            alpha: 0.42,
            min_seconds: 2.0,
            max_seconds: 4.0,
        }
    }
}

const DYNAMIC_RANGE_DB: f64 = 40.0;

struct PhoneSpec {
    voiced: bool,
    /// (centre Hz, bandwidth Hz)
    resonances: &'static [(f64, f64)],
    rms: f64,
    /// Frame count range.
    frames: (usize, usize),
}

fn phone_spec(p: &str) -> PhoneSpec {
    let (voiced, resonances, rms, frames): (bool, &'static [(f64, f64)], f64, (usize, usize)) = match p {
        "aa" => (true, &[(730.0, 110.0), (1090.0, 130.0), (2440.0, 180.0), (3400.0, 250.0)], 0.12, (20, 32)),
        "iy" => (true, &[(280.0, 100.0), (2290.0, 130.0), (3010.0, 180.0), (3700.0, 250.0)], 0.10, (20, 32)),
        "uw" => (true, &[(310.0, 100.0), (870.0, 120.0), (2240.0, 180.0), (3300.0, 250.0)], 0.10, (20, 32)),
        "eh" => (true, &[(530.0, 100.0), (1840.0, 130.0), (2480.0, 180.0), (3500.0, 250.0)], 0.11, (20, 30)),
        "m" => (true, &[(250.0, 100.0), (1200.0, 300.0), (2200.0, 400.0)], 0.05, (12, 18)),
        "n" => (true, &[(250.0, 100.0), (1600.0, 300.0), (2600.0, 400.0)], 0.05, (12, 18)),
        "s" => (false, &[(5000.0, 1500.0), (6800.0, 1500.0)], 0.04, (16, 24)),
        "f" => (false, &[(4000.0, 4000.0)], 0.015, (16, 24)),
        _ => (false, &[], 0.0005, (30, 50)),
    };
    PhoneSpec { voiced, resonances, rms, frames }
}

/// Mel-cepstrum of a phone's envelope, scaled to the phone's RMS level under
/// unit-power excitation.
pub fn phone_target(phone: &str, order: usize, alpha: f64, sample_rate: u32, fitter: &CepstrumFitter) -> Vec<f64> {
    let spec = phone_spec(phone);
    let fft_size = 512;
    let sr = f64::from(sample_rate);
    let log_mag: Vec<f64> = (0..=fft_size / 2)
        .map(|k| {
            let w = 2.0 * PI * k as f64 / fft_size as f64;
            let mut l = 0.0;
            for &(f, bw) in spec.resonances {
                let r = (-PI * bw / sr).exp();
                let th = 2.0 * PI * f / sr;
                // |1 - 2 r cos(th) z^-1 + r^2 z^-2| on the unit circle
                let re = 1.0 - 2.0 * r * th.cos() * w.cos() + r * r * (2.0 * w).cos();
                let im = 2.0 * r * th.cos() * w.sin() - r * r * (2.0 * w).sin();
                l -= 0.5 * (re * re + im * im).ln();
            }
            if spec.voiced {
                // glottal roll-off
                l -= 0.5 * (1.0 - 1.6 * w.cos() + 0.64).ln();
            }
            l
        })
        .collect();
    // keep the dynamic range near that of natural envelopes so the MLSA
    // approximation stays accurate
    let peak = log_mag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let floor = peak - DYNAMIC_RANGE_DB / (20.0 / std::f64::consts::LN_10);
    let log_mag: Vec<f64> = log_mag.iter().map(|l| l.max(floor)).collect();
    let mut mc = fitter.fit(&log_mag);
    mc.truncate(order + 1);
    let power = envelope_power(&mc, alpha, fft_size);
    mc[0] += spec.rms.ln() - 0.5 * power.ln();
    mc
}

/// Mean of `|H|^2` over frequency for a mel-cepstrum.
fn envelope_power(mc: &[f64], alpha: f64, fft_size: usize) -> f64 {
    let bins = fft_size / 2 + 1;
    let total: f64 = (0..bins)
        .map(|k| {
            let w = crate::analysis::warp_frequency(2.0 * PI * k as f64 / fft_size as f64, alpha);
            let l: f64 = mc.iter().enumerate().map(|(m, c)| c * (m as f64 * w).cos()).sum();
            let weight = if k == 0 || k == bins - 1 { 0.5 } else { 1.0 };
            weight * (2.0 * l).exp()
        })
        .sum();
    total / (bins - 1) as f64
}

pub fn toy_phone_set() -> PhoneSet {
    PhoneSet::new(TOY_PHONES)
}

pub fn toy_lexicon() -> Lexicon {
    let mut lex = Lexicon::new();
    for (w, p) in WORDS {
        lex.insert(w, p);
    }
    lex
}

#[derive(Debug, Clone)]
pub struct ToyUtterance {
    pub name: String,
    pub text: String,
    /// Timed labels.
    pub labels: Vec<PhoneLabel>,
    pub f0: F0Track,
    pub mc: MelCepstrumSequence,
    pub waveform: Waveform,
}

#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub utterances: Vec<ToyUtterance>,
    pub lexicon: Lexicon,
    pub phones: PhoneSet,
    pub config: ToyConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum ToyError {
    #[error(transparent)]
    Vocoder(#[from] VocoderError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

fn smooth(frames: &[Vec<f64>], half: usize) -> Vec<Vec<f64>> {
    let n = frames.len();
    (0..n)
        .map(|t| {
            let mut acc = vec![0.0; frames[t].len()];
            for k in 0..=2 * half {
                let i = (t + k).saturating_sub(half).min(n - 1);
                for (a, v) in acc.iter_mut().zip(&frames[i]) {
                    *a += v;
                }
            }
            acc.iter().map(|a| a / (2 * half + 1) as f64).collect()
        })
        .collect()
}

fn make_utterance(index: usize, cfg: &ToyConfig, targets: &[(String, Vec<f64>)]) -> Result<ToyUtterance, ToyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    // leave room for one more word so the result stays inside the range
    let seconds = rng.random_range(cfg.min_seconds..(cfg.max_seconds - 0.5).max(cfg.min_seconds + 1e-3));
    let frame_rate = f64::from(cfg.sample_rate) / cfg.frame_shift as f64;
    let target = (seconds * frame_rate) as usize;
    let limit = (cfg.max_seconds * frame_rate) as usize;

    let edge = |rng: &mut ChaCha8Rng| {
        let (lo, hi) = phone_spec(SILENCE).frames;
        rng.random_range(lo..=hi)
    };
    let mut words = Vec::new();
    let mut durations = vec![edge(&mut rng)];
    let closing = edge(&mut rng);
    let mut used = durations[0] + closing;
    while used < target {
        let (word, pron) = WORDS[rng.random_range(0..WORDS.len())];
        let d: Vec<usize> = pron
            .iter()
            .map(|p| {
                let (lo, hi) = phone_spec(p).frames;
                rng.random_range(lo..=hi)
            })
            .collect();
        let total: usize = d.iter().sum();
        if !words.is_empty() && used + total > limit {
            break;
        }
        used += total;
        words.push(word);
        durations.extend(d);
    }
    durations.push(closing);
    render(index, cfg, targets, &words.join(" "), &durations, &mut rng)
}

/// Renders a word sequence with `durations[l]` frames for label `l`,
/// silences included.
fn render(
    index: usize,
    cfg: &ToyConfig,
    targets: &[(String, Vec<f64>)],
    text: &str,
    durations: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<ToyUtterance, ToyError> {
    let mut labels = text_to_phonemes(text, &toy_lexicon())?;

    let mut t = 0u64;
    let units_per_frame = cfg.frame_shift as u64 * UNITS_PER_SECOND / u64::from(cfg.sample_rate);
    for (l, &d) in labels.iter_mut().zip(durations) {
        l.start = Some(t * units_per_frame);
        t += d as u64;
        l.end = Some(t * units_per_frame);
    }

    let jitter_c0 = Normal::new(0.0, 0.05).expect("valid deviation");
    let jitter = Normal::new(0.0, 0.02).expect("valid deviation");
    let base = rng.random_range(95.0f64..135.0).ln();
    let total_frames: usize = durations.iter().sum();
    let mut step = Vec::with_capacity(total_frames);
    let mut pitch = Vec::with_capacity(total_frames);
    let mut t = 0;
    for (label, &d) in labels.iter().zip(durations) {
        let target = &targets.iter().find(|(p, _)| *p == label.phoneme).expect("toy phone").1;
        let mut frame = target.clone();
        frame[0] += jitter_c0.sample(rng);
        for c in frame.iter_mut().skip(1) {
            *c += jitter.sample(rng);
        }
        let accent: f64 = 0.03 * rng.sample::<f64, _>(StandardNormal);
        let voiced = phone_spec(&label.phoneme).voiced;
        for _ in 0..d {
            step.push(frame.clone());
            let decline = 0.08 * (PI * t as f64 / total_frames as f64).cos();
            pitch.push(voiced.then_some(base + decline + accent));
            t += 1;
        }
    }
    let frames = smooth(&step, 4);
    // smooth the pitch inside voiced runs only
    let mut f0 = pitch.clone();
    for (t, v) in f0.iter_mut().enumerate() {
        if v.is_some() {
            let lo = t.saturating_sub(3);
            let hi = (t + 4).min(pitch.len());
            let run: Vec<f64> = pitch[lo..hi].iter().flatten().copied().collect();
            *v = Some(run.iter().sum::<f64>() / run.len() as f64);
        }
    }
    let f0 = F0Track { frame_shift: cfg.frame_shift, frames: f0 };
    let mc = MelCepstrumSequence { order: cfg.order, alpha: cfg.alpha, frame_shift: cfg.frame_shift, frames };
    let ex = ExcitationConfig { seed: cfg.seed.wrapping_add(index as u64), ..ExcitationConfig::default() };
    let waveform = synthesize(&f0, &mc, cfg.sample_rate, &ex)?;
    Ok(ToyUtterance { name: format!("toy{index:03}"), text: text.to_string(), labels, f0, mc, waveform })
}

fn phone_targets(cfg: &ToyConfig) -> Vec<(String, Vec<f64>)> {
    let fitter = CepstrumFitter::new(cfg.order, cfg.alpha, 512);
    TOY_PHONES
        .iter()
        .copied()
        .chain([SILENCE])
        .map(|p| (p.to_string(), phone_target(p, cfg.order, cfg.alpha, cfg.sample_rate, &fitter)))
        .collect()
}

/// One utterance of the given words, with phone durations drawn from the
/// same ranges as the corpus and seeded by `cfg.seed` and `index`.
pub fn toy_utterance(text: &str, index: usize, cfg: &ToyConfig) -> Result<ToyUtterance, ToyError> {
    let labels = text_to_phonemes(text, &toy_lexicon())?;
    let mut rng = ChaCha8Rng::seed_from_u64(!cfg.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let durations: Vec<usize> = labels
        .iter()
        .map(|l| {
            let (lo, hi) = phone_spec(&l.phoneme).frames;
            rng.random_range(lo..=hi)
        })
        .collect();
    render(index, cfg, &phone_targets(cfg), text, &durations, &mut rng)
}

/// Builds the corpus; utterance `i` depends only on the seed and `i`.
pub fn toy_corpus(cfg: &ToyConfig) -> Result<ToyCorpus, ToyError> {
    let targets = phone_targets(cfg);
    let utterances = (0..cfg.utterances)
        .into_par_iter()
        .map(|i| make_utterance(i, cfg, &targets))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ToyCorpus { utterances, lexicon: toy_lexicon(), phones: toy_phone_set(), config: cfg.clone() })
}

/// Writes `wav/<name>.wav`, `lab/<name>.lab` and `lexicon.txt` under `dir`.
pub fn write_toy_corpus(corpus: &ToyCorpus, dir: impl AsRef<Path>) -> Result<(), ToyError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("wav"))?;
    std::fs::create_dir_all(dir.join("lab"))?;
    for u in &corpus.utterances {
        write_wav(&u.waveform, dir.join("wav").join(format!("{}.wav", u.name)))?;
        write_label_file(&u.labels, dir.join("lab").join(format!("{}.lab", u.name)))?;
    }
    std::fs::write(dir.join("lexicon.txt"), corpus.lexicon.to_text())?;
    Ok(())
}

/// Draws an observation sequence from the model's own generative process:
/// geometric state durations from the self-loops, independent draws from
/// each stream's Gaussians, and voicing with the state's voiced weight.
pub fn sample_from_model(model: &VoiceModel, labels: &[PhoneLabel], rng: &mut impl Rng) -> Result<Utterance, crate::hmm::HmmError> {
    let chain = model.state_chain(labels)?;
    let mut obs = Vec::new();
    for st in chain {
        let stay = st.duration.self_loop();
        loop {
            let spectral = st
                .spectral
                .mean
                .iter()
                .zip(&st.spectral.var)
                .map(|(m, v)| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let pitch = (rng.random::<f64>() < st.pitch.voiced_weight).then(|| {
                let g = &st.pitch.gaussian;
                std::array::from_fn(|d| g.mean[d] + g.var[d].sqrt() * rng.sample::<f64, _>(StandardNormal))
            });
            obs.push(Observation { spectral, pitch });
            if rng.random::<f64>() >= stay {
                break;
            }
        }
    }
    Ok(Utterance { obs, labels: labels.to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::mc_to_envelope;

    #[test]
    fn targets_have_expected_levels_and_peaks() {
        let fitter = CepstrumFitter::new(24, 0.42, 512);
        let aa = phone_target("aa", 24, 0.42, 16_000, &fitter);
        assert!((envelope_power(&aa, 0.42, 512).sqrt() - 0.12).abs() < 1e-9);
        let env = mc_to_envelope(&aa, 0.42, 512);
        // first formant near 730 Hz is a local maximum within two bins
        let peak = (15..35).max_by(|&a, &b| env[a].total_cmp(&env[b])).unwrap();
        assert!(peak.abs_diff(24) <= 2, "peak bin {peak}");
    }

    #[test]
    fn corpus_is_deterministic_and_well_formed() {
        let cfg = ToyConfig { utterances: 3, ..ToyConfig::default() };
        let a = toy_corpus(&cfg).unwrap();
        let b = toy_corpus(&cfg).unwrap();
        for (x, y) in a.utterances.iter().zip(&b.utterances) {
            assert_eq!(x.waveform, y.waveform);
            assert_eq!(x.labels, y.labels);
        }
        for u in &a.utterances {
            let secs = u.waveform.duration_seconds();
            assert!((1.8..4.2).contains(&secs), "{secs}");
            assert_eq!(u.waveform.len(), u.mc.len() * 80);
            assert_eq!(u.f0.len(), u.mc.len());
            assert_eq!(u.labels.last().unwrap().end, Some(u.mc.len() as u64 * 50_000));
            assert_eq!(u.labels.first().unwrap().phoneme, "sil");
            assert!(u.waveform.peak() < 1.0);
        }
    }

    #[test]
    fn rendered_words() {
        let cfg = ToyConfig::default();
        let u = toy_utterance("see", 4, &cfg).unwrap();
        let phones: Vec<&str> = u.labels.iter().map(|l| l.phoneme.as_str()).collect();
        assert_eq!(phones, ["sil", "s", "iy", "sil"]);
        assert_eq!(u.labels.last().unwrap().end, Some(u.mc.len() as u64 * 50_000));
        assert_eq!(u.waveform.len(), u.mc.len() * 80);
        assert_eq!(toy_utterance("see", 4, &cfg).unwrap().waveform, u.waveform);
        assert_ne!(toy_utterance("see", 5, &cfg).unwrap().waveform, u.waveform);
        assert!(toy_utterance("zebra", 0, &cfg).is_err());
    }
}
