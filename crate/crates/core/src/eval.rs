//! Objective metrics and diagnostics: mel-cepstral distortion, pitch errors,
//! band energies, spike detection and spectrogram export.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::analysis::{estimate_f0, mgc_analysis, AnalysisConfig, AnalysisError, F0Track, MelCepstrumSequence};
use crate::signal::{spectrogram, FrameConfig, SignalError, Spectrogram, Waveform};

/// `10 / ln 10`
pub const DB_PER_NEPER: f64 = 4.342_944_819_032_518;

/// Bands reported by [`SpectralSummary`]: the two upper-formant regions.
pub const FORMANT_BANDS: [(f64, f64); 2] = [(2375.0, 2625.0), (3000.0, 3500.0)];

pub const DEFAULT_SPIKE_WINDOW: usize = 64;
pub const DEFAULT_SPIKE_FACTOR: f64 = 8.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("sequence lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("cepstral orders differ: {0} vs {1}")]
    OrderMismatch(usize, usize),
    #[error("no frequency bins in [{lo}, {hi}) Hz")]
    EmptyBand { lo: f64, hi: f64 },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

fn frame_distance(a: &[f64], b: &[f64]) -> f64 {
    let sq: f64 = a.iter().zip(b).skip(1).map(|(x, y)| (x - y) * (x - y)).sum();
    DB_PER_NEPER * (2.0 * sq).sqrt()
}

fn check_orders(a: &MelCepstrumSequence, b: &MelCepstrumSequence) -> Result<(), EvalError> {
    if a.order != b.order {
        return Err(EvalError::OrderMismatch(a.order, b.order));
    }
    Ok(())
}

/// Mean per-frame mel-cepstral distortion in dB, ignoring c(0).
pub fn mcd(a: &MelCepstrumSequence, b: &MelCepstrumSequence) -> Result<f64, EvalError> {
    check_orders(a, b)?;
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(a.frames.iter().zip(&b.frames).map(|(x, y)| frame_distance(x, y)).sum::<f64>() / a.len() as f64)
}

/// Mel-cepstral distortion along the minimum-cost monotone alignment of two
/// sequences of possibly different length, averaged over the path.
pub fn mcd_dtw(a: &MelCepstrumSequence, b: &MelCepstrumSequence) -> Result<f64, EvalError> {
    check_orders(a, b)?;
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return Err(EvalError::LengthMismatch(n, m));
    }
    // (cost, path length)
    let mut prev: Vec<(f64, usize)> = vec![(f64::INFINITY, 0); m];
    for i in 0..n {
        let mut cur = vec![(f64::INFINITY, 0usize); m];
        for j in 0..m {
            let d = frame_distance(&a.frames[i], &b.frames[j]);
            let best = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut cands = Vec::with_capacity(3);
                if i > 0 {
                    cands.push(prev[j]);
                    if j > 0 {
                        cands.push(prev[j - 1]);
                    }
                }
                if j > 0 {
                    cands.push(cur[j - 1]);
                }
                cands.into_iter().fold((f64::INFINITY, 0), |acc, c| if c.0 < acc.0 { c } else { acc })
            };
            cur[j] = (best.0 + d, best.1 + 1);
        }
        prev = cur;
    }
    let (cost, len) = prev[m - 1];
    Ok(cost / len as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct F0Metrics {
    /// Over frames voiced in both tracks.
    pub rmse_hz: f64,
    pub vuv_error_pct: f64,
    pub both_voiced: usize,
}

pub fn f0_metrics(a: &F0Track, b: &F0Track) -> Result<F0Metrics, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    let mut sq = 0.0;
    let mut both = 0;
    let mut flips = 0;
    for (x, y) in a.frames.iter().zip(&b.frames) {
        match (x, y) {
            (Some(x), Some(y)) => {
                let d = x.exp() - y.exp();
                sq += d * d;
                both += 1;
            }
            (None, None) => {}
            _ => flips += 1,
        }
    }
    Ok(F0Metrics {
        rmse_hz: if both == 0 { 0.0 } else { (sq / both as f64).sqrt() },
        vuv_error_pct: if a.is_empty() { 0.0 } else { 100.0 * flips as f64 / a.len() as f64 },
        both_voiced: both,
    })
}

/// Mean dB over all frames and the bins whose centre lies in `[lo, hi)`.
pub fn band_energy(spec: &Spectrogram, lo: f64, hi: f64) -> Result<f64, EvalError> {
    let bins: Vec<usize> = (0..spec.bins()).filter(|&k| (lo..hi).contains(&(k as f64 * spec.bin_hz))).collect();
    if bins.is_empty() || spec.frames() == 0 {
        return Err(EvalError::EmptyBand { lo, hi });
    }
    let total: f64 = spec.magnitudes_db.iter().map(|row| bins.iter().map(|&k| row[k]).sum::<f64>()).sum();
    Ok(total / (bins.len() * spec.frames()) as f64)
}

/// Mean absolute frame-to-frame dB change over the bins in `[lo, hi)`.
pub fn spectral_flux(spec: &Spectrogram, lo: f64, hi: f64) -> Result<f64, EvalError> {
    let bins: Vec<usize> = (0..spec.bins()).filter(|&k| (lo..hi).contains(&(k as f64 * spec.bin_hz))).collect();
    if bins.is_empty() || spec.frames() < 2 {
        return Err(EvalError::EmptyBand { lo, hi });
    }
    let total: f64 = spec
        .magnitudes_db
        .windows(2)
        .map(|w| bins.iter().map(|&k| (w[1][k] - w[0][k]).abs()).sum::<f64>())
        .sum();
    Ok(total / (bins.len() * (spec.frames() - 1)) as f64)
}

/// Samples exceeding `k` times the RMS of the surrounding `window` samples
/// (the sample itself excluded; samples beyond the ends count as zero).
/// Nearby detections are merged into one event at the largest magnitude.
pub fn detect_spikes(wf: &Waveform, window: usize, k: f64) -> Vec<usize> {
    let x = &wf.samples;
    let n = x.len();
    let half = (window / 2).max(1);
    let mut cum = vec![0.0; n + 1];
    for (i, v) in x.iter().enumerate() {
        cum[i + 1] = cum[i] + v * v;
    }
    let mut events: Vec<usize> = Vec::new();
    let mut last_hit: Option<usize> = None;
    for i in 0..n {
        let a = i.saturating_sub(half);
        let b = (i + half + 1).min(n);
        let energy = (cum[b] - cum[a] - x[i] * x[i]).max(0.0);
        let rms = (energy / (2 * half) as f64).sqrt();
        if x[i].abs() <= k * rms || x[i] == 0.0 {
            continue;
        }
        match (last_hit, events.last_mut()) {
            (Some(prev), Some(ev)) if i - prev < half => {
                if x[i].abs() > x[*ev].abs() {
                    *ev = i;
                }
            }
            _ => events.push(i),
        }
        last_hit = Some(i);
    }
    events
}

/// Writes `<path>.csv` (dB values, one frame per row) and `<path>.pgm`
/// (8-bit greyscale, time left to right, low frequencies at the bottom).
/// Grey levels map `[floor_db, max]` linearly onto `[0, 255]`, rounding
/// halves up. Returns the two paths written.
pub fn export_spectrogram(spec: &Spectrogram, path: impl AsRef<Path>) -> Result<(PathBuf, PathBuf), EvalError> {
    let csv_path = path.as_ref().with_extension("csv");
    let pgm_path = path.as_ref().with_extension("pgm");
    let mut csv = String::new();
    for row in &spec.magnitudes_db {
        let cells: Vec<String> = row.iter().map(|v| format!("{}", *v as f32)).collect();
        let _ = writeln!(csv, "{}", cells.join(","));
    }
    std::fs::write(&csv_path, csv)?;
    std::fs::write(&pgm_path, pgm_bytes(spec))?;
    Ok((csv_path, pgm_path))
}

pub fn pgm_bytes(spec: &Spectrogram) -> Vec<u8> {
    let (w, h) = (spec.frames(), spec.bins());
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    let max = spec.magnitudes_db.iter().flatten().copied().fold(spec.floor_db, f64::max);
    let range = max - spec.floor_db;
    for k in (0..h).rev() {
        for row in &spec.magnitudes_db {
            let level = if range > 0.0 { (row[k] - spec.floor_db) / range * 255.0 } else { 0.0 };
            out.push((level + 0.5).floor().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

/// Reads back a CSV written by [`export_spectrogram`].
pub fn read_spectrogram_csv(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>, EvalError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split(',')
                .map(|c| c.parse::<f64>().map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e).into()))
                .collect()
        })
        .collect()
}

/// Three spectral differences between natural and generated speech: the
/// energy below 100 Hz, the frame-to-frame modulation below 1 kHz, and the
/// energy in the two upper formant bands.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralSummary {
    pub low_band_db: f64,
    pub low_flux_db: f64,
    pub formant_bands_db: Vec<(f64, f64, f64)>,
}

pub fn spectral_summary(spec: &Spectrogram) -> Result<SpectralSummary, EvalError> {
    Ok(SpectralSummary {
        low_band_db: band_energy(spec, 0.0, 100.0)?,
        low_flux_db: spectral_flux(spec, 0.0, 1000.0)?,
        formant_bands_db: FORMANT_BANDS
            .iter()
            .map(|&(lo, hi)| Ok((lo, hi, band_energy(spec, lo, hi)?)))
            .collect::<Result<_, EvalError>>()?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub mcd_db: f64,
    /// True when the sequences differed in length and were aligned first.
    pub mcd_time_aligned: bool,
    pub f0_rmse_hz: f64,
    pub vuv_error_pct: f64,
    pub band_energies_db: Vec<(f64, f64, f64)>,
    pub spikes: Vec<usize>,
}

/// Compares a test waveform against a reference. Pitch metrics use the
/// common prefix when the lengths differ.
pub fn compare_waveforms(
    reference: &Waveform,
    test: &Waveform,
    cfg: &AnalysisConfig,
) -> Result<MetricReport, EvalError> {
    let mc_ref = mgc_analysis(reference, cfg)?;
    let mc_test = mgc_analysis(test, cfg)?;
    let aligned = mc_ref.len() != mc_test.len();
    let mcd_db = if aligned { mcd_dtw(&mc_ref, &mc_test)? } else { mcd(&mc_ref, &mc_test)? };
    let mut f_ref = estimate_f0(reference, cfg)?;
    let mut f_test = estimate_f0(test, cfg)?;
    let n = f_ref.len().min(f_test.len());
    f_ref.frames.truncate(n);
    f_test.frames.truncate(n);
    let f0 = f0_metrics(&f_ref, &f_test)?;
    let spec = spectrogram(test, &FrameConfig::default(), cfg.fft_size)?;
    let band_energies_db = FORMANT_BANDS
        .iter()
        .map(|&(lo, hi)| Ok((lo, hi, band_energy(&spec, lo, hi)?)))
        .collect::<Result<_, EvalError>>()?;
    Ok(MetricReport {
        mcd_db,
        mcd_time_aligned: aligned,
        f0_rmse_hz: f0.rmse_hz,
        vuv_error_pct: f0.vuv_error_pct,
        band_energies_db,
        spikes: detect_spikes(test, DEFAULT_SPIKE_WINDOW, DEFAULT_SPIKE_FACTOR),
    })
}

pub fn write_report<T: Serialize>(report: &T, path: impl AsRef<Path>) -> Result<(), EvalError> {
    let mut f = std::fs::File::create(path)?;
    let text = serde_json::to_string_pretty(report).map_err(std::io::Error::other)?;
    f.write_all(text.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn seq(frames: Vec<Vec<f64>>) -> MelCepstrumSequence {
        MelCepstrumSequence { order: frames[0].len() - 1, alpha: 0.42, frame_shift: 80, frames }
    }

    #[test]
    fn mcd_closed_form() {
        let a = seq(vec![vec![0.0, 0.0, 0.0]]);
        assert_eq!(mcd(&a, &a).unwrap(), 0.0);
        let b = seq(vec![vec![5.0, 0.1, 0.0]]);
        let one = mcd(&a, &b).unwrap();
        assert!((one - DB_PER_NEPER * 2f64.sqrt() * 0.1).abs() < 1e-12);
        let c = seq(vec![vec![0.0, 0.2, 0.0]]);
        assert!((mcd(&a, &c).unwrap() - 2.0 * one).abs() < 1e-12);
        assert!(matches!(mcd(&a, &seq(vec![vec![0.0; 3]; 2])), Err(EvalError::LengthMismatch(1, 2))));
    }

    #[test]
    fn dtw_mcd_absorbs_time_stretch() {
        let base: Vec<Vec<f64>> = (0..20).map(|t| vec![0.0, (t as f64 * 0.3).sin(), 0.1]).collect();
        let stretched: Vec<Vec<f64>> = base.iter().flat_map(|f| [f.clone(), f.clone()]).collect();
        assert!(mcd_dtw(&seq(base.clone()), &seq(stretched)).unwrap() < 1e-12);
        assert_eq!(mcd_dtw(&seq(base.clone()), &seq(base)).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn mcd_is_a_pseudometric(v in proptest::collection::vec(-1.0f64..1.0, 36)) {
            let a = seq(v[0..12].chunks(4).map(<[f64]>::to_vec).collect());
            let b = seq(v[12..24].chunks(4).map(<[f64]>::to_vec).collect());
            let c = seq(v[24..36].chunks(4).map(<[f64]>::to_vec).collect());
            let ab = mcd(&a, &b).unwrap();
            prop_assert!((ab - mcd(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!(ab <= mcd(&a, &c).unwrap() + mcd(&c, &b).unwrap() + 1e-9);
        }

        #[test]
        fn spikes_shift_with_signal(pos in 100usize..900, shift in 0usize..300) {
            let mut x: Vec<f64> = (0..1000).map(|n| 0.05 * (2.0 * PI * n as f64 / 37.0).sin()).collect();
            x[pos] = 0.9;
            let a = detect_spikes(&Waveform::new(x.clone(), 16_000).unwrap(), 64, 8.0);
            let mut delayed = vec![0.0; shift];
            delayed.extend(x);
            let b = detect_spikes(&Waveform::new(delayed, 16_000).unwrap(), 64, 8.0);
            prop_assert_eq!(b, a.iter().map(|i| i + shift).collect::<Vec<_>>());
        }
    }

    #[test]
    fn pitch_metrics() {
        let a = F0Track { frame_shift: 80, frames: vec![Some(100f64.ln()); 10] };
        assert_eq!(f0_metrics(&a, &a).unwrap().rmse_hz, 0.0);
        let mut flipped = a.clone();
        flipped.frames[3] = None;
        assert!((f0_metrics(&a, &flipped).unwrap().vuv_error_pct - 10.0).abs() < 1e-12);
        let shifted = F0Track { frame_shift: 80, frames: vec![Some(101f64.ln()); 10] };
        assert!((f0_metrics(&a, &shifted).unwrap().rmse_hz - 1.0).abs() < 1e-9);
    }

    fn flat_spec(frames: usize, db: f64) -> Spectrogram {
        Spectrogram { magnitudes_db: vec![vec![db; 257]; frames], bin_hz: 31.25, frame_shift: 80, floor_db: -100.0 }
    }

    #[test]
    fn band_energies() {
        let s = flat_spec(4, -100.0);
        assert_eq!(band_energy(&s, 2375.0, 2625.0).unwrap(), -100.0);
        assert!(matches!(band_energy(&s, 1.0, 20.0), Err(EvalError::EmptyBand { .. })));
        let mut g = s.clone();
        g.magnitudes_db.iter_mut().flatten().for_each(|v| *v += 6.0);
        assert!((band_energy(&g, 3000.0, 3500.0).unwrap() - band_energy(&s, 3000.0, 3500.0).unwrap() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn spikes() {
        let sine: Vec<f64> = (0..4000).map(|n| 0.1 * 2f64.sqrt() * (2.0 * PI * 440.0 * n as f64 / 16_000.0).sin()).collect();
        assert!(detect_spikes(&Waveform::new(sine.clone(), 16_000).unwrap(), 64, 8.0).is_empty());
        let mut spiky = sine;
        spiky[2000] = 1.0;
        let ev = detect_spikes(&Waveform::new(spiky, 16_000).unwrap(), 64, 8.0);
        assert_eq!(ev.len(), 1);
        assert!(ev[0].abs_diff(2000) <= 32);
        assert!(detect_spikes(&Waveform::new(vec![0.0; 500], 16_000).unwrap(), 64, 8.0).is_empty());
    }

    #[test]
    fn pgm_levels() {
        let s = Spectrogram {
            magnitudes_db: vec![vec![-100.0, -50.0], vec![0.0, -100.0]],
            bin_hz: 8000.0,
            frame_shift: 80,
            floor_db: -100.0,
        };
        let bytes = pgm_bytes(&s);
        let header = b"P5\n2 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        // top row is the higher bin
        assert_eq!(&bytes[header.len()..], &[128, 0, 0, 255]);
        let empty = Spectrogram { magnitudes_db: vec![], bin_hz: 1.0, frame_shift: 80, floor_db: -100.0 };
        assert_eq!(pgm_bytes(&empty), b"P5\n0 0\n255\n");
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = Spectrogram {
            magnitudes_db: vec![vec![-12.345678, -100.0, 3.25], vec![0.1, -0.2, 7.0]],
            bin_hz: 100.0,
            frame_shift: 80,
            floor_db: -100.0,
        };
        let (csv, pgm) = export_spectrogram(&s, dir.path().join("spec")).unwrap();
        assert!(pgm.exists());
        let back = read_spectrogram_csv(csv).unwrap();
        for (r, o) in back.iter().zip(&s.magnitudes_db) {
            for (a, b) in r.iter().zip(o) {
                assert_eq!(*a as f32, *b as f32);
            }
        }
    }
}
