//! Waveform I/O, framing, windowing, spectrograms and the training high-pass.

use std::f64::consts::PI;
use std::io;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Spectrogram cells never go below this level.
pub const DB_FLOOR: f64 = -100.0;

/// Default high-pass cutoff applied to training audio.
pub const DEFAULT_HIGHPASS_HZ: f64 = 70.0;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("file not found: {0}")]
    NotFound(String),
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt WAV header: {0}")]
    CorruptHeader(String),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("FFT size {fft_size} must be a power of two not smaller than frame length {frame_length}")]
    InvalidFftSize { fft_size: usize, frame_length: usize },
    #[error("cutoff {cutoff} Hz must lie strictly between 0 and Nyquist ({nyquist} Hz)")]
    InvalidCutoff { cutoff: f64, nyquist: f64 },
    #[error("signal is silent")]
    SilentSignal,
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
}

/// Mono audio as normalized samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, SignalError> {
        if sample_rate == 0 {
            return Err(SignalError::InvalidWaveform("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(SignalError::InvalidWaveform(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self { samples: vec![0.0; len], sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, s| m.max(s.abs()))
    }

    pub fn power(&self) -> f64 {
        mean_square(&self.samples)
    }

    pub fn rms(&self) -> f64 {
        self.power().sqrt()
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

pub(crate) fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|s| s * s).sum::<f64>() / x.len() as f64
}

/// Reads a 16-bit PCM mono RIFF/WAVE file.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform, SignalError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(SignalError::NotFound(path.display().to_string()));
    }
    let reader = hound::WavReader::open(path).map_err(|e| map_hound_error(e, path))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(SignalError::UnsupportedFormat("floating-point samples".into()));
    }
    if spec.bits_per_sample != 16 {
        return Err(SignalError::UnsupportedFormat(format!("{}-bit samples", spec.bits_per_sample)));
    }
    if spec.channels != 1 {
        return Err(SignalError::UnsupportedFormat(format!("{} channels", spec.channels)));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| map_hound_error(e, path))?;
    Waveform::new(samples, spec.sample_rate)
}

fn map_hound_error(e: hound::Error, path: &Path) -> SignalError {
    match e {
        hound::Error::IoError(io) if io.kind() == io::ErrorKind::NotFound => {
            SignalError::NotFound(path.display().to_string())
        }
        hound::Error::IoError(io)
            if matches!(io.kind(), io::ErrorKind::UnexpectedEof | io::ErrorKind::Other) =>
        {
            SignalError::CorruptHeader(format!("{}: truncated file", path.display()))
        }
        hound::Error::IoError(io) => SignalError::Io(io),
        hound::Error::Unsupported => SignalError::UnsupportedFormat("codec not supported".into()),
        hound::Error::FormatError(msg) => SignalError::CorruptHeader(msg.to_string()),
        other => SignalError::UnsupportedFormat(other.to_string()),
    }
}

/// Outcome of [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WriteReport {
    pub samples_written: usize,
    pub clipped: usize,
}

/// Quantizes to 16-bit PCM. Samples outside [-1, 1] are hard-clipped and counted.
pub fn write_wav(wf: &Waveform, path: impl AsRef<Path>) -> Result<WriteReport, SignalError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wf.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec).map_err(hound_write_error)?;
    let mut clipped = 0;
    for &s in &wf.samples {
        let (q, c) = quantize(s);
        clipped += usize::from(c);
        writer.write_sample(q).map_err(hound_write_error)?;
    }
    writer.finalize().map_err(hound_write_error)?;
    Ok(WriteReport { samples_written: wf.samples.len(), clipped })
}

fn hound_write_error(e: hound::Error) -> SignalError {
    match e {
        hound::Error::IoError(io) => SignalError::Io(io),
        other => SignalError::Io(io::Error::other(other.to_string())),
    }
}

fn quantize(s: f64) -> (i16, bool) {
    let clipped = !(-1.0..=1.0).contains(&s);
    let v = (s * 32768.0).round().clamp(-32768.0, 32767.0);
    (v as i16, clipped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hamming,
    Hann,
    Rectangular,
}

impl WindowKind {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        if len <= 1 {
            return vec![1.0; len];
        }
        let denom = (len - 1) as f64;
        (0..len)
            .map(|n| {
                let phase = 2.0 * PI * n as f64 / denom;
                match self {
                    WindowKind::Hamming => 0.54 - 0.46 * phase.cos(),
                    WindowKind::Hann => 0.5 - 0.5 * phase.cos(),
                    WindowKind::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

impl std::str::FromStr for WindowKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hamming" => Ok(WindowKind::Hamming),
            "hann" | "hanning" => Ok(WindowKind::Hann),
            "rectangular" | "rect" => Ok(WindowKind::Rectangular),
            other => Err(format!("unknown window '{other}'")),
        }
    }
}

/// Analysis framing. The canonical operating point is 400/80 samples with a
/// Hamming window (25 ms / 5 ms at 16 kHz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameConfig {
    pub frame_length: usize,
    pub frame_shift: usize,
    pub window: WindowKind,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self { frame_length: 400, frame_shift: 80, window: WindowKind::Hamming }
    }
}

impl FrameConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.frame_shift == 0 || self.frame_shift > self.frame_length {
            return Err(format!(
                "need 0 < frame_shift ({}) <= frame_length ({})",
                self.frame_shift, self.frame_length
            ));
        }
        Ok(())
    }

    /// Number of whole frames that fit into `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.frame_length {
            0
        } else {
            (len - self.frame_length) / self.frame_shift + 1
        }
    }
}

/// Cuts the signal into windowed frames starting at multiples of the shift.
pub fn frame_signal(wf: &Waveform, cfg: &FrameConfig) -> Vec<Vec<f64>> {
    frame_samples(&wf.samples, cfg)
}

pub(crate) fn frame_samples(samples: &[f64], cfg: &FrameConfig) -> Vec<Vec<f64>> {
    let window = cfg.window.coefficients(cfg.frame_length);
    (0..cfg.frame_count(samples.len()))
        .map(|i| {
            let start = i * cfg.frame_shift;
            samples[start..start + cfg.frame_length]
                .iter()
                .zip(&window)
                .map(|(s, w)| s * w)
                .collect()
        })
        .collect()
}

/// Log-magnitude short-time spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// frames × (fft_size/2 + 1)
    pub magnitudes_db: Vec<Vec<f64>>,
    pub bin_hz: f64,
    pub frame_shift: usize,
    pub floor_db: f64,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.magnitudes_db.len()
    }

    pub fn bins(&self) -> usize {
        self.magnitudes_db.first().map_or(0, Vec::len)
    }
}

pub fn spectrogram(wf: &Waveform, cfg: &FrameConfig, fft_size: usize) -> Result<Spectrogram, SignalError> {
    if !fft_size.is_power_of_two() || fft_size < cfg.frame_length {
        return Err(SignalError::InvalidFftSize { fft_size, frame_length: cfg.frame_length });
    }
    let fft = FftPlanner::new().plan_fft_forward(fft_size);
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    let magnitudes_db = frame_signal(wf, cfg)
        .into_iter()
        .map(|frame| {
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (b, s) in buf.iter_mut().zip(&frame) {
                b.re = *s;
            }
            fft.process(&mut buf);
            buf[..=fft_size / 2]
                .iter()
                .map(|c| amplitude_db(c.norm()))
                .collect()
        })
        .collect();
    Ok(Spectrogram {
        magnitudes_db,
        bin_hz: f64::from(wf.sample_rate) / fft_size as f64,
        frame_shift: cfg.frame_shift,
        floor_db: DB_FLOOR,
    })
}

fn amplitude_db(mag: f64) -> f64 {
    if mag > 0.0 {
        (20.0 * mag.log10()).max(DB_FLOOR)
    } else {
        DB_FLOOR
    }
}

/// Second-order section in transposed direct form II.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    /// Bilinear high-pass section with prewarped cutoff.
    fn highpass(cutoff: f64, sample_rate: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * cutoff / sample_rate;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b: [(1.0 + cos) / 2.0 / a0, -(1.0 + cos) / a0, (1.0 + cos) / 2.0 / a0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    /// Bilinear low-pass section with prewarped cutoff.
    fn lowpass(cutoff: f64, sample_rate: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * cutoff / sample_rate;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b: [(1.0 - cos) / 2.0 / a0, (1.0 - cos) / a0, (1.0 - cos) / 2.0 / a0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    pub(crate) fn run(&self, input: &[f64]) -> Vec<f64> {
        let (mut z1, mut z2) = (0.0, 0.0);
        input
            .iter()
            .map(|&x| {
                let y = self.b[0] * x + z1;
                z1 = self.b[1] * x - self.a[0] * y + z2;
                z2 = self.b[2] * x - self.a[1] * y;
                y
            })
            .collect()
    }

    #[cfg(test)]
    pub(crate) fn response(&self, freq: f64, sample_rate: f64) -> Complex<f64> {
        let z1 = Complex::from_polar(1.0, -2.0 * PI * freq / sample_rate);
        let z2 = z1 * z1;
        (self.b[0] + z1 * self.b[1] + z2 * self.b[2]) / (1.0 + z1 * self.a[0] + z2 * self.a[1])
    }
}

/// Fourth-order Butterworth high-pass as two cascaded biquads.
pub(crate) fn butterworth_highpass_sections(cutoff: f64, sample_rate: f64) -> [Biquad; 2] {
    // pole-pair quality factors of a 4th-order Butterworth prototype
    let q1 = 1.0 / (2.0 * (3.0 * PI / 8.0).cos());
    let q2 = 1.0 / (2.0 * (PI / 8.0).cos());
    [Biquad::highpass(cutoff, sample_rate, q1), Biquad::highpass(cutoff, sample_rate, q2)]
}

/// Fourth-order Butterworth low-pass as two cascaded biquads.
pub(crate) fn butterworth_lowpass_sections(cutoff: f64, sample_rate: f64) -> [Biquad; 2] {
    let q1 = 1.0 / (2.0 * (3.0 * PI / 8.0).cos());
    let q2 = 1.0 / (2.0 * (PI / 8.0).cos());
    [Biquad::lowpass(cutoff, sample_rate, q1), Biquad::lowpass(cutoff, sample_rate, q2)]
}

pub fn highpass(wf: &Waveform, cutoff: f64) -> Result<Waveform, SignalError> {
    let nyquist = f64::from(wf.sample_rate) / 2.0;
    if !(cutoff > 0.0 && cutoff < nyquist) {
        return Err(SignalError::InvalidCutoff { cutoff, nyquist });
    }
    let samples = butterworth_highpass_sections(cutoff, f64::from(wf.sample_rate))
        .iter()
        .fold(wf.samples.clone(), |x, sec| sec.run(&x));
    Ok(Waveform { samples, sample_rate: wf.sample_rate })
}

/// Applies one scalar gain so that the peak magnitude equals `target_peak`.
pub fn normalize_peak(wf: &Waveform, target_peak: f64) -> Result<Waveform, SignalError> {
    let peak = wf.peak();
    if peak == 0.0 {
        return Err(SignalError::SilentSignal);
    }
    if peak == target_peak {
        return Ok(wf.clone());
    }
    Ok(wf.scaled(target_peak / peak))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine(freq: f64, amp: f64, len: usize, sr: u32) -> Waveform {
        let samples = (0..len)
            .map(|n| amp * (2.0 * PI * freq * n as f64 / f64::from(sr)).sin())
            .collect();
        Waveform::new(samples, sr).unwrap()
    }

    #[test]
    fn wav_header_arithmetic_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.wav");
        let report = write_wav(&Waveform::silence(16000, 16000), &path).unwrap();
        assert_eq!(report.clipped, 0);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 32044);
        let back = read_wav(&path).unwrap();
        assert_eq!(back.len(), 16000);
        assert_eq!(back.duration_seconds(), 1.0);
    }

    #[test]
    fn wav_clipping_is_counted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.wav");
        let wf = Waveform::new(vec![1.5, 0.0, -0.5], 16000).unwrap();
        let report = write_wav(&wf, &path).unwrap();
        assert_eq!(report.clipped, 1);
        let back = read_wav(&path).unwrap();
        assert_eq!((back.samples[0] * 32768.0).round() as i32, 32767);
        assert_eq!(back.samples[2], -0.5);
    }

    #[test]
    fn wav_round_trip_within_one_lsb() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let wf = sine(440.0, 0.8, 1000, 16000);
        write_wav(&wf, &path).unwrap();
        let back = read_wav(&path).unwrap();
        for (a, b) in wf.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
        // idempotent after the first quantization
        let path2 = dir.path().join("s2.wav");
        write_wav(&back, &path2).unwrap();
        assert_eq!(read_wav(&path2).unwrap(), back);
    }

    #[test]
    fn wav_rejects_24_bit_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w24.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 24,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(0i32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&path), Err(SignalError::UnsupportedFormat(_))));
        assert!(matches!(read_wav(dir.path().join("nope.wav")), Err(SignalError::NotFound(_))));

        let stereo = dir.path().join("st.wav");
        let spec = hound::WavSpec { channels: 2, bits_per_sample: 16, ..spec };
        let mut w = hound::WavWriter::create(&stereo, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&stereo), Err(SignalError::UnsupportedFormat(_))));

        let junk = dir.path().join("junk.wav");
        std::fs::write(&junk, b"RIFF\x10\x00\x00\x00WAVEjunk").unwrap();
        assert!(matches!(read_wav(&junk), Err(SignalError::CorruptHeader(_))));
    }

    #[test]
    fn write_to_missing_directory_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("no/such/dir/x.wav");
        assert!(matches!(write_wav(&Waveform::silence(10, 16000), path), Err(SignalError::Io(_))));
    }

    #[test]
    fn frame_counts() {
        let cfg = FrameConfig::default();
        assert_eq!(frame_signal(&Waveform::silence(400, 16000), &cfg).len(), 1);
        assert_eq!(frame_signal(&Waveform::silence(480, 16000), &cfg).len(), 2);
        assert_eq!(frame_signal(&Waveform::silence(399, 16000), &cfg).len(), 0);
    }

    #[test]
    fn rectangular_frame_is_raw_slice() {
        let wf = sine(300.0, 0.5, 1000, 16000);
        let cfg = FrameConfig { frame_length: 200, frame_shift: 100, window: WindowKind::Rectangular };
        let frames = frame_signal(&wf, &cfg);
        assert_eq!(frames[3], wf.samples[300..500].to_vec());
    }

    #[test]
    fn sine_peak_bin() {
        let wf = sine(1000.0, 0.5, 4000, 16000);
        let spec = spectrogram(&wf, &FrameConfig::default(), 512).unwrap();
        assert_eq!(spec.bins(), 257);
        for frame in &spec.magnitudes_db {
            let peak = frame
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(peak, 32);
        }
    }

    #[test]
    fn silence_spectrogram_is_floor() {
        let spec = spectrogram(&Waveform::silence(2000, 16000), &FrameConfig::default(), 512).unwrap();
        assert!(spec.magnitudes_db.iter().flatten().all(|&v| v == DB_FLOOR));
    }

    #[test]
    fn bin_aligned_sine_has_clean_sidebands() {
        let wf = sine(1000.0, 1.0, 512, 16000);
        let cfg = FrameConfig { frame_length: 512, frame_shift: 512, window: WindowKind::Rectangular };
        let spec = spectrogram(&wf, &cfg, 512).unwrap();
        let frame = &spec.magnitudes_db[0];
        let peak = frame[32];
        for (k, v) in frame.iter().enumerate() {
            if k != 32 {
                assert!(peak - v >= 60.0, "bin {k}: {v} vs peak {peak}");
            }
        }
    }

    #[test]
    fn invalid_fft_size() {
        let wf = Waveform::silence(1000, 16000);
        assert!(matches!(
            spectrogram(&wf, &FrameConfig::default(), 256),
            Err(SignalError::InvalidFftSize { .. })
        ));
        assert!(matches!(
            spectrogram(&wf, &FrameConfig::default(), 500),
            Err(SignalError::InvalidFftSize { .. })
        ));
    }

    #[test]
    fn highpass_response_at_dc_and_cutoff() {
        let sr = 16000.0;
        let sections = butterworth_highpass_sections(70.0, sr);
        let gain = |f: f64| sections.iter().map(|s| s.response(f, sr).norm()).product::<f64>();
        assert!(20.0 * gain(0.0).max(1e-300).log10() <= -40.0);
        let at_cutoff = 20.0 * gain(70.0).log10();
        assert!((at_cutoff + 3.0).abs() <= 1.0, "{at_cutoff}");
    }

    #[test]
    fn highpass_removes_dc() {
        let wf = Waveform::new(vec![0.5; 32000], 16000).unwrap();
        let out = highpass(&wf, 70.0).unwrap();
        assert_eq!(out.len(), wf.len());
        let tail = &out.samples[16000..];
        assert!(mean_square(tail).sqrt() < 0.01 * 0.5);
    }

    #[test]
    fn highpass_passes_four_times_cutoff() {
        let wf = sine(280.0, 0.5, 32000, 16000);
        let out = highpass(&wf, 70.0).unwrap();
        let ratio = mean_square(&out.samples[16000..]).sqrt() / mean_square(&wf.samples[16000..]).sqrt();
        assert!((20.0 * ratio.log10()).abs() < 1.0);
    }

    #[test]
    fn highpass_rejects_bad_cutoff() {
        let wf = Waveform::silence(10, 16000);
        assert!(matches!(highpass(&wf, 0.0), Err(SignalError::InvalidCutoff { .. })));
        assert!(matches!(highpass(&wf, 8000.0), Err(SignalError::InvalidCutoff { .. })));
    }

    #[test]
    fn normalize_peak_cases() {
        let wf = Waveform::new(vec![0.25, -0.1, 0.0], 16000).unwrap();
        let out = normalize_peak(&wf, 1.0).unwrap();
        assert_eq!(out.samples, vec![1.0, -0.4, 0.0]);
        assert_eq!(normalize_peak(&out, 1.0).unwrap(), out);
        assert!(matches!(
            normalize_peak(&Waveform::silence(5, 16000), 1.0),
            Err(SignalError::SilentSignal)
        ));
    }

    #[test]
    fn spectrogram_gain_shifts_db() {
        let wf = sine(700.0, 0.1, 3000, 16000);
        let cfg = FrameConfig::default();
        let a = spectrogram(&wf, &cfg, 512).unwrap();
        let b = spectrogram(&normalize_peak(&wf, 0.8).unwrap(), &cfg, 512).unwrap();
        let offset = 20.0 * (0.8 / wf.peak()).log10();
        for (ra, rb) in a.magnitudes_db.iter().zip(&b.magnitudes_db) {
            for (x, y) in ra.iter().zip(rb) {
                if *x > DB_FLOOR && *y > DB_FLOOR {
                    assert!((y - x - offset).abs() < 1e-9);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn frame_count_formula(len in 1usize..5000, frame_length in 1usize..600, shift_frac in 0.01f64..1.0) {
            let frame_shift = ((frame_length as f64 * shift_frac).ceil() as usize).clamp(1, frame_length);
            let cfg = FrameConfig { frame_length, frame_shift, window: WindowKind::Hann };
            let frames = frame_signal(&Waveform::silence(len, 16000), &cfg);
            let expected = if len < frame_length { 0 } else { (len - frame_length) / frame_shift + 1 };
            prop_assert_eq!(frames.len(), expected);
        }

        #[test]
        fn highpass_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..500).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..500).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let hx = highpass(&Waveform::new(x, 16000).unwrap(), 70.0).unwrap();
            let hy = highpass(&Waveform::new(y, 16000).unwrap(), 70.0).unwrap();
            let hm = highpass(&Waveform::new(mix, 16000).unwrap(), 70.0).unwrap();
            for i in 0..500 {
                prop_assert!((hm.samples[i] - (a * hx.samples[i] + b * hy.samples[i])).abs() < 1e-9);
            }
        }
    }
}
