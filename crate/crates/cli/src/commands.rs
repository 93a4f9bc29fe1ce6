//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hmmse::align::{alignment_to_labels, viterbi_align};
use hmmse::analysis::{estimate_f0, AnalysisConfig, MelCepstrumSequence};
use hmmse::enhance::{
    add_interference, enhance_with_side_info, model_analysis_config, oracle_components, synthesize_from_labels,
    synthesize_from_text, validate_corpus,
};
use hmmse::eval::{compare_waveforms, export_spectrogram};
use hmmse::features::{read_f0, write_f0, write_mgc};
use hmmse::hmm::{adapt_mllr, observations, read_model, train_voice, write_model, TrainConfig, Utterance, VoiceModel};
use hmmse::labels::{parse_label_file, write_label_file, Lexicon, PhoneSet, SILENCE};
use hmmse::pargen::{model_gv_stats, GvTarget};
use hmmse::signal::{read_wav, spectrogram, write_wav, Waveform};
use hmmse::toy::{toy_corpus, write_toy_corpus, ToyConfig};
use hmmse::vocoder::resynthesize;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::Command;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Processing(String),
}

impl CliError {
    pub fn is_invalid(&self) -> bool {
        matches!(self, CliError::Invalid(_))
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Attaches a context string to any library error.
trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T>;
}

impl<T, E: std::fmt::Display> Context<T> for std::result::Result<T, E> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| CliError::Processing(format!("{}: {e}", what())))
    }
}

fn load_wav(path: &Path) -> Result<Waveform> {
    read_wav(path).context(|| path.display().to_string())
}

fn save_wav(wf: &Waveform, path: &Path) -> Result<()> {
    let report = write_wav(wf, path).context(|| path.display().to_string())?;
    if report.clipped > 0 {
        eprintln!("warning: {} samples clipped in {}", report.clipped, path.display());
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<VoiceModel> {
    read_model(path).context(|| path.display().to_string())
}

fn print_json<T: Serialize>(value: &T, file: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).context(|| "report".into())?;
    if let Some(p) = file {
        std::fs::write(p, format!("{text}\n")).context(|| p.display().to_string())?;
    }
    println!("{text}");
    Ok(())
}

fn gv_for(cfg: &RunConfig, model: &VoiceModel) -> Option<GvTarget> {
    if !cfg.gv {
        return None;
    }
    model.meta.gv_target.clone().map(|t| cfg.gv_target(t))
}

/// Audio and label files paired by stem; every stem must have both.
fn paired_files(wav_dir: &Path, lab_dir: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let list = |dir: &Path, ext: &str| -> Result<BTreeMap<String, PathBuf>> {
        let mut out = BTreeMap::new();
        for entry in std::fs::read_dir(dir).context(|| dir.display().to_string())? {
            let path = entry.context(|| dir.display().to_string())?.path();
            if path.extension().is_some_and(|e| e == ext) {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    out.insert(stem.to_string(), path);
                }
            }
        }
        Ok(out)
    };
    let wavs = list(wav_dir, "wav")?;
    let labs = list(lab_dir, "lab")?;
    if let Some(stem) = wavs.keys().find(|k| !labs.contains_key(*k)).or_else(|| labs.keys().find(|k| !wavs.contains_key(*k)))
    {
        return Err(CliError::Invalid(format!("'{stem}' lacks its audio or label file; run corpus-check")));
    }
    if wavs.is_empty() {
        return Err(CliError::Invalid(format!("no .wav files in {}", wav_dir.display())));
    }
    Ok(wavs.into_iter().map(|(stem, wav)| (stem.clone(), wav, labs[&stem].clone())).collect())
}

struct Loaded {
    utterances: Vec<Utterance>,
    mel_cepstra: Vec<MelCepstrumSequence>,
    sample_rate: u32,
}

fn load_corpus(wav_dir: &Path, lab_dir: &Path, analysis: &AnalysisConfig) -> Result<Loaded> {
    let pairs = paired_files(wav_dir, lab_dir)?;
    let items: Vec<(Utterance, MelCepstrumSequence, u32)> = pairs
        .par_iter()
        .map(|(stem, wav, lab)| {
            let wf = load_wav(wav)?;
            let labels = parse_label_file(lab).context(|| lab.display().to_string())?;
            let (f0, mc) = oracle_components(&wf, analysis).context(|| stem.clone())?;
            let obs = observations(&mc, &f0).context(|| stem.clone())?;
            Ok((Utterance { obs, labels }, mc, wf.sample_rate))
        })
        .collect::<Result<_>>()?;
    let sample_rate = items[0].2;
    if let Some((_, _, sr)) = items.iter().find(|i| i.2 != sample_rate) {
        return Err(CliError::Invalid(format!("mixed sample rates: {sample_rate} Hz and {sr} Hz")));
    }
    let (utterances, mel_cepstra) = items.into_iter().map(|(u, m, _)| (u, m)).unzip();
    Ok(Loaded { utterances, mel_cepstra, sample_rate })
}

pub fn run(command: Command, cfg: &RunConfig) -> Result<()> {
    match command {
        Command::Analyze { input, f0, mgc } => {
            let wf = load_wav(&input)?;
            let (track, mc) = oracle_components(&wf, &cfg.analysis).context(|| input.display().to_string())?;
            write_f0(&f0, &track).context(|| f0.display().to_string())?;
            write_mgc(&mgc, &mc).context(|| mgc.display().to_string())?;
            print_json(&json!({ "frames": mc.len(), "voiced_frames": track.voiced_count() }), None)
        }
        Command::Resynth { input, out } => {
            let wf = load_wav(&input)?;
            let y = resynthesize(&wf, &cfg.analysis, &cfg.excitation).context(|| input.display().to_string())?;
            save_wav(&y, &out)
        }
        Command::Train { wav_dir, lab_dir, out } => {
            let data = load_corpus(&wav_dir, &lab_dir, &cfg.analysis)?;
            let phones = PhoneSet::new(
                data.utterances.iter().flat_map(|u| u.labels.iter()).map(|l| l.phoneme.as_str()).filter(|p| *p != SILENCE),
            );
            let tc = TrainConfig {
                context: cfg.context,
                alpha: cfg.analysis.alpha,
                order: cfg.analysis.order,
                frame_shift: cfg.analysis.frame.frame_shift,
                sample_rate: data.sample_rate,
                variance_floor_ratio: cfg.variance_floor_ratio,
            };
            let mut model = train_voice(&data.utterances, &phones, &tc, &cfg.recipe).context(|| "training".into())?;
            model.meta.gv_target = Some(model_gv_stats(&data.mel_cepstra).context(|| "variance statistics".into())?.target);
            write_model(&model, &out).context(|| out.display().to_string())?;
            print_json(
                &json!({
                    "utterances": data.utterances.len(),
                    "phones": phones.len(),
                    "context_models": model.models.len(),
                    "training_log": model.meta.training_log,
                }),
                None,
            )
        }
        Command::Adapt { model, wav_dir, lab_dir, out } => {
            let base = load_model(&model)?;
            let analysis = model_analysis_config(&base, &cfg.analysis);
            let data = load_corpus(&wav_dir, &lab_dir, &analysis)?;
            let adapted = adapt_mllr(&base, &data.utterances, &cfg.mllr).context(|| "adaptation".into())?;
            write_model(&adapted, &out).context(|| out.display().to_string())?;
            let mllr = adapted.meta.mllr.as_ref().expect("adaptation records its transforms");
            print_json(
                &json!({
                    "utterances": data.utterances.len(),
                    "spectral_deviation": mllr.spectral.relative_deviation(),
                    "pitch_deviation": mllr.pitch.relative_deviation(),
                }),
                None,
            )
        }
        Command::Align { model, labels, input, out } => {
            let m = load_model(&model)?;
            let labs = parse_label_file(&labels).context(|| labels.display().to_string())?;
            let wf = load_wav(&input)?;
            let analysis = model_analysis_config(&m, &cfg.analysis);
            let (f0, mc) = oracle_components(&wf, &analysis).context(|| input.display().to_string())?;
            let obs = observations(&mc, &f0).context(|| input.display().to_string())?;
            let result = viterbi_align(&m, &labs, &obs).context(|| "alignment".into())?;
            let timed = alignment_to_labels(&result, m.meta.frame_shift, wf.sample_rate);
            write_label_file(&timed, &out).context(|| out.display().to_string())?;
            print_json(&json!({ "frames": result.frames(), "log_likelihood": result.log_likelihood }), None)
        }
        Command::Synth { model, text, lexicon, labels, out } => {
            let m = load_model(&model)?;
            let gv = gv_for(cfg, &m);
            let synth = match (text, lexicon, labels) {
                (Some(text), Some(lex), _) => {
                    let lexicon = Lexicon::load(&lex, &m.meta.phone_set).context(|| lex.display().to_string())?;
                    synthesize_from_text(&m, &text, &lexicon, gv.as_ref(), &cfg.excitation)
                        .context(|| "synthesis".into())?
                }
                (_, _, Some(path)) => {
                    let labs = parse_label_file(&path).context(|| path.display().to_string())?;
                    synthesize_from_labels(&m, &labs, gv.as_ref(), &cfg.excitation).context(|| "synthesis".into())?
                }
                _ => return Err(CliError::Invalid("synth needs --text with --lexicon, or --labels".into())),
            };
            save_wav(&synth.waveform, &out)
        }
        Command::Enhance { model, labels, observed, side_f0, side_from_observed, align_on, out, report } => {
            let m = load_model(&model)?;
            let labs = parse_label_file(&labels).context(|| labels.display().to_string())?;
            let obs_wf = load_wav(&observed)?;
            let analysis = model_analysis_config(&m, &cfg.analysis);
            let side = match side_f0 {
                Some(p) if !side_from_observed => read_f0(&p).context(|| p.display().to_string())?,
                _ => estimate_f0(&obs_wf, &analysis).context(|| observed.display().to_string())?,
            };
            let align_wf = match &align_on {
                Some(p) => load_wav(p)?,
                None => obs_wf,
            };
            let gv = gv_for(cfg, &m);
            let synth = enhance_with_side_info(&m, &labs, &align_wf, &side, &analysis, gv.as_ref(), &cfg.excitation)
                .context(|| "enhancement".into())?;
            save_wav(&synth.waveform, &out)?;
            print_json(
                &json!({
                    "frames": synth.mel_cepstrum.len(),
                    "samples": synth.waveform.len(),
                    "alignment_log_likelihood": synth.alignment_log_likelihood,
                    "aligned_on": align_on.as_ref().map_or("observed", |_| "align_on"),
                    "side_f0": if side_from_observed { "observed" } else { "file" },
                }),
                report.as_deref(),
            )
        }
        Command::CorpusCheck { wav_dir, lab_dir, report } => {
            let qc = validate_corpus(&wav_dir, &lab_dir, &cfg.qc).context(|| "corpus check".into())?;
            let flagged = qc.flagged().count();
            print_json(&qc, report.as_deref())?;
            eprintln!("{} files, {flagged} flagged", qc.entries.len());
            Ok(())
        }
        Command::Metrics { reference, test, report } => {
            let r = load_wav(&reference)?;
            let t = load_wav(&test)?;
            let m = compare_waveforms(&r, &t, &cfg.analysis).context(|| "metrics".into())?;
            print_json(&m, report.as_deref())
        }
        Command::Spectrogram { input, out } => {
            let wf = load_wav(&input)?;
            let spec =
                spectrogram(&wf, &cfg.analysis.frame, cfg.analysis.fft_size).context(|| input.display().to_string())?;
            let (csv, pgm) = export_spectrogram(&spec, &out).context(|| out.display().to_string())?;
            print_json(&json!({ "csv": csv, "pgm": pgm, "frames": spec.frames(), "bins": spec.bins() }), None)
        }
        Command::Interfere { input, competing, out } => {
            let clean = load_wav(&input)?;
            let other = competing.as_deref().map(load_wav).transpose()?;
            let y = add_interference(&clean, &cfg.interference, other.as_ref()).context(|| "interference".into())?;
            save_wav(&y, &out)
        }
        Command::ToyCorpus { out, utterances } => {
            let tc = ToyConfig {
                utterances,
                seed: cfg.excitation.seed,
                frame_shift: cfg.analysis.frame.frame_shift,
                order: cfg.analysis.order,
                alpha: cfg.analysis.alpha,
                ..ToyConfig::default()
            };
            let corpus = toy_corpus(&tc).context(|| "toy corpus".into())?;
            write_toy_corpus(&corpus, &out).context(|| out.display().to_string())?;
            let seconds: f64 = corpus.utterances.iter().map(|u| u.waveform.duration_seconds()).sum();
            print_json(&json!({ "utterances": corpus.utterances.len(), "seconds": seconds }), None)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unpaired_corpus_is_invalid() {
        let dir = tempfile::tempdir().unwrap();
        let (w, l) = (dir.path().join("w"), dir.path().join("l"));
        std::fs::create_dir_all(&w).unwrap();
        std::fs::create_dir_all(&l).unwrap();
        std::fs::write(l.join("a.lab"), "sil\n").unwrap();
        assert!(paired_files(&w, &l).unwrap_err().is_invalid());
    }

}
