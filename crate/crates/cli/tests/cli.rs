use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn hmmse(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hmmse")).current_dir(cwd).args(args).output().expect("binary runs")
}

fn ok(cwd: &Path, args: &[&str]) -> String {
    let out = hmmse(cwd, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn sha(path: &Path) -> String {
    let bytes = std::fs::read(path).unwrap();
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_succeeds_without_touching_the_filesystem() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["--help"][..], &["enhance", "--help"], &["help", "train"]] {
        let out = hmmse(dir.path(), args);
        assert_eq!(out.status.code(), Some(0), "{args:?}");
        assert!(!out.stdout.is_empty());
    }
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let unknown_flag = hmmse(d, &["resynth", "--in", "a.wav", "--out", "b.wav", "--bogus"]);
    assert_eq!(unknown_flag.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown_flag.stderr).contains("Usage"));
    assert_eq!(hmmse(d, &["transmogrify"]).status.code(), Some(1));

    std::fs::write(d.join("bad.cfg"), "alpha = 1.5\n").unwrap();
    let bad = hmmse(d, &["--config", "bad.cfg", "resynth", "--in", "a.wav", "--out", "b.wav"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("alpha"));
    assert_eq!(hmmse(d, &["--set", "colour=red", "resynth", "--in", "a.wav", "--out", "b.wav"]).status.code(), Some(1));

    let missing = hmmse(d, &["resynth", "--in", "missing.wav", "--out", "b.wav"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(!d.join("b.wav").exists());
}

/// A toy corpus, a model trained on it, and the artifacts every later step needs.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        ok(&root, &["--seed", "3", "toy-corpus", "--out", "toy", "--utterances", "8"]);
        std::fs::write(root.join("fast.cfg"), "monophone_iterations = 3\ncontext_iterations = 1\ncontext = triphone\n")
            .unwrap();
        ok(&root, &["--config", "fast.cfg", "train", "--wav-dir", "toy/wav", "--lab-dir", "toy/lab", "--out", "m.mdl"]);
        Self { _dir: dir, root }
    }
}

#[test]
fn pipeline_outputs_are_bit_identical_across_runs() {
    let fx = Fixture::new();
    let r = &fx.root;
    let wav = "toy/wav/toy000.wav";
    let lab = "toy/lab/toy000.lab";
    let run_all = |tag: &str| -> Vec<(String, String)> {
        let o = |name: &str| format!("{tag}_{name}");
        ok(r, &["--seed", "5", "resynth", "--in", wav, "--out", &o("resynth.wav")]);
        ok(r, &["analyze", "--in", wav, "--f0", &o("clean.f0"), "--mgc", &o("clean.mgc")]);
        ok(r, &["--set", "snr_db=0", "--seed", "5", "interfere", "--in", wav, "--out", &o("noisy.wav")]);
        ok(r, &["--seed", "5", "synth", "--model", "m.mdl", "--text", "miss me", "--lexicon", "toy/lexicon.txt", "--out", &o("synth.wav")]);
        ok(r, &["--seed", "5", "synth", "--model", "m.mdl", "--labels", lab, "--out", &o("synth_lab.wav")]);
        ok(r, &["align", "--model", "m.mdl", "--labels", lab, "--in", wav, "--out", &o("aligned.lab")]);
        ok(
            r,
            &[
                "--seed", "5", "enhance", "--model", "m.mdl", "--labels", lab, "--observed", &o("noisy.wav"), "--side-f0",
                &o("clean.f0"), "--align-on", wav, "--out", &o("enhanced.wav"), "--report", &o("enhance.json"),
            ],
        );
        ok(r, &["metrics", "--ref", &o("resynth.wav"), "--test", &o("enhanced.wav"), "--report", &o("metrics.json")]);
        ok(r, &["spectrogram", "--in", &o("enhanced.wav"), "--out", &o("spec")]);
        ok(r, &["corpus-check", "--wav-dir", "toy/wav", "--lab-dir", "toy/lab", "--report", &o("qc.json")]);
        ok(r, &["--workers", "2", "--config", "fast.cfg", "train", "--wav-dir", "toy/wav", "--lab-dir", "toy/lab", "--out", &o("m.mdl")]);
        [
            "resynth.wav", "clean.f0", "clean.mgc", "noisy.wav", "synth.wav", "synth_lab.wav", "aligned.lab",
            "enhanced.wav", "enhance.json", "metrics.json", "spec.csv", "spec.pgm", "qc.json", "m.mdl",
        ]
        .iter()
        .map(|n| (n.to_string(), sha(&r.join(o(n)))))
        .collect()
    };
    let first = run_all("a");
    let second = run_all("b");
    assert_eq!(first, second);
    // the model trained with two workers equals the one trained on all cores
    assert_eq!(sha(&r.join("a_m.mdl")), sha(&r.join("m.mdl")));

    let other_seed = r.join("c_resynth.wav");
    ok(r, &["--seed", "6", "resynth", "--in", wav, "--out", s(&other_seed)]);
    assert_ne!(sha(&other_seed), first[0].1);
}

#[test]
fn seed_precedence_and_side_from_observed() {
    let fx = Fixture::new();
    let r = &fx.root;
    let wav = "toy/wav/toy001.wav";
    std::fs::write(r.join("seed.cfg"), "seed = 1\n").unwrap();
    ok(r, &["--config", "seed.cfg", "--set", "seed=2", "resynth", "--in", wav, "--out", "x.wav"]);
    ok(r, &["--seed", "2", "resynth", "--in", wav, "--out", "y.wav"]);
    ok(r, &["--config", "seed.cfg", "resynth", "--in", wav, "--out", "z.wav"]);
    assert_eq!(sha(&r.join("x.wav")), sha(&r.join("y.wav")));
    assert_ne!(sha(&r.join("x.wav")), sha(&r.join("z.wav")));

    let report = ok(
        r,
        &["enhance", "--model", "m.mdl", "--labels", "toy/lab/toy001.lab", "--observed", wav, "--side-from-observed", "--out", "e.wav"],
    );
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(v["side_f0"], "observed");
    assert!(v["alignment_log_likelihood"].as_f64().unwrap().is_finite());
    let samples = v["samples"].as_u64().unwrap();
    assert_eq!(samples, 80 * v["frames"].as_u64().unwrap());
}
