use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_contextnet"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn contextnet")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// 16-bit mono PCM.
fn wav_bytes(samples: &[f64], rate: u32) -> Vec<u8> {
    let data: Vec<u8> = samples
        .iter()
        .flat_map(|s| ((s.clamp(-1.0, 1.0) * 32767.0) as i16).to_le_bytes())
        .collect();
    let mut b = Vec::new();
    b.extend_from_slice(b"RIFF");
    b.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
    b.extend_from_slice(b"WAVEfmt ");
    b.extend_from_slice(&16u32.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&rate.to_le_bytes());
    b.extend_from_slice(&(rate * 2).to_le_bytes());
    b.extend_from_slice(&2u16.to_le_bytes());
    b.extend_from_slice(&16u16.to_le_bytes());
    b.extend_from_slice(b"data");
    b.extend_from_slice(&(data.len() as u32).to_le_bytes());
    b.extend(data);
    b
}

fn write_wav(dir: &Path, name: &str, samples: &[f64]) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, wav_bytes(samples, 16_000)).unwrap();
    p
}

fn tone(secs: f64) -> Vec<f64> {
    let n = (secs * 16_000.0) as usize;
    (0..n).map(|i| 0.3 * (i as f64 * 0.07).sin()).collect()
}

const TINY: &str = r#"{
  "task": {"train_utterances": 12, "dev_utterances": 4},
  "train": {"max_steps": 4, "eval_interval": 2, "batch_size": 2, "warmup_steps": 2}
}"#;

fn train_tiny(dir: &Path) -> Output {
    let cfg = dir.join("tiny.json");
    std::fs::write(&cfg, TINY).unwrap();
    run(&["train-toy", "--config", cfg.to_str().unwrap(), "--out", dir.join("run").to_str().unwrap()])
}

fn total_params(alpha: &str) -> u64 {
    let o = run(&["analyze", "--alpha", alpha, "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let key = "\"total_params\":";
    let at = text.find(key).expect("total_params in json") + key.len();
    text[at..].trim_start().split(|c: char| !c.is_ascii_digit()).next().unwrap().parse().unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
}

#[test]
fn analyze_reports_and_scales() {
    let o = run(&["analyze"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(!stdout(&o).is_empty());
    assert!(total_params("0.5") < total_params("1.0"));
}

#[test]
fn analyze_usage_errors_exit_two() {
    for args in [
        &["analyze", "--reduction", "4x"][..],
        &["analyze", "--kernel", "4"],
        &["analyze", "--alpha", "0"],
        &["analyze", "--alpha", "-1"],
        &["no-such-command"],
    ] {
        assert_eq!(run(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn features_of_one_second() {
    let dir = tempfile::tempdir().unwrap();
    let wav = write_wav(dir.path(), "a.wav", &tone(1.0));
    let out = dir.path().join("a.feat");
    let o = run(&["features", wav.to_str().unwrap(), out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("T=98"), "{}", stdout(&o));
    assert!(out.exists());
}

#[test]
fn features_of_empty_audio_warns() {
    let dir = tempfile::tempdir().unwrap();
    let wav = write_wav(dir.path(), "e.wav", &[]);
    let o = run(&["features", wav.to_str().unwrap(), dir.path().join("e.feat").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("T=0"));
    assert!(stderr(&o).contains("warning"));
}

#[test]
fn corrupt_header_names_chunk() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = wav_bytes(&tone(0.1), 16_000);
    bytes[12..16].copy_from_slice(b"junk");
    bytes.truncate(30);
    let p = dir.path().join("bad.wav");
    std::fs::write(&p, bytes).unwrap();
    let o = run(&["features", p.to_str().unwrap(), dir.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("fmt"), "{}", stderr(&o));
}

#[test]
fn unwritable_output_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let wav = write_wav(dir.path(), "a.wav", &tone(0.2));
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let o = run(&["features", wav.to_str().unwrap(), blocker.join("out.feat").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["train-toy", "--max-steps", "1", "--out", blocker.join("run").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn invalid_thread_count_is_usage_error() {
    let o = bin().args(["analyze"]).env("CONTEXTNET_THREADS", "zero").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn tiny_training_is_repeatable_and_decodes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = train_tiny(d.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for f in ["checkpoint.cnck", "metrics.jsonl", "vocab.txt", "config.json"] {
        let x = std::fs::read(a.path().join("run").join(f)).unwrap();
        let y = std::fs::read(b.path().join("run").join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between identical runs");
    }

    let run_dir = a.path().join("run");
    let ckpt = run_dir.join("checkpoint.cnck");
    let vocab = run_dir.join("vocab.txt");
    let wav = write_wav(a.path(), "t.wav", &tone(0.5));

    let o = run(&["decode", ckpt.to_str().unwrap(), wav.to_str().unwrap(), "--vocab", vocab.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let tokens: Vec<String> = std::fs::read_to_string(&vocab).unwrap().lines().map(str::to_owned).collect();
    for tok in stdout(&o).split_whitespace() {
        assert!(tokens[1..].iter().any(|t| t == tok), "unknown token {tok}");
    }

    // no frames at all: nothing to emit
    let empty = write_wav(a.path(), "e.wav", &[]);
    let o = run(&["decode", ckpt.to_str().unwrap(), empty.to_str().unwrap(), "--vocab", vocab.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), "\n");

    let missing = a.path().join("nope.txt");
    let o = run(&["decode", ckpt.to_str().unwrap(), wav.to_str().unwrap(), "--vocab", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    let small = a.path().join("small.txt");
    std::fs::write(&small, "<b>\nx\ny\n").unwrap();
    let o = run(&["decode", ckpt.to_str().unwrap(), wav.to_str().unwrap(), "--vocab", small.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    assert!(msg.contains('3') && msg.contains(&tokens.len().to_string()), "{msg}");
}
