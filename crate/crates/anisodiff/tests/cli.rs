//! End-to-end tests that drive the compiled binary the way a shell
//! user would: every subcommand, the config file surface, exit codes
//! and artifact layout.

use std::path::PathBuf;
use std::process::{Command, Output};
use std::sync::OnceLock;

use anisodiff::rng::Prng;
use anisodiff::spectral::Waveform;
use anisodiff::wav::{write_wav, WavFormat};

const RATE: u32 = 8000;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_anisodiff"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary must launch")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_code(out: &Output, want: i32, context: &str) {
    assert_eq!(
        out.status.code(),
        Some(want),
        "{context}\nstdout:\n{}\nstderr:\n{}",
        stdout(out),
        stderr(out)
    );
}

/// Workspace with two synthetic pairs, a scaled-down config and one
/// finished training run shared by the read-only tests.
struct Fixture {
    #[allow(dead_code)]
    dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    manifest: PathBuf,
    checkpoint: PathBuf,
    noisy_wav: PathBuf,
    clean_wav: PathBuf,
}

fn tone(seed: u64, len: usize) -> Waveform {
    let mut rng = Prng::seed_from(seed);
    let f = rng.uniform(150.0, 400.0);
    let samples = (0..len)
        .map(|n| {
            let t = n as f64 / RATE as f64;
            0.4 * (2.0 * std::f64::consts::PI * f * t).sin()
                + 0.05 * rng.standard_normal()
        })
        .collect();
    Waveform::new(samples, RATE).unwrap()
}

fn noise(seed: u64, len: usize) -> Waveform {
    let mut rng = Prng::seed_from(seed);
    let samples = (0..len).map(|_| 0.3 * rng.standard_normal()).collect();
    Waveform::new(samples, RATE).unwrap()
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let root = dir.path().to_path_buf();

        let mut manifest_text = String::from("clean_path,noise_path,snr_db\n");
        for i in 0..2u64 {
            let clean = tone(40 + i, 600);
            let noisy = noise(60 + i, 1200);
            write_wav(&root.join(format!("c{i}.wav")), &clean, WavFormat::Float32).unwrap();
            write_wav(&root.join(format!("n{i}.wav")), &noisy, WavFormat::Float32).unwrap();
            manifest_text.push_str(&format!("c{i}.wav,n{i}.wav,{}\n", i as f64 * 5.0));
        }
        let manifest = root.join("manifest.csv");
        std::fs::write(&manifest, manifest_text).unwrap();

        // Enhancement input: an audible mixture the same length as the
        // clean reference, so the oracle-mask path lines up.
        let clean0 = tone(40, 600);
        let noise0 = noise(60, 1200);
        let mix = Waveform::new(
            clean0
                .samples
                .iter()
                .zip(noise0.samples.iter())
                .map(|(c, n)| c + 0.5 * n)
                .collect(),
            RATE,
        )
        .unwrap();
        write_wav(&root.join("mix0.wav"), &mix, WavFormat::Float32).unwrap();

        let config = root.join("tiny.toml");
        std::fs::write(
            &config,
            concat!(
                "sample_rate = 8000\n",
                "fft_size = 16\n",
                "hop = 8\n",
                "net_preset = \"toy\"\n",
                "steps = 4\n",
                "batch_size = 2\n",
                "learning_rate = 1e-3\n",
                "seed = 3\n",
            ),
        )
        .unwrap();

        let out_dir = root.join("run");
        let out = run(&[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--manifest",
            manifest.to_str().unwrap(),
            "--val-manifest",
            manifest.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_code(&out, 0, "training run must succeed");
        let text = stdout(&out);
        assert!(text.contains("loaded 2 training pairs"), "stdout: {text}");
        assert!(text.contains("validation:"), "stdout: {text}");

        Fixture {
            root: root.clone(),
            config,
            manifest,
            checkpoint: out_dir.join("checkpoint.ckpt"),
            noisy_wav: root.join("mix0.wav"),
            clean_wav: root.join("c0.wav"),
            dir,
        }
    })
}

// --- argument and input failures --------------------------------------

#[test]
fn no_arguments_is_a_usage_error() {
    let out = run(&[]);
    assert_code(&out, 2, "bare invocation");
    assert!(stderr(&out).contains("Usage"), "stderr: {}", stderr(&out));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = run(&["polish"]);
    assert_code(&out, 2, "unknown subcommand");
}

#[test]
fn help_exits_zero_and_lists_subcommands() {
    let out = run(&["--help"]);
    assert_code(&out, 0, "--help");
    let text = stdout(&out);
    for sub in ["train", "enhance", "evaluate", "schedule", "visualize"] {
        assert!(text.contains(sub), "help must list `{sub}`: {text}");
    }
}

#[test]
fn missing_manifest_exits_2_and_names_the_path() {
    let fx = fixture();
    let missing = fx.root.join("nowhere.csv");
    let out = run(&[
        "train",
        "--manifest",
        missing.to_str().unwrap(),
        "--out",
        fx.root.join("unused").to_str().unwrap(),
    ]);
    assert_code(&out, 2, "missing manifest");
    assert!(
        stderr(&out).contains("nowhere.csv"),
        "error must name the path: {}",
        stderr(&out)
    );
}

#[test]
fn unknown_config_key_exits_2_and_names_the_file() {
    let fx = fixture();
    let bad = fx.root.join("bad_key.toml");
    std::fs::write(&bad, "sample_rate = 8000\nwarp_speed = 9\n").unwrap();
    let out = run(&["schedule", "--config", bad.to_str().unwrap()]);
    assert_code(&out, 2, "unknown config key");
    let err = stderr(&out);
    assert!(err.contains("warp_speed"), "error must name the key: {err}");
    assert!(err.contains("bad_key.toml"), "error must name the file: {err}");
}

#[test]
fn bad_mode_value_exits_2() {
    let fx = fixture();
    let bad = fx.root.join("bad_mode.toml");
    std::fs::write(&bad, "guidance_mode = \"sideways\"\n").unwrap();
    let out = run(&["schedule", "--config", bad.to_str().unwrap()]);
    assert_code(&out, 2, "bad guidance mode");
    assert!(
        stderr(&out).contains("sideways"),
        "error must quote the value: {}",
        stderr(&out)
    );
}

#[test]
fn truncated_checkpoint_exits_2() {
    let fx = fixture();
    let stub = fx.root.join("stub.ckpt");
    std::fs::write(&stub, b"not a checkpoint").unwrap();
    let out = run(&[
        "enhance",
        "--checkpoint",
        stub.to_str().unwrap(),
        "--in",
        fx.noisy_wav.to_str().unwrap(),
        "--out",
        fx.root.join("unused.wav").to_str().unwrap(),
    ]);
    assert_code(&out, 2, "corrupt checkpoint");
}

// --- train artifacts ---------------------------------------------------

#[test]
fn train_writes_checkpoint_log_and_config_echo() {
    let fx = fixture();
    assert!(fx.checkpoint.is_file(), "checkpoint must exist");

    let log_path = fx.checkpoint.parent().unwrap().join("loss_log.jsonl");
    let log = std::fs::read_to_string(&log_path).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 4, "one JSONL row per optimizer step");
    for line in &lines {
        let row: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["step", "diffusion_loss", "cmen_loss"] {
            assert!(row.get(key).is_some(), "log row must carry `{key}`: {line}");
        }
    }

    let echo_path = fx.checkpoint.parent().unwrap().join("effective_config.toml");
    let echo = std::fs::read_to_string(&echo_path).unwrap();
    let parsed: toml::Value = toml::from_str(&echo).unwrap();
    assert_eq!(parsed["fft_size"].as_integer(), Some(16));
    assert_eq!(parsed["net_preset"].as_str(), Some("toy"));
    assert_eq!(parsed["T"].as_integer(), Some(6));
}

// --- enhance -----------------------------------------------------------

fn enhance_to(fx: &Fixture, out_name: &str, extra: &[&str]) -> Vec<u8> {
    let out_path = fx.root.join(out_name);
    let mut args = vec![
        "enhance",
        "--checkpoint",
        fx.checkpoint.to_str().unwrap(),
        "--in",
        fx.noisy_wav.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let out = run(&args);
    assert_code(&out, 0, "enhance run");
    let text = stdout(&out);
    assert!(text.contains("steps_used: 6"), "stdout: {text}");
    std::fs::read(&out_path).unwrap()
}

#[test]
fn enhance_is_seed_deterministic() {
    let fx = fixture();
    let a = enhance_to(fx, "e_a.wav", &["--seed", "5"]);
    let b = enhance_to(fx, "e_b.wav", &["--seed", "5"]);
    let c = enhance_to(fx, "e_c.wav", &["--seed", "6"]);
    assert_eq!(a, b, "same seed must give byte-identical output");
    assert_ne!(a, c, "different seeds must differ");
}

#[test]
fn noise_free_enhancement_ignores_the_seed() {
    let fx = fixture();
    let a = enhance_to(fx, "nf_a.wav", &["--noise-free", "--seed", "1"]);
    let b = enhance_to(fx, "nf_b.wav", &["--noise-free", "--seed", "2"]);
    assert_eq!(a, b, "noise-free output must not depend on the seed");
}

#[test]
fn enhance_accepts_an_oracle_clean_reference() {
    let fx = fixture();
    let clean = fx.clean_wav.to_str().unwrap().to_string();
    let bytes = enhance_to(fx, "e_oracle.wav", &["--oracle-clean", &clean, "--seed", "5"]);
    let plain = enhance_to(fx, "e_plain.wav", &["--seed", "5"]);
    assert_ne!(bytes, plain, "oracle mask must change the output");
}

// --- evaluate ----------------------------------------------------------

#[test]
fn evaluate_writes_a_structured_report() {
    let fx = fixture();
    let report = fx.root.join("report.json");
    let out = run(&[
        "evaluate",
        "--checkpoint",
        fx.checkpoint.to_str().unwrap(),
        "--manifest",
        fx.manifest.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
        "--seed",
        "2",
    ]);
    assert_code(&out, 0, "evaluate run");
    assert!(stdout(&out).contains("mean si-snr"), "stdout: {}", stdout(&out));

    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(doc["items"].as_array().unwrap().len(), 2);
    assert_eq!(doc["failed_items"].as_i64(), Some(0));
    for item in doc["items"].as_array().unwrap() {
        assert!(item["si_snr_enhanced"].is_number(), "item: {item}");
        assert!(item["error"].is_null(), "item must not fail: {item}");
    }
    // Slots for external metric suites exist but stay empty here.
    for key in ["pesq", "estoi", "dnsmos"] {
        assert!(doc["external"][key].is_null(), "external.{key} must be null");
    }
    assert!(doc["overall"]["count"].as_i64() == Some(2));
}

// --- schedule ----------------------------------------------------------

#[test]
fn schedule_prints_the_table_and_dumps_csv() {
    let fx = fixture();
    let csv_path = fx.root.join("schedule.csv");
    let out = run(&["schedule", "--dump", csv_path.to_str().unwrap()]);
    assert_code(&out, 0, "schedule run");
    let text = stdout(&out);
    assert!(
        text.contains("t,alpha_bar,alpha,beta,reverse_std_coeff"),
        "stdout: {text}"
    );
    assert_eq!(text.lines().filter(|l| l.starts_with(char::is_numeric)).count(), 6);

    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    let rows: Vec<Vec<f64>> = reader
        .records()
        .map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0][1], 0.001, "alpha_bar(1)");
    assert_eq!(rows[5][1], 0.999, "alpha_bar(6)");
    assert_eq!(rows[0][3], 1.0, "beta(1)");
    assert_eq!(rows[0][4], 0.0, "reverse noise vanishes at t = 1");
}

// --- visualize ---------------------------------------------------------

#[test]
fn visualize_emits_panels_for_each_supplied_input() {
    let fx = fixture();

    let solo_dir = fx.root.join("viz_solo");
    let out = run(&[
        "visualize",
        "--in",
        fx.noisy_wav.to_str().unwrap(),
        "--out",
        solo_dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0, "visualize without checkpoint");
    assert!(stdout(&out).contains("1 panels"), "stdout: {}", stdout(&out));
    assert!(solo_dir.join("noisy.png").is_file());

    let full_dir = fx.root.join("viz_full");
    let out = run(&[
        "visualize",
        "--in",
        fx.noisy_wav.to_str().unwrap(),
        "--clean",
        fx.clean_wav.to_str().unwrap(),
        "--checkpoint",
        fx.checkpoint.to_str().unwrap(),
        "--out",
        full_dir.to_str().unwrap(),
        "--seed",
        "4",
    ]);
    assert_code(&out, 0, "visualize with checkpoint");
    assert!(stdout(&out).contains("6 panels"), "stdout: {}", stdout(&out));
    for name in [
        "noisy.png",
        "clean.png",
        "prior_anisotropic.png",
        "enhanced_anisotropic.png",
        "prior_isotropic.png",
        "enhanced_isotropic.png",
    ] {
        assert!(full_dir.join(name).is_file(), "missing panel {name}");
    }
}

// --- config precedence -------------------------------------------------

#[test]
fn flags_override_config_file_values() {
    let fx = fixture();
    let out = run(&[
        "schedule",
        "--config",
        fx.config.to_str().unwrap(),
        "--variance-mode",
        "exact_posterior",
    ]);
    assert_code(&out, 0, "schedule with override");
    // The echoed configuration reflects the flag, not the file.
    let text = stdout(&out);
    assert!(
        text.contains("exact_posterior"),
        "echo must show the override: {text}"
    );
}
