//! Produces a structured evaluation report over a small synthetic
//! manifest: per-item si-snr, snr-band aggregates and empty slots for
//! external metric suites.
//!
//! Run with: cargo run --release --example evaluate_report

use anisodiff::data::load_manifest;
use anisodiff::diffusion::SamplerConfig;
use anisodiff::metrics::evaluate;
use anisodiff::nets::NetConfig;
use anisodiff::rng::Prng;
use anisodiff::schedule::ScheduleConfig;
use anisodiff::spectral::{SpectralConfig, Waveform};
use anisodiff::train::{TrainConfig, Trainer};
use anisodiff::wav::{write_wav, WavFormat};

const RATE: u32 = 8000;
const LEN: usize = 1200;

fn main() -> anisodiff::Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");

    // Three items across snr bands so the per-band aggregation has
    // something to group.
    let mut manifest = String::from("clean_path,noise_path,snr_db\n");
    for (i, snr) in [(0usize, -10.0f64), (1, 0.0), (2, 10.0)] {
        let mut rng = Prng::seed_from(i as u64);
        let f = rng.uniform(150.0, 350.0);
        let clean = Waveform::new(
            (0..LEN)
                .map(|n| {
                    let t = n as f64 / RATE as f64;
                    0.4 * (2.0 * std::f64::consts::PI * f * t).sin()
                })
                .collect(),
            RATE,
        )?;
        let noise = Waveform::new(
            (0..2 * LEN).map(|_| 0.3 * rng.standard_normal()).collect(),
            RATE,
        )?;
        write_wav(&dir.path().join(format!("c{i}.wav")), &clean, WavFormat::Float32)?;
        write_wav(&dir.path().join(format!("n{i}.wav")), &noise, WavFormat::Float32)?;
        manifest.push_str(&format!("c{i}.wav,n{i}.wav,{snr}\n"));
    }
    let manifest_path = dir.path().join("manifest.csv");
    std::fs::write(&manifest_path, manifest).map_err(|e| anisodiff::Error::io(&manifest_path, e))?;
    let entries = load_manifest(&manifest_path)?;

    // An untrained checkpoint still exercises the full pipeline; the
    // numbers are poor on purpose.
    let spectral = SpectralConfig {
        fft_size: 32,
        hop: 16,
        ..SpectralConfig::default()
    };
    let trainer = Trainer::new(
        &NetConfig::toy_scale(),
        &ScheduleConfig::default(),
        &spectral,
        &TrainConfig::default(),
        RATE,
    )?;
    let checkpoint = trainer.checkpoint();

    let report = evaluate(&entries, &checkpoint, &SamplerConfig::default(), 0)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}
