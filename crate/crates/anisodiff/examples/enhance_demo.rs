//! Full loop in one process: synthesize a noisy mixture, train briefly,
//! enhance, and report the si-snr change plus the sampler's decisions.
//! Uses a short clip and toy networks so it finishes in about a minute.
//!
//! Run with: cargo run --release --example enhance_demo

use anisodiff::data::{load_manifest, make_pair, TrainPair};
use anisodiff::diffusion::SamplerConfig;
use anisodiff::enhance::Enhancer;
use anisodiff::metrics::si_snr;
use anisodiff::nets::NetConfig;
use anisodiff::rng::Prng;
use anisodiff::schedule::ScheduleConfig;
use anisodiff::spectral::{SpectralConfig, Waveform};
use anisodiff::train::{TrainConfig, Trainer};
use anisodiff::wav::{write_wav, WavFormat};

const RATE: u32 = 8000;
const LEN: usize = 1500;

fn voiced(index: usize) -> Waveform {
    let f0 = 110.0 + 40.0 * index as f64;
    Waveform::new(
        (0..LEN)
            .map(|n| {
                let t = n as f64 / RATE as f64;
                let env = 0.6 + 0.4 * (2.0 * std::f64::consts::PI * 2.3 * t).sin();
                let mut s = 0.0;
                for h in 1..=4 {
                    s += 0.5f64.powi(h - 1) * (2.0 * std::f64::consts::PI * f0 * h as f64 * t).sin();
                }
                0.3 * env * s
            })
            .collect(),
        RATE,
    )
    .unwrap()
}

fn rumble(seed: u64) -> Waveform {
    let mut rng = Prng::seed_from(seed);
    let mut prev = 0.0;
    Waveform::new(
        (0..2 * LEN)
            .map(|_| {
                prev = 0.85 * prev + 0.15 * rng.standard_normal();
                0.9 * prev
            })
            .collect(),
        RATE,
    )
    .unwrap()
}

fn main() -> anisodiff::Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut manifest = String::from("clean_path,noise_path,snr_db\n");
    for i in 0..2usize {
        write_wav(&dir.path().join(format!("c{i}.wav")), &voiced(i), WavFormat::Float32)?;
        write_wav(&dir.path().join(format!("n{i}.wav")), &rumble(80 + i as u64), WavFormat::Float32)?;
        manifest.push_str(&format!("c{i}.wav,n{i}.wav,0\n"));
    }
    let manifest_path = dir.path().join("manifest.csv");
    std::fs::write(&manifest_path, manifest).map_err(|e| anisodiff::Error::io(&manifest_path, e))?;

    let spectral = SpectralConfig {
        fft_size: 62,
        hop: 31,
        ..SpectralConfig::default()
    };
    let entries = load_manifest(&manifest_path)?;
    let pairs: Vec<TrainPair> = entries
        .iter()
        .map(|e| make_pair(e, 0, &spectral, RATE, None))
        .collect::<anisodiff::Result<_>>()?;

    println!("training 300 steps on 2 overlapping pairs (toy networks)...");
    let train_cfg = TrainConfig {
        batch_size: 2,
        learning_rate: 1e-3,
        steps: 300,
        seed: 0,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(
        &NetConfig::toy_scale(),
        &ScheduleConfig::default(),
        &spectral,
        &train_cfg,
        RATE,
    )?;
    trainer.train_loop(&pairs, None, None)?;

    let checkpoint = trainer.checkpoint();
    let enhancer = Enhancer::new(&checkpoint)?;
    println!();
    for (i, pair) in pairs.iter().enumerate() {
        let cfg = SamplerConfig {
            seed: i as u64,
            ..SamplerConfig::default()
        };
        let result = enhancer.enhance(&pair.mixture, &cfg)?;
        let before = si_snr(&pair.mixture, &pair.clean)?;
        let after = si_snr(&result.enhanced, &pair.clean)?;
        let mean_mask: f64 =
            result.mask.values().iter().sum::<f64>() / result.mask.values().len() as f64;
        println!(
            "item {i}: si-snr {before:>6.2} dB -> {after:>6.2} dB  ({} denoiser evals, mean mask {mean_mask:.3})",
            result.steps_used
        );

        let out = dir.path().join(format!("enhanced{i}.wav"));
        write_wav(&out, &result.enhanced, WavFormat::Float32)?;
        println!("         wrote {}", out.display());
    }
    println!();
    println!("a longer run (see the training subcommand) pushes the gain well past 5 dB");
    Ok(())
}
