//! Trains both networks for a handful of steps on two synthetic pairs
//! and prints the loss trajectory. Small enough to finish in seconds;
//! the checkpoint lands in a temporary directory.
//!
//! Run with: cargo run --release --example train_smoke

use anisodiff::data::{load_manifest, make_pair, TrainPair};
use anisodiff::nets::NetConfig;
use anisodiff::rng::Prng;
use anisodiff::schedule::ScheduleConfig;
use anisodiff::spectral::{SpectralConfig, Waveform};
use anisodiff::train::{TrainConfig, Trainer};
use anisodiff::wav::{write_wav, WavFormat};

const RATE: u32 = 8000;
const LEN: usize = 1200;

fn tone(seed: u64) -> Waveform {
    let mut rng = Prng::seed_from(seed);
    let f = rng.uniform(120.0, 300.0);
    Waveform::new(
        (0..LEN)
            .map(|n| {
                let t = n as f64 / RATE as f64;
                0.4 * (2.0 * std::f64::consts::PI * f * t).sin()
                    + 0.2 * (2.0 * std::f64::consts::PI * 2.0 * f * t).sin()
            })
            .collect(),
        RATE,
    )
    .unwrap()
}

fn hiss(seed: u64) -> Waveform {
    let mut rng = Prng::seed_from(seed);
    Waveform::new(
        (0..2 * LEN).map(|_| 0.4 * rng.standard_normal()).collect(),
        RATE,
    )
    .unwrap()
}

fn main() -> anisodiff::Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut manifest = String::from("clean_path,noise_path,snr_db\n");
    for i in 0..2u64 {
        write_wav(&dir.path().join(format!("c{i}.wav")), &tone(i), WavFormat::Float32)?;
        write_wav(&dir.path().join(format!("n{i}.wav")), &hiss(50 + i), WavFormat::Float32)?;
        manifest.push_str(&format!("c{i}.wav,n{i}.wav,0\n"));
    }
    let manifest_path = dir.path().join("manifest.csv");
    std::fs::write(&manifest_path, manifest).map_err(|e| anisodiff::Error::io(&manifest_path, e))?;

    let spectral = SpectralConfig {
        fft_size: 32,
        hop: 16,
        ..SpectralConfig::default()
    };
    let entries = load_manifest(&manifest_path)?;
    let pairs: Vec<TrainPair> = entries
        .iter()
        .map(|e| make_pair(e, 0, &spectral, RATE, None))
        .collect::<anisodiff::Result<_>>()?;

    let train_cfg = TrainConfig {
        batch_size: 2,
        learning_rate: 1e-3,
        steps: 40,
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
    println!(
        "toy networks: {} mask-net + {} denoiser parameters",
        trainer.cmen.params.count_params(),
        trainer.denoiser.params.count_params()
    );

    let ckpt_path = dir.path().join("checkpoint.ckpt");
    let mut log = Vec::new();
    trainer.train_loop(&pairs, Some(&mut log), Some(&ckpt_path))?;

    println!();
    println!("{:>4}  {:>14}  {:>14}", "step", "diffusion", "mask");
    for line in String::from_utf8_lossy(&log).lines() {
        let row: serde_json::Value = serde_json::from_str(line).expect("log rows are json");
        let step = row["step"].as_u64().unwrap();
        if step % 5 == 0 || step == 1 {
            println!(
                "{:>4}  {:>14.6e}  {:>14.6e}",
                step,
                row["diffusion_loss"].as_f64().unwrap(),
                row["cmen_loss"].as_f64().unwrap()
            );
        }
    }

    let (d, c) = trainer.eval_losses(&pairs)?;
    println!();
    println!("held-in evaluation: diffusion {d:.6e}, mask {c:.6e}");
    println!("checkpoint written to {}", ckpt_path.display());
    Ok(())
}
