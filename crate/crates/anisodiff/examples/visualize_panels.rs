//! Renders spectrogram panels for a synthetic mixture: the inputs, the
//! blurred prior under both guidance modes, and the enhanced outputs.
//! PNGs land in target/visualize_panels/.
//!
//! Run with: cargo run --release --example visualize_panels

use anisodiff::diffusion::SamplerConfig;
use anisodiff::nets::NetConfig;
use anisodiff::rng::Prng;
use anisodiff::schedule::ScheduleConfig;
use anisodiff::spectral::{SpectralConfig, Waveform};
use anisodiff::train::{TrainConfig, Trainer};
use anisodiff::viz::visualize;

const RATE: u32 = 8000;
const LEN: usize = 4000;

fn main() -> anisodiff::Result<()> {
    let mut rng = Prng::seed_from(42);
    let clean = Waveform::new(
        (0..LEN)
            .map(|n| {
                let t = n as f64 / RATE as f64;
                let sweep = 200.0 + 600.0 * t;
                0.5 * (2.0 * std::f64::consts::PI * sweep * t).sin()
            })
            .collect(),
        RATE,
    )?;
    let noisy = Waveform::new(
        clean
            .samples
            .iter()
            .map(|c| c + 0.3 * rng.standard_normal())
            .collect(),
        RATE,
    )?;

    // A fresh checkpoint is enough to drive the pipeline end to end.
    let spectral = SpectralConfig {
        fft_size: 126,
        hop: 32,
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

    let out_dir = std::path::Path::new("target/visualize_panels");
    let written = visualize(
        &noisy,
        Some(&clean),
        Some(&checkpoint),
        &SamplerConfig::default(),
        out_dir,
    )?;

    println!("{} panels:", written.len());
    for path in &written {
        println!("  {}", path.display());
    }
    println!();
    println!("prior panels show the mode-dependent blur; enhanced panels show the output");
    Ok(())
}
