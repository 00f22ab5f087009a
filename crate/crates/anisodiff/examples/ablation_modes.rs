//! Compares sampler variants on one mixture: guidance shaping on, off,
//! or uniform; both reverse-variance conventions; both prior widths;
//! and the deterministic noise-free path.
//!
//! Run with: cargo run --release --example ablation_modes

use anisodiff::diffusion::{
    sample_prior, GuidanceMode, PriorStd, SamplerConfig,
};
use anisodiff::guidance::{guidance_from_mask, phase_sensitive_mask};
use anisodiff::rng::Prng;
use anisodiff::schedule::{NoiseSchedule, ScheduleConfig, VarianceMode};
use anisodiff::spectral::{compress, stft, SpectralConfig, Waveform};

const RATE: u32 = 8000;
const LEN: usize = 4000;

fn main() -> anisodiff::Result<()> {
    let spectral = SpectralConfig {
        fft_size: 126,
        hop: 63,
        ..SpectralConfig::default()
    };
    let mut rng = Prng::seed_from(3);
    let clean = Waveform::new(
        (0..LEN)
            .map(|n| {
                let t = n as f64 / RATE as f64;
                0.5 * (2.0 * std::f64::consts::PI * 180.0 * t).sin()
                    + 0.25 * (2.0 * std::f64::consts::PI * 360.0 * t).sin()
            })
            .collect(),
        RATE,
    )?;
    let mixture = Waveform::new(
        clean
            .samples
            .iter()
            .map(|c| c + 0.4 * rng.standard_normal())
            .collect(),
        RATE,
    )?;

    let x0 = compress(&stft(&clean, &spectral)?)?;
    let y = compress(&stft(&mixture, &spectral)?)?;
    let mask = phase_sensitive_mask(&x0, &y)?;
    let g = guidance_from_mask(&mask);
    let schedule = NoiseSchedule::geometric(ScheduleConfig::default())?;

    // How strongly the prior perturbs y in each class of bins, per
    // configuration, averaged over repeated draws.
    println!(
        "{:<34} {:>14} {:>15} {:>7}",
        "sampler variant", "noise-dominant", "speech-dominant", "ratio"
    );
    let variants: Vec<(String, SamplerConfig)> = vec![
        (
            "anisotropic (default)".into(),
            SamplerConfig::default(),
        ),
        (
            "isotropic".into(),
            SamplerConfig {
                guidance_mode: GuidanceMode::Isotropic,
                ..SamplerConfig::default()
            },
        ),
        (
            "no guidance shaping".into(),
            SamplerConfig {
                guidance_mode: GuidanceMode::None,
                ..SamplerConfig::default()
            },
        ),
        (
            "anisotropic, marginal prior".into(),
            SamplerConfig {
                prior_std: PriorStd::Marginal,
                ..SamplerConfig::default()
            },
        ),
        (
            "anisotropic, exact posterior".into(),
            SamplerConfig {
                variance_mode: VarianceMode::ExactPosterior,
                ..SamplerConfig::default()
            },
        ),
        (
            "noise-free".into(),
            SamplerConfig {
                noise_free: true,
                ..SamplerConfig::default()
            },
        ),
    ];

    for (label, cfg) in &variants {
        let mut prng = Prng::seed_from(99);
        let (mut dn, mut nn, mut ds, mut ns) = (0.0, 0usize, 0.0, 0usize);
        for _ in 0..20 {
            let prior = sample_prior(&y, &g, &schedule, cfg, &mut prng)?;
            for (idx, m) in mask.values().indexed_iter() {
                let dev = (prior.values[idx] - y.values[idx]).norm();
                if *m < 0.1 {
                    dn += dev;
                    nn += 1;
                } else if *m > 0.9 {
                    ds += dev;
                    ns += 1;
                }
            }
        }
        let (noise_dev, speech_dev) = (dn / nn.max(1) as f64, ds / ns.max(1) as f64);
        let ratio = if speech_dev > 0.0 {
            format!("{:.2}", noise_dev / speech_dev)
        } else {
            "-".into()
        };
        println!("{label:<34} {noise_dev:>14.5} {speech_dev:>15.5} {ratio:>7}");
    }

    println!();
    println!("anisotropic shaping concentrates perturbation where the mask says noise;");
    println!("isotropic spreads it evenly; noise-free leaves the mixture untouched");
    Ok(())
}
