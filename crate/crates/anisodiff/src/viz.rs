//! Static spectrogram images for inspecting pipeline states.
//!
//! Each image maps one spectrogram to one pixel per T-F bin: frames on
//! the horizontal axis, frequency on the vertical with the lowest bin
//! at the bottom. Magnitudes are shown on a log scale over a 60 dB
//! window below the peak.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::diffusion::{GuidanceMode, SamplerConfig};
use crate::enhance::Enhancer;
use crate::error::{Error, Result};
use crate::spectral::{decompress, stft, ComplexSpectrogram, Domain, SpectralConfig, Waveform};
use crate::train::Checkpoint;

const DB_WINDOW: f64 = 60.0;

/// Five-stop gradient from near-black blue up to bright yellow.
const COLOR_STOPS: [[f64; 3]; 5] = [
    [13.0, 8.0, 45.0],
    [46.0, 65.0, 135.0],
    [38.0, 130.0, 142.0],
    [110.0, 192.0, 85.0],
    [250.0, 231.0, 85.0],
];

fn colormap(u: f64) -> Rgb<u8> {
    let u = u.clamp(0.0, 1.0) * (COLOR_STOPS.len() - 1) as f64;
    let i = (u.floor() as usize).min(COLOR_STOPS.len() - 2);
    let frac = u - i as f64;
    let mut rgb = [0u8; 3];
    for (c, v) in rgb.iter_mut().enumerate() {
        let lo = COLOR_STOPS[i][c];
        let hi = COLOR_STOPS[i + 1][c];
        *v = (lo + frac * (hi - lo)).round() as u8;
    }
    Rgb(rgb)
}

/// Renders log magnitudes, one pixel per bin, low frequencies at the
/// bottom.
pub fn spectrogram_image(s: &ComplexSpectrogram) -> RgbImage {
    let (k, f) = s.values.dim();
    let db = |v: f64| 20.0 * (v.max(1e-12)).log10();
    let peak_db = s
        .values
        .iter()
        .map(|v| db(v.norm()))
        .fold(f64::NEG_INFINITY, f64::max);
    let floor_db = peak_db - DB_WINDOW;
    let mut img = RgbImage::new(k as u32, f as u32);
    for ((frame, bin), v) in s.values.indexed_iter() {
        let u = (db(v.norm()) - floor_db) / DB_WINDOW;
        img.put_pixel(frame as u32, (f - 1 - bin) as u32, colormap(u));
    }
    img
}

pub fn save_spectrogram_png(s: &ComplexSpectrogram, path: &Path) -> Result<()> {
    spectrogram_image(s)
        .save(path)
        .map_err(|e| Error::InvalidInput(format!("cannot write image {}: {e}", path.display())))
}

fn wave_panel(w: &Waveform, cfg: &SpectralConfig, path: &Path) -> Result<()> {
    save_spectrogram_png(&stft(w, cfg)?, path)
}

fn state_panel(s: &ComplexSpectrogram, path: &Path) -> Result<()> {
    let raw = match s.domain {
        Domain::Compressed => decompress(s)?,
        Domain::Raw => s.clone(),
    };
    save_spectrogram_png(&raw, path)
}

/// Writes the panel set for one utterance into `out_dir` and returns
/// the created paths.
///
/// The noisy spectrogram is always written. A clean reference adds its
/// own panel. A checkpoint adds four more: the sampler's start and end
/// states under anisotropic and under isotropic guidance, all from one
/// seed, so the panels differ only in how the noise was shaped.
pub fn visualize(
    noisy: &Waveform,
    clean: Option<&Waveform>,
    checkpoint: Option<&Checkpoint>,
    cfg: &SamplerConfig,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let spectral = checkpoint
        .map(|c| c.spectral)
        .unwrap_or_default();
    let mut written = Vec::new();
    let mut emit = |path: PathBuf| {
        written.push(path.clone());
        path
    };

    wave_panel(noisy, &spectral, &emit(out_dir.join("noisy.png")))?;
    if let Some(clean) = clean {
        wave_panel(clean, &spectral, &emit(out_dir.join("clean.png")))?;
    }
    if let Some(ckpt) = checkpoint {
        let enhancer = Enhancer::new(ckpt)?;
        for (mode, tag) in [
            (GuidanceMode::Anisotropic, "anisotropic"),
            (GuidanceMode::Isotropic, "isotropic"),
        ] {
            let run_cfg = SamplerConfig {
                guidance_mode: mode,
                ..*cfg
            };
            let out = enhancer.enhance(noisy, &run_cfg)?;
            state_panel(
                &out.prior_state,
                &emit(out_dir.join(format!("prior_{tag}.png"))),
            )?;
            state_panel(
                &out.final_state,
                &emit(out_dir.join(format!("enhanced_{tag}.png"))),
            )?;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::NetConfig;
    use crate::rng::Prng;
    use crate::schedule::ScheduleConfig;
    use crate::train::{TrainConfig, Trainer};
    use ndarray::Array2;
    use num_complex::Complex64;

    fn small_spec(frames: usize, bins: usize) -> ComplexSpectrogram {
        let mut rng = Prng::seed_from(4);
        ComplexSpectrogram {
            values: Array2::from_shape_fn((frames, bins), |_| rng.complex_standard_normal()),
            domain: Domain::Raw,
            config: SpectralConfig::default(),
            sample_rate: 8000,
        }
    }

    #[test]
    fn image_has_one_pixel_per_bin() {
        let s = small_spec(40, 17);
        let img = spectrogram_image(&s);
        assert_eq!(img.width(), 40);
        assert_eq!(img.height(), 17);
    }

    #[test]
    fn colormap_endpoints_and_monotone_brightness() {
        let lo = colormap(0.0);
        let hi = colormap(1.0);
        let brightness = |c: &Rgb<u8>| c.0.iter().map(|&v| v as u32).sum::<u32>();
        assert!(brightness(&hi) > brightness(&lo));
        let mut prev = brightness(&colormap(0.0));
        for i in 1..=20 {
            let b = brightness(&colormap(i as f64 / 20.0));
            assert!(b >= prev, "brightness dipped at {i}");
            prev = b;
        }
    }

    #[test]
    fn silent_spectrogram_renders_without_panicking() {
        let mut s = small_spec(8, 8);
        for v in s.values.iter_mut() {
            *v = Complex64::new(0.0, 0.0);
        }
        let img = spectrogram_image(&s);
        assert_eq!((img.width(), img.height()), (8, 8));
    }

    #[test]
    fn png_round_trips_through_the_file_system() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spec.png");
        save_spectrogram_png(&small_spec(12, 9), &path).unwrap();
        let loaded = image::open(&path).unwrap();
        assert_eq!(loaded.width(), 12);
        assert_eq!(loaded.height(), 9);
    }

    fn tone(len: usize, rate: u32) -> Waveform {
        let mut rng = Prng::seed_from(6);
        Waveform::new(
            (0..len)
                .map(|n| {
                    0.4 * (std::f64::consts::TAU * 300.0 * n as f64 / rate as f64).sin()
                        + 0.05 * rng.standard_normal()
                })
                .collect(),
            rate,
        )
        .unwrap()
    }

    #[test]
    fn panel_counts_match_the_available_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let spectral = SpectralConfig {
            fft_size: 8,
            hop: 4,
            ..SpectralConfig::default()
        };
        let ckpt = Trainer::new(
            &NetConfig::toy_scale(),
            &ScheduleConfig::default(),
            &spectral,
            &TrainConfig {
                seed: 1,
                ..TrainConfig::default()
            },
            8000,
        )
        .unwrap()
        .checkpoint();
        let noisy = tone(96, 8000);

        let only = visualize(
            &noisy,
            None,
            None,
            &SamplerConfig::default(),
            &dir.path().join("noisy_only"),
        )
        .unwrap();
        assert_eq!(only.len(), 1);

        let full = visualize(
            &noisy,
            Some(&noisy),
            Some(&ckpt),
            &SamplerConfig::default(),
            &dir.path().join("full"),
        )
        .unwrap();
        assert_eq!(full.len(), 6);
        for p in &full {
            assert!(p.is_file(), "{} missing", p.display());
        }
    }
}
