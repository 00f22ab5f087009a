//! Training and evaluation data: manifests, mixing, pair assembly.
//!
//! A manifest is a CSV file with header `clean_path,noise_path,snr_db`.
//! Paths are resolved relative to the manifest's directory. The SNR
//! column is either a single value (`5`) or an inclusive range
//! (`-5:10`) sampled uniformly per item.
//!
//! [`make_pair`] is a pure function of `(entry, seed)`: loading,
//! resampling, cropping, SNR draw, mixing, peak normalization and the
//! spectral transform all derive their randomness from the entry and
//! the seed, so a pair can be reproduced bit for bit.

use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::{phase_sensitive_mask, Mask};
use crate::rng::Prng;
use crate::spectral::{compress, normalize, stft, ComplexSpectrogram, SpectralConfig, Waveform};
use crate::wav::read_wav;

/// Target signal-to-noise ratio for one manifest row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SnrSpec {
    Point(f64),
    Range { lo: f64, hi: f64 },
}

impl SnrSpec {
    pub fn draw(&self, rng: &mut Prng) -> f64 {
        match self {
            SnrSpec::Point(v) => *v,
            SnrSpec::Range { lo, hi } => rng.uniform(*lo, *hi),
        }
    }
}

impl std::str::FromStr for SnrSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parse_num = |p: &str| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| format!("`{p}` is not a number"))
                .and_then(|v| {
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(format!("`{p}` is not finite"))
                    }
                })
        };
        match s.split(':').collect::<Vec<_>>().as_slice() {
            [one] => Ok(SnrSpec::Point(parse_num(one)?)),
            [lo, hi] => {
                let lo = parse_num(lo)?;
                let hi = parse_num(hi)?;
                if lo > hi {
                    return Err(format!("snr range {lo}:{hi} has lo > hi"));
                }
                Ok(SnrSpec::Range { lo, hi })
            }
            _ => Err(format!("`{s}` is not a number or lo:hi range")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub clean_path: PathBuf,
    pub noise_path: PathBuf,
    pub snr_db: SnrSpec,
}

/// Parses and validates a manifest. Every referenced file must exist;
/// failures name the manifest path and the 1-based data row.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let manifest_err = |row: usize, message: String| Error::Manifest {
        path: path.into(),
        row,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read manifest {}: {e}", path.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| manifest_err(0, format!("bad header: {e}")))?
        .clone();
    let expected = ["clean_path", "noise_path", "snr_db"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(manifest_err(
            0,
            format!("header must be `clean_path,noise_path,snr_db`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        ));
    }

    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut entries = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| manifest_err(row, format!("unreadable row: {e}")))?;
        if record.len() != 3 {
            return Err(manifest_err(
                row,
                format!("expected 3 fields, found {}", record.len()),
            ));
        }
        let resolve = |field: &str| {
            let p = Path::new(field);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let clean_path = resolve(&record[0]);
        let noise_path = resolve(&record[1]);
        for (label, p) in [("clean", &clean_path), ("noise", &noise_path)] {
            if !p.is_file() {
                return Err(manifest_err(
                    row,
                    format!("{label} file not found: {}", p.display()),
                ));
            }
        }
        let snr_db: SnrSpec = record[2]
            .parse()
            .map_err(|e| manifest_err(row, format!("bad snr_db: {e}")))?;
        let stem = clean_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "item".into());
        entries.push(ManifestEntry {
            id: format!("{row:04}_{stem}"),
            clean_path,
            noise_path,
            snr_db,
        });
    }
    if entries.is_empty() {
        return Err(Error::InvalidInput(format!(
            "manifest {} has no data rows",
            path.display()
        )));
    }
    Ok(entries)
}

/// Scales `noise` so that mixing it with `clean` lands at `snr_db`
/// (measured over the mixed segment) and returns the mixture together
/// with the scaled noise. `noise` must be at least as long as `clean`;
/// only its leading segment is used.
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, snr_db: f64) -> Result<(Waveform, Waveform)> {
    if clean.sample_rate != noise.sample_rate {
        return Err(Error::InvalidInput(format!(
            "sample rate mismatch: clean {} vs noise {}",
            clean.sample_rate, noise.sample_rate
        )));
    }
    if noise.len() < clean.len() {
        return Err(Error::InvalidInput(format!(
            "noise ({} samples) shorter than clean ({} samples)",
            noise.len(),
            clean.len()
        )));
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidInput(format!("snr {snr_db} is not finite")));
    }
    let p_clean = clean.power();
    let segment = &noise.samples[..clean.len()];
    let p_noise = segment.iter().map(|s| s * s).sum::<f64>() / clean.len() as f64;
    if p_clean == 0.0 {
        return Err(Error::DegenerateInput("clean signal is silent".into()));
    }
    if p_noise == 0.0 {
        return Err(Error::DegenerateInput("noise segment is silent".into()));
    }
    let gain = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let scaled: Vec<f64> = segment.iter().map(|s| s * gain).collect();
    let mixture: Vec<f64> = clean
        .samples
        .iter()
        .zip(&scaled)
        .map(|(c, n)| c + n)
        .collect();
    Ok((
        Waveform::new(mixture, clean.sample_rate)?,
        Waveform::new(scaled, clean.sample_rate)?,
    ))
}

/// Windowed-sinc resampling to `target_rate`. The kernel half-width is
/// 32 taps at the lower of the two rates, Hann-windowed, with per-output
/// renormalization so DC passes through exactly.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::InvalidInput("target rate must be positive".into()));
    }
    if target_rate == w.sample_rate {
        return Ok(w.clone());
    }
    let ratio = target_rate as f64 / w.sample_rate as f64;
    let out_len = ((w.len() as f64 * ratio).round() as usize).max(1);
    // Cutoff slightly inside the smaller Nyquist band, in units of the
    // input rate.
    let fc = 0.45 * ratio.min(1.0);
    let half_width = (32.0 * (1.0 / ratio).max(1.0)).ceil() as isize;
    let sinc = |t: f64| {
        if t.abs() < 1e-12 {
            1.0
        } else {
            let a = std::f64::consts::PI * t;
            a.sin() / a
        }
    };
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let center = n as f64 / ratio;
        let m0 = (center.floor() as isize - half_width).max(0);
        let m1 = ((center.floor() as isize) + half_width).min(w.len() as isize - 1);
        let mut acc = 0.0;
        let mut norm = 0.0;
        for m in m0..=m1 {
            let t = m as f64 - center;
            let window = 0.5 + 0.5 * (std::f64::consts::PI * t / half_width as f64).cos();
            let k = 2.0 * fc * sinc(2.0 * fc * t) * window;
            acc += w.samples[m as usize] * k;
            norm += k;
        }
        out.push(if norm.abs() > 1e-12 { acc / norm } else { 0.0 });
    }
    Waveform::new(out, target_rate)
}

/// One assembled training example, spectral tensors plus the waveforms
/// they came from.
#[derive(Clone, Debug)]
pub struct TrainPair {
    pub id: String,
    /// Compressed clean spectrogram, scaled by the mixture's peak gain.
    pub x0: ComplexSpectrogram,
    /// Compressed mixture spectrogram, peak-normalized.
    pub y: ComplexSpectrogram,
    /// Phase-sensitive mask of x0 against y.
    pub oracle_mask: Mask,
    pub snr_db: f64,
    /// Cropped clean waveform at its original level.
    pub clean: Waveform,
    /// Cropped mixture waveform at its original level.
    pub mixture: Waveform,
    /// Peak that normalized the mixture; multiply to restore level.
    pub peak: f64,
}

fn entry_stream_seed(entry: &ManifestEntry, seed: u64) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    entry.clean_path.hash(&mut h);
    entry.noise_path.hash(&mut h);
    seed.hash(&mut h);
    h.finish()
}

fn tile_to_len(w: &Waveform, len: usize) -> Waveform {
    if w.len() >= len {
        return w.clone();
    }
    let mut samples = Vec::with_capacity(len);
    while samples.len() < len {
        let take = (len - samples.len()).min(w.len());
        samples.extend_from_slice(&w.samples[..take]);
    }
    Waveform {
        samples,
        sample_rate: w.sample_rate,
    }
}

fn crop_from(w: &Waveform, offset: usize, len: usize) -> Waveform {
    Waveform {
        samples: w.samples[offset..offset + len].to_vec(),
        sample_rate: w.sample_rate,
    }
}

/// Loads, resamples, crops and mixes one manifest row. Returns the
/// cropped clean signal, the mixture, the scaled noise and the drawn
/// SNR. Deterministic given `(entry, seed)`.
pub fn prepare_mixture(
    entry: &ManifestEntry,
    seed: u64,
    target_rate: u32,
    crop_samples: Option<usize>,
) -> Result<(Waveform, Waveform, Waveform, f64)> {
    let mut rng = Prng::seed_from(entry_stream_seed(entry, seed));
    let clean = resample(&read_wav(&entry.clean_path)?, target_rate)?;
    let noise = resample(&read_wav(&entry.noise_path)?, target_rate)?;

    let len = match crop_samples {
        Some(l) if l == 0 => {
            return Err(Error::InvalidInput("crop length must be positive".into()))
        }
        Some(l) => l.min(clean.len()),
        None => clean.len(),
    };
    let clean_offset = if clean.len() > len {
        rng.index(clean.len() - len + 1)
    } else {
        0
    };
    let clean_crop = crop_from(&clean, clean_offset, len);

    let noise_tiled = tile_to_len(&noise, len);
    let noise_offset = if noise_tiled.len() > len {
        rng.index(noise_tiled.len() - len + 1)
    } else {
        0
    };
    let noise_crop = crop_from(&noise_tiled, noise_offset, len);

    let snr = entry.snr_db.draw(&mut rng);
    let (mixture, scaled_noise) = mix_at_snr(&clean_crop, &noise_crop, snr)?;
    Ok((clean_crop, mixture, scaled_noise, snr))
}

/// Assembles the spectral training pair for one manifest row.
pub fn make_pair(
    entry: &ManifestEntry,
    seed: u64,
    cfg: &SpectralConfig,
    target_rate: u32,
    crop_samples: Option<usize>,
) -> Result<TrainPair> {
    cfg.validate()?;
    let (clean_crop, mixture, _scaled_noise, snr) =
        prepare_mixture(entry, seed, target_rate, crop_samples)?;
    if clean_crop.len() < cfg.fft_size {
        return Err(Error::DegenerateInput(format!(
            "clip of {} samples is shorter than one analysis frame ({})",
            clean_crop.len(),
            cfg.fft_size
        )));
    }
    // One normalization for both signals: the mask must be computed on
    // an aligned pair, and magnitude ratios only survive compression
    // unchanged when both sides carry the same gain.
    let (y_norm, peak) = normalize(&mixture)?;
    let x0_scaled = Waveform::new(
        clean_crop.samples.iter().map(|s| s / peak).collect(),
        clean_crop.sample_rate,
    )?;
    let x0 = compress(&stft(&x0_scaled, cfg)?)?;
    let y = compress(&stft(&y_norm, cfg)?)?;
    let oracle_mask = phase_sensitive_mask(&x0, &y)?;
    Ok(TrainPair {
        id: entry.id.clone(),
        x0,
        y,
        oracle_mask,
        snr_db: snr,
        clean: clean_crop,
        mixture,
        peak,
    })
}
