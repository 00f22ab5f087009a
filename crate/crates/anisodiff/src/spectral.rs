//! Waveforms, STFT analysis/synthesis and magnitude compression.
//!
//! Analysis uses a periodic window, centered frames (the signal is
//! reflect-padded by half the FFT size on each side) and a hop that
//! divides the frame count as `K = 1 + floor(len / hop)`. Synthesis is
//! the least-squares inverse: each frame is windowed again, frames are
//! overlap-added, and the result is divided by the accumulated squared
//! window. For an unmodified spectrogram this reconstructs the input to
//! floating-point accuracy whenever the window overlap covers every
//! sample.
//!
//! Diffusion operates on magnitude-compressed spectrograms. Compression
//! raises each bin magnitude to `comp_exponent` and rescales by
//! `comp_scale`, keeping the phase; bins with zero magnitude compress
//! to zero with phase zero. The [`Domain`] tag on every spectrogram
//! records which side of this transform the values live on, and
//! mismatched tags are rejected rather than silently mixed.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mono audio at a known sample rate. Samples are finite `f64`,
/// nominally inside [-1, 1] but not clamped.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::InvalidInput("waveform has no samples".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "waveform sample {i} is not finite"
            )));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    /// Mean squared sample value.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Hann,
    Hamming,
    Rect,
}

impl WindowKind {
    /// Periodic window of the given length.
    fn build(self, len: usize) -> Vec<f64> {
        let n = len as f64;
        (0..len)
            .map(|i| {
                let phase = std::f64::consts::TAU * i as f64 / n;
                match self {
                    WindowKind::Hann => 0.5 - 0.5 * phase.cos(),
                    WindowKind::Hamming => 0.54 - 0.46 * phase.cos(),
                    WindowKind::Rect => 1.0,
                }
            })
            .collect()
    }
}

/// Analysis parameters shared by every spectrogram in a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub window: WindowKind,
    /// Exponent applied to bin magnitudes on compression.
    pub comp_exponent: f64,
    /// Scale applied after exponentiation.
    pub comp_scale: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            fft_size: 510,
            hop: 128,
            window: WindowKind::Hann,
            comp_exponent: 0.5,
            comp_scale: 0.5,
        }
    }
}

impl SpectralConfig {
    pub fn validate(&self) -> Result<()> {
        let field = |field: &str, message: &str| Error::Config {
            field: field.into(),
            message: message.into(),
        };
        if self.fft_size < 2 {
            return Err(field("fft_size", "must be at least 2"));
        }
        if self.hop == 0 {
            return Err(field("hop", "must be positive"));
        }
        if self.hop > self.fft_size {
            return Err(field("hop", "must not exceed fft_size"));
        }
        if !(self.comp_exponent > 0.0 && self.comp_exponent <= 1.0) {
            return Err(field("comp_exponent", "must lie in (0, 1]"));
        }
        if !(self.comp_scale > 0.0) || !self.comp_scale.is_finite() {
            return Err(field("comp_scale", "must be positive and finite"));
        }
        Ok(())
    }

    /// Number of retained frequency bins (one-sided spectrum).
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of frames produced for a waveform of `len` samples.
    pub fn frames_for_len(&self, len: usize) -> usize {
        1 + len / self.hop
    }
}

/// Which side of magnitude compression a spectrogram's values live on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Raw,
    Compressed,
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Domain::Raw => write!(f, "raw"),
            Domain::Compressed => write!(f, "compressed"),
        }
    }
}

/// Complex spectrogram, frames by bins, tagged with its domain, the
/// config that produced it, and the audio sample rate it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram {
    pub values: Array2<Complex64>,
    pub domain: Domain,
    pub config: SpectralConfig,
    pub sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn bins(&self) -> usize {
        self.values.ncols()
    }

    /// Rejects operands that cannot legally be combined bin-for-bin.
    pub fn check_compatible(&self, other: &ComplexSpectrogram) -> Result<()> {
        if self.domain != other.domain {
            return Err(Error::DomainMismatch {
                expected: self.domain.to_string(),
                found: other.domain.to_string(),
            });
        }
        if self.values.dim() != other.values.dim() {
            return Err(Error::ShapeMismatch {
                expected_frames: self.frames(),
                expected_bins: self.bins(),
                found_frames: other.frames(),
                found_bins: other.bins(),
            });
        }
        if self.sample_rate != other.sample_rate {
            return Err(Error::InvalidInput(format!(
                "sample rate mismatch: {} vs {}",
                self.sample_rate, other.sample_rate
            )));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.values
            .iter()
            .all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

thread_local! {
    static PLANS: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> =
        RefCell::new(HashMap::new());
}

fn fft_plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|plans| {
        plans
            .borrow_mut()
            .entry((len, inverse))
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                if inverse {
                    planner.plan_fft_inverse(len)
                } else {
                    planner.plan_fft_forward(len)
                }
            })
            .clone()
    })
}

/// Index into a length-`len` signal with reflection at both ends
/// (mirror without repeating the edge sample). Works for offsets that
/// exceed the signal length by folding repeatedly.
fn reflect_index(idx: isize, len: usize) -> usize {
    debug_assert!(len > 0);
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut i = idx.rem_euclid(period);
    if i >= len as isize {
        i = period - i;
    }
    i as usize
}

/// Short-time Fourier transform with centered, reflect-padded frames.
pub fn stft(w: &Waveform, cfg: &SpectralConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    let n = cfg.fft_size;
    let len = w.samples.len();
    let half = n / 2;
    let frames = cfg.frames_for_len(len);
    let bins = cfg.bins();
    let window = cfg.window.build(n);
    let fft = fft_plan(n, false);

    let mut values = Array2::<Complex64>::zeros((frames, bins));
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..frames {
        let start = k as isize * cfg.hop as isize - half as isize;
        for (j, slot) in buf.iter_mut().enumerate() {
            let src = reflect_index(start + j as isize, len);
            *slot = Complex64::new(w.samples[src] * window[j], 0.0);
        }
        fft.process(&mut buf);
        for (f, slot) in values.row_mut(k).iter_mut().enumerate() {
            *slot = buf[f];
        }
    }
    Ok(ComplexSpectrogram {
        values,
        domain: Domain::Raw,
        config: *cfg,
        sample_rate: w.sample_rate,
    })
}

/// Least-squares inverse STFT. `out_len` must be consistent with the
/// frame count: `frames_for_len(out_len)` has to equal the spectrogram's
/// frame count, otherwise the overlap bookkeeping cannot line up.
pub fn istft(s: &ComplexSpectrogram, out_len: usize) -> Result<Waveform> {
    let cfg = &s.config;
    cfg.validate()?;
    if s.domain != Domain::Raw {
        return Err(Error::DomainMismatch {
            expected: Domain::Raw.to_string(),
            found: s.domain.to_string(),
        });
    }
    if !s.all_finite() {
        return Err(Error::InvalidInput("spectrogram has non-finite bins".into()));
    }
    if out_len == 0 {
        return Err(Error::InvalidInput("output length must be positive".into()));
    }
    if cfg.frames_for_len(out_len) != s.frames() {
        return Err(Error::InvalidInput(format!(
            "output length {} implies {} frames but spectrogram has {}",
            out_len,
            cfg.frames_for_len(out_len),
            s.frames()
        )));
    }
    if s.bins() != cfg.bins() {
        return Err(Error::ShapeMismatch {
            expected_frames: s.frames(),
            expected_bins: cfg.bins(),
            found_frames: s.frames(),
            found_bins: s.bins(),
        });
    }

    let n = cfg.fft_size;
    let half = n / 2;
    let frames = s.frames();
    let window = cfg.window.build(n);
    let ifft = fft_plan(n, true);

    let padded_len = (frames - 1) * cfg.hop + n;
    let mut acc = vec![0.0f64; padded_len];
    let mut wsum = vec![0.0f64; padded_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..frames {
        // Rebuild the full conjugate-symmetric spectrum from the
        // one-sided bins.
        let row = s.values.row(k);
        for f in 0..cfg.bins() {
            buf[f] = row[f];
        }
        for f in cfg.bins()..n {
            buf[f] = row[n - f].conj();
        }
        ifft.process(&mut buf);
        let base = k * cfg.hop;
        for j in 0..n {
            let sample = buf[j].re / n as f64;
            acc[base + j] += sample * window[j];
            wsum[base + j] += window[j] * window[j];
        }
    }

    let mut samples = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let idx = i + half;
        if wsum[idx] <= 1e-10 {
            return Err(Error::Numerical(format!(
                "window overlap leaves sample {i} unnormalizable; use a hop with enough overlap"
            )));
        }
        samples.push(acc[idx] / wsum[idx]);
    }
    Waveform::new(samples, s.sample_rate)
}

/// Applies magnitude compression: `scale * |v|^exponent * exp(i arg v)`.
pub fn compress(s: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
    if s.domain != Domain::Raw {
        return Err(Error::DomainMismatch {
            expected: Domain::Raw.to_string(),
            found: s.domain.to_string(),
        });
    }
    s.config.validate()?;
    let gamma = s.config.comp_exponent;
    let scale = s.config.comp_scale;
    let values = s.values.mapv(|v| {
        let mag = v.norm();
        if mag == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::from_polar(scale * mag.powf(gamma), v.arg())
        }
    });
    Ok(ComplexSpectrogram {
        values,
        domain: Domain::Compressed,
        config: s.config,
        sample_rate: s.sample_rate,
    })
}

/// Inverts magnitude compression. Compressed bins must be finite.
pub fn decompress(s: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
    if s.domain != Domain::Compressed {
        return Err(Error::DomainMismatch {
            expected: Domain::Compressed.to_string(),
            found: s.domain.to_string(),
        });
    }
    s.config.validate()?;
    if !s.all_finite() {
        return Err(Error::InvalidInput("spectrogram has non-finite bins".into()));
    }
    let gamma = s.config.comp_exponent;
    let scale = s.config.comp_scale;
    let values = s.values.mapv(|v| {
        let mag = v.norm();
        if mag == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::from_polar((mag / scale).powf(1.0 / gamma), v.arg())
        }
    });
    Ok(ComplexSpectrogram {
        values,
        domain: Domain::Raw,
        config: s.config,
        sample_rate: s.sample_rate,
    })
}

/// Scales a waveform so its peak magnitude is 1 and returns the gain
/// that undoes the scaling (multiply by it to restore the original
/// level). All-zero input cannot be normalized.
pub fn normalize(w: &Waveform) -> Result<(Waveform, f64)> {
    let peak = w.peak();
    if peak == 0.0 {
        return Err(Error::DegenerateInput(
            "cannot normalize an all-zero waveform".into(),
        ));
    }
    let scaled = Waveform {
        samples: w.samples.iter().map(|s| s / peak).collect(),
        sample_rate: w.sample_rate,
    };
    Ok((scaled, peak))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;
    use proptest::prelude::*;

    fn tone(freq_bin: f64, len: usize, fft_size: usize, rate: u32) -> Waveform {
        let samples = (0..len)
            .map(|n| (std::f64::consts::TAU * freq_bin * n as f64 / fft_size as f64).sin())
            .collect();
        Waveform::new(samples, rate).unwrap()
    }

    fn noise_wave(len: usize, rate: u32, seed: u64) -> Waveform {
        let mut rng = Prng::seed_from(seed);
        let samples = (0..len).map(|_| 0.3 * rng.standard_normal()).collect();
        Waveform::new(samples, rate).unwrap()
    }

    #[test]
    fn waveform_rejects_bad_input() {
        assert!(Waveform::new(vec![], 16000).is_err());
        assert!(Waveform::new(vec![0.1, f64::NAN], 16000).is_err());
        assert!(Waveform::new(vec![0.1], 0).is_err());
    }

    #[test]
    fn config_validation_catches_out_of_range_fields() {
        let mut cfg = SpectralConfig::default();
        cfg.hop = 0;
        assert!(cfg.validate().is_err());
        cfg = SpectralConfig::default();
        cfg.hop = cfg.fft_size + 1;
        assert!(cfg.validate().is_err());
        cfg = SpectralConfig::default();
        cfg.comp_exponent = 0.0;
        assert!(cfg.validate().is_err());
        cfg = SpectralConfig::default();
        cfg.comp_exponent = 1.5;
        assert!(cfg.validate().is_err());
        assert!(SpectralConfig::default().validate().is_ok());
    }

    #[test]
    fn stft_shape_matches_formula() {
        let cfg = SpectralConfig::default();
        for len in [1, 127, 128, 129, 16000] {
            let w = noise_wave(len, 16000, len as u64);
            let s = stft(&w, &cfg).unwrap();
            assert_eq!(s.frames(), 1 + len / cfg.hop);
            assert_eq!(s.bins(), cfg.fft_size / 2 + 1);
            assert_eq!(s.domain, Domain::Raw);
        }
    }

    #[test]
    fn round_trip_reconstructs_to_float_accuracy() {
        let cfg = SpectralConfig::default();
        for len in [511, 4000, 16000] {
            let w = noise_wave(len, 16000, 77 + len as u64);
            let s = stft(&w, &cfg).unwrap();
            let back = istft(&s, w.len()).unwrap();
            let max_err = w
                .samples
                .iter()
                .zip(&back.samples)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max_err < 1e-10, "len {len}: max err {max_err}");
            assert_eq!(back.sample_rate, w.sample_rate);
        }
    }

    #[test]
    fn sinusoid_at_bin_center_concentrates_energy() {
        let cfg = SpectralConfig::default();
        let bin = 32usize;
        let w = tone(bin as f64, 16000, cfg.fft_size, 16000);
        let s = stft(&w, &cfg).unwrap();
        let half = cfg.fft_size / 2;
        // Interior frames only: frames whose window never touches the
        // reflect padding.
        let k_lo = half / cfg.hop + 1;
        let k_hi = (w.len() - half) / cfg.hop - 1;
        assert!(k_hi > k_lo + 10);
        for k in k_lo..=k_hi {
            let row = s.values.row(k);
            let argmax = (0..s.bins())
                .max_by(|&a, &b| row[a].norm().partial_cmp(&row[b].norm()).unwrap())
                .unwrap();
            assert_eq!(argmax, bin, "frame {k}");
        }
    }

    #[test]
    fn istft_rejects_wrong_domain_and_inconsistent_length() {
        let cfg = SpectralConfig::default();
        let w = noise_wave(2000, 16000, 4);
        let s = stft(&w, &cfg).unwrap();
        let c = compress(&s).unwrap();
        assert!(matches!(
            istft(&c, w.len()),
            Err(Error::DomainMismatch { .. })
        ));
        assert!(istft(&s, w.len() + cfg.hop).is_err());
    }

    #[test]
    fn istft_reports_insufficient_overlap() {
        // hop == fft_size leaves the periodic Hann's zero sample
        // uncovered by any neighbor.
        let cfg = SpectralConfig {
            fft_size: 256,
            hop: 256,
            ..SpectralConfig::default()
        };
        let w = noise_wave(2048, 16000, 9);
        let s = stft(&w, &cfg).unwrap();
        assert!(matches!(istft(&s, w.len()), Err(Error::Numerical(_))));
    }

    #[test]
    fn compression_round_trip_is_tight() {
        let cfg = SpectralConfig::default();
        let w = noise_wave(4000, 16000, 11);
        let s = stft(&w, &cfg).unwrap();
        let back = decompress(&compress(&s).unwrap()).unwrap();
        assert_eq!(back.domain, Domain::Raw);
        let max_rel = s
            .values
            .iter()
            .zip(back.values.iter())
            .map(|(a, b)| (a - b).norm() / a.norm().max(1e-30))
            .fold(0.0f64, f64::max);
        assert!(max_rel < 1e-12, "max rel err {max_rel}");
    }

    #[test]
    fn compress_halves_exponent_magnitudes_and_keeps_phase() {
        let cfg = SpectralConfig::default();
        let mut values = Array2::from_elem((2, cfg.bins()), Complex64::new(0.0, 0.0));
        values[[0, 3]] = Complex64::from_polar(4.0, 1.1);
        values[[1, 5]] = Complex64::from_polar(0.25, -2.3);
        let s = ComplexSpectrogram {
            values,
            domain: Domain::Raw,
            config: cfg,
            sample_rate: 16000,
        };
        let c = compress(&s).unwrap();
        // 0.5 * 4.0^0.5 = 1.0 and 0.5 * 0.25^0.5 = 0.25.
        assert!((c.values[[0, 3]].norm() - 1.0).abs() < 1e-15);
        assert!((c.values[[0, 3]].arg() - 1.1).abs() < 1e-12);
        assert!((c.values[[1, 5]].norm() - 0.25).abs() < 1e-15);
        assert!((c.values[[1, 5]].arg() + 2.3).abs() < 1e-12);
        // Untouched bins stay exactly zero.
        assert_eq!(c.values[[0, 0]], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn normalize_round_trips_and_rejects_silence() {
        let w = Waveform::new(vec![0.1, -0.5, 0.25], 8000).unwrap();
        let (n, gain) = normalize(&w).unwrap();
        assert!((n.peak() - 1.0).abs() < 1e-15);
        for (a, b) in n.samples.iter().zip(&w.samples) {
            assert!((a * gain - b).abs() < 1e-15);
        }
        let silent = Waveform::new(vec![0.0; 10], 8000).unwrap();
        assert!(matches!(
            normalize(&silent),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn reflect_index_folds_correctly() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(-4, 5), 4);
        assert_eq!(reflect_index(0, 5), 0);
        assert_eq!(reflect_index(4, 5), 4);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(8, 5), 0);
        assert_eq!(reflect_index(-3, 1), 0);
        assert_eq!(reflect_index(12, 5), 4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn prop_round_trip_any_length(len in 300usize..5000, seed in 0u64..1000) {
            let cfg = SpectralConfig::default();
            let w = noise_wave(len, 16000, seed);
            let s = stft(&w, &cfg).unwrap();
            let back = istft(&s, len).unwrap();
            let max_err = w.samples.iter().zip(&back.samples)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            prop_assert!(max_err < 1e-6, "max err {}", max_err);
        }

        #[test]
        fn prop_compression_preserves_phase_and_order(
            mag_a in 1e-6f64..10.0,
            mag_b in 1e-6f64..10.0,
            phase in -3.0f64..3.0,
        ) {
            let cfg = SpectralConfig::default();
            let mut values = Array2::from_elem((1, cfg.bins()), Complex64::new(0.0, 0.0));
            values[[0, 1]] = Complex64::from_polar(mag_a, phase);
            values[[0, 2]] = Complex64::from_polar(mag_b, 0.3);
            let s = ComplexSpectrogram { values, domain: Domain::Raw, config: cfg, sample_rate: 16000 };
            let c = compress(&s).unwrap();
            prop_assert!((c.values[[0, 1]].arg() - phase).abs() < 1e-9);
            // Monotone in magnitude.
            let ordered = mag_a.partial_cmp(&mag_b).unwrap();
            let c_ordered = c.values[[0, 1]].norm().partial_cmp(&c.values[[0, 2]].norm()).unwrap();
            if mag_a != mag_b {
                prop_assert_eq!(ordered, c_ordered);
            }
        }
    }
}
