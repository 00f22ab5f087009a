//! Per-bin noise-proportion estimates and the guidance built from them.
//!
//! A [`Mask`] holds, for every time-frequency bin, the estimated
//! proportion of the mixture that is clean signal, in [0, 1]. The
//! training target is the phase-sensitive mask: the magnitude ratio of
//! clean to mixture scaled by the cosine of their phase difference,
//! clipped back into the unit interval. The [`GuidanceField`] is its
//! complement, so noise-dominant bins carry values near 1 and get the
//! strongest diffusion perturbation while clean-dominant bins are left
//! nearly untouched.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::spectral::ComplexSpectrogram;

/// Per-bin clean-signal proportion, guaranteed finite and in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    values: Array2<f64>,
}

impl Mask {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 || *v > 1.0 {
                return Err(Error::Invariant(format!(
                    "mask value {v} at flat index {i} outside [0, 1]"
                )));
            }
        }
        Ok(Mask { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn bins(&self) -> usize {
        self.values.ncols()
    }
}

/// Per-bin noise proportion in [0, 1]; the diffusion noise multiplier.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceField {
    values: Array2<f64>,
}

impl GuidanceField {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 || *v > 1.0 {
                return Err(Error::Invariant(format!(
                    "guidance value {v} at flat index {i} outside [0, 1]"
                )));
            }
        }
        Ok(GuidanceField { values })
    }

    /// Uniform field of ones: isotropic noise over all bins.
    pub fn ones(frames: usize, bins: usize) -> Self {
        GuidanceField {
            values: Array2::from_elem((frames, bins), 1.0),
        }
    }

    /// All-zero field: no stochastic perturbation anywhere.
    pub fn zeros(frames: usize, bins: usize) -> Self {
        GuidanceField {
            values: Array2::from_elem((frames, bins), 0.0),
        }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn bins(&self) -> usize {
        self.values.ncols()
    }

    pub fn check_shape(&self, frames: usize, bins: usize) -> Result<()> {
        if self.values.dim() != (frames, bins) {
            return Err(Error::ShapeMismatch {
                expected_frames: frames,
                expected_bins: bins,
                found_frames: self.frames(),
                found_bins: self.bins(),
            });
        }
        Ok(())
    }
}

/// Phase-sensitive mask of `clean` against the mixture `ref_mix`:
/// `clip_[0,1]( cos(phase difference) * |clean| / |mixture| )`,
/// computed per bin as `Re(clean * conj(mixture)) / |mixture|^2`.
/// Bins where the mixture is exactly zero get mask 0.
pub fn phase_sensitive_mask(
    clean: &ComplexSpectrogram,
    ref_mix: &ComplexSpectrogram,
) -> Result<Mask> {
    clean.check_compatible(ref_mix)?;
    let mut values = Array2::zeros(clean.values.dim());
    for ((idx, out), (c, m)) in values
        .indexed_iter_mut()
        .zip(clean.values.iter().zip(ref_mix.values.iter()))
    {
        let den = m.norm_sqr();
        let v = if den == 0.0 {
            0.0
        } else {
            ((c * m.conj()).re / den).clamp(0.0, 1.0)
        };
        if !v.is_finite() {
            return Err(Error::Numerical(format!(
                "phase-sensitive mask is not finite at bin {idx:?}"
            )));
        }
        *out = v;
    }
    Ok(Mask { values })
}

/// Complement of the mask: noise proportion per bin.
pub fn guidance_from_mask(mask: &Mask) -> GuidanceField {
    GuidanceField {
        values: mask.values.mapv(|m| 1.0 - m),
    }
}
