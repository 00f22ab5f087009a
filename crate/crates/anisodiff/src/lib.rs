//! Speech enhancement by guided anisotropic residual-shift diffusion.
//!
//! The pipeline estimates, for every time-frequency bin of a noisy
//! spectrogram, how much of the bin is noise. That per-bin proportion
//! steers a short diffusion bridge between the noisy mixture and the
//! clean signal: bins dominated by noise receive strong Gaussian
//! perturbation while speech-dominated bins pass through almost
//! untouched. A denoising network then walks the bridge backwards in a
//! handful of steps to recover the clean spectrogram.
//!
//! Module map:
//!
//! * [`spectral`] / [`wav`]: waveforms, STFT analysis/synthesis,
//!   magnitude compression, WAV file ingestion.
//! * [`schedule`]: the geometric noise-injection schedule and its
//!   derived per-step coefficients.
//! * [`guidance`]: phase-sensitive masks and the guidance fields built
//!   from them.
//! * [`diffusion`]: forward corruption, prior sampling and the reverse
//!   (enhancement) iteration, generic over any denoiser.
//! * [`autodiff`]: a small reverse-mode tape over `f64` tensors, enough
//!   to train the two networks in this crate.
//! * [`nets`]: the mask-estimation network and the diffusion denoiser,
//!   built on the tape.
//! * [`data`]: manifest parsing, mixing at a target SNR, training-pair
//!   assembly.
//! * [`train`]: joint loss, optimizer, training loop, checkpoints.
//! * [`enhance`]: the end-to-end waveform-in waveform-out path.
//! * [`metrics`]: scale-invariant SNR and batch evaluation reports.
//! * [`viz`]: spectrogram panels as PNG images.
//! * [`cli`]: the command line exposed by the `anisodiff` binary.
//!
//! The `examples/` directory contains one runnable program per major
//! capability; each generates its own synthetic audio so none of them
//! need external data.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod diffusion;
pub mod enhance;
pub mod error;
pub mod guidance;
pub mod metrics;
pub mod nets;
pub mod rng;
pub mod schedule;
pub mod spectral;
pub mod train;
pub mod viz;
pub mod wav;

pub use error::{Error, Result};
