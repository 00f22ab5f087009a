//! Native evaluation metrics and report assembly.
//!
//! SI-SNR is the only metric computed here. Perceptual scores (PESQ,
//! ESTOI, DNSMOS, CSIG, CBAK, COVL) come from external tooling; the
//! report keeps named null slots so those values can be merged in
//! afterwards.

use serde::Serialize;

use crate::data::{prepare_mixture, ManifestEntry};
use crate::diffusion::SamplerConfig;
use crate::enhance::Enhancer;
use crate::error::{Error, Result};
use crate::nets::NetConfig;
use crate::schedule::ScheduleConfig;
use crate::spectral::{SpectralConfig, Waveform};
use crate::train::Checkpoint;

/// Reporting bands for the mixing SNR, in dB.
pub const SNR_BANDS: [(f64, f64); 3] = [(-15.0, -5.0), (-5.0, 5.0), (5.0, 15.0)];

const SI_SNR_CAP_DB: f64 = 100.0;

/// Scale-invariant signal-to-noise ratio in dB, capped at ±100.
///
/// Both signals are mean-subtracted first. The reference is projected
/// out of the estimate; the ratio of projected to residual energy is
/// what gets reported, so rescaling the estimate changes nothing.
pub fn si_snr(estimate: &Waveform, reference: &Waveform) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::InvalidInput(format!(
            "estimate ({} samples) and reference ({} samples) differ in length",
            estimate.len(),
            reference.len()
        )));
    }
    if estimate.sample_rate != reference.sample_rate {
        return Err(Error::InvalidInput(format!(
            "estimate ({} Hz) and reference ({} Hz) differ in rate",
            estimate.sample_rate, reference.sample_rate
        )));
    }
    let n = reference.len() as f64;
    let mean_e: f64 = estimate.samples.iter().sum::<f64>() / n;
    let mean_r: f64 = reference.samples.iter().sum::<f64>() / n;
    let mut dot_er = 0.0;
    let mut dot_rr = 0.0;
    for (e, r) in estimate.samples.iter().zip(&reference.samples) {
        let (e, r) = (e - mean_e, r - mean_r);
        dot_er += e * r;
        dot_rr += r * r;
    }
    if dot_rr == 0.0 {
        return Err(Error::DegenerateInput(
            "si-snr reference is silent after mean removal".into(),
        ));
    }
    let alpha = dot_er / dot_rr;
    let mut target_energy = 0.0;
    let mut residual_energy = 0.0;
    for (e, r) in estimate.samples.iter().zip(&reference.samples) {
        let (e, r) = (e - mean_e, r - mean_r);
        let t = alpha * r;
        target_energy += t * t;
        let d = e - t;
        residual_energy += d * d;
    }
    // Checked first so an estimate with no reference component (a
    // silent one included) scores the floor, not the ceiling.
    if target_energy == 0.0 {
        return Ok(-SI_SNR_CAP_DB);
    }
    if residual_energy == 0.0 {
        return Ok(SI_SNR_CAP_DB);
    }
    Ok((10.0 * (target_energy / residual_energy).log10()).clamp(-SI_SNR_CAP_DB, SI_SNR_CAP_DB))
}

/// One manifest row's outcome. Failed items keep their error text and
/// leave the metric fields empty.
#[derive(Clone, Debug, Serialize)]
pub struct ItemReport {
    pub id: String,
    pub snr_db: f64,
    pub si_snr_noisy: Option<f64>,
    pub si_snr_enhanced: Option<f64>,
    pub improvement_db: Option<f64>,
    pub error: Option<String>,
}

/// Mean metrics over the items whose mixing SNR falls in [lo, hi).
#[derive(Clone, Debug, Serialize)]
pub struct BandAggregate {
    pub lo_db: f64,
    pub hi_db: f64,
    pub count: usize,
    pub mean_si_snr_noisy: Option<f64>,
    pub mean_si_snr_enhanced: Option<f64>,
    pub mean_improvement_db: Option<f64>,
}

/// Slots for metrics this crate does not compute; external tooling can
/// fill them into the written report.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ExternalMetricSlots {
    pub pesq: Option<f64>,
    pub estoi: Option<f64>,
    pub dnsmos: Option<f64>,
    pub csig: Option<f64>,
    pub cbak: Option<f64>,
    pub covl: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConfigEcho {
    pub sampler: SamplerConfig,
    pub schedule: ScheduleConfig,
    pub spectral: SpectralConfig,
    pub net_config: NetConfig,
    pub sample_rate: u32,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricReport {
    pub config_echo: ConfigEcho,
    pub items: Vec<ItemReport>,
    pub aggregates_by_band: Vec<BandAggregate>,
    pub overall: BandAggregate,
    pub failed_items: usize,
    pub external: ExternalMetricSlots,
}

fn aggregate(lo: f64, hi: f64, members: &[&ItemReport]) -> BandAggregate {
    let ok: Vec<&&ItemReport> = members.iter().filter(|i| i.error.is_none()).collect();
    let mean = |f: &dyn Fn(&ItemReport) -> Option<f64>| {
        if ok.is_empty() {
            return None;
        }
        let vals: Vec<f64> = ok.iter().filter_map(|i| f(i)).collect();
        if vals.len() == ok.len() {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        } else {
            None
        }
    };
    BandAggregate {
        lo_db: lo,
        hi_db: hi,
        count: ok.len(),
        mean_si_snr_noisy: mean(&|i| i.si_snr_noisy),
        mean_si_snr_enhanced: mean(&|i| i.si_snr_enhanced),
        mean_improvement_db: mean(&|i| i.improvement_db),
    }
}

/// Derives a per-item sampler seed from the run seed; items stay
/// decoupled no matter how many precede them.
fn item_seed(base: u64, index: usize) -> u64 {
    base ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Shared assembly: mixes each manifest row, runs `enhance_fn` on the
/// mixture, scores both signals against the clean reference, and folds
/// the per-item records into band aggregates. Per-item failures are
/// recorded and the run continues.
fn assemble_items(
    entries: &[ManifestEntry],
    sample_rate: u32,
    seed: u64,
    mut enhance_fn: impl FnMut(&Waveform, u64) -> Result<Waveform>,
) -> Result<(Vec<ItemReport>, Vec<BandAggregate>, BandAggregate, usize)> {
    if entries.is_empty() {
        return Err(Error::InvalidInput("no items to evaluate".into()));
    }
    let mut items = Vec::with_capacity(entries.len());
    for (i, entry) in entries.iter().enumerate() {
        let outcome = prepare_mixture(entry, seed, sample_rate, None).and_then(|prep| {
            let (clean, mixture, _, snr) = prep;
            let enhanced = enhance_fn(&mixture, item_seed(seed, i))?;
            let noisy_score = si_snr(&mixture, &clean)?;
            let enhanced_score = si_snr(&enhanced, &clean)?;
            Ok((snr, noisy_score, enhanced_score))
        });
        items.push(match outcome {
            Ok((snr, noisy_score, enhanced_score)) => ItemReport {
                id: entry.id.clone(),
                snr_db: snr,
                si_snr_noisy: Some(noisy_score),
                si_snr_enhanced: Some(enhanced_score),
                improvement_db: Some(enhanced_score - noisy_score),
                error: None,
            },
            Err(e) => ItemReport {
                id: entry.id.clone(),
                snr_db: f64::NAN,
                si_snr_noisy: None,
                si_snr_enhanced: None,
                improvement_db: None,
                error: Some(e.to_string()),
            },
        });
    }
    let bands = SNR_BANDS
        .iter()
        .map(|&(lo, hi)| {
            let members: Vec<&ItemReport> = items
                .iter()
                .filter(|i| i.error.is_none() && i.snr_db >= lo && i.snr_db < hi)
                .collect();
            aggregate(lo, hi, &members)
        })
        .collect();
    let all: Vec<&ItemReport> = items.iter().collect();
    let overall = aggregate(f64::NEG_INFINITY, f64::INFINITY, &all);
    let failed = items.iter().filter(|i| i.error.is_some()).count();
    Ok((items, bands, overall, failed))
}

/// Evaluates a checkpoint over manifest entries. Deterministic given
/// `seed`; failures of individual items are recorded, not fatal.
pub fn evaluate(
    entries: &[ManifestEntry],
    checkpoint: &Checkpoint,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<MetricReport> {
    let enhancer = Enhancer::new(checkpoint)?;
    let (items, bands, overall, failed) = assemble_items(
        entries,
        checkpoint.sample_rate,
        seed,
        |mixture, item_seed| {
            let cfg = SamplerConfig {
                seed: item_seed,
                ..*sampler
            };
            Ok(enhancer.enhance(mixture, &cfg)?.enhanced)
        },
    )?;
    Ok(MetricReport {
        config_echo: ConfigEcho {
            sampler: *sampler,
            schedule: checkpoint.schedule,
            spectral: checkpoint.spectral,
            net_config: checkpoint.net_config.clone(),
            sample_rate: checkpoint.sample_rate,
            seed,
        },
        items,
        aggregates_by_band: bands,
        overall,
        failed_items: failed,
        external: ExternalMetricSlots::default(),
    })
}

/// Same assembly with an arbitrary enhancement function; lets tests
/// score a known transform without a trained checkpoint.
pub fn evaluate_with(
    entries: &[ManifestEntry],
    sample_rate: u32,
    seed: u64,
    enhance_fn: impl FnMut(&Waveform, u64) -> Result<Waveform>,
) -> Result<(Vec<ItemReport>, Vec<BandAggregate>, BandAggregate, usize)> {
    assemble_items(entries, sample_rate, seed, enhance_fn)
}
