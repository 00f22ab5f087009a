//! Command-line surface: train, enhance, evaluate, schedule, visualize.
//!
//! Configuration precedence is CLI flag over config file over built-in
//! defaults. Every command echoes the effective configuration it ran
//! with to standard output, and JSON artifacts embed it.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 runtime or
//! numerical error. Clap's own usage failures exit 2 as well.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{load_manifest, make_pair, resample, TrainPair};
use crate::diffusion::{GuidanceMode, PriorStd, SamplerConfig};
use crate::enhance::Enhancer;
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::nets::NetConfig;
use crate::schedule::{NoiseSchedule, ScheduleConfig, VarianceMode};
use crate::spectral::{SpectralConfig, Waveform};
use crate::train::{Checkpoint, TrainConfig, Trainer};
use crate::viz::visualize;
use crate::wav::{read_wav, write_wav, WavFormat};

/// Keys accepted in a run configuration file (TOML). Every key is
/// optional; omitted keys fall back to the built-in defaults. Unknown
/// keys are rejected.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub sample_rate: Option<u32>,
    pub fft_size: Option<usize>,
    pub hop: Option<usize>,
    pub comp_exponent: Option<f64>,
    pub comp_scale: Option<f64>,
    #[serde(rename = "T")]
    pub t: Option<usize>,
    pub kappa: Option<f64>,
    pub p: Option<f64>,
    pub alpha_bar_1: Option<f64>,
    #[serde(rename = "alpha_bar_T")]
    pub alpha_bar_t: Option<f64>,
    pub guidance_mode: Option<GuidanceMode>,
    pub variance_mode: Option<VarianceMode>,
    pub prior_std: Option<PriorStd>,
    pub noise_free: Option<bool>,
    pub seed: Option<u64>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub steps: Option<usize>,
    pub net_preset: Option<String>,
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config {
            field: "config".into(),
            message: format!("{}: {e}", path.display()),
        })
    }
}

/// Fully resolved run configuration, after file and flag overrides.
#[derive(Clone, Debug, Serialize)]
pub struct EffectiveConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub hop: usize,
    pub comp_exponent: f64,
    pub comp_scale: f64,
    #[serde(rename = "T")]
    pub t: usize,
    pub kappa: f64,
    pub p: f64,
    pub alpha_bar_1: f64,
    #[serde(rename = "alpha_bar_T")]
    pub alpha_bar_t: f64,
    pub guidance_mode: GuidanceMode,
    pub variance_mode: VarianceMode,
    pub prior_std: PriorStd,
    pub noise_free: bool,
    pub seed: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub net_preset: String,
}

impl Default for EffectiveConfig {
    fn default() -> Self {
        EffectiveConfig {
            sample_rate: 16000,
            fft_size: 510,
            hop: 128,
            comp_exponent: 0.5,
            comp_scale: 0.5,
            t: 6,
            kappa: 0.5,
            p: 0.3,
            alpha_bar_1: 0.001,
            alpha_bar_t: 0.999,
            guidance_mode: GuidanceMode::Anisotropic,
            variance_mode: VarianceMode::Paper,
            prior_std: PriorStd::Paper,
            noise_free: false,
            seed: 0,
            batch_size: 15,
            learning_rate: 1e-4,
            steps: 1000,
            net_preset: "paper".into(),
        }
    }
}

macro_rules! take_if_set {
    ($dst:expr, $($src:expr => $field:ident),+ $(,)?) => {
        $(if let Some(v) = $src.clone() { $dst.$field = v; })+
    };
}

impl EffectiveConfig {
    pub fn from_file(file: &RunConfigFile) -> Self {
        let mut cfg = EffectiveConfig::default();
        take_if_set!(cfg,
            file.sample_rate => sample_rate,
            file.fft_size => fft_size,
            file.hop => hop,
            file.comp_exponent => comp_exponent,
            file.comp_scale => comp_scale,
            file.t => t,
            file.kappa => kappa,
            file.p => p,
            file.alpha_bar_1 => alpha_bar_1,
            file.alpha_bar_t => alpha_bar_t,
            file.guidance_mode => guidance_mode,
            file.variance_mode => variance_mode,
            file.prior_std => prior_std,
            file.noise_free => noise_free,
            file.seed => seed,
            file.batch_size => batch_size,
            file.learning_rate => learning_rate,
            file.steps => steps,
            file.net_preset => net_preset,
        );
        cfg
    }

    pub fn spectral(&self) -> SpectralConfig {
        SpectralConfig {
            fft_size: self.fft_size,
            hop: self.hop,
            comp_exponent: self.comp_exponent,
            comp_scale: self.comp_scale,
            ..SpectralConfig::default()
        }
    }

    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            steps: self.t,
            alpha_bar_1: self.alpha_bar_1,
            alpha_bar_t: self.alpha_bar_t,
            warp: self.p,
            kappa: self.kappa,
        }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            guidance_mode: self.guidance_mode,
            variance_mode: self.variance_mode,
            prior_std: self.prior_std,
            noise_free: self.noise_free,
            seed: self.seed,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            steps: self.steps,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    pub fn net(&self) -> Result<NetConfig> {
        self.net_preset.parse()
    }

    /// One TOML block echoing the configuration a command ran with.
    pub fn echo(&self) -> String {
        let body = toml::to_string(self).unwrap_or_else(|e| format!("# unserializable: {e}"));
        format!("# effective configuration\n{body}")
    }
}

fn parse_mode<T: serde::de::DeserializeOwned>(field: &str, value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string())).map_err(|_| {
        Error::Config {
            field: field.into(),
            message: format!("`{value}` is not a recognized value"),
        }
    })
}

/// Shared flags that tweak the sampler and the run seed.
#[derive(Args, Clone, Debug, Default)]
pub struct CommonOverrides {
    /// Path to a TOML run configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for every random draw in the command.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Guidance mode: anisotropic, isotropic or none.
    #[arg(long)]
    pub guidance: Option<String>,
    /// Reverse-step noise formula: paper or exact_posterior.
    #[arg(long)]
    pub variance_mode: Option<String>,
    /// Prior perturbation scale: paper or marginal.
    #[arg(long)]
    pub prior_std: Option<String>,
    /// Remove all sampling noise (deterministic cold start).
    #[arg(long)]
    pub noise_free: bool,
}

impl CommonOverrides {
    fn resolve(&self) -> Result<EffectiveConfig> {
        let file = match &self.config {
            Some(path) => RunConfigFile::load(path)?,
            None => RunConfigFile::default(),
        };
        let mut cfg = EffectiveConfig::from_file(&file);
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(g) = &self.guidance {
            cfg.guidance_mode = parse_mode("guidance_mode", g)?;
        }
        if let Some(v) = &self.variance_mode {
            cfg.variance_mode = parse_mode("variance_mode", v)?;
        }
        if let Some(p) = &self.prior_std {
            cfg.prior_std = parse_mode("prior_std", p)?;
        }
        if self.noise_free {
            cfg.noise_free = true;
        }
        Ok(cfg)
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "anisodiff",
    version,
    about = "Guided anisotropic diffusion speech enhancement"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train the mask estimator and denoiser on a mixing manifest.
    Train(TrainArgs),
    /// Enhance one noisy WAV file with a trained checkpoint.
    Enhance(EnhanceArgs),
    /// Score a checkpoint over a manifest and write a JSON report.
    Evaluate(EvaluateArgs),
    /// Print (and optionally dump) the noise schedule table.
    Schedule(ScheduleArgs),
    /// Emit spectrogram panels for a noisy file and pipeline states.
    Visualize(VisualizeArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonOverrides,
    /// CSV manifest: clean_path,noise_path,snr_db.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Optional manifest for a validation loss after training.
    #[arg(long)]
    pub val_manifest: Option<PathBuf>,
    /// Output directory for the checkpoint, loss log and config echo.
    #[arg(long)]
    pub out: PathBuf,
    /// Optimizer steps to run.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Items per optimizer step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Network size preset: paper, desk or toy.
    #[arg(long)]
    pub net_preset: Option<String>,
    /// Crop each training item to this many seconds (full length when
    /// omitted).
    #[arg(long)]
    pub crop_seconds: Option<f64>,
    /// Save the checkpoint every this many steps (always saved at the
    /// end).
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EnhanceArgs {
    #[command(flatten)]
    pub common: CommonOverrides,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Noisy input WAV.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Enhanced output WAV.
    #[arg(long)]
    pub out: PathBuf,
    /// Matched clean WAV: derive the guidance from the true mask
    /// instead of the estimator (diagnostic mode).
    #[arg(long)]
    pub oracle_clean: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonOverrides,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// CSV manifest: clean_path,noise_path,snr_db.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Where to write the JSON metric report.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Args, Debug)]
pub struct ScheduleArgs {
    #[command(flatten)]
    pub common: CommonOverrides,
    /// Also write the table as CSV to this path.
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VisualizeArgs {
    #[command(flatten)]
    pub common: CommonOverrides,
    /// Noisy input WAV.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Matched clean WAV for an extra panel.
    #[arg(long)]
    pub clean: Option<PathBuf>,
    /// Checkpoint for prior/enhanced panels.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output directory for the PNG panels.
    #[arg(long)]
    pub out: PathBuf,
}

/// Reads a WAV and brings it to `rate`, noting the conversion.
fn read_wav_at(path: &Path, rate: u32) -> Result<Waveform> {
    let w = read_wav(path)?;
    if w.sample_rate == rate {
        return Ok(w);
    }
    println!(
        "resampling {} from {} Hz to {} Hz",
        path.display(),
        w.sample_rate,
        rate
    );
    resample(&w, rate)
}

fn build_pairs(
    manifest: &Path,
    seed: u64,
    spectral: &SpectralConfig,
    rate: u32,
    crop: Option<usize>,
) -> Result<Vec<TrainPair>> {
    let entries = load_manifest(manifest)?;
    entries
        .iter()
        .map(|e| {
            make_pair(e, seed, spectral, rate, crop).map_err(|err| {
                Error::InvalidInput(format!("manifest item {}: {err}", e.id))
            })
        })
        .collect()
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = args.common.resolve()?;
    if let Some(v) = args.steps {
        cfg.steps = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = &args.net_preset {
        cfg.net_preset = v.clone();
    }
    print!("{}", cfg.echo());

    let crop = args
        .crop_seconds
        .map(|s| {
            if !(s > 0.0) {
                return Err(Error::Config {
                    field: "crop_seconds".into(),
                    message: "must be positive".into(),
                });
            }
            Ok((s * cfg.sample_rate as f64).round() as usize)
        })
        .transpose()?;

    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    std::fs::write(args.out.join("effective_config.toml"), cfg.echo())
        .map_err(|e| Error::io(&args.out.join("effective_config.toml"), e))?;

    let spectral = cfg.spectral();
    let pairs = build_pairs(&args.manifest, cfg.seed, &spectral, cfg.sample_rate, crop)?;
    println!("loaded {} training pairs", pairs.len());

    let mut train_cfg = cfg.train();
    if let Some(every) = args.checkpoint_every {
        train_cfg.checkpoint_every = every;
    }
    let mut trainer = Trainer::new(
        &cfg.net()?,
        &cfg.schedule(),
        &spectral,
        &train_cfg,
        cfg.sample_rate,
    )?;

    let log_path = args.out.join("loss_log.jsonl");
    let mut log = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let ckpt_path = args.out.join("checkpoint.ckpt");
    let history = trainer.train_loop(
        &pairs,
        Some(&mut log as &mut dyn std::io::Write),
        Some(&ckpt_path),
    )?;
    let last = history.last().expect("steps is validated positive");
    println!(
        "finished {} steps: diffusion_loss {:.6e}, cmen_loss {:.6e}",
        last.step, last.diffusion_loss, last.cmen_loss
    );
    println!("checkpoint: {}", ckpt_path.display());
    println!("loss log: {}", log_path.display());

    if let Some(val_manifest) = &args.val_manifest {
        let val_pairs =
            build_pairs(val_manifest, cfg.seed ^ 1, &spectral, cfg.sample_rate, crop)?;
        let (d, c) = trainer.eval_losses(&val_pairs)?;
        println!("validation: diffusion_loss {d:.6e}, cmen_loss {c:.6e}");
    }
    Ok(())
}

pub fn cmd_enhance(args: &EnhanceArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    print!("{}", cfg.echo());
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let enhancer = Enhancer::new(&ckpt)?;
    let noisy = read_wav_at(&args.input, ckpt.sample_rate)?;
    let sampler = cfg.sampler();
    let result = match &args.oracle_clean {
        Some(clean_path) => {
            let clean = read_wav_at(clean_path, ckpt.sample_rate)?;
            enhancer.enhance_with_oracle_mask(&noisy, &clean, &sampler)?
        }
        None => enhancer.enhance(&noisy, &sampler)?,
    };
    write_wav(&args.out, &result.enhanced, WavFormat::Float32)?;
    println!("steps_used: {}", result.steps_used);
    println!("seed: {}", result.seed);
    println!("wrote {}", args.out.display());
    Ok(())
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    print!("{}", cfg.echo());
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let entries = load_manifest(&args.manifest)?;
    let report = evaluate(&entries, &ckpt, &cfg.sampler(), cfg.seed)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Invariant(format!("report serialization: {e}")))?;
    std::fs::write(&args.report, json).map_err(|e| Error::io(&args.report, e))?;
    println!(
        "evaluated {} items ({} failed)",
        report.items.len(),
        report.failed_items
    );
    if let (Some(noisy), Some(enhanced)) = (
        report.overall.mean_si_snr_noisy,
        report.overall.mean_si_snr_enhanced,
    ) {
        println!("mean si-snr: noisy {noisy:.2} dB, enhanced {enhanced:.2} dB");
    }
    println!("report: {}", args.report.display());
    Ok(())
}

pub fn cmd_schedule(args: &ScheduleArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    print!("{}", cfg.echo());
    let schedule = NoiseSchedule::geometric(cfg.schedule())?;
    let rows = schedule.rows(cfg.variance_mode);
    println!("t,alpha_bar,alpha,beta,reverse_std_coeff");
    for r in &rows {
        println!(
            "{},{:.17e},{:.17e},{:.17e},{:.17e}",
            r.t, r.alpha_bar, r.alpha, r.beta, r.reverse_std_coeff
        );
    }
    if let Some(path) = &args.dump {
        let mut writer = csv::Writer::from_path(path)
            .map_err(|e| Error::InvalidInput(format!("cannot write {}: {e}", path.display())))?;
        for r in &rows {
            writer
                .serialize(r)
                .map_err(|e| Error::InvalidInput(format!("csv write: {e}")))?;
        }
        writer
            .flush()
            .map_err(|e| Error::io(path, e))?;
        println!("dumped {}", path.display());
    }
    Ok(())
}

pub fn cmd_visualize(args: &VisualizeArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    print!("{}", cfg.echo());
    let ckpt = match &args.checkpoint {
        Some(path) => Some(Checkpoint::load(path)?),
        None => None,
    };
    let rate = ckpt.as_ref().map(|c| c.sample_rate);
    let noisy = match rate {
        Some(rate) => read_wav_at(&args.input, rate)?,
        None => read_wav(&args.input)?,
    };
    let clean = match &args.clean {
        Some(path) => Some(match rate {
            Some(rate) => read_wav_at(path, rate)?,
            None => read_wav(path)?,
        }),
        None => None,
    };
    let written = visualize(
        &noisy,
        clean.as_ref(),
        ckpt.as_ref(),
        &cfg.sampler(),
        &args.out,
    )?;
    for path in &written {
        println!("wrote {}", path.display());
    }
    println!("{} panels", written.len());
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Enhance(args) => cmd_enhance(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Schedule(args) => cmd_schedule(args),
        Command::Visualize(args) => cmd_visualize(args),
    }
}
