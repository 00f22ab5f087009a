//! Joint training of the mask estimator and the diffusion denoiser.
//!
//! Each item builds one computation graph holding both networks. The
//! mask estimator's output becomes the guidance field through `1 - m`,
//! and that field crosses into the diffusion branch through a detached
//! copy: the denoiser is conditioned on the field's values, but the
//! diffusion loss cannot push gradients back into the mask estimator.
//! The mask loss trains the estimator; the reconstruction loss trains
//! the denoiser; one optimizer step applies both.
//!
//! Checkpoints are a single binary file: magic, format version, a JSON
//! header (configs plus a tensor manifest), then raw little-endian f64
//! payloads in manifest order. Round trips are bit-exact.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::data::TrainPair;
use crate::diffusion::forward_marginal_sample;
use crate::error::{Error, Result};
use crate::guidance::GuidanceField;
use crate::nets::{
    cmen_input_planes, complex_planes, denoiser_input_planes, register_params, CmenNet,
    DenoiserNet, NetConfig, ParamStore,
};
use crate::rng::Prng;
use crate::schedule::{NoiseSchedule, ScheduleConfig};
use crate::spectral::SpectralConfig;

const CHECKPOINT_MAGIC: &[u8; 4] = b"ADCK";
const CHECKPOINT_VERSION: u32 = 1;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Optimization hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Number of optimizer steps to run.
    pub steps: usize,
    pub seed: u64,
    /// Weight on the denoiser reconstruction loss.
    pub diffusion_loss_weight: f64,
    /// Weight on the mask estimation loss.
    pub mask_loss_weight: f64,
    /// Save the checkpoint every this many steps (0 saves only at the
    /// end).
    pub checkpoint_every: usize,
    /// Exponential moving average of the weights; the checkpoint holds
    /// the averaged weights when enabled.
    pub ema_decay: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 15,
            learning_rate: 1e-4,
            steps: 1000,
            seed: 0,
            diffusion_loss_weight: 1.0,
            mask_loss_weight: 1.0,
            checkpoint_every: 0,
            ema_decay: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let field = |field: &str, message: &str| Error::Config {
            field: field.into(),
            message: message.into(),
        };
        if self.batch_size == 0 {
            return Err(field("batch_size", "must be positive"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(field("learning_rate", "must be positive and finite"));
        }
        if self.steps == 0 {
            return Err(field("steps", "must be positive"));
        }
        for (name, w) in [
            ("diffusion_loss_weight", self.diffusion_loss_weight),
            ("mask_loss_weight", self.mask_loss_weight),
        ] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(field(name, "must be non-negative and finite"));
            }
        }
        if let Some(d) = self.ema_decay {
            if !(0.0..1.0).contains(&d) {
                return Err(field("ema_decay", "must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    net: String,
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    net_config: NetConfig,
    spectral: SpectralConfig,
    schedule: ScheduleConfig,
    sample_rate: u32,
    tensors: Vec<TensorInfo>,
}

/// Trained weights plus the configuration they were trained under.
#[derive(Clone)]
pub struct Checkpoint {
    pub net_config: NetConfig,
    pub spectral: SpectralConfig,
    pub schedule: ScheduleConfig,
    pub sample_rate: u32,
    pub cmen_params: ParamStore,
    pub denoiser_params: ParamStore,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors = Vec::new();
        let mut payload: Vec<u8> = Vec::new();
        for (net, store) in [("cmen", &self.cmen_params), ("den", &self.denoiser_params)] {
            for (name, t) in store.iter() {
                tensors.push(TensorInfo {
                    net: net.into(),
                    name: name.into(),
                    shape: t.shape.clone(),
                });
                for v in &t.data {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let header = CheckpointHeader {
            net_config: self.net_config.clone(),
            spectral: self.spectral,
            schedule: self.schedule,
            sample_rate: self.sample_rate,
            tensors,
        };
        let header_bytes = serde_json::to_vec(&header)
            .map_err(|e| Error::Invariant(format!("checkpoint header serialization: {e}")))?;
        let mut out = Vec::with_capacity(16 + header_bytes.len() + payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_bytes);
        out.extend_from_slice(&payload);
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt_err = |message: String| Error::Checkpoint {
            path: path.into(),
            message,
        };
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(ckpt_err("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(ckpt_err(format!(
                "unsupported format version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let payload_start = 16usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| ckpt_err("truncated header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[16..payload_start])
            .map_err(|e| ckpt_err(format!("bad header: {e}")))?;

        let mut cursor = payload_start;
        let mut cmen_params = ParamStore::new();
        let mut denoiser_params = ParamStore::new();
        for info in &header.tensors {
            let numel: usize = info.shape.iter().product();
            let end = cursor
                .checked_add(numel * 8)
                .filter(|&end| end <= bytes.len())
                .ok_or_else(|| {
                    ckpt_err(format!("truncated payload at tensor `{}`", info.name))
                })?;
            let data: Vec<f64> = bytes[cursor..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(ckpt_err(format!(
                    "tensor `{}` holds non-finite values",
                    info.name
                )));
            }
            cursor = end;
            let store = match info.net.as_str() {
                "cmen" => &mut cmen_params,
                "den" => &mut denoiser_params,
                other => return Err(ckpt_err(format!("unknown net tag `{other}`"))),
            };
            store.insert(&info.name, Tensor::from_vec(&info.shape, data));
        }
        if cursor != bytes.len() {
            return Err(ckpt_err(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - cursor
            )));
        }
        Ok(Checkpoint {
            net_config: header.net_config,
            spectral: header.spectral,
            schedule: header.schedule,
            sample_rate: header.sample_rate,
            cmen_params,
            denoiser_params,
        })
    }

    /// Instantiates both networks around the stored weights.
    pub fn build_nets(&self) -> Result<(CmenNet, DenoiserNet)> {
        let cmen = CmenNet::from_params(&self.net_config, self.cmen_params.clone())?;
        let denoiser = DenoiserNet::from_params(
            &self.net_config,
            self.schedule.steps,
            self.denoiser_params.clone(),
        )?;
        Ok((cmen, denoiser))
    }
}

/// Adam with bias correction; one state per parameter store.
struct AdamState {
    m: HashMap<String, Tensor>,
    v: HashMap<String, Tensor>,
    step: u64,
}

impl AdamState {
    fn new() -> Self {
        AdamState {
            m: HashMap::new(),
            v: HashMap::new(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut ParamStore, grads: &HashMap<String, Tensor>, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self
                .m
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(&p.shape));
            let v = self
                .v
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(&p.shape));
            for i in 0..p.data.len() {
                m.data[i] = ADAM_BETA1 * m.data[i] + (1.0 - ADAM_BETA1) * g.data[i];
                v.data[i] = ADAM_BETA2 * v.data[i] + (1.0 - ADAM_BETA2) * g.data[i] * g.data[i];
                let m_hat = m.data[i] / c1;
                let v_hat = v.data[i] / c2;
                p.data[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

struct EmaState {
    decay: f64,
    cmen: ParamStore,
    denoiser: ParamStore,
}

impl EmaState {
    fn update_store(shadow: &mut ParamStore, live: &ParamStore, decay: f64) {
        for (name, s) in shadow.iter_mut() {
            let l = live.get(name);
            for i in 0..s.data.len() {
                s.data[i] = decay * s.data[i] + (1.0 - decay) * l.data[i];
            }
        }
    }

    fn update(&mut self, cmen: &ParamStore, denoiser: &ParamStore) {
        Self::update_store(&mut self.cmen, cmen, self.decay);
        Self::update_store(&mut self.denoiser, denoiser, self.decay);
    }
}

/// Losses averaged over one optimizer step's batch.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct StepStats {
    pub step: usize,
    pub diffusion_loss: f64,
    pub cmen_loss: f64,
}

/// Losses, per-parameter gradients and the detached guidance field
/// from one item's joint pass. Exposed so tests and diagnostics can
/// inspect exactly what the optimizer consumes.
pub struct ItemGrads {
    pub diffusion_loss: f64,
    pub cmen_loss: f64,
    pub cmen: HashMap<String, Tensor>,
    pub denoiser: HashMap<String, Tensor>,
    pub guidance: GuidanceField,
}

/// Owns both networks, the optimizer state and the training stream.
pub struct Trainer {
    pub cmen: CmenNet,
    pub denoiser: DenoiserNet,
    pub schedule: NoiseSchedule,
    pub schedule_config: ScheduleConfig,
    pub spectral: SpectralConfig,
    pub sample_rate: u32,
    pub config: TrainConfig,
    rng: Prng,
    opt_cmen: AdamState,
    opt_denoiser: AdamState,
    ema: Option<EmaState>,
    steps_done: usize,
}

impl Trainer {
    pub fn new(
        net_config: &NetConfig,
        schedule_config: &ScheduleConfig,
        spectral: &SpectralConfig,
        config: &TrainConfig,
        sample_rate: u32,
    ) -> Result<Self> {
        config.validate()?;
        spectral.validate()?;
        let schedule = NoiseSchedule::geometric(*schedule_config)?;
        let master = Prng::seed_from(config.seed);
        let mut cmen_rng = master.split_labeled(1);
        let mut den_rng = master.split_labeled(2);
        let rng = master.split_labeled(3);
        let cmen = CmenNet::new(net_config, &mut cmen_rng)?;
        let denoiser = DenoiserNet::new(net_config, schedule_config.steps, &mut den_rng)?;
        let ema = config.ema_decay.map(|decay| EmaState {
            decay,
            cmen: cmen.params.clone(),
            denoiser: denoiser.params.clone(),
        });
        Ok(Trainer {
            cmen,
            denoiser,
            schedule,
            schedule_config: *schedule_config,
            spectral: *spectral,
            sample_rate,
            config: *config,
            rng,
            opt_cmen: AdamState::new(),
            opt_denoiser: AdamState::new(),
            ema,
            steps_done: 0,
        })
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    /// Exports the current weights (the averaged ones when EMA is on).
    pub fn checkpoint(&self) -> Checkpoint {
        let (cmen_params, denoiser_params) = match &self.ema {
            Some(ema) => (ema.cmen.clone(), ema.denoiser.clone()),
            None => (self.cmen.params.clone(), self.denoiser.params.clone()),
        };
        Checkpoint {
            net_config: self.cmen.config.clone(),
            spectral: self.spectral,
            schedule: self.schedule_config,
            sample_rate: self.sample_rate,
            cmen_params,
            denoiser_params,
        }
    }

    /// Builds the joint graph for one item and returns its losses and
    /// parameter gradients.
    pub fn item_pass(&self, pair: &TrainPair, t: usize, rng: &mut Prng) -> Result<ItemGrads> {
        let (k, f) = pair.y.values.dim();
        let mut graph = Graph::new();
        let cmen_nodes = register_params(&mut graph, &self.cmen.params, true);
        let den_nodes = register_params(&mut graph, &self.denoiser.params, true);

        let y_in = graph.input(cmen_input_planes(&pair.y));
        let mask_node = self.cmen.forward_graph(&mut graph, &cmen_nodes, y_in);
        let ones = graph.input(Tensor::from_vec(&[1, k, f], vec![1.0; k * f]));
        let g_node = graph.sub(ones, mask_node);
        // The guidance crosses into the diffusion branch as a value
        // only; the denoiser loss must not train the mask estimator.
        let g_cut = graph.detach(g_node);
        if !graph.value(g_cut).all_finite() {
            return Err(Error::Numerical(format!(
                "mask estimator produced non-finite guidance on item {}",
                pair.id
            )));
        }
        let g_field = GuidanceField::new(
            Array2::from_shape_vec((k, f), graph.value(g_cut).data.clone())
                .expect("mask output shape matches the mixture"),
        )?;

        let x_t = forward_marginal_sample(&pair.x0, &pair.y, &g_field, &self.schedule, t, rng)?;
        let den_in = graph.input(denoiser_input_planes(&x_t, &pair.y, &g_field));
        let x0_hat = self
            .denoiser
            .forward_graph(&mut graph, &den_nodes, den_in, t)?;

        let x0_target = graph.input(complex_planes(&pair.x0));
        let d = graph.sub(x0_hat, x0_target);
        let d2 = graph.mul(d, d);
        let diffusion_loss = graph.mean(d2);

        let mask_both = graph.concat_ch(mask_node, mask_node);
        let y_planes = graph.input(complex_planes(&pair.y));
        let masked = graph.mul(mask_both, y_planes);
        let e = graph.sub(masked, x0_target);
        let e2 = graph.mul(e, e);
        let cmen_loss = graph.mean(e2);

        let weighted_d = graph.scale(diffusion_loss, self.config.diffusion_loss_weight);
        let weighted_c = graph.scale(cmen_loss, self.config.mask_loss_weight);
        let total = graph.add(weighted_d, weighted_c);

        let d_val = graph.value(diffusion_loss).data[0];
        let c_val = graph.value(cmen_loss).data[0];
        if !d_val.is_finite() || !c_val.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss on item {} at t = {t} (diffusion {d_val}, mask {c_val})",
                pair.id
            )));
        }

        let grads = graph.backward(total);
        let collect = |nodes: &HashMap<String, usize>| {
            nodes
                .iter()
                .filter_map(|(name, &id)| {
                    grads[id].as_ref().map(|g| (name.clone(), g.clone()))
                })
                .collect::<HashMap<_, _>>()
        };
        Ok(ItemGrads {
            diffusion_loss: d_val,
            cmen_loss: c_val,
            cmen: collect(&cmen_nodes),
            denoiser: collect(&den_nodes),
            guidance: g_field,
        })
    }

    /// The diffusion loss as the function the stop-gradient makes it:
    /// guidance enters as a constant, so the value depends on the
    /// denoiser weights and the noise draw only. With the same `g`,
    /// timestep and rng stream this reproduces [`Trainer::item_pass`]'s
    /// diffusion loss bit for bit, whatever the mask estimator weights
    /// are.
    pub fn diffusion_loss_frozen(
        &self,
        pair: &TrainPair,
        t: usize,
        rng: &mut Prng,
        g: &GuidanceField,
    ) -> Result<f64> {
        let mut graph = Graph::new();
        let den_nodes = register_params(&mut graph, &self.denoiser.params, true);
        let x_t = forward_marginal_sample(&pair.x0, &pair.y, g, &self.schedule, t, rng)?;
        let den_in = graph.input(denoiser_input_planes(&x_t, &pair.y, g));
        let x0_hat = self
            .denoiser
            .forward_graph(&mut graph, &den_nodes, den_in, t)?;
        let x0_target = graph.input(complex_planes(&pair.x0));
        let d = graph.sub(x0_hat, x0_target);
        let d2 = graph.mul(d, d);
        let diffusion_loss = graph.mean(d2);
        Ok(graph.value(diffusion_loss).data[0])
    }

    /// One optimizer step over a batch: per-item gradients are averaged
    /// and applied once to each network.
    pub fn train_step(&mut self, batch: &[&TrainPair]) -> Result<StepStats> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty training batch".into()));
        }
        let mut cmen_acc: HashMap<String, Tensor> = HashMap::new();
        let mut den_acc: HashMap<String, Tensor> = HashMap::new();
        let mut d_sum = 0.0;
        let mut c_sum = 0.0;
        let mut rng = self.rng.split();
        for pair in batch {
            let t = 1 + rng.index(self.schedule.steps());
            let item = self.item_pass(pair, t, &mut rng)?;
            d_sum += item.diffusion_loss;
            c_sum += item.cmen_loss;
            for (acc, grads) in [(&mut cmen_acc, item.cmen), (&mut den_acc, item.denoiser)] {
                for (name, g) in grads {
                    match acc.get_mut(&name) {
                        Some(a) => {
                            for i in 0..a.data.len() {
                                a.data[i] += g.data[i];
                            }
                        }
                        None => {
                            acc.insert(name, g);
                        }
                    }
                }
            }
        }
        let n = batch.len() as f64;
        for acc in [&mut cmen_acc, &mut den_acc] {
            for g in acc.values_mut() {
                for v in &mut g.data {
                    *v /= n;
                }
            }
        }
        self.opt_cmen
            .update(&mut self.cmen.params, &cmen_acc, self.config.learning_rate);
        self.opt_denoiser.update(
            &mut self.denoiser.params,
            &den_acc,
            self.config.learning_rate,
        );
        if let Some(ema) = &mut self.ema {
            ema.update(&self.cmen.params, &self.denoiser.params);
        }
        self.steps_done += 1;
        Ok(StepStats {
            step: self.steps_done,
            diffusion_loss: d_sum / n,
            cmen_loss: c_sum / n,
        })
    }

    /// Runs `config.steps` optimizer steps over the pairs, drawing each
    /// batch from a seeded permutation that reshuffles every epoch.
    /// Writes one JSON line of losses per step to `log`, and saves the
    /// checkpoint to `checkpoint_path` periodically (per
    /// `checkpoint_every`) and at the end.
    pub fn train_loop(
        &mut self,
        pairs: &[TrainPair],
        mut log: Option<&mut dyn Write>,
        checkpoint_path: Option<&Path>,
    ) -> Result<Vec<StepStats>> {
        if pairs.is_empty() {
            return Err(Error::InvalidInput("no training pairs".into()));
        }
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut epoch_rng = self.rng.split_labeled(17);
        epoch_rng.shuffle(&mut order);
        let mut cursor = 0usize;
        let mut history = Vec::with_capacity(self.config.steps);
        for _ in 0..self.config.steps {
            let mut batch = Vec::with_capacity(self.config.batch_size);
            for _ in 0..self.config.batch_size {
                if cursor == order.len() {
                    epoch_rng.shuffle(&mut order);
                    cursor = 0;
                }
                batch.push(&pairs[order[cursor]]);
                cursor += 1;
            }
            let stats = self.train_step(&batch)?;
            if let Some(log) = log.as_deref_mut() {
                let line = serde_json::to_string(&stats)
                    .map_err(|e| Error::Invariant(format!("loss log serialization: {e}")))?;
                writeln!(log, "{line}").map_err(|e| {
                    Error::InvalidInput(format!("cannot write training log: {e}"))
                })?;
            }
            if let Some(path) = checkpoint_path {
                let every = self.config.checkpoint_every;
                if every > 0 && stats.step % every == 0 {
                    self.checkpoint().save(path)?;
                }
            }
            history.push(stats);
        }
        if let Some(path) = checkpoint_path {
            self.checkpoint().save(path)?;
        }
        Ok(history)
    }

    /// Mean per-item losses over a held-out set, with no weight
    /// updates. Timesteps and noise draws come from a stream keyed only
    /// by the run seed, so repeated calls on the same weights score
    /// identically.
    pub fn eval_losses(&self, pairs: &[TrainPair]) -> Result<(f64, f64)> {
        if pairs.is_empty() {
            return Err(Error::InvalidInput("validation set is empty".into()));
        }
        let mut rng = Prng::seed_from(self.config.seed).split_labeled(29);
        let mut d_sum = 0.0;
        let mut c_sum = 0.0;
        for pair in pairs {
            let t = 1 + rng.index(self.schedule.steps());
            let item = self.item_pass(pair, t, &mut rng)?;
            d_sum += item.diffusion_loss;
            c_sum += item.cmen_loss;
        }
        let n = pairs.len() as f64;
        Ok((d_sum / n, c_sum / n))
    }
}
