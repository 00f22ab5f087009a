//! The two trainable networks: a mask estimator and a diffusion
//! denoiser, both small U-Nets over time-frequency planes.
//!
//! The denoiser consumes five planes (real and imaginary parts of the
//! current state, real and imaginary parts of the mixture, and the
//! guidance field) plus a sinusoidal step embedding injected into every
//! residual block as a per-channel bias, and emits two planes that are
//! reassembled into a complex clean estimate. The mask estimator
//! consumes the two mixture planes and emits one plane through a
//! clamped sigmoid, so its output is strictly inside (0, 1).
//!
//! Architecture layout is fixed by [`NetConfig`]: a stem convolution,
//! `mults.len()` encoder levels of residual blocks with stride-2
//! downsampling between them, a residual bottleneck, and a mirrored
//! decoder with nearest-neighbor upsampling and one skip concatenation
//! per level. Presets size the networks for full training
//! ([`NetConfig::paper_scale`]), for fast CPU experiments
//! ([`NetConfig::desk_scale`]), and for gradient-check toys
//! ([`NetConfig::toy_scale`]).

use std::collections::HashMap;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::diffusion::Denoiser;
use crate::error::{Error, Result};
use crate::guidance::{GuidanceField, Mask};
use crate::rng::Prng;
use crate::spectral::ComplexSpectrogram;

/// Logits are clamped to this magnitude before the mask sigmoid;
/// sigmoid(30) is still representable away from 1.0 in f64.
const MASK_LOGIT_CLAMP: f64 = 30.0;

const GROUP_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub den_width: usize,
    pub den_mults: Vec<usize>,
    pub den_res_blocks: usize,
    pub cmen_width: usize,
    pub cmen_mults: Vec<usize>,
    pub cmen_res_blocks: usize,
}

impl NetConfig {
    /// Full-size networks, a few million parameters together.
    pub fn paper_scale() -> Self {
        NetConfig {
            den_width: 32,
            den_mults: vec![1, 2, 4],
            den_res_blocks: 2,
            cmen_width: 32,
            cmen_mults: vec![1, 2, 2],
            cmen_res_blocks: 1,
        }
    }

    /// Small enough to train on a laptop CPU in minutes; both nets
    /// together stay under a hundred thousand parameters.
    pub fn desk_scale() -> Self {
        NetConfig {
            den_width: 8,
            den_mults: vec![1, 2],
            den_res_blocks: 1,
            cmen_width: 8,
            cmen_mults: vec![1, 2],
            cmen_res_blocks: 1,
        }
    }

    /// Minimal config for finite-difference tests.
    pub fn toy_scale() -> Self {
        NetConfig {
            den_width: 4,
            den_mults: vec![1, 2],
            den_res_blocks: 1,
            cmen_width: 4,
            cmen_mults: vec![1],
            cmen_res_blocks: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |field: &str, width: usize, mults: &[usize], nres: usize| {
            if width < 2 {
                return Err(Error::Config {
                    field: field.into(),
                    message: "width must be at least 2".into(),
                });
            }
            if mults.is_empty() || mults.iter().any(|&m| m == 0) {
                return Err(Error::Config {
                    field: field.into(),
                    message: "channel multipliers must be non-empty and positive".into(),
                });
            }
            if nres == 0 {
                return Err(Error::Config {
                    field: field.into(),
                    message: "need at least one residual block per level".into(),
                });
            }
            Ok(())
        };
        check("den", self.den_width, &self.den_mults, self.den_res_blocks)?;
        check(
            "cmen",
            self.cmen_width,
            &self.cmen_mults,
            self.cmen_res_blocks,
        )
    }
}

impl std::str::FromStr for NetConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(NetConfig::paper_scale()),
            "desk" => Ok(NetConfig::desk_scale()),
            "toy" => Ok(NetConfig::toy_scale()),
            other => Err(Error::Config {
                field: "net_preset".into(),
                message: format!("unknown preset `{other}` (expected paper, desk or toy)"),
            }),
        }
    }
}

/// Named parameter tensors in a fixed insertion order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        self.index.insert(name.to_string(), self.tensors.len());
        self.names.push(name.to_string());
        self.tensors.push(t);
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.tensors[*self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        let i = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"));
        &mut self.tensors[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .map(|n| n.as_str())
            .zip(self.tensors.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names
            .iter()
            .map(|n| n.as_str())
            .zip(self.tensors.iter_mut())
    }

    pub fn tensor_count(&self) -> usize {
        self.tensors.len()
    }

    pub fn count_params(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Same names, same order, same shapes.
    pub fn layout_matches(&self, other: &ParamStore) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape == b.shape)
    }
}

/// Node ids of registered parameters, keyed by name.
pub type ParamNodes = HashMap<String, NodeId>;

/// Puts every tensor of a store on a graph. Trainable registration
/// yields gradient-tracked leaves; inference registration yields
/// constants.
pub fn register_params(g: &mut Graph, store: &ParamStore, trainable: bool) -> ParamNodes {
    store
        .iter()
        .map(|(name, t)| {
            let id = if trainable {
                g.param(t.clone())
            } else {
                g.input(t.clone())
            };
            (name.to_string(), id)
        })
        .collect()
}

/// Group count for normalization: groups of at least 4 channels, at
/// most 8 groups, and always dividing the channel count.
fn groups_for(channels: usize) -> usize {
    let mut g = (channels / 4).clamp(1, 8);
    while channels % g != 0 {
        g -= 1;
    }
    g
}

struct ConvSpec {
    name: String,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    zero_init: bool,
}

impl ConvSpec {
    fn new(name: String, cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        ConvSpec {
            name,
            cin,
            cout,
            k,
            stride,
            pad: k / 2,
            zero_init: false,
        }
    }

    fn init(&self, store: &mut ParamStore, rng: &mut Prng) {
        let fan_in = (self.cin * self.k * self.k) as f64;
        let std = (2.0 / fan_in).sqrt();
        let n = self.cout * self.cin * self.k * self.k;
        let data = if self.zero_init {
            vec![0.0; n]
        } else {
            (0..n).map(|_| std * rng.standard_normal()).collect()
        };
        store.insert(
            &format!("{}.w", self.name),
            Tensor::from_vec(&[self.cout, self.cin, self.k, self.k], data),
        );
        store.insert(&format!("{}.b", self.name), Tensor::zeros(&[self.cout]));
    }

    fn forward(&self, g: &mut Graph, nodes: &ParamNodes, x: NodeId) -> NodeId {
        let w = nodes[&format!("{}.w", self.name)];
        let b = nodes[&format!("{}.b", self.name)];
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

struct NormSpec {
    name: String,
    channels: usize,
}

impl NormSpec {
    fn init(&self, store: &mut ParamStore) {
        store.insert(
            &format!("{}.g", self.name),
            Tensor::from_vec(&[self.channels], vec![1.0; self.channels]),
        );
        store.insert(&format!("{}.b", self.name), Tensor::zeros(&[self.channels]));
    }

    fn forward(&self, g: &mut Graph, nodes: &ParamNodes, x: NodeId) -> NodeId {
        let gamma = nodes[&format!("{}.g", self.name)];
        let beta = nodes[&format!("{}.b", self.name)];
        g.group_norm(x, gamma, beta, groups_for(self.channels), GROUP_NORM_EPS)
    }
}

struct LinearSpec {
    name: String,
    din: usize,
    dout: usize,
}

impl LinearSpec {
    fn init(&self, store: &mut ParamStore, rng: &mut Prng) {
        let std = (1.0 / self.din as f64).sqrt();
        let data = (0..self.din * self.dout)
            .map(|_| std * rng.standard_normal())
            .collect();
        store.insert(
            &format!("{}.w", self.name),
            Tensor::from_vec(&[self.dout, self.din], data),
        );
        store.insert(&format!("{}.b", self.name), Tensor::zeros(&[self.dout]));
    }

    fn forward(&self, g: &mut Graph, nodes: &ParamNodes, x: NodeId) -> NodeId {
        let w = nodes[&format!("{}.w", self.name)];
        let b = nodes[&format!("{}.b", self.name)];
        g.linear(x, w, b)
    }
}

struct ResBlockSpec {
    norm1: NormSpec,
    conv1: ConvSpec,
    emb_proj: Option<LinearSpec>,
    norm2: NormSpec,
    conv2: ConvSpec,
    skip: Option<ConvSpec>,
}

impl ResBlockSpec {
    fn new(prefix: &str, cin: usize, cout: usize, emb_dim: Option<usize>) -> Self {
        ResBlockSpec {
            norm1: NormSpec {
                name: format!("{prefix}.n1"),
                channels: cin,
            },
            conv1: ConvSpec::new(format!("{prefix}.c1"), cin, cout, 3, 1),
            emb_proj: emb_dim.map(|e| LinearSpec {
                name: format!("{prefix}.emb"),
                din: e,
                dout: cout,
            }),
            norm2: NormSpec {
                name: format!("{prefix}.n2"),
                channels: cout,
            },
            conv2: ConvSpec::new(format!("{prefix}.c2"), cout, cout, 3, 1),
            skip: (cin != cout).then(|| ConvSpec::new(format!("{prefix}.sk"), cin, cout, 1, 1)),
        }
    }

    fn init(&self, store: &mut ParamStore, rng: &mut Prng) {
        self.norm1.init(store);
        self.conv1.init(store, rng);
        if let Some(e) = &self.emb_proj {
            e.init(store, rng);
        }
        self.norm2.init(store);
        self.conv2.init(store, rng);
        if let Some(s) = &self.skip {
            s.init(store, rng);
        }
    }

    fn forward(&self, g: &mut Graph, nodes: &ParamNodes, x: NodeId, emb: Option<NodeId>) -> NodeId {
        let mut h = self.norm1.forward(g, nodes, x);
        h = g.silu(h);
        h = self.conv1.forward(g, nodes, h);
        h = self.norm2.forward(g, nodes, h);
        // The step bias goes in after normalization; a norm right
        // after would subtract a per-channel constant straight back
        // out whenever a group holds a single channel.
        if let (Some(proj), Some(emb)) = (&self.emb_proj, emb) {
            let bias = proj.forward(g, nodes, emb);
            h = g.add_channel_bias(h, bias);
        }
        h = g.silu(h);
        h = self.conv2.forward(g, nodes, h);
        let shortcut = match &self.skip {
            Some(s) => s.forward(g, nodes, x),
            None => x,
        };
        g.add(h, shortcut)
    }
}

struct UNetSpec {
    stem: ConvSpec,
    enc_levels: Vec<(Vec<ResBlockSpec>, Option<ConvSpec>)>,
    mid: Vec<ResBlockSpec>,
    dec_levels: Vec<(Option<ConvSpec>, Vec<ResBlockSpec>)>,
    head_norm: NormSpec,
    head_conv: ConvSpec,
}

impl UNetSpec {
    fn new(
        prefix: &str,
        in_ch: usize,
        out_ch: usize,
        width: usize,
        mults: &[usize],
        nres: usize,
        emb_dim: Option<usize>,
        mid_blocks: usize,
    ) -> Self {
        let levels = mults.len();
        let widths: Vec<usize> = mults.iter().map(|m| width * m).collect();

        let stem = ConvSpec::new(format!("{prefix}.stem"), in_ch, width, 3, 1);

        let mut enc_levels = Vec::new();
        let mut cur = width;
        for (i, &w) in widths.iter().enumerate() {
            let mut blocks = Vec::new();
            for r in 0..nres {
                blocks.push(ResBlockSpec::new(
                    &format!("{prefix}.e{i}.r{r}"),
                    cur,
                    w,
                    emb_dim,
                ));
                cur = w;
            }
            let down = (i + 1 < levels)
                .then(|| ConvSpec::new(format!("{prefix}.e{i}.down"), w, w, 3, 2));
            enc_levels.push((blocks, down));
        }

        let mid = (0..mid_blocks)
            .map(|r| ResBlockSpec::new(&format!("{prefix}.m{r}"), cur, cur, emb_dim))
            .collect();

        let mut dec_levels = Vec::new();
        for i in (0..levels).rev() {
            let w = widths[i];
            let up = (i + 1 < levels)
                .then(|| ConvSpec::new(format!("{prefix}.d{i}.up"), cur, cur, 3, 1));
            let mut blocks = Vec::new();
            for r in 0..=nres {
                let cin = if r == 0 { cur + w } else { w };
                blocks.push(ResBlockSpec::new(
                    &format!("{prefix}.d{i}.r{r}"),
                    cin,
                    w,
                    emb_dim,
                ));
            }
            cur = w;
            dec_levels.push((up, blocks));
        }

        let head_norm = NormSpec {
            name: format!("{prefix}.hn"),
            channels: width,
        };
        let mut head_conv = ConvSpec::new(format!("{prefix}.hc"), width, out_ch, 3, 1);
        head_conv.zero_init = true;

        UNetSpec {
            stem,
            enc_levels,
            mid,
            dec_levels,
            head_norm,
            head_conv,
        }
    }

    fn init(&self, store: &mut ParamStore, rng: &mut Prng) {
        self.stem.init(store, rng);
        for (blocks, down) in &self.enc_levels {
            for b in blocks {
                b.init(store, rng);
            }
            if let Some(d) = down {
                d.init(store, rng);
            }
        }
        for b in &self.mid {
            b.init(store, rng);
        }
        for (up, blocks) in &self.dec_levels {
            if let Some(u) = up {
                u.init(store, rng);
            }
            for b in blocks {
                b.init(store, rng);
            }
        }
        self.head_norm.init(store);
        self.head_conv.init(store, rng);
    }

    fn forward(&self, g: &mut Graph, nodes: &ParamNodes, x: NodeId, emb: Option<NodeId>) -> NodeId {
        let mut h = self.stem.forward(g, nodes, x);
        let mut skips: Vec<NodeId> = Vec::new();
        for (blocks, down) in &self.enc_levels {
            for b in blocks {
                h = b.forward(g, nodes, h, emb);
            }
            skips.push(h);
            if let Some(d) = down {
                h = d.forward(g, nodes, h);
            }
        }
        for b in &self.mid {
            h = b.forward(g, nodes, h, emb);
        }
        for (up, blocks) in &self.dec_levels {
            let skip = skips.pop().expect("one skip per level");
            if let Some(u) = up {
                let target = g.value(skip).shape.clone();
                h = g.upsample_nearest(h, target[1], target[2]);
                h = u.forward(g, nodes, h);
            }
            h = g.concat_ch(h, skip);
            for b in blocks {
                h = b.forward(g, nodes, h, emb);
            }
        }
        h = self.head_norm.forward(g, nodes, h);
        h = g.silu(h);
        self.head_conv.forward(g, nodes, h)
    }
}

/// Sinusoidal features for the normalized step position `t / t_max`,
/// with `dim / 2` log-spaced frequencies between 1 and 1000.
pub fn timestep_features(t: usize, t_max: usize, dim: usize) -> Vec<f64> {
    assert!(dim >= 4 && dim % 2 == 0, "embedding dim must be even, >= 4");
    let half = dim / 2;
    let x = t as f64 / t_max as f64;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = 1000f64.powf(i as f64 / (half - 1) as f64);
        out.push((x * freq).sin());
        out.push((x * freq).cos());
    }
    out
}

/// Stacks denoiser conditioning into `[5, K, F]` planes.
pub fn denoiser_input_planes(
    x_t: &ComplexSpectrogram,
    y: &ComplexSpectrogram,
    g: &GuidanceField,
) -> Tensor {
    let (k, f) = x_t.values.dim();
    let mut data = Vec::with_capacity(5 * k * f);
    data.extend(x_t.values.iter().map(|v| v.re));
    data.extend(x_t.values.iter().map(|v| v.im));
    data.extend(y.values.iter().map(|v| v.re));
    data.extend(y.values.iter().map(|v| v.im));
    data.extend(g.values().iter().copied());
    Tensor::from_vec(&[5, k, f], data)
}

/// Stacks a complex spectrogram into `[2, K, F]` real planes.
pub fn complex_planes(s: &ComplexSpectrogram) -> Tensor {
    let (k, f) = s.values.dim();
    let mut data = Vec::with_capacity(2 * k * f);
    data.extend(s.values.iter().map(|v| v.re));
    data.extend(s.values.iter().map(|v| v.im));
    Tensor::from_vec(&[2, k, f], data)
}

/// Stacks the mixture into `[2, K, F]` planes for the mask estimator.
pub fn cmen_input_planes(y: &ComplexSpectrogram) -> Tensor {
    complex_planes(y)
}

/// Reassembles two output planes into a complex spectrogram shaped like
/// `template` (domain, config and sample rate are copied from it).
pub fn planes_to_complex(t: &Tensor, template: &ComplexSpectrogram) -> ComplexSpectrogram {
    let (k, f) = template.values.dim();
    assert_eq!(t.shape, vec![2, k, f]);
    let mut out = template.clone();
    let hw = k * f;
    for (i, v) in out.values.iter_mut().enumerate() {
        *v = Complex64::new(t.data[i], t.data[hw + i]);
    }
    out
}

/// Diffusion denoiser with step conditioning.
pub struct DenoiserNet {
    spec: UNetSpec,
    emb_in: LinearSpec,
    emb_out: LinearSpec,
    pub params: ParamStore,
    pub config: NetConfig,
    pub t_max: usize,
    emb_feature_dim: usize,
}

impl DenoiserNet {
    fn build_spec(config: &NetConfig) -> (UNetSpec, LinearSpec, LinearSpec, usize) {
        let w = config.den_width;
        let feature_dim = 2 * w;
        let emb_dim = 4 * w;
        let spec = UNetSpec::new(
            "den",
            5,
            2,
            w,
            &config.den_mults,
            config.den_res_blocks,
            Some(emb_dim),
            3,
        );
        let emb_in = LinearSpec {
            name: "den.ti".into(),
            din: feature_dim,
            dout: emb_dim,
        };
        let emb_out = LinearSpec {
            name: "den.to".into(),
            din: emb_dim,
            dout: emb_dim,
        };
        (spec, emb_in, emb_out, feature_dim)
    }

    pub fn new(config: &NetConfig, t_max: usize, rng: &mut Prng) -> Result<Self> {
        config.validate()?;
        if t_max < 1 {
            return Err(Error::Config {
                field: "steps".into(),
                message: "denoiser needs at least one step".into(),
            });
        }
        let (spec, emb_in, emb_out, emb_feature_dim) = Self::build_spec(config);
        let mut params = ParamStore::new();
        emb_in.init(&mut params, rng);
        emb_out.init(&mut params, rng);
        spec.init(&mut params, rng);
        Ok(DenoiserNet {
            spec,
            emb_in,
            emb_out,
            params,
            config: config.clone(),
            t_max,
            emb_feature_dim,
        })
    }

    /// Rebuilds a net around loaded parameters, verifying they have
    /// exactly the layout this config produces.
    pub fn from_params(config: &NetConfig, t_max: usize, params: ParamStore) -> Result<Self> {
        let mut rng = Prng::seed_from(0);
        let mut net = Self::new(config, t_max, &mut rng)?;
        if !net.params.layout_matches(&params) {
            return Err(Error::ConfigMismatch(
                "denoiser parameters do not match the network layout for this config".into(),
            ));
        }
        net.params = params;
        Ok(net)
    }

    /// Builds the forward computation on an existing graph. `planes`
    /// must be a `[5, K, F]` node; returns a `[2, K, F]` node.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        nodes: &ParamNodes,
        planes: NodeId,
        t: usize,
    ) -> Result<NodeId> {
        if t == 0 || t > self.t_max {
            return Err(Error::StepOutOfRange {
                value: t,
                max: self.t_max,
            });
        }
        let feats = timestep_features(t, self.t_max, self.emb_feature_dim);
        let f = g.input(Tensor::from_vec(&[self.emb_feature_dim], feats));
        let mut emb = self.emb_in.forward(g, nodes, f);
        emb = g.silu(emb);
        emb = self.emb_out.forward(g, nodes, emb);
        emb = g.silu(emb);
        Ok(self.spec.forward(g, nodes, planes, Some(emb)))
    }
}

impl Denoiser for DenoiserNet {
    fn estimate_x0(
        &self,
        x_t: &ComplexSpectrogram,
        y: &ComplexSpectrogram,
        g: &GuidanceField,
        t: usize,
    ) -> Result<ComplexSpectrogram> {
        x_t.check_compatible(y)?;
        g.check_shape(x_t.frames(), x_t.bins())?;
        let mut graph = Graph::new();
        let nodes = register_params(&mut graph, &self.params, false);
        let planes = graph.input(denoiser_input_planes(x_t, y, g));
        let out = self.forward_graph(&mut graph, &nodes, planes, t)?;
        let out_t = graph.value(out);
        if !out_t.all_finite() {
            return Err(Error::Contract(format!(
                "denoiser produced non-finite values at t = {t}"
            )));
        }
        Ok(planes_to_complex(out_t, y))
    }
}

/// Mask estimator over the noisy mixture.
pub struct CmenNet {
    spec: UNetSpec,
    pub params: ParamStore,
    pub config: NetConfig,
}

impl CmenNet {
    pub fn new(config: &NetConfig, rng: &mut Prng) -> Result<Self> {
        config.validate()?;
        let spec = UNetSpec::new(
            "cmen",
            2,
            1,
            config.cmen_width,
            &config.cmen_mults,
            config.cmen_res_blocks,
            None,
            2,
        );
        let mut params = ParamStore::new();
        spec.init(&mut params, rng);
        Ok(CmenNet {
            spec,
            params,
            config: config.clone(),
        })
    }

    pub fn from_params(config: &NetConfig, params: ParamStore) -> Result<Self> {
        let mut rng = Prng::seed_from(0);
        let mut net = Self::new(config, &mut rng)?;
        if !net.params.layout_matches(&params) {
            return Err(Error::ConfigMismatch(
                "mask-estimator parameters do not match the network layout for this config".into(),
            ));
        }
        net.params = params;
        Ok(net)
    }

    /// Forward pass on an existing graph: `[2, K, F]` in, `[1, K, F]`
    /// of strictly-(0,1) mask values out.
    pub fn forward_graph(&self, g: &mut Graph, nodes: &ParamNodes, planes: NodeId) -> NodeId {
        let logits = self.spec.forward(g, nodes, planes, None);
        g.sigmoid_clamped(logits, MASK_LOGIT_CLAMP)
    }

    pub fn estimate_mask(&self, y: &ComplexSpectrogram) -> Result<Mask> {
        let mut graph = Graph::new();
        let nodes = register_params(&mut graph, &self.params, false);
        let planes = graph.input(cmen_input_planes(y));
        let out = self.forward_graph(&mut graph, &nodes, planes);
        let out_t = graph.value(out);
        if !out_t.all_finite() {
            return Err(Error::Contract(
                "mask estimator produced non-finite values".into(),
            ));
        }
        let (k, f) = y.values.dim();
        let values = Array2::from_shape_vec((k, f), out_t.data.clone())
            .expect("shape checked by construction");
        Mask::new(values)
    }
}
