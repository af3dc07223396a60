//! Neural beamforming networks.
//!
//! A convolutional backbone of basic blocks (conv1d → batch norm → GELU) runs
//! along the subcarrier axis of every (UE, antenna) pair. Its features are
//! flattened per sample and fed to two fully connected heads: one emits the
//! beamforming directions, normalized to unit norm per (subcarrier, UE); the
//! other (joint power mode only) emits per-UE logits that a softmax turns into
//! powers summing to `P_max`. Without the power head every UE gets `P_max/N`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelMatrix;
use crate::linalg::C64;
use crate::metrics::{BeamformerSet, RateWeights};
use crate::nn::{BatchStats, Checkpoint, NamedTensor, NnError, Tape, Tensor, Var};

pub const BN_EPS: f64 = 1e-7;
pub const BN_MOMENTUM: f64 = 0.1;
pub const KERNEL_SIZE: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("input shape mismatch: {0}")]
    Shape(String),
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub downsample: bool,
}

impl BlockSpec {
    pub const fn new(c_in: usize, c_out: usize, downsample: bool) -> Self {
        Self {
            c_in,
            c_out,
            downsample,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub m_tx: usize,
    pub n_ue: usize,
    pub k_sc: usize,
    pub p_max: f64,
    pub bb_spec: Vec<BlockSpec>,
    /// Hidden widths of the beamforming head.
    pub fc_widths_bf: Vec<usize>,
    /// Hidden widths of the power head.
    pub fc_widths_pw: Vec<usize>,
    pub joint_power: bool,
    /// One beamformer shared by all subcarriers instead of one per subcarrier.
    #[serde(default)]
    pub wideband: bool,
}

pub fn default_backbone() -> Vec<BlockSpec> {
    vec![
        BlockSpec::new(2, 16, false),
        BlockSpec::new(16, 32, true),
        BlockSpec::new(32, 32, true),
    ]
}

impl ModelConfig {
    /// Default architecture with `P_max = N`.
    pub fn new(m_tx: usize, n_ue: usize, k_sc: usize, joint_power: bool) -> Self {
        Self {
            m_tx,
            n_ue,
            k_sc,
            p_max: n_ue as f64,
            bb_spec: default_backbone(),
            fc_widths_bf: vec![1024],
            fc_widths_pw: vec![1024],
            joint_power,
            wideband: false,
        }
    }

    fn downsample_factor(&self) -> usize {
        1 << self.bb_spec.iter().filter(|b| b.downsample).count()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.m_tx == 0 || self.n_ue == 0 || self.k_sc == 0 {
            return bad(format!("zero dimension M={} N={} K={}", self.m_tx, self.n_ue, self.k_sc));
        }
        if !(self.p_max > 0.0 && self.p_max.is_finite()) {
            return bad(format!("p_max must be positive, got {}", self.p_max));
        }
        let Some(first) = self.bb_spec.first() else {
            return bad("backbone has no blocks".into());
        };
        if first.c_in != 2 {
            return bad(format!("first block must take 2 input channels, takes {}", first.c_in));
        }
        for (i, pair) in self.bb_spec.windows(2).enumerate() {
            if pair[0].c_out != pair[1].c_in {
                return bad(format!("block {} outputs {} channels, block {} takes {}", i, pair[0].c_out, i + 1, pair[1].c_in));
            }
        }
        if self.bb_spec.iter().any(|b| b.c_out == 0) {
            return bad("block with zero output channels".into());
        }
        let f = self.downsample_factor();
        if self.k_sc % f != 0 {
            return bad(format!("k_sc = {} not divisible by downsample factor {f}", self.k_sc));
        }
        let per_pair = self.bb_spec.last().unwrap().c_out * self.k_sc / f;
        if per_pair != 8 * self.k_sc {
            return bad(format!("backbone yields {per_pair} features per antenna pair, expected 8·K = {}", 8 * self.k_sc));
        }
        if self.fc_widths_bf.contains(&0) || self.fc_widths_pw.contains(&0) {
            return bad("zero-width FC layer".into());
        }
        Ok(())
    }

    /// Features after flattening: `8·N·M·K`.
    pub fn flatten_width(&self) -> usize {
        8 * self.n_ue * self.m_tx * self.k_sc
    }

    fn bf_out(&self) -> usize {
        let per = 2 * self.m_tx * self.n_ue;
        if self.wideband {
            per
        } else {
            per * self.k_sc
        }
    }
}

/// Named parameters plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    tensors: Vec<NamedTensor>,
}

impl ModelParams {
    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &t.tensor)
    }

    fn index(&self, name: &str) -> usize {
        self.tensors
            .iter()
            .position(|t| t.name == name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    /// Indices of the trainable tensors, in storage order.
    pub fn trainable_indices(&self) -> Vec<usize> {
        (0..self.tensors.len()).filter(|&i| self.tensors[i].trainable).collect()
    }

    pub fn trainable(&self) -> Vec<&Tensor> {
        self.tensors.iter().filter(|t| t.trainable).map(|t| &t.tensor).collect()
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        self.tensors.iter_mut().filter(|t| t.trainable).map(|t| &mut t.tensor).collect()
    }

    pub fn trainable_names(&self) -> Vec<&str> {
        self.tensors.iter().filter(|t| t.trainable).map(|t| t.name.as_str()).collect()
    }

    /// Folds batch statistics from a train-mode forward into the running estimates.
    pub fn update_running_stats(&mut self, stats: &[BatchStats]) {
        for (i, s) in stats.iter().enumerate() {
            for (suffix, batch) in [("running_mean", &s.mean), ("running_var", &s.var)] {
                let idx = self.index(&format!("bb.{i}.bn.{suffix}"));
                for (r, b) in self.tensors[idx].tensor.data_mut().iter_mut().zip(batch) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
                }
            }
        }
    }

    pub fn to_checkpoint(&self, cfg: &ModelConfig) -> Checkpoint {
        Checkpoint {
            meta: serde_json::to_string(cfg).expect("config serializes"),
            tensors: self.tensors.clone(),
        }
    }

    /// Restores parameters, checking them against `expected` when given.
    pub fn from_checkpoint(ck: &Checkpoint, expected: Option<&ModelConfig>) -> Result<(ModelConfig, Self), ModelError> {
        let incompatible = |m: String| ModelError::IncompatibleCheckpoint(m);
        let cfg: ModelConfig =
            serde_json::from_str(&ck.meta).map_err(|e| incompatible(format!("bad model metadata: {e}")))?;
        cfg.validate().map_err(|e| incompatible(e.to_string()))?;
        if let Some(exp) = expected {
            if exp != &cfg {
                return Err(incompatible(format!(
                    "checkpoint is for M={} N={} K={} joint_power={}, expected M={} N={} K={} joint_power={}",
                    cfg.m_tx, cfg.n_ue, cfg.k_sc, cfg.joint_power, exp.m_tx, exp.n_ue, exp.k_sc, exp.joint_power
                )));
            }
        }
        let layout = param_layout(&cfg);
        if layout.len() != ck.tensors.len() {
            return Err(incompatible(format!("{} tensors, expected {}", ck.tensors.len(), layout.len())));
        }
        for (spec, t) in layout.iter().zip(&ck.tensors) {
            if spec.name != t.name || spec.shape != t.tensor.shape() || spec.kind.trainable() != t.trainable {
                return Err(incompatible(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    t.name,
                    t.tensor.shape(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        Ok((cfg, Self { tensors: ck.tensors.clone() }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum InitKind {
    Kaiming { fan_in: usize },
    Zeros,
    Ones,
    RunningMean,
    RunningVar,
}

impl InitKind {
    fn trainable(self) -> bool {
        !matches!(self, InitKind::RunningMean | InitKind::RunningVar)
    }
}

struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    kind: InitKind,
}

fn head_layout(out: &mut Vec<ParamSpec>, prefix: &str, f_in: usize, hidden: &[usize], f_out: usize) {
    let mut prev = f_in;
    for (j, &w) in hidden.iter().chain(std::iter::once(&f_out)).enumerate() {
        out.push(ParamSpec {
            name: format!("{prefix}.fc{j}.w"),
            shape: vec![w, prev],
            kind: InitKind::Kaiming { fan_in: prev },
        });
        out.push(ParamSpec {
            name: format!("{prefix}.fc{j}.b"),
            shape: vec![w],
            kind: InitKind::Zeros,
        });
        prev = w;
    }
}

// Backbone first, then beamforming head, then power head, so that the first
// two groups draw identical values with or without the power head.
fn param_layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut v = Vec::new();
    for (i, b) in cfg.bb_spec.iter().enumerate() {
        v.push(ParamSpec {
            name: format!("bb.{i}.conv.w"),
            shape: vec![b.c_out, b.c_in, KERNEL_SIZE],
            kind: InitKind::Kaiming {
                fan_in: b.c_in * KERNEL_SIZE,
            },
        });
        for (suffix, kind) in [
            ("gamma", InitKind::Ones),
            ("beta", InitKind::Zeros),
            ("running_mean", InitKind::RunningMean),
            ("running_var", InitKind::RunningVar),
        ] {
            v.push(ParamSpec {
                name: format!("bb.{i}.bn.{suffix}"),
                shape: vec![b.c_out],
                kind,
            });
        }
    }
    head_layout(&mut v, "bf", cfg.flatten_width(), &cfg.fc_widths_bf, cfg.bf_out());
    if cfg.joint_power {
        head_layout(&mut v, "pw", cfg.flatten_width(), &cfg.fc_widths_pw, cfg.n_ue);
    }
    v
}

/// Fan-in scaled normal weights, zero biases and shifts, unit scales.
pub fn init_params<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<ModelParams, ModelError> {
    cfg.validate()?;
    let tensors = param_layout(cfg)
        .into_iter()
        .map(|s| {
            let n: usize = s.shape.iter().product();
            let data = match s.kind {
                InitKind::Kaiming { fan_in } => {
                    let std = (2.0 / fan_in as f64).sqrt();
                    (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
                }
                InitKind::Zeros | InitKind::RunningMean => vec![0.0; n],
                InitKind::Ones | InitKind::RunningVar => vec![1.0; n],
            };
            NamedTensor {
                name: s.name,
                trainable: s.kind.trainable(),
                tensor: Tensor::new(s.shape, data).expect("layout shapes are consistent"),
            }
        })
        .collect();
    Ok(ModelParams { tensors })
}

/// Tape handles for the trainable parameters, in storage order.
#[derive(Debug, Clone)]
pub struct ParamVars {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl ParamVars {
    /// Records every trainable tensor on the tape as a gradient-tracking leaf.
    pub fn bind(tape: &mut Tape, params: &ModelParams) -> Self {
        let mut names = Vec::new();
        let mut vars = Vec::new();
        for t in params.tensors.iter().filter(|t| t.trainable) {
            names.push(t.name.clone());
            vars.push(tape.param(&t.tensor));
        }
        Self { names, vars }
    }

    /// Uses existing vars, one per trainable tensor in storage order.
    pub fn from_vars(params: &ModelParams, vars: &[Var]) -> Result<Self, ModelError> {
        let names: Vec<String> = params.trainable_names().into_iter().map(String::from).collect();
        if names.len() != vars.len() {
            return Err(ModelError::Shape(format!("{} vars for {} parameters", vars.len(), names.len())));
        }
        Ok(Self {
            names,
            vars: vars.to_vec(),
        })
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn get(&self, name: &str) -> Var {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("missing parameter var {name}"));
        self.vars[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One batch of channels with their per-UE noise variances.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub channels: &'a [&'a ChannelMatrix],
    pub sigma2: &'a [Vec<f64>],
}

impl Batch<'_> {
    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    fn check(&self, cfg: &ModelConfig) -> Result<(), ModelError> {
        if self.channels.is_empty() {
            return Err(ModelError::Shape("empty batch".into()));
        }
        if self.sigma2.len() != self.channels.len() {
            return Err(ModelError::Shape(format!(
                "{} noise vectors for {} channels",
                self.sigma2.len(),
                self.channels.len()
            )));
        }
        for (i, (h, s)) in self.channels.iter().zip(self.sigma2).enumerate() {
            if (h.k_sc(), h.m_tx(), h.n_ue()) != (cfg.k_sc, cfg.m_tx, cfg.n_ue) {
                return Err(ModelError::Shape(format!(
                    "sample {i} is (K={}, M={}, N={}), model expects (K={}, M={}, N={})",
                    h.k_sc(),
                    h.m_tx(),
                    h.n_ue(),
                    cfg.k_sc,
                    cfg.m_tx,
                    cfg.n_ue
                )));
            }
            if s.len() != cfg.n_ue || s.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(ModelError::Shape(format!("sample {i}: bad noise variances {s:?}")));
            }
        }
        Ok(())
    }
}

/// Network input `(B·N·M, 2, K)`: real and imaginary parts of `h[k, m, n] / σ_n`.
///
/// Scaling by the noise standard deviation lets the network see each UE's
/// operating SNR through the same two input channels.
pub fn build_input(cfg: &ModelConfig, batch: &Batch) -> Result<Tensor, ModelError> {
    batch.check(cfg)?;
    let (m, n, k) = (cfg.m_tx, cfg.n_ue, cfg.k_sc);
    let mut data = vec![0.0; batch.len() * n * m * 2 * k];
    for (b, (h, s2)) in batch.channels.iter().zip(batch.sigma2).enumerate() {
        for u in 0..n {
            let inv = 1.0 / s2[u].sqrt();
            for a in 0..m {
                let row = ((b * n + u) * m + a) * 2 * k;
                for kk in 0..k {
                    let z = h.get(kk, a, u) * inv;
                    data[row + kk] = z.re;
                    data[row + k + kk] = z.im;
                }
            }
        }
    }
    Ok(Tensor::new(vec![batch.len() * n * m, 2, k], data)?)
}

/// Channel entries rearranged to `(B, K, M, N)`, as used by the loss kernels.
pub fn stack_channels(batch: &Batch) -> Vec<C64> {
    batch.channels.iter().flat_map(|h| h.as_slice().iter().copied()).collect()
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Unit-norm directions `(B, K, N, M, 2)`.
    pub w: Var,
    /// Powers `(B, N)`.
    pub p: Var,
    /// Batch statistics per backbone block (train mode only).
    pub bn_stats: Vec<BatchStats>,
}

/// conv1d → batch norm → GELU.
pub fn basic_block(
    tape: &mut Tape,
    x: Var,
    block: usize,
    spec: &BlockSpec,
    vars: &ParamVars,
    params: &ModelParams,
    mode: Mode,
) -> Result<(Var, Option<BatchStats>), ModelError> {
    let w = vars.get(&format!("bb.{block}.conv.w"));
    let gamma = vars.get(&format!("bb.{block}.bn.gamma"));
    let beta = vars.get(&format!("bb.{block}.bn.beta"));
    let stride = if spec.downsample { 2 } else { 1 };
    let y = tape.conv1d(x, w, None, stride, KERNEL_SIZE / 2)?;
    let (y, stats) = match mode {
        Mode::Train => {
            let (y, s) = tape.batchnorm1d_train(y, gamma, beta, BN_EPS)?;
            (y, Some(s))
        }
        Mode::Eval => {
            let rm = params.get(&format!("bb.{block}.bn.running_mean")).expect("layout");
            let rv = params.get(&format!("bb.{block}.bn.running_var")).expect("layout");
            (tape.batchnorm1d_eval(y, gamma, beta, rm.data(), rv.data(), BN_EPS)?, None)
        }
    };
    Ok((tape.gelu(y), stats))
}

fn head(tape: &mut Tape, x: Var, prefix: &str, layers: usize, vars: &ParamVars) -> Result<Var, ModelError> {
    let mut h = x;
    for j in 0..layers {
        let w = vars.get(&format!("{prefix}.fc{j}.w"));
        let b = vars.get(&format!("{prefix}.fc{j}.b"));
        h = tape.linear(h, w, b)?;
        if j + 1 < layers {
            h = tape.gelu(h);
        }
    }
    Ok(h)
}

/// Records the network on `tape` for one input batch `(B·N·M, 2, K)`.
pub fn forward(
    tape: &mut Tape,
    cfg: &ModelConfig,
    params: &ModelParams,
    vars: &ParamVars,
    input: Var,
    mode: Mode,
) -> Result<ForwardOutput, ModelError> {
    let s = tape.shape(input).to_vec();
    let group = cfg.n_ue * cfg.m_tx;
    if s.len() != 3 || s[1] != 2 || s[2] != cfg.k_sc || s[0] == 0 || s[0] % group != 0 {
        return Err(ModelError::Shape(format!(
            "input {s:?}, expected (B·{}, 2, {})",
            group, cfg.k_sc
        )));
    }
    let batch = s[0] / group;
    let mut x = input;
    let mut bn_stats = Vec::new();
    for (i, spec) in cfg.bb_spec.iter().enumerate() {
        let (y, st) = basic_block(tape, x, i, spec, vars, params, mode)?;
        x = y;
        bn_stats.extend(st);
    }
    let feat = tape.flatten(x, group)?;

    let mut raw = head(tape, feat, "bf", cfg.fc_widths_bf.len() + 1, vars)?;
    if cfg.wideband {
        raw = tape.repeat_rows(raw, cfg.k_sc)?;
    }
    let unit = tape.normalize_groups(raw, 2 * cfg.m_tx)?;
    let w = tape.reshape(unit, vec![batch, cfg.k_sc, cfg.n_ue, cfg.m_tx, 2])?;

    let p = if cfg.joint_power {
        let logits = head(tape, feat, "pw", cfg.fc_widths_pw.len() + 1, vars)?;
        let sm = tape.softmax(logits)?;
        tape.scale(sm, cfg.p_max)
    } else {
        tape.constant(vec![batch, cfg.n_ue], vec![cfg.p_max / cfg.n_ue as f64; batch * cfg.n_ue])?
    };
    Ok(ForwardOutput { w, p, bn_stats })
}

/// Negated batch-mean weighted sum-rate for a recorded forward pass.
pub fn loss(
    tape: &mut Tape,
    cfg: &ModelConfig,
    out: &ForwardOutput,
    batch: &Batch,
    alpha: Option<&RateWeights>,
) -> Result<Var, ModelError> {
    batch.check(cfg)?;
    let b = batch.len();
    let h = stack_channels(batch);
    let gains = tape.channel_gains(out.w, &h, b, cfg.k_sc, cfg.m_tx, cfg.n_ue)?;
    let s2: Vec<f64> = batch.sigma2.iter().flatten().copied().collect();
    let gamma = tape.sinr(gains, out.p, &s2)?;
    let mut rates = tape.log2_1p(gamma);
    if let Some(a) = alpha {
        if a.as_slice().len() != cfg.n_ue {
            return Err(ModelError::Shape(format!("{} rate weights for {} UEs", a.as_slice().len(), cfg.n_ue)));
        }
        let wts: Vec<f64> = (0..b * cfg.k_sc).flat_map(|_| a.as_slice().iter().copied()).collect();
        let c = tape.constant(vec![b, cfg.k_sc, cfg.n_ue], wts)?;
        rates = tape.mul(rates, c)?;
    }
    let total = tape.sum(rates);
    Ok(tape.scale(total, -1.0 / (b * cfg.k_sc) as f64))
}

/// Converts a forward pass's outputs into per-sample beamformer sets.
pub fn to_beamformers(tape: &Tape, cfg: &ModelConfig, out: &ForwardOutput) -> Result<Vec<BeamformerSet>, ModelError> {
    let (k_sc, m, n) = (cfg.k_sc, cfg.m_tx, cfg.n_ue);
    let w = tape.value(out.w);
    let p = tape.value(out.p);
    let batch = p.len() / n;
    (0..batch)
        .map(|b| {
            let mut wt = vec![C64::new(0.0, 0.0); k_sc * m * n];
            for k in 0..k_sc {
                for u in 0..n {
                    for a in 0..m {
                        let i = ((((b * k_sc + k) * n + u) * m) + a) * 2;
                        wt[(k * m + a) * n + u] = C64::new(w[i], w[i + 1]);
                    }
                }
            }
            BeamformerSet::new(k_sc, m, n, wt, p[b * n..(b + 1) * n].to_vec())
                .map_err(|e| ModelError::Shape(format!("network output rejected: {e}")))
        })
        .collect()
}

/// Eval-mode inference.
pub fn predict(cfg: &ModelConfig, params: &ModelParams, batch: &Batch) -> Result<Vec<BeamformerSet>, ModelError> {
    let input = build_input(cfg, batch)?;
    let mut tape = Tape::new();
    let vars = ParamVars::bind(&mut tape, params);
    let x = tape.leaf(&input);
    let out = forward(&mut tape, cfg, params, &vars, x, Mode::Eval)?;
    to_beamformers(&tape, cfg, &out)
}
