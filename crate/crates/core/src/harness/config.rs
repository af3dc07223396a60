//! Experiment configuration files (TOML).
//!
//! ```toml
//! schema_version = 1
//! id = "exp01"
//! methods = ["ZF", "MMSE", "NNBF", "NNBF-P"]
//! snr_grid_db = [-15.0, -2.5, 5.0, 50.0]
//!
//! [channel]
//! profile = "TDL-A"
//! delay_spread_ns = 30.0
//! modulation = "QPSK"
//! m_tx = 4
//! n_ue = 4
//! resource_blocks = 4
//!
//! [dataset]
//! train_samples = 4096
//! test_samples = 1024
//! seed = 1
//!
//! [train]
//! epochs = 200
//!
//! [desk_scale]
//! subcarriers = 8
//! train_samples = 512
//! ```
//!
//! Omitted keys take their defaults. `[desk_scale]` holds overrides applied
//! by [`ExperimentConfig::desk_scaled`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{sample_seed, ChannelParams, JitterDist, ProfileKind, SUBCARRIERS_PER_RB};
use crate::eval::Method;
use crate::models::ModelConfig;
use crate::trainer::{TrainConfig, SNR_RANGE_DB};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config error in `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modulation {
    #[serde(rename = "QPSK")]
    Qpsk,
    #[serde(rename = "16QAM")]
    Qam16,
}

impl Modulation {
    pub fn name(self) -> &'static str {
        match self {
            Modulation::Qpsk => "QPSK",
            Modulation::Qam16 => "16QAM",
        }
    }
}

fn default_rbs() -> usize {
    4
}
fn default_scs() -> f64 {
    30.0
}
fn default_jitter() -> f64 {
    20.0
}
fn default_doppler() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub profile: ProfileKind,
    pub delay_spread_ns: f64,
    /// Carried into results only; no computation depends on it.
    pub modulation: Modulation,
    pub m_tx: usize,
    pub n_ue: usize,
    #[serde(default = "default_rbs")]
    pub resource_blocks: usize,
    /// Overrides `12 × resource_blocks`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subcarriers: Option<usize>,
    #[serde(default = "default_scs")]
    pub scs_khz: f64,
    #[serde(default = "default_jitter")]
    pub jitter_db: f64,
    #[serde(default = "default_doppler")]
    pub doppler_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub train_samples: usize,
    pub test_samples: usize,
    pub seed: u64,
}

fn default_widths() -> Vec<usize> {
    vec![1024]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_widths")]
    pub fc_widths_bf: Vec<usize>,
    #[serde(default = "default_widths")]
    pub fc_widths_pw: Vec<usize>,
    #[serde(default)]
    pub wideband: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            fc_widths_bf: default_widths(),
            fc_widths_pw: default_widths(),
            wideband: false,
        }
    }
}

/// Reduced sizes for runs on a single workstation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeskScale {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subcarriers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fc_width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_grid_db: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub id: String,
    pub methods: Vec<Method>,
    pub snr_grid_db: Vec<f64>,
    /// Permit nominal SNRs outside [-15, 50] dB.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub allow_any_snr: bool,
    pub channel: ChannelSection,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub desk_scale: Option<DeskScale>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(s).map_err(|e| {
            let field = e
                .message()
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "<file>".into());
            ConfigError::new(&field, e.to_string().trim_end())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("<file>", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::new(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        if self.id.trim().is_empty() || self.id.contains([',', '"', '\n', '/', '\\']) {
            return Err(ConfigError::new("id", "must be non-empty without commas, quotes, slashes or newlines"));
        }
        if self.methods.is_empty() {
            return Err(ConfigError::new("methods", "at least one method is required"));
        }
        if self.snr_grid_db.is_empty() {
            return Err(ConfigError::new("snr_grid_db", "empty SNR grid"));
        }
        for &s in &self.snr_grid_db {
            if !s.is_finite() {
                return Err(ConfigError::new("snr_grid_db", "non-finite SNR"));
            }
            if !self.allow_any_snr && !(SNR_RANGE_DB.0..=SNR_RANGE_DB.1).contains(&s) {
                return Err(ConfigError::new(
                    "snr_grid_db",
                    format!("{s} dB outside [{}, {}] (set allow_any_snr = true to permit)", SNR_RANGE_DB.0, SNR_RANGE_DB.1),
                ));
            }
        }
        let ch = &self.channel;
        if ch.n_ue == 0 {
            return Err(ConfigError::new("channel.n_ue", "must be positive"));
        }
        if ch.m_tx < ch.n_ue {
            return Err(ConfigError::new(
                "channel.m_tx",
                format!("need at least as many antennas as UEs, got M={} N={}", ch.m_tx, ch.n_ue),
            ));
        }
        if self.k_sc() == 0 {
            return Err(ConfigError::new("channel.resource_blocks", "no subcarriers"));
        }
        self.channel_params()
            .validate()
            .map_err(|e| ConfigError::new("channel", e.to_string()))?;
        self.train.validate().map_err(|e| ConfigError::new("train", e.to_string()))?;
        if self.methods.iter().any(|m| m.is_neural()) {
            for m in self.methods.iter().filter(|m| m.is_neural()) {
                self.model_config(*m)
                    .validate()
                    .map_err(|e| ConfigError::new("model", e.to_string()))?;
            }
        }
        Ok(())
    }

    pub fn k_sc(&self) -> usize {
        self.channel
            .subcarriers
            .unwrap_or(SUBCARRIERS_PER_RB * self.channel.resource_blocks)
    }

    /// Total transmit power; each UE's reference power `P_max/N` is 1.
    pub fn p_max(&self) -> f64 {
        self.channel.n_ue as f64
    }

    pub fn channel_params(&self) -> ChannelParams {
        let ch = &self.channel;
        ChannelParams {
            profile: ch.profile,
            delay_spread_ns: ch.delay_spread_ns,
            m_tx: ch.m_tx,
            n_ue: ch.n_ue,
            k_sc: self.k_sc(),
            scs_hz: ch.scs_khz * 1e3,
            jitter_db: ch.jitter_db,
            jitter_dist: JitterDist::Gaussian,
            doppler_hz: ch.doppler_hz,
        }
    }

    pub fn model_config(&self, method: Method) -> ModelConfig {
        ModelConfig {
            fc_widths_bf: self.model.fc_widths_bf.clone(),
            fc_widths_pw: self.model.fc_widths_pw.clone(),
            wideband: self.model.wideband,
            p_max: self.p_max(),
            ..ModelConfig::new(self.channel.m_tx, self.channel.n_ue, self.k_sc(), method.joint_power())
        }
    }

    pub fn split_size(&self, split: Split) -> usize {
        match split {
            Split::Train => self.dataset.train_samples,
            Split::Test => self.dataset.test_samples,
        }
    }

    /// Seed of a dataset split; the two splits never share channel draws.
    pub fn split_seed(&self, split: Split) -> u64 {
        match split {
            Split::Train => self.dataset.seed,
            Split::Test => sample_seed(self.dataset.seed, 0x7e57),
        }
    }

    /// The same experiment with the `[desk_scale]` overrides applied.
    pub fn desk_scaled(&self) -> Result<Self, ConfigError> {
        let mut c = self.clone();
        if let Some(d) = self.desk_scale.clone() {
            if let Some(k) = d.subcarriers {
                c.channel.subcarriers = Some(k);
            }
            if let Some(n) = d.train_samples {
                c.dataset.train_samples = n;
            }
            if let Some(n) = d.test_samples {
                c.dataset.test_samples = n;
            }
            if let Some(e) = d.epochs {
                c.train.epochs = e;
            }
            if let Some(w) = d.fc_width {
                c.model.fc_widths_bf = vec![w];
                c.model.fc_widths_pw = vec![w];
            }
            if let Some(g) = d.snr_grid_db {
                c.snr_grid_db = g;
            }
        }
        c.desk_scale = None;
        c.validate()?;
        Ok(c)
    }
}
