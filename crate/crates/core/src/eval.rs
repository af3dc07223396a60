//! Paired SNR-sweep evaluation of classical and neural beamformers.
//!
//! Every method sees the same channel samples and, at each nominal SNR, the
//! same per-UE noise variances (from the offsets stored with each sample).

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{mmse_precoder, zf_precoder_or_regularized, BaselineError};
use crate::channel::ChannelMatrix;
use crate::metrics::{sum_rate, BeamformerSet, MetricsError};
use crate::models::{predict, Batch, ModelConfig, ModelError, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ZF")]
    Zf,
    #[serde(rename = "MMSE")]
    Mmse,
    #[serde(rename = "NNBF")]
    Nnbf,
    #[serde(rename = "NNBF-P")]
    NnbfP,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Zf, Method::Mmse, Method::Nnbf, Method::NnbfP];

    pub fn name(self) -> &'static str {
        match self {
            Method::Zf => "ZF",
            Method::Mmse => "MMSE",
            Method::Nnbf => "NNBF",
            Method::NnbfP => "NNBF-P",
        }
    }

    pub fn is_neural(self) -> bool {
        matches!(self, Method::Nnbf | Method::NnbfP)
    }

    /// Whether a model of this method has the power head.
    pub fn joint_power(self) -> bool {
        self == Method::NnbfP
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown method {s:?} (expected ZF, MMSE, NNBF or NNBF-P)"))
    }
}

/// A trained network ready for inference.
#[derive(Debug, Clone, Copy)]
pub struct NeuralModel<'a> {
    pub method: Method,
    pub config: &'a ModelConfig,
    pub params: &'a ModelParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeStats {
    pub method: Method,
    pub snr_db: f64,
    pub se_mean: f64,
    pub se_std: f64,
    pub n: usize,
    /// Per-sample spectral efficiencies, in dataset order.
    pub per_sample: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no samples to evaluate")]
    EmptyDataset,
    #[error("{method} needs a trained model")]
    MissingModel { method: Method },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

const INFERENCE_BATCH: usize = 64;

fn beamformers(
    method: Method,
    data: &[ChannelMatrix],
    sigma2: &[Vec<f64>],
    p_max: f64,
    models: &[NeuralModel],
) -> Result<Vec<BeamformerSet>, EvalError> {
    match method {
        Method::Zf => Ok(data.iter().map(|h| zf_precoder_or_regularized(h, p_max)).collect()),
        Method::Mmse => data
            .iter()
            .zip(sigma2)
            .map(|(h, s)| mmse_precoder(h, s, p_max).map_err(EvalError::from))
            .collect(),
        Method::Nnbf | Method::NnbfP => {
            let m = models
                .iter()
                .find(|m| m.method == method)
                .ok_or(EvalError::MissingModel { method })?;
            let refs: Vec<&ChannelMatrix> = data.iter().collect();
            let mut out = Vec::with_capacity(data.len());
            for (ch, s2) in refs.chunks(INFERENCE_BATCH).zip(sigma2.chunks(INFERENCE_BATCH)) {
                out.extend(predict(m.config, m.params, &Batch { channels: ch, sigma2: s2 })?);
            }
            Ok(out)
        }
    }
}

/// Spectral efficiency of each method at each nominal SNR, in `(snr, method)` order.
pub fn evaluate(
    data: &[ChannelMatrix],
    snr_grid_db: &[f64],
    methods: &[Method],
    p_max: f64,
    models: &[NeuralModel],
) -> Result<Vec<SeStats>, EvalError> {
    if data.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let per_snr: Vec<Result<Vec<SeStats>, EvalError>> = snr_grid_db
        .par_iter()
        .map(|&snr| {
            let sigma2: Vec<Vec<f64>> = data.iter().map(|h| h.noise_variances(snr)).collect();
            methods
                .iter()
                .map(|&method| {
                    let bfs = beamformers(method, data, &sigma2, p_max, models)?;
                    let per_sample = data
                        .iter()
                        .zip(&bfs)
                        .zip(&sigma2)
                        .map(|((h, bf), s)| sum_rate(h, bf, s))
                        .collect::<Result<Vec<f64>, _>>()?;
                    let (se_mean, se_std) = mean_std(&per_sample);
                    Ok(SeStats {
                        method,
                        snr_db: snr,
                        se_mean,
                        se_std,
                        n: per_sample.len(),
                        per_sample,
                    })
                })
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for r in per_snr {
        out.extend(r?);
    }
    Ok(out)
}
