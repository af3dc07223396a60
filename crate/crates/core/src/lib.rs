//! Multi-user MISO downlink beamforming.
//!
//! Channel simulation over tapped-delay-line profiles, exact SINR and sum-rate
//! metrics, classical precoders (zero-forcing, MMSE, the uplink-downlink duality
//! structure), and an unsupervised neural design that outputs unit-norm
//! beamformers together with a softmax power allocation. The neural path runs
//! on a small reverse-mode autodiff engine in [`nn`].

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod baselines;
pub mod channel;
pub mod eval;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod trainer;

pub use baselines::{BaselineError, BeamformerSlice, FixedPointOptions, VirtualUplinkPowers};
pub use channel::{ChannelDataset, ChannelError, ChannelMatrix, ChannelParams, ProfileKind};
pub use eval::{evaluate, EvalError, Method, NeuralModel, SeStats};
pub use harness::{ExperimentConfig, ResultRow};
pub use linalg::{CMatrix, CVector, LinalgError, C64};
pub use metrics::{BeamformerSet, MetricsError, RateWeights, SinrGrid};
pub use models::{ModelConfig, ModelError, ModelParams};
pub use nn::{Checkpoint, NnError, Tape, Tensor, Var};
pub use trainer::{SnrSampling, TrainConfig, TrainError, TrainReport};
