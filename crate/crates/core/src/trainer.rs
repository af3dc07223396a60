//! Unsupervised training: minimize the negated sum-rate of the network's own
//! outputs. No reference beamformers are used anywhere on this path.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_seed, ChannelMatrix};
use crate::models::{self, Batch, ModelConfig, ModelError, ModelParams, Mode, ParamVars};
use crate::nn::{AdamConfig, AdamState, Tape};

/// Lowest and highest nominal SNR used for training, in dB.
pub const SNR_RANGE_DB: (f64, f64) = (-15.0, 50.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SnrSampling {
    Fixed { snr_db: f64 },
    Uniform { lo_db: f64, hi_db: f64 },
}

impl Default for SnrSampling {
    fn default() -> Self {
        SnrSampling::Uniform {
            lo_db: SNR_RANGE_DB.0,
            hi_db: SNR_RANGE_DB.1,
        }
    }
}

impl SnrSampling {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            SnrSampling::Fixed { snr_db } => snr_db,
            SnrSampling::Uniform { lo_db, hi_db } => {
                if hi_db > lo_db {
                    rng.random_range(lo_db..=hi_db)
                } else {
                    lo_db
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplicative learning-rate factor applied after every epoch.
    pub lr_decay: f64,
    pub seed: u64,
    pub val_fraction: f64,
    pub early_stop_patience: usize,
    pub snr_sampling: SnrSampling,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            lr: AdamConfig::default().lr,
            lr_decay: 1.0,
            seed: 0,
            val_fraction: 0.1,
            early_stop_patience: 20,
            snr_sampling: SnrSampling::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction must be in (0, 1), got {}", self.val_fraction));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be non-negative, got {}", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return bad(format!("lr_decay must be positive, got {}", self.lr_decay));
        }
        match self.snr_sampling {
            SnrSampling::Fixed { snr_db } if !snr_db.is_finite() => bad("fixed SNR must be finite".into()),
            SnrSampling::Uniform { lo_db, hi_db } if !(lo_db.is_finite() && hi_db.is_finite() && lo_db <= hi_db) => {
                bad(format!("bad SNR range [{lo_db}, {hi_db}]"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    /// Train-mode loss over the training split before any update.
    pub initial_train_loss: f64,
    pub wall_time_s: f64,
}

impl TrainReport {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }

    /// `epoch,train_loss,val_loss` rows.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        for e in &self.epochs {
            wr.serialize(e)?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch} (sample {sample})")]
    NonFiniteLoss { epoch: usize, batch: usize, sample: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

struct Split {
    train: Vec<usize>,
    val: Vec<usize>,
}

fn split(n: usize, frac: f64, rng: &mut ChaCha8Rng) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_val = if n < 2 { 0 } else { ((frac * n as f64).round() as usize).clamp(1, n - 1) };
    let val = idx[..n_val].to_vec();
    Split {
        train: idx[n_val..].to_vec(),
        val,
    }
}

struct BatchOutcome {
    loss: f64,
    grads: Option<Vec<Vec<f64>>>,
    stats: Vec<crate::nn::BatchStats>,
    bad_sample: Option<usize>,
}

fn run_batch(
    cfg: &ModelConfig,
    params: &ModelParams,
    channels: &[&ChannelMatrix],
    sigma2: &[Vec<f64>],
    mode: Mode,
    want_grads: bool,
) -> Result<BatchOutcome, TrainError> {
    let batch = Batch { channels, sigma2 };
    let input = models::build_input(cfg, &batch)?;
    let mut tape = Tape::new();
    let vars = ParamVars::bind(&mut tape, params);
    let x = tape.leaf(&input);
    let out = models::forward(&mut tape, cfg, params, &vars, x, mode)?;
    let l = models::loss(&mut tape, cfg, &out, &batch, None)?;
    let loss = tape.value(l)[0];
    if !loss.is_finite() {
        let (w, p) = (tape.value(out.w), tape.value(out.p));
        let per_w = w.len() / channels.len();
        let per_p = p.len() / channels.len();
        let bad = (0..channels.len())
            .find(|&b| {
                w[b * per_w..(b + 1) * per_w].iter().chain(&p[b * per_p..(b + 1) * per_p]).any(|v| !v.is_finite())
            })
            .unwrap_or(0);
        return Ok(BatchOutcome {
            loss,
            grads: None,
            stats: Vec::new(),
            bad_sample: Some(bad),
        });
    }
    let grads = if want_grads {
        let g = tape.backward(l).map_err(ModelError::from)?;
        let trainable = params.trainable();
        Some(
            vars.vars()
                .iter()
                .zip(&trainable)
                .map(|(v, t)| g.get_or_zeros(*v, t.numel()))
                .collect(),
        )
    } else {
        None
    };
    Ok(BatchOutcome {
        loss,
        grads,
        stats: out.bn_stats,
        bad_sample: None,
    })
}

fn mean_loss(
    cfg: &ModelConfig,
    params: &ModelParams,
    data: &[ChannelMatrix],
    idx: &[usize],
    sigma2: &[Vec<f64>],
    batch_size: usize,
    mode: Mode,
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for chunk in idx.chunks(batch_size) {
        let ch: Vec<&ChannelMatrix> = chunk.iter().map(|&i| &data[i]).collect();
        let s2: Vec<Vec<f64>> = chunk.iter().map(|&i| sigma2[i].clone()).collect();
        total += run_batch(cfg, params, &ch, &s2, mode, false)?.loss * chunk.len() as f64;
    }
    Ok(total / idx.len() as f64)
}

/// Trains `params` on `data` and returns the parameters of the best
/// validation epoch.
pub fn train(
    cfg: &ModelConfig,
    mut params: ModelParams,
    data: &[ChannelMatrix],
    tc: &TrainConfig,
) -> Result<(ModelParams, TrainReport), TrainError> {
    let start = Instant::now();
    tc.validate()?;
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(tc.seed, u64::MAX));
    let sp = split(data.len(), tc.val_fraction, &mut rng);
    // validation noise is drawn once so the validation loss is comparable across epochs
    let val_sigma: Vec<Vec<f64>> = data
        .iter()
        .map(|h| h.noise_variances(tc.snr_sampling.draw(&mut rng)))
        .collect();
    let val_idx = if sp.val.is_empty() { sp.train.clone() } else { sp.val.clone() };

    let epoch_rng = |epoch: usize| ChaCha8Rng::seed_from_u64(sample_seed(tc.seed, epoch as u64));
    let batch_sigma = |rng: &mut ChaCha8Rng, chunk: &[usize]| -> Vec<Vec<f64>> {
        let snr = tc.snr_sampling.draw(rng);
        chunk.iter().map(|&i| data[i].noise_variances(snr)).collect()
    };

    let initial_train_loss = {
        let mut r = epoch_rng(0);
        let mut order = sp.train.clone();
        order.shuffle(&mut r);
        let mut total = 0.0;
        for chunk in order.chunks(tc.batch_size) {
            let s2 = batch_sigma(&mut r, chunk);
            let ch: Vec<&ChannelMatrix> = chunk.iter().map(|&i| &data[i]).collect();
            total += run_batch(cfg, &params, &ch, &s2, Mode::Train, false)?.loss * chunk.len() as f64;
        }
        total / sp.train.len() as f64
    };

    let mut adam = AdamState::new(
        AdamConfig {
            lr: tc.lr,
            ..AdamConfig::default()
        },
        &params.trainable(),
    );
    let mut records = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    for epoch in 0..tc.epochs {
        adam.config.lr = tc.lr * tc.lr_decay.powi(epoch as i32);
        let mut r = epoch_rng(epoch);
        let mut order = sp.train.clone();
        order.shuffle(&mut r);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(tc.batch_size).enumerate() {
            let s2 = batch_sigma(&mut r, chunk);
            let ch: Vec<&ChannelMatrix> = chunk.iter().map(|&i| &data[i]).collect();
            let out = run_batch(cfg, &params, &ch, &s2, Mode::Train, true)?;
            if let Some(b) = out.bad_sample {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    sample: chunk[b],
                });
            }
            let grads = out.grads.expect("requested");
            let grefs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            adam.step(&mut params.trainable_mut(), &grefs).map_err(ModelError::from)?;
            params.update_running_stats(&out.stats);
            total += out.loss * chunk.len() as f64;
        }
        let train_loss = total / sp.train.len() as f64;
        let val_loss = mean_loss(cfg, &params, data, &val_idx, &val_sigma, tc.batch_size, Mode::Eval)?;
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        let improved = best.as_ref().map_or(true, |(b, _, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, epoch, params.clone()));
        } else if epoch - best.as_ref().map_or(0, |b| b.1) >= tc.early_stop_patience {
            break;
        }
    }
    let (best_epoch, best_params) = match best {
        Some((_, e, p)) => (e, p),
        None => (0, params),
    };
    Ok((
        best_params,
        TrainReport {
            epochs: records,
            best_epoch,
            initial_train_loss,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_dataset, ChannelParams, ProfileKind};
    use crate::models::init_params;

    fn setup(count: usize) -> (ModelConfig, ModelParams, Vec<ChannelMatrix>) {
        let cfg = ModelConfig {
            fc_widths_bf: vec![32],
            fc_widths_pw: vec![16],
            ..ModelConfig::new(2, 2, 4, true)
        };
        let params = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let p = ChannelParams::new(ProfileKind::TdlA, 30.0, 2, 2, 4);
        (cfg, params, generate_dataset(&p, count, 3).unwrap().samples)
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (cfg, params, data) = setup(2);
        let tc = TrainConfig {
            epochs: 1,
            lr: 0.0,
            ..TrainConfig::default()
        };
        let (out, rep) = train(&cfg, params.clone(), &data, &tc).unwrap();
        assert_eq!(rep.epochs.len(), 1);
        assert_eq!(out.trainable(), params.trainable());
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let (cfg, params, data) = setup(12);
        let tc = TrainConfig {
            epochs: 3,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let (a, ra) = train(&cfg, params.clone(), &data, &tc).unwrap();
        let (b, rb) = train(&cfg, params, &data, &tc).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.epochs, rb.epochs);
    }

    #[test]
    fn best_epoch_has_minimum_validation_loss() {
        let (cfg, params, data) = setup(16);
        let tc = TrainConfig {
            epochs: 6,
            batch_size: 5,
            lr: 5e-3,
            ..TrainConfig::default()
        };
        let (_, rep) = train(&cfg, params, &data, &tc).unwrap();
        let min = rep.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(rep.epochs[rep.best_epoch].val_loss, min);
        assert!(rep.epochs.len() <= 6);
    }

    #[test]
    fn early_stopping_respects_patience() {
        let (cfg, params, data) = setup(8);
        let tc = TrainConfig {
            epochs: 50,
            lr: 0.0,
            early_stop_patience: 2,
            ..TrainConfig::default()
        };
        let (_, rep) = train(&cfg, params, &data, &tc).unwrap();
        // with lr 0 the validation loss can only move through running statistics,
        // so training must stop well before the epoch budget
        assert!(rep.epochs.len() < 50);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (cfg, params, data) = setup(2);
        assert!(matches!(
            train(&cfg, params.clone(), &[], &TrainConfig::default()),
            Err(TrainError::EmptyDataset)
        ));
        let tc = TrainConfig {
            val_fraction: 1.0,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&cfg, params.clone(), &data, &tc), Err(TrainError::InvalidConfig(_))));
        let wrong = ModelConfig::new(4, 2, 4, true);
        let wp = init_params(&wrong, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(train(&wrong, wp, &data, &TrainConfig { epochs: 1, ..TrainConfig::default() }).is_err());
    }

    #[test]
    fn report_csv_has_header_and_rows() {
        let rep = TrainReport {
            epochs: vec![
                EpochRecord {
                    epoch: 0,
                    train_loss: -1.5,
                    val_loss: -1.25,
                },
                EpochRecord {
                    epoch: 1,
                    train_loss: -2.0,
                    val_loss: -1.5,
                },
            ],
            best_epoch: 1,
            initial_train_loss: -1.0,
            wall_time_s: 0.0,
        };
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,train_loss,val_loss\n0,-1.5,-1.25\n1,-2.0,-1.5\n");
    }
}
