//! Frequency-domain MU-MISO channel generation.
//!
//! Each (tx antenna, UE) link gets an independent draw of Rayleigh taps from a
//! TDL power-delay profile, converted to a per-subcarrier response. A sample is
//! a single coherence-time snapshot: Doppler is kept as metadata only and the
//! channel varies across subcarriers, not across time.
//!
//! Per-UE SNR jitter is stored with each sample as an offset from the nominal
//! SNR; [`ChannelMatrix::noise_variances`] turns a nominal SNR into per-UE
//! noise variances `σ²ₙ = 10^(-(snr + δₙ)/10)` under unit-average channel gain
//! and unit reference transmit power per UE.

mod dataset;
mod tdl;

pub use dataset::{load_dataset, read_dataset, save_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use tdl::{ProfileKind, ProfileTap, TdlProfile, TDL_A, TDL_C};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::linalg::{CMatrix, CVector, C64};

/// Subcarriers per resource block.
pub const SUBCARRIERS_PER_RB: usize = 12;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("invalid channel parameters: {0}")]
    InvalidParams(String),
    #[error("dataset must contain at least one sample")]
    EmptyDataset,
    #[error("dataset version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt dataset: {0}")]
    CorruptDataset(String),
    #[error("dataset shape inconsistency: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JitterDist {
    Gaussian,
}

impl JitterDist {
    pub fn id(self) -> u8 {
        0
    }

    pub fn from_id(id: u8) -> Option<Self> {
        (id == 0).then_some(JitterDist::Gaussian)
    }
}

/// Everything needed to draw channel samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub profile: ProfileKind,
    pub delay_spread_ns: f64,
    pub m_tx: usize,
    pub n_ue: usize,
    pub k_sc: usize,
    pub scs_hz: f64,
    pub jitter_db: f64,
    pub jitter_dist: JitterDist,
    /// Metadata only; taps are static within a sample.
    pub doppler_hz: f64,
}

impl ChannelParams {
    /// 30 kHz spacing, 20 dB Gaussian SNR jitter, 10 Hz Doppler.
    pub fn new(profile: ProfileKind, delay_spread_ns: f64, m_tx: usize, n_ue: usize, k_sc: usize) -> Self {
        Self {
            profile,
            delay_spread_ns,
            m_tx,
            n_ue,
            k_sc,
            scs_hz: 30e3,
            jitter_db: 20.0,
            jitter_dist: JitterDist::Gaussian,
            doppler_hz: 10.0,
        }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |m: &str| Err(ChannelError::InvalidParams(m.to_string()));
        if self.m_tx == 0 || self.n_ue == 0 || self.k_sc == 0 {
            return bad("m_tx, n_ue and k_sc must be positive");
        }
        if !(self.delay_spread_ns > 0.0) || !self.delay_spread_ns.is_finite() {
            return bad("delay_spread_ns must be positive");
        }
        if !(self.scs_hz > 0.0) || !self.scs_hz.is_finite() {
            return bad("scs_hz must be positive");
        }
        if !(self.jitter_db >= 0.0) || !self.jitter_db.is_finite() {
            return bad("jitter_db must be non-negative");
        }
        if !self.doppler_hz.is_finite() {
            return bad("doppler_hz must be finite");
        }
        Ok(())
    }

    /// Hex digest identifying these parameters together with a seed and sample count.
    pub fn fingerprint(&self, seed: u64, count: usize) -> String {
        let mut h = Sha256::new();
        h.update(b"beamopt-channel-v1");
        h.update([self.profile.id(), self.jitter_dist.id()]);
        for v in [self.m_tx as u64, self.n_ue as u64, self.k_sc as u64, seed, count as u64] {
            h.update(v.to_le_bytes());
        }
        for v in [self.delay_spread_ns, self.scs_hz, self.jitter_db, self.doppler_hz] {
            h.update(v.to_bits().to_le_bytes());
        }
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A discrete multipath component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelTap {
    pub delay_s: f64,
    pub gain: C64,
}

/// One channel realization: `h[k, m, n]` for subcarrier k, tx antenna m, UE n.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    m_tx: usize,
    n_ue: usize,
    k_sc: usize,
    h: Vec<C64>,
    snr_offset_db: Vec<f64>,
}

impl ChannelMatrix {
    pub fn new(
        m_tx: usize,
        n_ue: usize,
        k_sc: usize,
        h: Vec<C64>,
        snr_offset_db: Vec<f64>,
    ) -> Result<Self, ChannelError> {
        if h.len() != k_sc * m_tx * n_ue {
            return Err(ChannelError::ShapeMismatch(format!(
                "expected {} channel entries, got {}",
                k_sc * m_tx * n_ue,
                h.len()
            )));
        }
        if snr_offset_db.len() != n_ue {
            return Err(ChannelError::ShapeMismatch(format!(
                "expected {n_ue} SNR offsets, got {}",
                snr_offset_db.len()
            )));
        }
        if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())
            || snr_offset_db.iter().any(|v| !v.is_finite())
        {
            return Err(ChannelError::InvalidParams("non-finite channel entry".into()));
        }
        Ok(Self {
            m_tx,
            n_ue,
            k_sc,
            h,
            snr_offset_db,
        })
    }

    /// Channel with the same matrix on every subcarrier and no SNR jitter.
    pub fn flat(h_k: &CMatrix, k_sc: usize) -> Self {
        let (m_tx, n_ue) = h_k.shape();
        let mut h = Vec::with_capacity(k_sc * m_tx * n_ue);
        for _ in 0..k_sc {
            h.extend_from_slice(h_k.as_slice());
        }
        Self {
            m_tx,
            n_ue,
            k_sc,
            h,
            snr_offset_db: vec![0.0; n_ue],
        }
    }

    pub fn m_tx(&self) -> usize {
        self.m_tx
    }

    pub fn n_ue(&self) -> usize {
        self.n_ue
    }

    pub fn k_sc(&self) -> usize {
        self.k_sc
    }

    /// Raw `(K, M, N)` row-major entries.
    pub fn as_slice(&self) -> &[C64] {
        &self.h
    }

    /// Per-UE SNR offsets from the nominal SNR, in dB.
    pub fn snr_offset_db(&self) -> &[f64] {
        &self.snr_offset_db
    }

    #[inline]
    pub fn get(&self, k: usize, m: usize, n: usize) -> C64 {
        self.h[(k * self.m_tx + m) * self.n_ue + n]
    }

    /// The `M × N` channel matrix at subcarrier `k`.
    pub fn subcarrier(&self, k: usize) -> CMatrix {
        let sz = self.m_tx * self.n_ue;
        CMatrix::new(self.m_tx, self.n_ue, self.h[k * sz..(k + 1) * sz].to_vec())
            .expect("entries validated on construction")
    }

    /// Per-UE noise variances at a nominal SNR (dB).
    pub fn noise_variances(&self, nominal_snr_db: f64) -> Vec<f64> {
        self.snr_offset_db
            .iter()
            .map(|d| 10f64.powf(-(nominal_snr_db + d) / 10.0))
            .collect()
    }
}

/// Draws one Rayleigh realization of a profile's taps.
pub fn gen_taps<R: Rng + ?Sized>(profile: &TdlProfile, delay_spread_ns: f64, rng: &mut R) -> Vec<ChannelTap> {
    profile
        .taps()
        .iter()
        .map(|t| {
            let s = (t.power / 2.0).sqrt();
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            ChannelTap {
                delay_s: t.normalized_delay * delay_spread_ns * 1e-9,
                gain: C64::new(re * s, im * s),
            }
        })
        .collect()
}

/// `H(f_k) = Σ_l g_l exp(-j 2π f_k τ_l)` with `f_k = k · scs_hz`, `k = 0..k_sc`.
pub fn taps_to_freq(taps: &[ChannelTap], k_sc: usize, scs_hz: f64) -> CVector {
    let data = (0..k_sc)
        .map(|k| {
            let f = k as f64 * scs_hz;
            taps.iter()
                .map(|t| t.gain * C64::from_polar(1.0, -2.0 * std::f64::consts::PI * f * t.delay_s))
                .sum()
        })
        .collect();
    CVector::new(data).expect("finite taps give a finite response")
}

/// Per-UE SNRs: `nominal + δ`, `δ ~ N(0, (jitter/2)²)` clipped to `±jitter`.
pub fn draw_ue_snrs<R: Rng + ?Sized>(
    nominal_snr_db: f64,
    jitter_db: f64,
    dist: JitterDist,
    n_ue: usize,
    rng: &mut R,
) -> Vec<f64> {
    match dist {
        JitterDist::Gaussian => (0..n_ue)
            .map(|_| {
                if jitter_db == 0.0 {
                    return nominal_snr_db;
                }
                let z: f64 = StandardNormal.sample(rng);
                nominal_snr_db + (z * jitter_db / 2.0).clamp(-jitter_db, jitter_db)
            })
            .collect(),
    }
}

/// Draws one channel realization.
pub fn gen_channel<R: Rng + ?Sized>(params: &ChannelParams, rng: &mut R) -> ChannelMatrix {
    let profile = TdlProfile::standard(params.profile);
    let (m_tx, n_ue, k_sc) = (params.m_tx, params.n_ue, params.k_sc);
    let mut h = vec![C64::new(0.0, 0.0); k_sc * m_tx * n_ue];
    for n in 0..n_ue {
        for m in 0..m_tx {
            let taps = gen_taps(&profile, params.delay_spread_ns, rng);
            let resp = taps_to_freq(&taps, k_sc, params.scs_hz);
            for k in 0..k_sc {
                h[(k * m_tx + m) * n_ue + n] = resp[k];
            }
        }
    }
    let snr_offset_db = draw_ue_snrs(0.0, params.jitter_db, params.jitter_dist, n_ue, rng);
    ChannelMatrix {
        m_tx,
        n_ue,
        k_sc,
        h,
        snr_offset_db,
    }
}

/// Seed of the independent sub-stream used for sample `index`.
pub fn sample_seed(master_seed: u64, index: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A collection of channel samples sharing one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDataset {
    pub params: ChannelParams,
    pub seed: u64,
    pub samples: Vec<ChannelMatrix>,
}

impl ChannelDataset {
    pub fn new(params: ChannelParams, seed: u64, samples: Vec<ChannelMatrix>) -> Result<Self, ChannelError> {
        if samples.is_empty() {
            return Err(ChannelError::EmptyDataset);
        }
        for (i, s) in samples.iter().enumerate() {
            if (s.m_tx, s.n_ue, s.k_sc) != (params.m_tx, params.n_ue, params.k_sc) {
                return Err(ChannelError::ShapeMismatch(format!(
                    "sample {i} has shape ({}, {}, {}), expected ({}, {}, {})",
                    s.k_sc, s.m_tx, s.n_ue, params.k_sc, params.m_tx, params.n_ue
                )));
            }
        }
        Ok(Self { params, seed, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn fingerprint(&self) -> String {
        self.params.fingerprint(self.seed, self.samples.len())
    }
}

/// Generates `count` samples, each from its own seeded sub-stream, so the
/// result does not depend on the number of worker threads.
pub fn generate_dataset(params: &ChannelParams, count: usize, seed: u64) -> Result<ChannelDataset, ChannelError> {
    params.validate()?;
    if count == 0 {
        return Err(ChannelError::EmptyDataset);
    }
    let samples = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, i));
            gen_channel(params, &mut rng)
        })
        .collect();
    ChannelDataset::new(params.clone(), seed, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(m: usize, n: usize, k: usize) -> ChannelParams {
        ChannelParams {
            profile: ProfileKind::TdlA,
            delay_spread_ns: 30.0,
            m_tx: m,
            n_ue: n,
            k_sc: k,
            scs_hz: 30e3,
            jitter_db: 20.0,
            jitter_dist: JitterDist::Gaussian,
            doppler_hz: 10.0,
        }
    }

    #[test]
    fn single_tap_unit_energy() {
        let p = TdlProfile::new(None, &[(0.0, 0.0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let taps = gen_taps(&p, 100.0, &mut rng);
            assert_eq!(taps.len(), 1);
            acc += taps[0].gain.norm_sqr();
        }
        assert!((acc / n as f64 - 1.0).abs() < 0.02);
    }

    #[test]
    fn equal_taps_split_power() {
        let p = TdlProfile::new(None, &[(0.0, 0.0), (1.0, 0.0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let mut acc = [0.0; 2];
        for _ in 0..n {
            let taps = gen_taps(&p, 100.0, &mut rng);
            acc[0] += taps[0].gain.norm_sqr();
            acc[1] += taps[1].gain.norm_sqr();
        }
        for a in acc {
            assert!((a / n as f64 - 0.5).abs() < 0.025);
        }
    }

    #[test]
    fn tdl_a_delays_scale_with_spread() {
        let p = TdlProfile::standard(ProfileKind::TdlA);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let taps = gen_taps(&p, 30.0, &mut rng);
        let mut table: Vec<f64> = TDL_A.iter().map(|r| r.0).collect();
        table.sort_by(f64::total_cmp);
        for (t, d) in taps.iter().zip(table) {
            assert!((t.delay_s - d * 30e-9).abs() <= 1e-15 * d * 30e-9);
        }
    }

    #[test]
    fn freq_response_cases() {
        let one = [ChannelTap {
            delay_s: 0.0,
            gain: C64::new(1.0, 0.0),
        }];
        let r = taps_to_freq(&one, 12, 30e3);
        assert!(r.as_slice().iter().all(|z| *z == C64::new(1.0, 0.0)));

        let g = C64::new(0.3, -0.7);
        let r = taps_to_freq(&[ChannelTap { delay_s: 0.0, gain: g }], 5, 30e3);
        assert!(r.as_slice().iter().all(|z| *z == g));

        let two = [
            ChannelTap {
                delay_s: 0.0,
                gain: C64::new(0.5, 0.1),
            },
            ChannelTap {
                delay_s: 250e-9,
                gain: C64::new(-0.2, 0.4),
            },
        ];
        let r = taps_to_freq(&two, 48, 30e3);
        for k in 0..48 {
            let f = k as f64 * 30e3;
            let mut re = 0.0;
            let mut im = 0.0;
            for t in &two {
                let ph = -2.0 * std::f64::consts::PI * f * t.delay_s;
                re += t.gain.re * ph.cos() - t.gain.im * ph.sin();
                im += t.gain.re * ph.sin() + t.gain.im * ph.cos();
            }
            assert!((r[k] - C64::new(re, im)).norm() < 1e-12);
        }
    }

    #[test]
    fn snr_jitter_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(draw_ue_snrs(7.0, 0.0, JitterDist::Gaussian, 3, &mut rng), vec![7.0; 3]);

        let xs = draw_ue_snrs(5.0, 20.0, JitterDist::Gaussian, 100_000, &mut rng);
        assert!(xs.iter().all(|&x| (-15.0..=25.0).contains(&x)));
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
        assert!((mean - 5.0).abs() < 0.1, "{mean}");
        // clamping at ±2σ leaves a std of ~0.96σ
        assert!(std > 8.5 && std < 10.0, "{std}");
    }

    #[test]
    fn channel_shape_and_determinism() {
        let p = params(4, 4, 48);
        let a = gen_channel(&p, &mut ChaCha8Rng::seed_from_u64(9));
        let b = gen_channel(&p, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert_eq!((a.k_sc(), a.m_tx(), a.n_ue()), (48, 4, 4));
        assert_eq!(a.subcarrier(3).shape(), (4, 4));
        assert_eq!(a.subcarrier(3).get(1, 2), a.get(3, 1, 2));
    }

    #[test]
    fn noise_variance_mapping() {
        let h = ChannelMatrix::new(1, 2, 1, vec![C64::new(1.0, 0.0); 2], vec![0.0, -10.0]).unwrap();
        let s = h.noise_variances(10.0);
        assert!((s[0] - 0.1).abs() < 1e-15);
        assert!((s[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dataset_generation_is_thread_count_invariant() {
        let p = params(2, 2, 12);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| generate_dataset(&p, 17, 5).unwrap());
        let b = four.install(|| generate_dataset(&p, 17, 5).unwrap());
        assert_eq!(a, b);
        assert!(matches!(generate_dataset(&p, 0, 5), Err(ChannelError::EmptyDataset)));
    }

    #[test]
    fn fingerprint_tracks_config() {
        let p = params(4, 4, 48);
        assert_eq!(p.fingerprint(1, 10), p.fingerprint(1, 10));
        let mut q = p.clone();
        q.delay_spread_ns = 300.0;
        assert_ne!(p.fingerprint(1, 10), q.fingerprint(1, 10));
    }
}
