//! SINR and weighted sum-rate under the `y = hᵀ x + n` downlink model.
//!
//! Rates are spectral efficiencies in bits/s/Hz (log base 2), evaluated per
//! subcarrier and averaged over subcarriers.

use thiserror::Error;

use crate::channel::ChannelMatrix;
use crate::linalg::{CMatrix, C64};

/// Tolerance on `‖w̃‖ = 1` accepted by [`BeamformerSet::new`].
pub const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid beamformer: {0}")]
    InvalidBeamformer(String),
    #[error("noise variance for UE {ue} must be positive and finite, got {value}")]
    InvalidNoise { ue: usize, value: f64 },
}

/// Unit-norm directions `w̃[k, :, n]` plus per-UE powers `p[n]`, so that the
/// precoder is `W = √p ⊙ W̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    k_sc: usize,
    m_tx: usize,
    n_ue: usize,
    w_tilde: Vec<C64>,
    p: Vec<f64>,
}

impl BeamformerSet {
    /// `w_tilde` is `(K, M, N)` row-major.
    pub fn new(k_sc: usize, m_tx: usize, n_ue: usize, w_tilde: Vec<C64>, p: Vec<f64>) -> Result<Self, MetricsError> {
        if w_tilde.len() != k_sc * m_tx * n_ue {
            return Err(MetricsError::ShapeMismatch(format!(
                "w_tilde has {} entries, expected {}",
                w_tilde.len(),
                k_sc * m_tx * n_ue
            )));
        }
        if p.len() != n_ue {
            return Err(MetricsError::ShapeMismatch(format!("p has {} entries, expected {n_ue}", p.len())));
        }
        if let Some(i) = p.iter().position(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(MetricsError::InvalidBeamformer(format!("power p[{i}] = {}", p[i])));
        }
        let bf = Self {
            k_sc,
            m_tx,
            n_ue,
            w_tilde,
            p,
        };
        for k in 0..k_sc {
            for n in 0..n_ue {
                let norm = (0..m_tx).map(|m| bf.w(k, m, n).norm_sqr()).sum::<f64>().sqrt();
                if !((norm - 1.0).abs() <= UNIT_NORM_TOL) {
                    return Err(MetricsError::InvalidBeamformer(format!(
                        "‖w̃[{k}, :, {n}]‖ = {norm}, expected 1"
                    )));
                }
            }
        }
        Ok(bf)
    }

    /// Assembles per-subcarrier `M × N` direction matrices.
    pub fn from_slices(slices: &[CMatrix], p: Vec<f64>) -> Result<Self, MetricsError> {
        let first = slices
            .first()
            .ok_or_else(|| MetricsError::ShapeMismatch("no subcarriers".into()))?;
        let (m_tx, n_ue) = first.shape();
        let mut w = Vec::with_capacity(slices.len() * m_tx * n_ue);
        for (k, s) in slices.iter().enumerate() {
            if s.shape() != (m_tx, n_ue) {
                return Err(MetricsError::ShapeMismatch(format!(
                    "subcarrier {k} is {:?}, expected {:?}",
                    s.shape(),
                    (m_tx, n_ue)
                )));
            }
            w.extend_from_slice(s.as_slice());
        }
        Self::new(slices.len(), m_tx, n_ue, w, p)
    }

    pub fn k_sc(&self) -> usize {
        self.k_sc
    }

    pub fn m_tx(&self) -> usize {
        self.m_tx
    }

    pub fn n_ue(&self) -> usize {
        self.n_ue
    }

    pub fn powers(&self) -> &[f64] {
        &self.p
    }

    pub fn directions(&self) -> &[C64] {
        &self.w_tilde
    }

    #[inline]
    pub fn w(&self, k: usize, m: usize, n: usize) -> C64 {
        self.w_tilde[(k * self.m_tx + m) * self.n_ue + n]
    }

    pub fn subcarrier(&self, k: usize) -> CMatrix {
        let sz = self.m_tx * self.n_ue;
        CMatrix::new(self.m_tx, self.n_ue, self.w_tilde[k * sz..(k + 1) * sz].to_vec())
            .expect("validated on construction")
    }

    /// Returns a copy with the powers replaced.
    pub fn with_powers(&self, p: Vec<f64>) -> Result<Self, MetricsError> {
        Self::new(self.k_sc, self.m_tx, self.n_ue, self.w_tilde.clone(), p)
    }

    /// Checks `Σ p ≤ p_max` up to `1e-9`.
    pub fn check_budget(&self, p_max: f64) -> Result<(), MetricsError> {
        let total: f64 = self.p.iter().sum();
        if total > p_max + 1e-9 {
            return Err(MetricsError::InvalidBeamformer(format!(
                "total power {total} exceeds budget {p_max}"
            )));
        }
        Ok(())
    }
}

/// Per-UE rate weights `α`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateWeights(Vec<f64>);

impl RateWeights {
    pub fn new(alpha: Vec<f64>) -> Result<Self, MetricsError> {
        if let Some(i) = alpha.iter().position(|&a| !(a >= 0.0) || !a.is_finite()) {
            return Err(MetricsError::InvalidBeamformer(format!("rate weight α[{i}] = {}", alpha[i])));
        }
        Ok(Self(alpha))
    }

    pub fn uniform(n_ue: usize) -> Self {
        Self(vec![1.0; n_ue])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Received power split for one UE on one subcarrier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalTerms {
    pub desired: f64,
    pub interference: f64,
    pub noise: f64,
}

impl SignalTerms {
    pub fn sinr(&self) -> f64 {
        self.desired / (self.interference + self.noise)
    }
}

/// `γ[k, n]`, row-major `(K, N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SinrGrid {
    pub k_sc: usize,
    pub n_ue: usize,
    pub values: Vec<f64>,
}

impl SinrGrid {
    pub fn get(&self, k: usize, n: usize) -> f64 {
        self.values[k * self.n_ue + n]
    }
}

fn check_shapes(h: &ChannelMatrix, bf: &BeamformerSet, sigma2: &[f64]) -> Result<(), MetricsError> {
    if (h.k_sc(), h.m_tx(), h.n_ue()) != (bf.k_sc, bf.m_tx, bf.n_ue) {
        return Err(MetricsError::ShapeMismatch(format!(
            "channel ({}, {}, {}) vs beamformer ({}, {}, {})",
            h.k_sc(),
            h.m_tx(),
            h.n_ue(),
            bf.k_sc,
            bf.m_tx,
            bf.n_ue
        )));
    }
    if sigma2.len() != bf.n_ue {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} noise variances for {} UEs",
            sigma2.len(),
            bf.n_ue
        )));
    }
    if let Some(ue) = sigma2.iter().position(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(MetricsError::InvalidNoise { ue, value: sigma2[ue] });
    }
    Ok(())
}

/// Desired, interference and noise power for every (subcarrier, UE), row-major `(K, N)`.
pub fn received_signal_terms(
    h: &ChannelMatrix,
    bf: &BeamformerSet,
    sigma2: &[f64],
) -> Result<Vec<SignalTerms>, MetricsError> {
    check_shapes(h, bf, sigma2)?;
    let n_ue = bf.n_ue;
    let mut out = Vec::with_capacity(bf.k_sc * n_ue);
    for k in 0..bf.k_sc {
        // G[n, i] = h_nᵀ w̃_i
        let g = h
            .subcarrier(k)
            .transpose()
            .matmul(&bf.subcarrier(k))
            .expect("shapes checked");
        for n in 0..n_ue {
            let mut interference = 0.0;
            for i in 0..n_ue {
                if i != n {
                    interference += bf.p[i] * g.get(n, i).norm_sqr();
                }
            }
            out.push(SignalTerms {
                desired: bf.p[n] * g.get(n, n).norm_sqr(),
                interference,
                noise: sigma2[n],
            });
        }
    }
    Ok(out)
}

pub fn sinr_per_ue(h: &ChannelMatrix, bf: &BeamformerSet, sigma2: &[f64]) -> Result<SinrGrid, MetricsError> {
    let terms = received_signal_terms(h, bf, sigma2)?;
    Ok(SinrGrid {
        k_sc: bf.k_sc,
        n_ue: bf.n_ue,
        values: terms.iter().map(SignalTerms::sinr).collect(),
    })
}

/// `(1/K) Σ_k Σ_n α_n log₂(1 + γ[k, n])`.
pub fn weighted_sum_rate(gamma: &SinrGrid, alpha: &RateWeights) -> f64 {
    assert_eq!(alpha.0.len(), gamma.n_ue, "one rate weight per UE");
    let total: f64 = gamma
        .values
        .chunks_exact(gamma.n_ue)
        .map(|row| row.iter().zip(&alpha.0).map(|(g, a)| a * (1.0 + g).log2()).sum::<f64>())
        .sum();
    total / gamma.k_sc as f64
}

/// Training objective: the negated weighted sum-rate.
pub fn neg_sum_rate_loss(
    h: &ChannelMatrix,
    bf: &BeamformerSet,
    sigma2: &[f64],
    alpha: &RateWeights,
) -> Result<f64, MetricsError> {
    Ok(-weighted_sum_rate(&sinr_per_ue(h, bf, sigma2)?, alpha))
}

/// Sum-rate with uniform weights.
pub fn sum_rate(h: &ChannelMatrix, bf: &BeamformerSet, sigma2: &[f64]) -> Result<f64, MetricsError> {
    Ok(weighted_sum_rate(&sinr_per_ue(h, bf, sigma2)?, &RateWeights::uniform(bf.n_ue)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn scalar_unit_case() {
        let h = ChannelMatrix::new(1, 1, 1, vec![c(1.0, 0.0)], vec![0.0]).unwrap();
        let bf = BeamformerSet::new(1, 1, 1, vec![c(1.0, 0.0)], vec![1.0]).unwrap();
        let g = sinr_per_ue(&h, &bf, &[1.0]).unwrap();
        assert_eq!(g.values, vec![1.0]);
        assert_eq!(weighted_sum_rate(&g, &RateWeights::uniform(1)), 1.0);
        assert_eq!(neg_sum_rate_loss(&h, &bf, &[1.0], &RateWeights::uniform(1)).unwrap(), -1.0);
    }

    #[test]
    fn orthogonal_channels_have_no_interference() {
        // h_0 = (2, 0), h_1 = (0, 3i); w̃ = I
        let h = ChannelMatrix::new(2, 2, 1, vec![c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 3.0)], vec![0.0; 2])
            .unwrap();
        let bf = BeamformerSet::from_slices(&[CMatrix::identity(2)], vec![0.5, 1.5]).unwrap();
        let t = received_signal_terms(&h, &bf, &[0.1, 0.2]).unwrap();
        assert_eq!(t[0].interference, 0.0);
        assert_eq!(t[1].interference, 0.0);
        let g = sinr_per_ue(&h, &bf, &[0.1, 0.2]).unwrap();
        assert!((g.get(0, 0) - 0.5 * 4.0 / 0.1).abs() < 1e-12);
        assert!((g.get(0, 1) - 1.5 * 9.0 / 0.2).abs() < 1e-12);
    }

    #[test]
    fn powers_of_two() {
        let g = SinrGrid {
            k_sc: 1,
            n_ue: 4,
            values: vec![1.0, 3.0, 7.0, 15.0],
        };
        assert_eq!(weighted_sum_rate(&g, &RateWeights::uniform(4)), 10.0);
        let z = SinrGrid {
            k_sc: 3,
            n_ue: 2,
            values: vec![0.0; 6],
        };
        assert_eq!(weighted_sum_rate(&z, &RateWeights::uniform(2)), 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(BeamformerSet::new(1, 2, 1, vec![c(1.0, 0.0), c(1.0, 0.0)], vec![1.0]).is_err());
        assert!(BeamformerSet::new(1, 1, 1, vec![c(1.0, 0.0)], vec![-1.0]).is_err());
        let h = ChannelMatrix::new(1, 1, 1, vec![c(1.0, 0.0)], vec![0.0]).unwrap();
        let bf = BeamformerSet::new(1, 1, 1, vec![c(1.0, 0.0)], vec![1.0]).unwrap();
        assert!(matches!(
            sinr_per_ue(&h, &bf, &[0.0]),
            Err(MetricsError::InvalidNoise { ue: 0, .. })
        ));
        assert!(matches!(sinr_per_ue(&h, &bf, &[1.0, 1.0]), Err(MetricsError::ShapeMismatch(_))));
        assert!(bf.check_budget(0.5).is_err());
        assert!(bf.check_budget(1.0).is_ok());
    }
}
