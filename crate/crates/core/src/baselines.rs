//! Classical linear precoders.
//!
//! The received signal at UE n is `h_nᵀ x`, so the effective channel seen by
//! the transmitter is `G = Hᵀ` (N × M) and the pseudo-inverse formulas are
//! applied to `G`:
//!
//! * ZF:   `W ∝ Gᴴ (G Gᴴ)⁻¹`, giving `h_jᵀ w_i = 0` for `i ≠ j`
//! * MMSE: `W ∝ Gᴴ (G Gᴴ + D)⁻¹`, `D = diag(σ²ₙ · N / P_max)`
//! * duality structure: `W ∝ (I_M + Gᴴ diag(λₙ/σ²ₙ) G)⁻¹ Gᴴ`
//!
//! Columns are normalized to unit norm; powers are attached separately. The
//! MMSE form is the duality structure with equal virtual uplink powers
//! `λₙ = P_max / N`, written through the push-through identity so the solve is
//! N × N.

use thiserror::Error;

use crate::channel::ChannelMatrix;
use crate::linalg::{CMatrix, LinalgError, C64};
use crate::metrics::{BeamformerSet, MetricsError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BaselineError {
    #[error("channel Gram matrix is singular (pivot {pivot})")]
    SingularChannel { pivot: usize },
    #[error("virtual uplink fixed point did not converge in {iterations} iterations (residual {residual:e})")]
    InfeasibleTargets {
        last: Vec<f64>,
        iterations: usize,
        residual: f64,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Directions and powers for one subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSlice {
    /// `M × N`, unit-norm columns.
    pub directions: CMatrix,
    pub powers: Vec<f64>,
}

/// Virtual uplink power allocation `λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualUplinkPowers(Vec<f64>);

impl VirtualUplinkPowers {
    pub fn new(lambda: Vec<f64>) -> Result<Self, BaselineError> {
        if let Some(i) = lambda.iter().position(|&l| !(l >= 0.0) || !l.is_finite()) {
            return Err(BaselineError::InvalidInput(format!("λ[{i}] = {}", lambda[i])));
        }
        Ok(Self(lambda))
    }

    pub fn uniform(n_ue: usize, value: f64) -> Self {
        Self(vec![value; n_ue])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub damping: f64,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-8,
            damping: 0.5,
        }
    }
}

pub fn equal_power(n_ue: usize, p_max: f64) -> Vec<f64> {
    vec![p_max / n_ue as f64; n_ue]
}

/// Normalizes each column to unit norm. An all-zero column becomes `e₀`.
pub fn normalize_columns(w: &CMatrix) -> CMatrix {
    let (m, n) = w.shape();
    let mut out = w.clone();
    for j in 0..n {
        let norm = (0..m).map(|i| w.get(i, j).norm_sqr()).sum::<f64>().sqrt();
        for i in 0..m {
            let v = if norm > 0.0 {
                w.get(i, j) / norm
            } else if i == 0 {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            };
            out.set(i, j, v);
        }
    }
    out
}

fn singular(e: LinalgError) -> BaselineError {
    match e {
        LinalgError::SingularMatrix { pivot } => BaselineError::SingularChannel { pivot },
        other => BaselineError::InvalidInput(other.to_string()),
    }
}

fn check_noise(sigma2: &[f64], n_ue: usize) -> Result<(), BaselineError> {
    if sigma2.len() != n_ue {
        return Err(BaselineError::InvalidInput(format!(
            "{} noise variances for {n_ue} UEs",
            sigma2.len()
        )));
    }
    if let Some(i) = sigma2.iter().position(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(BaselineError::InvalidInput(format!("σ²[{i}] = {}", sigma2[i])));
    }
    Ok(())
}

/// `Gᴴ (G Gᴴ + diag(reg))⁻¹` with `G = Hᵀ`, unnormalized.
fn regularized_inverse(h_k: &CMatrix, reg: &[f64]) -> Result<CMatrix, LinalgError> {
    let g = h_k.transpose();
    let gh = h_k.conj();
    let mut gram = g.matmul(&gh)?;
    for (i, r) in reg.iter().enumerate() {
        let d = gram.get(i, i) + r;
        gram.set(i, i, d);
    }
    // gram is Hermitian, so (gram⁻¹ G)ᴴ = Gᴴ gram⁻¹
    Ok(gram.solve(&g)?.hermitian())
}

/// Matched-filter directions `w̃ₙ ∝ h̄ₙ`.
pub fn matched_filter_directions(h_k: &CMatrix) -> CMatrix {
    normalize_columns(&h_k.conj())
}

pub fn zf_directions(h_k: &CMatrix) -> Result<CMatrix, BaselineError> {
    let (m, n) = h_k.shape();
    if n > m {
        return Err(BaselineError::InvalidInput(format!("zero-forcing needs N ≤ M, got N={n}, M={m}")));
    }
    Ok(normalize_columns(&regularized_inverse(h_k, &vec![0.0; n]).map_err(singular)?))
}

/// Zero-forcing with a tiny diagonal loading, for channels whose Gram matrix is
/// numerically singular. Matches [`zf_directions`] on well-conditioned input
/// to roughly the loading level.
pub fn zf_directions_regularized(h_k: &CMatrix) -> CMatrix {
    let n = h_k.cols();
    let gram_scale = h_k.frobenius_norm().powi(2) / n as f64;
    let eps = 1e-12 * gram_scale.max(f64::MIN_POSITIVE);
    let w = regularized_inverse(h_k, &vec![eps; n]).unwrap_or_else(|_| CMatrix::zeros(h_k.rows(), n));
    normalize_columns(&w)
}

/// Zero-forcing directions with equal powers `P_max / N`.
pub fn zf_beamformer(h_k: &CMatrix, p_max: f64) -> Result<BeamformerSlice, BaselineError> {
    Ok(BeamformerSlice {
        directions: zf_directions(h_k)?,
        powers: equal_power(h_k.cols(), p_max),
    })
}

pub fn mmse_directions(h_k: &CMatrix, sigma2: &[f64], p_max: f64) -> Result<CMatrix, BaselineError> {
    let n = h_k.cols();
    check_noise(sigma2, n)?;
    if !(p_max > 0.0) {
        return Err(BaselineError::InvalidInput(format!("p_max = {p_max}")));
    }
    let load = n as f64 / p_max;
    let reg: Vec<f64> = sigma2.iter().map(|s| s * load).collect();
    Ok(normalize_columns(&regularized_inverse(h_k, &reg).map_err(singular)?))
}

/// MMSE (regularized ZF) directions with equal powers `P_max / N`.
pub fn mmse_beamformer(h_k: &CMatrix, sigma2: &[f64], p_max: f64) -> Result<BeamformerSlice, BaselineError> {
    Ok(BeamformerSlice {
        directions: mmse_directions(h_k, sigma2, p_max)?,
        powers: equal_power(h_k.cols(), p_max),
    })
}

/// Directions `(I_M + Gᴴ diag(λ/σ²) G)⁻¹ h̄ₙ`, normalized, with the given powers.
pub fn optimal_structure_bf(
    h_k: &CMatrix,
    lambda: &VirtualUplinkPowers,
    p: &[f64],
    sigma2: &[f64],
) -> Result<BeamformerSlice, BaselineError> {
    let (m, n) = h_k.shape();
    check_noise(sigma2, n)?;
    if lambda.0.len() != n || p.len() != n {
        return Err(BaselineError::InvalidInput("λ and p need one entry per UE".into()));
    }
    if let Some(i) = p.iter().position(|&v| !(v >= 0.0)) {
        return Err(BaselineError::InvalidInput(format!("p[{i}] = {}", p[i])));
    }
    let gh = h_k.conj();
    // A = I + Σ_i (λ_i/σ²_i) g_i g_iᴴ, g_i = h̄_i
    let mut a = CMatrix::identity(m);
    for i in 0..n {
        let s = lambda.0[i] / sigma2[i];
        if s == 0.0 {
            continue;
        }
        for r in 0..m {
            for c in 0..m {
                let v = a.get(r, c) + gh.get(r, i) * gh.get(c, i).conj() * s;
                a.set(r, c, v);
            }
        }
    }
    let w = a.solve(&gh).map_err(singular)?;
    Ok(BeamformerSlice {
        directions: normalize_columns(&w),
        powers: p.to_vec(),
    })
}

/// Uplink gains `qₙ(λ) = g_nᴴ A_n⁻¹ g_n` with `A_n = σ² I + Σ_{i≠n} λ_i g_i g_iᴴ`,
/// plus the coupling terms `|g_nᴴ A_n⁻¹ g_i|²` (so that `∂qₙ/∂λ_i = -coupling[n][i]`).
struct UplinkTerms {
    q: Vec<f64>,
    coupling: Vec<Vec<f64>>,
}

fn uplink_terms(h_k: &CMatrix, lambda: &[f64], sigma2: f64) -> Result<UplinkTerms, BaselineError> {
    let (m, n) = h_k.shape();
    let gh = h_k.conj();
    let mut q = Vec::with_capacity(n);
    let mut coupling = Vec::with_capacity(n);
    for k in 0..n {
        let mut a = CMatrix::identity(m).scale(C64::new(sigma2, 0.0));
        for i in (0..n).filter(|&i| i != k) {
            for r in 0..m {
                for c in 0..m {
                    let v = a.get(r, c) + gh.get(r, i) * gh.get(c, i).conj() * lambda[i];
                    a.set(r, c, v);
                }
            }
        }
        let x = a.solve(&gh).map_err(singular)?;
        let inner = |i: usize| -> C64 { (0..m).map(|r| gh.get(r, k).conj() * x.get(r, i)).sum() };
        q.push(inner(k).re);
        coupling.push((0..n).map(|i| if i == k { 0.0 } else { inner(i).norm_sqr() }).collect());
    }
    Ok(UplinkTerms { q, coupling })
}

fn uplink_gains(h_k: &CMatrix, lambda: &[f64], sigma2: f64) -> Result<Vec<f64>, BaselineError> {
    Ok(uplink_terms(h_k, lambda, sigma2)?.q)
}

/// `max_n |λₙ qₙ / ρₙ - 1|`.
fn target_residual(lambda: &[f64], q: &[f64], targets: &[f64]) -> f64 {
    lambda
        .iter()
        .zip(q)
        .zip(targets)
        .map(|((l, q), t)| (l * q / t - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Newton step on `λₙ qₙ(λ) = ρₙ`. `None` if the Jacobian is singular.
fn newton_candidate(lambda: &[f64], t: &UplinkTerms, targets: &[f64]) -> Option<Vec<f64>> {
    let n = lambda.len();
    let jac = CMatrix::from_fn(n, n, |k, i| {
        let v = if k == i { t.q[k] } else { -lambda[k] * t.coupling[k][i] };
        C64::new(v, 0.0)
    });
    let f = CMatrix::from_fn(n, 1, |k, _| C64::new(targets[k] - lambda[k] * t.q[k], 0.0));
    let delta = jac.solve(&f).ok()?;
    let next: Vec<f64> = (0..n).map(|k| lambda[k] + delta.get(k, 0).re).collect();
    next.iter().all(|v| *v > 0.0 && v.is_finite()).then_some(next)
}

/// Virtual uplink SINRs `λₙ qₙ(λ)` achieved with MMSE receive filters.
pub fn virtual_uplink_sinrs(
    h_k: &CMatrix,
    lambda: &VirtualUplinkPowers,
    sigma2: f64,
) -> Result<Vec<f64>, BaselineError> {
    let q = uplink_gains(h_k, &lambda.0, sigma2)?;
    Ok(q.iter().zip(&lambda.0).map(|(q, l)| q * l).collect())
}

/// Damped fixed-point iteration `λₙ ← ρₙ / qₙ(λ)`, accelerated by Newton steps
/// on `λₙ qₙ(λ) = ρₙ` whenever they reduce the residual.
///
/// Stops once every virtual uplink SINR is within `tol` (relative) of its
/// target and returns the iterate that satisfied the check.
pub fn solve_virtual_uplink_powers(
    h_k: &CMatrix,
    targets: &[f64],
    sigma2: f64,
    opts: FixedPointOptions,
) -> Result<VirtualUplinkPowers, BaselineError> {
    let (_, n) = h_k.shape();
    if targets.len() != n {
        return Err(BaselineError::InvalidInput(format!("{} targets for {n} UEs", targets.len())));
    }
    if let Some(i) = targets.iter().position(|&t| !(t > 0.0) || !t.is_finite()) {
        return Err(BaselineError::InvalidInput(format!("target ρ[{i}] = {}", targets[i])));
    }
    if !(sigma2 > 0.0) {
        return Err(BaselineError::InvalidInput(format!("σ² = {sigma2}")));
    }
    let d = opts.damping;
    // interference-free starting point
    let mut lambda: Vec<f64> = (0..n)
        .map(|k| {
            let g2: f64 = (0..h_k.rows()).map(|r| h_k.get(r, k).norm_sqr()).sum();
            targets[k] * sigma2 / g2.max(f64::MIN_POSITIVE)
        })
        .collect();
    let mut terms = uplink_terms(h_k, &lambda, sigma2)?;
    let mut residual = target_residual(&lambda, &terms.q, targets);
    for _ in 0..opts.max_iter {
        if !residual.is_finite() {
            break;
        }
        if residual <= opts.tol {
            return VirtualUplinkPowers::new(lambda);
        }
        // a Newton step is kept only when it lowers the residual
        if let Some(cand) = newton_candidate(&lambda, &terms, targets) {
            if let Ok(ct) = uplink_terms(h_k, &cand, sigma2) {
                let cr = target_residual(&cand, &ct.q, targets);
                if cr < residual {
                    (lambda, terms, residual) = (cand, ct, cr);
                    continue;
                }
            }
        }
        for ((l, t), q) in lambda.iter_mut().zip(targets).zip(&terms.q) {
            *l = (1.0 - d) * *l + d * t / q;
        }
        // unbounded powers make the Gram solve degenerate, which means no fixed point
        match uplink_terms(h_k, &lambda, sigma2) {
            Ok(t) => terms = t,
            Err(BaselineError::SingularChannel { .. }) => break,
            Err(e) => return Err(e),
        }
        residual = target_residual(&lambda, &terms.q, targets);
    }
    if residual <= opts.tol {
        return VirtualUplinkPowers::new(lambda);
    }
    Err(BaselineError::InfeasibleTargets {
        last: lambda,
        iterations: opts.max_iter,
        residual,
    })
}

fn assemble(
    h: &ChannelMatrix,
    powers: Vec<f64>,
    mut per_k: impl FnMut(&CMatrix) -> Result<CMatrix, BaselineError>,
) -> Result<BeamformerSet, BaselineError> {
    let slices = (0..h.k_sc())
        .map(|k| per_k(&h.subcarrier(k)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BeamformerSet::from_slices(&slices, powers)?)
}

/// Per-subcarrier zero-forcing over a whole channel, equal power.
pub fn zf_precoder(h: &ChannelMatrix, p_max: f64) -> Result<BeamformerSet, BaselineError> {
    assemble(h, equal_power(h.n_ue(), p_max), zf_directions)
}

/// Zero-forcing that falls back to [`zf_directions_regularized`] on subcarriers
/// with a singular Gram matrix.
pub fn zf_precoder_or_regularized(h: &ChannelMatrix, p_max: f64) -> BeamformerSet {
    assemble(h, equal_power(h.n_ue(), p_max), |hk| {
        Ok(zf_directions(hk).unwrap_or_else(|_| zf_directions_regularized(hk)))
    })
    .expect("regularized zero-forcing always yields unit-norm columns")
}

/// Per-subcarrier MMSE over a whole channel, equal power.
pub fn mmse_precoder(h: &ChannelMatrix, sigma2: &[f64], p_max: f64) -> Result<BeamformerSet, BaselineError> {
    assemble(h, equal_power(h.n_ue(), p_max), |hk| mmse_directions(hk, sigma2, p_max))
}
