use beamopt_core::channel::ChannelMatrix;
use beamopt_core::linalg::C64;
use beamopt_core::metrics::{sinr_per_ue, sum_rate, weighted_sum_rate, BeamformerSet, RateWeights};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Instance {
    h: ChannelMatrix,
    bf: BeamformerSet,
    sigma2: Vec<f64>,
}

fn cn(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * std::f64::consts::FRAC_1_SQRT_2
}

fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(1..=8);
    let n = rng.random_range(1..=8);
    let k = rng.random_range(1..=16);
    let h = (0..k * m * n).map(|_| cn(&mut rng)).collect();
    let h = ChannelMatrix::new(m, n, k, h, vec![0.0; n]).unwrap();
    let mut w: Vec<C64> = (0..k * m * n).map(|_| cn(&mut rng)).collect();
    for kk in 0..k {
        for u in 0..n {
            let nrm = (0..m).map(|mm| w[(kk * m + mm) * n + u].norm_sqr()).sum::<f64>().sqrt();
            for mm in 0..m {
                w[(kk * m + mm) * n + u] /= nrm;
            }
        }
    }
    let p = (0..n).map(|_| rng.random_range(0.01..2.0)).collect();
    let bf = BeamformerSet::new(k, m, n, w, p).unwrap();
    let sigma2 = (0..n).map(|_| rng.random_range(0.01..3.0)).collect();
    Instance { h, bf, sigma2 }
}

/// Scalar transcription of the SINR and sum-rate formulas.
fn oracle(inst: &Instance) -> (Vec<f64>, f64) {
    let (k_sc, m_tx, n_ue) = (inst.h.k_sc(), inst.h.m_tx(), inst.h.n_ue());
    let p = inst.bf.powers();
    let gain = |k: usize, n: usize, i: usize| {
        let mut acc = C64::new(0.0, 0.0);
        for m in 0..m_tx {
            acc += inst.h.get(k, m, n) * inst.bf.w(k, m, i);
        }
        acc.norm_sqr()
    };
    let mut gamma = Vec::new();
    let mut rate = 0.0;
    for k in 0..k_sc {
        for n in 0..n_ue {
            let mut interference = 0.0;
            for i in 0..n_ue {
                if i != n {
                    interference += p[i] * gain(k, n, i);
                }
            }
            let g = p[n] * gain(k, n, n) / (interference + inst.sigma2[n]);
            gamma.push(g);
            rate += (1.0 + g).log2();
        }
    }
    (gamma, rate / k_sc as f64)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn vectorized_metrics_match_scalar_oracle(seed in any::<u64>()) {
        let inst = instance(seed);
        let (gamma, rate) = oracle(&inst);
        let grid = sinr_per_ue(&inst.h, &inst.bf, &inst.sigma2).unwrap();
        for (a, b) in grid.values.iter().zip(&gamma) {
            prop_assert!(rel(*a, *b) <= 1e-12);
        }
        prop_assert!(rel(sum_rate(&inst.h, &inst.bf, &inst.sigma2).unwrap(), rate) <= 1e-12);
    }

    #[test]
    fn doubling_powers_never_lowers_numerators(seed in any::<u64>()) {
        let inst = instance(seed);
        let doubled = inst.bf.with_powers(inst.bf.powers().iter().map(|p| 2.0 * p).collect()).unwrap();
        let n_ue = inst.h.n_ue();
        let terms = beamopt_core::metrics::received_signal_terms(&inst.h, &inst.bf, &inst.sigma2).unwrap();
        let terms2 = beamopt_core::metrics::received_signal_terms(&inst.h, &doubled, &inst.sigma2).unwrap();
        for (a, b) in terms.iter().zip(&terms2) {
            prop_assert!(b.desired >= a.desired);
        }
        // single UE: no interference, so SINR strictly grows wherever the gain is non-zero
        if n_ue == 1 {
            let g1 = sinr_per_ue(&inst.h, &inst.bf, &inst.sigma2).unwrap();
            let g2 = sinr_per_ue(&inst.h, &doubled, &inst.sigma2).unwrap();
            for (a, b) in g1.values.iter().zip(&g2.values) {
                prop_assert!(*a == 0.0 || b > a);
            }
        }
    }

    #[test]
    fn permuting_ues_permutes_sinr_columns(seed in any::<u64>(), shift in 1usize..8) {
        let inst = instance(seed);
        let (k_sc, m_tx, n_ue) = (inst.h.k_sc(), inst.h.m_tx(), inst.h.n_ue());
        let perm: Vec<usize> = (0..n_ue).map(|i| (i + shift) % n_ue).collect();
        let mut h = Vec::new();
        let mut w = Vec::new();
        for k in 0..k_sc {
            for m in 0..m_tx {
                for &src in &perm {
                    h.push(inst.h.get(k, m, src));
                    w.push(inst.bf.w(k, m, src));
                }
            }
        }
        let hp = ChannelMatrix::new(m_tx, n_ue, k_sc, h, vec![0.0; n_ue]).unwrap();
        let p = perm.iter().map(|&s| inst.bf.powers()[s]).collect();
        let bfp = BeamformerSet::new(k_sc, m_tx, n_ue, w, p).unwrap();
        let s2: Vec<f64> = perm.iter().map(|&s| inst.sigma2[s]).collect();
        let g = sinr_per_ue(&inst.h, &inst.bf, &inst.sigma2).unwrap();
        let gp = sinr_per_ue(&hp, &bfp, &s2).unwrap();
        for k in 0..k_sc {
            for (j, &src) in perm.iter().enumerate() {
                prop_assert!(rel(gp.get(k, j), g.get(k, src)) <= 1e-12);
            }
        }
    }
}

#[test]
fn rate_weights_scale_the_objective() {
    let inst = instance(11);
    let g = sinr_per_ue(&inst.h, &inst.bf, &inst.sigma2).unwrap();
    let n = inst.h.n_ue();
    let one = weighted_sum_rate(&g, &RateWeights::uniform(n));
    let two = weighted_sum_rate(&g, &RateWeights::new(vec![2.0; n]).unwrap());
    assert!((two - 2.0 * one).abs() <= 1e-12 * one.abs().max(1.0));
    assert!(RateWeights::new(vec![-1.0; n]).is_err());
}
