//! Fast self-check suite behind `beamopt verify`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::baselines::{
    matched_filter_directions, mmse_directions, optimal_structure_bf, solve_virtual_uplink_powers, virtual_uplink_sinrs,
    zf_directions, FixedPointOptions, VirtualUplinkPowers,
};
use crate::channel::{generate_dataset, ChannelMatrix, ChannelParams, ProfileKind};
use crate::linalg::{CMatrix, C64};
use crate::metrics::{sum_rate, BeamformerSet};
use crate::models::{self, init_params, Batch, ModelConfig, Mode, ParamVars};
use crate::nn::gradcheck::{check_gradients, projection_loss, GradCheckOptions};
use crate::nn::{read_checkpoint, write_checkpoint, GeluConstants, NnError, Tape, Tensor};

/// Deliberate defects, used to confirm that the suite can fail.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VerifyFaults {
    pub corrupt_gelu: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn randc(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * std::f64::consts::FRAC_1_SQRT_2
}

fn rand_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> CMatrix {
    CMatrix::from_fn(m, n, |_, _| randc(rng))
}

fn randn(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect()).expect("shape")
}

type Check = fn(&mut ChaCha8Rng, VerifyFaults) -> Result<String, String>;

fn zf_nulling(rng: &mut ChaCha8Rng, _: VerifyFaults) -> Result<String, String> {
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let h = rand_matrix(rng, 4, 4);
        let w = zf_directions(&h).map_err(|e| e.to_string())?;
        let g = h.transpose().matmul(&w).map_err(|e| e.to_string())?;
        for j in 0..4 {
            for i in (0..4).filter(|&i| i != j) {
                worst = worst.max(g.get(j, i).norm());
            }
        }
    }
    if worst <= 1e-9 {
        Ok(format!("max leakage {worst:.2e}"))
    } else {
        Err(format!("leakage {worst:.2e} > 1e-9"))
    }
}

fn phase_aligned_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..a.cols() {
        let (ca, cb) = (a.column(j), b.column(j));
        let ip = cb.inner(&ca);
        let rot = if ip.norm() > 0.0 { ip / ip.norm() } else { C64::new(1.0, 0.0) };
        let d: f64 = (0..ca.len()).map(|r| (ca[r] - cb[r] * rot).norm_sqr()).sum::<f64>().sqrt();
        worst = worst.max(d);
    }
    worst
}

fn mmse_limit(rng: &mut ChaCha8Rng, _: VerifyFaults) -> Result<String, String> {
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let h = rand_matrix(rng, 4, 4);
        let zf = zf_directions(&h).map_err(|e| e.to_string())?;
        let mm = mmse_directions(&h, &[1e-12; 4], 4.0).map_err(|e| e.to_string())?;
        worst = worst.max(phase_aligned_distance(&mm, &zf));
    }
    if worst <= 1e-5 {
        Ok(format!("max distance {worst:.2e}"))
    } else {
        Err(format!("distance {worst:.2e} > 1e-5"))
    }
}

fn structure_single_user(rng: &mut ChaCha8Rng, _: VerifyFaults) -> Result<String, String> {
    let h = rand_matrix(rng, 4, 1);
    let mf = matched_filter_directions(&h);
    for lam in [0.0, 1.0, 10.0, 100.0] {
        let w = optimal_structure_bf(&h, &VirtualUplinkPowers::uniform(1, lam), &[1.0], &[1.0])
            .map_err(|e| e.to_string())?
            .directions;
        let cos = w.column(0).inner(&mf.column(0)).norm();
        if (cos - 1.0).abs() > 1e-12 {
            return Err(format!("λ={lam}: |cos| = {cos}"));
        }
    }
    Ok("collinear with matched filter".into())
}

fn fixed_point(rng: &mut ChaCha8Rng, _: VerifyFaults) -> Result<String, String> {
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let h = rand_matrix(rng, 2, 2);
        let lam = solve_virtual_uplink_powers(&h, &[1.0, 1.0], 1.0, FixedPointOptions::default())
            .map_err(|e| e.to_string())?;
        let s = virtual_uplink_sinrs(&h, &lam, 1.0).map_err(|e| e.to_string())?;
        worst = s.iter().fold(worst, |a, v| a.max((v - 1.0).abs()));
    }
    if worst <= 1e-8 {
        Ok(format!("max target error {worst:.2e}"))
    } else {
        Err(format!("target error {worst:.2e} > 1e-8"))
    }
}

fn no_interference_rate(_: &mut ChaCha8Rng, _: VerifyFaults) -> Result<String, String> {
    let hk = CMatrix::from_real_diag(&[2.0, 1.0]);
    let h = ChannelMatrix::flat(&hk, 3);
    let bf = BeamformerSet::from_slices(&vec![CMatrix::identity(2); 3], vec![1.0, 1.0]).map_err(|e| e.to_string())?;
    let r = sum_rate(&h, &bf, &[0.5, 0.5]).map_err(|e| e.to_string())?;
    let expect = 9f64.log2() + 3f64.log2();
    if (r - expect).abs() <= 1e-12 {
        Ok(format!("{r:.6} bps/Hz"))
    } else {
        Err(format!("{r} != {expect}"))
    }
}

fn layer_gradients(rng: &mut ChaCha8Rng, faults: VerifyFaults) -> Result<String, String> {
    let opts = GradCheckOptions::default();
    let gelu = if faults.corrupt_gelu {
        GeluConstants {
            inv_sqrt_2pi: 0.5,
            ..GeluConstants::default()
        }
    } else {
        GeluConstants::default()
    };
    let x3 = randn(rng, vec![2, 3, 6]);
    let w3 = randn(rng, vec![4, 3, 3]);
    let b4 = randn(rng, vec![4]);
    let g3 = randn(rng, vec![3]);
    let be3 = randn(rng, vec![3]);
    let x2 = randn(rng, vec![3, 5]);
    let wl = randn(rng, vec![4, 5]);
    let r_conv: Vec<f64> = (0..2 * 4 * 3).map(|_| rng.sample(StandardNormal)).collect();
    let r36: Vec<f64> = (0..36).map(|_| rng.sample(StandardNormal)).collect();
    let r15: Vec<f64> = (0..15).map(|_| rng.sample(StandardNormal)).collect();
    let r12: Vec<f64> = (0..12).map(|_| rng.sample(StandardNormal)).collect();

    let mut results = Vec::new();
    let run = |name: &str, r: Result<crate::nn::gradcheck::GradCheckReport, NnError>| -> Result<(String, f64), String> {
        let r = r.map_err(|e| format!("{name}: {e}"))?;
        Ok((name.to_string(), r.max_rel_err))
    };
    results.push(run(
        "conv1d",
        check_gradients(&[x3.clone(), w3, b4.clone()], opts, |t, v| {
            let y = t.conv1d(v[0], v[1], Some(v[2]), 2, 1)?;
            projection_loss(t, y, &r_conv)
        }),
    )?);
    results.push(run(
        "batchnorm",
        check_gradients(&[x3.clone(), g3, be3], opts, |t, v| {
            let (y, _) = t.batchnorm1d_train(v[0], v[1], v[2], 1e-5)?;
            projection_loss(t, y, &r36)
        }),
    )?);
    results.push(run(
        "gelu",
        check_gradients(&[x3], opts, |t, v| {
            let y = t.gelu_with_constants(v[0], gelu);
            projection_loss(t, y, &r36)
        }),
    )?);
    results.push(run(
        "linear",
        check_gradients(&[x2.clone(), wl, b4], opts, |t, v| {
            let y = t.linear(v[0], v[1], v[2])?;
            projection_loss(t, y, &r12)
        }),
    )?);
    results.push(run(
        "softmax",
        check_gradients(std::slice::from_ref(&x2), opts, |t, v| {
            let y = t.softmax(v[0])?;
            projection_loss(t, y, &r15)
        }),
    )?);
    results.push(run(
        "normalize",
        check_gradients(&[x2], opts, |t, v| {
            let y = t.normalize_groups(v[0], 5)?;
            projection_loss(t, y, &r15)
        }),
    )?);
    let failed: Vec<String> = results
        .iter()
        .filter(|(_, e)| !(*e <= 1e-5))
        .map(|(n, e)| format!("{n} rel err {e:.2e}"))
        .collect();
    if failed.is_empty() {
        let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
        Ok(format!("{} layers, max rel err {worst:.2e}", results.len()))
    } else {
        Err(failed.join("; "))
    }
}

fn small_model(joint: bool) -> ModelConfig {
    ModelConfig {
        fc_widths_bf: vec![16],
        fc_widths_pw: vec![8],
        ..ModelConfig::new(2, 2, 4, joint)
    }
}

fn small_batch(count: usize, seed: u64) -> Vec<ChannelMatrix> {
    let p = ChannelParams::new(ProfileKind::TdlC, 300.0, 2, 2, 4);
    generate_dataset(&p, count, seed).expect("valid params").samples
}

fn loss_graph_gradient(rng: &mut ChaCha8Rng, _: VerifyFaults) -> Result<String, String> {
    let cfg = small_model(true);
    let params = init_params(&cfg, rng).map_err(|e| e.to_string())?;
    let hs = small_batch(3, rng.random());
    let refs: Vec<&ChannelMatrix> = hs.iter().collect();
    let s2: Vec<Vec<f64>> = hs.iter().map(|h| h.noise_variances(5.0)).collect();
    let batch = Batch { channels: &refs, sigma2: &s2 };
    let input = models::build_input(&cfg, &batch).map_err(|e| e.to_string())?;
    let trainable: Vec<Tensor> = params.trainable().into_iter().cloned().collect();
    let wrap = |e: models::ModelError| NnError::Shape(e.to_string());
    let rep = check_gradients(&trainable, GradCheckOptions::default(), |t, v| {
        let vars = ParamVars::from_vars(&params, v).map_err(wrap)?;
        let x = t.leaf(&input);
        let out = models::forward(t, &cfg, &params, &vars, x, Mode::Train).map_err(wrap)?;
        models::loss(t, &cfg, &out, &batch, None).map_err(wrap)
    })
    .map_err(|e| e.to_string())?;
    if rep.max_rel_err <= 1e-4 {
        Ok(format!("{} entries, max rel err {:.2e}", rep.checked, rep.max_rel_err))
    } else {
        Err(format!("rel err {:.2e} at {:?}", rep.max_rel_err, rep.worst))
    }
}

fn output_constraints(rng: &mut ChaCha8Rng, _: VerifyFaults) -> Result<String, String> {
    let hs = small_batch(4, rng.random());
    let refs: Vec<&ChannelMatrix> = hs.iter().collect();
    let s2: Vec<Vec<f64>> = hs.iter().map(|h| h.noise_variances(rng.random_range(-15.0..50.0))).collect();
    let mut count = 0;
    for joint in [false, true] {
        let cfg = small_model(joint);
        for _ in 0..25 {
            let params = init_params(&cfg, rng).map_err(|e| e.to_string())?;
            // predict() already rejects non-unit beamformers
            let bfs = models::predict(&cfg, &params, &Batch { channels: &refs, sigma2: &s2 }).map_err(|e| e.to_string())?;
            for bf in bfs {
                let total: f64 = bf.powers().iter().sum();
                if (total - cfg.p_max).abs() > 1e-12 {
                    return Err(format!("Σp = {total}, expected {}", cfg.p_max));
                }
                count += 1;
            }
        }
    }
    Ok(format!("{count} random-parameter outputs feasible"))
}

fn checkpoint_round_trip(rng: &mut ChaCha8Rng, _: VerifyFaults) -> Result<String, String> {
    let cfg = small_model(true);
    let params = init_params(&cfg, rng).map_err(|e| e.to_string())?;
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &params.to_checkpoint(&cfg)).map_err(|e| e.to_string())?;
    let ck = read_checkpoint(buf.as_slice()).map_err(|e| e.to_string())?;
    let (_, back) = models::ModelParams::from_checkpoint(&ck, Some(&cfg)).map_err(|e| e.to_string())?;
    if back == params {
        Ok(format!("{} bytes", buf.len()))
    } else {
        Err("parameters changed in round trip".into())
    }
}

fn tape_contract(_: &mut ChaCha8Rng, _: VerifyFaults) -> Result<String, String> {
    let mut t = Tape::new();
    let x = t.param(&Tensor::new(vec![2], vec![1.0, 2.0]).expect("shape"));
    let sq = t.mul(x, x).map_err(|e| e.to_string())?;
    let s = t.sum(sq);
    let g = t.backward(s).map_err(|e| e.to_string())?;
    if g.get(x) != Some(&[2.0, 4.0][..]) {
        return Err(format!("d/dx Σx² = {:?}", g.get(x)));
    }
    if t.backward(s).is_ok() {
        return Err("second backward on a consumed tape succeeded".into());
    }
    Ok("single-use tape, exact gradient".into())
}

const CHECKS: [(&str, Check); 10] = [
    ("zf-nulling", zf_nulling),
    ("mmse-zf-limit", mmse_limit),
    ("structure-single-user", structure_single_user),
    ("fixed-point-targets", fixed_point),
    ("rate-no-interference", no_interference_rate),
    ("tape-contract", tape_contract),
    ("layer-gradients", layer_gradients),
    ("loss-graph-gradient", loss_graph_gradient),
    ("output-constraints", output_constraints),
    ("checkpoint-round-trip", checkpoint_round_trip),
];

pub fn run_verify(faults: VerifyFaults) -> Vec<CheckResult> {
    CHECKS
        .iter()
        .enumerate()
        .map(|(i, (name, f))| {
            let mut rng = ChaCha8Rng::seed_from_u64(0xbeef + i as u64);
            let start = Instant::now();
            let (passed, detail) = match f(&mut rng, faults) {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckResult {
                name,
                passed,
                detail,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

pub fn format_report(results: &[CheckResult]) -> String {
    let mut s = String::new();
    for r in results {
        s.push_str(&format!(
            "{:<24} {:<4} {:>7.2}s  {}\n",
            r.name,
            if r.passed { "ok" } else { "FAIL" },
            r.seconds,
            r.detail
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_build_passes() {
        let r = run_verify(VerifyFaults::default());
        assert!(r.iter().all(|c| c.passed), "{}", format_report(&r));
    }

    #[test]
    fn corrupted_gelu_is_caught() {
        let r = run_verify(VerifyFaults { corrupt_gelu: true });
        let failed: Vec<_> = r.iter().filter(|c| !c.passed).map(|c| c.name).collect();
        assert_eq!(failed, vec!["layer-gradients"]);
    }
}
