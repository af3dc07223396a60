//! Central finite-difference gradient checking.

use super::{NnError, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Relative step; the actual step for entry `x` is `rel_step · max(1, |x|)`.
    pub rel_step: f64,
    /// Lower bound on the denominator of the relative error, so entries whose
    /// true gradient is zero are compared in absolute terms.
    pub denom_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            rel_step: 1e-6,
            denom_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(input, flat index)` of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Error metric used by the checker.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let d = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / d
}

/// Compares backward gradients of `f` against central differences for every
/// entry of every input.
///
/// `f` records a graph on the given tape from leaves built out of `inputs`
/// and returns a scalar node.
pub fn check_gradients<F>(inputs: &[Tensor], opts: GradCheckOptions, f: F) -> Result<GradCheckReport, NnError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NnError>,
{
    let eval = |ins: &[Tensor]| -> Result<f64, NnError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.leaf(t)).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out)[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(&t.clone().with_requires_grad(true)))
        .collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ti, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*v, inputs[ti].numel());
        for j in 0..inputs[ti].numel() {
            let x0 = inputs[ti].data()[j];
            let h = opts.rel_step * x0.abs().max(1.0);
            work[ti].data_mut()[j] = x0 + h;
            let fp = eval(&work)?;
            work[ti].data_mut()[j] = x0 - h;
            let fm = eval(&work)?;
            work[ti].data_mut()[j] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            let e = rel_err(analytic[j], numeric, opts.denom_floor);
            report.checked += 1;
            if e > report.max_rel_err || !e.is_finite() {
                report.max_rel_err = if e.is_finite() { e } else { f64::INFINITY };
                report.worst = (ti, j);
                report.analytic = analytic[j];
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// `Σ r ⊙ y` for a fixed projection `r`, turning any tensor output into a
/// scalar whose gradient exercises every output entry.
pub fn projection_loss(tape: &mut Tape, y: Var, r: &[f64]) -> Result<Var, NnError> {
    let shape = tape.shape(y).to_vec();
    let c = tape.constant(shape, r.to_vec())?;
    let p = tape.mul(y, c)?;
    Ok(tape.sum(p))
}
