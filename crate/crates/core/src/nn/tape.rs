//! Reverse-mode tape over dense tensors.
//!
//! Every operation appends a node holding its forward value and whatever it
//! needs for the backward pass. [`Tape::backward`] walks the nodes in reverse
//! order, accumulating gradients by summation over fan-out. A tape supports a
//! single backward pass; call [`Tape::reset`] to reuse it.
//!
//! The heavier kernels (conv1d, linear) split work across rayon threads by
//! output element, each element reduced in a fixed sequential order, so results
//! are bit-identical for any thread count.

use rayon::prelude::*;

use super::{NnError, Tensor};
use crate::linalg::C64;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Constants used by the GELU kernel. Exposed so the verification suite can
/// inject a deliberately wrong derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeluConstants {
    pub inv_sqrt_2: f64,
    pub inv_sqrt_2pi: f64,
}

impl Default for GeluConstants {
    fn default() -> Self {
        Self {
            inv_sqrt_2: std::f64::consts::FRAC_1_SQRT_2,
            inv_sqrt_2pi: 0.398_942_280_401_432_7,
        }
    }
}

/// Batch statistics produced by a train-mode batch norm, for updating the
/// running estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased per-channel variance.
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct ConvDims {
    batch: usize,
    c_in: usize,
    len: usize,
    c_out: usize,
    ksz: usize,
    stride: usize,
    pad: usize,
    len_out: usize,
}

#[derive(Debug, Clone, Copy)]
struct GainDims {
    batch: usize,
    k_sc: usize,
    m_tx: usize,
    n_ue: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Log2OnePlus(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    RepeatRows {
        x: Var,
        times: usize,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        d: ConvDims,
    },
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu {
        x: Var,
        c: GeluConstants,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
        rows: usize,
        f_in: usize,
        f_out: usize,
    },
    Softmax {
        x: Var,
        cols: usize,
    },
    NormalizeGroups {
        x: Var,
        group: usize,
        norms: Vec<f64>,
    },
    ChannelGains {
        w: Var,
        h: Vec<C64>,
        z: Vec<C64>,
        d: GainDims,
    },
    Sinr {
        gains: Var,
        p: Var,
        sigma2: Vec<f64>,
        k_sc: usize,
        n_ue: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    shape: Vec<usize>,
    requires_grad: bool,
    op: Op,
}

/// Floor on group norms in [`Tape::normalize_groups`].
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients of a scalar with respect to every node that requires them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros of length `len` if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len])
    }
}

fn shape_err(op: &str, detail: String) -> NnError {
    NnError::Shape(format!("{op}: {detail}"))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Clears all nodes so the tape can record a new forward pass.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    fn push(&mut self, value: Vec<f64>, shape: Vec<usize>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        self.nodes.push(Node {
            value,
            shape,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shapes are consistent")
    }

    /// Records a tensor as a leaf. Gradients are tracked iff the tensor requires them.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.data().to_vec(), t.shape().to_vec(), t.requires_grad(), Op::Leaf)
    }

    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.data().to_vec(), t.shape().to_vec(), true, Op::Leaf)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var, NnError> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t.data().to_vec(), t.shape().to_vec(), false, Op::Leaf))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<(), NnError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let s = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, s, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        let s = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, s, rg, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let s = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, s, rg, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).iter().map(|x| x * c).collect();
        let s = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        self.push(v, s, rg, Op::Scale(a, c))
    }

    /// `log₂(1 + x)`, elementwise.
    pub fn log2_1p(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| x.ln_1p() / std::f64::consts::LN_2).collect();
        let s = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        self.push(v, s, rg, Op::Log2OnePlus(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().sum();
        let rg = self.rg(&[a]);
        self.push(vec![v], vec![], rg, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = x.iter().sum::<f64>() / x.len() as f64;
        let rg = self.rg(&[a]);
        self.push(vec![v], vec![], rg, Op::Mean(a))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, NnError> {
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(shape_err("reshape", format!("{:?} to {shape:?}", self.shape(a))));
        }
        let v = self.value(a).to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(v, shape, rg, Op::Reshape(a)))
    }

    /// `(B', C, L)` → `(B, group·C·L)` with `B' = B · group`.
    pub fn flatten(&mut self, x: Var, group: usize) -> Result<Var, NnError> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(shape_err("flatten", format!("expected (B', C, L), got {s:?}")));
        }
        if group == 0 || s[0] % group != 0 {
            return Err(shape_err("flatten", format!("batch {} not divisible by group {group}", s[0])));
        }
        self.reshape(x, vec![s[0] / group, group * s[1] * s[2]])
    }

    /// Repeats each row of a `(B, F)` tensor `times` times: `(B, times·F)`.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Result<Var, NnError> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(shape_err("repeat_rows", format!("expected (B, F), got {s:?}")));
        }
        let f = s[1];
        let src = self.value(x);
        let mut v = Vec::with_capacity(src.len() * times);
        for row in src.chunks_exact(f) {
            for _ in 0..times {
                v.extend_from_slice(row);
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(v, vec![s[0], f * times], rg, Op::RepeatRows { x, times }))
    }

    /// 1-D cross-correlation. `x: (B', C_in, L)`, `w: (C_out, C_in, ksz)`, `b: (C_out)`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var, NnError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 3 {
            return Err(shape_err("conv1d", format!("x {xs:?}, w {ws:?}")));
        }
        let (batch, c_in, len) = (xs[0], xs[1], xs[2]);
        let (c_out, wc_in, ksz) = (ws[0], ws[1], ws[2]);
        if wc_in != c_in {
            return Err(shape_err("conv1d", format!("x has {c_in} channels, w expects {wc_in}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(shape_err("conv1d", format!("bias {:?}, expected [{c_out}]", self.shape(b))));
            }
        }
        if stride == 0 || len + 2 * pad < ksz {
            return Err(shape_err("conv1d", format!("len {len}, pad {pad}, ksz {ksz}, stride {stride}")));
        }
        let len_out = (len + 2 * pad - ksz) / stride + 1;
        let d = ConvDims {
            batch,
            c_in,
            len,
            c_out,
            ksz,
            stride,
            pad,
            len_out,
        };
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = b.map(|b| self.value(b));
        let mut out = vec![0.0; batch * c_out * len_out];
        out.par_chunks_mut(c_out * len_out).enumerate().for_each(|(bi, ob)| {
            let xb = &xv[bi * c_in * len..(bi + 1) * c_in * len];
            for co in 0..c_out {
                let bias = bv.map_or(0.0, |b| b[co]);
                for l in 0..len_out {
                    let mut s = bias;
                    for ci in 0..c_in {
                        let wr = &wv[(co * c_in + ci) * ksz..(co * c_in + ci + 1) * ksz];
                        let xr = &xb[ci * len..(ci + 1) * len];
                        for (t, wt) in wr.iter().enumerate() {
                            let j = (l * stride + t) as isize - pad as isize;
                            if j >= 0 && (j as usize) < len {
                                s += wt * xr[j as usize];
                            }
                        }
                    }
                    ob[co * len_out + l] = s;
                }
            }
        });
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.rg(&inputs);
        Ok(self.push(out, vec![batch, c_out, len_out], rg, Op::Conv1d { x, w, b, d }))
    }

    fn bn_check(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize), NnError> {
        let s = self.shape(x);
        if s.len() != 3 {
            return Err(shape_err("batchnorm1d", format!("expected (B', C, L), got {s:?}")));
        }
        let c = s[1];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err(
                "batchnorm1d",
                format!("gamma {:?} / beta {:?} for {c} channels", self.shape(gamma), self.shape(beta)),
            ));
        }
        Ok((s[0], c, s[2]))
    }

    /// Batch normalization over `(B', L)` per channel using batch statistics.
    pub fn batchnorm1d_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats), NnError> {
        let (bsz, c, l) = self.bn_check(x, gamma, beta)?;
        let m = bsz * l;
        if m <= 1 {
            return Err(shape_err("batchnorm1d", "train mode needs more than one value per channel".into()));
        }
        let xv = self.value(x);
        let g = self.value(gamma);
        let bt = self.value(beta);
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for b in 0..bsz {
            for ch in 0..c {
                let row = &xv[(b * c + ch) * l..(b * c + ch + 1) * l];
                mean[ch] += row.iter().sum::<f64>();
            }
        }
        for mu in &mut mean {
            *mu /= m as f64;
        }
        for b in 0..bsz {
            for ch in 0..c {
                let row = &xv[(b * c + ch) * l..(b * c + ch + 1) * l];
                var[ch] += row.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        let biased: Vec<f64> = var.iter().map(|v| v / m as f64).collect();
        let inv_std: Vec<f64> = biased.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for b in 0..bsz {
            for ch in 0..c {
                let o = (b * c + ch) * l;
                for i in o..o + l {
                    xhat[i] = (xv[i] - mean[ch]) * inv_std[ch];
                    out[i] = g[ch] * xhat[i] + bt[ch];
                }
            }
        }
        let stats = BatchStats {
            mean,
            var: var.iter().map(|v| v / (m - 1) as f64).collect(),
        };
        let rg = self.rg(&[x, gamma, beta]);
        let y = self.push(
            out,
            vec![bsz, c, l],
            rg,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        );
        Ok((y, stats))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batchnorm1d_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var, NnError> {
        let (bsz, c, l) = self.bn_check(x, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(shape_err("batchnorm1d", "running statistics length".into()));
        }
        let xv = self.value(x);
        let g = self.value(gamma);
        let bt = self.value(beta);
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for b in 0..bsz {
            for ch in 0..c {
                let o = (b * c + ch) * l;
                for i in o..o + l {
                    xhat[i] = (xv[i] - running_mean[ch]) * inv_std[ch];
                    out[i] = g[ch] * xhat[i] + bt[ch];
                }
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            out,
            vec![bsz, c, l],
            rg,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// Exact GELU, `x Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.gelu_with_constants(x, GeluConstants::default())
    }

    #[doc(hidden)]
    pub fn gelu_with_constants(&mut self, x: Var, c: GeluConstants) -> Var {
        let v = self
            .value(x)
            .iter()
            .map(|&t| t * 0.5 * (1.0 + libm::erf(t * c.inv_sqrt_2)))
            .collect();
        let s = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        self.push(v, s, rg, Op::Gelu { x, c })
    }

    /// `x wᵀ + b` with `x: (B, F_in)`, `w: (F_out, F_in)`, `b: (F_out)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NnError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || ws[1] != xs[1] || self.shape(b) != [ws[0]] {
            return Err(shape_err(
                "linear",
                format!("x {xs:?}, w {ws:?}, b {:?}", self.shape(b)),
            ));
        }
        let (rows, f_in, f_out) = (xs[0], xs[1], ws[0]);
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(b);
        let mut out = vec![0.0; rows * f_out];
        out.par_chunks_mut(f_out).enumerate().for_each(|(r, orow)| {
            let xr = &xv[r * f_in..(r + 1) * f_in];
            for (o, y) in orow.iter_mut().enumerate() {
                let wr = &wv[o * f_in..(o + 1) * f_in];
                *y = bv[o] + dot(xr, wr);
            }
        });
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(
            out,
            vec![rows, f_out],
            rg,
            Op::Linear {
                x,
                w,
                b,
                rows,
                f_in,
                f_out,
            },
        ))
    }

    /// Row-wise softmax over the last dimension of a `(B, N)` tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var, NnError> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[1] == 0 {
            return Err(shape_err("softmax", format!("expected (B, N), got {s:?}")));
        }
        let cols = s[1];
        let mut v = self.value(x).to_vec();
        for row in v.chunks_exact_mut(cols) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for e in row.iter_mut() {
                *e = (*e - mx).exp();
                z += *e;
            }
            for e in row.iter_mut() {
                *e /= z;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(v, s, rg, Op::Softmax { x, cols }))
    }

    /// Divides each contiguous chunk of `group` values by its Euclidean norm
    /// (floored at [`NORM_FLOOR`]).
    pub fn normalize_groups(&mut self, x: Var, group: usize) -> Result<Var, NnError> {
        let xv = self.value(x);
        if group == 0 || xv.len() % group != 0 {
            return Err(shape_err("normalize_groups", format!("{} values, group {group}", xv.len())));
        }
        let mut norms = Vec::with_capacity(xv.len() / group);
        let mut v = Vec::with_capacity(xv.len());
        for chunk in xv.chunks_exact(group) {
            let n = chunk.iter().map(|t| t * t).sum::<f64>().sqrt().max(NORM_FLOOR);
            norms.push(n);
            v.extend(chunk.iter().map(|t| t / n));
        }
        let s = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(v, s, rg, Op::NormalizeGroups { x, group, norms }))
    }

    /// Squared effective gains `|h_nᵀ w_i|²`.
    ///
    /// `w` is `(B, K, N, M, 2)` (beamformer for UE i at subcarrier k, real and
    /// imaginary parts interleaved); `h` is the constant channel, `(B, K, M, N)`
    /// complex. Output is `(B, K, N, N)` indexed `[b, k, n (receiver), i (beam)]`.
    pub fn channel_gains(&mut self, w: Var, h: &[C64], batch: usize, k_sc: usize, m_tx: usize, n_ue: usize) -> Result<Var, NnError> {
        let expect = [batch, k_sc, n_ue, m_tx, 2];
        if self.shape(w) != expect {
            return Err(shape_err("channel_gains", format!("w {:?}, expected {expect:?}", self.shape(w))));
        }
        if h.len() != batch * k_sc * m_tx * n_ue {
            return Err(shape_err("channel_gains", format!("channel has {} entries", h.len())));
        }
        let wv = self.value(w);
        let mut z = vec![C64::new(0.0, 0.0); batch * k_sc * n_ue * n_ue];
        for bk in 0..batch * k_sc {
            let hb = &h[bk * m_tx * n_ue..(bk + 1) * m_tx * n_ue];
            let wb = &wv[bk * n_ue * m_tx * 2..(bk + 1) * n_ue * m_tx * 2];
            for n in 0..n_ue {
                for i in 0..n_ue {
                    let mut acc = C64::new(0.0, 0.0);
                    for m in 0..m_tx {
                        let wi = C64::new(wb[(i * m_tx + m) * 2], wb[(i * m_tx + m) * 2 + 1]);
                        acc += hb[m * n_ue + n] * wi;
                    }
                    z[(bk * n_ue + n) * n_ue + i] = acc;
                }
            }
        }
        let v = z.iter().map(|c| c.norm_sqr()).collect();
        let rg = self.rg(&[w]);
        let d = GainDims {
            batch,
            k_sc,
            m_tx,
            n_ue,
        };
        Ok(self.push(
            v,
            vec![batch, k_sc, n_ue, n_ue],
            rg,
            Op::ChannelGains {
                w,
                h: h.to_vec(),
                z,
                d,
            },
        ))
    }

    /// `γ[b,k,n] = p[b,n] g[b,k,n,n] / (Σ_{i≠n} p[b,i] g[b,k,n,i] + σ²[b,n])`.
    pub fn sinr(&mut self, gains: Var, p: Var, sigma2: &[f64]) -> Result<Var, NnError> {
        let gs = self.shape(gains).to_vec();
        if gs.len() != 4 || gs[2] != gs[3] {
            return Err(shape_err("sinr", format!("gains {gs:?}")));
        }
        let (batch, k_sc, n_ue) = (gs[0], gs[1], gs[2]);
        if self.shape(p) != [batch, n_ue] || sigma2.len() != batch * n_ue {
            return Err(shape_err(
                "sinr",
                format!("p {:?}, {} noise values for gains {gs:?}", self.shape(p), sigma2.len()),
            ));
        }
        let g = self.value(gains);
        let pv = self.value(p);
        let mut out = vec![0.0; batch * k_sc * n_ue];
        for b in 0..batch {
            let pb = &pv[b * n_ue..(b + 1) * n_ue];
            for k in 0..k_sc {
                for n in 0..n_ue {
                    let row = &g[((b * k_sc + k) * n_ue + n) * n_ue..((b * k_sc + k) * n_ue + n + 1) * n_ue];
                    let mut den = sigma2[b * n_ue + n];
                    for i in (0..n_ue).filter(|&i| i != n) {
                        den += pb[i] * row[i];
                    }
                    out[(b * k_sc + k) * n_ue + n] = pb[n] * row[n] / den;
                }
            }
        }
        let rg = self.rg(&[gains, p]);
        Ok(self.push(
            out,
            vec![batch, k_sc, n_ue],
            rg,
            Op::Sinr {
                gains,
                p,
                sigma2: sigma2.to_vec(),
                k_sc,
                n_ue,
            },
        ))
    }

    /// Backpropagates from a scalar node.
    pub fn backward(&mut self, out: Var) -> Result<Gradients, NnError> {
        if self.nodes.is_empty() || out.0 >= self.nodes.len() {
            return Err(NnError::BackwardBeforeForward);
        }
        if self.consumed {
            return Err(NnError::TapeConsumed);
        }
        if self.nodes[out.0].value.len() != 1 {
            return Err(NnError::NotScalar(self.nodes[out.0].shape.clone()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(vec![1.0]);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.backprop_node(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        // only keep gradients for nodes that track them
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, || g.to_vec());
                self.acc(grads, *b, || g.to_vec());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, || g.to_vec());
                self.acc(grads, *b, || g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, || g.iter().zip(bv).map(|(g, y)| g * y).collect());
                self.acc(grads, *b, || g.iter().zip(av).map(|(g, x)| g * x).collect());
            }
            Op::Scale(a, c) => self.acc(grads, *a, || g.iter().map(|v| v * c).collect()),
            Op::Log2OnePlus(a) => {
                let av = self.value(*a);
                self.acc(grads, *a, || {
                    g.iter()
                        .zip(av)
                        .map(|(g, x)| g / ((1.0 + x) * std::f64::consts::LN_2))
                        .collect()
                })
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.acc(grads, *a, || vec![g[0]; n])
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                self.acc(grads, *a, || vec![g[0] / n as f64; n])
            }
            Op::Reshape(a) => self.acc(grads, *a, || g.to_vec()),
            Op::RepeatRows { x, times } => {
                let xs = self.shape(*x);
                let (rows, f) = (xs[0], xs[1]);
                self.acc(grads, *x, || {
                    let mut out = vec![0.0; rows * f];
                    for r in 0..rows {
                        for t in 0..*times {
                            let src = &g[(r * times + t) * f..(r * times + t + 1) * f];
                            for (o, s) in out[r * f..(r + 1) * f].iter_mut().zip(src) {
                                *o += s;
                            }
                        }
                    }
                    out
                })
            }
            Op::Conv1d { x, w, b, d } => self.conv1d_backward(*x, *w, *b, *d, g, grads),
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (bsz, c, l) = (node.shape[0], node.shape[1], node.shape[2]);
                let gm = self.value(*gamma);
                let m = (bsz * l) as f64;
                let mut sum_dy = vec![0.0; c];
                let mut sum_dy_xhat = vec![0.0; c];
                for b in 0..bsz {
                    for ch in 0..c {
                        let o = (b * c + ch) * l;
                        for j in o..o + l {
                            sum_dy[ch] += g[j];
                            sum_dy_xhat[ch] += g[j] * xhat[j];
                        }
                    }
                }
                self.acc(grads, *x, || {
                    let mut dx = vec![0.0; g.len()];
                    for b in 0..bsz {
                        for ch in 0..c {
                            let o = (b * c + ch) * l;
                            let k = gm[ch] * inv_std[ch] / m;
                            for j in o..o + l {
                                dx[j] = k * (m * g[j] - sum_dy[ch] - xhat[j] * sum_dy_xhat[ch]);
                            }
                        }
                    }
                    dx
                });
                self.acc(grads, *gamma, || sum_dy_xhat.clone());
                self.acc(grads, *beta, || sum_dy.clone());
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (bsz, c, l) = (node.shape[0], node.shape[1], node.shape[2]);
                let gm = self.value(*gamma);
                let mut sum_dy = vec![0.0; c];
                let mut sum_dy_xhat = vec![0.0; c];
                let mut dx = vec![0.0; g.len()];
                for b in 0..bsz {
                    for ch in 0..c {
                        let o = (b * c + ch) * l;
                        for j in o..o + l {
                            sum_dy[ch] += g[j];
                            sum_dy_xhat[ch] += g[j] * xhat[j];
                            dx[j] = g[j] * gm[ch] * inv_std[ch];
                        }
                    }
                }
                self.acc(grads, *x, || dx);
                self.acc(grads, *gamma, || sum_dy_xhat);
                self.acc(grads, *beta, || sum_dy);
            }
            Op::Gelu { x, c } => {
                let xv = self.value(*x);
                self.acc(grads, *x, || {
                    g.iter()
                        .zip(xv)
                        .map(|(g, &t)| {
                            let cdf = 0.5 * (1.0 + libm::erf(t * c.inv_sqrt_2));
                            let pdf = c.inv_sqrt_2pi * (-0.5 * t * t).exp();
                            g * (cdf + t * pdf)
                        })
                        .collect()
                })
            }
            Op::Linear {
                x,
                w,
                b,
                rows,
                f_in,
                f_out,
            } => {
                let (rows, f_in, f_out) = (*rows, *f_in, *f_out);
                let xv = self.value(*x);
                let wv = self.value(*w);
                self.acc(grads, *x, || {
                    let mut dx = vec![0.0; rows * f_in];
                    dx.par_chunks_mut(f_in).enumerate().for_each(|(r, dxr)| {
                        for o in 0..f_out {
                            let go = g[r * f_out + o];
                            if go != 0.0 {
                                axpy(go, &wv[o * f_in..(o + 1) * f_in], dxr);
                            }
                        }
                    });
                    dx
                });
                self.acc(grads, *w, || {
                    let mut dw = vec![0.0; f_out * f_in];
                    dw.par_chunks_mut(f_in).enumerate().for_each(|(o, dwr)| {
                        for r in 0..rows {
                            let go = g[r * f_out + o];
                            if go != 0.0 {
                                axpy(go, &xv[r * f_in..(r + 1) * f_in], dwr);
                            }
                        }
                    });
                    dw
                });
                self.acc(grads, *b, || {
                    let mut db = vec![0.0; f_out];
                    for r in 0..rows {
                        for (d, gv) in db.iter_mut().zip(&g[r * f_out..(r + 1) * f_out]) {
                            *d += gv;
                        }
                    }
                    db
                });
            }
            Op::Softmax { x, cols } => {
                let y = &node.value;
                self.acc(grads, *x, || {
                    let mut dx = vec![0.0; y.len()];
                    for ((dxr, yr), gr) in dx.chunks_exact_mut(*cols).zip(y.chunks_exact(*cols)).zip(g.chunks_exact(*cols)) {
                        let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((d, yv), gv) in dxr.iter_mut().zip(yr).zip(gr) {
                            *d = yv * (gv - s);
                        }
                    }
                    dx
                })
            }
            Op::NormalizeGroups { x, group, norms } => {
                let y = &node.value;
                let xv = self.value(*x);
                self.acc(grads, *x, || {
                    let mut dx = vec![0.0; y.len()];
                    for (j, &n) in norms.iter().enumerate() {
                        let r = j * group..(j + 1) * group;
                        let raw = xv[r.clone()].iter().map(|t| t * t).sum::<f64>().sqrt();
                        if raw > NORM_FLOOR {
                            let s: f64 = y[r.clone()].iter().zip(&g[r.clone()]).map(|(a, b)| a * b).sum();
                            for idx in r {
                                dx[idx] = (g[idx] - y[idx] * s) / n;
                            }
                        } else {
                            for idx in r {
                                dx[idx] = g[idx] / n;
                            }
                        }
                    }
                    dx
                })
            }
            Op::ChannelGains { w, h, z, d } => {
                let GainDims {
                    batch,
                    k_sc,
                    m_tx,
                    n_ue,
                } = *d;
                self.acc(grads, *w, || {
                    let mut dw = vec![0.0; batch * k_sc * n_ue * m_tx * 2];
                    for bk in 0..batch * k_sc {
                        let hb = &h[bk * m_tx * n_ue..(bk + 1) * m_tx * n_ue];
                        for n in 0..n_ue {
                            for i in 0..n_ue {
                                let idx = (bk * n_ue + n) * n_ue + i;
                                let go = g[idx];
                                if go == 0.0 {
                                    continue;
                                }
                                let zz = z[idx];
                                for m in 0..m_tx {
                                    let hv = hb[m * n_ue + n];
                                    let base = ((bk * n_ue + i) * m_tx + m) * 2;
                                    dw[base] += go * 2.0 * (zz.re * hv.re + zz.im * hv.im);
                                    dw[base + 1] += go * 2.0 * (zz.im * hv.re - zz.re * hv.im);
                                }
                            }
                        }
                    }
                    dw
                })
            }
            Op::Sinr {
                gains,
                p,
                sigma2,
                k_sc,
                n_ue,
            } => {
                let (k_sc, n_ue) = (*k_sc, *n_ue);
                let gv = self.value(*gains);
                let pv = self.value(*p);
                let batch = pv.len() / n_ue;
                let mut dg = vec![0.0; gv.len()];
                let mut dp = vec![0.0; pv.len()];
                for b in 0..batch {
                    let pb = &pv[b * n_ue..(b + 1) * n_ue];
                    for k in 0..k_sc {
                        for n in 0..n_ue {
                            let go = g[(b * k_sc + k) * n_ue + n];
                            if go == 0.0 {
                                continue;
                            }
                            let ro = ((b * k_sc + k) * n_ue + n) * n_ue;
                            let row = &gv[ro..ro + n_ue];
                            let mut den = sigma2[b * n_ue + n];
                            for i in (0..n_ue).filter(|&i| i != n) {
                                den += pb[i] * row[i];
                            }
                            let sig = pb[n] * row[n];
                            dg[ro + n] += go * pb[n] / den;
                            dp[b * n_ue + n] += go * row[n] / den;
                            let q = go * sig / (den * den);
                            for i in (0..n_ue).filter(|&i| i != n) {
                                dg[ro + i] -= q * pb[i];
                                dp[b * n_ue + i] -= q * row[i];
                            }
                        }
                    }
                }
                self.acc(grads, *gains, || dg);
                self.acc(grads, *p, || dp);
            }
        }
    }

    fn conv1d_backward(&self, x: Var, w: Var, b: Option<Var>, d: ConvDims, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let ConvDims {
            batch,
            c_in,
            len,
            c_out,
            ksz,
            stride,
            pad,
            len_out,
        } = d;
        let xv = self.value(x);
        let wv = self.value(w);
        let tap = |l: usize, t: usize| -> Option<usize> {
            let j = (l * stride + t) as isize - pad as isize;
            (j >= 0 && (j as usize) < len).then_some(j as usize)
        };
        self.acc(grads, x, || {
            let mut dx = vec![0.0; batch * c_in * len];
            dx.par_chunks_mut(c_in * len).enumerate().for_each(|(bi, dxb)| {
                let gb = &g[bi * c_out * len_out..(bi + 1) * c_out * len_out];
                for co in 0..c_out {
                    for l in 0..len_out {
                        let go = gb[co * len_out + l];
                        if go == 0.0 {
                            continue;
                        }
                        for ci in 0..c_in {
                            for t in 0..ksz {
                                if let Some(j) = tap(l, t) {
                                    dxb[ci * len + j] += go * wv[(co * c_in + ci) * ksz + t];
                                }
                            }
                        }
                    }
                }
            });
            dx
        });
        self.acc(grads, w, || {
            let mut dw = vec![0.0; c_out * c_in * ksz];
            dw.par_chunks_mut(c_in * ksz).enumerate().for_each(|(co, dwc)| {
                for bi in 0..batch {
                    for l in 0..len_out {
                        let go = g[(bi * c_out + co) * len_out + l];
                        if go == 0.0 {
                            continue;
                        }
                        for ci in 0..c_in {
                            for t in 0..ksz {
                                if let Some(j) = tap(l, t) {
                                    dwc[ci * ksz + t] += go * xv[(bi * c_in + ci) * len + j];
                                }
                            }
                        }
                    }
                }
            });
            dw
        });
        if let Some(b) = b {
            self.acc(grads, b, || {
                let mut db = vec![0.0; c_out];
                for bi in 0..batch {
                    for (co, dbc) in db.iter_mut().enumerate() {
                        *dbc += g[(bi * c_out + co) * len_out..(bi * c_out + co + 1) * len_out]
                            .iter()
                            .sum::<f64>();
                    }
                }
                db
            });
        }
    }

    /// Adds a contribution to `v`'s gradient; skipped when `v` does not track gradients.
    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, contrib: impl FnOnce() -> Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let c = contrib();
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.iter_mut().zip(c) {
                    *e += x;
                }
            }
            slot @ None => *slot = Some(c),
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
