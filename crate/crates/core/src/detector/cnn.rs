//! The HE-compatible 1-D CNN.
//!
//! An input window is a `rows x dim` matrix. Rows act as input channels and
//! feature indices as positions, so every convolution slides along the
//! feature axis with zero "same" padding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{DetectorError, Result};

pub const POOL: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    #[serde(default = "d_k1")]
    pub conv1_kernels: usize,
    #[serde(default = "d_w")]
    pub conv1_width: usize,
    #[serde(default = "d_k2")]
    pub conv2_kernels: usize,
    #[serde(default = "d_w")]
    pub conv2_width: usize,
    #[serde(default = "d_hidden")]
    pub hidden: usize,
}

fn d_k1() -> usize {
    4
}
fn d_k2() -> usize {
    8
}
fn d_w() -> usize {
    3
}
fn d_hidden() -> usize {
    16
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture { conv1_kernels: d_k1(), conv1_width: d_w(), conv2_kernels: d_k2(), conv2_width: d_w(), hidden: d_hidden() }
    }
}

impl Architecture {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |m: String| Err(DetectorError::Architecture(m));
        if self.conv1_width % 2 == 0 || self.conv2_width % 2 == 0 {
            return bad("kernel widths must be odd".into());
        }
        if [self.conv1_kernels, self.conv2_kernels, self.hidden].contains(&0) {
            return bad("layer sizes must be positive".into());
        }
        if dim < POOL * POOL {
            return bad(format!("feature dimension {dim} is too small for two pooling layers"));
        }
        Ok(())
    }
}

/// Weights of the network. Tensors are flat and row-major:
/// `w1[k][r][j]`, `w2[m][k][j]`, `wf[i][m * len2 + h]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnModel {
    pub arch: Architecture,
    pub rows: usize,
    pub dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub wf: Vec<f64>,
    pub bf: Vec<f64>,
    pub wo: Vec<f64>,
    pub bo: f64,
}

/// Parameter-shaped gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub wf: Vec<f64>,
    pub bf: Vec<f64>,
    pub wo: Vec<f64>,
    pub bo: f64,
}

impl Gradients {
    pub fn tensors(&self) -> [&[f64]; 7] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.wf, &self.bf, &self.wo]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f64>; 7] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2, &mut self.wf, &mut self.bf, &mut self.wo]
    }

    pub fn scale(&mut self, f: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= f);
        }
        self.bo *= f;
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.bo += other.bo;
    }

    pub fn norm(&self) -> f64 {
        let sq: f64 = self.tensors().iter().flat_map(|t| t.iter()).map(|x| x * x).sum();
        (sq + self.bo * self.bo).sqrt()
    }
}

/// Intermediate activations kept for the backward pass.
pub struct Trace {
    pub a1: Vec<f64>,
    pub p1: Vec<f64>,
    pub a2: Vec<f64>,
    pub p2: Vec<f64>,
    pub hid: Vec<f64>,
    pub logit: f64,
}

/// `out[o][p] = b[o] + sum_{c,j} w[o][c][j] * x[c][p + j - half]`, zero outside `0..len`.
fn conv_forward(x: &[f64], chans: usize, len: usize, w: &[f64], b: &[f64], width: usize) -> Vec<f64> {
    let outs = b.len();
    let half = (width / 2) as isize;
    let mut out = vec![0.0; outs * len];
    for o in 0..outs {
        let row = &mut out[o * len..(o + 1) * len];
        row.iter_mut().for_each(|v| *v = b[o]);
        for c in 0..chans {
            let xc = &x[c * len..(c + 1) * len];
            for j in 0..width {
                let wt = w[(o * chans + c) * width + j];
                let shift = j as isize - half;
                for (p, v) in row.iter_mut().enumerate() {
                    let q = p as isize + shift;
                    if q >= 0 && (q as usize) < len {
                        *v += wt * xc[q as usize];
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight, bias and input gradients of [`conv_forward`].
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    chans: usize,
    len: usize,
    w: &[f64],
    width: usize,
    dout: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    let outs = db.len();
    let half = (width / 2) as isize;
    let mut dx = dx;
    for o in 0..outs {
        let d = &dout[o * len..(o + 1) * len];
        db[o] += d.iter().sum::<f64>();
        for c in 0..chans {
            let xc = &x[c * len..(c + 1) * len];
            for j in 0..width {
                let idx = (o * chans + c) * width + j;
                let shift = j as isize - half;
                let mut acc = 0.0;
                for (p, &g) in d.iter().enumerate() {
                    let q = p as isize + shift;
                    if q >= 0 && (q as usize) < len {
                        acc += g * xc[q as usize];
                        if let Some(dx) = dx.as_deref_mut() {
                            dx[c * len + q as usize] += g * w[idx];
                        }
                    }
                }
                dw[idx] += acc;
            }
        }
    }
}

/// Average pool of width 2; a trailing odd position is dropped.
fn pool_forward(x: &[f64], chans: usize, len: usize) -> Vec<f64> {
    let out_len = len / POOL;
    let mut out = Vec::with_capacity(chans * out_len);
    for c in 0..chans {
        for g in 0..out_len {
            out.push((x[c * len + 2 * g] + x[c * len + 2 * g + 1]) / 2.0);
        }
    }
    out
}

fn pool_backward(dout: &[f64], chans: usize, len: usize) -> Vec<f64> {
    let out_len = len / POOL;
    let mut dx = vec![0.0; chans * len];
    for c in 0..chans {
        for g in 0..out_len {
            let d = dout[c * out_len + g] / 2.0;
            dx[c * len + 2 * g] = d;
            dx[c * len + 2 * g + 1] = d;
        }
    }
    dx
}

impl CnnModel {
    pub fn len1(&self) -> usize {
        self.dim / POOL
    }

    pub fn len2(&self) -> usize {
        self.len1() / POOL
    }

    pub fn input_len(&self) -> usize {
        self.rows * self.dim
    }

    /// All-zero weights.
    pub fn zeros(arch: Architecture, rows: usize, dim: usize) -> Result<CnnModel> {
        arch.validate(dim)?;
        if rows == 0 {
            return Err(DetectorError::Architecture("window has no rows".into()));
        }
        let len2 = dim / POOL / POOL;
        Ok(CnnModel {
            arch,
            rows,
            dim,
            w1: vec![0.0; arch.conv1_kernels * rows * arch.conv1_width],
            b1: vec![0.0; arch.conv1_kernels],
            w2: vec![0.0; arch.conv2_kernels * arch.conv1_kernels * arch.conv2_width],
            b2: vec![0.0; arch.conv2_kernels],
            wf: vec![0.0; arch.hidden * arch.conv2_kernels * len2],
            bf: vec![0.0; arch.hidden],
            wo: vec![0.0; arch.hidden],
            bo: 0.0,
        })
    }

    /// LeCun-uniform weights and zero biases.
    pub fn init(arch: Architecture, rows: usize, dim: usize, seed: u64) -> Result<CnnModel> {
        let mut m = CnnModel::zeros(arch, rows, dim)?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut fill = |w: &mut Vec<f64>, fan_in: usize| {
            let a = (3.0 / fan_in as f64).sqrt();
            w.iter_mut().for_each(|x| *x = rng.random_range(-a..a));
        };
        fill(&mut m.w1, rows * arch.conv1_width);
        fill(&mut m.w2, arch.conv1_kernels * arch.conv2_width);
        let len2 = m.len2();
        fill(&mut m.wf, arch.conv2_kernels * len2);
        fill(&mut m.wo, arch.hidden);
        Ok(m)
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
            wf: vec![0.0; self.wf.len()],
            bf: vec![0.0; self.bf.len()],
            wo: vec![0.0; self.wo.len()],
            bo: 0.0,
        }
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Vec<f64>; 7] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2, &mut self.wf, &mut self.bf, &mut self.wo]
    }

    pub fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_len() {
            return Err(DetectorError::DimensionMismatch { expected: self.input_len(), found: x.len() });
        }
        Ok(())
    }

    /// Conv1 pre-activations, `k1 x dim`.
    pub fn conv1(&self, x: &[f64]) -> Vec<f64> {
        conv_forward(x, self.rows, self.dim, &self.w1, &self.b1, self.arch.conv1_width)
    }

    /// Everything after the square activation, applied to `z` (`k1 x dim`).
    /// This map is affine in `z`.
    pub fn tail(&self, z: &[f64]) -> f64 {
        self.tail_trace(z).4
    }

    fn tail_trace(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, f64) {
        let k1 = self.arch.conv1_kernels;
        let p1 = pool_forward(z, k1, self.dim);
        let a2 = conv_forward(&p1, k1, self.len1(), &self.w2, &self.b2, self.arch.conv2_width);
        let p2 = pool_forward(&a2, self.arch.conv2_kernels, self.len1());
        let hid: Vec<f64> = (0..self.arch.hidden)
            .map(|i| {
                let row = &self.wf[i * p2.len()..(i + 1) * p2.len()];
                self.bf[i] + row.iter().zip(&p2).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect();
        let logit = self.bo + self.wo.iter().zip(&hid).map(|(w, h)| w * h).sum::<f64>();
        (p1, a2, p2, hid, logit)
    }

    pub fn forward(&self, x: &[f64]) -> Trace {
        let a1 = self.conv1(x);
        let z: Vec<f64> = a1.iter().map(|v| v * v).collect();
        let (p1, a2, p2, hid, logit) = self.tail_trace(&z);
        Trace { a1, p1, a2, p2, hid, logit }
    }

    /// Plaintext logit of one flattened window.
    pub fn infer(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.forward(x).logit)
    }

    /// Accumulate `dlogit * d(logit)/d(params)` into `g`; returns `d(logit)/dx * dlogit`.
    pub fn backward(&self, x: &[f64], t: &Trace, dlogit: f64, g: &mut Gradients) -> Vec<f64> {
        let (k1, k2) = (self.arch.conv1_kernels, self.arch.conv2_kernels);
        g.bo += dlogit;
        let dhid: Vec<f64> = self.wo.iter().map(|w| w * dlogit).collect();
        for (gw, h) in g.wo.iter_mut().zip(&t.hid) {
            *gw += dlogit * h;
        }
        let n2 = t.p2.len();
        let mut dp2 = vec![0.0; n2];
        for (i, &dh) in dhid.iter().enumerate() {
            g.bf[i] += dh;
            let row = &self.wf[i * n2..(i + 1) * n2];
            let grow = &mut g.wf[i * n2..(i + 1) * n2];
            for q in 0..n2 {
                grow[q] += dh * t.p2[q];
                dp2[q] += dh * row[q];
            }
        }
        let da2 = pool_backward(&dp2, k2, self.len1());
        let mut dp1 = vec![0.0; k1 * self.len1()];
        conv_backward(&t.p1, k1, self.len1(), &self.w2, self.arch.conv2_width, &da2, &mut g.w2, &mut g.b2, Some(&mut dp1));
        let dz = pool_backward(&dp1, k1, self.dim);
        let da1: Vec<f64> = dz.iter().zip(&t.a1).map(|(d, a)| 2.0 * a * d).collect();
        let mut dx = vec![0.0; x.len()];
        conv_backward(x, self.rows, self.dim, &self.w1, self.arch.conv1_width, &da1, &mut g.w1, &mut g.b1, Some(&mut dx));
        dx
    }

    /// Worst relative error between analytic and central-difference
    /// gradients of the logit, per parameter tensor and for the input.
    pub fn gradient_check(&self, x: &[f64], h: f64) -> Vec<(&'static str, f64)> {
        let m = self.clone();
        let t = m.forward(x);
        let mut g = m.zero_gradients();
        let dx = m.backward(x, &t, 1.0, &mut g);
        let rel = |a: f64, n: f64| (a - n).abs() / (a.abs() + n.abs()).max(1e-6);
        let central = |m: &CnnModel, xp: &[f64], bump: &mut dyn FnMut(&mut CnnModel, &mut Vec<f64>, f64)| {
            let (mut mu, mut xu) = (m.clone(), xp.to_vec());
            bump(&mut mu, &mut xu, h);
            let up = mu.forward(&xu).logit;
            let (mut md, mut xd) = (m.clone(), xp.to_vec());
            bump(&mut md, &mut xd, -h);
            (up - md.forward(&xd).logit) / (2.0 * h)
        };
        let names = ["conv1.w", "conv1.b", "conv2.w", "conv2.b", "fc.w", "fc.b", "out.w"];
        let analytic: Vec<Vec<f64>> = g.tensors().iter().map(|t| t.to_vec()).collect();
        let mut out = Vec::new();
        for (ti, name) in names.iter().enumerate() {
            let mut worst: f64 = 0.0;
            for i in 0..analytic[ti].len() {
                let n = central(&m, x, &mut |m, _, d| m.tensors_mut()[ti][i] += d);
                worst = worst.max(rel(analytic[ti][i], n));
            }
            out.push((*name, worst));
        }
        let n = central(&m, x, &mut |m, _, d| m.bo += d);
        out.push(("out.b", rel(g.bo, n)));
        let mut worst: f64 = 0.0;
        for i in 0..x.len() {
            let n = central(&m, x, &mut |_, x, d| x[i] += d);
            worst = worst.max(rel(dx[i], n));
        }
        out.push(("input", worst));
        out
    }
}
