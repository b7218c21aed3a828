//! Encrypted inference.
//!
//! Everything after the square activation is affine, so the network is
//! folded to `logit = c + sum_{k,f} u[k][f] * a[k][f]^2` where `a` is the
//! conv1 pre-activation. The circuit evaluates `sqrt(|u| * alpha) * a` with
//! one plaintext multiply, squares it, and sums positive and negative terms
//! separately, so the whole network costs two levels. `alpha` scales the
//! output, which lets callers fold a mean into the circuit.

use serde::{Deserialize, Serialize};

use super::cnn::CnnModel;
use super::{DetectorError, Result};
use crate::he::{Ciphertext, EvalKey, HeBackend, HeParams};

pub const CIRCUIT_DEPTH: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDepth {
    pub layer: String,
    pub depth: usize,
}

/// Levels consumed per layer of the default layout.
pub fn depth_report() -> Vec<LayerDepth> {
    [("conv1", 1), ("square", 1), ("pool1", 0), ("conv2", 0), ("pool2", 0), ("fc", 0), ("output", 0)]
        .into_iter()
        .map(|(layer, depth)| LayerDepth { layer: layer.into(), depth })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeCircuit {
    pub rows: usize,
    pub dim: usize,
    pub kernels: usize,
    pub width: usize,
    /// Conv1 weights `w1[k][r][j]` and biases.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Folded coefficients `u[k][f]` of the squared conv1 activations.
    pub u: Vec<f64>,
    pub c: f64,
}

pub fn compile_he(model: &CnnModel, params: &HeParams) -> Result<HeCircuit> {
    if params.max_mul_depth < CIRCUIT_DEPTH {
        return Err(DetectorError::DepthBudget { available: params.max_mul_depth, report: depth_report() });
    }
    if model.input_len() > params.slot_count() {
        return Err(DetectorError::Packing(format!(
            "window of {} values exceeds {} slots",
            model.input_len(),
            params.slot_count()
        )));
    }
    let k1 = model.arch.conv1_kernels;
    let n = k1 * model.dim;
    let c = model.tail(&vec![0.0; n]);
    let mut e = vec![0.0; n];
    let u = (0..n)
        .map(|i| {
            e[i] = 1.0;
            let v = model.tail(&e) - c;
            e[i] = 0.0;
            v
        })
        .collect();
    Ok(HeCircuit {
        rows: model.rows,
        dim: model.dim,
        kernels: k1,
        width: model.arch.conv1_width,
        w1: model.w1.clone(),
        b1: model.b1.clone(),
        u,
        c,
    })
}

/// Row-major window layout: slot `r * dim + f` holds row `r`, feature `f`.
pub fn pack(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.concat()
}

impl HeCircuit {
    pub fn input_len(&self) -> usize {
        self.rows * self.dim
    }

    /// Plaintext evaluation of the folded form.
    pub fn eval_plain(&self, x: &[f64], alpha: f64) -> f64 {
        let half = (self.width / 2) as isize;
        let mut acc = self.c * alpha;
        for k in 0..self.kernels {
            for f in 0..self.dim {
                let mut a = self.b1[k];
                for r in 0..self.rows {
                    for j in 0..self.width {
                        let q = f as isize + j as isize - half;
                        if q >= 0 && (q as usize) < self.dim {
                            a += self.w1[(k * self.rows + r) * self.width + j] * x[r * self.dim + q as usize];
                        }
                    }
                }
                acc += self.u[k * self.dim + f] * alpha * a * a;
            }
        }
        acc
    }

    /// Per-position factors `sqrt(|u| * alpha)` restricted to one sign.
    fn gains(&self, k: usize, positive: bool, alpha: f64) -> Vec<f64> {
        self.u[k * self.dim..(k + 1) * self.dim]
            .iter()
            .map(|&u| if (u > 0.0) == positive && u != 0.0 { (u.abs() * alpha).sqrt() } else { 0.0 })
            .collect()
    }

    /// `gain[f] * (conv1(x)[k][f])` at slots `0..dim`, garbage elsewhere.
    /// `shifted[j]` is `x` rotated left by `j - width/2`.
    pub fn conv_stage(
        &self,
        backend: &dyn HeBackend,
        shifted: &[Ciphertext],
        k: usize,
        gain: &[f64],
        evk: &EvalKey,
    ) -> Result<Ciphertext> {
        let half = (self.width / 2) as isize;
        let mut acc: Option<Ciphertext> = None;
        for (j, x) in shifted.iter().enumerate() {
            let mut p = vec![0.0; x.slot_len()];
            let mut any = false;
            for r in 0..self.rows {
                let w = self.w1[(k * self.rows + r) * self.width + j];
                for f in 0..self.dim {
                    let q = f as isize + j as isize - half;
                    if q >= 0 && (q as usize) < self.dim && w != 0.0 {
                        p[r * self.dim + f] = w * gain[f];
                        any = any || gain[f] != 0.0;
                    }
                }
            }
            if !any {
                continue;
            }
            let term = backend.mul_plain(x, &p)?;
            acc = Some(match acc {
                None => term,
                Some(a) => backend.add(&a, &term)?,
            });
        }
        let acc = match acc {
            Some(a) => a,
            None => backend.mul_plain(&shifted[0], &vec![0.0; shifted[0].slot_len()])?,
        };
        let summed = if self.rows > 1 { backend.rotate_sum_strided(&acc, self.dim, self.rows, evk)? } else { acc };
        let mut bias = vec![0.0; summed.slot_len()];
        for (b, g) in bias.iter_mut().zip(gain) {
            *b = g * self.b1[k];
        }
        Ok(backend.add_plain(&summed, &bias)?)
    }

    /// Encrypted logit times `alpha` in slot 0. Other slots hold unrelated values.
    pub fn infer_encrypted(&self, backend: &dyn HeBackend, x: &Ciphertext, evk: &EvalKey, alpha: f64) -> Result<Ciphertext> {
        if x.slot_len() < self.input_len() {
            return Err(DetectorError::Packing(format!(
                "ciphertext holds {} slots, circuit expects {}",
                x.slot_len(),
                self.input_len()
            )));
        }
        if x.remaining_depth() < CIRCUIT_DEPTH {
            return Err(DetectorError::DepthBudget { available: x.remaining_depth(), report: depth_report() });
        }
        let slots = backend.params().slot_count();
        let x = backend.widen(x);
        let half = self.width / 2;
        let shifted = (0..self.width)
            .map(|j| match j.cmp(&half) {
                std::cmp::Ordering::Equal => Ok(x.clone()),
                std::cmp::Ordering::Greater => backend.rotate(&x, j - half, evk),
                std::cmp::Ordering::Less => backend.rotate(&x, slots - (half - j), evk),
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut pos: Option<Ciphertext> = None;
        let mut neg: Option<Ciphertext> = None;
        for k in 0..self.kernels {
            for positive in [true, false] {
                let gain = self.gains(k, positive, alpha);
                if gain.iter().all(|&g| g == 0.0) {
                    continue;
                }
                let y = self.conv_stage(backend, &shifted, k, &gain, evk)?;
                let sq = backend.mul(&y, &y, evk)?;
                let slot = if positive { &mut pos } else { &mut neg };
                *slot = Some(match slot.take() {
                    None => sq,
                    Some(a) => backend.add(&a, &sq)?,
                });
            }
        }
        let total = match (pos, neg) {
            (Some(p), Some(n)) => backend.sub(&p, &n)?,
            (Some(p), None) => p,
            (None, Some(n)) => backend.sub(&backend.sub(&n, &n)?, &n)?,
            (None, None) => {
                let zero = backend.mul_plain(&x, &vec![0.0; x.slot_len()])?;
                backend.drop_to_depth(&zero, x.remaining_depth() - CIRCUIT_DEPTH)?
            }
        };
        let summed = backend.rotate_sum(&total, self.dim, evk)?;
        let mut out = vec![0.0; summed.slot_len()];
        out[0] = self.c * alpha;
        Ok(backend.add_plain(&summed, &out)?)
    }
}
