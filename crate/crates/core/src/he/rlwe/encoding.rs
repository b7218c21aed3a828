//! Canonical-embedding encoder: packs `N/2` reals into the slots of an
//! integer polynomial, slot `j` being the evaluation at `ζ^(5^j)` with
//! `ζ = exp(iπ/N)`. Rotation by `k` slots is the automorphism `X -> X^(5^k)`.

use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Complex {
    re: f64,
    im: f64,
}

impl Complex {
    fn add(self, o: Complex) -> Complex {
        Complex { re: self.re + o.re, im: self.im + o.im }
    }
    fn sub(self, o: Complex) -> Complex {
        Complex { re: self.re - o.re, im: self.im - o.im }
    }
    fn mul(self, o: Complex) -> Complex {
        Complex {
            re: self.re * o.re - self.im * o.im,
            im: self.re * o.im + self.im * o.re,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    n: usize,
    slots: usize,
    rot_group: Vec<usize>,
    ksi_pows: Vec<Complex>,
}

impl Encoder {
    pub fn new(n: usize) -> Self {
        let m = 2 * n;
        let slots = n / 2;
        let mut rot_group = Vec::with_capacity(slots);
        let mut g = 1usize;
        for _ in 0..slots {
            rot_group.push(g);
            g = g * 5 % m;
        }
        let ksi_pows = (0..=m)
            .map(|k| {
                let ang = 2.0 * PI * k as f64 / m as f64;
                Complex { re: ang.cos(), im: ang.sin() }
            })
            .collect();
        Encoder { n, slots, rot_group, ksi_pows }
    }

    /// Galois element realising a left rotation by `steps` slots.
    pub fn galois_element(&self, steps: usize) -> usize {
        self.rot_group[steps % self.slots]
    }

    fn bit_reverse(vals: &mut [Complex]) {
        let n = vals.len();
        let mut j = 0;
        for i in 1..n {
            let mut bit = n >> 1;
            while j & bit != 0 {
                j ^= bit;
                bit >>= 1;
            }
            j ^= bit;
            if i < j {
                vals.swap(i, j);
            }
        }
    }

    fn fft_special(&self, vals: &mut [Complex]) {
        let size = vals.len();
        let m = 2 * self.n;
        Self::bit_reverse(vals);
        let mut len = 2;
        while len <= size {
            let lenh = len >> 1;
            let lenq = len << 2;
            let stride = m / lenq;
            for i in (0..size).step_by(len) {
                for j in 0..lenh {
                    let idx = (self.rot_group[j] & (lenq - 1)) * stride;
                    let u = vals[i + j];
                    let v = vals[i + j + lenh].mul(self.ksi_pows[idx]);
                    vals[i + j] = u.add(v);
                    vals[i + j + lenh] = u.sub(v);
                }
            }
            len <<= 1;
        }
    }

    fn fft_special_inv(&self, vals: &mut [Complex]) {
        let size = vals.len();
        let m = 2 * self.n;
        let mut len = size;
        while len >= 1 {
            let lenh = len >> 1;
            let lenq = len << 2;
            let stride = m / lenq;
            for i in (0..size).step_by(len) {
                for j in 0..lenh {
                    let idx = (lenq - (self.rot_group[j] & (lenq - 1))) * stride;
                    let u = vals[i + j].add(vals[i + j + lenh]);
                    let v = vals[i + j].sub(vals[i + j + lenh]).mul(self.ksi_pows[idx]);
                    vals[i + j] = u;
                    vals[i + j + lenh] = v;
                }
            }
            len >>= 1;
        }
        Self::bit_reverse(vals);
        let inv = 1.0 / size as f64;
        for v in vals.iter_mut() {
            v.re *= inv;
            v.im *= inv;
        }
    }

    /// Encode real slot values (zero-padded) into rounded integer coefficients.
    pub fn encode(&self, values: &[f64], scale: f64) -> Vec<i128> {
        assert!(values.len() <= self.slots);
        let mut z = vec![Complex { re: 0.0, im: 0.0 }; self.slots];
        for (slot, &v) in z.iter_mut().zip(values) {
            slot.re = v;
        }
        self.fft_special_inv(&mut z);
        let mut coeffs = vec![0i128; self.n];
        for (i, c) in z.iter().enumerate() {
            coeffs[i] = (c.re * scale).round() as i128;
            coeffs[i + self.slots] = (c.im * scale).round() as i128;
        }
        coeffs
    }

    /// Decode centered integer coefficients back into real slot values.
    pub fn decode(&self, coeffs: &[f64], scale: f64) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.n);
        let mut z: Vec<Complex> = (0..self.slots)
            .map(|i| Complex { re: coeffs[i] / scale, im: coeffs[i + self.slots] / scale })
            .collect();
        self.fft_special(&mut z);
        z.into_iter().map(|c| c.re).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct evaluation of the polynomial at the slot roots.
    fn naive_decode(coeffs: &[f64], n: usize) -> Vec<f64> {
        let m = 2 * n;
        let mut g = 1usize;
        let mut out = Vec::new();
        for _ in 0..n / 2 {
            let mut acc = (0.0, 0.0);
            for (k, &c) in coeffs.iter().enumerate() {
                let ang = PI * ((g * k) % m) as f64 / n as f64;
                acc.0 += c * ang.cos();
                acc.1 += c * ang.sin();
            }
            out.push(acc.0);
            g = g * 5 % m;
        }
        out
    }

    #[test]
    fn fast_decode_matches_root_evaluation() {
        let n = 32;
        let enc = Encoder::new(n);
        let coeffs: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 - 5.0).collect();
        let fast = enc.decode(&coeffs, 1.0);
        let slow = naive_decode(&coeffs, n);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn encode_decode_roundtrip() {
        let n = 64;
        let enc = Encoder::new(n);
        let vals: Vec<f64> = (0..n / 2).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let scale = (1u64 << 30) as f64;
        let coeffs = enc.encode(&vals, scale);
        let back = enc.decode(&coeffs.iter().map(|&c| c as f64).collect::<Vec<_>>(), scale);
        for (a, b) in vals.iter().zip(&back) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn automorphism_rotates_slots_left() {
        let n = 64;
        let enc = Encoder::new(n);
        let vals: Vec<f64> = (0..n / 2).map(|i| i as f64).collect();
        let scale = (1u64 << 30) as f64;
        let coeffs = enc.encode(&vals, scale);
        for steps in [1usize, 2, 5] {
            let g = enc.galois_element(steps);
            let mut rotated = vec![0.0; n];
            for (i, &c) in coeffs.iter().enumerate() {
                let k = i * g % (2 * n);
                if k < n {
                    rotated[k] += c as f64;
                } else {
                    rotated[k - n] -= c as f64;
                }
            }
            let back = enc.decode(&rotated, scale);
            for j in 0..n / 2 {
                assert!((back[j] - vals[(j + steps) % (n / 2)]).abs() < 1e-6);
            }
        }
    }
}
