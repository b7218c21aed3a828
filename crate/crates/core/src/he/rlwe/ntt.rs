//! Negacyclic number-theoretic transform over `Z_q[X]/(X^N + 1)`.

use super::arith::{add_mod, inv_mod, mul_mod, mul_shoup, mul_shoup_lazy, pow_mod, primitive_root_of_unity, shoup};

#[derive(Debug, Clone)]
pub struct NttTable {
    pub q: u64,
    n: usize,
    psi_rev: Vec<u64>,
    psi_rev_shoup: Vec<u64>,
    psi_inv_rev: Vec<u64>,
    psi_inv_rev_shoup: Vec<u64>,
    n_inv: u64,
    n_inv_shoup: u64,
}

fn bit_reverse(mut x: usize, bits: u32) -> usize {
    let mut r = 0;
    for _ in 0..bits {
        r = (r << 1) | (x & 1);
        x >>= 1;
    }
    r
}

impl NttTable {
    pub fn new(q: u64, n: usize) -> Self {
        let psi = primitive_root_of_unity(2 * n as u64, q);
        let psi_inv = inv_mod(psi, q);
        let bits = n.trailing_zeros();
        let mut psi_rev = vec![0; n];
        let mut psi_inv_rev = vec![0; n];
        for i in 0..n {
            let r = bit_reverse(i, bits) as u64;
            psi_rev[i] = pow_mod(psi, r, q);
            psi_inv_rev[i] = pow_mod(psi_inv, r, q);
        }
        let psi_rev_shoup = psi_rev.iter().map(|&w| shoup(w, q)).collect();
        let psi_inv_rev_shoup = psi_inv_rev.iter().map(|&w| shoup(w, q)).collect();
        let n_inv = inv_mod(n as u64, q);
        NttTable {
            q,
            n,
            psi_rev,
            psi_rev_shoup,
            psi_inv_rev,
            psi_inv_rev_shoup,
            n_inv,
            n_inv_shoup: shoup(n_inv, q),
        }
    }

    /// In-place forward transform; output is in bit-reversed evaluation order.
    pub fn forward(&self, a: &mut [u64]) {
        assert_eq!(a.len(), self.n);
        let q = self.q;
        let two_q = 2 * q;
        // Lazy butterflies keep values in [0, 4q) until the final pass.
        let mut t = self.n;
        let mut m = 1;
        while m < self.n {
            t >>= 1;
            let ws = &self.psi_rev[m..2 * m];
            let wss = &self.psi_rev_shoup[m..2 * m];
            for (block, (&w, &wsh)) in a.chunks_exact_mut(2 * t).zip(ws.iter().zip(wss)) {
                let (lo, hi) = block.split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let mut u = *x;
                    if u >= two_q {
                        u -= two_q;
                    }
                    let v = mul_shoup_lazy(*y, w, wsh, q);
                    *x = u + v;
                    *y = u + two_q - v;
                }
            }
            m <<= 1;
        }
        for x in a.iter_mut() {
            if *x >= two_q {
                *x -= two_q;
            }
            if *x >= q {
                *x -= q;
            }
        }
    }

    pub fn inverse(&self, a: &mut [u64]) {
        assert_eq!(a.len(), self.n);
        let q = self.q;
        let two_q = 2 * q;
        // Values stay in [0, 2q) between passes.
        let mut t = 1;
        let mut m = self.n;
        while m > 1 {
            let h = m >> 1;
            let ws = &self.psi_inv_rev[h..m];
            let wss = &self.psi_inv_rev_shoup[h..m];
            for (block, (&w, &wsh)) in a.chunks_exact_mut(2 * t).zip(ws.iter().zip(wss)) {
                let (lo, hi) = block.split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let (u, v) = (*x, *y);
                    let mut s = u + v;
                    if s >= two_q {
                        s -= two_q;
                    }
                    *x = s;
                    *y = mul_shoup_lazy(u + two_q - v, w, wsh, q);
                }
            }
            t <<= 1;
            m = h;
        }
        for x in a.iter_mut() {
            *x = mul_shoup(*x, self.n_inv, self.n_inv_shoup, q);
        }
    }

    /// Pointwise product of two transformed vectors, accumulated into `acc`.
    pub fn mul_acc(&self, acc: &mut [u64], a: &[u64], b: &[u64]) {
        let q = self.q;
        for ((c, &x), &y) in acc.iter_mut().zip(a).zip(b) {
            *c = add_mod(*c, mul_mod(x, y, q), q);
        }
    }

    pub fn mul_into(&self, out: &mut [u64], a: &[u64], b: &[u64]) {
        let q = self.q;
        for ((c, &x), &y) in out.iter_mut().zip(a).zip(b) {
            *c = mul_mod(x, y, q);
        }
    }
}
