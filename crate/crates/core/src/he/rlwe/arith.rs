//! Word-sized modular arithmetic for moduli below 2^62.

#[inline(always)]
pub fn add_mod(a: u64, b: u64, q: u64) -> u64 {
    let s = a + b;
    if s >= q {
        s - q
    } else {
        s
    }
}

#[inline(always)]
pub fn sub_mod(a: u64, b: u64, q: u64) -> u64 {
    if a >= b {
        a - b
    } else {
        a + q - b
    }
}

#[inline(always)]
pub fn neg_mod(a: u64, q: u64) -> u64 {
    if a == 0 {
        0
    } else {
        q - a
    }
}

#[inline(always)]
pub fn mul_mod(a: u64, b: u64, q: u64) -> u64 {
    ((a as u128 * b as u128) % q as u128) as u64
}

/// Precomputed `floor(w * 2^64 / q)` for Shoup multiplication by a fixed `w`.
#[inline(always)]
pub fn shoup(w: u64, q: u64) -> u64 {
    (((w as u128) << 64) / q as u128) as u64
}

#[inline(always)]
pub fn mul_shoup(a: u64, w: u64, w_shoup: u64, q: u64) -> u64 {
    let hi = ((a as u128 * w_shoup as u128) >> 64) as u64;
    let r = a.wrapping_mul(w).wrapping_sub(hi.wrapping_mul(q));
    if r >= q {
        r - q
    } else {
        r
    }
}

/// Shoup product left in `[0, 2q)`; `a` may be any 64-bit value.
#[inline(always)]
pub fn mul_shoup_lazy(a: u64, w: u64, w_shoup: u64, q: u64) -> u64 {
    let hi = ((a as u128 * w_shoup as u128) >> 64) as u64;
    a.wrapping_mul(w).wrapping_sub(hi.wrapping_mul(q))
}

pub fn pow_mod(mut base: u64, mut exp: u64, q: u64) -> u64 {
    let mut acc = 1u64 % q;
    base %= q;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, q);
        }
        base = mul_mod(base, base, q);
        exp >>= 1;
    }
    acc
}

/// Inverse modulo a prime via Fermat.
pub fn inv_mod(a: u64, q: u64) -> u64 {
    pow_mod(a, q - 2, q)
}

/// Reduce a signed integer into `[0, q)`.
#[inline(always)]
pub fn reduce_i128(v: i128, q: u64) -> u64 {
    match i64::try_from(v) {
        Ok(small) => small.rem_euclid(q as i64) as u64,
        Err(_) => v.rem_euclid(q as i128) as u64,
    }
}

/// Centered representative of `a` in `(-q/2, q/2]`.
#[inline(always)]
pub fn center(a: u64, q: u64) -> i64 {
    if a > q / 2 {
        -((q - a) as i64)
    } else {
        a as i64
    }
}

/// Centered lift of `a mod p` reduced modulo `q`, given `p_mod_q = p mod q`.
#[inline(always)]
pub fn reduce_centered(a: u64, p: u64, p_mod_q: u64, q: u64) -> u64 {
    if a > p / 2 {
        sub_mod(a % q, p_mod_q, q)
    } else {
        a % q
    }
}

/// Deterministic Miller-Rabin for all 64-bit inputs.
pub fn is_prime(n: u64) -> bool {
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for &p in &BASES {
        if n % p == 0 {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    'witness: for &a in &BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Largest primes `p < 2^bits` with `p ≡ 1 (mod modulus)`, skipping `exclude`.
pub fn primes_below(bits: u32, modulus: u64, count: usize, exclude: &[u64]) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let top = 1u64 << bits;
    let mut candidate = (top - 1) / modulus * modulus + 1;
    while out.len() < count && candidate > modulus {
        if is_prime(candidate) && !exclude.contains(&candidate) {
            out.push(candidate);
        }
        candidate -= modulus;
    }
    out
}

/// Primes `p ≡ 1 (mod modulus)` ordered by distance from `2^bits`.
pub fn primes_near(bits: u32, modulus: u64, count: usize, exclude: &[u64]) -> Vec<u64> {
    let target = 1u64 << bits;
    let base = target / modulus * modulus + 1;
    let mut out = Vec::with_capacity(count);
    let mut step = 0u64;
    while out.len() < count {
        let below = base.checked_sub(step * modulus);
        let above = base + (step + 1) * modulus;
        let mut pair = Vec::with_capacity(2);
        if let Some(b) = below {
            pair.push(b);
        }
        pair.push(above);
        pair.sort_by_key(|c| c.abs_diff(target));
        for c in pair {
            if out.len() < count && is_prime(c) && !exclude.contains(&c) && !out.contains(&c) {
                out.push(c);
            }
        }
        step += 1;
    }
    out
}

/// A primitive `order`-th root of unity modulo prime `q`.
pub fn primitive_root_of_unity(order: u64, q: u64) -> u64 {
    assert_eq!((q - 1) % order, 0, "order must divide q - 1");
    for g in 2..q {
        let r = pow_mod(g, (q - 1) / order, q);
        // order is a power of two, so checking r^(order/2) = -1 suffices
        if pow_mod(r, order / 2, q) == q - 1 {
            return r;
        }
    }
    unreachable!("prime field always has a primitive root")
}
