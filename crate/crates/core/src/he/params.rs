use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::rlwe::arith::{is_prime, primes_below, primes_near};
use super::{HeError, Result};

/// Scheme parameters.
///
/// `modulus_chain[0]` is the base prime that survives to depth 0; the
/// remaining primes are consumed one per rescale, from the back.
/// `special_modulus` is only used during key switching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeParams {
    pub ring_dimension: usize,
    pub modulus_chain: Vec<u64>,
    pub special_modulus: u64,
    pub scale: f64,
    pub max_mul_depth: usize,
    #[serde(default = "default_value_bound")]
    pub value_bound: f64,
    #[serde(default = "default_error_std")]
    pub error_std: f64,
}

fn default_value_bound() -> f64 {
    1024.0
}

fn default_error_std() -> f64 {
    3.2
}

const BASE_BITS: u32 = 62;

impl HeParams {
    /// Build a parameter set with NTT-friendly primes: a ~2^62 base prime,
    /// `max_mul_depth` rescale primes as close to the scale as possible and a
    /// ~2^62 special prime.
    pub fn generate(ring_dimension: usize, max_mul_depth: usize, log_scale: u32) -> Result<Self> {
        if ring_dimension < 64 || !ring_dimension.is_power_of_two() {
            return Err(HeError::InvalidParams(format!(
                "ring dimension {ring_dimension} must be a power of two >= 64"
            )));
        }
        if !(10..=50).contains(&log_scale) {
            return Err(HeError::InvalidParams(format!("log scale {log_scale} outside 10..=50")));
        }
        let m = 2 * ring_dimension as u64;
        let top = primes_below(BASE_BITS, m, 2, &[]);
        let mut chain = vec![top[0]];
        chain.extend(primes_near(log_scale, m, max_mul_depth, &top));
        let params = HeParams {
            ring_dimension,
            modulus_chain: chain,
            special_modulus: top[1],
            scale: (1u64 << log_scale) as f64,
            max_mul_depth,
            value_bound: default_value_bound(),
            error_std: default_error_std(),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn slot_count(&self) -> usize {
        self.ring_dimension / 2
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.ring_dimension;
        if n < 64 || !n.is_power_of_two() {
            return Err(HeError::InvalidParams(format!("ring dimension {n} must be a power of two >= 64")));
        }
        if self.modulus_chain.is_empty() {
            return Err(HeError::InvalidParams("empty modulus chain".into()));
        }
        if self.modulus_chain.len() != self.max_mul_depth + 1 {
            return Err(HeError::InvalidParams(format!(
                "modulus chain has {} primes, depth {} needs {}",
                self.modulus_chain.len(),
                self.max_mul_depth,
                self.max_mul_depth + 1
            )));
        }
        let m = 2 * n as u64;
        let all: Vec<u64> = self.modulus_chain.iter().copied().chain([self.special_modulus]).collect();
        for (i, &q) in all.iter().enumerate() {
            if q >= 1 << 62 || !is_prime(q) || q % m != 1 {
                return Err(HeError::InvalidParams(format!("modulus {q} is not an NTT-friendly prime below 2^62")));
            }
            if all[..i].contains(&q) {
                return Err(HeError::InvalidParams(format!("modulus {q} repeated")));
            }
        }
        if !(self.scale >= 2.0 && self.scale.is_finite()) {
            return Err(HeError::InvalidParams(format!("scale {} invalid", self.scale)));
        }
        if !(self.value_bound > 0.0) {
            return Err(HeError::InvalidParams("value bound must be positive".into()));
        }
        // Depth-exhausted products of bounded values must decrypt under the base prime alone.
        let needed = 2.0 * self.scale * self.value_bound * self.value_bound;
        if needed >= self.modulus_chain[0] as f64 {
            return Err(HeError::InvalidParams(format!(
                "base modulus {} too small for scale {} and value bound {}",
                self.modulus_chain[0], self.scale, self.value_bound
            )));
        }
        Ok(())
    }

    /// Parameters with explicit moduli that skip NTT checks; only usable with the mock backend.
    pub fn mock_only(ring_dimension: usize, max_mul_depth: usize) -> Self {
        HeParams {
            ring_dimension,
            modulus_chain: vec![0; max_mul_depth + 1],
            special_modulus: 0,
            scale: 1.0,
            max_mul_depth,
            value_bound: default_value_bound(),
            error_std: default_error_std(),
        }
    }

    /// Shape checks shared by both backends.
    pub(crate) fn validate_shape(&self) -> Result<()> {
        let n = self.ring_dimension;
        if n < 64 || !n.is_power_of_two() {
            return Err(HeError::InvalidParams(format!("ring dimension {n} must be a power of two >= 64")));
        }
        if self.modulus_chain.is_empty() {
            return Err(HeError::InvalidParams("empty modulus chain".into()));
        }
        if self.modulus_chain.len() != self.max_mul_depth + 1 {
            return Err(HeError::InvalidParams("modulus chain length must be max_mul_depth + 1".into()));
        }
        Ok(())
    }
}

impl Default for HeParams {
    /// N = 4096, depth 2, scale 2^40.
    fn default() -> Self {
        static DEFAULT: OnceLock<HeParams> = OnceLock::new();
        DEFAULT
            .get_or_init(|| HeParams::generate(4096, 2, 40).expect("default parameters are valid"))
            .clone()
    }
}
