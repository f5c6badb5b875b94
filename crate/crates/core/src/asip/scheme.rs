use serde::Serialize;

use crate::error::{Error, Result};

const LN3: f64 = 1.098_612_288_668_109_8;

/// Largest block index whose power `3^k` fits in a `u64`.
pub const MAX_BLOCK: u32 = 40;

/// `3^k`, saturating at `u64::MAX`.
pub fn pow3(k: u32) -> u64 {
    3u64.checked_pow(k).unwrap_or(u64::MAX)
}

/// `h_n`, the integer with `3^{h_n − 1} < n ≤ 3^{h_n}`, by exact comparison
/// with powers of three.
pub fn block_index(n: u64) -> Result<u32> {
    if n < 2 {
        return Err(Error::invalid(format!("block index needs n >= 2, got {n}")));
    }
    let mut h = 1u32;
    let mut p = 3u64;
    while p < n {
        match p.checked_mul(3) {
            Some(q) => p = q,
            None => return Ok(h + 1),
        }
        h += 1;
    }
    Ok(h)
}

/// The deterministic skeleton of the block construction: truncation levels
/// `M_k = c₁ k^{1/γ₂}`, dependence lags `m_k = ⌊c₂ k^{1/γ₁}⌋ + 1` and blocks
/// `(3^{k−1}, 3^k]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockScheme {
    pub gamma1: f64,
    /// `f64::INFINITY` for bounded observables.
    pub gamma2: f64,
    pub c: f64,
    pub b: f64,
    pub c1: f64,
    pub c2: f64,
    pub alpha: f64,
    pub k0: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockRow {
    pub k: u32,
    pub big_m: f64,
    pub m: u64,
    pub start: u64,
    pub end: u64,
}

impl BlockScheme {
    pub fn new(gamma1: f64, gamma2: f64, c: f64, b: f64) -> Result<Self> {
        if !(gamma1 > 0.0 && gamma1.is_finite()) {
            return Err(Error::invalid(format!("gamma1 must be positive and finite, got {gamma1}")));
        }
        if !(gamma2 > 0.0) {
            return Err(Error::invalid(format!("gamma2 must be positive, got {gamma2}")));
        }
        if !(c > 0.0 && c.is_finite()) || !(b > 0.0 && b.is_finite()) {
            return Err(Error::invalid("c and b must be positive and finite"));
        }
        let c1 = if gamma2.is_infinite() {
            b
        } else {
            b * (2.0 * LN3).powf(1.0 / gamma2)
        };
        let c2 = (2.0 * LN3 / c).powf(1.0 / gamma1);
        let mut scheme = BlockScheme {
            gamma1,
            gamma2,
            c,
            b,
            c1,
            c2,
            alpha: 1.0 + 1.0 / gamma1 + 1.0 / gamma2,
            k0: 1,
        };
        let last_bad = (1..=MAX_BLOCK)
            .rev()
            .find(|&l| scheme.lag(l) > pow3(l - 1));
        scheme.k0 = match last_bad {
            Some(MAX_BLOCK) => {
                return Err(Error::Scheme {
                    block: MAX_BLOCK,
                    detail: "lags exceed block lengths up to the largest block".into(),
                })
            }
            Some(l) => l + 1,
            None => 1,
        };
        Ok(scheme)
    }

    pub fn lambda(&self) -> f64 {
        1.0 / self.gamma1 + 1.0 / self.gamma2
    }

    /// `M_k`; equal to `b` for every `k` when `γ₂ = ∞`.
    pub fn level(&self, k: u32) -> f64 {
        if self.gamma2.is_infinite() {
            self.b
        } else {
            self.c1 * (k as f64).powf(1.0 / self.gamma2)
        }
    }

    /// `m_k`.
    pub fn lag(&self, k: u32) -> u64 {
        ((self.c2 * (k as f64).powf(1.0 / self.gamma1)).floor() as u64).saturating_add(1)
    }

    /// Inclusive index range `3^{k−1} + 1 ..= 3^k`.
    pub fn block_range(&self, k: u32) -> (u64, u64) {
        (pow3(k - 1) + 1, pow3(k))
    }

    /// `φ_k(x)`: `x` clamped to `[−M_k, M_k]`.
    pub fn clip(&self, x: f64, k: u32) -> f64 {
        let m = self.level(k);
        x.clamp(-m, m)
    }

    pub fn rows(&self, upto: u32) -> Vec<BlockRow> {
        (1..=upto)
            .map(|k| {
                let (start, end) = self.block_range(k);
                BlockRow {
                    k,
                    big_m: self.level(k),
                    m: self.lag(k),
                    start,
                    end,
                }
            })
            .collect()
    }
}

/// `φ_k(x) − μ_k`.
pub fn clip_center(x: f64, k: u32, scheme: &BlockScheme, mu_k: f64) -> f64 {
    scheme.clip(x, k) - mu_k
}
