//! Polynomial smoothstep and the lattice bump built from it.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const MIN_ORDER: usize = 4;
pub const MAX_ORDER: usize = 8;

/// Smoothstep `S` with `S = 0` on `(-inf, 0]`, `S = 1` on `[1, inf)` and
/// derivatives through `order` vanishing at both ends (degree `2 order + 1`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BumpProfile {
    pub order: usize,
}

impl Default for BumpProfile {
    fn default() -> Self {
        BumpProfile { order: 4 }
    }
}

fn binom(n: i64, k: i64) -> i64 {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Integer coefficients `c_0 ..= c_{2N+1}` of `S(u) = sum c_n u^n` on `[0, 1]`.
pub fn smoothstep_coefficients(order: usize) -> Vec<i64> {
    let n = order as i64;
    let mut c = vec![0i64; 2 * order + 2];
    for j in 0..=n {
        let sign = if j % 2 == 0 { 1 } else { -1 };
        c[(n + 1 + j) as usize] = sign * binom(n + j, j) * binom(2 * n + 1, n - j);
    }
    c
}

fn cached(order: usize) -> &'static [f64] {
    static TABLE: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    &TABLE.get_or_init(|| {
        (0..=MAX_ORDER)
            .map(|o| if o < MIN_ORDER { Vec::new() } else { smoothstep_coefficients(o).iter().map(|&v| v as f64).collect() })
            .collect()
    })[order]
}

impl BumpProfile {
    pub fn new(order: usize) -> Result<Self> {
        if !(MIN_ORDER..=MAX_ORDER).contains(&order) {
            return invalid(format!("profile order {order} outside {MIN_ORDER}..={MAX_ORDER}"));
        }
        Ok(BumpProfile { order })
    }

    /// `[S, S', S'', S''']` at `u`.
    pub fn step(&self, u: f64) -> [f64; 4] {
        if u <= 0.0 {
            return [0.0; 4];
        }
        if u >= 1.0 {
            return [1.0, 0.0, 0.0, 0.0];
        }
        let (mut d0, mut d1, mut d2, mut d3) = (0.0, 0.0, 0.0, 0.0);
        for &c in cached(self.order).iter().rev() {
            d3 = d3 * u + d2;
            d2 = d2 * u + d1;
            d1 = d1 * u + d0;
            d0 = d0 * u + c;
        }
        [d0, d1, 2.0 * d2, 6.0 * d3]
    }

    /// `phi(u) = S(u + 1) - S(u)`, supported on `[-1, 1]`; its integer
    /// translates sum to one.
    pub fn bump(&self, u: f64) -> [f64; 4] {
        let a = self.step(u + 1.0);
        let b = self.step(u);
        [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]]
    }

    /// Largest `|phi^(a)|` over the real line, by dense sampling.
    pub fn bump_sup(&self, a: usize) -> f64 {
        (0..=20_000).map(|i| self.bump(-1.0 + i as f64 / 10_000.0)[a].abs()).fold(0.0, f64::max)
    }
}
