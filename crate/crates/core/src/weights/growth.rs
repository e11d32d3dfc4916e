//! Growth functional `G*` and empirical regularity constants.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{norm, Field};
use crate::fit::fit_line;
use crate::quad::rule;
use crate::sample::oriented_directions;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthOptions {
    pub directions: usize,
    pub per_octave: usize,
    /// Smallest fitted decay exponent of the dyadic increments still
    /// counted as decreasing.
    pub decay_floor: f64,
}

impl Default for GrowthOptions {
    fn default() -> Self {
        GrowthOptions { directions: 256, per_octave: 16, decay_floor: 0.25 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    /// Samples `(r, G*(r))`.
    pub g_star: Vec<(f64, f64)>,
    /// `int_0^R G*(r) / (1 + r^2) dr` over the sampled range.
    pub integral_value: f64,
    pub tail_bound: f64,
    /// `(j, int_{2^j}^{2^{j+1}} G* / (1 + r^2) dr)`.
    pub dyadic_increments: Vec<(i32, f64)>,
    /// Fitted `p` in `increment_j ~ j^{-p}`, when enough increments exist.
    pub decay_exponent: Option<f64>,
    pub diverged: bool,
}

/// Samples `G*` on a logarithmic grid and integrates the growth condition.
pub fn growth_report(w: &dyn Field, opt: &GrowthOptions) -> GrowthReport {
    let (r0, r1) = w.radial_support();
    let empty = GrowthReport {
        g_star: Vec::new(),
        integral_value: 0.0,
        tail_bound: 0.0,
        dyadic_increments: Vec::new(),
        decay_exponent: None,
        diverged: false,
    };
    if !(r0 < r1) {
        return empty;
    }
    let hi = if r1.is_finite() { r1 } else { 2f64.powi(20) };
    let m = opt.per_octave.max(2);
    let j0 = (r0 / 4.0).max(1e-3).log2().floor() as i64;
    let j1 = (4.0 * hi).log2().ceil() as i64;
    let taus: Vec<f64> = (j0 * m as i64..=j1 * m as i64).map(|i| 2f64.powf(i as f64 / m as f64)).collect();
    let dirs = oriented_directions(w.dim(), opt.directions);
    let (gx, gw) = rule();
    let (gx, gw): (Vec<f64>, Vec<f64>) = (gx.iter().step_by(4).copied().collect(), gw.iter().step_by(4).copied().collect());
    let wsum: f64 = gw.iter().sum();
    // cumulative F_e(tau) = int_0^tau |omega(s e)| ds per direction
    let gstar_per_dir: Vec<Vec<f64>> = dirs
        .par_iter()
        .map(|e| {
            let mut f = vec![0.0; taus.len()];
            let mut x = vec![0.0; e.len()];
            for i in 1..taus.len() {
                let (a, b) = (taus[i - 1], taus[i]);
                let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
                let mut s = 0.0;
                for (xi, wi) in gx.iter().zip(&gw) {
                    let t = c + h * xi;
                    x.iter_mut().zip(e).for_each(|(p, q)| *p = t * q);
                    s += wi * w.value(&x).abs();
                }
                f[i] = f[i - 1] + s * h * 2.0 / wsum;
            }
            (m..taus.len() - m).map(|i| (f[i + m] - f[i - m]) / taus[i]).collect()
        })
        .collect();
    let rs: Vec<f64> = taus[m..taus.len() - m].to_vec();
    let g: Vec<f64> = (0..rs.len()).map(|i| gstar_per_dir.iter().map(|v| v[i]).fold(0.0, f64::max)).collect();
    // trapezoid in ln r of G*(r) r / (1 + r^2)
    let dl = std::f64::consts::LN_2 / m as f64;
    let integrand: Vec<f64> = rs.iter().zip(&g).map(|(r, v)| v * r / (1.0 + r * r)).collect();
    let mut integral = 0.0;
    let mut incr: Vec<(i32, f64)> = Vec::new();
    for i in 1..rs.len() {
        let piece = 0.5 * dl * (integrand[i - 1] + integrand[i]);
        integral += piece;
        let j = rs[i - 1].log2().floor() as i32;
        match incr.last_mut() {
            Some((jj, v)) if *jj == j => *v += piece,
            _ => incr.push((j, piece)),
        }
    }
    incr.retain(|(_, v)| *v > 0.0);
    let window = ((r0.log2().ceil() as i32) + 2, (hi.log2().floor() as i32) - 3);
    let decay = decay_exponent(&incr, window);
    let diverged = match decay {
        Some(p) => p < opt.decay_floor,
        None => false,
    };
    let tail_bound = if r1.is_finite() { 0.0 } else { w.growth_tail(4.0 * hi) };
    GrowthReport {
        g_star: rs.into_iter().zip(g).collect(),
        integral_value: integral,
        tail_bound,
        dyadic_increments: incr,
        decay_exponent: decay,
        diverged,
    }
}

/// Slope of `-log I_j` against `log j` over octaves `window`; octaves near
/// the ends of the support see partial shells and are left out.
fn decay_exponent(incr: &[(i32, f64)], window: (i32, i32)) -> Option<f64> {
    let pts: Vec<(f64, f64)> = incr
        .iter()
        .filter(|(j, _)| *j >= 1 && *j >= window.0 && *j <= window.1)
        .map(|(j, v)| ((*j as f64).ln(), v.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    fit_line(&xs, &ys).ok().map(|f| -f.slope)
}

/// `sup |D^a w(x)| <x>^{a - 1}` over `points`, with the largest tensor entry.
pub fn regularity_scan(w: &dyn Field, points: &[Vec<f64>], a: usize) -> f64 {
    let d = w.dim();
    points
        .par_iter()
        .map(|x| {
            let j = w.jet(x, a);
            let jp = (1.0 + norm(x).powi(2)).sqrt();
            j.max_abs(a, d) * jp.powi(a as i32 - 1)
        })
        .reduce(|| 0.0, f64::max)
}

/// `sup |D^a w_k(x)| 2^{(a - 1) k}` for a single shell piece.
pub fn shell_regularity(piece: &dyn Field, k: u32, points: &[Vec<f64>], a: usize) -> f64 {
    let d = piece.dim();
    let s = 2f64.powi((a as i32 - 1) * k as i32);
    points.par_iter().map(|x| piece.jet(x, a).max_abs(a, d) * s).reduce(|| 0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::{SmoothWeight, Zero};

    #[test]
    fn zero_weight() {
        let r = growth_report(&Zero(2), &GrowthOptions::default());
        assert_eq!(r.integral_value, 0.0);
        assert!(!r.diverged);
        assert_eq!(regularity_scan(&Zero(2), &[vec![1.0, 2.0]], 2), 0.0);
    }

    #[test]
    fn linear_growth_diverges() {
        let w = SmoothWeight::full_shells(2, 3, 12, 0.2, 0.0).unwrap();
        let r = growth_report(&w, &GrowthOptions { directions: 16, ..Default::default() });
        assert!(r.diverged, "{:?} {:?}", r.decay_exponent, r.dyadic_increments);
        for (_, v) in &r.g_star {
            assert!(v.is_finite() && *v >= 0.0);
        }
    }

    #[test]
    fn decaying_amplitudes_converge() {
        // amplitude 2^k / k^2 gives increments ~ j^{-2}
        let w = SmoothWeight::full_shells(2, 3, 12, 0.2, 2.0).unwrap();
        let r = growth_report(&w, &GrowthOptions { directions: 16, ..Default::default() });
        assert!(!r.diverged);
        assert!(r.decay_exponent.unwrap() > 1.0);
    }

    #[test]
    fn g_star_of_radial_shell() {
        // G(x) = int_{1/2}^2 |omega(s x)| ds; for a constant annulus compare with the exact length
        struct Ring;
        impl Field for Ring {
            fn dim(&self) -> usize {
                2
            }
            fn jet(&self, x: &[f64], _o: usize) -> crate::jet::Jet {
                let r = norm(x);
                crate::jet::Jet::constant(if (8.0..16.0).contains(&r) { -1.0 } else { 0.0 })
            }
            fn radial_support(&self) -> (f64, f64) {
                (8.0, 16.0)
            }
            fn line_breaks(&self, _p: &[f64], _u: &[f64], _a: f64, _b: f64, _o: &mut Vec<f64>) {}
        }
        let r = growth_report(&Ring, &GrowthOptions { directions: 4, ..Default::default() });
        for (rr, g) in &r.g_star {
            let exact = ((2.0 * rr).min(16.0) - (rr / 2.0).max(8.0)).max(0.0) / rr;
            assert!((g - exact).abs() < 1e-9, "r = {rr}");
        }
    }
}
