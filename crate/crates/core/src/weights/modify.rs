//! Weighted spherical projections and the shell-by-shell modification that
//! makes each projection constant (planar weights).
//!
//! With the dyadic partition `psi_k(r) = S(log2 r - k + 1) - S(log2 r - k)`,
//! the localized pieces are `omega_k = psi_k omega`. For `k >= 5` the
//! correction
//!
//! `g_k(x) = (q_k - P_k(theta(x))) psi_k(|x|) / p_k`
//!
//! uses `P_k`, the projection of `omega_k` tabulated on an angular grid with
//! septic Hermite interpolation, `p_k` the projection of `psi_k`, and
//! `q_k <= min P_k` certified by a Lipschitz pad.

use std::collections::BTreeMap;
use std::f64::consts::{LN_2, PI};
use std::sync::OnceLock;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use super::{chord, norm, radius_crossings, BumpProfile, Field, SmoothWeight};
use crate::error::{invalid, Error, Result};
use crate::jet::{Jet, Taylor};
use crate::quad::{clip_knots, integrate, Integrator};

/// `psi_k(r)` with derivatives in `r`; `psi_0 = 1 - S(log2 r)`.
pub fn shell_partition(profile: &BumpProfile, k: u32, r: f64) -> Taylor {
    if r <= 0.0 {
        return Taylor::constant(if k == 0 { 1.0 } else { 0.0 });
    }
    let l = Taylor::var(r).ln().scale(1.0 / LN_2);
    let kf = k as f64;
    let up = l.apply(profile.step(l.0[0] - kf));
    if k == 0 {
        return Taylor::constant(1.0).add(up.scale(-1.0));
    }
    l.apply(profile.step(l.0[0] - kf + 1.0)).add(up.scale(-1.0))
}

/// `p_k = int psi_k(t) t^{-2} dt`.
pub fn shell_projection_constant(profile: &BumpProfile, k: u32) -> f64 {
    let a = 2f64.powi(k as i32 - 1);
    integrate(|t| shell_partition(profile, k, t).0[0] / (t * t), &[a, 2.0 * a, 4.0 * a], 1e-15 * (1.0 / a))
}

/// `psi_k(|x|) f(x)`.
pub struct Localized<'a, F: Field + ?Sized> {
    pub inner: &'a F,
    pub k: u32,
    pub profile: BumpProfile,
}

impl<'a, F: Field + ?Sized> Localized<'a, F> {
    pub fn new(inner: &'a F, k: u32) -> Self {
        Localized { inner, k, profile: BumpProfile::default() }
    }

    fn band(&self) -> (f64, f64) {
        let (r0, r1) = self.inner.radial_support();
        let a = 2f64.powi(self.k as i32 - 1);
        (r0.max(a), r1.min(4.0 * a))
    }
}

impl<F: Field + ?Sized> Field for Localized<'_, F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn jet(&self, x: &[f64], order: usize) -> Jet {
        let d = self.dim();
        let r = norm(&x[..d]);
        let (lo, hi) = self.band();
        if r <= lo || r >= hi {
            return Jet::default();
        }
        let psi = Jet::norm(&x[..d], order).compose(shell_partition(&self.profile, self.k, r).0, d, order);
        self.inner.jet(x, order).mul(&psi, d, order)
    }

    fn radial_support(&self) -> (f64, f64) {
        self.band()
    }

    fn line_breaks(&self, p: &[f64], u: &[f64], t0: f64, t1: f64, out: &mut Vec<f64>) {
        let (lo, hi) = self.band();
        if lo >= hi {
            return;
        }
        let Some((a, b)) = chord(p, u, hi) else { return };
        let (a, b) = (a.max(t0), b.min(t1));
        if a >= b {
            return;
        }
        self.inner.line_breaks(p, u, a, b, out);
        for m in -1..=1 {
            radius_crossings(p, u, 2f64.powi(self.k as i32 + m), a, b, out);
        }
        radius_crossings(p, u, hi, t0, t1, out);
    }
}

fn ray_knots(f: &dyn Field, e: &[f64]) -> Result<Vec<f64>> {
    let (r0, r1) = f.radial_support();
    if r0 <= 0.0 {
        return invalid("projection needs a piece supported away from the origin");
    }
    if !r1.is_finite() {
        return invalid("projection of an unbounded piece");
    }
    let origin = vec![0.0; f.dim()];
    let mut knots = Vec::new();
    f.line_breaks(&origin, e, r0, r1, &mut knots);
    clip_knots(&mut knots, r0, r1);
    Ok(knots)
}

/// `int_0^inf f(t v) t^{-2} dt` for a unit vector `v`.
pub fn spherical_projection(f: &dyn Field, v: &[f64], tol: f64) -> Result<f64> {
    let (r0, r1) = f.radial_support();
    if r0 >= r1 {
        return Ok(0.0);
    }
    let knots = ray_knots(f, v)?;
    let mut x = vec![0.0; f.dim()];
    Ok(integrate(
        |t| {
            x.iter_mut().zip(v).for_each(|(xi, vi)| *xi = t * vi);
            f.value(&x) / (t * t)
        },
        &knots,
        tol,
    ))
}

const ANGULAR_SCALE: f64 = 1.0 / 64.0;

/// `[P, P', P'', P''']` of the projection `P(theta)` of a planar piece.
pub fn projection_derivatives(f: &dyn Field, theta: f64, tol: f64) -> Result<[f64; 4]> {
    if f.dim() != 2 {
        return invalid("angular projection derivatives are planar only");
    }
    let (r0, r1) = f.radial_support();
    if r0 >= r1 {
        return Ok([0.0; 4]);
    }
    let e = [theta.cos(), theta.sin()];
    let p = [-e[1], e[0]];
    let knots = ray_knots(f, &e)?;
    // derivative m is integrated at tolerance tol / ANGULAR_SCALE^m, the size
    // that matters at the resolution of an angular table
    let sc = [1.0, ANGULAR_SCALE, ANGULAR_SCALE * ANGULAR_SCALE, ANGULAR_SCALE.powi(3)];
    let out = Integrator::new(4, tol).integrate(
        |t, out| {
            let j = f.jet(&[t * e[0], t * e[1]], 3);
            let dp = j.grad_dot(&p);
            let de = j.grad_dot(&e);
            out[0] = j.v / (t * t);
            out[1] = sc[1] * dp / t;
            out[2] = sc[2] * (j.hess_form(&p, &p) - de / t);
            out[3] = sc[3] * (t * j.third_form(&p, &p, &p) - 3.0 * j.hess_form(&e, &p) - dp / t);
        },
        &knots,
    );
    Ok([out[0], out[1] / sc[1], out[2] / sc[2], out[3] / sc[3]])
}

fn hermite_inverse() -> &'static Matrix4<f64> {
    static INV: OnceLock<Matrix4<f64>> = OnceLock::new();
    INV.get_or_init(|| {
        let m = Matrix4::from_fn(|r, c| {
            let n = c + 4;
            (0..r).map(|i| (n - i) as f64).product::<f64>()
        });
        m.try_inverse().expect("Hermite system is invertible")
    })
}

/// Periodic table of `[P, P', P'', P''']` on `m` equally spaced angles,
/// interpolated by septic Hermite polynomials (C^3 in the angle).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngularTable {
    pub nodes: Vec<[f64; 4]>,
}

impl AngularTable {
    pub fn step(&self) -> f64 {
        2.0 * PI / self.nodes.len() as f64
    }

    /// Interpolated `[H, H', H'', H''']` at `theta`.
    pub fn eval(&self, theta: f64) -> [f64; 4] {
        let m = self.nodes.len();
        let h = self.step();
        let u = theta.rem_euclid(2.0 * PI) / h;
        let i = (u.floor() as usize).min(m - 1);
        let s = u - i as f64;
        let (a, b) = (self.nodes[i], self.nodes[(i + 1) % m]);
        let sc = [1.0, h, h * h, h * h * h];
        let mut c = [0.0; 8];
        let fact = [1.0, 1.0, 2.0, 6.0];
        for q in 0..4 {
            c[q] = a[q] * sc[q] / fact[q];
        }
        let mut rhs = Vector4::zeros();
        for q in 0..4 {
            let lower: f64 = (0..4).map(|n| c[n] * (0..q).map(|t| n as f64 - t as f64).product::<f64>()).sum();
            rhs[q] = b[q] * sc[q] - lower;
        }
        let hi = hermite_inverse() * rhs;
        for n in 0..4 {
            c[n + 4] = hi[n];
        }
        let (mut d0, mut d1, mut d2, mut d3) = (0.0, 0.0, 0.0, 0.0);
        for &cn in c.iter().rev() {
            d3 = d3 * s + d2;
            d2 = d2 * s + d1;
            d1 = d1 * s + d0;
            d0 = d0 * s + cn;
        }
        [d0, d1 / h, 2.0 * d2 / (h * h), 6.0 * d3 / (h * h * h)]
    }

    /// `(min, pad)`: the sampled minimum over `refine` points per interval and
    /// the Lipschitz allowance `(spacing / 2) max |H'|`.
    pub fn certified_min(&self, refine: usize) -> (f64, f64) {
        let n = self.nodes.len() * refine;
        let dt = 2.0 * PI / n as f64;
        let mut mn = f64::INFINITY;
        let mut lip: f64 = 0.0;
        for i in 0..n {
            let v = self.eval(i as f64 * dt);
            mn = mn.min(v[0]);
            lip = lip.max(v[1].abs());
        }
        // |H'| between samples is bounded by the sampled max plus a curvature term
        let curv = (0..n).map(|i| self.eval(i as f64 * dt)[2].abs()).fold(0.0, f64::max);
        (mn, 0.5 * dt * (lip + 0.5 * dt * curv))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub k: u32,
    pub p: f64,
    pub q: f64,
    pub pad: f64,
    pub table: AngularTable,
}

fn theta_jet(x: &[f64], order: usize) -> Jet {
    let (a, b) = (x[0], x[1]);
    let r2 = a * a + b * b;
    let mut j = Jet::constant(b.atan2(a));
    if order >= 1 {
        j.g[0] = -b / r2;
        j.g[1] = a / r2;
    }
    if order >= 2 {
        let r4 = r2 * r2;
        j.h[0][0] = 2.0 * a * b / r4;
        j.h[1][1] = -j.h[0][0];
        j.h[0][1] = (b * b - a * a) / r4;
        j.h[1][0] = j.h[0][1];
    }
    if order >= 3 {
        let r6 = r2 * r2 * r2;
        let xxx = 2.0 * b * (b * b - 3.0 * a * a) / r6;
        let xxy = 2.0 * a * (a * a - 3.0 * b * b) / r6;
        j.t[0][0][0] = xxx;
        j.t[0][1][1] = -xxx;
        j.t[1][0][1] = -xxx;
        j.t[1][1][0] = -xxx;
        j.t[0][0][1] = xxy;
        j.t[0][1][0] = xxy;
        j.t[1][0][0] = xxy;
        j.t[1][1][1] = -xxy;
    }
    j
}

/// Parameters where `p + t u` crosses the rays through the table nodes
/// inside the annulus `rmin < |x| < rmax`.
fn angular_crossings(p: &[f64], u: &[f64], nodes: usize, rmin: f64, rmax: f64, t0: f64, t1: f64, out: &mut Vec<f64>) {
    let Some((c0, c1)) = chord(p, u, rmax) else { return };
    let (t0, t1) = (t0.max(c0), t1.min(c1));
    if t0 >= t1 {
        return;
    }
    let h = 2.0 * PI / nodes as f64;
    for i in 0..nodes {
        let e = [(i as f64 * h).cos(), (i as f64 * h).sin()];
        let den = u[0] * e[1] - u[1] * e[0];
        if den.abs() < 1e-300 {
            continue;
        }
        let t = -(p[0] * e[1] - p[1] * e[0]) / den;
        if t > t0 && t < t1 {
            let x = [p[0] + t * u[0], p[1] + t * u[1]];
            if x[0] * e[0] + x[1] * e[1] > rmin {
                out.push(t);
            }
        }
    }
}

impl Correction {
    /// Breakpoints of the correction along `p + t u`.
    pub fn line_breaks(&self, p: &[f64], u: &[f64], t0: f64, t1: f64, out: &mut Vec<f64>) {
        let a = 2f64.powi(self.k as i32 - 1);
        for r in [a, 2.0 * a, 4.0 * a] {
            radius_crossings(p, u, r, t0, t1, out);
        }
        angular_crossings(p, u, self.table.nodes.len(), a, 4.0 * a, t0, t1, out);
    }

    pub fn jet(&self, x: &[f64], order: usize, profile: &BumpProfile) -> Jet {
        let r = norm(&x[..2]);
        let a = 2f64.powi(self.k as i32 - 1);
        if r <= a || r >= 4.0 * a {
            return Jet::default();
        }
        let psi = Jet::norm(&x[..2], order).compose(shell_partition(profile, self.k, r).0, 2, order);
        let th = theta_jet(x, order);
        let h = th.compose(self.table.eval(th.v), 2, order);
        let mut ang = h.scale(-1.0);
        ang.v += self.q;
        ang.mul(&psi, 2, order).scale(1.0 / self.p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModifyOptions {
    /// Angular nodes of each projection table.
    pub nodes: usize,
    /// Sample points per table interval when certifying the minimum.
    pub refine: usize,
    pub tol: f64,
    /// Largest admissible `pad / |q_k|`.
    pub max_pad_ratio: f64,
    /// Shells below this index are left unchanged.
    pub first_corrected: u32,
}

impl Default for ModifyOptions {
    fn default() -> Self {
        ModifyOptions { nodes: 256, refine: 16, tol: 1e-11, max_pad_ratio: 1e-2, first_corrected: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModifiedWeight {
    pub base: SmoothWeight,
    pub corrections: Vec<Correction>,
    #[serde(with = "pairs")]
    pub q: BTreeMap<u32, f64>,
    #[serde(with = "pairs")]
    pub p: BTreeMap<u32, f64>,
    pub profile: BumpProfile,
}

// Integer map keys do not survive the buffering of internally tagged enums,
// so the maps are stored as `[k, value]` pairs.
mod pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<u32, f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<u32, f64>, D::Error> {
        Ok(Vec::<(u32, f64)>::deserialize(d)?.into_iter().collect())
    }
}

impl ModifiedWeight {
    pub fn correction(&self, k: u32) -> Option<&Correction> {
        self.corrections.iter().find(|c| c.k == k)
    }

    /// `omega~_k = psi_k omega + g_k`.
    pub fn piece(&self, k: u32) -> ModifiedPiece<'_> {
        ModifiedPiece { weight: self, k }
    }

    /// Shell indices of the partition that meet the base support.
    pub fn shell_indices(&self) -> Vec<u32> {
        self.p.keys().copied().collect()
    }

    /// Partial sums `sum_{k <= K} |q_k|` for `K = 0 ..= kmax`.
    pub fn q_partial_sum(&self, kmax: u32) -> f64 {
        self.q.range(..=kmax).map(|(_, v)| v.abs()).sum()
    }
}

impl Field for ModifiedWeight {
    fn dim(&self) -> usize {
        self.base.dim
    }

    fn jet(&self, x: &[f64], order: usize) -> Jet {
        let mut j = self.base.jet(x, order);
        for c in &self.corrections {
            j.add_assign(&c.jet(x, order, &self.profile));
        }
        j
    }

    fn radial_support(&self) -> (f64, f64) {
        let (mut lo, mut hi) = self.base.radial_support();
        for c in &self.corrections {
            lo = lo.min(2f64.powi(c.k as i32 - 1));
            hi = hi.max(2f64.powi(c.k as i32 + 1));
        }
        (lo, hi)
    }

    fn line_breaks(&self, p: &[f64], u: &[f64], t0: f64, t1: f64, out: &mut Vec<f64>) {
        self.base.line_breaks(p, u, t0, t1, out);
        for c in &self.corrections {
            c.line_breaks(p, u, t0, t1, out);
        }
    }
}

pub struct ModifiedPiece<'a> {
    pub weight: &'a ModifiedWeight,
    pub k: u32,
}

impl Field for ModifiedPiece<'_> {
    fn dim(&self) -> usize {
        self.weight.dim()
    }

    fn jet(&self, x: &[f64], order: usize) -> Jet {
        let loc = Localized { inner: &self.weight.base, k: self.k, profile: self.weight.profile };
        let mut j = loc.jet(x, order);
        if let Some(c) = self.weight.correction(self.k) {
            j.add_assign(&c.jet(x, order, &self.weight.profile));
        }
        j
    }

    fn radial_support(&self) -> (f64, f64) {
        let a = 2f64.powi(self.k as i32 - 1);
        if self.weight.correction(self.k).is_some() {
            return (a, 4.0 * a);
        }
        Localized { inner: &self.weight.base, k: self.k, profile: self.weight.profile }.band()
    }

    fn line_breaks(&self, p: &[f64], u: &[f64], t0: f64, t1: f64, out: &mut Vec<f64>) {
        Localized { inner: &self.weight.base, k: self.k, profile: self.weight.profile }.line_breaks(p, u, t0, t1, out);
        match self.weight.correction(self.k) {
            Some(c) => c.line_breaks(p, u, t0, t1, out),
            None => {
                let a = 2f64.powi(self.k as i32 - 1);
                for r in [a, 2.0 * a, 4.0 * a] {
                    radius_crossings(p, u, r, t0, t1, out);
                }
            }
        }
    }
}

fn angular_table(f: &dyn Field, nodes: usize, tol: f64) -> Result<AngularTable> {
    use rayon::prelude::*;
    let h = 2.0 * PI / nodes as f64;
    let rows: Result<Vec<[f64; 4]>> =
        (0..nodes).into_par_iter().map(|i| projection_derivatives(f, i as f64 * h, tol)).collect();
    Ok(AngularTable { nodes: rows? })
}

/// Runs the modification on a compactly supported planar weight.
pub fn modify_weight(w: &SmoothWeight, opt: &ModifyOptions) -> Result<ModifiedWeight> {
    if w.dim != 2 {
        return invalid(format!("weight modification is implemented for d = 2, got d = {}", w.dim));
    }
    if !w.radial.is_empty() {
        return invalid("weight modification needs a compactly supported weight");
    }
    if opt.nodes < 8 || opt.refine == 0 {
        return invalid("angular table needs at least 8 nodes and refine >= 1");
    }
    let profile = BumpProfile::default();
    let mut out = ModifiedWeight { base: w.clone(), corrections: Vec::new(), q: BTreeMap::new(), p: BTreeMap::new(), profile };
    let Some((jmin, jmax)) = w.shell_range() else { return Ok(out) };
    let mut tables = Vec::new();
    for k in jmin.saturating_sub(1).max(1)..=jmax + 2 {
        let p = shell_projection_constant(&profile, k);
        let loc = Localized { inner: w, k, profile };
        let table = angular_table(&loc, opt.nodes, opt.tol)?;
        let (mn, pad) = table.certified_min(opt.refine);
        out.p.insert(k, p);
        out.q.insert(k, mn - pad);
        tables.push((k, p, mn, pad, table));
    }
    // shells whose projection is negligible next to the largest one are
    // judged against that scale
    let scale = tables.iter().map(|t| t.2.abs()).fold(0.0, f64::max);
    for (k, p, mn, pad, table) in tables {
        if k < opt.first_corrected {
            continue;
        }
        if pad > opt.max_pad_ratio * mn.abs().max(1e-2 * scale) {
            return Err(Error::Numerical(format!(
                "shell {k}: direction sample too coarse (pad {pad:.3e} vs q {mn:.3e}); raise the node count"
            )));
        }
        let spread = table.nodes.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max) - mn;
        let flat = table.nodes.iter().all(|v| v[1].abs() + v[2].abs() + v[3].abs() <= 1e-13 * (1.0 + mn.abs()));
        if flat && spread <= 1e-13 * (1.0 + mn.abs()) {
            // projection already constant: no correction needed
            out.q.insert(k, mn);
            continue;
        }
        out.corrections.push(Correction { k, p, q: mn - pad, pad, table });
    }
    Ok(out)
}
