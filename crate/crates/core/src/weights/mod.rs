//! Nonpositive weights on `R^d` assembled from dyadic shells of cube bumps.
//!
//! Shell `k` lives on the lattice `(W_k / 2) Z^d` with `W_k = 2^k / k^s`. A
//! cube `Q_j` of width `W_k` centred at `j W_k / 2` carries the bump
//! `eta_j(x) = prod_i phi(2 x_i / W_k - j_i)`; these sum to one on all of
//! `R^d`. The shell piece is
//!
//! `omega_k(x) = -a_k chi_k(|x|) sum_{selected j} eta_j(x)`,
//!
//! where `chi_k` rises on `[2^{k-1}, 2^k]`, equals one on `A_k = [2^k, 2^{k+1}]`
//! and falls on `[2^{k+1}, 2^{k+2}]`. The guard keeps the support inside
//! `{2^{k-1} <= |x| <= 2^{k+2}}` even when the cubes are too wide to fit.

mod growth;
mod modify;
mod profile;

pub use growth::{growth_report, regularity_scan, shell_regularity, GrowthOptions, GrowthReport};
pub use modify::{
    modify_weight, projection_derivatives, shell_partition, shell_projection_constant, spherical_projection,
    AngularTable, Correction, Localized, ModifiedPiece, ModifiedWeight, ModifyOptions,
};
pub use profile::{smoothstep_coefficients, BumpProfile};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::jet::{Jet, Taylor};
use crate::sets::{GridSet, MAX_DIM};

/// A scalar function on `R^d` with derivatives through order 3.
pub trait Field: Sync {
    fn dim(&self) -> usize;

    /// Value and derivatives through `order` at `x`.
    fn jet(&self, x: &[f64], order: usize) -> Jet;

    fn value(&self, x: &[f64]) -> f64 {
        self.jet(x, 0).v
    }

    /// Radii `(r0, r1)` with the support inside `{r0 <= |x| <= r1}`; `r1`
    /// may be infinite.
    fn radial_support(&self) -> (f64, f64);

    /// Appends the parameters in `(t0, t1)` where `t -> f(p + t u)` may lose
    /// smoothness. `u` is a unit vector.
    fn line_breaks(&self, p: &[f64], u: &[f64], t0: f64, t1: f64, out: &mut Vec<f64>);

    /// Upper bound for `int_r^inf G*(s) / (1 + s^2) ds` beyond the sampled
    /// range; zero for compactly supported weights.
    fn growth_tail(&self, _r: f64) -> f64 {
        0.0
    }

    /// `c` in the far-field profile `-c |x| / ln(2 + |x|)^2` (zero when compact).
    fn far_coef(&self) -> f64 {
        0.0
    }

    /// Radius beyond which the field is smooth and equal to its far-field
    /// profile.
    fn far_radius(&self) -> f64 {
        self.radial_support().1
    }
}

/// The zero weight.
#[derive(Clone, Copy, Debug)]
pub struct Zero(pub usize);

impl Field for Zero {
    fn dim(&self) -> usize {
        self.0
    }
    fn jet(&self, _x: &[f64], _order: usize) -> Jet {
        Jet::default()
    }
    fn radial_support(&self) -> (f64, f64) {
        (1.0, 1.0)
    }
    fn line_breaks(&self, _p: &[f64], _u: &[f64], _t0: f64, _t1: f64, _out: &mut Vec<f64>) {}
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Parameter interval where `|p + t u| <= r`.
pub fn chord(p: &[f64], u: &[f64], r: f64) -> Option<(f64, f64)> {
    let b = dot(p, u);
    let c = dot(p, p) - r * r;
    let disc = b * b - c;
    if disc < 0.0 || !r.is_finite() {
        return if r.is_finite() { None } else { Some((f64::NEG_INFINITY, f64::INFINITY)) };
    }
    let s = disc.sqrt();
    Some((-b - s, -b + s))
}

pub(crate) fn radius_crossings(p: &[f64], u: &[f64], r: f64, t0: f64, t1: f64, out: &mut Vec<f64>) {
    if let Some((a, b)) = chord(p, u, r) {
        for t in [a, b] {
            if t > t0 && t < t1 {
                out.push(t);
            }
        }
    }
}

fn lattice_crossings(p: &[f64], u: &[f64], step: f64, t0: f64, t1: f64, out: &mut Vec<f64>) {
    for i in 0..p.len() {
        if u[i].abs() < 1e-14 {
            continue;
        }
        let (a, b) = (p[i] + t0 * u[i], p[i] + t1 * u[i]);
        let (lo, hi) = (a.min(b), a.max(b));
        let m0 = (lo / step).ceil() as i64;
        let m1 = (hi / step).floor() as i64;
        for m in m0..=m1 {
            let t = (m as f64 * step - p[i]) / u[i];
            if t > t0 && t < t1 {
                out.push(t);
            }
        }
    }
}

/// `chi_k(r)` with derivatives in `r`.
pub fn shell_guard(profile: &BumpProfile, k: u32, r: f64) -> Taylor {
    let c0 = 2f64.powi(k as i32 - 1);
    let c1 = 2f64.powi(k as i32 + 1);
    let a = profile.step(r / c0 - 1.0);
    let b = profile.step(r / c1 - 1.0);
    let rise = Taylor([a[0], a[1] / c0, a[2] / (c0 * c0), a[3] / (c0 * c0 * c0)]);
    let fall = Taylor([1.0 - b[0], -b[1] / c1, -b[2] / (c1 * c1), -b[3] / (c1 * c1 * c1)]);
    rise.mul(fall)
}

fn axis_jet(i: usize, f: [f64; 4]) -> Jet {
    let mut j = Jet::constant(f[0]);
    j.g[i] = f[1];
    j.h[i][i] = f[2];
    j.t[i][i][i] = f[3];
    j
}

/// `W_k = 2^k / k^s`.
pub fn shell_width(k: u32, s: f64) -> f64 {
    2f64.powi(k as i32) / (k as f64).powf(s)
}

/// `(min, max)` of `|x|` over the box `[lo, hi]`.
pub fn box_radii(lo: &[f64], hi: &[f64]) -> (f64, f64) {
    let mut mn = 0.0;
    let mut mx = 0.0;
    for i in 0..lo.len() {
        let near = if lo[i] <= 0.0 && hi[i] >= 0.0 { 0.0 } else { lo[i].abs().min(hi[i].abs()) };
        let far = lo[i].abs().max(hi[i].abs());
        mn += near * near;
        mx += far * far;
    }
    (mn.sqrt(), mx.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShellPiece {
    pub dim: usize,
    pub k: u32,
    /// Magnitude `a_k >= 0`; the piece takes values in `[-a_k, 0]`.
    pub amplitude: f64,
    pub width: f64,
    /// Sorted lattice indices `j` of the selected cubes.
    pub cubes: Vec<[i64; MAX_DIM]>,
    pub profile: BumpProfile,
    /// Radial band containing the support.
    pub band: (f64, f64),
}

impl ShellPiece {
    pub fn new(dim: usize, k: u32, amplitude: f64, width: f64, mut cubes: Vec<[i64; MAX_DIM]>, profile: BumpProfile) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) || k == 0 {
            return invalid("shell needs 1 <= d <= 3 and k >= 1");
        }
        if !(amplitude >= 0.0 && width > 0.0) {
            return invalid("shell amplitude must be nonnegative and width positive");
        }
        cubes.sort();
        cubes.dedup();
        let half = width / 2.0;
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for j in &cubes {
            let a: Vec<f64> = (0..dim).map(|i| (j[i] as f64 - 1.0) * half).collect();
            let b: Vec<f64> = (0..dim).map(|i| (j[i] as f64 + 1.0) * half).collect();
            let (m, x) = box_radii(&a, &b);
            lo = lo.min(m);
            hi = hi.max(x);
        }
        let g0 = 2f64.powi(k as i32 - 1);
        let g1 = 2f64.powi(k as i32 + 2);
        let band = if cubes.is_empty() { (g0, g0) } else { (lo.max(g0), hi.min(g1)) };
        Ok(ShellPiece { dim, k, amplitude, width, cubes, profile, band })
    }

    pub fn has_cube(&self, j: &[i64; MAX_DIM]) -> bool {
        self.cubes.binary_search(j).is_ok()
    }

    /// `sum_{selected j} eta_j` at `x`, without guard or amplitude.
    pub fn cover_jet(&self, x: &[f64], order: usize) -> Jet {
        let d = self.dim;
        let step = self.width / 2.0;
        let mut cand = [[0i64; 2]; MAX_DIM];
        let mut fac = [[[0.0; 4]; 2]; MAX_DIM];
        for i in 0..d {
            let u = x[i] / step;
            let j0 = u.floor() as i64;
            for (c, j) in [j0, j0 + 1].into_iter().enumerate() {
                let f = self.profile.bump(u - j as f64);
                cand[i][c] = j;
                fac[i][c] = [f[0], f[1] / step, f[2] / (step * step), f[3] / (step * step * step)];
            }
        }
        let mut total = Jet::default();
        for mask in 0..(1usize << d) {
            let mut j = [0i64; MAX_DIM];
            for i in 0..d {
                j[i] = cand[i][(mask >> i) & 1];
            }
            if !self.has_cube(&j) {
                continue;
            }
            let mut prod = axis_jet(0, fac[0][mask & 1]);
            for i in 1..d {
                prod = prod.mul(&axis_jet(i, fac[i][(mask >> i) & 1]), d, order);
            }
            total.add_assign(&prod);
        }
        total
    }
}

impl Field for ShellPiece {
    fn dim(&self) -> usize {
        self.dim
    }

    fn jet(&self, x: &[f64], order: usize) -> Jet {
        let r = norm(&x[..self.dim]);
        if r <= self.band.0 || r >= self.band.1 || self.cubes.is_empty() {
            return Jet::default();
        }
        let cover = self.cover_jet(x, order);
        if cover.v == 0.0 && cover.max_abs(1, self.dim) == 0.0 {
            return Jet::default();
        }
        let chi = shell_guard(&self.profile, self.k, r);
        let guard = Jet::norm(&x[..self.dim], order).compose(chi.0, self.dim, order);
        cover.mul(&guard, self.dim, order).scale(-self.amplitude)
    }

    fn radial_support(&self) -> (f64, f64) {
        self.band
    }

    fn line_breaks(&self, p: &[f64], u: &[f64], t0: f64, t1: f64, out: &mut Vec<f64>) {
        let Some((a, b)) = chord(p, u, self.band.1) else { return };
        let (a, b) = (a.max(t0), b.min(t1));
        if a >= b {
            return;
        }
        lattice_crossings(p, u, self.width / 2.0, a, b, out);
        for m in -1..=2 {
            radius_crossings(p, u, 2f64.powi(self.k as i32 + m), a, b, out);
        }
        radius_crossings(p, u, self.band.0, a, b, out);
        radius_crossings(p, u, self.band.1, t0, t1, out);
    }
}

/// Radially symmetric pieces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RadialPiece {
    /// `-coef eta_{>=10}(|x|) |x| / ln(2 + |x|)^2` with `eta_{>=10}(r) = S((r - 5) / 5)`.
    Omega0 { coef: f64 },
}

impl RadialPiece {
    /// Profile in `r` with derivatives.
    pub fn profile(&self, r: f64) -> Taylor {
        match self {
            RadialPiece::Omega0 { coef } => {
                if r <= 5.0 {
                    return Taylor::constant(0.0);
                }
                let e = BumpProfile::default().step((r - 5.0) / 5.0);
                let eta = Taylor([e[0], e[1] / 5.0, e[2] / 25.0, e[3] / 125.0]);
                let t = Taylor::var(r);
                let q = t.mul(t.add(Taylor::constant(2.0)).ln().powi(2).recip());
                eta.mul(q).scale(-coef)
            }
        }
    }

    fn band(&self) -> (f64, f64) {
        match self {
            RadialPiece::Omega0 { .. } => (5.0, f64::INFINITY),
        }
    }

    fn knots(&self) -> &'static [f64] {
        match self {
            RadialPiece::Omega0 { .. } => &[5.0, 10.0],
        }
    }
}

/// `omega_0(x)`, the slowly decaying radial weight.
pub fn omega0(x: &[f64]) -> f64 {
    RadialPiece::Omega0 { coef: 1.0 }.profile(norm(x)).0[0]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DampingParams {
    pub nu: f64,
    pub mu: f64,
    pub s: f64,
    pub alpha: f64,
    pub k0: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothWeight {
    pub dim: usize,
    pub shells: Vec<ShellPiece>,
    #[serde(default)]
    pub radial: Vec<RadialPiece>,
    pub params: Option<DampingParams>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl SmoothWeight {
    pub fn zero(dim: usize) -> Self {
        SmoothWeight { dim, shells: Vec::new(), radial: Vec::new(), params: None, warnings: Vec::new() }
    }

    pub fn shell(&self, k: u32) -> Option<&ShellPiece> {
        self.shells.iter().find(|p| p.k == k)
    }

    /// Shells `k0 ..= k1` with every lattice cube meeting `A_k` selected and
    /// amplitude `2^k / k^alpha`. With `alpha = 0` this approximates `-|x|`.
    pub fn full_shells(dim: usize, k0: u32, k1: u32, s: f64, alpha: f64) -> Result<Self> {
        let mut w = SmoothWeight::zero(dim);
        for k in k0.max(1)..=k1 {
            let width = shell_width(k, s);
            let step = width / 2.0;
            let (a0, a1) = (2f64.powi(k as i32), 2f64.powi(k as i32 + 1));
            let m = (a1 / step).ceil() as i64 + 1;
            let mut cubes = Vec::new();
            let mut j = [0i64; MAX_DIM];
            full_walk(dim, 0, -m, m, &mut j, &mut |j| {
                let lo: Vec<f64> = (0..dim).map(|i| (j[i] as f64 - 1.0) * step).collect();
                let hi: Vec<f64> = (0..dim).map(|i| (j[i] as f64 + 1.0) * step).collect();
                let (rmin, rmax) = box_radii(&lo, &hi);
                if rmin <= a1 && rmax >= a0 {
                    cubes.push(*j);
                }
            });
            let amp = 2f64.powi(k as i32) / (k as f64).powf(alpha);
            w.shells.push(ShellPiece::new(dim, k, amp, width, cubes, BumpProfile::default())?);
        }
        Ok(w)
    }

    /// Nonzero only on `[k_min - 1, k_max + 2]` shell indices of the partition.
    pub fn shell_range(&self) -> Option<(u32, u32)> {
        let lo = self.shells.iter().filter(|p| !p.cubes.is_empty()).map(|p| p.k).min()?;
        let hi = self.shells.iter().filter(|p| !p.cubes.is_empty()).map(|p| p.k).max()?;
        Some((lo, hi))
    }

    /// Deterministic sample: cube centres, quarter points and `per_cube`
    /// pseudo-random interior points of every selected cube.
    pub fn sample_points(&self, seed: u64, per_cube: usize) -> Vec<Vec<f64>> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = self.dim;
        let mut out = Vec::new();
        for p in &self.shells {
            let half = p.width / 2.0;
            for j in &p.cubes {
                let c: Vec<f64> = (0..d).map(|i| j[i] as f64 * half).collect();
                out.push(c.clone());
                for i in 0..d {
                    for sgn in [-0.5, 0.5] {
                        let mut q = c.clone();
                        q[i] += sgn * half;
                        out.push(q);
                    }
                }
                for _ in 0..per_cube {
                    out.push((0..d).map(|i| c[i] + half * (2.0 * rng.random::<f64>() - 1.0)).collect());
                }
            }
        }
        out
    }
}

fn full_walk(dim: usize, axis: usize, lo: i64, hi: i64, j: &mut [i64; MAX_DIM], f: &mut impl FnMut(&[i64; MAX_DIM])) {
    if axis == dim {
        f(j);
        return;
    }
    for v in lo..=hi {
        j[axis] = v;
        full_walk(dim, axis + 1, lo, hi, j, f);
    }
}

impl Field for SmoothWeight {
    fn dim(&self) -> usize {
        self.dim
    }

    fn jet(&self, x: &[f64], order: usize) -> Jet {
        let r = norm(&x[..self.dim]);
        let mut total = Jet::default();
        for p in &self.shells {
            if r > p.band.0 && r < p.band.1 {
                total.add_assign(&p.jet(x, order));
            }
        }
        if !self.radial.is_empty() && r > 0.0 {
            let nj = Jet::norm(&x[..self.dim], order);
            for p in &self.radial {
                let prof = p.profile(r);
                if prof.0.iter().any(|v| *v != 0.0) {
                    total.add_assign(&nj.compose(prof.0, self.dim, order));
                }
            }
        }
        total
    }

    fn radial_support(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for p in &self.shells {
            if !p.cubes.is_empty() {
                lo = lo.min(p.band.0);
                hi = hi.max(p.band.1);
            }
        }
        for p in &self.radial {
            lo = lo.min(p.band().0);
            hi = hi.max(p.band().1);
        }
        if lo > hi {
            (1.0, 1.0)
        } else {
            (lo, hi)
        }
    }

    fn line_breaks(&self, p: &[f64], u: &[f64], t0: f64, t1: f64, out: &mut Vec<f64>) {
        for s in &self.shells {
            s.line_breaks(p, u, t0, t1, out);
        }
        for r in &self.radial {
            for &k in r.knots() {
                radius_crossings(p, u, k, t0, t1, out);
            }
        }
    }

    fn far_coef(&self) -> f64 {
        self.radial.iter().map(|p| match p {
            RadialPiece::Omega0 { coef } => *coef,
        }).sum()
    }

    fn far_radius(&self) -> f64 {
        let compact = self.shells.iter().filter(|p| !p.cubes.is_empty()).map(|p| p.band.1).fold(0.0, f64::max);
        let knots = self.radial.iter().flat_map(|p| p.knots().iter().copied()).fold(0.0, f64::max);
        compact.max(knots)
    }

    fn growth_tail(&self, r: f64) -> f64 {
        // G*(s) <= (15/8) coef s / ln(s/2)^2 for the omega_0 profile
        self.radial
            .iter()
            .map(|p| match p {
                RadialPiece::Omega0 { coef } => {
                    if r > 4.0 {
                        1.875 * coef / (r / 2.0).ln()
                    } else {
                        f64::INFINITY
                    }
                }
            })
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DampingOptions {
    pub nu: f64,
    pub mu: f64,
    pub s: f64,
    pub alpha: f64,
    pub profile_order: usize,
}

impl DampingOptions {
    pub fn new(nu: f64, mu: f64, alpha: f64) -> Self {
        DampingOptions { nu, mu, s: 0.2, alpha, profile_order: 4 }
    }
}

/// `1 - gamma / 10`, the exponent matched to a measured intersection decay.
pub fn default_alpha(gamma: f64, s: f64) -> Result<f64> {
    let a = 1.0 - 0.1 * gamma;
    if !(a > 3.0 * s && a < 1.0) {
        return invalid(format!("alpha = 1 - gamma/10 = {a} is not in (3s, 1); gamma = {gamma}"));
    }
    Ok(a)
}

/// Smallest `k >= 2` with `W_k > mu`.
pub fn first_shell(mu: f64, s: f64) -> u32 {
    let mut k = 2;
    while shell_width(k, s) <= mu {
        k += 1;
    }
    k
}

/// Cubes of shell `k` meeting `y ∩ A_k`.
fn select_cubes(y: &GridSet, k: u32, width: f64) -> Vec<[i64; MAX_DIM]> {
    let d = y.dim();
    let step = width / 2.0;
    let (a0, a1) = (2f64.powi(k as i32), 2f64.powi(k as i32 + 1));
    let cw = y.cell_width();
    let mut out = std::collections::BTreeSet::new();
    for idx in y.iter() {
        let c = y.coords(idx);
        let lo = y.cell_lower(&c[..d]);
        let hi: Vec<f64> = (0..d).map(|i| lo[i] + cw).collect();
        let (rmin, rmax) = box_radii(&lo[..d], &hi);
        if rmin > a1 || rmax < a0 {
            continue;
        }
        let mut range = [(0i64, -1i64); MAX_DIM];
        for i in 0..d {
            range[i] = (((lo[i] / step) - 1.0).ceil() as i64, ((hi[i] / step) + 1.0).floor() as i64);
        }
        let mut j = [0i64; MAX_DIM];
        let mut rec = |j: &[i64; MAX_DIM]| {
            let blo: Vec<f64> = (0..d).map(|i| lo[i].max((j[i] as f64 - 1.0) * step)).collect();
            let bhi: Vec<f64> = (0..d).map(|i| hi[i].min((j[i] as f64 + 1.0) * step)).collect();
            if (0..d).any(|i| blo[i] > bhi[i]) {
                return;
            }
            let (m, x) = box_radii(&blo, &bhi);
            if m <= a1 && x >= a0 {
                out.insert(*j);
            }
        };
        walk_ranges(d, 0, &range, &mut j, &mut rec);
    }
    out.into_iter().collect()
}

fn walk_ranges(d: usize, axis: usize, range: &[(i64, i64); MAX_DIM], j: &mut [i64; MAX_DIM], f: &mut impl FnMut(&[i64; MAX_DIM])) {
    if axis == d {
        f(j);
        return;
    }
    for v in range[axis].0..=range[axis].1 {
        j[axis] = v;
        walk_ranges(d, axis + 1, range, j, f);
    }
}

/// Damping weight of a set `y` (embedded coordinates): shells `k >= k0`
/// with amplitude `2^k / k^alpha` on every cube meeting `y ∩ A_k`.
pub fn build_damping_weight(y: &GridSet, opt: &DampingOptions) -> Result<SmoothWeight> {
    let DampingOptions { nu, mu, s, alpha, profile_order } = *opt;
    if !(s > 0.0 && s < 1.0) {
        return invalid(format!("s = {s} outside (0, 1)"));
    }
    if alpha <= 3.0 * s {
        return invalid(format!("alpha = {alpha} must exceed 3s = {}", 3.0 * s));
    }
    if alpha >= 1.0 {
        return invalid(format!("alpha = {alpha} must be below 1"));
    }
    if !(mu > 0.0 && nu > 0.0) {
        return invalid("mu and nu must be positive");
    }
    let profile = BumpProfile::new(profile_order)?;
    let k0 = first_shell(mu, s);
    let rmax = y.max_radius();
    let mut w = SmoothWeight::zero(y.dim());
    w.params = Some(DampingParams { nu, mu, s, alpha, k0 });
    if rmax < 2f64.powi(k0 as i32) {
        w.warnings.push(format!("set extent {rmax:.3} is below 2^k0 = {}; weight is zero", 2f64.powi(k0 as i32)));
        return Ok(w);
    }
    let mut k = k0;
    while 2f64.powi(k as i32) <= rmax {
        let width = shell_width(k, s);
        let cubes = select_cubes(y, k, width);
        if !cubes.is_empty() {
            let amp = 2f64.powi(k as i32) / (k as f64).powf(alpha);
            w.shells.push(ShellPiece::new(y.dim(), k, amp, width, cubes, profile)?);
        }
        k += 1;
    }
    Ok(w)
}

/// `D^a w(x)` flattened row-major (`d^a` entries).
pub fn eval_weight(w: &dyn Field, x: &[f64], a: usize) -> Result<Vec<f64>> {
    let d = w.dim();
    if x.len() != d {
        return invalid("point dimension differs from the weight");
    }
    if a > 3 {
        return invalid("derivative order above 3");
    }
    let j = w.jet(x, a);
    Ok(match a {
        0 => vec![j.v],
        1 => j.g[..d].to_vec(),
        2 => (0..d).flat_map(|i| (0..d).map(move |k| (i, k))).map(|(i, k)| j.h[i][k]).collect(),
        _ => {
            let mut v = Vec::with_capacity(d * d * d);
            for i in 0..d {
                for k in 0..d {
                    for l in 0..d {
                        v.push(j.t[i][k][l]);
                    }
                }
            }
            v
        }
    })
}

/// `-(1/20) |x| / ln(2 + |x|)^alpha`.
pub fn decay_envelope(x: &[f64], alpha: f64) -> f64 {
    let r = norm(x);
    -r / (20.0 * (2.0 + r).ln().powf(alpha))
}
