//! The separately harmonic extension `E omega(x + iy)`, line transforms of a
//! weight, complex Hessians and plurisubharmonicity certificates.
//!
//! Line integrals run over the breakpoints reported by [`Field::line_breaks`].
//! Weights with a far-field profile `-c |x| / ln(2 + |x|)^2` are integrated
//! exactly on a finite window, numerically in `ln s` up to `s = e^L`, and the
//! remainder beyond `e^L` is added from the leading asymptotics.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::quad::{clip_knots, rule, Integrator};
use crate::sample::halton;
use crate::weights::{chord, Field, ModifiedWeight, RadialPiece, SmoothWeight};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl ComplexPoint {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() || x.is_empty() {
            return invalid("real and imaginary parts must have the same positive length");
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return invalid("complex point has a non-finite coordinate");
        }
        Ok(ComplexPoint { x, y })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn y_norm(&self) -> f64 {
        norm(&self.y)
    }

    /// `|z|_inf = max_j |z_j|`.
    pub fn sup_norm(&self) -> f64 {
        self.x.iter().zip(&self.y).map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max)
    }

    /// `<y> = (1 + |y|^2)^{1/2}`.
    pub fn japanese_y(&self) -> f64 {
        (1.0 + self.y_norm().powi(2)).sqrt()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !(n > 0.0) || !n.is_finite() {
        return invalid("direction must be a nonzero finite vector");
    }
    Ok(v.iter().map(|a| a / n).collect())
}

fn along(x0: &[f64], u: &[f64], s: f64) -> Vec<f64> {
    x0.iter().zip(u).map(|(a, b)| a + s * b).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineOptions {
    /// Absolute tolerance of the adaptive quadrature.
    pub tol: f64,
    /// One Gauss–Legendre panel per breakpoint interval instead of adaptive
    /// refinement; the result is then a smooth function of the line.
    pub fixed: bool,
    /// Far-field integrals are carried numerically up to `s = e^tail_log`.
    pub tail_log: f64,
}

impl Default for LineOptions {
    fn default() -> Self {
        LineOptions { tol: 1e-10, fixed: false, tail_log: 60.0 }
    }
}

impl LineOptions {
    pub fn fixed() -> Self {
        LineOptions { fixed: true, ..Default::default() }
    }
}

struct Window {
    knots: Vec<f64>,
    /// Half-width of the finite window when the field has a far-field profile.
    far: Option<f64>,
}

/// Breakpoints of `s -> w(x0 + s u)` over the part of the line that needs
/// exact treatment; `None` when the line misses the support.
fn window(w: &dyn Field, x0: &[f64], u: &[f64]) -> Option<Window> {
    let mut knots = Vec::new();
    if w.far_coef() == 0.0 {
        let (r0, r1) = w.radial_support();
        if !(r0 < r1) {
            return None;
        }
        let (a, b) = chord(x0, u, r1)?;
        if !(a < b) {
            return None;
        }
        w.line_breaks(x0, u, a, b, &mut knots);
        clip_knots(&mut knots, a, b);
        return Some(Window { knots, far: None });
    }
    let t = norm(x0) + w.far_radius() + 1.0;
    w.line_breaks(x0, u, -t, t, &mut knots);
    // geometric knots around the closest approach resolve the radial profile
    let foot = -dot(x0, u);
    let mut g = 1.0;
    while g < 2.0 * t {
        knots.push(foot - g);
        knots.push(foot + g);
        g *= 2.0;
    }
    knots.push(foot);
    clip_knots(&mut knots, -t, t);
    Some(Window { knots, far: Some(t) })
}

fn quad_knots<F: FnMut(f64, &mut [f64])>(k: usize, knots: &[f64], opt: &LineOptions, mut f: F) -> Vec<f64> {
    if !opt.fixed {
        return Integrator::new(k, opt.tol).integrate(f, knots);
    }
    let (x, wt) = rule();
    let mut out = vec![0.0; k];
    let mut buf = vec![0.0; k];
    for pair in knots.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b <= a {
            continue;
        }
        let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
        for (xi, wi) in x.iter().zip(wt) {
            f(c + h * xi, &mut buf);
            for (o, v) in out.iter_mut().zip(&buf) {
                *o += wi * h * v;
            }
        }
    }
    out
}

/// `int_t^{e^L} f(s) ds` by panels of unit width in `ln s`.
fn far_tail<F: FnMut(f64, &mut [f64])>(k: usize, t: f64, log_max: f64, mut f: F) -> Vec<f64> {
    let mut knots = Vec::new();
    let mut u = t.ln();
    while u < log_max {
        knots.push(u);
        u += 1.0;
    }
    knots.push(log_max);
    let opt = LineOptions::fixed();
    quad_knots(k, &knots, &opt, |u, out| {
        let s = u.exp();
        f(s, out);
        out.iter_mut().for_each(|v| *v *= s);
    })
}

/// `E omega(x + iy) = (1/pi) int omega(x + t y) dt / (1 + t^2)`.
///
/// The integral runs in `phi = arccot(s / |y|)` on each half line, where `s`
/// is arc length; this is the `t = tan(theta)` compactification measured from
/// the far end, which keeps full precision for small `|y|`.
pub fn poisson_extend(w: &dyn Field, z: &ComplexPoint, opt: &LineOptions) -> Result<f64> {
    if z.dim() != w.dim() {
        return invalid("point dimension differs from the weight");
    }
    let rho = z.y_norm();
    if rho == 0.0 {
        return Ok(w.value(&z.x));
    }
    let u = unit(&z.y)?;
    let Some(win) = window(w, &z.x, &u) else { return Ok(0.0) };
    let mut total = 0.0;
    for sign in [1.0, -1.0] {
        let mut ss: Vec<f64> = win.knots.iter().map(|s| sign * s).filter(|s| *s >= 0.0).collect();
        let (lo, hi) = (win.knots[0], win.knots[win.knots.len() - 1]);
        if sign * lo < 0.0 || sign * hi < 0.0 {
            ss.push(0.0);
        }
        if ss.len() < 2 {
            continue;
        }
        let mut phis: Vec<f64> = ss.iter().map(|s| rho.atan2(*s)).collect();
        phis.sort_by(f64::total_cmp);
        phis.dedup();
        let v = quad_knots(1, &phis, opt, |phi, out| {
            let s = rho * phi.cos() / phi.sin();
            out[0] = w.value(&along(&z.x, &u, sign * s));
        });
        total += v[0];
        if let Some(t) = win.far {
            let c = w.far_coef();
            let tail = far_tail(1, t, opt.tail_log, |s, out| {
                out[0] = w.value(&along(&z.x, &u, sign * s)) * rho / (rho * rho + s * s);
            });
            total += tail[0] - c * rho / opt.tail_log;
        }
    }
    Ok(total / PI)
}

/// `H[f'](t0)` for `f(s) = w(x0 + s yhat)`, with
/// `H[g](t) = p.v. (1/pi) int g(t - s) ds / s`.
pub fn hilbert_restriction(w: &dyn Field, x0: &[f64], yhat: &[f64], t0: f64, opt: &LineOptions) -> Result<f64> {
    if x0.len() != w.dim() || yhat.len() != w.dim() {
        return invalid("line dimension differs from the weight");
    }
    let u = unit(yhat)?;
    let Some(win) = window(w, x0, &u) else { return Ok(0.0) };
    let (a, b) = (win.knots[0], win.knots[win.knots.len() - 1]);
    let tmax = (a - t0).abs().max((b - t0).abs());
    let mut knots: Vec<f64> = win.knots.iter().map(|k| (k - t0).abs()).collect();
    clip_knots(&mut knots, 0.0, tmax);
    let d1 = |s: f64| w.jet(&along(x0, &u, s), 1).grad_dot(&u);
    let g = |t: f64, out: &mut [f64]| out[0] = (d1(t0 - t) - d1(t0 + t)) / t;
    let mut total = quad_knots(1, &knots, opt, g)[0];
    if win.far.is_some() {
        let c = w.far_coef();
        total += far_tail(1, tmax, opt.tail_log, g)[0];
        let l = opt.tail_log;
        total += 2.0 * c * (1.0 / l - 1.0 / (l * l));
    }
    Ok(total / PI)
}

/// `int D^2 w(x0 + s u) ds` as a row-major `d x d` matrix (no `1/pi`).
pub fn line_hessian(w: &dyn Field, x0: &[f64], yhat: &[f64], opt: &LineOptions) -> Result<Vec<f64>> {
    let d = w.dim();
    if x0.len() != d || yhat.len() != d {
        return invalid("line dimension differs from the weight");
    }
    let u = unit(yhat)?;
    let Some(win) = window(w, x0, &u) else { return Ok(vec![0.0; d * d]) };
    let h = |s: f64, out: &mut [f64]| {
        let j = w.jet(&along(x0, &u, s), 2);
        for a in 0..d {
            for b in 0..d {
                out[a * d + b] = j.h[a][b];
            }
        }
    };
    let mut m = quad_knots(d * d, &win.knots, opt, h);
    if let Some(t) = win.far {
        let c = w.far_coef();
        let l = opt.tail_log;
        let along_u = c * (1.0 / (l * l) - 2.0 / (l * l * l));
        let across = -c * (1.0 / l - 1.0 / (l * l));
        for sign in [1.0, -1.0] {
            let tail = far_tail(d * d, t, l, |s, out| h(sign * s, out));
            for (mi, ti) in m.iter_mut().zip(&tail) {
                *mi += ti;
            }
            for a in 0..d {
                for b in 0..d {
                    let uu = u[a] * u[b];
                    let id = if a == b { 1.0 } else { 0.0 };
                    m[a * d + b] += along_u * uu + across * (id - uu);
                }
            }
        }
    }
    Ok(m)
}

/// `int <D^2 w(x0 + s yhat) v, v> ds` over the whole line, without the
/// factor `1/pi`; `v` must be orthogonal to `yhat`.
pub fn second_deriv_line_integral(w: &dyn Field, x0: &[f64], yhat: &[f64], v: &[f64], opt: &LineOptions) -> Result<f64> {
    let d = w.dim();
    if v.len() != d {
        return invalid("direction dimension differs from the weight");
    }
    let (u, vv) = (unit(yhat)?, unit(v)?);
    if dot(&u, &vv).abs() > 1e-12 {
        return invalid("second-derivative direction must be orthogonal to the line");
    }
    let m = line_hessian(w, x0, &u, opt)?;
    Ok(quad_form(&m, &vv, d))
}

/// `int_0^inf <D^2 w(s e) v, v> ds` along a ray from the origin.
pub fn ray_second_derivative(w: &dyn Field, e: &[f64], v: &[f64], opt: &LineOptions) -> Result<f64> {
    let d = w.dim();
    let (e, v) = (unit(e)?, unit(v)?);
    let (r0, r1) = w.radial_support();
    if !(r0 < r1) {
        return Ok(0.0);
    }
    if r0 <= 0.0 || !r1.is_finite() {
        return invalid("ray integral needs a compact support away from the origin");
    }
    let origin = vec![0.0; d];
    let mut knots = Vec::new();
    w.line_breaks(&origin, &e, r0, r1, &mut knots);
    clip_knots(&mut knots, r0, r1);
    Ok(quad_knots(1, &knots, opt, |s, out| out[0] = w.jet(&along(&origin, &e, s), 2).hess_form(&v, &v))[0])
}

fn quad_form(m: &[f64], v: &[f64], d: usize) -> f64 {
    let mut s = 0.0;
    for a in 0..d {
        for b in 0..d {
            s += m[a * d + b] * v[a] * v[b];
        }
    }
    s
}

/// Orthonormal basis of the complement of the unit vector `u`.
fn complement(u: &[f64]) -> Vec<Vec<f64>> {
    let d = u.len();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for i in 0..d {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        let c = dot(&e, u);
        e.iter_mut().zip(u).for_each(|(a, b)| *a -= c * b);
        for b in &basis {
            let c = dot(&e, b);
            e.iter_mut().zip(b).for_each(|(a, q)| *a -= c * q);
        }
        let n = norm(&e);
        if n > 1e-8 {
            basis.push(e.iter().map(|a| a / n).collect());
        }
        if basis.len() == d - 1 {
            break;
        }
    }
    basis
}

/// Smallest and largest eigenvalue of `m` restricted to `u`'s complement.
pub fn perp_eigs(m: &[f64], u: &[f64]) -> (f64, f64) {
    let d = u.len();
    let basis = complement(u);
    if basis.is_empty() {
        return (0.0, 0.0);
    }
    let k = basis.len();
    let r = DMatrix::from_fn(k, k, |i, j| {
        let mut s = 0.0;
        for a in 0..d {
            for b in 0..d {
                s += basis[i][a] * m[a * d + b] * basis[j][b];
            }
        }
        s
    });
    let r = (&r + r.transpose()) * 0.5;
    let ev = SymmetricEigen::new(r).eigenvalues;
    (ev.min(), ev.max())
}

/// Hermitian `d x d` form `re + i im`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HermitianForm {
    pub dim: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl HermitianForm {
    pub fn zeros(dim: usize) -> Self {
        HermitianForm { dim, re: vec![0.0; dim * dim], im: vec![0.0; dim * dim] }
    }

    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        Complex64::new(self.re[i * self.dim + j], self.im[i * self.dim + j])
    }

    pub fn add_real(&mut self, m: &[f64], c: f64) {
        self.re.iter_mut().zip(m).for_each(|(a, b)| *a += c * b);
    }

    /// Largest deviation from `H = H^*`.
    pub fn hermitian_defect(&self) -> f64 {
        let d = self.dim;
        let mut e: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                e = e.max((self.entry(i, j) - self.entry(j, i).conj()).norm());
            }
        }
        e
    }

    /// `<H v, v>` for complex `v`.
    pub fn quad(&self, v: &[Complex64]) -> Complex64 {
        let d = self.dim;
        let mut s = Complex64::new(0.0, 0.0);
        for i in 0..d {
            for j in 0..d {
                s += self.entry(i, j) * v[j] * v[i].conj();
            }
        }
        s
    }

    pub fn quad_real(&self, v: &[f64]) -> Complex64 {
        let c: Vec<Complex64> = v.iter().map(|a| Complex64::new(*a, 0.0)).collect();
        self.quad(&c)
    }

    /// Eigenvalues in ascending order, from the real symmetric embedding
    /// `[[A, -B], [B, A]]` (each eigenvalue of `A + iB` appears twice).
    pub fn eigenvalues(&self) -> Vec<f64> {
        let d = self.dim;
        let m = DMatrix::from_fn(2 * d, 2 * d, |i, j| {
            let (bi, bj) = (i / d, j / d);
            let (a, b) = (i % d, j % d);
            let re = self.re[a * d + b];
            let im = self.im[a * d + b];
            match (bi, bj) {
                (0, 0) | (1, 1) => re,
                (0, 1) => -im,
                _ => im,
            }
        });
        let m = (&m + m.transpose()) * 0.5;
        let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev.into_iter().step_by(2).collect()
    }

    pub fn min_eig(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn max_abs_diff(&self, o: &HermitianForm) -> f64 {
        self.re.iter().zip(&o.re).chain(self.im.iter().zip(&o.im)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.re.iter().chain(&self.im).map(|a| a.abs()).fold(0.0, f64::max)
    }
}

/// A summand of a function `u` on `C^d`.
#[derive(Clone, Copy)]
pub enum Term<'a> {
    /// `coef E omega`.
    EOmega { coef: f64, field: &'a dyn Field },
    /// `coef |y|`.
    AbsY { coef: f64 },
    /// `coef (<y> - 1)`.
    JapaneseY { coef: f64 },
    /// `coef log |z|_inf`.
    LogSupNorm { coef: f64 },
}

pub fn u_value(terms: &[Term], z: &ComplexPoint, opt: &LineOptions) -> Result<f64> {
    let mut s = 0.0;
    for t in terms {
        s += match t {
            Term::EOmega { coef, field } => coef * poisson_extend(*field, z, opt)?,
            Term::AbsY { coef } => coef * z.y_norm(),
            Term::JapaneseY { coef } => coef * (z.japanese_y() - 1.0),
            Term::LogSupNorm { coef } => {
                let m = z.sup_norm();
                if m == 0.0 {
                    return invalid("log |z|_inf at z = 0");
                }
                coef * m.ln()
            }
        };
    }
    Ok(s)
}

/// `ddbar u` assembled from the closed forms of each term.
pub fn complex_hessian(terms: &[Term], z: &ComplexPoint, opt: &LineOptions) -> Result<HermitianForm> {
    let d = z.dim();
    let mut h = HermitianForm::zeros(d);
    let rho = z.y_norm();
    for t in terms {
        match t {
            Term::EOmega { coef, field } => {
                if field.dim() != d {
                    return invalid("point dimension differs from the weight");
                }
                if rho == 0.0 {
                    return invalid("ddbar E omega is singular on the real locus");
                }
                let m = line_hessian(*field, &z.x, &z.y, opt)?;
                h.add_real(&m, coef / (4.0 * PI * rho));
            }
            Term::AbsY { coef } => {
                if rho == 0.0 {
                    return invalid("|y| is not smooth at y = 0");
                }
                let m: Vec<f64> = (0..d * d)
                    .map(|k| {
                        let (a, b) = (k / d, k % d);
                        let id = if a == b { 1.0 } else { 0.0 };
                        (id - z.y[a] * z.y[b] / (rho * rho)) / (4.0 * rho)
                    })
                    .collect();
                h.add_real(&m, *coef);
            }
            Term::JapaneseY { coef } => {
                let jy = z.japanese_y();
                let m: Vec<f64> = (0..d * d)
                    .map(|k| {
                        let (a, b) = (k / d, k % d);
                        let id = if a == b { 1.0 } else { 0.0 };
                        (id * jy * jy - z.y[a] * z.y[b]) / (4.0 * jy.powi(3))
                    })
                    .collect();
                h.add_real(&m, *coef);
            }
            Term::LogSupNorm { .. } => {
                if z.x.iter().zip(&z.y).any(|(a, b)| *a == 0.0 && *b == 0.0) {
                    return invalid("log |z|_inf term sampled on a coordinate hyperplane");
                }
                // log |z_j| is pluriharmonic where a single coordinate dominates
            }
        }
    }
    Ok(h)
}

/// `ddbar u` from central differences in the `2d` real coordinates:
/// `d^2 u / dz_j dzbar_k = (u_{x_j x_k} + u_{y_j y_k} + i (u_{x_j y_k} - u_{y_j x_k})) / 4`.
pub fn fd_complex_hessian(terms: &[Term], z: &ComplexPoint, h: f64, opt: &LineOptions) -> Result<HermitianForm> {
    let d = z.dim();
    let n = 2 * d;
    let base: Vec<f64> = z.x.iter().chain(&z.y).copied().collect();
    let eval = |p: &[f64]| u_value(terms, &ComplexPoint { x: p[..d].to_vec(), y: p[d..].to_vec() }, opt);
    let u0 = eval(&base)?;
    let mut r = vec![0.0; n * n];
    for a in 0..n {
        for b in a..n {
            let v = if a == b {
                let mut p = base.clone();
                p[a] += h;
                let up = eval(&p)?;
                p[a] -= 2.0 * h;
                let um = eval(&p)?;
                (up - 2.0 * u0 + um) / (h * h)
            } else {
                let mut acc = 0.0;
                for (sa, sb, sg) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                    let mut p = base.clone();
                    p[a] += sa * h;
                    p[b] += sb * h;
                    acc += sg * eval(&p)?;
                }
                acc / (4.0 * h * h)
            };
            r[a * n + b] = v;
            r[b * n + a] = v;
        }
    }
    let mut out = HermitianForm::zeros(d);
    for j in 0..d {
        for k in 0..d {
            out.re[j * d + k] = 0.25 * (r[j * n + k] + r[(d + j) * n + d + k]);
            out.im[j * d + k] = 0.25 * (r[j * n + d + k] - r[(d + j) * n + k]);
        }
    }
    Ok(out)
}

/// One Richardson step on [`fd_complex_hessian`] at `h` and `h / 2`.
pub fn fd_complex_hessian_extrapolated(terms: &[Term], z: &ComplexPoint, h: f64, opt: &LineOptions) -> Result<HermitianForm> {
    let a = fd_complex_hessian(terms, z, h, opt)?;
    let mut b = fd_complex_hessian(terms, z, 0.5 * h, opt)?;
    for (bi, ai) in b.re.iter_mut().zip(&a.re).chain(b.im.iter_mut().zip(&a.im)) {
        *bi = (4.0 * *bi - ai) / 3.0;
    }
    Ok(b)
}

/// The step `1e-4 max(1, |z|)` used for finite-difference cross-checks.
pub fn fd_step(z: &ComplexPoint) -> f64 {
    1e-4 * z.x.iter().chain(&z.y).map(|v| v * v).sum::<f64>().sqrt().max(1.0)
}

/// A line `x + s dir`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineSample {
    pub x: Vec<f64>,
    pub dir: Vec<f64>,
}

/// Sampled line constants of a weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineConstants {
    /// `max |H[(w|l)'](0)|` over the lines.
    pub c1: f64,
    /// `max(0, -min)` of the eigenvalues of `(1/pi) int D^2 w` on `dir`'s complement.
    pub c2: f64,
    /// Smallest and largest of those eigenvalues.
    pub m_min: f64,
    pub m_max: f64,
    pub lines: usize,
}

impl LineConstants {
    pub fn max_c(&self) -> f64 {
        self.c1.max(self.c2)
    }
}

pub fn line_constants(w: &dyn Field, lines: &[LineSample], opt: &LineOptions) -> Result<LineConstants> {
    let rows: Result<Vec<(f64, f64, f64)>> = lines
        .par_iter()
        .map(|l| {
            let u = unit(&l.dir)?;
            let hil = hilbert_restriction(w, &l.x, &u, 0.0, opt)?;
            let m = line_hessian(w, &l.x, &u, opt)?;
            let (lo, hi) = perp_eigs(&m, &u);
            Ok((hil.abs(), lo / PI, hi / PI))
        })
        .collect();
    let rows = rows?;
    let c1 = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let m_min = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let m_max = rows.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
    Ok(LineConstants {
        c1,
        c2: if rows.is_empty() { 0.0 } else { (-m_min).max(0.0) },
        m_min: if rows.is_empty() { 0.0 } else { m_min },
        m_max: if rows.is_empty() { 0.0 } else { m_max },
        lines: rows.len(),
    })
}

fn sphere_point(h: &[f64], d: usize) -> Vec<f64> {
    match d {
        1 => vec![if h[0] < 0.5 { -1.0 } else { 1.0 }],
        2 => {
            let t = 2.0 * PI * h[0];
            vec![t.cos(), t.sin()]
        }
        _ => {
            let zc = 2.0 * h[0] - 1.0;
            let r = (1.0 - zc * zc).max(0.0).sqrt();
            let t = 2.0 * PI * h[1];
            vec![r * t.cos(), r * t.sin(), zc]
        }
    }
}

fn ball_point(h: &[f64], d: usize, radius: f64) -> Vec<f64> {
    let dir = sphere_point(&h[1..], d);
    let r = radius * h[0].powf(1.0 / d as f64);
    dir.iter().map(|a| a * r).collect()
}

/// Deterministic sample of `C^d` for certificates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub count: usize,
    /// Starting index in the low-discrepancy sequence.
    pub offset: u64,
    /// `|x| <= radius`.
    pub radius: f64,
    pub y_min: f64,
    pub y_max: f64,
    /// Radii where pieces join; points are placed on them.
    pub shell_radii: Vec<f64>,
    pub per_radius: usize,
}

impl SampleSpec {
    /// `|x| <= 2^{k_max + 2}` (the support radius), `1e-3 <= |y| <= 10`, and
    /// points on every `2^{k-1}, 2^k, 2^{k+1}, 2^{k+2}` of the shells.
    pub fn for_weight(w: &ModifiedWeight, count: usize) -> Self {
        let mut radii: Vec<f64> = Vec::new();
        let ks: Vec<u32> = w.base.shells.iter().map(|p| p.k).chain(w.corrections.iter().map(|c| c.k)).collect();
        for k in ks {
            for m in -1..=2 {
                radii.push(2f64.powi(k as i32 + m));
            }
        }
        radii.sort_by(f64::total_cmp);
        radii.dedup();
        let (_, r1) = w.radial_support();
        SampleSpec {
            count,
            offset: 1,
            radius: if r1.is_finite() && r1 > 0.0 { r1 } else { 1.0 },
            y_min: 1e-3,
            y_max: 10.0,
            shell_radii: radii,
            per_radius: 4,
        }
    }
}

pub fn sample_points(dim: usize, spec: &SampleSpec) -> Vec<ComplexPoint> {
    let mut out = Vec::with_capacity(spec.count);
    let adversarial = spec.shell_radii.len() * spec.per_radius;
    let regular = spec.count.saturating_sub(adversarial);
    let nh = 2 * dim + 1;
    let lr = (spec.y_max / spec.y_min).ln();
    for i in 0..regular as u64 {
        let h = halton(spec.offset + i, nh.min(8));
        let x = ball_point(&h[..dim], dim, spec.radius);
        let mag = spec.y_min * (lr * h[dim]).exp();
        let dir = sphere_point(&h[dim + 1..], dim);
        out.push(ComplexPoint { x, y: dir.iter().map(|a| a * mag).collect() });
    }
    let mut j = 0u64;
    'outer: for &r in &spec.shell_radii {
        for m in 0..spec.per_radius {
            if out.len() >= spec.count {
                break 'outer;
            }
            let h = halton(spec.offset + 7919 + j, nh.min(8));
            j += 1;
            let xd = sphere_point(&h[1..], dim);
            let x: Vec<f64> = xd.iter().map(|a| a * r).collect();
            // small |y|, alternately across and along the radius
            let mag = spec.y_min * (1.0 + 99.0 * (m % 2) as f64);
            let dir = if m % 2 == 0 || dim == 1 {
                xd.clone()
            } else {
                let c = complement(&xd);
                c[0].clone()
            };
            out.push(ComplexPoint { x, y: dir.iter().map(|a| a * mag).collect() });
        }
    }
    out
}

/// The lines `x + s y` through sampled points.
pub fn lines_of(points: &[ComplexPoint]) -> Vec<LineSample> {
    points.iter().filter(|z| z.y_norm() > 0.0).map(|z| LineSample { x: z.x.clone(), dir: z.y.clone() }).collect()
}

/// `count` lines through points of the ball `|x| <= radius`.
pub fn scan_lines(dim: usize, count: usize, radius: f64, offset: u64) -> Vec<LineSample> {
    (0..count as u64)
        .map(|i| {
            let h = halton(offset + i, (2 * dim).min(8));
            LineSample { x: ball_point(&h[..dim], dim, radius), dir: sphere_point(&h[dim..], dim) }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PshCertificate {
    pub sample_points: Vec<ComplexPoint>,
    pub min_eig: Vec<f64>,
    pub global_min: f64,
    pub constant_c: f64,
    pub tolerance: f64,
    /// Point attaining `global_min`.
    pub witness: Option<ComplexPoint>,
    /// `max |H[(w|l)'](0)|` over the sample lines.
    pub c1_sampled: f64,
    /// `C - c1_sampled`, the real-locus surrogate margin.
    pub real_margin: f64,
    pub pass: bool,
}

/// Smallest eigenvalue of `ddbar(E w + C|y|)` at every sample point with
/// `y != 0`, plus the Hilbert margin for the real locus.
pub fn psh_certificate(w: &dyn Field, c: f64, points: &[ComplexPoint], tolerance: f64, opt: &LineOptions) -> Result<PshCertificate> {
    if !(c >= 0.0) {
        return invalid("certificate constant must be nonnegative");
    }
    let pts: Vec<ComplexPoint> = points.iter().filter(|z| z.y_norm() > 0.0).cloned().collect();
    let rows: Result<Vec<(f64, f64)>> = pts
        .par_iter()
        .map(|z| {
            let terms = [Term::EOmega { coef: 1.0, field: w }, Term::AbsY { coef: c }];
            let h = complex_hessian(&terms, z, opt)?;
            let hil = hilbert_restriction(w, &z.x, &z.y, 0.0, opt)?;
            Ok((h.min_eig(), hil.abs()))
        })
        .collect();
    let rows = rows?;
    let min_eig: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let (mut global_min, mut witness) = (f64::INFINITY, None);
    for (z, &e) in pts.iter().zip(&min_eig) {
        if e < global_min {
            global_min = e;
            witness = Some(z.clone());
        }
    }
    if pts.is_empty() {
        global_min = 0.0;
    }
    let c1_sampled = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let real_margin = c - c1_sampled;
    let pass = global_min >= -tolerance && real_margin >= -tolerance;
    Ok(PshCertificate { sample_points: pts, min_eig, global_min, constant_c: c, tolerance, witness, c1_sampled, real_margin, pass })
}

/// Both sides of the ray identity for a planar piece `f` supported away
/// from the origin: `int_0^inf <D^2 f(s e) e', e'> ds` and `P(theta) + P''(theta)`,
/// where `P` is the weighted spherical projection and `P''` is obtained by
/// Richardson-extrapolated central differences.
pub fn ray_identity_sides(f: &dyn Field, theta: f64, opt: &LineOptions) -> Result<(f64, f64)> {
    use crate::weights::spherical_projection;
    if f.dim() != 2 {
        return invalid("the ray identity is checked for planar functions");
    }
    let e = [theta.cos(), theta.sin()];
    let p = [-e[1], e[0]];
    let lhs = ray_second_derivative(f, &e, &p, opt)?;
    let proj = |t: f64| spherical_projection(f, &[t.cos(), t.sin()], 1e-14);
    let p0 = proj(theta)?;
    let h = 0.02;
    let second = |h: f64| -> Result<f64> { Ok((proj(theta + h)? - 2.0 * p0 + proj(theta - h)?) / (h * h)) };
    let (d1, d2, d4) = (second(h)?, second(h / 2.0)?, second(h / 4.0)?);
    // two Richardson levels for the h^2 and h^4 error terms
    let r1 = (4.0 * d2 - d1) / 3.0;
    let r2 = (4.0 * d4 - d2) / 3.0;
    let pp = (16.0 * r2 - r1) / 15.0;
    Ok((lhs, p0 + pp))
}

/// The radial weight `omega_0` with unit coefficient.
pub fn omega0_weight(dim: usize) -> SmoothWeight {
    let mut w = SmoothWeight::zero(dim);
    w.radial.push(RadialPiece::Omega0 { coef: 1.0 });
    w
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiParams {
    /// `C` in `u = E omega~ + C |y|`.
    pub c: f64,
    /// `c_d` in `u_0 = c_d E omega_0 + |y| / 4`.
    pub c_d: f64,
    pub rho: f64,
}

/// `c_d = 1 / (4 max(C1, C2))` for `omega_0`, from sampled lines.
pub fn calibrate_cd(dim: usize, lines: &[LineSample], opt: &LineOptions) -> Result<f64> {
    let w0 = omega0_weight(dim);
    let k = line_constants(&w0, lines, opt)?;
    let m = k.max_c();
    if !(m > 0.0) {
        return invalid("omega_0 line constants vanished on the sample");
    }
    Ok(1.0 / (4.0 * m))
}

/// `kappa(z) = (rho / 8) <y>^{-3}`.
pub fn kappa(z: &ComplexPoint, rho: f64) -> f64 {
    rho / 8.0 * z.japanese_y().powi(-3)
}

/// `phi = 2u + 20 d log|z|_inf + rho u_0 + (rho/2)(<y> - 1)` and `kappa`.
pub fn phi_kappa(z: &ComplexPoint, w: &dyn Field, params: &PhiParams, opt: &LineOptions) -> Result<(f64, f64)> {
    if !(params.rho > 0.0) {
        return invalid("rho must be positive");
    }
    if z.sup_norm() == 0.0 {
        return invalid("phi is undefined at z = 0");
    }
    let d = z.dim() as f64;
    let w0 = omega0_weight(z.dim());
    let terms = [
        Term::EOmega { coef: 2.0, field: w },
        Term::AbsY { coef: 2.0 * params.c },
        Term::LogSupNorm { coef: 20.0 * d },
        Term::EOmega { coef: params.rho * params.c_d, field: &w0 },
        Term::AbsY { coef: params.rho / 4.0 },
        Term::JapaneseY { coef: params.rho / 2.0 },
    ];
    Ok((u_value(&terms, z, opt)?, kappa(z, params.rho)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::{BumpProfile, ShellPiece, Zero};

    fn bump_weight() -> SmoothWeight {
        let mut w = SmoothWeight::zero(2);
        let width = crate::weights::shell_width(5, 0.2);
        let j = (40.0 / (width / 2.0)).round() as i64;
        w.shells.push(ShellPiece::new(2, 5, 3.0, width, vec![[j, 0, 0], [j, 1, 0]], BumpProfile::default()).unwrap());
        w
    }

    #[test]
    fn zero_weight_everywhere() {
        let z = ComplexPoint::new(vec![1.0, 2.0], vec![0.3, -0.4]).unwrap();
        let o = LineOptions::default();
        assert_eq!(poisson_extend(&Zero(2), &z, &o).unwrap(), 0.0);
        assert_eq!(hilbert_restriction(&Zero(2), &z.x, &z.y, 0.0, &o).unwrap(), 0.0);
        assert_eq!(second_deriv_line_integral(&Zero(2), &z.x, &[1.0, 0.0], &[0.0, 1.0], &o).unwrap(), 0.0);
    }

    #[test]
    fn real_locus_is_the_weight() {
        let w = bump_weight();
        let x = vec![38.0, 3.0];
        let z = ComplexPoint::new(x.clone(), vec![0.0, 0.0]).unwrap();
        assert_eq!(poisson_extend(&w, &z, &LineOptions::default()).unwrap(), w.value(&x));
    }

    #[test]
    fn extension_of_affine_is_affine() {
        // a weight that is affine along the line is reproduced: E of a constant is the constant
        struct Const;
        impl Field for Const {
            fn dim(&self) -> usize {
                2
            }
            fn jet(&self, _x: &[f64], _o: usize) -> crate::jet::Jet {
                crate::jet::Jet::constant(-2.0)
            }
            fn radial_support(&self) -> (f64, f64) {
                (1e-9, 1e12)
            }
            fn line_breaks(&self, _p: &[f64], _u: &[f64], _a: f64, _b: f64, _o: &mut Vec<f64>) {}
        }
        let z = ComplexPoint::new(vec![0.3, 0.1], vec![0.5, 0.2]).unwrap();
        let v = poisson_extend(&Const, &z, &LineOptions::default()).unwrap();
        // the truncated support loses mass 2 * (1/pi) * atan beyond the chord
        let rho = z.y_norm();
        let (a, b) = chord(&z.x, &unit(&z.y).unwrap(), 1e12).unwrap();
        let expect = -2.0 * ((b / rho).atan() - (a / rho).atan()) / PI;
        assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn hilbert_by_parts() {
        let w = bump_weight();
        // line missing a neighbourhood of its base point
        let x0 = [0.0, 0.0];
        for t in [0.2f64, 0.5, 1.0] {
            let u = [t.cos(), t.sin()];
            let h = hilbert_restriction(&w, &x0, &u, 0.0, &LineOptions { tol: 1e-13, ..Default::default() }).unwrap();
            let mut knots = Vec::new();
            w.line_breaks(&x0, &u, -100.0, 100.0, &mut knots);
            clip_knots(&mut knots, -100.0, -1.0);
            let mut k2 = Vec::new();
            w.line_breaks(&x0, &u, -100.0, 100.0, &mut k2);
            clip_knots(&mut k2, 1.0, 100.0);
            let f = |s: f64| w.value(&[s * u[0], s * u[1]]) / (s * s);
            let by_parts = -(crate::quad::integrate(f, &knots, 1e-14) + crate::quad::integrate(f, &k2, 1e-14)) / PI;
            assert!((h - by_parts).abs() < 1e-6, "{h} vs {by_parts}");
            assert!(by_parts.abs() > 1e-4 || t > 0.3);
        }
    }

    #[test]
    fn hilbert_translation() {
        let w = bump_weight();
        let x0 = [30.0, -10.0];
        let u = [0.6, 0.8];
        let o = LineOptions { tol: 1e-13, ..Default::default() };
        for t0 in [-3.0, 7.5, 20.0] {
            let a = hilbert_restriction(&w, &x0, &u, t0, &o).unwrap();
            let b = hilbert_restriction(&w, &along(&x0, &u, t0), &u, 0.0, &o).unwrap();
            assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn non_orthogonal_rejected() {
        let w = bump_weight();
        assert!(second_deriv_line_integral(&w, &[0.0, 0.0], &[1.0, 0.0], &[0.6, 0.8], &LineOptions::default()).is_err());
    }

    #[test]
    fn abs_y_form() {
        let z = ComplexPoint::new(vec![0.0, 0.0], vec![1.0, 0.0]).unwrap();
        let h = complex_hessian(&[Term::AbsY { coef: 1.0 }], &z, &LineOptions::default()).unwrap();
        assert!((h.quad_real(&[0.0, 1.0]).re - 0.25).abs() < 1e-15);
        let fd = fd_complex_hessian(&[Term::AbsY { coef: 1.0 }], &z, 1e-4, &LineOptions::default()).unwrap();
        assert!(h.max_abs_diff(&fd) < 1e-6);
        let zr = ComplexPoint::new(vec![1.0, 0.0], vec![0.0, 0.0]).unwrap();
        assert!(complex_hessian(&[Term::AbsY { coef: 1.0 }], &zr, &LineOptions::default()).is_err());
    }

    #[test]
    fn japanese_y_in_y_direction() {
        let z = ComplexPoint::new(vec![0.5, 1.0], vec![0.3, -1.2]).unwrap();
        let h = complex_hessian(&[Term::JapaneseY { coef: 1.0 }], &z, &LineOptions::default()).unwrap();
        let yh = unit(&z.y).unwrap();
        assert!((h.quad_real(&yh).re - 0.25 * z.japanese_y().powi(-3)).abs() < 1e-15);
        assert!((h.min_eig() - 0.25 * z.japanese_y().powi(-3)).abs() < 1e-14);
    }

    #[test]
    fn eigenvalues_of_complex_form() {
        let mut h = HermitianForm::zeros(2);
        h.re = vec![2.0, 0.0, 0.0, 2.0];
        h.im = vec![0.0, 1.0, -1.0, 0.0];
        let ev = h.eigenvalues();
        assert!((ev[0] - 1.0).abs() < 1e-12 && (ev[1] - 3.0).abs() < 1e-12);
        assert!(h.hermitian_defect() < 1e-15);
    }

    #[test]
    fn kappa_on_real_locus() {
        let z = ComplexPoint::new(vec![3.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(kappa(&z, 2.0), 0.25);
    }

    #[test]
    fn omega0_line_hessian_tail() {
        // the tail model against a longer numerical range
        let w0 = omega0_weight(2);
        let x0 = [3.0, -1.0];
        let u = [0.0, 1.0];
        let a = line_hessian(&w0, &x0, &u, &LineOptions { tail_log: 60.0, ..Default::default() }).unwrap();
        let b = line_hessian(&w0, &x0, &u, &LineOptions { tail_log: 200.0, ..Default::default() }).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-6, "{a:?} {b:?}");
        }
        let e1 = poisson_extend(&w0, &ComplexPoint::new(x0.to_vec(), vec![0.5, 2.0]).unwrap(), &LineOptions::default()).unwrap();
        let e2 = poisson_extend(&w0, &ComplexPoint::new(x0.to_vec(), vec![0.5, 2.0]).unwrap(), &LineOptions { tail_log: 200.0, ..Default::default() }).unwrap();
        assert!((e1 - e2).abs() < 1e-6, "{e1} {e2}");
        let h1 = hilbert_restriction(&w0, &x0, &[0.6, 0.8], 0.0, &LineOptions::default()).unwrap();
        let h2 = hilbert_restriction(&w0, &x0, &[0.6, 0.8], 0.0, &LineOptions { tail_log: 200.0, ..Default::default() }).unwrap();
        assert!((h1 - h2).abs() < 1e-6, "{h1} {h2}");
    }
}
