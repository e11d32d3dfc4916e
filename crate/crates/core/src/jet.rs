//! Third-order derivative jets in up to three variables.
//!
//! A [`Jet`] carries the value, gradient, Hessian and third-derivative tensor
//! of a function at one point. Entries for unused dimensions stay zero.
//! [`Taylor`] is the univariate analogue used to build radial profiles.

use serde::{Deserialize, Serialize};

pub const D: usize = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Jet {
    pub v: f64,
    pub g: [f64; D],
    pub h: [[f64; D]; D],
    pub t: [[[f64; D]; D]; D],
}

impl Jet {
    pub fn constant(v: f64) -> Self {
        Jet { v, ..Default::default() }
    }

    /// The coordinate function `x_i`.
    pub fn coordinate(i: usize, x: &[f64]) -> Self {
        let mut j = Jet::constant(x[i]);
        j.g[i] = 1.0;
        j
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut r = *self;
        r.v *= c;
        for i in 0..D {
            r.g[i] *= c;
            for j in 0..D {
                r.h[i][j] *= c;
                for k in 0..D {
                    r.t[i][j][k] *= c;
                }
            }
        }
        r
    }

    pub fn add_assign(&mut self, o: &Jet) {
        self.v += o.v;
        for i in 0..D {
            self.g[i] += o.g[i];
            for j in 0..D {
                self.h[i][j] += o.h[i][j];
                for k in 0..D {
                    self.t[i][j][k] += o.t[i][j][k];
                }
            }
        }
    }

    pub fn add_scaled(&mut self, o: &Jet, c: f64) {
        self.add_assign(&o.scale(c));
    }

    /// Leibniz rule up to `order`.
    pub fn mul(&self, o: &Jet, dim: usize, order: usize) -> Jet {
        let (a, b) = (self, o);
        let mut r = Jet::constant(a.v * b.v);
        if order >= 1 {
            for i in 0..dim {
                r.g[i] = a.g[i] * b.v + a.v * b.g[i];
            }
        }
        if order >= 2 {
            for i in 0..dim {
                for j in 0..dim {
                    r.h[i][j] = a.h[i][j] * b.v + a.g[i] * b.g[j] + a.g[j] * b.g[i] + a.v * b.h[i][j];
                }
            }
        }
        if order >= 3 {
            for i in 0..dim {
                for j in 0..dim {
                    for k in 0..dim {
                        r.t[i][j][k] = a.t[i][j][k] * b.v
                            + a.h[i][j] * b.g[k]
                            + a.h[i][k] * b.g[j]
                            + a.h[j][k] * b.g[i]
                            + a.g[i] * b.h[j][k]
                            + a.g[j] * b.h[i][k]
                            + a.g[k] * b.h[i][j]
                            + a.v * b.t[i][j][k];
                    }
                }
            }
        }
        r
    }

    /// `F(self)` where `f = [F, F', F'', F''']` at `self.v` (Faa di Bruno).
    pub fn compose(&self, f: [f64; 4], dim: usize, order: usize) -> Jet {
        let g = self;
        let mut r = Jet::constant(f[0]);
        if order >= 1 {
            for i in 0..dim {
                r.g[i] = f[1] * g.g[i];
            }
        }
        if order >= 2 {
            for i in 0..dim {
                for j in 0..dim {
                    r.h[i][j] = f[2] * g.g[i] * g.g[j] + f[1] * g.h[i][j];
                }
            }
        }
        if order >= 3 {
            for i in 0..dim {
                for j in 0..dim {
                    for k in 0..dim {
                        r.t[i][j][k] = f[3] * g.g[i] * g.g[j] * g.g[k]
                            + f[2] * (g.h[i][j] * g.g[k] + g.h[i][k] * g.g[j] + g.h[j][k] * g.g[i])
                            + f[1] * g.t[i][j][k];
                    }
                }
            }
        }
        r
    }

    /// Jet of `|x|`, valid for `x != 0`.
    pub fn norm(x: &[f64], order: usize) -> Jet {
        let dim = x.len();
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut j = Jet::constant(r);
        if order >= 1 {
            for i in 0..dim {
                j.g[i] = x[i] / r;
            }
        }
        if order >= 2 {
            for a in 0..dim {
                for b in 0..dim {
                    let d = if a == b { 1.0 } else { 0.0 };
                    j.h[a][b] = (d - x[a] * x[b] / (r * r)) / r;
                }
            }
        }
        if order >= 3 {
            let r3 = r * r * r;
            let r5 = r3 * r * r;
            for a in 0..dim {
                for b in 0..dim {
                    for c in 0..dim {
                        let dab = if a == b { 1.0 } else { 0.0 };
                        let dac = if a == c { 1.0 } else { 0.0 };
                        let dbc = if b == c { 1.0 } else { 0.0 };
                        j.t[a][b][c] = -(dab * x[c] + dac * x[b] + dbc * x[a]) / r3 + 3.0 * x[a] * x[b] * x[c] / r5;
                    }
                }
            }
        }
        j
    }

    /// Largest absolute entry of the order-`a` derivative tensor.
    pub fn max_abs(&self, a: usize, dim: usize) -> f64 {
        let mut m: f64 = 0.0;
        match a {
            0 => m = self.v.abs(),
            1 => (0..dim).for_each(|i| m = m.max(self.g[i].abs())),
            2 => (0..dim).for_each(|i| (0..dim).for_each(|j| m = m.max(self.h[i][j].abs()))),
            _ => (0..dim).for_each(|i| {
                (0..dim).for_each(|j| (0..dim).for_each(|k| m = m.max(self.t[i][j][k].abs())))
            }),
        }
        m
    }

    /// `D^2 f [u, v]`.
    pub fn hess_form(&self, u: &[f64], v: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..u.len() {
            for j in 0..v.len() {
                s += self.h[i][j] * u[i] * v[j];
            }
        }
        s
    }

    /// `D^3 f [u, v, w]`.
    pub fn third_form(&self, u: &[f64], v: &[f64], w: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..u.len() {
            for j in 0..v.len() {
                for k in 0..w.len() {
                    s += self.t[i][j][k] * u[i] * v[j] * w[k];
                }
            }
        }
        s
    }

    pub fn grad_dot(&self, u: &[f64]) -> f64 {
        u.iter().enumerate().map(|(i, ui)| self.g[i] * ui).sum()
    }
}

/// Truncated univariate Taylor data `[f, f', f'', f''']` with arithmetic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Taylor(pub [f64; 4]);

impl Taylor {
    pub fn var(x: f64) -> Self {
        Taylor([x, 1.0, 0.0, 0.0])
    }

    pub fn constant(c: f64) -> Self {
        Taylor([c, 0.0, 0.0, 0.0])
    }

    pub fn add(self, o: Taylor) -> Taylor {
        Taylor([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2], self.0[3] + o.0[3]])
    }

    pub fn scale(self, c: f64) -> Taylor {
        Taylor(self.0.map(|v| v * c))
    }

    pub fn mul(self, o: Taylor) -> Taylor {
        let (a, b) = (self.0, o.0);
        Taylor([
            a[0] * b[0],
            a[1] * b[0] + a[0] * b[1],
            a[2] * b[0] + 2.0 * a[1] * b[1] + a[0] * b[2],
            a[3] * b[0] + 3.0 * a[2] * b[1] + 3.0 * a[1] * b[2] + a[0] * b[3],
        ])
    }

    /// Univariate chain rule: `f(self)` with `f = [f, f', f'', f''']`.
    pub fn apply(self, f: [f64; 4]) -> Taylor {
        let g = self.0;
        Taylor([
            f[0],
            f[1] * g[1],
            f[2] * g[1] * g[1] + f[1] * g[2],
            f[3] * g[1].powi(3) + 3.0 * f[2] * g[1] * g[2] + f[1] * g[3],
        ])
    }

    pub fn recip(self) -> Taylor {
        let x = self.0[0];
        self.apply([1.0 / x, -1.0 / (x * x), 2.0 / (x * x * x), -6.0 / (x * x * x * x)])
    }

    pub fn ln(self) -> Taylor {
        let x = self.0[0];
        self.apply([x.ln(), 1.0 / x, -1.0 / (x * x), 2.0 / (x * x * x)])
    }

    pub fn powi(self, n: i32) -> Taylor {
        let x = self.0[0];
        let nf = n as f64;
        self.apply([
            x.powi(n),
            nf * x.powi(n - 1),
            nf * (nf - 1.0) * x.powi(n - 2),
            nf * (nf - 1.0) * (nf - 2.0) * x.powi(n - 3),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(f: impl Fn(&[f64]) -> Jet, x: &[f64]) {
        let dim = x.len();
        let j = f(x);
        let h = 1e-5;
        for i in 0..dim {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[i] += h;
            m[i] -= h;
            let (jp, jm) = (f(&p), f(&m));
            assert!((jp.v - jm.v) / (2.0 * h) - j.g[i] < 1e-7);
            for a in 0..dim {
                assert!(((jp.g[a] - jm.g[a]) / (2.0 * h) - j.h[i][a]).abs() < 1e-6);
                for b in 0..dim {
                    assert!(((jp.h[a][b] - jm.h[a][b]) / (2.0 * h) - j.t[i][a][b]).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn norm_jet_matches_differences() {
        fd_check(|x| Jet::norm(x, 3), &[0.7, -1.3, 0.4]);
    }

    #[test]
    fn product_and_composition() {
        let f = |x: &[f64]| {
            let r = Jet::norm(x, 3);
            let s = Jet::coordinate(0, x).mul(&Jet::coordinate(1, x), 3, 3);
            let e = r.v.exp();
            r.compose([e, e, e, e], 3, 3).mul(&s, 3, 3)
        };
        fd_check(f, &[0.3, 0.5, -0.2]);
    }

    #[test]
    fn taylor_log_ratio() {
        // q(r) = r / ln(2 + r)^2
        let q = |r: f64| {
            let t = Taylor::var(r);
            t.mul(t.add(Taylor::constant(2.0)).ln().powi(2).recip())
        };
        let r = 7.0;
        let h = 1e-4;
        let d = q(r).0;
        let fd1 = (q(r + h).0[0] - q(r - h).0[0]) / (2.0 * h);
        let fd2 = (q(r + h).0[1] - q(r - h).0[1]) / (2.0 * h);
        let fd3 = (q(r + h).0[2] - q(r - h).0[2]) / (2.0 * h);
        assert!((fd1 - d[1]).abs() < 1e-8 && (fd2 - d[2]).abs() < 1e-8 && (fd3 - d[3]).abs() < 1e-8);
    }
}
