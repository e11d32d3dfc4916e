//! Gauss–Legendre quadrature: fixed rules, adaptive composite panels and
//! logarithmic substitution for slowly decaying tails.

use std::sync::OnceLock;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
                p1 = z;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Default panel rule.
pub const RULE: usize = 16;

pub fn rule() -> &'static (Vec<f64>, Vec<f64>) {
    static R: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    R.get_or_init(|| gauss_legendre(RULE))
}

/// Integrates a vector-valued integrand `f(t, out)` with `k` components.
pub struct Integrator {
    pub k: usize,
    pub tol: f64,
    pub max_depth: u32,
}

impl Integrator {
    pub fn new(k: usize, tol: f64) -> Self {
        Integrator { k, tol, max_depth: 16 }
    }

    fn panel<F: FnMut(f64, &mut [f64])>(&self, f: &mut F, a: f64, b: f64, buf: &mut [f64], acc: &mut [f64]) {
        let (x, w) = rule();
        let h = 0.5 * (b - a);
        let c = 0.5 * (a + b);
        acc.iter_mut().for_each(|v| *v = 0.0);
        for (xi, wi) in x.iter().zip(w) {
            f(c + h * xi, buf);
            for (s, v) in acc.iter_mut().zip(buf.iter()) {
                *s += wi * h * v;
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn recurse<F: FnMut(f64, &mut [f64])>(
        &self,
        f: &mut F,
        a: f64,
        b: f64,
        whole: &[f64],
        tol: f64,
        depth: u32,
        out: &mut [f64],
    ) {
        let m = 0.5 * (a + b);
        let mut buf = vec![0.0; self.k];
        let mut left = vec![0.0; self.k];
        let mut right = vec![0.0; self.k];
        self.panel(f, a, m, &mut buf, &mut left);
        self.panel(f, m, b, &mut buf, &mut right);
        let err = whole
            .iter()
            .zip(left.iter().zip(&right))
            .map(|(w, (l, r))| (w - l - r).abs())
            .fold(0.0, f64::max);
        // roundoff floor: halving the tolerance cannot beat the sum's precision
        let floor = left.iter().zip(&right).map(|(l, r)| l.abs() + r.abs()).fold(0.0, f64::max) * 1024.0 * f64::EPSILON;
        if err <= tol.max(floor) || depth >= self.max_depth || (b - a) <= 1e-14 * (a.abs() + b.abs()) {
            for i in 0..self.k {
                out[i] += left[i] + right[i];
            }
            return;
        }
        self.recurse(f, a, m, &left, 0.5 * tol, depth + 1, out);
        self.recurse(f, m, b, &right, 0.5 * tol, depth + 1, out);
    }

    /// Adaptive integral over consecutive panels delimited by sorted `knots`.
    pub fn integrate<F: FnMut(f64, &mut [f64])>(&self, mut f: F, knots: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        if knots.len() < 2 {
            return out;
        }
        let npanels = (knots.len() - 1) as f64;
        let mut buf = vec![0.0; self.k];
        let mut whole = vec![0.0; self.k];
        for pair in knots.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if b <= a {
                continue;
            }
            self.panel(&mut f, a, b, &mut buf, &mut whole);
            self.recurse(&mut f, a, b, &whole.clone(), self.tol / npanels, 0, &mut out);
        }
        out
    }
}

/// Scalar adaptive integral over the panels delimited by `knots`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, knots: &[f64], tol: f64) -> f64 {
    Integrator::new(1, tol).integrate(|t, out| out[0] = f(t), knots)[0]
}

/// Sorts, deduplicates and clips knots to `[a, b]`, always including `a`, `b`.
pub fn clip_knots(knots: &mut Vec<f64>, a: f64, b: f64) {
    knots.retain(|t| t.is_finite() && *t > a && *t < b);
    knots.push(a);
    knots.push(b);
    knots.sort_by(f64::total_cmp);
    knots.dedup_by(|x, y| (*x - *y).abs() <= 1e-15 * (1.0 + x.abs()));
}

/// `int_a^{e^umax} f(t) dt` for `a > 0` through `t = e^u`, adaptive in `u`.
///
/// Suited to integrands decaying like `1/(t log^2 t)`, where the remainder
/// beyond `e^umax` is added analytically by the caller.
pub fn log_tail<F: FnMut(f64) -> f64>(mut f: F, a: f64, umax: f64, tol: f64) -> f64 {
    let ua = a.ln();
    if ua >= umax {
        return 0.0;
    }
    let mut knots = Vec::new();
    let mut u = ua;
    while u < umax {
        knots.push(u);
        u += 2.0;
    }
    knots.push(umax);
    integrate(
        |u| {
            let t = u.exp();
            f(t) * t
        },
        &knots,
        tol,
    )
}
