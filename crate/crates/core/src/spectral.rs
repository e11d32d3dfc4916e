//! Discrete uncertainty exponents on `Z_N^d`.
//!
//! The localization operator is `A = 1_X F^{-1} 1_Y` with the unitary DFT
//! `F f(xi) = N^{-d/2} sum_x f(x) e^{-2 pi i x.xi / N}`. Its norm is found by
//! power iteration on `A^* A = 1_Y F 1_X F^{-1} 1_Y`, each step costing two
//! d-dimensional FFTs.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fit::fit_line;
use crate::sets::{gen_cantor_product, CantorSpec, Embedding, GridSet, MAX_DIM};

/// Unitary d-dimensional FFT on an `n^d` row-major array.
pub struct FftNd {
    dim: usize,
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl FftNd {
    pub fn new(dim: usize, n: usize) -> Self {
        let mut planner = FftPlanner::new();
        FftNd { dim, n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn lines(&self, fft: &Arc<dyn Fft<f64>>, buf: &mut [Complex64]) {
        let scratch_len = fft.get_inplace_scratch_len();
        buf.par_chunks_mut(self.n).for_each_init(
            || vec![Complex64::default(); scratch_len],
            |scratch, line| fft.process_with_scratch(line, scratch),
        );
    }

    /// Forward (`inverse = false`) or inverse unitary transform in place.
    pub fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let n = self.n;
        let fft = if inverse { &self.inv } else { &self.fwd };
        for axis in 0..self.dim {
            let st = n.pow((self.dim - 1 - axis) as u32);
            if st == 1 {
                self.lines(fft, data);
                continue;
            }
            let mut buf = vec![Complex64::default(); n * st];
            for block in data.chunks_mut(n * st) {
                {
                    let src: &[Complex64] = block;
                    buf.par_chunks_mut(n).enumerate().for_each(|(j, line)| {
                        for (i, v) in line.iter_mut().enumerate() {
                            *v = src[i * st + j];
                        }
                    });
                }
                self.lines(fft, &mut buf);
                block.par_chunks_mut(st).enumerate().for_each(|(i, row)| {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = buf[j * n + i];
                    }
                });
            }
        }
        let scale = (n as f64).powf(-(self.dim as f64) / 2.0);
        data.par_iter_mut().for_each(|v| *v *= scale);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralOptions {
    pub seed: u64,
    /// Stop once successive Rayleigh quotients differ by less than this.
    pub rayleigh_tol: f64,
    pub max_iter: usize,
    /// Largest acceptable residual `||B v - lambda v||`.
    pub residual_tol: f64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions { seed: 0x5eed, rayleigh_tol: 1e-10, max_iter: 10_000, residual_tol: 1e-4 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    pub norm: f64,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

fn check_pair(x: &GridSet, y: &GridSet) -> Result<()> {
    if x.dim() != y.dim() || x.side() != y.side() {
        return Err(Error::GridMismatch(format!(
            "X is {}-dimensional with side {}, Y is {}-dimensional with side {}",
            x.dim(),
            x.side(),
            y.dim(),
            y.side()
        )));
    }
    Ok(())
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.par_iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm2(a: &[Complex64]) -> f64 {
    a.par_iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Grids below this many cells iterate on the calling thread; handing tiny
/// FFTs to the pool costs more than the transforms.
const SERIAL_BELOW: usize = 1 << 14;

/// `||1_X F^{-1} 1_Y||` on `Z_N^d`.
pub fn fup_norm(x: &GridSet, y: &GridSet, opt: &SpectralOptions) -> Result<NormEstimate> {
    check_pair(x, y)?;
    if x.is_empty() || y.is_empty() {
        return Ok(NormEstimate { norm: 0.0, iterations: 0, residual: 0.0, converged: true });
    }
    if x.total() < SERIAL_BELOW && rayon::current_thread_index().is_none() {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(1).use_current_thread().build() {
            return pool.install(|| power_iteration(x, y, opt));
        }
    }
    power_iteration(x, y, opt)
}

fn power_iteration(x: &GridSet, y: &GridSet, opt: &SpectralOptions) -> Result<NormEstimate> {
    let fft = FftNd::new(x.dim(), x.side());
    let xm = x.to_mask();
    let ym = y.to_mask();
    let total = fft.len();

    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let mut v: Vec<Complex64> = (0..total)
        .map(|i| {
            let re: f64 = rng.random::<f64>() - 0.5;
            let im: f64 = rng.random::<f64>() - 0.5;
            if ym[i] {
                Complex64::new(re, im)
            } else {
                Complex64::default()
            }
        })
        .collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|z| *z /= nv);

    let mut w = vec![Complex64::default(); total];
    let mut lambda = f64::NAN;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=opt.max_iter {
        iterations = it;
        w.copy_from_slice(&v);
        fft.transform(&mut w, true);
        w.par_iter_mut().zip(&xm).for_each(|(z, &k)| if !k { *z = Complex64::default() });
        fft.transform(&mut w, false);
        w.par_iter_mut().zip(&ym).for_each(|(z, &k)| if !k { *z = Complex64::default() });
        let l = dot(&v, &w).re;
        residual = w.par_iter().zip(&v).map(|(a, b)| (a - b * l).norm_sqr()).sum::<f64>().sqrt();
        let nw = norm2(&w);
        let done = (l - lambda).abs() < opt.rayleigh_tol;
        lambda = l;
        if nw == 0.0 {
            converged = true;
            break;
        }
        v.par_iter_mut().zip(&w).for_each(|(a, b)| *a = b / nw);
        if done {
            converged = true;
            break;
        }
    }
    Ok(NormEstimate { norm: lambda.max(0.0).sqrt(), iterations, residual, converged })
}

/// Largest singular value of the dense matrix `N^{-d/2} e^{2 pi i x.y / N}`,
/// `x in X`, `y in Y`.
pub fn dense_fup_norm(x: &GridSet, y: &GridSet) -> Result<f64> {
    check_pair(x, y)?;
    let (xs, ys): (Vec<usize>, Vec<usize>) = (x.iter().collect(), y.iter().collect());
    if xs.is_empty() || ys.is_empty() {
        return Ok(0.0);
    }
    if xs.len() * ys.len() > 4_000_000 {
        return invalid("dense oracle limited to 4e6 matrix entries");
    }
    let n = x.side();
    let d = x.dim();
    let scale = (n as f64).powf(-(d as f64) / 2.0);
    let coords = |s: &GridSet, i: usize| -> [usize; MAX_DIM] { s.coords(i) };
    let m = DMatrix::from_fn(xs.len(), ys.len(), |r, c| {
        let a = coords(x, xs[r]);
        let b = coords(y, ys[c]);
        let phase = (0..d).map(|k| a[k] * b[k] % n).sum::<usize>() % n;
        Complex64::from_polar(scale, 2.0 * std::f64::consts::PI * phase as f64 / n as f64)
    });
    let sv = m.singular_values();
    Ok(sv.iter().copied().fold(0.0, f64::max))
}

/// `min(1, h^{(d - delta_sum) / 2})`.
pub fn trivial_bound(delta_sum: f64, d: usize, h: f64) -> Result<f64> {
    if !(h > 0.0 && h < 1.0) {
        return invalid(format!("h = {h} outside (0, 1)"));
    }
    Ok(h.powf((d as f64 - delta_sum) / 2.0).min(1.0))
}

/// A family of set pairs indexed by grid side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Family {
    /// `X = Y` = Cantor product at depth `log_base N`, frequency embedding
    /// for `Y`.
    Cantor { dim: usize, base: usize, kept_digits: Vec<Vec<usize>> },
    /// `X` the first-axis line through the origin, `Y` the last-axis line.
    OrthogonalLines { dim: usize },
    /// `X = Y` = the full grid.
    Full { dim: usize },
}

impl Family {
    pub fn dim(&self) -> usize {
        match self {
            Family::Cantor { dim, .. } | Family::OrthogonalLines { dim } | Family::Full { dim } => *dim,
        }
    }

    /// Sum of the two sets' dimensions, when defined.
    pub fn delta_sum(&self) -> f64 {
        match self {
            Family::Cantor { dim, base, kept_digits } => {
                2.0 * CantorSpec { dim: *dim, base: *base, kept_digits: kept_digits.clone(), depth: 1 }.dimension()
            }
            Family::OrthogonalLines { .. } => 2.0,
            Family::Full { dim } => 2.0 * *dim as f64,
        }
    }

    pub fn pair(&self, n: usize, cap: usize) -> Result<(GridSet, GridSet)> {
        let d = self.dim();
        match self {
            Family::Cantor { base, kept_digits, .. } => {
                let mut depth = 0u32;
                let mut m = 1usize;
                while m < n {
                    m *= base;
                    depth += 1;
                }
                if m != n || depth == 0 {
                    return invalid(format!("grid side {n} is not a positive power of {base}"));
                }
                let spec = CantorSpec { dim: d, base: *base, kept_digits: kept_digits.clone(), depth };
                let x = gen_cantor_product(&spec, cap)?.with_embedding(Embedding::physical(d, n))?;
                let y = x.clone().with_embedding(Embedding::frequency(d, n))?;
                Ok((x, y))
            }
            Family::OrthogonalLines { .. } => {
                if d < 2 {
                    return invalid("orthogonal lines need d >= 2");
                }
                let x = GridSet::from_fn(d, n, Embedding::physical(d, n), cap, |c| c[1..].iter().all(|&v| v == 0))?;
                let y = GridSet::from_fn(d, n, Embedding::frequency(d, n), cap, |c| c[..d - 1].iter().all(|&v| v == 0))?;
                Ok((x, y))
            }
            Family::Full { .. } => Ok((
                GridSet::full(d, n, Embedding::physical(d, n))?,
                GridSet::full(d, n, Embedding::frequency(d, n))?,
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanEntry {
    pub n: usize,
    pub norm: f64,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FupScan {
    pub dim: usize,
    pub entries: Vec<ScanEntry>,
    pub beta: f64,
    pub c_fit: f64,
    /// Half-open index range of `entries` used in the fit.
    pub fit_window: (usize, usize),
    /// Largest `|log model - log data|` over the window.
    pub fit_residual: f64,
}

/// The default window drops the smallest grid when at least three entries
/// remain.
pub fn default_fit_window(len: usize) -> (usize, usize) {
    if len >= 4 {
        (1, len)
    } else {
        (0, len)
    }
}

/// Fits `norm = C N^{-beta}` over `window`.
pub fn fit_scan(dim: usize, entries: Vec<ScanEntry>, window: (usize, usize)) -> Result<FupScan> {
    if window.1 > entries.len() || window.0 >= window.1 {
        return invalid("fit window out of range");
    }
    let sel = &entries[window.0..window.1];
    let xs: Vec<f64> = sel.iter().map(|e| (e.n as f64).ln()).collect();
    let ys: Vec<f64> = sel.iter().map(|e| e.norm.ln()).collect();
    let fit = fit_line(&xs, &ys)?;
    Ok(FupScan { dim, entries, beta: -fit.slope, c_fit: fit.intercept.exp(), fit_window: window, fit_residual: fit.max_residual })
}

pub fn fup_scan(family: &Family, n_list: &[usize], opt: &SpectralOptions, cap: usize) -> Result<FupScan> {
    if n_list.len() < 3 {
        return invalid("a scan needs at least 3 grid sizes");
    }
    if n_list.windows(2).any(|w| w[0] >= w[1]) {
        return invalid("grid sizes must be strictly ascending");
    }
    let mut entries = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let (x, y) = family.pair(n, cap)?;
        let est = fup_norm(&x, &y, opt)?;
        if est.residual > opt.residual_tol {
            return Err(Error::Numerical(format!("power iteration residual {} at N = {n}", est.residual)));
        }
        entries.push(ScanEntry { n, norm: est.norm, iterations: est.iterations, residual: est.residual });
    }
    fit_scan(family.dim(), entries, default_fit_window(n_list.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sets::DEFAULT_MEMORY_CAP;

    fn naive_dft(data: &[Complex64], dim: usize, n: usize, inverse: bool) -> Vec<Complex64> {
        let total = data.len();
        let sign = if inverse { 1.0 } else { -1.0 };
        let coords = |mut i: usize| {
            let mut c = vec![0usize; dim];
            for a in (0..dim).rev() {
                c[a] = i % n;
                i /= n;
            }
            c
        };
        (0..total)
            .map(|k| {
                let ck = coords(k);
                let mut s = Complex64::default();
                for (j, v) in data.iter().enumerate() {
                    let cj = coords(j);
                    let ph: usize = ck.iter().zip(&cj).map(|(a, b)| a * b).sum();
                    s += v * Complex64::from_polar(1.0, sign * 2.0 * std::f64::consts::PI * ph as f64 / n as f64);
                }
                s * (n as f64).powf(-(dim as f64) / 2.0)
            })
            .collect()
    }

    #[test]
    fn fft_matches_naive_transform() {
        for (dim, n) in [(1usize, 12usize), (2, 6), (3, 4)] {
            let total = n.pow(dim as u32);
            let data: Vec<Complex64> = (0..total).map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64).cos())).collect();
            let f = FftNd::new(dim, n);
            for inverse in [false, true] {
                let mut got = data.clone();
                f.transform(&mut got, inverse);
                let want = naive_dft(&data, dim, n, inverse);
                for (a, b) in got.iter().zip(&want) {
                    assert!((a - b).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn full_grid_is_unitary() {
        let (x, y) = Family::Full { dim: 2 }.pair(16, DEFAULT_MEMORY_CAP).unwrap();
        let e = fup_norm(&x, &y, &SpectralOptions::default()).unwrap();
        assert!((e.norm - 1.0).abs() < 1e-8);
    }

    #[test]
    fn empty_sets_give_zero() {
        let x = GridSet::empty(2, 8, Embedding::physical(2, 8)).unwrap();
        let y = GridSet::full(2, 8, Embedding::frequency(2, 8)).unwrap();
        assert_eq!(fup_norm(&x, &y, &SpectralOptions::default()).unwrap().norm, 0.0);
    }

    #[test]
    fn mismatched_grids_rejected() {
        let x = GridSet::full(2, 8, Embedding::physical(2, 8)).unwrap();
        let y = GridSet::full(2, 9, Embedding::frequency(2, 9)).unwrap();
        assert!(matches!(fup_norm(&x, &y, &SpectralOptions::default()), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn trivial_bound_values() {
        assert_eq!(trivial_bound(2.0, 2, 0.3).unwrap(), 1.0);
        let ds = 2.0 * (2.0 * 2f64.ln() / 3f64.ln());
        assert_eq!(trivial_bound(ds, 2, 0.01).unwrap(), 1.0);
        assert!((trivial_bound(1.0, 2, 1.0 / 81.0).unwrap() - 1.0 / 9.0).abs() < 1e-15);
        assert!(trivial_bound(1.0, 2, 1.0).is_err());
    }

    #[test]
    fn synthetic_power_law_fit() {
        let entries: Vec<ScanEntry> = [4usize, 16, 64, 256]
            .iter()
            .map(|&n| ScanEntry { n, norm: (n as f64).powf(-0.5), iterations: 0, residual: 0.0 })
            .collect();
        let s = fit_scan(2, entries, (0, 4)).unwrap();
        assert!((s.beta - 0.5).abs() < 1e-12 && (s.c_fit - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cantor_pair_needs_power_of_base() {
        let f = Family::Cantor { dim: 2, base: 3, kept_digits: vec![vec![0, 2]; 2] };
        assert!(f.pair(10, DEFAULT_MEMORY_CAP).is_err());
        let (x, _) = f.pair(9, DEFAULT_MEMORY_CAP).unwrap();
        assert_eq!(x.len(), 16);
    }
}
