//! Ball, line and box porosity on refined search lattices.
//!
//! Candidate points are `offset + (m / r) * w` for `m = 0..=r N` per axis,
//! where `w` is the cell width and `r` the refinement. The closest point of a
//! union of closed cells to such a point is again a lattice point, so an exact
//! squared Euclidean distance transform gives the distance field `D`.
//!
//! `nu` is searched on `{j / 192 : 1 <= j <= 64}`. Diameters run over the
//! ladder `a0 * 1.5^i` (`i >= 1`, below `a1`) followed by `a1` itself.
//! Balls and segments are clipped to the embedded grid box.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fit::{fit_line, LineFit};
use crate::sample::{halton, lattice_steps, normalize, oriented_directions, sphere_directions};
use crate::sets::{Embedding, GridSet, MAX_DIM};

pub const NU_STEPS: u32 = 64;
pub const NU_DEN: f64 = 192.0;
pub const NU_CAP: f64 = 1.0 / 3.0;
const FAR: f64 = 1e30;
const REL: f64 = 1e-12;
/// Lattice distance below which sampled lines use exact point distances.
const EXACT_NEAR: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PorosityKind {
    Ball,
    Line,
    Box,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Witness {
    /// A ball of the given diameter with no hole of radius `nu * diameter`.
    Ball { center: Vec<f64>, diameter: f64, nu: f64 },
    /// A segment with no point at distance `nu * length` from the set.
    Segment { start: Vec<f64>, end: Vec<f64>, length: f64, nu: f64 },
    /// An occupied cube of the depth-`depth` partition with no empty child.
    Cube { lower: Vec<f64>, side: f64, depth: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PorosityReport {
    pub kind: PorosityKind,
    pub nu_max: f64,
    pub scale_range: (f64, f64),
    pub witness: Option<Witness>,
    pub directions_tested: Option<usize>,
    pub scales: Vec<f64>,
    pub nu_per_scale: Vec<f64>,
    pub refine: usize,
    /// Number of (scale, center[, direction]) configurations examined.
    pub samples: u64,
    pub note: String,
}

#[derive(Clone, Debug)]
pub struct PorosityOptions {
    /// Lattice refinement per cell; chosen from `max_points` when `None`.
    pub refine: Option<usize>,
    /// A witness is attached when `nu_max` falls below this value.
    pub target_nu: f64,
    /// Explicit diameters replacing the default ladder.
    pub scales: Option<Vec<f64>>,
    pub max_points: usize,
}

impl Default for PorosityOptions {
    fn default() -> Self {
        PorosityOptions { refine: None, target_nu: 1.0 / NU_DEN, scales: None, max_points: 1 << 20 }
    }
}

const NOTE: &str = "certified on the search lattice only; continuum porosity may differ by a constant factor";

pub fn scale_ladder(a0: f64, a1: f64) -> Result<Vec<f64>> {
    if !(a0 > 0.0 && a0 < a1 && a1.is_finite()) {
        return invalid(format!("degenerate scale range ({a0}, {a1})"));
    }
    let mut v = Vec::new();
    let mut r = a0 * 1.5;
    while r < a1 {
        v.push(r);
        r *= 1.5;
    }
    v.push(a1);
    Ok(v)
}

fn nu_value(j: u32) -> f64 {
    j as f64 / NU_DEN
}

#[inline]
fn is_hole(dist: f64, need: f64) -> bool {
    dist >= need * (1.0 - REL)
}

/// Refined point lattice over the embedded box of a set, padded by `pad`
/// points on every side so that holes just outside the box are seen.
#[derive(Clone, Debug)]
pub struct Lattice {
    pub dim: usize,
    pub refine: usize,
    /// Points per axis inside the box.
    pub inner: usize,
    pub pad: usize,
    /// Points per axis including padding.
    pub points: usize,
    /// Spacing in embedded units.
    pub delta: f64,
    pub offset: Vec<f64>,
}

impl Lattice {
    /// `reach` is the farthest embedded distance outside the box a hole may
    /// need to be found at.
    pub fn new(s: &GridSet, refine: Option<usize>, max_points: usize, reach: f64) -> Result<Self> {
        let n = s.side();
        let d = s.dim();
        let w = s.cell_width();
        let pad_for = |r: usize| if reach > 0.0 { (reach * r as f64 / w).ceil() as usize + 1 } else { 0 };
        let r = match refine {
            Some(r) if r >= 1 => r,
            Some(_) => return invalid("refinement must be positive"),
            None => {
                let default = match d {
                    1 => 8,
                    2 => 4,
                    _ => 2,
                };
                (1..=default)
                    .rev()
                    .find(|&r| ((r * n + 1 + 2 * pad_for(r)) as f64).powi(d as i32) <= max_points as f64)
                    .unwrap_or(1)
            }
        };
        let pad = pad_for(r);
        let inner = r * n + 1;
        let points = inner + 2 * pad;
        crate::sets::check_cap(d, points, max_points.max(1 << 20))?;
        Ok(Lattice { dim: d, refine: r, inner, pad, points, delta: w / r as f64, offset: s.embedding().offset.clone() })
    }

    pub fn total(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn coords(&self, mut idx: usize) -> [usize; MAX_DIM] {
        let mut c = [0; MAX_DIM];
        for a in (0..self.dim).rev() {
            c[a] = idx % self.points;
            idx /= self.points;
        }
        c
    }

    pub fn index(&self, c: &[usize]) -> usize {
        c[..self.dim].iter().fold(0, |acc, &v| acc * self.points + v)
    }

    /// Whether padded coordinates lie in the closed grid box.
    pub fn inside(&self, c: &[usize]) -> bool {
        c[..self.dim].iter().all(|&v| v >= self.pad && v < self.pad + self.inner)
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        let c = self.coords(idx);
        (0..self.dim).map(|a| self.offset[a] + (c[a] as f64 - self.pad as f64) * self.delta).collect()
    }
}

/// One-dimensional squared distance transform (lower envelope of parabolas).
fn dt1(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        loop {
            let p = v[k] as f64;
            let s = ((f[q] + qf * qf) - (f[v[k]] + p * p)) / (2.0 * qf - 2.0 * p);
            if s <= z[k] {
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        *o = dq * dq + f[v[k]];
    }
}

/// In-place squared Euclidean distance transform of `f` (0 on sites, `FAR`
/// elsewhere) on a cube grid with `n` points per axis.
pub(crate) fn edt(f: &mut [f64], dim: usize, n: usize) {
    let total = f.len();
    for axis in 0..dim {
        let stride = n.pow((dim - 1 - axis) as u32);
        let nl = total / n;
        let src: &[f64] = f;
        let lines: Vec<Vec<f64>> = (0..nl)
            .into_par_iter()
            .map_init(
                || (vec![0.0; n], vec![0usize; n], vec![0.0; n + 1]),
                |(g, v, z), l| {
                    let base = (l / stride) * n * stride + l % stride;
                    for (j, gj) in g.iter_mut().enumerate() {
                        *gj = src[base + j * stride];
                    }
                    let mut out = vec![0.0; n];
                    dt1(g, &mut out, v, z);
                    out
                },
            )
            .collect();
        for (l, line) in lines.into_iter().enumerate() {
            let base = (l / stride) * n * stride + l % stride;
            for (j, x) in line.into_iter().enumerate() {
                f[base + j * stride] = x;
            }
        }
    }
}

/// Squared distances (in lattice units) from every lattice point to the set.
pub fn distance_field(s: &GridSet, lat: &Lattice) -> Vec<f64> {
    let r = lat.refine;
    let n = s.side();
    let d = s.dim();
    let mut f: Vec<f64> = (0..lat.total())
        .into_par_iter()
        .map(|idx| {
            let pc = lat.coords(idx);
            if !lat.inside(&pc) {
                return FAR;
            }
            let mut cand = [[usize::MAX; 2]; MAX_DIM];
            for a in 0..d {
                let m = pc[a] - lat.pad;
                if m % r == 0 {
                    let q = m / r;
                    if q >= 1 {
                        cand[a][0] = q - 1;
                    }
                    if q < n {
                        cand[a][1] = q;
                    }
                } else {
                    cand[a][0] = m / r;
                }
            }
            for mask in 0..(1usize << d) {
                let mut c = [0usize; MAX_DIM];
                let mut ok = true;
                for a in 0..d {
                    c[a] = cand[a][(mask >> a) & 1];
                    if c[a] == usize::MAX {
                        ok = false;
                        break;
                    }
                }
                if ok && s.contains(&c[..d]) {
                    return 0.0;
                }
            }
            FAR
        })
        .collect();
    edt(&mut f, d, lat.points);
    f
}

fn check_range(s: &GridSet, a0: f64, a1: f64) -> Result<Vec<f64>> {
    if !(a0 < a1) {
        return invalid(format!("degenerate scale range ({a0}, {a1})"));
    }
    if s.is_empty() && a0 <= 0.0 {
        return invalid("scale range must be positive");
    }
    scale_ladder(a0, a1)
}

fn scales_for(s: &GridSet, a0: f64, a1: f64, opt: &PorosityOptions) -> Result<Vec<f64>> {
    let ladder = check_range(s, a0, a1)?;
    match &opt.scales {
        Some(v) if v.is_empty() => invalid("explicit scale list is empty"),
        Some(v) if v.iter().any(|r| !(*r > 0.0)) => invalid("scales must be positive"),
        Some(v) => Ok(v.clone()),
        None => Ok(ladder),
    }
}

pub fn analyze_ball_porosity(s: &GridSet, a0: f64, a1: f64) -> Result<PorosityReport> {
    analyze_ball_porosity_with(s, a0, a1, &PorosityOptions::default())
}

fn reach(scales: &[f64]) -> f64 {
    0.5 * scales.iter().copied().fold(0.0, f64::max)
}

fn sqrt_field(q: Vec<f64>) -> Vec<f64> {
    q.into_iter().map(|q| if q >= FAR * 0.5 { f64::INFINITY } else { q.sqrt() }).collect()
}

/// Largest lattice `nu` such that every ball of each tested diameter `R`
/// centered in the grid box contains a lattice point at distance at least
/// `nu R` from the set. Holes may lie outside the box.
pub fn analyze_ball_porosity_with(s: &GridSet, a0: f64, a1: f64, opt: &PorosityOptions) -> Result<PorosityReport> {
    if s.dim() == 1 {
        // an interval is a segment; share the segment scan and its end bounds
        let mut rep = analyze_line_porosity_with(s, a0, a1, 8, opt)?;
        rep.kind = PorosityKind::Ball;
        rep.directions_tested = None;
        if let Some(Witness::Segment { start, end, length, nu }) = rep.witness.take() {
            let center = vec![0.5 * (start[0] + end[0])];
            rep.witness = Some(Witness::Ball { center, diameter: length, nu });
        }
        return Ok(rep);
    }
    let scales = scales_for(s, a0, a1, opt)?;
    let lat = Lattice::new(s, opt.refine, opt.max_points, reach(&scales))?;
    let dist = sqrt_field(distance_field(s, &lat));
    let dim = lat.dim;
    let n = lat.points;
    let centers: Vec<usize> = (0..lat.total()).filter(|&i| lat.inside(&lat.coords(i))).collect();

    // largest squared distance from a center to the nearest hole point
    let worst = |need: f64| -> (f64, usize) {
        let mut h: Vec<f64> = dist.iter().map(|&d| if is_hole(d, need) { 0.0 } else { FAR }).collect();
        edt(&mut h, dim, n);
        let mut best = (f64::NEG_INFINITY, 0);
        for &i in &centers {
            if h[i] > best.0 {
                best = (h[i], i);
            }
        }
        best
    };
    let passes = |r: f64, j: u32| -> bool {
        let rad = r / (2.0 * lat.delta) * (1.0 + REL);
        worst(nu_value(j) * r / lat.delta).0 <= rad * rad
    };

    let mut per = Vec::with_capacity(scales.len());
    for &r in &scales {
        let j = if s.is_empty() {
            NU_STEPS
        } else {
            let (mut lo, mut hi) = (0u32, NU_STEPS);
            if passes(r, hi) {
                lo = hi;
            } else {
                while hi - lo > 1 {
                    let mid = (lo + hi) / 2;
                    if passes(r, mid) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
            }
            lo
        };
        per.push(nu_value(j));
    }
    let nu_max = per.iter().copied().fold(NU_CAP, f64::min);
    let mut witness = None;
    if nu_max < opt.target_nu {
        if let Some(i) = per.iter().position(|&v| v < opt.target_nu) {
            let r = scales[i];
            let (_, at) = worst(opt.target_nu * r / lat.delta);
            witness = Some(Witness::Ball { center: lat.point(at), diameter: r, nu: opt.target_nu });
        }
    }
    Ok(PorosityReport {
        kind: PorosityKind::Ball,
        nu_max,
        scale_range: (a0, a1),
        witness,
        directions_tested: None,
        samples: (scales.len() * centers.len()) as u64,
        scales,
        nu_per_scale: per,
        refine: lat.refine,
        note: NOTE.into(),
    })
}

/// Over centers `c` in `lo..=hi`, the smallest clipped window maximum of
/// `vals[c-k ..= c+k]`, with the first center attaining it. `edge` is the gap
/// between the last window sample and the true segment end; the sample just
/// beyond contributes its Lipschitz bound `vals[c±(k+1)] - (spacing - edge)`.
fn window_min_of_max(vals: &[f64], k: usize, lo_c: usize, hi_c: usize, spacing: f64, edge: f64) -> (f64, usize) {
    let n = vals.len();
    let mut dq: VecDeque<usize> = VecDeque::new();
    let mut best = (f64::INFINITY, lo_c);
    let mut next = lo_c.saturating_sub(k);
    let beyond = spacing - edge;
    for c in lo_c..=hi_c.min(n - 1) {
        let hi = (c + k).min(n - 1);
        while next <= hi {
            while dq.back().is_some_and(|&b| vals[b] <= vals[next]) {
                dq.pop_back();
            }
            dq.push_back(next);
            next += 1;
        }
        let lo = c.saturating_sub(k);
        while dq.front().is_some_and(|&f| f < lo) {
            dq.pop_front();
        }
        let mut m = vals[*dq.front().unwrap()];
        if edge > 0.0 {
            if c + k + 1 < n {
                m = m.max(vals[c + k + 1] - beyond);
            }
            if c > k {
                m = m.max(vals[c - k - 1] - beyond);
            }
        }
        if m < best.0 {
            best = (m, c);
        }
    }
    best
}

struct Line {
    vals: Vec<f64>,
    /// Padded lattice coordinates of the first sample.
    start: Vec<f64>,
    /// Sample indices whose points lie in the grid box.
    centers: (usize, usize),
}

/// Parallel lines of one direction.
struct LineFamily {
    /// Sample spacing in lattice units.
    spacing: f64,
    step: Vec<f64>,
    lines: Vec<Line>,
}

fn lattice_family(lat: &Lattice, dist: &[f64], step: &[i64]) -> LineFamily {
    let p = lat.points as i64;
    let d = lat.dim;
    let in_grid = |c: &[i64]| c.iter().all(|&x| x >= 0 && x < p);
    let mut lines = Vec::new();
    for idx in 0..lat.total() {
        let c = lat.coords(idx);
        let prev: Vec<i64> = (0..d).map(|a| c[a] as i64 - step[a]).collect();
        if in_grid(&prev) {
            continue;
        }
        let mut cur: Vec<i64> = (0..d).map(|a| c[a] as i64).collect();
        let mut vals = Vec::new();
        let mut centers: Option<(usize, usize)> = None;
        while in_grid(&cur) {
            let u: Vec<usize> = cur.iter().map(|&x| x as usize).collect();
            if lat.inside(&u) {
                let k = vals.len();
                centers = Some(centers.map_or((k, k), |(a, _)| (a, k)));
            }
            vals.push(dist[lat.index(&u)]);
            for a in 0..d {
                cur[a] += step[a];
            }
        }
        if let Some(centers) = centers {
            lines.push(Line { vals, start: (0..d).map(|a| c[a] as f64).collect(), centers });
        }
    }
    let len = step.iter().map(|&x| (x * x) as f64).sum::<f64>().sqrt();
    LineFamily { spacing: len, step: step.iter().map(|&x| x as f64).collect(), lines }
}

fn perpendicular_basis(u: &[f64]) -> Vec<Vec<f64>> {
    let d = u.len();
    let mut out: Vec<Vec<f64>> = Vec::new();
    for a in 0..d {
        let mut e = vec![0.0; d];
        e[a] = 1.0;
        for b in std::iter::once(u).chain(out.iter().map(|v| v.as_slice())) {
            let dot: f64 = e.iter().zip(b).map(|(x, y)| x * y).sum();
            e.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let nrm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm > 1e-6 {
            out.push(e.iter().map(|x| x / nrm).collect());
        }
        if out.len() == d - 1 {
            break;
        }
    }
    out
}

/// Exact distance in cell units from a point given in cell coordinates to the
/// union of kept cells, searching cells within `bound` of it.
fn exact_cell_distance(s: &GridSet, u: &[f64], bound: f64) -> f64 {
    let d = s.dim();
    let n = s.side() as i64;
    let mut lo = [0usize; MAX_DIM];
    let mut span = [1usize; MAX_DIM];
    for a in 0..d {
        let l = ((u[a] - bound).floor() as i64 - 1).clamp(0, n);
        let h = ((u[a] + bound).floor() as i64 + 1).clamp(0, n);
        if h <= l {
            return f64::INFINITY;
        }
        lo[a] = l as usize;
        span[a] = (h - l) as usize;
    }
    let mut best = f64::INFINITY;
    let mut k = [0usize; MAX_DIM];
    loop {
        let mut c = [0usize; MAX_DIM];
        for a in 0..d {
            c[a] = lo[a] + k[a];
        }
        if s.contains(&c[..d]) {
            let mut q = 0.0;
            for a in 0..d {
                let t = (c[a] as f64 - u[a]).max(u[a] - c[a] as f64 - 1.0).max(0.0);
                q += t * t;
            }
            best = best.min(q);
        }
        let mut a = d;
        loop {
            if a == 0 {
                return best.sqrt();
            }
            a -= 1;
            k[a] += 1;
            if k[a] < span[a] {
                break;
            }
            k[a] = 0;
        }
    }
}

/// Lines in a general direction sampled at unit lattice spacing. Near the
/// set values are exact distances; farther out they are the lower bound
/// `D(nearest lattice point) - |offset|`.
fn sampled_family(s: &GridSet, lat: &Lattice, dist: &[f64], u: &[f64]) -> LineFamily {
    let d = lat.dim;
    let hi = (lat.points - 1) as f64;
    let (blo, bhi) = (lat.pad as f64 - 1e-9, (lat.pad + lat.inner - 1) as f64 + 1e-9);
    let center = vec![hi / 2.0; d];
    let m = (hi * (d as f64).sqrt() / 2.0).ceil() as i64 + 1;
    let perp = perpendicular_basis(u);
    let mut offsets: Vec<Vec<i64>> = vec![vec![]];
    for _ in 0..perp.len() {
        offsets = offsets.into_iter().flat_map(|o| (-m..=m).map(move |k| [o.clone(), vec![k]].concat())).collect();
    }
    let lines = offsets
        .par_iter()
        .filter_map(|o| {
            let mut base = center.clone();
            for (k, v) in o.iter().zip(&perp) {
                base.iter_mut().zip(v).for_each(|(b, vi)| *b += *k as f64 * vi);
            }
            let mut vals = Vec::new();
            let mut start = None;
            let mut centers: Option<(usize, usize)> = None;
            for t in -m..=m {
                let x: Vec<f64> = (0..d).map(|a| base[a] + t as f64 * u[a]).collect();
                if x.iter().any(|&xi| xi < -1e-9 || xi > hi + 1e-9) {
                    if start.is_some() {
                        break;
                    }
                    continue;
                }
                if start.is_none() {
                    start = Some(x.clone());
                }
                if x.iter().all(|&xi| xi >= blo && xi <= bhi) {
                    let k = vals.len();
                    centers = Some(centers.map_or((k, k), |(a, _)| (a, k)));
                }
                let near: Vec<usize> = x.iter().map(|&xi| xi.round().clamp(0.0, hi) as usize).collect();
                let off = x.iter().zip(&near).map(|(xi, ni)| (xi - *ni as f64).powi(2)).sum::<f64>().sqrt();
                let dn = dist[lat.index(&near)];
                let v = if dn < EXACT_NEAR {
                    let r = lat.refine as f64;
                    let cu: Vec<f64> = x.iter().map(|&xi| (xi - lat.pad as f64) / r).collect();
                    exact_cell_distance(s, &cu, (dn + off) / r) * r
                } else {
                    (dn - off).max(0.0)
                };
                vals.push(v);
            }
            Some(Line { vals, start: start?, centers: centers? })
        })
        .collect();
    LineFamily { spacing: 1.0, step: u.to_vec(), lines }
}

pub fn analyze_line_porosity(s: &GridSet, a0: f64, a1: f64, dir_count: usize) -> Result<PorosityReport> {
    analyze_line_porosity_with(s, a0, a1, dir_count, &PorosityOptions::default())
}

/// Largest lattice `nu` such that every tested segment of each diameter `R`,
/// centered in the grid box, holds a point at distance at least `nu R` from
/// the set. Axis and diagonal directions walk the lattice exactly; the other
/// sampled directions use a Lipschitz lower bound of the distance field.
pub fn analyze_line_porosity_with(
    s: &GridSet,
    a0: f64,
    a1: f64,
    dir_count: usize,
    opt: &PorosityOptions,
) -> Result<PorosityReport> {
    if s.dim() >= 2 && dir_count < 8 {
        return invalid("at least 8 directions are required");
    }
    let scales = scales_for(s, a0, a1, opt)?;
    let lat = Lattice::new(s, opt.refine, opt.max_points, reach(&scales))?;
    let dist = sqrt_field(distance_field(s, &lat));

    let steps = lattice_steps(s.dim());
    let step_dirs: Vec<Vec<f64>> =
        steps.iter().map(|v| normalize(&v.iter().map(|&x| x as f64).collect::<Vec<_>>())).collect();
    let mut families: Vec<LineFamily> = steps.iter().map(|st| lattice_family(&lat, &dist, st)).collect();
    if s.dim() >= 2 {
        for u in sphere_directions(s.dim(), dir_count) {
            let dup = step_dirs.iter().any(|v| {
                let dot: f64 = v.iter().zip(&u).map(|(a, b)| a * b).sum();
                (dot.abs() - 1.0).abs() < 1e-12
            });
            if !dup {
                families.push(sampled_family(s, &lat, &dist, &u));
            }
        }
    }

    let mut per = Vec::with_capacity(scales.len());
    let mut witness = None;
    let mut samples = 0u64;
    for &r in &scales {
        // (window minimum, family, line, center, half window)
        let mut best = (f64::INFINITY, 0usize, 0usize, 0usize, 0usize);
        for (fi, fam) in families.iter().enumerate() {
            let half = r / (2.0 * fam.spacing * lat.delta) * (1.0 + REL);
            let k = half.floor() as usize;
            let edge = (half - k as f64) * fam.spacing;
            let mins: Vec<(f64, usize)> = fam
                .lines
                .par_iter()
                .map(|l| window_min_of_max(&l.vals, k, l.centers.0, l.centers.1, fam.spacing, edge))
                .collect();
            samples += fam.lines.iter().map(|l| (l.centers.1 - l.centers.0 + 1) as u64).sum::<u64>();
            for (li, (m, c)) in mins.into_iter().enumerate() {
                if m < best.0 {
                    best = (m, fi, li, c, k);
                }
            }
        }
        let mut j = NU_STEPS;
        while j > 0 && !is_hole(best.0, nu_value(j) * r / lat.delta) {
            j -= 1;
        }
        per.push(nu_value(j));
        if witness.is_none() && nu_value(j) < opt.target_nu && best.0.is_finite() {
            let (_, fi, li, c, k) = best;
            let fam = &families[fi];
            let line = &fam.lines[li];
            let (lo, hi) = (c.saturating_sub(k), (c + k).min(line.vals.len() - 1));
            let at = |i: usize| -> Vec<f64> {
                (0..lat.dim)
                    .map(|a| lat.offset[a] + (line.start[a] + i as f64 * fam.step[a] - lat.pad as f64) * lat.delta)
                    .collect()
            };
            witness = Some(Witness::Segment { start: at(lo), end: at(hi), length: r, nu: opt.target_nu });
        }
    }
    let nu_max = per.iter().copied().fold(NU_CAP, f64::min);
    if nu_max >= opt.target_nu {
        witness = None;
    }
    Ok(PorosityReport {
        kind: PorosityKind::Line,
        nu_max,
        scale_range: (a0, a1),
        witness,
        directions_tested: Some(families.len()),
        scales,
        nu_per_scale: per,
        refine: lat.refine,
        samples,
        note: NOTE.into(),
    })
}

/// The one-dimensional trace of `s` along the lattice line through the box
/// lattice point `start` with step `step`, as a set whose cells are the
/// segments between consecutive lattice points. A segment is kept when its
/// midpoint lies in `s`.
#[derive(Clone, Debug)]
pub struct LineRestriction {
    pub set: GridSet,
    pub origin: Vec<f64>,
    pub direction: Vec<f64>,
}

pub fn restrict_to_lattice_line(s: &GridSet, refine: usize, step: &[i64], start: &[usize]) -> Result<LineRestriction> {
    let lat = Lattice::new(s, Some(refine), usize::MAX, 0.0)?;
    let d = s.dim();
    if step.len() != d || start.len() != d || step.iter().all(|&x| x == 0) {
        return invalid("step and start must match the dimension");
    }
    let p = lat.points as i64;
    let mut cur: Vec<i64> = start.iter().map(|&x| x as i64).collect();
    if cur.iter().any(|&x| x >= p) {
        return invalid("start lies outside the lattice");
    }
    while cur.iter().zip(step).all(|(c, st)| c - st >= 0 && c - st < p) {
        cur.iter_mut().zip(step).for_each(|(c, st)| *c -= st);
    }
    let origin: Vec<f64> = (0..d).map(|a| lat.offset[a] + cur[a] as f64 * lat.delta).collect();
    let slen = step.iter().map(|&x| (x * x) as f64).sum::<f64>().sqrt();
    let mut kept = Vec::new();
    loop {
        let nxt: Vec<i64> = cur.iter().zip(step).map(|(c, st)| c + st).collect();
        if nxt.iter().any(|&x| x < 0 || x >= p) {
            break;
        }
        let mid: Vec<f64> = (0..d).map(|a| lat.offset[a] + (cur[a] + nxt[a]) as f64 * 0.5 * lat.delta).collect();
        kept.push(s.contains_point(&mid));
        cur = nxt;
    }
    if kept.is_empty() {
        return invalid("line meets the grid in a single point");
    }
    let emb = Embedding { offset: vec![0.0], scale: slen * lat.delta };
    let mut set = GridSet::empty(1, kept.len(), emb)?;
    for (i, k) in kept.iter().enumerate() {
        if *k {
            set.insert_index(i);
        }
    }
    let direction = normalize(&step.iter().map(|&x| x as f64).collect::<Vec<_>>());
    Ok(LineRestriction { set, origin, direction })
}

fn cell_range(j: usize, m: usize, n: usize) -> (usize, usize) {
    // cells whose interiors meet the j-th of m equal parts of [0, n]
    let lo = j * n / m;
    let hi = ((j + 1) * n).div_ceil(m) - 1;
    (lo, hi.min(n - 1))
}

struct Prefix {
    sides: [usize; MAX_DIM],
    sums: Vec<u64>,
}

impl Prefix {
    fn new(s: &GridSet) -> Self {
        let mut sides = [1; MAX_DIM];
        for side in sides.iter_mut().take(s.dim()) {
            *side = s.side();
        }
        let (a, b, c) = (sides[0] + 1, sides[1] + 1, sides[2] + 1);
        let mut sums = vec![0u64; a * b * c];
        let at = |i: usize, j: usize, k: usize| (i * b + j) * c + k;
        for i in 1..a {
            for j in 1..b {
                for k in 1..c {
                    let cell = [i - 1, j - 1, k - 1];
                    let v = s.contains(&cell[..s.dim()]) as u64;
                    sums[at(i, j, k)] = v + sums[at(i - 1, j, k)] + sums[at(i, j - 1, k)] + sums[at(i, j, k - 1)]
                        - sums[at(i - 1, j - 1, k)]
                        - sums[at(i - 1, j, k - 1)]
                        - sums[at(i, j - 1, k - 1)]
                        + sums[at(i - 1, j - 1, k - 1)];
                }
            }
        }
        Prefix { sides, sums }
    }

    /// Kept cells in the inclusive index box `[lo, hi]`.
    fn count(&self, lo: [usize; MAX_DIM], hi: [usize; MAX_DIM]) -> u64 {
        let (b, c) = (self.sides[1] + 1, self.sides[2] + 1);
        let at = |i: usize, j: usize, k: usize| self.sums[(i * b + j) * c + k];
        let (i0, j0, k0) = (lo[0], lo[1], lo[2]);
        let (i1, j1, k1) = (hi[0] + 1, hi[1] + 1, hi[2] + 1);
        (at(i1, j1, k1) + at(i0, j0, k1) + at(i0, j1, k0) + at(i1, j0, k0))
            - (at(i0, j1, k1) + at(i1, j0, k1) + at(i1, j1, k0) + at(i0, j0, k0))
    }
}

fn partition_count(s: &GridSet, l: usize, n: u32) -> Result<usize> {
    let m = s.box_side() * (l as f64).powi(n as i32);
    let mr = m.round();
    if (m - mr).abs() > 1e-9 * m.max(1.0) || mr < 1.0 {
        return invalid(format!("box side is not a multiple of {l}^-{n}"));
    }
    Ok(mr as usize)
}

/// Exact box-porosity check at base `l` and depth `n`. Cubes meet the set
/// when their interiors overlap a kept cell.
pub fn check_box_porosity(s: &GridSet, l: usize, n: u32) -> Result<bool> {
    Ok(box_porosity_witness(s, l, n)?.is_none())
}

/// The first occupied depth-`n` cube without an empty child, if any.
pub fn box_porosity_witness(s: &GridSet, l: usize, n: u32) -> Result<Option<Witness>> {
    if l < 3 {
        return invalid("box porosity base must be at least 3");
    }
    let mn = partition_count(s, l, n)?;
    let m1 = mn * l;
    if m1 > s.side() {
        return invalid(format!("depth {n} is not resolvable: {m1} children per axis exceed grid side {}", s.side()));
    }
    let d = s.dim();
    let pre = Prefix::new(s);
    let side_n = s.side();
    let range = |j: &[usize], m: usize| -> ([usize; MAX_DIM], [usize; MAX_DIM]) {
        let mut lo = [0; MAX_DIM];
        let mut hi = [0; MAX_DIM];
        for a in 0..d {
            let (x, y) = cell_range(j[a], m, side_n);
            lo[a] = x;
            hi[a] = y;
        }
        (lo, hi)
    };
    let mut q = [0usize; MAX_DIM];
    loop {
        let (lo, hi) = range(&q, mn);
        if pre.count(lo, hi) > 0 {
            let mut child = [0usize; MAX_DIM];
            let mut found = false;
            loop {
                let mut cj = [0usize; MAX_DIM];
                for a in 0..d {
                    cj[a] = q[a] * l + child[a];
                }
                let (clo, chi) = range(&cj, m1);
                if pre.count(clo, chi) == 0 {
                    found = true;
                    break;
                }
                if !crate::sets::advance(&mut child, d, l) {
                    break;
                }
            }
            if !found {
                let w = s.box_side() / mn as f64;
                let lower = (0..d).map(|a| s.embedding().offset[a] + q[a] as f64 * w).collect();
                return Ok(Some(Witness::Cube { lower, side: w, depth: n }));
            }
        }
        if !crate::sets::advance(&mut q, d, mn) {
            return Ok(None);
        }
    }
}

/// Depths `n` at which [`check_box_porosity`] can run, limited to
/// `L^-n >= min_side`.
pub fn resolvable_depths(s: &GridSet, l: usize, min_side: f64) -> Vec<u32> {
    let mut out = Vec::new();
    for n in 0..64u32 {
        let Ok(mn) = partition_count(s, l, n) else { break };
        if mn * l > s.side() || (l as f64).powi(-(n as i32)) < min_side * (1.0 - 1e-12) {
            break;
        }
        out.push(n);
    }
    out
}

/// Length of `{t in [0, len] : p0 + t u in s}`, exact up to rounding.
pub fn segment_measure(s: &GridSet, p0: &[f64], u: &[f64], len: f64) -> f64 {
    let d = s.dim();
    let w = s.cell_width();
    let mut ts = vec![0.0, len];
    for a in 0..d {
        if u[a].abs() < 1e-15 {
            continue;
        }
        let off = s.embedding().offset[a];
        let (x0, x1) = (p0[a], p0[a] + len * u[a]);
        let (lo, hi) = (x0.min(x1), x0.max(x1));
        let k0 = ((lo - off) / w).floor().max(0.0) as i64;
        let k1 = ((hi - off) / w).ceil().min(s.side() as f64) as i64;
        for k in k0..=k1 {
            let t = (off + k as f64 * w - p0[a]) / u[a];
            if t > 0.0 && t < len {
                ts.push(t);
            }
        }
    }
    ts.sort_by(f64::total_cmp);
    let mut total = 0.0;
    let mut mid = [0.0; MAX_DIM];
    for pair in ts.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b - a <= 0.0 {
            continue;
        }
        let t = 0.5 * (a + b);
        for i in 0..d {
            mid[i] = p0[i] + t * u[i];
        }
        if s.contains_point(&mid[..d]) {
            total += b - a;
        }
    }
    total
}

/// Largest `|tau ∩ s|` over segments of length `r`: every axis-parallel row
/// through cell centers starting on the low face, plus `segment_count`
/// Halton-placed segments in spread directions.
pub fn line_intersection_profile(s: &GridSet, r: f64, segment_count: usize) -> Result<f64> {
    let d = s.dim();
    if !(r > 0.0 && r <= s.box_side() * (d as f64).sqrt() * (1.0 + 1e-12)) {
        return invalid(format!("segment length {r} outside the embedded extent"));
    }
    if s.is_empty() {
        return Ok(0.0);
    }
    let n = s.side();
    let (lo, _) = s.bounding_box();
    let w = s.cell_width();
    let rows = n.pow(d as u32 - 1);
    let axis_max = (0..d)
        .flat_map(|a| (0..rows).map(move |row| (a, row)))
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&(a, mut row)| {
            let mut p0 = vec![0.0; d];
            let mut u = vec![0.0; d];
            u[a] = 1.0;
            for b in (0..d).rev() {
                if b == a {
                    p0[b] = lo[b];
                    continue;
                }
                p0[b] = lo[b] + ((row % n) as f64 + 0.5) * w;
                row /= n;
            }
            segment_measure(s, &p0, &u, r)
        })
        .reduce(|| 0.0, f64::max);
    let dirs = oriented_directions(d, segment_count.max(1));
    let rand_max = (0..segment_count)
        .into_par_iter()
        .map(|i| {
            let h = halton(i as u64, d);
            let p0: Vec<f64> = (0..d).map(|a| lo[a] + h[a] * s.box_side()).collect();
            segment_measure(s, &p0, &dirs[i % dirs.len()], r)
        })
        .reduce(|| 0.0, f64::max);
    Ok(axis_max.max(rand_max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaFit {
    pub gamma: f64,
    pub log_c: f64,
    pub max_residual: f64,
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
}

fn gamma_from(a0: f64, radii: &[f64], values: Vec<f64>, power: i32) -> Result<GammaFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (r, v) in radii.iter().zip(&values) {
        if *v > 0.0 {
            xs.push((a0 / r).ln());
            ys.push((v / r.powi(power)).ln());
        }
    }
    let LineFit { slope, intercept, max_residual } = fit_line(&xs, &ys)?;
    Ok(GammaFit { gamma: slope, log_c: intercept, max_residual, radii: radii.to_vec(), values })
}

/// Fits `max |tau ∩ s| = C R (a0 / R)^gamma` over the given lengths.
pub fn fit_intersection_gamma(s: &GridSet, a0: f64, radii: &[f64], segment_count: usize) -> Result<GammaFit> {
    let values = radii.iter().map(|&r| line_intersection_profile(s, r, segment_count)).collect::<Result<Vec<_>>>()?;
    gamma_from(a0, radii, values, 1)
}

/// Measure of `s ∩ B_radius(center)`, counting cells by their centers.
pub fn ball_mass(s: &GridSet, center: &[f64], radius: f64) -> f64 {
    let d = s.dim();
    let vol = s.cell_width().powi(d as i32);
    s.iter()
        .filter(|&idx| {
            let c = s.cell_center(&s.coords(idx));
            (0..d).map(|a| (c[a] - center[a]).powi(2)).sum::<f64>() <= radius * radius
        })
        .count() as f64
        * vol
}

/// Largest [`ball_mass`] over up to `count` ball centers taken evenly from the
/// kept cells.
pub fn ball_mass_profile(s: &GridSet, radius: f64, count: usize) -> f64 {
    let cells: Vec<usize> = s.iter().collect();
    if cells.is_empty() {
        return 0.0;
    }
    let stride = cells.len().div_ceil(count.max(1));
    cells
        .par_iter()
        .step_by(stride)
        .map(|&idx| ball_mass(s, &s.cell_center(&s.coords(idx))[..s.dim()], radius))
        .reduce(|| 0.0, f64::max)
}

/// Fits `max |s ∩ B_R| = C R^d (a0 / R)^gamma`.
pub fn fit_mass_gamma(s: &GridSet, a0: f64, radii: &[f64], count: usize) -> Result<GammaFit> {
    let values = radii.iter().map(|&r| ball_mass_profile(s, r, count)).collect();
    gamma_from(a0, radii, values, s.dim() as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sets::{gen_cantor_product, gen_sierpinski, CantorSpec, DEFAULT_MEMORY_CAP};

    fn brute_edt(mask: &[bool], n: usize, dim: usize) -> Vec<f64> {
        let coords = |mut i: usize| {
            let mut c = vec![0i64; dim];
            for a in (0..dim).rev() {
                c[a] = (i % n) as i64;
                i /= n;
            }
            c
        };
        (0..mask.len())
            .map(|i| {
                let ci = coords(i);
                (0..mask.len())
                    .filter(|&j| mask[j])
                    .map(|j| coords(j).iter().zip(&ci).map(|(a, b)| ((a - b) * (a - b)) as f64).sum::<f64>())
                    .fold(FAR, f64::min)
            })
            .collect()
    }

    #[test]
    fn edt_matches_brute_force() {
        let n: usize = 9;
        for dim in 1..=3 {
            let total = n.pow(dim as u32);
            let mask: Vec<bool> = (0..total).map(|i| (i * 7919) % 23 == 0).collect();
            let mut f: Vec<f64> = mask.iter().map(|&m| if m { 0.0 } else { FAR }).collect();
            edt(&mut f, dim, n);
            assert_eq!(f, brute_edt(&mask, n, dim));
        }
    }

    #[test]
    fn window_extremes() {
        let v = [3.0, 1.0, 0.0, 0.0, 5.0, 2.0];
        assert_eq!(window_min_of_max(&v, 0, 0, 5, 1.0, 0.0), (0.0, 2));
        assert_eq!(window_min_of_max(&v, 1, 0, 5, 1.0, 0.0), (1.0, 2));
        assert_eq!(window_min_of_max(&v, 10, 0, 5, 1.0, 0.0), (5.0, 0));
        assert_eq!(window_min_of_max(&v, 1, 3, 4, 1.0, 0.0), (5.0, 3));
        // a segment reaching 0.5 past the window at center 2 sees 5 - 0.5 from index 4
        assert_eq!(window_min_of_max(&v, 1, 2, 3, 1.0, 0.5), (4.5, 2));
    }

    #[test]
    fn exact_distance_to_cells() {
        let mut s = GridSet::empty(2, 4, Embedding::unit(2, 4)).unwrap();
        s.insert(&[1, 1]);
        assert_eq!(exact_cell_distance(&s, &[1.5, 1.5], 1.0), 0.0);
        assert!((exact_cell_distance(&s, &[3.0, 3.0], 3.0) - 2f64.sqrt()).abs() < 1e-15);
        assert!((exact_cell_distance(&s, &[0.25, 1.5], 1.0) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn ladder_shape() {
        let l = scale_ladder(1.0, 3.0).unwrap();
        assert_eq!(l, vec![1.5, 2.25, 3.0]);
        assert!(scale_ladder(2.0, 2.0).is_err());
    }

    #[test]
    fn empty_set_is_maximally_porous() {
        let s = GridSet::empty(2, 9, Embedding::physical(2, 9)).unwrap();
        let b = analyze_ball_porosity(&s, 0.3, 1.0).unwrap();
        assert_eq!(b.nu_max, NU_CAP);
        assert!(b.witness.is_none());
        let l = analyze_line_porosity(&s, 0.3, 1.0, 8).unwrap();
        assert_eq!(l.nu_max, NU_CAP);
    }

    #[test]
    fn full_grid_has_ball_witness() {
        let n = 27;
        let s = GridSet::full(2, n, Embedding::physical(2, n)).unwrap();
        let rep = analyze_ball_porosity(&s, s.cell_width(), 1.0).unwrap();
        assert_eq!(rep.nu_max, 0.0);
        assert!(matches!(rep.witness, Some(Witness::Ball { .. })));
    }

    #[test]
    fn cantor_interval_porosity() {
        let s = gen_cantor_product(&CantorSpec::uniform(1, 3, &[0, 2], 5), DEFAULT_MEMORY_CAP)
            .unwrap()
            .with_embedding(Embedding::unit(1, 243))
            .unwrap();
        let rep = analyze_ball_porosity(&s, 1.0 / 243.0, 1.0).unwrap();
        assert!(rep.nu_max >= 1.0 / 9.0, "nu_max = {}", rep.nu_max);
    }

    #[test]
    fn degenerate_ranges_rejected() {
        let s = GridSet::empty(2, 9, Embedding::physical(2, 9)).unwrap();
        assert!(analyze_ball_porosity(&s, 1.0, 0.5).is_err());
        assert!(analyze_line_porosity(&s, 0.3, 1.0, 4).is_err());
    }

    #[test]
    fn sierpinski_edge_witness() {
        let s = gen_sierpinski(3, DEFAULT_MEMORY_CAP).unwrap();
        let rep = analyze_line_porosity(&s, s.cell_width(), 1.0, 8).unwrap();
        assert_eq!(rep.nu_max, 0.0);
        let Some(Witness::Segment { start, end, .. }) = rep.witness else { panic!("no witness") };
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            let p: Vec<f64> = start.iter().zip(&end).map(|(a, b)| a + t * (b - a)).collect();
            assert!(s.contains_point(&p));
        }
    }

    #[test]
    fn box_porosity_basics() {
        let full = GridSet::full(2, 27, Embedding::unit(2, 27)).unwrap();
        assert!(!check_box_porosity(&full, 3, 0).unwrap());
        let c = gen_cantor_product(&CantorSpec::uniform(2, 3, &[0, 2], 4), DEFAULT_MEMORY_CAP)
            .unwrap()
            .with_embedding(Embedding::unit(2, 81))
            .unwrap();
        for n in 0..4 {
            assert!(check_box_porosity(&c, 3, n).unwrap());
        }
        assert!(check_box_porosity(&c, 3, 4).is_err());
    }

    #[test]
    fn cell_ranges_use_interiors() {
        assert_eq!(cell_range(0, 3, 9), (0, 2));
        assert_eq!(cell_range(1, 2, 9), (4, 8));
        assert_eq!(cell_range(0, 2, 9), (0, 4));
    }

    #[test]
    fn cantor_row_intersection() {
        let s = gen_cantor_product(&CantorSpec::uniform(2, 3, &[0, 2], 5), DEFAULT_MEMORY_CAP)
            .unwrap()
            .with_embedding(Embedding::unit(2, 243))
            .unwrap();
        let w = s.cell_width();
        let m = segment_measure(&s, &[0.0, 0.5 * w], &[1.0, 0.0], 1.0);
        // exact oracle: 32 kept cells of width 1/243 along the row
        assert!((m - 32.0 / 243.0).abs() < 1e-12);
        let prof = line_intersection_profile(&s, 1.0, 16).unwrap();
        assert!((prof - 32.0 / 243.0).abs() < 1e-12);
        let full = GridSet::full(2, 16, Embedding::physical(2, 16)).unwrap();
        assert!((line_intersection_profile(&full, 0.7, 8).unwrap() - 0.7).abs() < 1e-12);
    }
}
