//! Lattice fractal sets.
//!
//! A [`GridSet`] is a subset of the cells of an `N^d` grid together with an
//! affine embedding that sends cell `(i_1, .., i_d)` to the closed cube
//! `offset + scale * ([i_1, i_1 + 1] x .. x [i_d, i_d + 1])`.
//!
//! Two embeddings are used throughout: physical sets live in `[-1, 1]^d`
//! (cell width `2/N`) and frequency sets in `[-N/2, N/2]^d` (cell width 1).
//! A point on a face shared by two cells belongs to the lower-index cell.
//!
//! Cells are stored row-major with axis 0 slowest. The `.gset` file layout is
//!
//! ```text
//! "GSET1" | dim: u8 | side: u64 LE | offset: dim x f64 LE | scale: f64 LE | bitmap
//! ```
//!
//! where the bitmap has `ceil(N^d / 8)` bytes, cell `j` at bit `j % 8`
//! (least significant first) of byte `j / 8`, and padding bits are zero.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const DEFAULT_MEMORY_CAP: usize = 10_000_000;
pub const MAX_DIM: usize = 3;
const MAGIC: &[u8; 5] = b"GSET1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub offset: Vec<f64>,
    pub scale: f64,
}

impl Embedding {
    /// `[-1, 1]^d`, cell width `2/N`.
    pub fn physical(dim: usize, side: usize) -> Self {
        Embedding { offset: vec![-1.0; dim], scale: 2.0 / side as f64 }
    }

    /// `[-N/2, N/2]^d`, cell width 1.
    pub fn frequency(dim: usize, side: usize) -> Self {
        Embedding { offset: vec![-(side as f64) / 2.0; dim], scale: 1.0 }
    }

    /// `[0, 1]^d`, cell width `1/N`.
    pub fn unit(dim: usize, side: usize) -> Self {
        Embedding { offset: vec![0.0; dim], scale: 1.0 / side as f64 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSet {
    dim: usize,
    side: usize,
    words: Vec<u64>,
    count: usize,
    embedding: Embedding,
}

fn total_cells(dim: usize, side: usize) -> Option<usize> {
    let mut t: usize = 1;
    for _ in 0..dim {
        t = t.checked_mul(side)?;
    }
    Some(t)
}

pub(crate) fn check_cap(dim: usize, side: usize, cap: usize) -> Result<usize> {
    let cells = (side as u128).pow(dim as u32);
    if cells > cap as u128 {
        return Err(Error::MemoryCap { cells, cap });
    }
    Ok(cells as usize)
}

impl GridSet {
    pub fn empty(dim: usize, side: usize, embedding: Embedding) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return invalid(format!("dimension {dim} outside 1..={MAX_DIM}"));
        }
        if side == 0 {
            return invalid("side must be positive");
        }
        if embedding.offset.len() != dim {
            return invalid("embedding offset length differs from dimension");
        }
        if !(embedding.scale > 0.0 && embedding.scale.is_finite()) {
            return invalid("embedding scale must be positive and finite");
        }
        if embedding.offset.iter().any(|o| !o.is_finite()) {
            return invalid("embedding offset must be finite");
        }
        let total = total_cells(dim, side).ok_or_else(|| Error::MemoryCap {
            cells: (side as u128).pow(dim as u32),
            cap: usize::MAX,
        })?;
        Ok(GridSet { dim, side, words: vec![0; total.div_ceil(64)], count: 0, embedding })
    }

    pub fn full(dim: usize, side: usize, embedding: Embedding) -> Result<Self> {
        let mut s = Self::empty(dim, side, embedding)?;
        for i in 0..s.total() {
            s.insert_index(i);
        }
        Ok(s)
    }

    /// Builds a set from a membership predicate on cell coordinates.
    pub fn from_fn(
        dim: usize,
        side: usize,
        embedding: Embedding,
        cap: usize,
        f: impl Fn(&[usize]) -> bool,
    ) -> Result<Self> {
        check_cap(dim, side, cap)?;
        let mut s = Self::empty(dim, side, embedding)?;
        for i in 0..s.total() {
            let c = s.coords(i);
            if f(&c[..dim]) {
                s.insert_index(i);
            }
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Number of kept cells.
    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// `N^d`.
    pub fn total(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    pub fn embedding(&self) -> &Embedding {
        &self.embedding
    }

    pub fn with_embedding(mut self, embedding: Embedding) -> Result<Self> {
        Self::empty(self.dim, 1, embedding.clone())?;
        self.embedding = embedding;
        Ok(self)
    }

    pub fn cell_width(&self) -> f64 {
        self.embedding.scale
    }

    pub fn index(&self, c: &[usize]) -> usize {
        c[..self.dim].iter().fold(0, |acc, &ci| acc * self.side + ci)
    }

    pub fn coords(&self, mut idx: usize) -> [usize; MAX_DIM] {
        let mut c = [0usize; MAX_DIM];
        for a in (0..self.dim).rev() {
            c[a] = idx % self.side;
            idx /= self.side;
        }
        c
    }

    pub fn contains_index(&self, idx: usize) -> bool {
        (self.words[idx >> 6] >> (idx & 63)) & 1 == 1
    }

    pub fn contains(&self, c: &[usize]) -> bool {
        c.len() >= self.dim && c[..self.dim].iter().all(|&ci| ci < self.side) && self.contains_index(self.index(c))
    }

    pub fn insert_index(&mut self, idx: usize) {
        let w = &mut self.words[idx >> 6];
        let bit = 1u64 << (idx & 63);
        if *w & bit == 0 {
            *w |= bit;
            self.count += 1;
        }
    }

    pub fn insert(&mut self, c: &[usize]) {
        let idx = self.index(c);
        self.insert_index(idx);
    }

    pub fn remove_index(&mut self, idx: usize) {
        let w = &mut self.words[idx >> 6];
        let bit = 1u64 << (idx & 63);
        if *w & bit != 0 {
            *w &= !bit;
            self.count -= 1;
        }
    }

    /// Linear indices of kept cells in increasing order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut bits = w;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let tz = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(wi * 64 + tz)
            })
        })
    }

    /// Membership as a dense boolean array indexed like [`GridSet::index`].
    pub fn to_mask(&self) -> Vec<bool> {
        (0..self.total()).map(|i| self.contains_index(i)).collect()
    }

    /// Lower corner of a cell in embedded coordinates.
    pub fn cell_lower(&self, c: &[usize]) -> [f64; MAX_DIM] {
        let mut p = [0.0; MAX_DIM];
        for a in 0..self.dim {
            p[a] = self.embedding.offset[a] + self.embedding.scale * c[a] as f64;
        }
        p
    }

    pub fn cell_center(&self, c: &[usize]) -> [f64; MAX_DIM] {
        let mut p = self.cell_lower(c);
        for v in p.iter_mut().take(self.dim) {
            *v += 0.5 * self.embedding.scale;
        }
        p
    }

    /// Embedded bounding box `(lo, hi)` of the whole grid.
    pub fn bounding_box(&self) -> ([f64; MAX_DIM], [f64; MAX_DIM]) {
        let mut lo = [0.0; MAX_DIM];
        let mut hi = [0.0; MAX_DIM];
        for a in 0..self.dim {
            lo[a] = self.embedding.offset[a];
            hi[a] = self.embedding.offset[a] + self.embedding.scale * self.side as f64;
        }
        (lo, hi)
    }

    /// Side length of the embedded grid box.
    pub fn box_side(&self) -> f64 {
        self.embedding.scale * self.side as f64
    }

    /// The cell whose closed cube contains `p`; on shared faces the lower
    /// index wins. `None` outside the grid box.
    pub fn locate(&self, p: &[f64]) -> Option<[usize; MAX_DIM]> {
        let mut c = [0usize; MAX_DIM];
        for a in 0..self.dim {
            let u = (p[a] - self.embedding.offset[a]) / self.embedding.scale;
            if !(0.0..=self.side as f64).contains(&u) {
                return None;
            }
            let i = if u == 0.0 { 0 } else { (u.ceil() as usize).saturating_sub(1) };
            c[a] = i.min(self.side - 1);
        }
        Some(c)
    }

    /// Whether `p` lies in the union of kept closed cells.
    pub fn contains_point(&self, p: &[f64]) -> bool {
        let Some(c) = self.locate(p) else { return false };
        if self.contains(&c[..self.dim]) {
            return true;
        }
        // a point on a face also belongs to the neighbouring cells
        let mut alts: Vec<[usize; MAX_DIM]> = vec![c];
        for a in 0..self.dim {
            let u = (p[a] - self.embedding.offset[a]) / self.embedding.scale;
            if u.fract() == 0.0 {
                let up = u as usize;
                let mut more = Vec::new();
                for q in &alts {
                    if up < self.side && up != q[a] {
                        let mut r = *q;
                        r[a] = up;
                        more.push(r);
                    }
                }
                alts.extend(more);
            }
        }
        alts.iter().any(|q| self.contains(&q[..self.dim]))
    }

    /// Lebesgue measure of the union of kept cells.
    pub fn measure(&self) -> f64 {
        self.count as f64 * self.embedding.scale.powi(self.dim as i32)
    }

    /// Largest Euclidean norm of a point of a kept cell.
    pub fn max_radius(&self) -> f64 {
        let w = self.embedding.scale;
        let mut best: f64 = 0.0;
        for idx in self.iter() {
            let c = self.coords(idx);
            let lo = self.cell_lower(&c);
            let mut r2 = 0.0;
            for a in 0..self.dim {
                let m = lo[a].abs().max((lo[a] + w).abs());
                r2 += m * m;
            }
            best = best.max(r2);
        }
        best.sqrt()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let nbytes = self.total().div_ceil(8);
        let mut out = Vec::with_capacity(5 + 1 + 8 + 8 * (self.dim + 1) + nbytes);
        out.extend_from_slice(MAGIC);
        out.push(self.dim as u8);
        out.extend_from_slice(&(self.side as u64).to_le_bytes());
        for o in &self.embedding.offset {
            out.extend_from_slice(&o.to_le_bytes());
        }
        out.extend_from_slice(&self.embedding.scale.to_le_bytes());
        for j in 0..nbytes {
            out.push((self.words[j / 8] >> (8 * (j % 8))) as u8);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], cap: usize) -> Result<Self> {
        let fail = |m: &str| Error::Format(m.to_string());
        if bytes.len() < 14 || &bytes[..5] != MAGIC {
            return Err(fail("missing GSET1 header"));
        }
        let dim = bytes[5] as usize;
        if dim == 0 || dim > MAX_DIM {
            return Err(fail("unsupported dimension"));
        }
        let side = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
        let side = usize::try_from(side).map_err(|_| fail("side too large"))?;
        let total = check_cap(dim, side, cap)?;
        let mut pos = 14;
        let read_f64 = |pos: &mut usize| -> Result<f64> {
            let b = bytes.get(*pos..*pos + 8).ok_or_else(|| fail("truncated header"))?;
            *pos += 8;
            Ok(f64::from_le_bytes(b.try_into().unwrap()))
        };
        let mut offset = Vec::with_capacity(dim);
        for _ in 0..dim {
            offset.push(read_f64(&mut pos)?);
        }
        let scale = read_f64(&mut pos)?;
        let nbytes = total.div_ceil(8);
        if bytes.len() != pos + nbytes {
            return Err(fail("bitmap length mismatch"));
        }
        let mut s = GridSet::empty(dim, side, Embedding { offset, scale })
            .map_err(|e| Error::Format(e.to_string()))?;
        for (j, &b) in bytes[pos..].iter().enumerate() {
            s.words[j / 8] |= (b as u64) << (8 * (j % 8));
        }
        if total % 64 != 0 {
            let last = s.words.len() - 1;
            if s.words[last] >> (total % 64) != 0 {
                return Err(fail("nonzero padding bits"));
            }
        }
        s.count = s.words.iter().map(|w| w.count_ones() as usize).sum();
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, cap: usize) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, cap)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CantorSpec {
    pub dim: usize,
    pub base: usize,
    /// One digit list per axis.
    pub kept_digits: Vec<Vec<usize>>,
    pub depth: u32,
}

impl CantorSpec {
    /// Same digit set on every axis.
    pub fn uniform(dim: usize, base: usize, digits: &[usize], depth: u32) -> Self {
        CantorSpec { dim, base, kept_digits: vec![digits.to_vec(); dim], depth }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > MAX_DIM {
            return invalid(format!("dimension {} outside 1..={MAX_DIM}", self.dim));
        }
        if self.base < 3 {
            return invalid("base must be at least 3");
        }
        if self.depth == 0 {
            return invalid("depth must be positive");
        }
        if self.kept_digits.len() != self.dim {
            return invalid("need one digit list per axis");
        }
        for digits in &self.kept_digits {
            if digits.is_empty() {
                return invalid("kept digit list is empty");
            }
            if digits.iter().any(|&g| g >= self.base) {
                return invalid("kept digit outside 0..base");
            }
        }
        Ok(())
    }

    pub fn side(&self) -> usize {
        self.base.pow(self.depth)
    }

    /// Expected cell count `prod_axis |digits|^depth`.
    pub fn cell_count(&self) -> u128 {
        self.kept_digits
            .iter()
            .map(|d| {
                let mut u = d.clone();
                u.sort_unstable();
                u.dedup();
                (u.len() as u128).pow(self.depth)
            })
            .product()
    }

    /// Sum over axes of `log|digits| / log base`.
    pub fn dimension(&self) -> f64 {
        self.kept_digits
            .iter()
            .map(|d| {
                let mut u = d.clone();
                u.sort_unstable();
                u.dedup();
                (u.len() as f64).ln() / (self.base as f64).ln()
            })
            .sum()
    }
}

/// Indices in `[0, base^depth)` whose base expansion uses only `digits`.
pub fn cantor_indices(base: usize, digits: &[usize], depth: u32) -> Vec<usize> {
    let mut u = digits.to_vec();
    u.sort_unstable();
    u.dedup();
    let mut pts = vec![0usize];
    for _ in 0..depth {
        pts = pts.iter().flat_map(|&p| u.iter().map(move |&g| p * base + g)).collect();
    }
    pts
}

/// Product of one-dimensional Cantor iterates, embedded in `[-1, 1]^d`.
pub fn gen_cantor_product(spec: &CantorSpec, cap: usize) -> Result<GridSet> {
    spec.validate()?;
    let side = spec.side();
    check_cap(spec.dim, side, cap)?;
    let axes: Vec<Vec<usize>> = spec
        .kept_digits
        .iter()
        .map(|d| cantor_indices(spec.base, d, spec.depth))
        .collect();
    let mut s = GridSet::empty(spec.dim, side, Embedding::physical(spec.dim, side))?;
    let mut c = [0usize; MAX_DIM];
    fill_product(&mut s, &axes, 0, &mut c);
    Ok(s)
}

fn fill_product(s: &mut GridSet, axes: &[Vec<usize>], a: usize, c: &mut [usize; MAX_DIM]) {
    if a == axes.len() {
        let idx = s.index(c);
        s.insert_index(idx);
        return;
    }
    for &i in &axes[a] {
        c[a] = i;
        fill_product(s, axes, a + 1, c);
    }
}

/// Sierpinski carpet iterate on the `3^depth` grid, embedded in `[-1, 1]^2`.
pub fn gen_sierpinski(depth: u32, cap: usize) -> Result<GridSet> {
    if depth == 0 {
        return invalid("depth must be at least 1");
    }
    let side = 3usize
        .checked_pow(depth)
        .ok_or_else(|| Error::MemoryCap { cells: u128::MAX, cap })?;
    GridSet::from_fn(2, side, Embedding::physical(2, side), cap, |c| {
        let (mut i, mut j) = (c[0], c[1]);
        for _ in 0..depth {
            if i % 3 == 1 && j % 3 == 1 {
                return false;
            }
            i /= 3;
            j /= 3;
        }
        true
    })
}

/// Random set that is box porous at base `l` for every depth below `depth`.
///
/// The grid is `[-1, 1]^d` cut into `2 l^depth` cells per axis, so the level-`n`
/// partition has cubes of side `l^-n`. Every occupied cube drops one child
/// chosen uniformly and each further child with probability `extra_removal`.
pub fn gen_box_porous<R: Rng>(
    dim: usize,
    l: usize,
    depth: u32,
    extra_removal: f64,
    rng: &mut R,
    cap: usize,
) -> Result<GridSet> {
    if l < 2 {
        return invalid("base must be at least 2");
    }
    if !(0.0..1.0).contains(&extra_removal) {
        return invalid("extra removal probability must lie in [0, 1)");
    }
    let side = 2 * l.pow(depth);
    check_cap(dim, side, cap)?;
    let mut level: Vec<[usize; MAX_DIM]> = Vec::new();
    let mut c = [0usize; MAX_DIM];
    loop {
        level.push(c);
        if !advance(&mut c, dim, 2) {
            break;
        }
    }
    let children = l.pow(dim as u32);
    for _ in 0..depth {
        let mut next = Vec::with_capacity(level.len() * children);
        for q in &level {
            let forced = rng.random_range(0..children);
            for ch in 0..children {
                if ch == forced || rng.random::<f64>() < extra_removal {
                    continue;
                }
                let mut r = [0usize; MAX_DIM];
                let mut rem = ch;
                for a in (0..dim).rev() {
                    r[a] = q[a] * l + rem % l;
                    rem /= l;
                }
                next.push(r);
            }
        }
        level = next;
    }
    let mut s = GridSet::empty(dim, side, Embedding::physical(dim, side))?;
    for q in &level {
        s.insert(&q[..dim]);
    }
    Ok(s)
}

/// Odometer increment over `[0, n)^dim`; false after the last tuple.
pub(crate) fn advance(c: &mut [usize; MAX_DIM], dim: usize, n: usize) -> bool {
    for a in (0..dim).rev() {
        c[a] += 1;
        if c[a] < n {
            return true;
        }
        c[a] = 0;
    }
    false
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Transform {
    /// Multiply the embedding by `num/den` about the origin; cells unchanged.
    Dilate { num: u64, den: u64 },
    /// Shift cell indices; cells leaving the grid are dropped.
    Translate(Vec<i64>),
    /// All cells within Chebyshev distance `r` of a kept cell.
    Thicken(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transformed {
    pub set: GridSet,
    /// The input was nonempty and the result is empty.
    pub emptied: bool,
}

pub fn set_transform(s: &GridSet, op: &Transform) -> Result<Transformed> {
    let set = match op {
        Transform::Dilate { num, den } => {
            if *num == 0 || *den == 0 {
                return invalid("dilation factor must be positive");
            }
            let f = *num as f64 / *den as f64;
            let e = &s.embedding;
            let emb = Embedding { offset: e.offset.iter().map(|o| o * f).collect(), scale: e.scale * f };
            s.clone().with_embedding(emb)?
        }
        Transform::Translate(v) => {
            if v.len() != s.dim {
                return invalid("translation vector length differs from dimension");
            }
            let mut out = GridSet::empty(s.dim, s.side, s.embedding.clone())?;
            'cells: for idx in s.iter() {
                let c = s.coords(idx);
                let mut t = [0usize; MAX_DIM];
                for a in 0..s.dim {
                    let m = c[a] as i64 + v[a];
                    if m < 0 || m >= s.side as i64 {
                        continue 'cells;
                    }
                    t[a] = m as usize;
                }
                out.insert(&t[..s.dim]);
            }
            out
        }
        Transform::Thicken(r) => thicken(s, *r)?,
    };
    let emptied = !s.is_empty() && set.is_empty();
    Ok(Transformed { set, emptied })
}

fn thicken(s: &GridSet, r: usize) -> Result<GridSet> {
    let n = s.side;
    let mut mask = s.to_mask();
    let total = mask.len();
    let mut line = vec![false; n];
    for axis in 0..s.dim {
        let stride = n.pow((s.dim - 1 - axis) as u32);
        for base in 0..total {
            if (base / stride) % n != 0 {
                continue;
            }
            for (i, l) in line.iter_mut().enumerate() {
                *l = mask[base + i * stride];
            }
            // running count of kept cells in the window [i - r, i + r]
            let mut cnt = 0usize;
            for l in line.iter().take(r.min(n - 1) + 1) {
                cnt += *l as usize;
            }
            for i in 0..n {
                mask[base + i * stride] = cnt > 0;
                if i + r + 1 < n && line[i + r + 1] {
                    cnt += 1;
                }
                if i >= r && line[i - r] {
                    cnt -= 1;
                }
            }
        }
    }
    let mut out = GridSet::empty(s.dim, n, s.embedding.clone())?;
    for (i, &m) in mask.iter().enumerate() {
        if m {
            out.insert_index(i);
        }
    }
    Ok(out)
}
