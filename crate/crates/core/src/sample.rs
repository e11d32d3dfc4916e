//! Deterministic point and direction samples.

use std::f64::consts::PI;

/// Radical inverse of `i` in `base` (van der Corput sequence).
pub fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// `i`-th Halton point in `[0, 1)^dim`, `dim <= 8`.
pub fn halton(i: u64, dim: usize) -> Vec<f64> {
    (0..dim).map(|a| radical_inverse(i + 1, PRIMES[a])).collect()
}

/// Unit vectors: `count` equally spaced angles in `[0, pi)` for `d = 2`, a
/// Fibonacci lattice on the upper hemisphere for `d = 3`, `[1]` for `d = 1`.
/// Lines are unoriented, so antipodal directions are not repeated.
pub fn sphere_directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    match dim {
        1 => vec![vec![1.0]],
        2 => (0..count)
            .map(|j| {
                let t = PI * j as f64 / count as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        _ => {
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|j| {
                    let z = 1.0 - (j as f64 + 0.5) / count as f64;
                    let r = (1.0 - z * z).sqrt();
                    let phi = golden * j as f64;
                    vec![r * phi.cos(), r * phi.sin(), z]
                })
                .collect()
        }
    }
}

/// Full-sphere Fibonacci lattice (oriented directions) for `d = 3`, equally
/// spaced angles in `[0, 2 pi)` for `d = 2`.
pub fn oriented_directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    match dim {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|j| {
                let t = 2.0 * PI * j as f64 / count as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        _ => {
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|j| {
                    let z = 1.0 - 2.0 * (j as f64 + 0.5) / count as f64;
                    let r = (1.0 - z * z).sqrt();
                    let phi = golden * j as f64;
                    vec![r * phi.cos(), r * phi.sin(), z]
                })
                .collect()
        }
    }
}

/// Axis and diagonal step vectors with entries in `{-1, 0, 1}`, one per
/// unoriented line direction, axes first.
pub fn lattice_steps(dim: usize) -> Vec<Vec<i64>> {
    let mut out: Vec<Vec<i64>> = Vec::new();
    for a in 0..dim {
        let mut v = vec![0; dim];
        v[a] = 1;
        out.push(v);
    }
    let mut all: Vec<Vec<i64>> = Vec::new();
    let mut v = vec![-1i64; dim];
    loop {
        let nz = v.iter().filter(|&&x| x != 0).count();
        // first nonzero entry positive picks one of each antipodal pair
        let first = v.iter().find(|&&x| x != 0).copied().unwrap_or(0);
        if nz >= 2 && first > 0 {
            all.push(v.clone());
        }
        let mut a = dim;
        loop {
            if a == 0 {
                all.sort_by_key(|w| w.iter().filter(|&&x| x != 0).count());
                out.extend(all);
                return out;
            }
            a -= 1;
            if v[a] < 1 {
                v[a] += 1;
                break;
            }
            v[a] = -1;
        }
    }
}

pub fn normalize(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn van_der_corput() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(2, 2), 0.25);
        assert_eq!(radical_inverse(3, 2), 0.75);
    }

    #[test]
    fn step_counts() {
        assert_eq!(lattice_steps(2).len(), 4);
        // 3 axes, 6 face diagonals, 4 body diagonals
        assert_eq!(lattice_steps(3).len(), 13);
        assert_eq!(lattice_steps(2)[0], vec![1, 0]);
    }

    #[test]
    fn fibonacci_unit() {
        for v in sphere_directions(3, 50) {
            let n: f64 = v.iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12 && v[2] > 0.0);
        }
    }
}
