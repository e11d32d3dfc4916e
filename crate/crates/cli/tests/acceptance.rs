//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use fuplab_core::extension::*;
use fuplab_core::harness::compare_runs;
use fuplab_core::porosity::*;
use fuplab_core::sample::halton;
use fuplab_core::sets::*;
use fuplab_core::spectral::*;
use fuplab_core::weights::*;
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.iter().map(|a| a / n).collect()
}

fn a1_unitarity() -> Outcome {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for n in [16, 64, 256] {
        let (x, y) = Family::Full { dim: 2 }.pair(n, DEFAULT_MEMORY_CAP).map_err(|e| e.to_string())?;
        let e = fup_norm(&x, &y, &SpectralOptions::default()).map_err(|e| e.to_string())?;
        worst = worst.max((e.norm - 1.0).abs());
    }
    let secs = t.elapsed().as_secs_f64();
    check(worst <= 1e-8 && secs < 10.0, format!("max |norm - 1| = {worst:.2e}, {secs:.2} s"))
}

fn a2_orthogonal_lines() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut dense_gap = f64::NAN;
    for n in [16, 64, 256] {
        let (x, y) = Family::OrthogonalLines { dim: 2 }.pair(n, DEFAULT_MEMORY_CAP).map_err(|e| e.to_string())?;
        let e = fup_norm(&x, &y, &SpectralOptions::default()).map_err(|e| e.to_string())?;
        worst = worst.max((e.norm - 1.0).abs());
        if n == 16 {
            dense_gap = (dense_fup_norm(&x, &y).map_err(|e| e.to_string())? - e.norm).abs();
        }
    }
    check(worst <= 1e-6 && dense_gap <= 1e-8, format!("max |norm - 1| = {worst:.2e}, dense gap at N = 16: {dense_gap:.2e}"))
}

fn cantor_family() -> Family {
    Family::Cantor { dim: 2, base: 3, kept_digits: vec![vec![0, 2]; 2] }
}

fn a3_cantor_exponent(scan: &FupScan, secs: f64) -> Outcome {
    check(
        scan.beta >= 0.02 && scan.fit_residual <= 0.1 && secs < 300.0,
        format!("beta = {:.4}, fit residual = {:.3e}, {secs:.1} s", scan.beta, scan.fit_residual),
    )
}

fn a4_trivial_bound(scan: &FupScan) -> Outcome {
    let fam = cantor_family();
    let mut worst: f64 = 0.0;
    for e in &scan.entries {
        let b = trivial_bound(fam.delta_sum(), 2, 1.0 / e.n as f64).map_err(|e| e.to_string())?;
        worst = worst.max(e.norm / b);
    }
    check(worst <= 2.0, format!("max norm / trivial bound = {worst:.4} over {} entries", scan.entries.len()))
}

fn a5_measure_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut sets = 0;
    for dim in 1..=2usize {
        for depth in 1..=5u32 {
            for extra in [0.0, 0.3] {
                let s = gen_box_porous(dim, 3, depth, extra, &mut rng, DEFAULT_MEMORY_CAP).map_err(|e| e.to_string())?;
                let d = dim as i32;
                let cell = Ratio::new(2u128, 2 * 3u128.pow(depth));
                let measure = Ratio::from_integer(s.len() as u128) * cell.pow(d);
                let bound = Ratio::from_integer(2u128.pow(dim as u32))
                    * (Ratio::from_integer(1u128) - Ratio::new(1u128, 3u128.pow(dim as u32))).pow(depth as i32);
                if measure > bound {
                    return Err(format!("d = {dim}, N_b = {depth}: {measure} > {bound}"));
                }
                sets += 1;
            }
        }
    }
    Ok(format!("{sets} sets within 2^d (1 - 3^-d)^N_b"))
}

fn corpus_set(i: usize, rng: &mut ChaCha8Rng) -> (GridSet, f64) {
    let s = match i % 3 {
        0 => {
            let dim = rng.random_range(1..=2);
            let l = rng.random_range(2..=3usize);
            let depth = if dim == 1 { 7 } else if l == 2 { 5 } else { 4 };
            gen_box_porous(dim, l, depth, rng.random_range(0.0..0.4), rng, DEFAULT_MEMORY_CAP).unwrap()
        }
        1 => {
            let dim = rng.random_range(1..=2);
            let base = rng.random_range(3..=5usize);
            let mut digits: Vec<usize> = (0..base).filter(|_| rng.random_bool(0.6)).collect();
            if digits.len() == base {
                digits.remove(rng.random_range(0..base));
            }
            if digits.is_empty() {
                digits.push(0);
            }
            let depth = if dim == 1 { 6 } else if base == 3 { 4 } else { 3 };
            let spec = CantorSpec { dim, base, kept_digits: vec![digits; dim], depth };
            let side = spec.side();
            gen_cantor_product(&spec, DEFAULT_MEMORY_CAP).unwrap().with_embedding(Embedding::physical(dim, side)).unwrap()
        }
        _ => {
            let dim = rng.random_range(1..=2);
            let base = rng.random_range(3..=4usize);
            let depth = if dim == 1 { 6 } else { 4 };
            let spec = CantorSpec { dim, base, kept_digits: vec![vec![0, base - 1]; dim], depth };
            let side = spec.side();
            let c = gen_cantor_product(&spec, DEFAULT_MEMORY_CAP).unwrap().with_embedding(Embedding::physical(dim, side)).unwrap();
            set_transform(&c, &Transform::Thicken(1)).unwrap().set
        }
    };
    // thickened sets are only porous above the thickening scale
    let a0 = 3.0 * s.cell_width() * if i % 3 == 2 { 4.0 } else { 1.0 };
    (s, a0)
}

fn a6_ball_to_box() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let (mut checks, mut vacuous) = (0, 0);
    for i in 0..50 {
        let (s, a0) = corpus_set(i, &mut rng);
        let rep = analyze_ball_porosity(&s, a0, s.box_side()).map_err(|e| e.to_string())?;
        // the ladder steps by 3/2 from 3a0/2, so every diameter in [3a0/2, a1] holds a
        // ladder ball at least 2/3 its size
        let nu = rep.nu_max / 1.5;
        if nu <= 0.0 {
            vacuous += 1;
            continue;
        }
        let l = ((s.dim() as f64).sqrt() / nu).ceil() as usize;
        let depths = resolvable_depths(&s, l, 1.5 * a0);
        if depths.is_empty() {
            vacuous += 1;
        }
        for n in depths {
            checks += 1;
            if let Some(w) = box_porosity_witness(&s, l, n).map_err(|e| e.to_string())? {
                return Err(format!("set {i}: nu = {nu:.4}, L = {l}, depth {n}: {w:?}"));
            }
        }
    }
    check(checks > 0, format!("50 sets, {checks} box checks, 0 counterexamples ({vacuous} sets with nothing to check)"))
}

fn a7_sierpinski_edge() -> Outcome {
    let mut details = Vec::new();
    for depth in 2..=4 {
        let s = gen_sierpinski(depth, DEFAULT_MEMORY_CAP).map_err(|e| e.to_string())?;
        let rep = analyze_line_porosity(&s, s.cell_width(), s.box_side(), 8).map_err(|e| e.to_string())?;
        let Some(Witness::Segment { start, end, length, .. }) = rep.witness else {
            return Err(format!("depth {depth}: no segment witness"));
        };
        let (lo, hi) = s.bounding_box();
        let on_edge = (0..2).any(|i| {
            [lo[i], hi[i]].iter().any(|&b| (start[i] - b).abs() < 1e-12 && (end[i] - b).abs() < 1e-12)
        });
        let inside = (0..=200).all(|k| {
            let t = k as f64 / 200.0;
            let p: Vec<f64> = start.iter().zip(&end).map(|(a, b)| a + t * (b - a)).collect();
            s.contains_point(&p)
        });
        if rep.nu_max != 0.0 || !on_edge || !inside {
            return Err(format!("depth {depth}: nu = {}, segment {start:?} -> {end:?}", rep.nu_max));
        }
        details.push(format!("depth {depth}: nu = 0, edge segment of length {length:.3}"));
    }
    Ok(details.join(", "))
}

struct A8Weight {
    modified: ModifiedWeight,
}

fn a8_weight() -> A8Weight {
    let y = gen_cantor_product(&CantorSpec::uniform(2, 3, &[0, 2], 6), DEFAULT_MEMORY_CAP)
        .unwrap()
        .with_embedding(Embedding { offset: vec![0.0, 0.0], scale: 6.0 })
        .unwrap();
    let w = build_damping_weight(&y, &DampingOptions::new(0.05, 10.0 * 2f64.sqrt(), 0.9)).unwrap();
    A8Weight { modified: modify_weight(&w, &ModifyOptions::default()).unwrap() }
}

fn a8_modification(w: &A8Weight) -> Outcome {
    let m = &w.modified;
    let mut worst: f64 = 0.0;
    for k in 5..=12u32 {
        let piece = m.piece(k);
        let vals: Vec<f64> = (0..100)
            .map(|i| {
                let t = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / 100.0;
                spherical_projection(&piece, &[t.cos(), t.sin()], 1e-12).unwrap()
            })
            .collect();
        let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
        let scale = lo.abs().max(hi.abs());
        if scale > 0.0 {
            worst = worst.max((hi - lo) / scale);
        }
    }
    let (s15, s20) = (m.q_partial_sum(15), m.q_partial_sum(20));
    let change = (s20 - s15).abs() / s20.abs().max(f64::MIN_POSITIVE);
    check(worst <= 1e-6 && change < 0.01, format!("max relative spread {worst:.2e} over k = 5..12; partial sums {s15:.6} -> {s20:.6}"))
}

fn a9_hessian() -> Outcome {
    let y = gen_cantor_product(&CantorSpec::uniform(2, 3, &[0, 2], 3), DEFAULT_MEMORY_CAP)
        .unwrap()
        .with_embedding(Embedding { offset: vec![0.0, 0.0], scale: 6.0 })
        .unwrap();
    let base = build_damping_weight(&y, &DampingOptions::new(0.05, 10.0 * 2f64.sqrt(), 0.9)).map_err(|e| e.to_string())?;
    let m = modify_weight(&base, &ModifyOptions::default()).map_err(|e| e.to_string())?;
    let r = m.radial_support().1;
    let terms = [Term::EOmega { coef: 1.0, field: &m }];
    let mut worst: f64 = 0.0;
    for i in 0..100u64 {
        let h = halton(i + 1, 4);
        let (rx, tx) = (r * h[0].sqrt(), 2.0 * std::f64::consts::PI * h[1]);
        let (ry, ty) = (r * (0.25 + 0.75 * h[2]), 2.0 * std::f64::consts::PI * h[3]);
        let z = ComplexPoint::new(vec![rx * tx.cos(), rx * tx.sin()], vec![ry * ty.cos(), ry * ty.sin()]).unwrap();
        let closed = complex_hessian(&terms, &z, &LineOptions::default()).map_err(|e| e.to_string())?;
        let fd = fd_complex_hessian_extrapolated(&terms, &z, fd_step(&z), &LineOptions::fixed()).map_err(|e| e.to_string())?;
        worst = worst.max(closed.max_abs_diff(&fd) / closed.max_abs());
    }
    let abs_terms = [Term::AbsY { coef: 1.0 }];
    let mut worst_abs: f64 = 0.0;
    for i in 0..100u64 {
        let h = halton(i + 1, 4);
        let z = ComplexPoint::new(vec![4.0 * h[0] - 2.0, 4.0 * h[1] - 2.0], vec![0.5 + 4.0 * h[2], 4.0 * h[3] - 2.0]).unwrap();
        let closed = complex_hessian(&abs_terms, &z, &LineOptions::default()).map_err(|e| e.to_string())?;
        let fd = fd_complex_hessian_extrapolated(&abs_terms, &z, fd_step(&z), &LineOptions::default()).map_err(|e| e.to_string())?;
        worst_abs = worst_abs.max(closed.max_abs_diff(&fd));
    }
    check(
        worst <= 1e-3 && worst_abs <= 1e-6,
        format!("E omega: max relative gap {worst:.2e} at 100 points; |y|: max gap {worst_abs:.2e}"),
    )
}

fn a10_certificate(w: &A8Weight) -> Outcome {
    let m = &w.modified;
    let opt = LineOptions::default();
    let pts = sample_points(2, &SampleSpec::for_weight(m, 1000));
    let mut lines = scan_lines(2, 200, m.radial_support().1, 1);
    lines.extend(lines_of(&pts));
    let k = line_constants(m, &lines, &opt).map_err(|e| e.to_string())?;
    let c = k.max_c();
    let cert = psh_certificate(m, c, &pts, 1e-6, &opt).map_err(|e| e.to_string())?;
    let zero = psh_certificate(m, 0.0, &pts, 1e-6, &opt).map_err(|e| e.to_string())?;
    let witness = zero.witness.is_some() && zero.global_min < -1e-6;
    check(
        cert.pass && cert.sample_points.len() >= 1000 && witness,
        format!(
            "C = {c:.4} (C1 {:.4}, C2 {:.4}): global min {:.2e} over {} points; C = 0: global min {:.3e}",
            k.c1,
            k.c2,
            cert.global_min,
            cert.sample_points.len(),
            zero.global_min
        ),
    )
}

fn a11_ray_identity(w: &A8Weight) -> Outcome {
    let prof = BumpProfile::default();
    let bump = |k: u32, cubes: Vec<[i64; 3]>, amp: f64| {
        let mut s = SmoothWeight::zero(2);
        s.shells.push(ShellPiece::new(2, k, amp, shell_width(k, 0.2), cubes, prof).unwrap());
        s
    };
    let c6 = (1.5 * 64.0 / (shell_width(6, 0.2) / 2.0)).round() as i64;
    let c9 = (1.5 * 512.0 / (shell_width(9, 0.2) / 2.0)).round() as i64;
    let smooth = [
        bump(6, vec![[c6, 0, 0]], 1.0),
        bump(6, vec![[c6, 0, 0], [c6, 1, 0], [c6 - 1, 2, 0]], 2.5),
        bump(9, vec![[0, c9, 0], [1, c9, 0]], 40.0),
    ];
    let m = &w.modified;
    let pieces = [m.piece(7), m.piece(10)];
    let mut fields: Vec<&dyn Field> = smooth.iter().map(|s| s as &dyn Field).collect();
    fields.extend(pieces.iter().map(|p| p as &dyn Field));
    let opt = LineOptions::default();
    let mut worst: f64 = 0.0;
    for f in &fields {
        for theta in [0.05, 0.4, 1.1, 2.5, 4.0, 5.9] {
            let (lhs, rhs) = ray_identity_sides(*f, theta, &opt).map_err(|e| e.to_string())?;
            worst = worst.max((lhs - rhs).abs());
        }
    }
    check(worst <= 1e-6, format!("5 functions x 6 directions, max |lhs - rhs| = {worst:.2e}"))
}

fn a12_phi(w: &A8Weight) -> Outcome {
    let m = &w.modified;
    let opt = LineOptions::default();
    let mut kappa_gap: f64 = 0.0;
    for i in 0..200u64 {
        let h = halton(i + 1, 4);
        let z = ComplexPoint::new(vec![h[0], h[1]], vec![8.0 * h[2] - 4.0, 8.0 * h[3] - 4.0]).unwrap();
        for rho in [0.25, 1.0, 3.0] {
            let want = rho / 8.0 / (1.0 + z.y.iter().map(|v| v * v).sum::<f64>()).powf(1.5);
            kappa_gap = kappa_gap.max((kappa(&z, rho) - want).abs() / want);
        }
    }
    let at_zero = kappa(&ComplexPoint::new(vec![0.3, 0.1], vec![0.0, 0.0]).unwrap(), 1.0) == 0.125;
    let lines = scan_lines(2, 100, 64.0, 1);
    let c_d = calibrate_cd(2, &lines, &opt).map_err(|e| e.to_string())?;
    let mut cl = scan_lines(2, 200, m.radial_support().1, 1);
    cl.extend(lines_of(&sample_points(2, &SampleSpec::for_weight(m, 200))));
    let c = line_constants(m, &cl, &opt).map_err(|e| e.to_string())?.max_c();
    let params = PhiParams { c, c_d, rho: 1.0 };
    let floor = -40.0 * 4f64.ln();
    let mut lowest = f64::INFINITY;
    for i in 0..400u64 {
        let h = halton(i + 1, 5);
        // uniform in |z| in [1/2, 2] along a Halton direction of R^4
        let g: Vec<f64> = (0..4).map(|j| (2.0 * std::f64::consts::PI * h[j]).sin() + 1e-3 * (j as f64 + 1.0)).collect();
        let dir = unit(&g);
        let r = 0.5 + 1.5 * h[4];
        let z = ComplexPoint::new(vec![r * dir[0], r * dir[1]], vec![r * dir[2], r * dir[3]]).unwrap();
        if z.y_norm() == 0.0 {
            continue;
        }
        let (phi, _) = phi_kappa(&z, m, &params, &opt).map_err(|e| e.to_string())?;
        lowest = lowest.min(phi);
    }
    check(
        kappa_gap <= 1e-14 && at_zero && lowest >= floor,
        format!("kappa relative gap {kappa_gap:.1e}; min phi on the annulus {lowest:.4} >= floor {floor:.4}"),
    )
}

const A13_CONFIG: &str = r#"
name = "determinism"
seed = 7
output_dir = "out"

[tolerances]
psh = 1e-6

[[stage]]
id = "boxy"
kind = "generate"
generator = { type = "box-porous", dim = 2, l = 3, depth = 3, extra_removal = 0.3 }

[[stage]]
id = "boxy-balls"
kind = "porosity"
input = "boxy"
porosity = "ball"

[[stage]]
id = "boxy-boxes"
kind = "porosity"
input = "boxy"
porosity = "box"
l = 3

[[stage]]
id = "carpet"
kind = "generate"
generator = { type = "sierpinski", depth = 3 }

[[stage]]
id = "cantor"
kind = "generate"
generator = { type = "cantor", dim = 2, base = 3, digits = [0, 2], depth = 4 }
embedding = { offset = [0.0, 0.0], scale = 6.0 }

[[stage]]
id = "damping"
kind = "weight-build"
input = "cantor"
nu = 0.05
mu = 14.142135623730951
alpha = 0.9

[[stage]]
id = "modified"
kind = "modify"
input = "damping"

[[stage]]
id = "cert"
kind = "psh-check"
input = "modified"
samples = 150
lines = 50

[[stage]]
id = "scan"
kind = "fup-scan"
family = { family = "cantor", dim = 2, base = 3, kept_digits = [[0, 2], [0, 2]] }
n = [9, 27, 81]
min_beta = 0.0
"#;

fn a13_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("determinism.toml");
    std::fs::write(&cfg, A13_CONFIG).map_err(|e| e.to_string())?;
    let mut outs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_fuplab"))
            .arg("run")
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!("run {run} exited with {:?}: {}", status.status.code(), String::from_utf8_lossy(&status.stderr)));
        }
        outs.push(out);
    }
    let cmp = compare_runs(&outs[0], &outs[1]).map_err(|e| e.to_string())?;
    check(
        cmp.reproducible(1e-12),
        format!(
            "{} artifacts, .gset identical: {}, max relative report difference {:.1e}, mismatches {:?}",
            cmp.files, cmp.gset_identical, cmp.max_rel_diff, cmp.mismatches
        ),
    )
}

fn run(results: &mut Vec<bool>, id: &str, title: &str, f: impl FnOnce() -> Outcome) {
    let t = Instant::now();
    let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    let secs = t.elapsed().as_secs_f64();
    let (tag, detail) = match &r {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{id:<4} {tag}  {title} [{secs:.1} s]: {detail}");
    results.push(r.is_ok());
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        // listing mode used by test runners
        return;
    }
    let mut results = Vec::new();
    println!("acceptance suite");
    run(&mut results, "A1", "unitarity of the full grid", a1_unitarity);
    run(&mut results, "A2", "orthogonal lines have norm one", a2_orthogonal_lines);
    let t = Instant::now();
    let scan = fup_scan(&cantor_family(), &[9, 27, 81, 243, 729, 2187], &SpectralOptions::default(), DEFAULT_MEMORY_CAP);
    let secs = t.elapsed().as_secs_f64();
    match scan {
        Ok(scan) => {
            run(&mut results, "A3", "positive exponent for Cantor pairs", || a3_cantor_exponent(&scan, secs));
            run(&mut results, "A4", "trivial bound on every scan entry", || a4_trivial_bound(&scan));
        }
        Err(e) => {
            run(&mut results, "A3", "positive exponent for Cantor pairs", || Err(e.to_string()));
            run(&mut results, "A4", "trivial bound on every scan entry", || Err("no scan".into()));
        }
    }
    run(&mut results, "A5", "box-porous measure bound", a5_measure_bound);
    run(&mut results, "A6", "ball porosity implies box porosity", a6_ball_to_box);
    run(&mut results, "A7", "Sierpinski carpet edge witness", a7_sierpinski_edge);
    let w = a8_weight();
    run(&mut results, "A8", "modified projections are constant", || a8_modification(&w));
    run(&mut results, "A9", "closed-form complex Hessian", a9_hessian);
    run(&mut results, "A10", "plurisubharmonicity certificate", || a10_certificate(&w));
    run(&mut results, "A11", "ray identity", || a11_ray_identity(&w));
    run(&mut results, "A12", "kappa and the annulus floor of phi", || a12_phi(&w));
    run(&mut results, "A13", "determinism of repeated runs", a13_determinism);
    let passed = results.iter().filter(|&&r| r).count();
    println!("acceptance: {passed}/{} passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
