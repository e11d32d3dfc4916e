use fuplab_core::porosity::*;
use fuplab_core::sets::*;
use num_rational::Ratio;
use proptest::prelude::*;
use proptest::test_runner::RngSeed;
use rand::SeedableRng;

fn cantor(dim: usize, depth: u32) -> GridSet {
    let spec = CantorSpec::uniform(dim, 3, &[0, 2], depth);
    let side = spec.side();
    gen_cantor_product(&spec, DEFAULT_MEMORY_CAP).unwrap().with_embedding(Embedding::physical(dim, side)).unwrap()
}

fn from_bits(side: usize, bits: &[bool]) -> GridSet {
    let mut s = GridSet::empty(2, side, Embedding::physical(2, side)).unwrap();
    for i in 0..s.total() {
        if bits[i % bits.len()] {
            s.insert_index(i);
        }
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, failure_persistence: None, rng_seed: RngSeed::Fixed(17), ..ProptestConfig::default() })]

    #[test]
    fn removing_cells_never_lowers_nu(side in 8usize..16, bits in prop::collection::vec(any::<bool>(), 7..40),
                                      drop in prop::collection::vec(any::<bool>(), 5..30)) {
        let s = from_bits(side, &bits);
        let mut t = s.clone();
        for (n, i) in s.iter().enumerate() {
            if drop[n % drop.len()] {
                t.remove_index(i);
            }
        }
        let w = s.cell_width();
        let (a0, a1) = (2.0 * w, s.box_side());
        let (rs, rt) = (analyze_ball_porosity(&s, a0, a1).unwrap(), analyze_ball_porosity(&t, a0, a1).unwrap());
        prop_assert!(rt.nu_max >= rs.nu_max);
        for (x, y) in rs.nu_per_scale.iter().zip(&rt.nu_per_scale) {
            prop_assert!(y >= x);
        }
        let (ls, lt) = (analyze_line_porosity(&s, a0, a1, 8).unwrap(), analyze_line_porosity(&t, a0, a1, 8).unwrap());
        prop_assert!(lt.nu_max >= ls.nu_max);
    }

    #[test]
    fn box_porous_measure_bound_is_exact(dim in 1usize..=2, depth in 1u32..=4, extra in 0.0f64..0.5, seed in any::<u64>()) {
        let l = 3u64;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let s = gen_box_porous(dim, l as usize, depth, extra, &mut rng, DEFAULT_MEMORY_CAP).unwrap();
        let d = dim as u32;
        let cell = Ratio::new(2u128, 2 * l.pow(depth) as u128);
        let measure = Ratio::from_integer(s.len() as u128) * cell.pow(d as i32);
        let bound = Ratio::from_integer(2u128.pow(d)) * (Ratio::from_integer(1u128) - Ratio::new(1, (l as u128).pow(d))).pow(depth as i32);
        prop_assert!(measure <= bound, "{} > {}", measure, bound);
    }
}

#[test]
fn dilation_leaves_nu_unchanged() {
    let s = cantor(2, 3);
    let w = s.cell_width();
    let a = analyze_ball_porosity(&s, 3.0 * w, s.box_side()).unwrap();
    let t = set_transform(&s, &Transform::Dilate { num: 2, den: 1 }).unwrap().set;
    let b = analyze_ball_porosity(&t, 6.0 * w, t.box_side()).unwrap();
    assert_eq!(a.nu_max, b.nu_max);
    assert_eq!(a.nu_per_scale, b.nu_per_scale);
    for (x, y) in a.scales.iter().zip(&b.scales) {
        assert!((2.0 * x - y).abs() < 1e-12 * y);
    }
}

#[test]
fn lattice_line_traces_inherit_line_porosity() {
    let s = cantor(2, 4);
    let w = s.cell_width();
    let rep = analyze_line_porosity(&s, 3.0 * w, s.box_side(), 16).unwrap();
    assert!(rep.nu_max > 0.0);
    let r = rep.refine;
    let mut tested = 0;
    for (step, start) in [(vec![1i64, 0], vec![0usize, r / 2]), (vec![0, 1], vec![r / 2, 0]), (vec![1, 1], vec![0, 0]), (vec![1, 2], vec![0, 3]), (vec![2, 1], vec![1, 0])] {
        let tr = restrict_to_lattice_line(&s, r, &step, &start).unwrap();
        if tr.set.is_empty() || tr.set.box_side() <= 4.5 * w {
            continue;
        }
        let a1 = tr.set.box_side().min(s.box_side());
        let one = analyze_ball_porosity(&tr.set, 3.0 * w, a1).unwrap();
        assert!(one.nu_max >= rep.nu_max, "step {step:?}: {} < {}", one.nu_max, rep.nu_max);
        tested += 1;
    }
    assert!(tested >= 3);
}

#[test]
fn cantor_mass_decay_matches_dimension() {
    let s = cantor(2, 5);
    let w = s.cell_width();
    let nu = analyze_ball_porosity(&s, 3.0 * w, s.box_side()).unwrap().nu_max;
    let radii: Vec<f64> = (0..5).map(|i| 4.0 * w * 3f64.powi(i)).collect();
    let fit = fit_mass_gamma(&s, w, &radii, 400).unwrap();
    let want = 2.0 - 2.0 * 2f64.ln() / 3f64.ln();
    println!("mass gamma {} (self-similar value {want}), c_d = {}", fit.gamma, fit.gamma * nu.ln().abs() / nu.powi(2));
    assert!(fit.gamma > 0.0);
    assert!((fit.gamma - want).abs() < 0.1);
}

#[test]
fn cantor_line_intersections_decay() {
    let s = cantor(2, 5);
    let w = s.cell_width();
    let radii: Vec<f64> = (0..5).map(|i| 4.0 * w * 3f64.powi(i)).collect();
    let fit = fit_intersection_gamma(&s, w, &radii, 64).unwrap();
    let want = 1.0 - 2f64.ln() / 3f64.ln();
    assert!((fit.gamma - want).abs() < 0.1);
}

#[test]
fn profiles_of_trivial_sets() {
    let e = GridSet::empty(2, 9, Embedding::physical(2, 9)).unwrap();
    assert_eq!(line_intersection_profile(&e, 0.5, 16).unwrap(), 0.0);
    let f = GridSet::full(2, 9, Embedding::physical(2, 9)).unwrap();
    assert!((line_intersection_profile(&f, 0.5, 16).unwrap() - 0.5).abs() < 1e-12);
    assert!((ball_mass_profile(&f, 2.0, 16) - 4.0).abs() < 0.5);
}

#[test]
fn cantor_is_box_porous_at_its_base() {
    let s = cantor(2, 4).with_embedding(Embedding::unit(2, 81)).unwrap();
    for n in 0..=3 {
        assert!(check_box_porosity(&s, 3, n).unwrap(), "depth {n}");
    }
    assert_eq!(resolvable_depths(&s, 3, 0.0), vec![0, 1, 2, 3]);
    let f = GridSet::full(2, 18, Embedding::physical(2, 18)).unwrap();
    assert!(matches!(box_porosity_witness(&f, 3, 0).unwrap(), Some(Witness::Cube { depth: 0, .. })));
}

#[test]
fn sierpinski_is_ball_porous() {
    let s = gen_sierpinski(4, DEFAULT_MEMORY_CAP).unwrap();
    let w = s.cell_width();
    assert!(analyze_ball_porosity(&s, 3.0 * w, s.box_side()).unwrap().nu_max > 0.0);
}
