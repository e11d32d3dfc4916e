use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fuplab_core::extension::{complex_hessian, poisson_extend, ComplexPoint, LineOptions, Term};
use fuplab_core::harness::{certify, emit_report, run_experiment, ExperimentConfig, WeightFile};
use fuplab_core::porosity::{analyze_ball_porosity, analyze_line_porosity, check_box_porosity, resolvable_depths};
use fuplab_core::sets::{gen_box_porous, gen_cantor_product, gen_sierpinski, CantorSpec, Embedding, GridSet, DEFAULT_MEMORY_CAP};
use fuplab_core::spectral::{fit_scan, default_fit_window, fup_norm, fup_scan, Family, ScanEntry, SpectralOptions};
use fuplab_core::weights::{
    build_damping_weight, default_alpha, growth_report, modify_weight, regularity_scan, DampingOptions, GrowthOptions, ModifyOptions,
};
use fuplab_core::Error;
use serde_json::json;

#[derive(Parser)]
#[command(name = "fuplab", version, about = "Fractal uncertainty experiments: sets, porosity, spectra, weights, psh certificates")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Gen {
    Cantor,
    Sierpinski,
    BoxPorous,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Ball,
    Line,
    Box,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fam {
    Cantor,
    File,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a TOML experiment config.
    Run {
        config: PathBuf,
        /// Override the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a fractal set and write it as `.gset`.
    Gen {
        #[arg(long, value_enum)]
        generator: Gen,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 3)]
        base: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [0usize, 2])]
        digits: Vec<usize>,
        #[arg(long)]
        depth: u32,
        #[arg(long, default_value_t = 0.0)]
        extra_removal: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scale of the `[0, scale]^d` embedding.
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Certify ball, line or box porosity of a set.
    Porosity {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        a0: Option<f64>,
        #[arg(long)]
        a1: Option<f64>,
        #[arg(long, default_value_t = 32)]
        dirs: usize,
        #[arg(long, default_value_t = 3)]
        l: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure `||1_X F^-1 1_Y||` over grid sizes and fit the exponent.
    FupScan {
        #[arg(long, value_enum)]
        family: Fam,
        #[arg(long = "N", value_delimiter = ',')]
        n: Vec<usize>,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 3)]
        base: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [0usize, 2])]
        digits: Vec<usize>,
        /// Sets for `--family file`, one per grid size, used as `X = Y`.
        #[arg(long, value_delimiter = ',')]
        input: Vec<PathBuf>,
        #[arg(long, default_value_t = 0x5eed)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a damping weight adapted to a set, optionally modified.
    WeightBuild {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        nu: f64,
        #[arg(long)]
        mu: f64,
        #[arg(long, default_value_t = 0.2)]
        s: f64,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        modify: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Growth and regularity diagnostics of a weight.
    WeightCheck {
        #[arg(long)]
        weight: PathBuf,
        #[arg(long, default_value_t = 4)]
        per_cube: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plurisubharmonicity certificate for `E w + C |y|`.
    PshCheck {
        #[arg(long)]
        weight: PathBuf,
        /// `C`; the empirical `max(C1, C2)` when omitted.
        #[arg(long = "C")]
        c: Option<f64>,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 200)]
        lines: usize,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate `E w` and the complex Hessian of `E w + C |y|` at one point.
    ExtendEval {
        #[arg(long)]
        weight: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        y: Vec<f64>,
        #[arg(long = "C", default_value_t = 0.0)]
        c: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Fail {
    Config(String),
    Run(String),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Fail::Config(e.to_string()),
            _ => Fail::Run(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Fail {
    fn from(e: std::io::Error) -> Self {
        Fail::Run(e.to_string())
    }
}

impl From<serde_json::Error> for Fail {
    fn from(e: serde_json::Error) -> Self {
        Fail::Run(e.to_string())
    }
}

fn write_json(path: &PathBuf, v: &impl serde::Serialize) -> Result<(), Fail> {
    fs::write(path, serde_json::to_vec_pretty(v)?)?;
    Ok(())
}

fn load_set(path: &PathBuf) -> Result<GridSet, Fail> {
    Ok(GridSet::load(path, DEFAULT_MEMORY_CAP)?)
}

fn scan_csv(entries: &[ScanEntry]) -> String {
    let mut s = String::from("N,norm,iterations,residual\n");
    for e in entries {
        s.push_str(&format!("{},{:.17e},{},{:.17e}\n", e.n, e.norm, e.iterations, e.residual));
    }
    s
}

/// `Ok(true)` when everything passed.
fn run(cmd: Cmd) -> Result<bool, Fail> {
    match cmd {
        Cmd::Run { config, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let m = run_experiment(&cfg)?;
            print!("{}", emit_report(&m, &cfg.output_dir)?);
            Ok(m.all_passed())
        }
        Cmd::Gen { generator, dim, base, digits, depth, extra_removal, seed, scale, out } => {
            let mut s = match generator {
                Gen::Cantor => gen_cantor_product(&CantorSpec::uniform(dim, base, &digits, depth), DEFAULT_MEMORY_CAP)?,
                Gen::Sierpinski => gen_sierpinski(depth, DEFAULT_MEMORY_CAP)?,
                Gen::BoxPorous => {
                    use rand::SeedableRng;
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                    gen_box_porous(dim, base, depth, extra_removal, &mut rng, DEFAULT_MEMORY_CAP)?
                }
            };
            if let Some(sc) = scale {
                let d = s.dim();
                s = s.with_embedding(Embedding { offset: vec![0.0; d], scale: sc })?;
            }
            s.save(&out)?;
            println!("{} cells on a side-{} grid", s.len(), s.side());
            Ok(true)
        }
        Cmd::Porosity { kind, input, a0, a1, dirs, l, out } => {
            let s = load_set(&input)?;
            let (a0, a1) = (a0.unwrap_or(3.0 * s.cell_width()), a1.unwrap_or(s.box_side()));
            match kind {
                Kind::Ball | Kind::Line => {
                    let r = match kind {
                        Kind::Ball => analyze_ball_porosity(&s, a0, a1)?,
                        _ => analyze_line_porosity(&s, a0, a1, dirs)?,
                    };
                    println!("nu_max = {}", r.nu_max);
                    write_json(&out, &r)?;
                    Ok(r.nu_max > 0.0)
                }
                Kind::Box => {
                    let mut rows = Vec::new();
                    let mut all = true;
                    for n in resolvable_depths(&s, l, 0.0) {
                        let ok = check_box_porosity(&s, l, n)?;
                        all &= ok;
                        rows.push(json!({ "n": n, "porous": ok }));
                    }
                    write_json(&out, &json!({ "kind": "box", "l": l, "depths": rows }))?;
                    println!("box porous at every resolvable depth: {all}");
                    Ok(all)
                }
            }
        }
        Cmd::FupScan { family, n, dim, base, digits, input, seed, out } => {
            let opt = SpectralOptions { seed, ..Default::default() };
            let scan = match family {
                Fam::Cantor => {
                    let fam = Family::Cantor { dim, base, kept_digits: vec![digits; dim] };
                    fup_scan(&fam, &n, &opt, DEFAULT_MEMORY_CAP)?
                }
                Fam::File => {
                    let mut entries = Vec::new();
                    for p in &input {
                        let s = load_set(p)?;
                        let e = fup_norm(&s, &s, &opt)?;
                        entries.push(ScanEntry { n: s.side(), norm: e.norm, iterations: e.iterations, residual: e.residual });
                    }
                    entries.sort_by_key(|e| e.n);
                    let d = entries.first().map(|_| load_set(&input[0]).map(|s| s.dim())).transpose()?.unwrap_or(1);
                    let w = default_fit_window(entries.len());
                    fit_scan(d, entries, w)?
                }
            };
            fs::write(&out, scan_csv(&scan.entries))?;
            let mut footer = out.clone().into_os_string();
            footer.push(".fit.json");
            let fit = json!({ "beta": scan.beta, "C": scan.c_fit, "fit_window": scan.fit_window, "fit_residual": scan.fit_residual });
            write_json(&PathBuf::from(footer), &fit)?;
            println!("beta = {:.6}, C = {:.6}, residual = {:.3e}", scan.beta, scan.c_fit, scan.fit_residual);
            Ok(true)
        }
        Cmd::WeightBuild { input, nu, mu, s, alpha, gamma, modify, out } => {
            let y = load_set(&input)?;
            let alpha = match (alpha, gamma) {
                (Some(a), _) => a,
                (None, Some(g)) => default_alpha(g, s)?,
                (None, None) => return Err(Fail::Config("weight-build needs --alpha or --gamma".into())),
            };
            let w = build_damping_weight(&y, &DampingOptions { nu, mu, s, alpha, profile_order: 4 })?;
            for warn in &w.warnings {
                eprintln!("warning: {warn}");
            }
            let doc = if modify { WeightFile::modified(modify_weight(&w, &ModifyOptions::default())?) } else { WeightFile::smooth(w) };
            fs::write(&out, doc.to_json()?)?;
            println!("shells {:?}", doc.base().shell_range());
            Ok(true)
        }
        Cmd::WeightCheck { weight, per_cube, out } => {
            let doc = WeightFile::load(&weight)?;
            let w = doc.field();
            let g = growth_report(w, &GrowthOptions::default());
            let pts = doc.base().sample_points(1, per_cube);
            let reg: Vec<f64> = (0..=3).map(|a| regularity_scan(w, &pts, a)).collect();
            println!("growth integral {:.6e}, diverged {}, regularity {:?}", g.integral_value, g.diverged, reg);
            write_json(&out, &json!({ "growth": g, "regularity": reg }))?;
            Ok(!g.diverged)
        }
        Cmd::PshCheck { weight, c, samples, lines, tolerance, out } => {
            let doc = WeightFile::load(&weight)?;
            let (cert, consts) = certify(&doc, samples, lines, c, tolerance)?;
            write_json(&out, &cert)?;
            println!(
                "C = {:.6}, global min eigenvalue {:.3e}, real-locus margin {:.3e}, pass {}",
                cert.constant_c, cert.global_min, cert.real_margin, cert.pass
            );
            if !consts.is_null() {
                println!("line constants {consts}");
            }
            Ok(cert.pass)
        }
        Cmd::ExtendEval { weight, x, y, c, out } => {
            let doc = WeightFile::load(&weight)?;
            let z = ComplexPoint::new(x, y)?;
            let opt = LineOptions::default();
            let w = doc.field();
            let value = poisson_extend(w, &z, &opt)?;
            let mut rep = json!({ "E_w": value, "u": value + c * z.y_norm() });
            if z.y_norm() > 0.0 {
                let h = complex_hessian(&[Term::EOmega { coef: 1.0, field: w }, Term::AbsY { coef: c }], &z, &opt)?;
                rep["hessian"] = serde_json::to_value(&h)?;
                rep["min_eig"] = json!(h.min_eig());
            }
            println!("{rep}");
            if let Some(o) = out {
                write_json(&o, &rep)?;
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(t) = std::env::var("FUPLAB_THREADS") {
        match t.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: FUPLAB_THREADS must be a positive integer");
                return ExitCode::from(2);
            }
        }
    }
    match run(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Fail::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Fail::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
