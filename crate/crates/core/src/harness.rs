//! TOML-configured experiment pipelines, manifests and reports.
//!
//! A run writes every artifact into the output directory together with
//! `manifest.json`, which lists file names relative to that directory, their
//! SHA-256 hashes, per-stage timings and pass flags.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::extension::{line_constants, lines_of, psh_certificate, sample_points, scan_lines, LineOptions, PshCertificate, SampleSpec};
use crate::porosity::{analyze_ball_porosity, analyze_line_porosity, check_box_porosity, resolvable_depths, PorosityKind};
use crate::sets::{gen_box_porous, gen_cantor_product, gen_sierpinski, set_transform, CantorSpec, Embedding, GridSet, Transform, DEFAULT_MEMORY_CAP};
use crate::spectral::{fup_norm, fup_scan, Family, ScanEntry, SpectralOptions};
use crate::weights::{build_damping_weight, default_alpha, modify_weight, DampingOptions, Field, ModifiedWeight, ModifyOptions, SmoothWeight};

pub const MANIFEST: &str = "manifest.json";

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Relative paths are resolved against the config file's directory.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Named tolerances: `psh` (default 1e-6), `residual` (1e-4).
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default, rename = "stage")]
    pub pipeline: Vec<StageConfig>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    /// Artifact name; defaults to `stage<i>`.
    #[serde(default)]
    pub id: Option<String>,
    #[serde(flatten)]
    pub stage: Stage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EmbeddingSpec {
    /// `unit`, `physical` or `frequency`.
    Named(String),
    Explicit { offset: Vec<f64>, scale: f64 },
}

impl EmbeddingSpec {
    fn resolve(&self, dim: usize, side: usize) -> Result<Embedding> {
        match self {
            EmbeddingSpec::Named(n) => match n.as_str() {
                "unit" => Ok(Embedding::unit(dim, side)),
                "physical" => Ok(Embedding::physical(dim, side)),
                "frequency" => Ok(Embedding::frequency(dim, side)),
                other => config_err(format!("unknown embedding {other:?}")),
            },
            EmbeddingSpec::Explicit { offset, scale } => Ok(Embedding { offset: offset.clone(), scale: *scale }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Generator {
    Cantor { dim: usize, base: usize, digits: Vec<usize>, depth: u32 },
    Sierpinski { depth: u32 },
    BoxPorous {
        dim: usize,
        l: usize,
        depth: u32,
        #[serde(default)]
        extra_removal: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Stage {
    Generate {
        generator: Generator,
        #[serde(default)]
        embedding: Option<EmbeddingSpec>,
        #[serde(default)]
        transforms: Vec<Transform>,
    },
    Porosity {
        input: String,
        porosity: PorosityKind,
        #[serde(default)]
        a0: Option<f64>,
        #[serde(default)]
        a1: Option<f64>,
        #[serde(default = "default_dirs")]
        dirs: usize,
        /// Base for box porosity.
        #[serde(default)]
        l: Option<usize>,
        /// Smallest `nu` counted as a pass for ball and line porosity.
        #[serde(default)]
        require_nu: Option<f64>,
    },
    FupNorm {
        x: String,
        y: String,
    },
    FupScan {
        family: Family,
        n: Vec<usize>,
        #[serde(default)]
        min_beta: Option<f64>,
    },
    WeightBuild {
        input: String,
        nu: f64,
        mu: f64,
        #[serde(default = "default_s")]
        s: f64,
        #[serde(default)]
        alpha: Option<f64>,
        /// Line-intersection exponent used for the default `alpha`.
        #[serde(default)]
        gamma: Option<f64>,
        #[serde(default = "default_order")]
        profile_order: usize,
    },
    Modify {
        input: String,
        #[serde(default)]
        options: Option<ModifyOptions>,
    },
    PshCheck {
        input: String,
        #[serde(default = "default_samples")]
        samples: usize,
        /// Extra lines for the constant scans besides the sample lines.
        #[serde(default = "default_lines")]
        lines: usize,
        /// `C`; the empirical `max(C1, C2)` when absent.
        #[serde(default)]
        constant: Option<f64>,
    },
}

fn default_dirs() -> usize {
    32
}
fn default_s() -> f64 {
    0.2
}
fn default_order() -> usize {
    4
}
fn default_samples() -> usize {
    1000
}
fn default_lines() -> usize {
    200
}

impl Stage {
    pub fn kind(&self) -> &'static str {
        match self {
            Stage::Generate { .. } => "generate",
            Stage::Porosity { .. } => "porosity",
            Stage::FupNorm { .. } => "fup-norm",
            Stage::FupScan { .. } => "fup-scan",
            Stage::WeightBuild { .. } => "weight-build",
            Stage::Modify { .. } => "modify",
            Stage::PshCheck { .. } => "psh-check",
        }
    }

    fn inputs(&self) -> Vec<(&str, ArtifactKind)> {
        match self {
            Stage::Generate { .. } | Stage::FupScan { .. } => vec![],
            Stage::Porosity { input, .. } | Stage::WeightBuild { input, .. } => vec![(input, ArtifactKind::Set)],
            Stage::FupNorm { x, y } => vec![(x, ArtifactKind::Set), (y, ArtifactKind::Set)],
            Stage::Modify { input, .. } => vec![(input, ArtifactKind::Weight)],
            Stage::PshCheck { input, .. } => vec![(input, ArtifactKind::Weight)],
        }
    }

    fn output(&self) -> Option<ArtifactKind> {
        match self {
            Stage::Generate { .. } => Some(ArtifactKind::Set),
            Stage::WeightBuild { .. } | Stage::Modify { .. } => Some(ArtifactKind::Weight),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ArtifactKind {
    Set,
    Weight,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config and resolves `output_dir` against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if cfg.output_dir.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn stage_id(&self, i: usize) -> String {
        self.pipeline[i].id.clone().unwrap_or_else(|| format!("stage{i}"))
    }

    pub fn tolerance(&self, name: &str, default: f64) -> f64 {
        self.tolerances.get(name).copied().unwrap_or(default)
    }

    /// Ids are unique file-name-safe tokens and every input names an
    /// earlier artifact of the right kind.
    pub fn validate(&self) -> Result<()> {
        let mut seen: HashMap<String, Option<ArtifactKind>> = HashMap::new();
        for (i, sc) in self.pipeline.iter().enumerate() {
            let id = self.stage_id(i);
            if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return config_err(format!("stage id {id:?} must be alphanumeric, '-' or '_'"));
            }
            for (name, kind) in sc.stage.inputs() {
                match seen.get(name) {
                    Some(Some(k)) if *k == kind => {}
                    Some(_) => return config_err(format!("stage {id} input {name:?} has the wrong kind")),
                    None => return config_err(format!("stage {id} references {name:?} before it is produced")),
                }
            }
            if seen.insert(id.clone(), sc.stage.output()).is_some() {
                return config_err(format!("duplicate stage id {id:?}"));
            }
        }
        for (k, v) in &self.tolerances {
            if !(v.is_finite() && *v >= 0.0) {
                return config_err(format!("tolerance {k} must be a nonnegative number"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Passed,
    /// Ran to completion but its pass criterion failed.
    Failed,
    /// Returned an error.
    Error,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub index: usize,
    pub id: String,
    pub kind: String,
    pub status: StageStatus,
    pub seconds: f64,
    pub artifacts: Vec<String>,
    pub summary: Value,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub file: String,
    pub stage: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub stage: String,
    #[serde(flatten)]
    pub entry: ScanEntry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
    pub artifacts: Vec<ArtifactRecord>,
    pub scans: Vec<ScanRecord>,
}

impl Manifest {
    pub fn all_passed(&self) -> bool {
        self.stages.iter().all(|s| s.status == StageStatus::Passed)
    }

    /// Loads `manifest.json` from `dir` and checks every artifact hash.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let m: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?;
        m.verify(dir)?;
        Ok(m)
    }

    pub fn verify(&self, dir: &Path) -> Result<()> {
        for a in &self.artifacts {
            let bytes = fs::read(dir.join(&a.file))?;
            if hex::encode(Sha256::digest(&bytes)) != a.sha256 {
                return Err(Error::Format(format!("hash mismatch for {}", a.file)));
            }
        }
        Ok(())
    }
}

/// On-disk weight document: the weight itself plus a readable piece list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WeightFile {
    Smooth { weight: SmoothWeight, pieces: Vec<PieceSummary> },
    Modified { weight: ModifiedWeight, pieces: Vec<PieceSummary> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PieceSummary {
    pub k: u32,
    pub amplitude: f64,
    pub width: f64,
    pub profile_order: usize,
    pub cube_centers: Vec<Vec<f64>>,
    /// `q_k` and the angular samples `g_k(theta_i) p_k` of the correction.
    pub q: Option<f64>,
    pub g_samples: Option<Vec<f64>>,
}

fn summarize(w: &SmoothWeight, m: Option<&ModifiedWeight>) -> Vec<PieceSummary> {
    w.shells
        .iter()
        .map(|p| {
            let half = p.width / 2.0;
            let c = m.and_then(|m| m.correction(p.k));
            PieceSummary {
                k: p.k,
                amplitude: p.amplitude,
                width: p.width,
                profile_order: p.profile.order,
                cube_centers: p.cubes.iter().map(|j| (0..p.dim).map(|i| j[i] as f64 * half).collect()).collect(),
                q: m.and_then(|m| m.q.get(&p.k).copied()),
                g_samples: c.map(|c| c.table.nodes.iter().map(|n| c.q - n[0]).collect()),
            }
        })
        .collect()
}

impl WeightFile {
    pub fn smooth(w: SmoothWeight) -> Self {
        let pieces = summarize(&w, None);
        WeightFile::Smooth { weight: w, pieces }
    }

    pub fn modified(m: ModifiedWeight) -> Self {
        let pieces = summarize(&m.base, Some(&m));
        WeightFile::Modified { weight: m, pieces }
    }

    pub fn field(&self) -> &dyn Field {
        match self {
            WeightFile::Smooth { weight, .. } => weight,
            WeightFile::Modified { weight, .. } => weight,
        }
    }

    pub fn base(&self) -> &SmoothWeight {
        match self {
            WeightFile::Smooth { weight, .. } => weight,
            WeightFile::Modified { weight, .. } => &weight.base,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec_pretty(self)?)
    }
}

enum Artifact {
    Set(GridSet),
    Weight(WeightFile),
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    dir: &'a Path,
    store: HashMap<String, Artifact>,
    files: Vec<ArtifactRecord>,
    scans: Vec<ScanRecord>,
}

impl Ctx<'_> {
    fn write(&mut self, stage: &str, file: String, bytes: &[u8]) -> Result<String> {
        fs::write(self.dir.join(&file), bytes)?;
        self.files.push(ArtifactRecord {
            file: file.clone(),
            stage: stage.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len() as u64,
        });
        Ok(file)
    }

    fn set(&self, name: &str) -> Result<&GridSet> {
        match self.store.get(name) {
            Some(Artifact::Set(s)) => Ok(s),
            _ => Err(Error::Config(format!("no set named {name:?}"))),
        }
    }

    fn weight(&self, name: &str) -> Result<&WeightFile> {
        match self.store.get(name) {
            Some(Artifact::Weight(w)) => Ok(w),
            _ => Err(Error::Config(format!("no weight named {name:?}"))),
        }
    }
}

fn scan_csv(entries: &[ScanEntry]) -> String {
    let mut s = String::from("N,norm,iterations,residual\n");
    for e in entries {
        let _ = writeln!(s, "{},{:.17e},{},{:.17e}", e.n, e.norm, e.iterations, e.residual);
    }
    s
}

struct Outcome {
    pass: bool,
    artifacts: Vec<String>,
    summary: Value,
}

fn run_stage(ctx: &mut Ctx, id: &str, stage: &Stage, seed: u64) -> Result<Outcome> {
    let cap = DEFAULT_MEMORY_CAP;
    match stage {
        Stage::Generate { generator, embedding, transforms } => {
            let mut s = match generator {
                Generator::Cantor { dim, base, digits, depth } => gen_cantor_product(&CantorSpec::uniform(*dim, *base, digits, *depth), cap)?,
                Generator::Sierpinski { depth } => gen_sierpinski(*depth, cap)?,
                Generator::BoxPorous { dim, l, depth, extra_removal } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    gen_box_porous(*dim, *l, *depth, *extra_removal, &mut rng, cap)?
                }
            };
            if let Some(e) = embedding {
                let emb = e.resolve(s.dim(), s.side())?;
                s = s.with_embedding(emb)?;
            }
            for t in transforms {
                s = set_transform(&s, t)?.set;
            }
            let file = ctx.write(id, format!("{id}.gset"), &s.to_bytes())?;
            let summary = json!({ "dim": s.dim(), "side": s.side(), "cells": s.len(), "measure": s.measure() });
            ctx.store.insert(id.to_string(), Artifact::Set(s));
            Ok(Outcome { pass: true, artifacts: vec![file], summary })
        }
        Stage::Porosity { input, porosity, a0, a1, dirs, l, require_nu } => {
            let s = ctx.set(input)?.clone();
            let (a0, a1) = (a0.unwrap_or(3.0 * s.cell_width()), a1.unwrap_or(s.box_side()));
            let (pass, report) = match porosity {
                PorosityKind::Ball | PorosityKind::Line => {
                    let r = if *porosity == PorosityKind::Ball {
                        analyze_ball_porosity(&s, a0, a1)?
                    } else {
                        analyze_line_porosity(&s, a0, a1, *dirs)?
                    };
                    let pass = match require_nu {
                        Some(t) => r.nu_max >= *t,
                        None => r.nu_max > 0.0,
                    };
                    (pass, serde_json::to_value(&r)?)
                }
                PorosityKind::Box => {
                    let Some(l) = *l else { return config_err("box porosity needs l") };
                    let mut rows = Vec::new();
                    let mut all = true;
                    for n in resolvable_depths(&s, l, 0.0) {
                        let ok = check_box_porosity(&s, l, n)?;
                        all &= ok;
                        rows.push(json!({ "n": n, "porous": ok }));
                    }
                    (all, json!({ "kind": "box", "l": l, "depths": rows }))
                }
            };
            let bytes = serde_json::to_vec_pretty(&report)?;
            let file = ctx.write(id, format!("{id}.porosity.json"), &bytes)?;
            let nu = report.get("nu_max").cloned().unwrap_or(Value::Null);
            Ok(Outcome { pass, artifacts: vec![file], summary: json!({ "kind": porosity, "nu_max": nu, "pass": pass }) })
        }
        Stage::FupNorm { x, y } => {
            let (xs, ys) = (ctx.set(x)?, ctx.set(y)?);
            let opt = SpectralOptions { seed, residual_tol: ctx.cfg.tolerance("residual", 1e-4), ..Default::default() };
            let est = fup_norm(xs, ys, &opt)?;
            let entry = ScanEntry { n: xs.side(), norm: est.norm, iterations: est.iterations, residual: est.residual };
            let file = ctx.write(id, format!("{id}.scan.csv"), scan_csv(&[entry]).as_bytes())?;
            ctx.scans.push(ScanRecord { stage: id.to_string(), entry });
            let pass = est.converged && est.residual <= opt.residual_tol;
            Ok(Outcome { pass, artifacts: vec![file], summary: json!({ "N": entry.n, "norm": est.norm, "residual": est.residual }) })
        }
        Stage::FupScan { family, n, min_beta } => {
            let opt = SpectralOptions { seed, residual_tol: ctx.cfg.tolerance("residual", 1e-4), ..Default::default() };
            let scan = fup_scan(family, n, &opt, cap)?;
            let f1 = ctx.write(id, format!("{id}.scan.csv"), scan_csv(&scan.entries).as_bytes())?;
            let fit = json!({ "beta": scan.beta, "C": scan.c_fit, "fit_window": scan.fit_window, "fit_residual": scan.fit_residual });
            let f2 = ctx.write(id, format!("{id}.fit.json"), &serde_json::to_vec_pretty(&fit)?)?;
            for e in &scan.entries {
                ctx.scans.push(ScanRecord { stage: id.to_string(), entry: *e });
            }
            let pass = min_beta.is_none_or(|b| scan.beta >= b);
            Ok(Outcome { pass, artifacts: vec![f1, f2], summary: fit })
        }
        Stage::WeightBuild { input, nu, mu, s, alpha, gamma, profile_order } => {
            let y = ctx.set(input)?;
            let alpha = match (alpha, gamma) {
                (Some(a), _) => *a,
                (None, Some(g)) => default_alpha(*g, *s)?,
                (None, None) => return config_err("weight-build needs alpha or gamma"),
            };
            let opt = DampingOptions { nu: *nu, mu: *mu, s: *s, alpha, profile_order: *profile_order };
            let w = build_damping_weight(y, &opt)?;
            let summary = json!({ "shells": w.shell_range(), "alpha": alpha, "warnings": w.warnings });
            let doc = WeightFile::smooth(w);
            let file = ctx.write(id, format!("{id}.weight.json"), &doc.to_json()?)?;
            ctx.store.insert(id.to_string(), Artifact::Weight(doc));
            Ok(Outcome { pass: true, artifacts: vec![file], summary })
        }
        Stage::Modify { input, options } => {
            let base = ctx.weight(input)?.base();
            let m = modify_weight(base, &options.unwrap_or_default())?;
            let summary = json!({ "corrected": m.corrections.iter().map(|c| c.k).collect::<Vec<_>>(), "q": m.q });
            let doc = WeightFile::modified(m);
            let file = ctx.write(id, format!("{id}.weight.json"), &doc.to_json()?)?;
            ctx.store.insert(id.to_string(), Artifact::Weight(doc));
            Ok(Outcome { pass: true, artifacts: vec![file], summary })
        }
        Stage::PshCheck { input, samples, lines, constant } => {
            let tol = ctx.cfg.tolerance("psh", 1e-6);
            let doc = ctx.weight(input)?;
            let (cert, consts) = certify(doc, *samples, *lines, *constant, tol)?;
            let file = ctx.write(id, format!("{id}.cert.json"), &serde_json::to_vec_pretty(&cert)?)?;
            let summary = json!({
                "global_min": cert.global_min,
                "C": cert.constant_c,
                "real_margin": cert.real_margin,
                "scan": consts,
                "pass": cert.pass,
            });
            Ok(Outcome { pass: cert.pass, artifacts: vec![file], summary })
        }
    }
}

/// Certificate for a weight document with `C` either given or taken as the
/// empirical `max(C1, C2)` over `lines` scan lines plus the sample lines.
pub fn certify(doc: &WeightFile, samples: usize, lines: usize, constant: Option<f64>, tol: f64) -> Result<(PshCertificate, Value)> {
    let w = doc.field();
    let spec = match doc {
        WeightFile::Modified { weight, .. } => SampleSpec::for_weight(weight, samples),
        WeightFile::Smooth { weight, .. } => {
            let m = ModifiedWeight {
                base: weight.clone(),
                corrections: Vec::new(),
                q: Default::default(),
                p: Default::default(),
                profile: weight.shells.first().map(|s| s.profile).unwrap_or_default(),
            };
            SampleSpec::for_weight(&m, samples)
        }
    };
    let pts = sample_points(w.dim(), &spec);
    let opt = LineOptions::default();
    let (c, consts) = match constant {
        Some(c) => (c, Value::Null),
        None => {
            let mut ls = scan_lines(w.dim(), lines, spec.radius, 1);
            ls.extend(lines_of(&pts));
            let k = line_constants(w, &ls, &opt)?;
            (k.max_c(), serde_json::to_value(&k)?)
        }
    };
    Ok((psh_certificate(w, c, &pts, tol, &opt)?, consts))
}

/// Runs every stage in order, writing artifacts and `manifest.json` into
/// `cfg.output_dir`. A failing stage halts the pipeline; later stages are
/// recorded as skipped.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Manifest> {
    cfg.validate()?;
    let dir = cfg.output_dir.as_path();
    fs::create_dir_all(dir)?;
    let mut ctx = Ctx { cfg, dir, store: HashMap::new(), files: Vec::new(), scans: Vec::new() };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stages = Vec::new();
    let mut halted = false;
    for (i, sc) in cfg.pipeline.iter().enumerate() {
        let id = cfg.stage_id(i);
        let seed = rng.next_u64();
        let mut rec = StageRecord {
            index: i,
            id: id.clone(),
            kind: sc.stage.kind().to_string(),
            status: StageStatus::Skipped,
            seconds: 0.0,
            artifacts: Vec::new(),
            summary: Value::Null,
            error: None,
        };
        if !halted {
            let t = Instant::now();
            match run_stage(&mut ctx, &id, &sc.stage, seed) {
                Ok(o) => {
                    rec.status = if o.pass { StageStatus::Passed } else { StageStatus::Failed };
                    rec.artifacts = o.artifacts;
                    rec.summary = o.summary;
                }
                Err(e) => {
                    rec.status = StageStatus::Error;
                    rec.error = Some(e.to_string());
                }
            }
            rec.seconds = t.elapsed().as_secs_f64();
            halted = rec.status != StageStatus::Passed;
        }
        stages.push(rec);
    }
    let m = Manifest { name: cfg.name.clone(), seed: cfg.seed, stages, artifacts: ctx.files, scans: ctx.scans };
    fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&m)?)?;
    Ok(m)
}

/// Writes `summary.txt`, `<id>.plot.csv` (`log_N,log_norm`) for every scan
/// stage and `<id>.hist.csv` of certificate eigenvalues; returns the summary.
pub fn emit_report(m: &Manifest, dir: &Path) -> Result<String> {
    let mut out = String::new();
    if !m.stages.is_empty() {
        let _ = writeln!(out, "experiment {} (seed {})", m.name, m.seed);
    }
    for s in &m.stages {
        let tag = match s.status {
            StageStatus::Passed => "PASS",
            StageStatus::Failed => "FAIL",
            StageStatus::Error => "ERROR",
            StageStatus::Skipped => "SKIPPED",
        };
        let _ = write!(out, "[{tag}] {} {} ({:.3} s)", s.id, s.kind, s.seconds);
        if let Some(e) = &s.error {
            let _ = write!(out, ": {e}");
        }
        out.push('\n');
        if s.status == StageStatus::Skipped {
            continue;
        }
        match s.kind.as_str() {
            "fup-norm" | "fup-scan" => {
                let mut csv = String::from("log_N,log_norm\n");
                for r in m.scans.iter().filter(|r| r.stage == s.id) {
                    let _ = writeln!(csv, "{:.17e},{:.17e}", (r.entry.n as f64).ln(), r.entry.norm.ln());
                }
                fs::write(dir.join(format!("{}.plot.csv", s.id)), csv)?;
            }
            "psh-check" => {
                let path = dir.join(format!("{}.cert.json", s.id));
                if let Ok(bytes) = fs::read(&path) {
                    let cert: PshCertificate = serde_json::from_slice(&bytes)?;
                    fs::write(dir.join(format!("{}.hist.csv", s.id)), histogram_csv(&cert.min_eig, 20))?;
                    let _ = writeln!(out, "    global min eigenvalue {:.3e}, C = {:.6}", cert.global_min, cert.constant_c);
                }
            }
            _ => {}
        }
    }
    fs::write(dir.join("summary.txt"), &out)?;
    Ok(out)
}

fn histogram_csv(v: &[f64], bins: usize) -> String {
    let mut s = String::from("bin_lo,bin_hi,count\n");
    if v.is_empty() {
        return s;
    }
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for x in v {
        let b = (((x - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    for (i, c) in counts.iter().enumerate() {
        let _ = writeln!(s, "{:.17e},{:.17e},{c}", lo + i as f64 * width, lo + (i + 1) as f64 * width);
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunComparison {
    pub files: usize,
    pub gset_identical: bool,
    /// Largest relative difference over numeric fields of reports.
    pub max_rel_diff: f64,
    pub mismatches: Vec<String>,
}

impl RunComparison {
    pub fn reproducible(&self, tol: f64) -> bool {
        self.gset_identical && self.mismatches.is_empty() && self.max_rel_diff <= tol
    }
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs()).max(1.0)
    }
}

fn compare_json(a: &Value, b: &Value, path: &str, worst: &mut f64, bad: &mut Vec<String>) {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            *worst = worst.max(rel(x.as_f64().unwrap_or(f64::NAN), y.as_f64().unwrap_or(f64::NAN)));
        }
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
            for (i, (p, q)) in x.iter().zip(y).enumerate() {
                compare_json(p, q, &format!("{path}[{i}]"), worst, bad);
            }
        }
        (Value::Object(x), Value::Object(y)) if x.len() == y.len() => {
            for (k, p) in x {
                match y.get(k) {
                    Some(q) => compare_json(p, q, &format!("{path}.{k}"), worst, bad),
                    None => bad.push(format!("{path}.{k} missing")),
                }
            }
        }
        _ if a == b => {}
        _ => bad.push(format!("{path} differs")),
    }
}

/// Compares the artifacts of two runs: `.gset` files byte for byte, JSON
/// and CSV reports field by field.
pub fn compare_runs(a: &Path, b: &Path) -> Result<RunComparison> {
    let ma = Manifest::load(a)?;
    let mb = Manifest::load(b)?;
    let mut cmp = RunComparison { files: 0, gset_identical: true, max_rel_diff: 0.0, mismatches: Vec::new() };
    let names_a: Vec<&str> = ma.artifacts.iter().map(|r| r.file.as_str()).collect();
    let names_b: Vec<&str> = mb.artifacts.iter().map(|r| r.file.as_str()).collect();
    if names_a != names_b {
        cmp.mismatches.push("artifact lists differ".into());
        return Ok(cmp);
    }
    for name in names_a {
        cmp.files += 1;
        let (x, y) = (fs::read(a.join(name))?, fs::read(b.join(name))?);
        if name.ends_with(".gset") {
            cmp.gset_identical &= x == y;
        } else if name.ends_with(".json") {
            let (p, q): (Value, Value) = (serde_json::from_slice(&x)?, serde_json::from_slice(&y)?);
            compare_json(&p, &q, name, &mut cmp.max_rel_diff, &mut cmp.mismatches);
        } else {
            let (p, q) = (String::from_utf8_lossy(&x), String::from_utf8_lossy(&y));
            let (fp, fq): (Vec<&str>, Vec<&str>) = (p.split([',', '\n']).collect(), q.split([',', '\n']).collect());
            if fp.len() != fq.len() {
                cmp.mismatches.push(format!("{name} shape differs"));
                continue;
            }
            for (u, v) in fp.iter().zip(&fq) {
                match (u.parse::<f64>(), v.parse::<f64>()) {
                    (Ok(s), Ok(t)) => cmp.max_rel_diff = cmp.max_rel_diff.max(rel(s, t)),
                    _ if u == v => {}
                    _ => cmp.mismatches.push(format!("{name} field {u:?} vs {v:?}")),
                }
            }
        }
    }
    let sa: Vec<(&str, StageStatus)> = ma.stages.iter().map(|s| (s.id.as_str(), s.status)).collect();
    let sb: Vec<(&str, StageStatus)> = mb.stages.iter().map(|s| (s.id.as_str(), s.status)).collect();
    if sa != sb {
        cmp.mismatches.push("stage outcomes differ".into());
    }
    Ok(cmp)
}
