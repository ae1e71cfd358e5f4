//! Config-driven experiment runner: flat TOML configuration, one experiment
//! kind per run, deterministic artifacts and a manifest.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assembly::{assemble_stiffness, mass_matrix, StiffnessOperator};
use crate::bubbles::{
    eps_grid, estimate_s, fit_slope, pairing_integrals, bubble_lq_regime, BubbleParams, SlopeFit, SobolevEstimate,
};
use crate::error::{Error, Result};
use crate::fibering::{fibering_report, thresholds, FiberingReport, ThresholdSet};
use crate::levels::{build_levels, check_d1, check_d2, levels_report, AscentConfig, LevelRow, LevelsReport, SphereCheck};
use crate::mesh::Mesh;
use crate::params::{KernelSpec, ProblemParams};
use crate::report::to_json;
use crate::solver::{
    classify_parts, minimize_on_nehari, minimize_sign_changing, multi_solution_search, sign_changing_continuation,
    Branch, ContinuationResult, MultiSolveReport, ProjectionMode, SolutionRecord, SolverConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Assemble,
    Thresholds,
    FiberingReport,
    SolvePositive,
    SolveSignchanging,
    BubbleAsymptotics,
    FountainLevels,
    MultiSolve,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        Self::Assemble,
        Self::Thresholds,
        Self::FiberingReport,
        Self::SolvePositive,
        Self::SolveSignchanging,
        Self::BubbleAsymptotics,
        Self::FountainLevels,
        Self::MultiSolve,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Assemble => "assemble",
            Self::Thresholds => "thresholds",
            Self::FiberingReport => "fibering-report",
            Self::SolvePositive => "solve-positive",
            Self::SolveSignchanging => "solve-signchanging",
            Self::BubbleAsymptotics => "bubble-asymptotics",
            Self::FountainLevels => "fountain-levels",
            Self::MultiSolve => "multi-solve",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment kind '{s}'")))
    }
}

/// Flat experiment configuration. Every key is optional; see [`describe`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub s: f64,
    pub q: f64,
    /// `None` selects the critical exponent `2* − 1`.
    pub p: Option<f64>,
    pub mu: f64,
    pub lambda: f64,
    pub a: f64,
    pub b: f64,
    pub theta: f64,
    pub n: usize,
    pub quad_order: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,

    pub max_iters: usize,
    pub residual_tol: f64,
    pub nehari_tol: f64,
    pub projection: ProjectionMode,
    pub part_tol: f64,
    pub dedup_tol: f64,
    pub deflation_shift: f64,
    pub deflation_power: f64,
    pub keep_trace: bool,

    pub s_estimate: Option<f64>,
    pub s_base_n: usize,
    pub s_levels: usize,
    pub s_points: usize,
    pub s_eps_hi: f64,
    pub s_eps_lo: f64,
    pub eps_per_decade: usize,

    pub bubble_eps: f64,
    pub slope_eps_hi: f64,
    pub slope_eps_lo: f64,
    pub slope_q: Vec<f64>,

    pub k_max: Option<usize>,
    pub samples: usize,
    pub random_starts: usize,
    pub count: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let solver = SolverConfig::default();
        Self {
            kind: ExperimentKind::Thresholds,
            s: 0.2,
            q: 0.5,
            p: None,
            mu: 0.1,
            lambda: 1.0,
            a: -1.0,
            b: 1.0,
            theta: 1.0,
            n: 127,
            quad_order: 4,
            seed: 0,
            out: None,
            max_iters: solver.max_iters,
            residual_tol: solver.residual_tol,
            nehari_tol: solver.nehari_tol,
            projection: solver.projection,
            part_tol: solver.part_tol,
            dedup_tol: solver.dedup_tol,
            deflation_shift: solver.deflation_shift,
            deflation_power: solver.deflation_power,
            keep_trace: false,
            s_estimate: None,
            s_base_n: 255,
            s_levels: 3,
            s_points: 5,
            s_eps_hi: 1e-1,
            s_eps_lo: 1e-5,
            eps_per_decade: 6,
            bubble_eps: 1e-2,
            slope_eps_hi: 1e-8,
            slope_eps_lo: 1e-11,
            slope_q: vec![0.5, 2.0 / 3.0, 0.8],
            k_max: None,
            samples: 100,
            random_starts: 3,
            count: 4,
        }
    }
}

/// `(key, unit, default, meaning)` for every configuration key.
pub const KEYS: &[(&str, &str, &str, &str)] = &[
    ("kind", "-", "thresholds", "experiment kind: assemble | thresholds | fibering-report | solve-positive | solve-signchanging | bubble-asymptotics | fountain-levels | multi-solve"),
    ("s", "-", "0.2", "fractional order, 0 < s < 1/2 (N = 1)"),
    ("q", "-", "0.5", "concave exponent, 0 < q < 1"),
    ("p", "-", "2*-1", "convex exponent, 1 < p <= 2*-1; omit for the critical exponent"),
    ("mu", "-", "0.1", "weight of the concave term"),
    ("lambda", "-", "1.0", "weight of the convex term"),
    ("a", "length", "-1.0", "left end of the domain"),
    ("b", "length", "1.0", "right end of the domain"),
    ("theta", "-", "1.0", "kernel lower-bound constant"),
    ("n", "nodes", "127", "interior nodes of the uniform mesh"),
    ("quad_order", "points", "4", "Gauss-Legendre points per element"),
    ("seed", "-", "0", "seed for every random choice"),
    ("out", "path", "out", "output directory (the --out flag wins)"),
    ("max_iters", "iterations", "2000", "descent iteration cap"),
    ("residual_tol", "-", "1e-10", "dual residual tolerance relative to max(1, ||u||)"),
    ("nehari_tol", "-", "1e-8", "relative tolerance for Nehari classification"),
    ("projection", "-", "coupled", "sign-changing projection: coupled | independent"),
    ("part_tol", "L2 norm", "1e-6", "part norm below which a sign-changing part has collapsed"),
    ("dedup_tol", "relative L2", "1e-4", "distance below which two solutions coincide"),
    ("deflation_shift", "-", "1.0", "deflation shift sigma"),
    ("deflation_power", "-", "2.0", "deflation power"),
    ("keep_trace", "-", "false", "write per-iteration traces as line-delimited JSON"),
    ("s_estimate", "-", "computed", "Sobolev constant; omit to estimate it from bubbles"),
    ("s_base_n", "nodes", "255", "coarsest mesh of the Sobolev estimate (refined by halving h)"),
    ("s_levels", "meshes", "3", "mesh levels of the Sobolev estimate"),
    ("s_points", "points", "5", "smallest admissible eps values used per mesh"),
    ("s_eps_hi", "-", "1e-1", "largest eps of the Sobolev grid"),
    ("s_eps_lo", "-", "1e-5", "smallest eps of the Sobolev grid"),
    ("eps_per_decade", "points", "6", "eps grid density"),
    ("bubble_eps", "-", "1e-2", "bubble concentration for the sign-changing continuation"),
    ("slope_eps_hi", "-", "1e-8", "largest eps of the asymptotic slope fits"),
    ("slope_eps_lo", "-", "1e-11", "smallest eps of the asymptotic slope fits"),
    ("slope_q", "-", "[0.5, 0.6667, 0.8]", "q values for the L^{q+1} bubble slopes"),
    ("k_max", "levels", "n/2", "largest level for fountain-levels"),
    ("samples", "-", "100", "random samples (fibering-report, sphere checks)"),
    ("random_starts", "-", "3", "extra random starts per level ascent"),
    ("count", "solutions", "4", "requested solutions for multi-solve"),
];

/// Table of keys, units and defaults.
pub fn describe() -> String {
    let mut out = String::from("key\tunit\tdefault\tmeaning\n");
    for (k, u, d, m) in KEYS {
        out.push_str(&format!("{k}\t{u}\t{d}\t{m}\n"));
    }
    out
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn params(&self) -> ProblemParams {
        let ts = 2.0 / (1.0 - 2.0 * self.s);
        ProblemParams {
            dim: 1,
            s: self.s,
            q: self.q,
            p: self.p.unwrap_or(ts - 1.0),
            mu: self.mu,
            lambda: self.lambda,
            domain: crate::params::Interval::new(self.a, self.b),
            kernel: KernelSpec::Fractional,
            theta: self.theta,
        }
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            max_iters: self.max_iters,
            residual_tol: self.residual_tol,
            nehari_tol: self.nehari_tol,
            projection: self.projection,
            part_tol: self.part_tol,
            dedup_tol: self.dedup_tol,
            deflation_shift: self.deflation_shift,
            deflation_power: self.deflation_power,
            seed: self.seed,
            keep_trace: self.keep_trace,
            ..SolverConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let params = self.params();
        params.validate()?;
        if self.kind == ExperimentKind::SolveSignchanging {
            params.validate_sign_changing()?;
        }
        self.solver().validate()?;
        if self.n == 0 {
            return Err(Error::Config("n>0 violated".into()));
        }
        if let Some(k) = self.k_max {
            if k == 0 || k > self.n {
                return Err(Error::Config(format!("1<=k_max<=n violated (k_max = {k})")));
            }
        }
        if self.samples == 0 || self.count == 0 || self.s_levels == 0 || self.eps_per_decade == 0 {
            return Err(Error::Config("samples, count, s_levels and eps_per_decade must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form (output directory excluded).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        let text = to_json(&c).unwrap_or_default();
        hex(&Sha256::digest(text.as_bytes()))
    }

    fn mesh(&self) -> Result<Mesh> {
        Mesh::uniform(self.a, self.b, self.n, self.quad_order)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Process exit status for an error: 2 validation, 3 numerical failure, 4 I/O.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Param(_)
        | Error::Config(_)
        | Error::Input(_)
        | Error::Mesh(_)
        | Error::DimensionMismatch { .. }
        | Error::ZeroInput
        | Error::Part => 2,
        Error::Io(_) | Error::Json(_) => 4,
        _ => 3,
    }
}

/// Machine-readable one-line diagnostic for stderr.
pub fn diagnostic(err: &Error) -> String {
    let kind = match err {
        Error::Mesh(_) => "mesh",
        Error::Param(_) => "param",
        Error::Quadrature(_) => "quadrature",
        Error::DimensionMismatch { .. } => "dimension_mismatch",
        Error::ZeroInput => "zero_input",
        Error::NoRoots { .. } => "no_roots",
        Error::Root(_) => "root",
        Error::Part => "part",
        Error::NearDegenerate(_) => "near_degenerate",
        Error::Extrapolation(_) => "extrapolation",
        Error::Input(_) => "input",
        Error::Fit(_) => "fit",
        Error::Continuation { .. } => "continuation",
        Error::Collapse(_) => "collapse",
        Error::NonConvergence { .. } => "non_convergence",
        Error::Eigen(_) => "eigen",
        Error::Config(_) => "config",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    };
    serde_json::json!({"error": kind, "message": err.to_string(), "exit_code": exit_code(err)}).to_string()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: ExperimentKind,
    pub config_hash: String,
    pub seed: u64,
    pub artifacts: Vec<Artifact>,
}

/// Collects artifacts in memory; [`Outputs::write`] puts them on disk.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(String, String)>,
}

impl Outputs {
    pub fn add(&mut self, name: &str, contents: String) {
        self.files.push((name.to_string(), contents));
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.add(name, to_json(value)?);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }

    pub fn names(&self) -> Vec<&str> {
        self.files.iter().map(|(n, _)| n.as_str()).collect()
    }

    /// Writes every artifact and `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path, cfg: &ExperimentConfig) -> Result<Manifest> {
        fs::create_dir_all(dir)?;
        let mut artifacts = Vec::new();
        for (name, contents) in &self.files {
            fs::write(dir.join(name), contents)?;
            artifacts.push(Artifact {
                file: name.clone(),
                bytes: contents.len(),
                sha256: hex(&Sha256::digest(contents.as_bytes())),
            });
        }
        let manifest = Manifest { kind: cfg.kind, config_hash: cfg.hash(), seed: cfg.seed, artifacts };
        fs::write(dir.join("manifest.json"), to_json(&manifest)?)?;
        Ok(manifest)
    }
}

fn records_csv(records: &[&SolutionRecord]) -> String {
    let mut out = format!("{}\n", SolutionRecord::CSV_HEADER);
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

fn add_record(outs: &mut Outputs, rec: &SolutionRecord) -> Result<()> {
    let mut plain = rec.clone();
    let trace = std::mem::take(&mut plain.trace);
    outs.add_json(&format!("{}.json", rec.label), &plain)?;
    if !trace.is_empty() {
        let mut lines = String::new();
        for t in &trace {
            lines.push_str(&to_json(t)?.split_whitespace().collect::<Vec<_>>().join(" "));
            lines.push('\n');
        }
        outs.add(&format!("{}_trace.jsonl", rec.label), lines);
    }
    Ok(())
}

/// Sobolev constant from the configuration, or the bubble estimate.
pub fn sobolev_estimate(cfg: &ExperimentConfig) -> Result<SobolevEstimate> {
    let params = cfg.params();
    let meshes = (0..cfg.s_levels)
        .map(|l| Mesh::uniform(cfg.a, cfg.b, (cfg.s_base_n + 1) * (1 << l) - 1, cfg.quad_order))
        .collect::<Result<Vec<_>>>()?;
    let bp = BubbleParams::new(&params, cfg.s_eps_hi);
    estimate_s(&params, &meshes, &bp, &eps_grid(cfg.s_eps_hi, cfg.s_eps_lo, cfg.eps_per_decade), cfg.s_points)
}

fn s_value(cfg: &ExperimentConfig, outs: &mut Outputs) -> Result<f64> {
    match cfg.s_estimate {
        Some(v) => Ok(v),
        None => {
            let est = sobolev_estimate(cfg)?;
            outs.add_json("sobolev.json", &est)?;
            Ok(est.value)
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SignChangingSummary {
    pub w1_energy: f64,
    pub w2_energy: f64,
    pub sobolev_level: f64,
    /// `I(w₁) + (s/N) S^{N/(2s)}`
    pub energy_bound: f64,
    pub below_bound: bool,
    pub continuation_a: f64,
    pub continuation_b: f64,
    pub init_plus_class: Option<crate::fibering::NehariClass>,
    pub init_minus_class: Option<crate::fibering::NehariClass>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BubbleSlopes {
    pub eps: Vec<f64>,
    pub a1: SlopeFit,
    pub a2: SlopeFit,
    pub a3: SlopeFit,
    pub a4: SlopeFit,
    pub lq: Vec<(f64, SlopeFit)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LevelsOutput {
    pub report: LevelsReport,
    pub d1: Vec<SphereCheck>,
    pub d2: Vec<SphereCheck>,
}

/// Asymptotic slopes of the pairing integrals against the positive solution
/// `w1` and of `∫|u_ε|^{q+1}` for each `q` in the configuration.
pub fn bubble_slopes(cfg: &ExperimentConfig, w1: &crate::mesh::DiscreteFunction) -> Result<BubbleSlopes> {
    let params = cfg.params();
    let eps = eps_grid(cfg.slope_eps_hi, cfg.slope_eps_lo, cfg.eps_per_decade);
    let bp = BubbleParams::new(&params, cfg.slope_eps_hi);
    let ints = eps
        .iter()
        .map(|&e| pairing_integrals(w1, &params, &bp.with_eps(e)))
        .collect::<Result<Vec<_>>>()?;
    let col = |f: fn(&crate::bubbles::PairingIntegrals) -> f64| ints.iter().map(f).collect::<Vec<_>>();
    let lq = cfg
        .slope_q
        .iter()
        .map(|&q| Ok((q, bubble_lq_regime(&bp, &eps, q)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(BubbleSlopes {
        a1: fit_slope(&eps, &col(|i| i.a1))?,
        a2: fit_slope(&eps, &col(|i| i.a2))?,
        a3: fit_slope(&eps, &col(|i| i.a3))?,
        a4: fit_slope(&eps, &col(|i| i.a4))?,
        lq,
        eps,
    })
}

/// Runs the configured experiment and returns its artifacts (nothing is
/// written to disk).
pub fn run(cfg: &ExperimentConfig) -> Result<Outputs> {
    cfg.validate()?;
    let params = cfg.params();
    let solver = cfg.solver();
    let mut outs = Outputs::default();
    match cfg.kind {
        ExperimentKind::Assemble => {
            let a = assemble_stiffness(&cfg.mesh()?, &params)?;
            outs.add_json("operator.json", &a.to_document())?;
        }
        ExperimentKind::Thresholds => {
            let s = s_value(cfg, &mut outs)?;
            let th: ThresholdSet = thresholds(&params, s)?;
            outs.add_json("thresholds.json", &th)?;
        }
        ExperimentKind::FiberingReport => {
            let a = assemble_stiffness(&cfg.mesh()?, &params)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut reports: Vec<FiberingReport> = Vec::with_capacity(cfg.samples);
            let mut csv = String::from("sample,t0,t_minus,t_plus,mu_rhs,phi_t0\n");
            for i in 0..cfg.samples {
                let u = a.function(DVector::from_fn(a.dim(), |_, _| rng.random_range(-1.0..1.0)))?;
                let r = fibering_report(&u, &a, &params)?;
                let opt = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
                csv.push_str(&format!(
                    "{i},{:.16e},{},{},{:.16e},{:.16e}\n",
                    r.t0,
                    opt(r.t_minus),
                    opt(r.t_plus),
                    r.mu_rhs,
                    r.phi_t0
                ));
                reports.push(r);
            }
            outs.add_json("fibering.json", &reports)?;
            outs.add("fibering.csv", csv);
        }
        ExperimentKind::SolvePositive => {
            let a = assemble_stiffness(&cfg.mesh()?, &params)?;
            let w0 = minimize_on_nehari(&a, &params, Branch::NPlus, None, &solver)?;
            let w1 = minimize_on_nehari(&a, &params, Branch::NMinus, None, &solver)?;
            add_record(&mut outs, &w0)?;
            add_record(&mut outs, &w1)?;
            outs.add("solutions.csv", records_csv(&[&w0, &w1]));
        }
        ExperimentKind::SolveSignchanging => {
            let s = s_value(cfg, &mut outs)?;
            let th = thresholds(&params, s)?;
            outs.add_json("thresholds.json", &th)?;
            let a = assemble_stiffness(&cfg.mesh()?, &params)?;
            let w1 = minimize_on_nehari(&a, &params, Branch::NMinus, None, &solver)?;
            let w1f = w1.function(&a)?;
            let cont: ContinuationResult =
                sign_changing_continuation(&a, &params, &w1f, &BubbleParams::new(&params, cfg.bubble_eps))?;
            let u_init = cont.u_init(&a)?;
            let (pc, mc, _) = classify_parts(&a, &u_init, &params, solver.nehari_tol)?;
            outs.add_json("continuation.json", &cont)?;
            let sc_cfg = SolverConfig { energy_ceiling: Some(w1.energy.total + th.sobolev_level), ..solver };
            let w2 = minimize_sign_changing(&a, &params, &u_init, &sc_cfg)?;
            let bound = w1.energy.total + th.sobolev_level;
            outs.add_json(
                "summary.json",
                &SignChangingSummary {
                    w1_energy: w1.energy.total,
                    w2_energy: w2.energy.total,
                    sobolev_level: th.sobolev_level,
                    energy_bound: bound,
                    below_bound: w2.energy.total < bound,
                    continuation_a: cont.a,
                    continuation_b: cont.b,
                    init_plus_class: pc,
                    init_minus_class: mc,
                },
            )?;
            add_record(&mut outs, &w1)?;
            add_record(&mut outs, &w2)?;
            outs.add("solutions.csv", records_csv(&[&w1, &w2]));
        }
        ExperimentKind::BubbleAsymptotics => {
            let est = sobolev_estimate(cfg)?;
            outs.add_json("sobolev.json", &est)?;
            let a = assemble_stiffness(&cfg.mesh()?, &params)?;
            let w1 = minimize_on_nehari(&a, &params, Branch::NMinus, None, &solver)?;
            let slopes = bubble_slopes(cfg, &w1.function(&a)?)?;
            for (name, fit) in [("a1", &slopes.a1), ("a2", &slopes.a2), ("a3", &slopes.a3), ("a4", &slopes.a4)] {
                outs.add(&format!("slope_{name}.csv"), fit.csv());
            }
            for (i, (_, fit)) in slopes.lq.iter().enumerate() {
                outs.add(&format!("slope_lq{i}.csv"), fit.csv());
            }
            outs.add_json("slopes.json", &slopes)?;
        }
        ExperimentKind::FountainLevels => {
            let mesh = cfg.mesh()?;
            let a = assemble_stiffness(&mesh, &params)?;
            let k_max = cfg.k_max.unwrap_or((cfg.n / 2).max(1));
            let ascent = AscentConfig { random_starts: cfg.random_starts, seed: cfg.seed, ..Default::default() };
            let report = levels_report(&a, &params, k_max, &ascent)?;
            let (d1, d2) = sphere_checks(&a, &params, &report, cfg.samples, cfg.seed)?;
            let mut csv = format!("{}\n", LevelRow::CSV_HEADER);
            for r in &report.rows {
                csv.push_str(&r.csv_row());
                csv.push('\n');
            }
            outs.add("levels.csv", csv);
            outs.add_json("levels.json", &LevelsOutput { report, d1, d2 })?;
        }
        ExperimentKind::MultiSolve => {
            let a = assemble_stiffness(&cfg.mesh()?, &params)?;
            let rep: MultiSolveReport = multi_solution_search(&a, &params, cfg.count, &solver)?;
            outs.add("solutions.csv", records_csv(&rep.records.iter().collect::<Vec<_>>()));
            outs.add_json("multi.json", &rep)?;
        }
    }
    Ok(outs)
}

/// Sampled sphere checks for every level: `I ≥ 0` on `Z_k` spheres of radius
/// `ρ_k` and `I < 0` on `Y_k` spheres of radius `ρ_k / 2`.
pub fn sphere_checks(
    a: &StiffnessOperator,
    params: &ProblemParams,
    report: &LevelsReport,
    samples: usize,
    seed: u64,
) -> Result<(Vec<SphereCheck>, Vec<SphereCheck>)> {
    let levels = build_levels(a, &mass_matrix(a.mesh()), report.rows.len())?;
    let mut d1 = Vec::new();
    let mut d2 = Vec::new();
    for row in &report.rows {
        d1.push(check_d1(&levels, a, params, row.k, row.rho_k, samples, seed ^ row.k as u64));
        d2.push(check_d2(&levels, a, params, row.k, 0.5 * row.rho_k, samples, seed ^ row.k as u64));
    }
    Ok((d1, d2))
}

/// Runs the experiment and writes its artifacts plus the manifest to `dir`.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<Manifest> {
    run(cfg)?.write(dir, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_roundtrip_through_names() {
        for k in ExperimentKind::ALL {
            assert_eq!(k.name().parse::<ExperimentKind>().unwrap(), k);
        }
        assert!("nope".parse::<ExperimentKind>().is_err());
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(matches!(ExperimentConfig::from_toml("kind = \"assemble\"\nbogus = 1\n"), Err(Error::Config(_))));
    }

    #[test]
    fn describe_lists_every_field() {
        let v = serde_json::to_value(ExperimentConfig::default()).unwrap();
        let text = describe();
        for key in v.as_object().unwrap().keys() {
            assert!(text.lines().any(|l| l.starts_with(&format!("{key}\t"))), "{key} missing");
        }
        assert_eq!(v.as_object().unwrap().len(), KEYS.len());
    }

    #[test]
    fn invalid_q_is_a_validation_error() {
        let cfg = ExperimentConfig::from_toml("q = 1.2\n").unwrap();
        let err = run(&cfg).err().unwrap();
        assert_eq!(exit_code(&err), 2);
        assert!(diagnostic(&err).contains("0<q<1"));
    }

    #[test]
    fn hash_ignores_output_directory() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { out: Some("elsewhere".into()), ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), ExperimentConfig { seed: 1, ..a.clone() }.hash());
    }
}
