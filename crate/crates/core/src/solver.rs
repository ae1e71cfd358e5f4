//! Critical points of the energy: Nehari-projected descent for positive
//! solutions, a two-part continuation and descent for sign-changing ones,
//! and a deflated multi-start Newton search.
//!
//! Descent directions are Riesz representatives `d = −A⁻¹ r` of the residual
//! covector, so step lengths are measured in the `X₀` metric.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::{mass_matrix, StiffnessOperator};
use crate::bubbles::{bubble_interpolant, BubbleParams};
use crate::error::{Error, Result};
use crate::fibering::{Fiber, NehariClass, DEFAULT_NEHARI_TOL};
use crate::functional::{EnergyBreakdown, Nonlinearity};
use crate::levels::{generalized_eigen, ground_state};
use crate::mesh::DiscreteFunction;
use crate::params::ProblemParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Local minimum along rays (`t⁻` projection), negative energy.
    NPlus,
    /// Maximum along rays (`t⁺` projection).
    NMinus,
}

/// How a sign-changing iterate is put back on the constraint set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMode {
    /// Rescale `(u⁺, u⁻)` jointly so that `<I'(v), v⁺> = <I'(v), v⁻> = 0`,
    /// cross interaction included. Stationary points are critical points.
    Coupled,
    /// Rescale each part by its own `t⁺`, ignoring the cross interaction.
    /// Keeps both parts on `N⁻` but its stationary points are only
    /// constrained critical points of the nonlocal energy.
    Independent,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Stop when the `X₀`-dual norm of the residual is below this times
    /// `max(1, ‖u‖)`.
    pub residual_tol: f64,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub min_step: f64,
    /// Relative tolerance for Nehari classification of the output.
    pub nehari_tol: f64,
    pub projection: ProjectionMode,
    pub deflation_shift: f64,
    pub deflation_power: f64,
    /// L² norm below which a part counts as vanished.
    pub part_tol: f64,
    /// Relative L² distance below which two solutions are the same.
    pub dedup_tol: f64,
    pub seed: u64,
    pub keep_trace: bool,
    /// Energy level above which a compactness warning is logged.
    pub energy_ceiling: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            residual_tol: 1e-10,
            armijo_c: 1e-4,
            backtrack: 0.5,
            min_step: 1e-10,
            nehari_tol: DEFAULT_NEHARI_TOL,
            projection: ProjectionMode::Coupled,
            deflation_shift: 1.0,
            deflation_power: 2.0,
            part_tol: 1e-6,
            dedup_tol: 1e-4,
            seed: 0,
            keep_trace: true,
            energy_ceiling: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("residual_tol", self.residual_tol),
            ("armijo_c", self.armijo_c),
            ("min_step", self.min_step),
            ("nehari_tol", self.nehari_tol),
            ("part_tol", self.part_tol),
            ("dedup_tol", self.dedup_tol),
            ("deflation_power", self.deflation_power),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name}>0 violated ({name} = {v})")));
            }
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::Config(format!("0<backtrack<1 violated (backtrack = {})", self.backtrack)));
        }
        if !(self.deflation_shift >= 0.0) {
            return Err(Error::Config("deflation_shift>=0 violated".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters>0 violated".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub energy: f64,
    pub residual: f64,
    pub step: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub label: String,
    pub coefficients: Vec<f64>,
    pub energy: EnergyBreakdown,
    /// `X₀`-dual norm of the residual of `I`.
    pub residual: f64,
    pub nehari_class: NehariClass,
    /// Class of the nodal part `u⁺` when it is nonzero.
    pub plus_class: Option<NehariClass>,
    /// Class of `−u⁻` when it is nonzero.
    pub minus_class: Option<NehariClass>,
    /// `<I'(u±), u±> / ‖u±‖²` for the two parts.
    pub part_nehari_residuals: Option<[f64; 2]>,
    pub sign_changing: bool,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceEntry>,
    #[serde(skip)]
    pub wall_time: f64,
}

impl SolutionRecord {
    pub const CSV_HEADER: &'static str = "label,total_energy,residual,nehari_class,sign_changing,iterations,converged";

    pub fn function(&self, a: &StiffnessOperator) -> Result<DiscreteFunction> {
        a.function(DVector::from_column_slice(&self.coefficients))
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.16e},{:.16e},{},{},{},{}",
            self.label,
            self.energy.total,
            self.residual,
            serde_json::to_value(self.nehari_class).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            self.sign_changing,
            self.iterations,
            self.converged
        )
    }
}

/// Cholesky factor of the stiffness matrix, used for Riesz maps and dual norms.
pub(crate) struct Riesz {
    chol: Cholesky<f64, Dyn>,
}

impl Riesz {
    pub fn new(a: &StiffnessOperator) -> Result<Self> {
        let chol = Cholesky::new(a.matrix().clone())
            .ok_or_else(|| Error::Input("stiffness matrix is not positive definite".into()))?;
        Ok(Self { chol })
    }

    pub fn solve(&self, r: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(r)
    }

    pub fn dual_norm(&self, r: &DVector<f64>) -> f64 {
        r.dot(&self.solve(r)).max(0.0).sqrt()
    }
}

/// `X₀`-dual norm of the residual of `I` at `u`.
pub fn residual_norm(a: &StiffnessOperator, u: &DiscreteFunction, params: &ProblemParams) -> Result<f64> {
    a.check(u)?;
    let r = Nonlinearity::new(params, false).residual(a, u.coeffs());
    Ok(Riesz::new(a)?.dual_norm(&r))
}

fn l2_norm(mass: &DMatrix<f64>, u: &DVector<f64>) -> f64 {
    u.dot(&(mass * u)).max(0.0).sqrt()
}

fn nodal_parts(u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    (u.map(|c| c.max(0.0)), u.map(|c| (-c).max(0.0)))
}

/// Nehari classes of the nodal parts `u⁺` and `−u⁻` (as produced by
/// `split_parts`), with the relative residuals `<I'(u±), u±> / ‖u±‖²`.
pub fn classify_parts(
    a: &StiffnessOperator,
    u: &DiscreteFunction,
    params: &ProblemParams,
    tol: f64,
) -> Result<(Option<NehariClass>, Option<NehariClass>, [f64; 2])> {
    a.check(u)?;
    let (up, um) = nodal_parts(u.coeffs());
    let classify = |part: &DVector<f64>| {
        if part.iter().any(|c| *c > 0.0) {
            let f = Fiber::from_coeffs(a, part, params, false);
            (Some(f.classify_at(1.0, tol)), f.nehari_residual_at(1.0) / f.x0_sq)
        } else {
            (None, 0.0)
        }
    };
    let (cp, rp) = classify(&up);
    let (cm, rm) = classify(&um);
    Ok((cp, cm, [rp, rm]))
}

fn build_record(
    a: &StiffnessOperator,
    params: &ProblemParams,
    label: &str,
    u: DVector<f64>,
    outcome: &Outcome,
    cfg: &SolverConfig,
    riesz: &Riesz,
    started: Instant,
) -> Result<SolutionRecord> {
    let nl = Nonlinearity::new(params, false);
    let energy = nl.energy(a, &u);
    let residual = riesz.dual_norm(&nl.residual(a, &u));
    let fiber = Fiber::from_coeffs(a, &u, params, false);
    let nehari_class = if u.iter().all(|c| *c == 0.0) {
        NehariClass::NotOnN
    } else {
        fiber.classify_at(1.0, cfg.nehari_tol)
    };
    let mass = mass_matrix(a.mesh());
    let (up, um) = nodal_parts(&u);
    let sign_changing = l2_norm(&mass, &up) > cfg.part_tol && l2_norm(&mass, &um) > cfg.part_tol;
    let f = a.function(u.clone())?;
    let (plus_class, minus_class, part_res) = classify_parts(a, &f, params, cfg.nehari_tol)?;
    Ok(SolutionRecord {
        label: label.to_string(),
        coefficients: u.iter().copied().collect(),
        energy,
        residual,
        nehari_class,
        plus_class,
        minus_class,
        part_nehari_residuals: sign_changing.then_some(part_res),
        sign_changing,
        iterations: outcome.iterations,
        converged: outcome.converged,
        trace: if cfg.keep_trace { outcome.trace.clone() } else { Vec::new() },
        wall_time: started.elapsed().as_secs_f64(),
    })
}

struct Outcome {
    u: DVector<f64>,
    iterations: usize,
    converged: bool,
    trace: Vec<TraceEntry>,
    /// Why the last rejected step failed, when descent stalled.
    stall: Option<Error>,
}

/// Armijo descent along `−A⁻¹ r` with projection after every trial step.
/// `nl` defines the energy whose residual drives the descent.
fn projected_descent<P>(
    a: &StiffnessOperator,
    riesz: &Riesz,
    nl: &Nonlinearity,
    u0: DVector<f64>,
    project: P,
    cfg: &SolverConfig,
) -> Outcome
where
    P: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut u = u0;
    let mut energy = nl.energy(a, &u).total;
    let mut trace = Vec::new();
    let mut step = 1.0;
    let mut warned = false;
    for it in 0..cfg.max_iters {
        let r = nl.residual(a, &u);
        let d = -riesz.solve(&r);
        let res = (-r.dot(&d)).max(0.0).sqrt();
        trace.push(TraceEntry { iteration: it, energy, residual: res, step });
        if res <= cfg.residual_tol * a.inner_coeffs(&u, &u).sqrt().max(1.0) {
            return Outcome { u, iterations: it, converged: true, trace, stall: None };
        }
        if let Some(ceiling) = cfg.energy_ceiling {
            if energy > ceiling && !warned {
                log::warn!("energy {energy:.6e} above the compactness ceiling {ceiling:.6e}");
                warned = true;
            }
        }
        let slope = -res * res;
        let mut alpha = (2.0 * step).min(1.0);
        let mut last_err = None;
        let accepted = loop {
            if alpha < cfg.min_step {
                break None;
            }
            match project(&(&u + &d * alpha)) {
                Ok(cand) => {
                    let e = nl.energy(a, &cand).total;
                    let armijo = e <= energy + cfg.armijo_c * alpha * slope;
                    // near convergence energy differences sink below roundoff
                    let flat = (e - energy).abs() <= 1e-13 * energy.abs().max(1e-300)
                        && riesz.dual_norm(&nl.residual(a, &cand)) < res;
                    if armijo || flat {
                        break Some((cand, e.min(energy)));
                    }
                }
                Err(e) => last_err = Some(e),
            }
            alpha *= cfg.backtrack;
        };
        match accepted {
            Some((cand, e)) => {
                u = cand;
                energy = e;
                step = alpha;
            }
            None => {
                return Outcome {
                    u,
                    iterations: it,
                    converged: false,
                    trace,
                    stall: Some(last_err.unwrap_or_else(|| Error::Root("line search stalled".into()))),
                }
            }
        }
    }
    Outcome { u, iterations: cfg.max_iters, converged: false, trace, stall: None }
}

fn finish(record: SolutionRecord, outcome: Outcome) -> Result<SolutionRecord> {
    if record.converged {
        return Ok(record);
    }
    if let Some(Error::Collapse(v)) = outcome.stall {
        return Err(Error::Collapse(v));
    }
    Err(Error::NonConvergence { iterations: record.iterations, residual: record.residual, best: Box::new(record) })
}

/// Rescale `w` onto `N⁺` (`t⁻ w`) or `N⁻` (`t⁺ w`) of the positive-part
/// energy `J`.
pub fn project_positive(
    a: &StiffnessOperator,
    params: &ProblemParams,
    branch: Branch,
    w: &DiscreteFunction,
) -> Result<DiscreteFunction> {
    a.check(w)?;
    Ok(w.with_coeffs(project_branch(a, params, branch, w.coeffs())?))
}

fn project_branch(a: &StiffnessOperator, params: &ProblemParams, branch: Branch, w: &DVector<f64>) -> Result<DVector<f64>> {
    if w.iter().all(|c| *c <= 0.0) {
        return Err(Error::ZeroInput);
    }
    let fiber = Fiber::from_coeffs(a, w, params, true);
    let (t_minus, t_plus) = fiber.roots()?;
    let t = match branch {
        Branch::NPlus => t_minus.ok_or_else(|| Error::Param("N+ projection needs mu>0".into()))?,
        Branch::NMinus => t_plus,
    };
    Ok(w * t)
}

/// Minimize `J` over `N⁺` or `N⁻`. The positive-part nonlinearity makes
/// minimizers nonnegative; the output is labelled `w0` (`N⁺`) or `w1` (`N⁻`).
/// Starts from the ground state of `A e = λ M e` when `init` is absent.
pub fn minimize_on_nehari(
    a: &StiffnessOperator,
    params: &ProblemParams,
    branch: Branch,
    init: Option<&DiscreteFunction>,
    cfg: &SolverConfig,
) -> Result<SolutionRecord> {
    params.validate()?;
    cfg.validate()?;
    if !(params.mu > 0.0) {
        return Err(Error::Param("mu>0 violated".into()));
    }
    let started = Instant::now();
    let riesz = Riesz::new(a)?;
    let w = match init {
        Some(u) => {
            a.check(u)?;
            u.coeffs().clone()
        }
        None => ground_state(a)?.1,
    };
    let u0 = project_branch(a, params, branch, &w)?;
    let nl = Nonlinearity::new(params, true);
    let outcome = projected_descent(a, &riesz, &nl, u0, |w| project_branch(a, params, branch, w), cfg);
    let label = match branch {
        Branch::NPlus => "w0",
        Branch::NMinus => "w1",
    };
    let record = build_record(a, params, label, outcome.u.clone(), &outcome, cfg, &riesz, started)?;
    finish(record, outcome)
}

/// Joint rescaling of the nodal parts: `(α, β)` with
/// `v = α w⁺ − β w⁻`, `<I'(v), w⁺> = <I'(v), w⁻> = 0` and both parts of
/// `N⁻` type (negative definite 2×2 Hessian of `(α, β) ↦ I(v)`).
pub fn coupled_scaling(
    a: &StiffnessOperator,
    params: &ProblemParams,
    w: &DiscreteFunction,
    start: Option<(f64, f64)>,
) -> Result<(f64, f64)> {
    a.check(w)?;
    coupled_scaling_coeffs(a, params, w.coeffs(), start)
}

fn coupled_scaling_coeffs(
    a: &StiffnessOperator,
    params: &ProblemParams,
    w: &DVector<f64>,
    start: Option<(f64, f64)>,
) -> Result<(f64, f64)> {
    let (up, um) = nodal_parts(w);
    if up.iter().all(|c| *c == 0.0) || um.iter().all(|c| *c == 0.0) {
        return Err(Error::Collapse(0.0));
    }
    let nl = Nonlinearity::new(params, false);
    let mesh = a.mesh();
    let (aup, aum) = (a.apply(&up), a.apply(&um));
    let (xp, xm) = (up.dot(&aup), um.dot(&aum));
    let grad = |al: f64, be: f64| -> [f64; 2] {
        let v = &up * al - &um * be;
        let r = &aup * al - &aum * be - nl.load(mesh, &v);
        [r.dot(&up), r.dot(&um)]
    };
    let (mut al, mut be) = match start {
        Some(s) => s,
        None => {
            let tp = Fiber::from_coeffs(a, &up, params, false).roots()?.1;
            let tm = Fiber::from_coeffs(a, &um, params, false).roots()?.1;
            (tp, tm)
        }
    };
    let scaled = |g: [f64; 2], al: f64, be: f64| [g[0] / (al * xp), g[1] / (be * xm)];
    let norm = |g: [f64; 2]| g[0].hypot(g[1]);
    let jacobian = |al: f64, be: f64| -> [[f64; 2]; 2] {
        let (ha, hb) = (1e-6 * al, 1e-6 * be);
        let (gpa, gma) = (grad(al + ha, be), grad(al - ha, be));
        let (gpb, gmb) = (grad(al, be + hb), grad(al, be - hb));
        [
            [(gpa[0] - gma[0]) / (2.0 * ha), (gpb[0] - gmb[0]) / (2.0 * hb)],
            [(gpa[1] - gma[1]) / (2.0 * ha), (gpb[1] - gmb[1]) / (2.0 * hb)],
        ]
    };
    let mut g = grad(al, be);
    for _ in 0..100 {
        if norm(scaled(g, al, be)) <= 1e-13 {
            // ∂I/∂α = g0 and ∂I/∂β = −g1, so the Hessian is [[J00, J01], [−J10, −J11]]
            let j = jacobian(al, be);
            let (h00, h11, h01) = (j[0][0], -j[1][1], 0.5 * (j[0][1] - j[1][0]));
            if h00 < 0.0 && h00 * h11 - h01 * h01 > 0.0 {
                return Ok((al, be));
            }
            return Err(Error::Root(format!("joint scaling ({al:.6e}, {be:.6e}) is not of N- type")));
        }
        let j = jacobian(al, be);
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det == 0.0 || !det.is_finite() {
            return Err(Error::Root("singular joint scaling Jacobian".into()));
        }
        let da = -(j[1][1] * g[0] - j[0][1] * g[1]) / det;
        let db = -(-j[1][0] * g[0] + j[0][0] * g[1]) / det;
        let current = norm(scaled(g, al, be));
        let mut t = 1.0;
        loop {
            let (na, nb) = (al + t * da, be + t * db);
            if na > 0.0 && nb > 0.0 {
                let ng = grad(na, nb);
                if norm(scaled(ng, na, nb)) < current {
                    al = na;
                    be = nb;
                    g = ng;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-12 {
                return Err(Error::Root("joint scaling line search failed".into()));
            }
        }
    }
    Err(Error::Root("joint scaling did not converge".into()))
}

fn project_sign_changing(
    a: &StiffnessOperator,
    params: &ProblemParams,
    mass: &DMatrix<f64>,
    w: &DVector<f64>,
    cfg: &SolverConfig,
    start: Option<(f64, f64)>,
) -> Result<DVector<f64>> {
    let (up, um) = nodal_parts(w);
    let small = l2_norm(mass, &up).min(l2_norm(mass, &um));
    if small < cfg.part_tol {
        return Err(Error::Collapse(small));
    }
    let (al, be) = match cfg.projection {
        ProjectionMode::Coupled => coupled_scaling_coeffs(a, params, w, start)?,
        ProjectionMode::Independent => (
            Fiber::from_coeffs(a, &up, params, false).roots()?.1,
            Fiber::from_coeffs(a, &um, params, false).roots()?.1,
        ),
    };
    Ok(up * al - um * be)
}

/// Descent of `I` over sign-changing functions, re-projecting both parts
/// after each step (see [`ProjectionMode`]). Output is labelled `w2`.
pub fn minimize_sign_changing(
    a: &StiffnessOperator,
    params: &ProblemParams,
    u_init: &DiscreteFunction,
    cfg: &SolverConfig,
) -> Result<SolutionRecord> {
    params.validate()?;
    cfg.validate()?;
    a.check(u_init)?;
    let started = Instant::now();
    let riesz = Riesz::new(a)?;
    let mass = mass_matrix(a.mesh());
    let u0 = project_sign_changing(a, params, &mass, u_init.coeffs(), cfg, None)?;
    let nl = Nonlinearity::new(params, false);
    let outcome = projected_descent(
        a,
        &riesz,
        &nl,
        u0,
        |w| project_sign_changing(a, params, &mass, w, cfg, Some((1.0, 1.0))),
        cfg,
    );
    let record = build_record(a, params, "w2", outcome.u.clone(), &outcome, cfg, &riesz, started)?;
    finish(record, outcome)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContinuationResult {
    /// Common scaling `s⁺(b) = s⁻(b)`.
    pub a: f64,
    /// Bubble weight with `a(w₁ − b u_ε)` in both part sets.
    pub b: f64,
    /// `(min, max)` of the nodal ratios `w₁ / u_ε`.
    pub ratio_bounds: (f64, f64),
    /// `(r, s⁺(r), s⁻(r))` over the scan.
    pub scan: Vec<(f64, f64, f64)>,
    /// `(r̄₂ − r, s⁺(r))` approaching the upper ratio bound.
    pub upper_approach: Vec<(f64, f64)>,
    pub u_init: Vec<f64>,
}

impl ContinuationResult {
    pub fn u_init(&self, a: &StiffnessOperator) -> Result<DiscreteFunction> {
        a.function(DVector::from_column_slice(&self.u_init))
    }
}

/// `t⁺` of the nodal part, `+∞` when the part vanishes.
fn part_t_plus(a: &StiffnessOperator, params: &ProblemParams, part: &DVector<f64>) -> Result<f64> {
    if part.iter().all(|c| *c == 0.0) {
        return Ok(f64::INFINITY);
    }
    Ok(Fiber::from_coeffs(a, part, params, false).roots()?.1)
}

/// Find `(a, b)` with `a(w₁ − b u_ε)⁺ ∈ N⁻` and `−a(w₁ − b u_ε)⁻ ∈ N⁻` by
/// scanning `r` between the extreme nodal ratios `w₁/u_ε` and bisecting on
/// the sign of `s⁺(r) − s⁻(r)`.
pub fn sign_changing_continuation(
    a: &StiffnessOperator,
    params: &ProblemParams,
    w1: &DiscreteFunction,
    bp: &BubbleParams,
) -> Result<ContinuationResult> {
    a.check(w1)?;
    if w1.coeffs().iter().any(|c| !(*c > 0.0)) {
        return Err(Error::Input("w1 must be positive at every interior node".into()));
    }
    let ue = bubble_interpolant(a.mesh(), bp)?;
    let (w, u) = (w1.coeffs(), ue.coeffs());
    let ratios: Vec<f64> = w.iter().zip(u.iter()).map(|(x, y)| x / y).collect();
    let r1 = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let r2 = ratios.iter().copied().fold(0.0, f64::max);
    let s_pm = |r: f64| -> Result<(f64, f64)> {
        let v = w - u * r;
        let (vp, vm) = nodal_parts(&v);
        Ok((part_t_plus(a, params, &vp)?, part_t_plus(a, params, &vm)?))
    };
    // logistic spacing resolves both ends of the ratio interval
    let m = 97;
    let mut scan = Vec::with_capacity(m);
    let mut bracket = None;
    let mut prev: Option<(f64, f64)> = None;
    for k in 0..m {
        let z = -24.0 + 48.0 * k as f64 / (m - 1) as f64;
        let r = r1 + (r2 - r1) / (1.0 + (-z).exp());
        let (sp, sm) = s_pm(r)?;
        scan.push((r, sp, sm));
        let diff = sp - sm;
        if let Some((rp, dp)) = prev {
            if bracket.is_none() && dp < 0.0 && diff >= 0.0 {
                bracket = Some((rp, r));
            }
        }
        prev = Some((r, diff));
    }
    let Some((mut lo, mut hi)) = bracket else {
        return Err(Error::Continuation {
            message: "s+ - s- does not change sign over the scan".into(),
            scan,
        });
    };
    for _ in 0..200 {
        if hi - lo <= 1e-14 * hi.abs() {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let (sp, sm) = s_pm(mid)?;
        if sp - sm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let b = 0.5 * (lo + hi);
    let (sp, sm) = s_pm(b)?;
    let a_scale = 0.5 * (sp + sm);
    let mut upper_approach = Vec::new();
    for k in 2..=8 {
        let gap = (r2 - r1) * 10f64.powi(-k);
        upper_approach.push((gap, s_pm(r2 - gap)?.0));
    }
    let u_init = (w - u * b) * a_scale;
    Ok(ContinuationResult {
        a: a_scale,
        b,
        ratio_bounds: (r1, r2),
        scan,
        upper_approach,
        u_init: u_init.iter().copied().collect(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MultiSolveReport {
    pub requested: usize,
    /// Distinct solutions up to sign, sorted by energy.
    pub records: Vec<SolutionRecord>,
    pub starts_tried: usize,
    /// Largest energy among the first `k` solutions found, for each `k`.
    pub running_max_energy: Vec<f64>,
    pub max_energy_grows: bool,
    /// `X₀` norms of the negative-energy solutions, ordered by energy.
    pub negative_branch_norms: Vec<f64>,
    /// Whether those norms decrease as the energy rises toward zero.
    pub negative_branch_shrinks: bool,
    pub warnings: Vec<String>,
}

struct Deflation<'a> {
    a: &'a StiffnessOperator,
    known: Vec<DVector<f64>>,
    power: f64,
    shift: f64,
}

impl Deflation<'_> {
    /// `(m(u), ∇m(u))` with `m = Π (‖u − u_i‖_A^{−p} + σ)`.
    fn eval(&self, u: &DVector<f64>) -> (f64, DVector<f64>) {
        let mut m = 1.0;
        let mut grad_log = DVector::zeros(u.len());
        for k in &self.known {
            let d = u - k;
            let ad = self.a.apply(&d);
            let n2 = d.dot(&ad).max(1e-300);
            let term = n2.powf(-0.5 * self.power);
            m *= term + self.shift;
            grad_log += ad * (-self.power * term / n2 / (term + self.shift));
        }
        (m, grad_log * m)
    }
}

/// Repeated deflated Newton solves of `I'(u) = 0` from scaled eigenvector
/// starts and seeded random combinations. The trivial solution and every
/// solution found (with its negative) are deflated.
pub fn multi_solution_search(
    a: &StiffnessOperator,
    params: &ProblemParams,
    count: usize,
    cfg: &SolverConfig,
) -> Result<MultiSolveReport> {
    params.validate()?;
    cfg.validate()?;
    let started = Instant::now();
    let riesz = Riesz::new(a)?;
    let mass = mass_matrix(a.mesh());
    let nl = Nonlinearity::new(params, false);
    let n = a.dim();
    let (_, vectors) = generalized_eigen(a.matrix(), &mass)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut starts: Vec<DVector<f64>> = Vec::new();
    for k in 0..n.min(count + 4) {
        let e = vectors.column(k).into_owned();
        let e = &e / a.inner_coeffs(&e, &e).sqrt();
        let fiber = Fiber::from_coeffs(a, &e, params, false);
        if let Ok((tm, tp)) = fiber.roots() {
            starts.push(&e * tp);
            if let Some(tm) = tm {
                starts.push(&e * tm);
            }
        }
    }
    for _ in 0..2 * count {
        let k = (count + 2).min(n);
        let mut v = DVector::zeros(n);
        for j in 0..k {
            v += vectors.column(j) * rng.random_range(-1.0..1.0);
        }
        if let Ok((_, tp)) = Fiber::from_coeffs(a, &v, params, false).roots() {
            starts.push(v * tp);
        }
    }
    let mut deflation = Deflation {
        a,
        known: vec![DVector::zeros(n)],
        power: cfg.deflation_power,
        shift: cfg.deflation_shift,
    };
    let mut found: Vec<SolutionRecord> = Vec::new();
    let mut warnings = Vec::new();
    let mut tried = 0;
    for start in &starts {
        if found.len() >= count {
            break;
        }
        tried += 1;
        let Some((u, iterations)) = deflated_newton(a, &riesz, &nl, &deflation, start.clone(), cfg) else {
            continue;
        };
        let norm_l2 = l2_norm(&mass, &u);
        if norm_l2 < cfg.part_tol {
            continue;
        }
        let duplicate = deflation.known.iter().skip(1).any(|k| {
            let scale = l2_norm(&mass, k).max(norm_l2);
            l2_norm(&mass, &(&u - k)) < cfg.dedup_tol * scale || l2_norm(&mass, &(&u + k)) < cfg.dedup_tol * scale
        });
        if duplicate {
            continue;
        }
        let outcome = Outcome { u: u.clone(), iterations, converged: true, trace: Vec::new(), stall: None };
        let label = format!("multi{}", found.len());
        let rec = build_record(a, params, &label, u.clone(), &outcome, cfg, &riesz, started)?;
        deflation.known.push(u.clone());
        deflation.known.push(-u);
        found.push(rec);
    }
    if found.len() < count {
        let msg = format!("found {} of {count} requested solutions", found.len());
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let mut running_max_energy = Vec::new();
    let mut best = f64::NEG_INFINITY;
    for r in &found {
        best = best.max(r.energy.total);
        running_max_energy.push(best);
    }
    let max_energy_grows = running_max_energy.len() >= 2 && running_max_energy.last() > running_max_energy.first();
    found.sort_by(|x, y| x.energy.total.total_cmp(&y.energy.total));
    let negative_branch_norms: Vec<f64> = found
        .iter()
        .filter(|r| r.energy.total < 0.0)
        .map(|r| (2.0 * r.energy.quadratic).sqrt())
        .collect();
    let negative_branch_shrinks =
        negative_branch_norms.len() >= 2 && negative_branch_norms.windows(2).all(|w| w[1] <= w[0]);
    Ok(MultiSolveReport {
        requested: count,
        records: found,
        starts_tried: tried,
        running_max_energy,
        max_energy_grows,
        negative_branch_norms,
        negative_branch_shrinks,
        warnings,
    })
}

/// Damped Newton on `m(u) I'(u) = 0`; returns the root and iteration count
/// once the undeflated residual meets the tolerance.
fn deflated_newton(
    a: &StiffnessOperator,
    riesz: &Riesz,
    nl: &Nonlinearity,
    deflation: &Deflation,
    mut u: DVector<f64>,
    cfg: &SolverConfig,
) -> Option<(DVector<f64>, usize)> {
    let mesh = a.mesh();
    let merit = |u: &DVector<f64>| {
        let (m, _) = deflation.eval(u);
        m * riesz.dual_norm(&nl.residual(a, u))
    };
    let max_iters = cfg.max_iters.min(200);
    for it in 0..max_iters {
        let r = nl.residual(a, &u);
        let res = riesz.dual_norm(&r);
        if res <= cfg.residual_tol {
            return Some((u, it));
        }
        let scale = u.amax().max(1e-300);
        let jac = a.matrix() - nl.derivative_mass(mesh, &u, 1e-10 * scale);
        let delta = jac.lu().solve(&(-&r))?;
        let (m, gm) = deflation.eval(&u);
        let denom = 1.0 - gm.dot(&delta) / m;
        let tau = if denom.abs() > 1e-12 { 1.0 / denom } else { 1.0 };
        let step = delta * tau;
        let current = merit(&u);
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-8 {
            let cand = &u + &step * t;
            if merit(&cand) < current * (1.0 - 1e-4 * t) || res < 1e-6 {
                u = cand;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            return None;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_stiffness;
    use crate::mesh::Mesh;

    fn setup(n: usize) -> (StiffnessOperator, ProblemParams) {
        let params = ProblemParams::fractional(0.2, 0.5, 2.0, 1.0, 1.0, -1.0, 1.0);
        let a = assemble_stiffness(&Mesh::uniform(-1.0, 1.0, n, 4).unwrap(), &params).unwrap();
        (a, params)
    }

    #[test]
    fn config_validation_names_field() {
        let cfg = SolverConfig { armijo_c: 0.0, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(m)) if m.contains("armijo")));
    }

    #[test]
    fn two_branches_give_distinct_positive_solutions() {
        let (a, params) = setup(40);
        let cfg = SolverConfig::default();
        let w0 = minimize_on_nehari(&a, &params, Branch::NPlus, None, &cfg).unwrap();
        let w1 = minimize_on_nehari(&a, &params, Branch::NMinus, None, &cfg).unwrap();
        assert!(w0.converged && w1.converged);
        assert!(w0.energy.total < 0.0 && w1.energy.total > 0.0);
        assert_eq!(w0.nehari_class, NehariClass::NPlus);
        assert_eq!(w1.nehari_class, NehariClass::NMinus);
        assert!(w0.coefficients.iter().chain(&w1.coefficients).all(|c| *c > 0.0));
    }

    #[test]
    fn projection_is_idempotent() {
        let (a, params) = setup(30);
        let w = ground_state(&a).unwrap().1;
        for branch in [Branch::NPlus, Branch::NMinus] {
            let once = project_branch(&a, &params, branch, &w).unwrap();
            let twice = project_branch(&a, &params, branch, &once).unwrap();
            assert!((&twice - &once).norm() <= 1e-12 * once.norm());
        }
    }
}
