//! Concentrating extremal profiles `v_ε`, their cutoffs `u_ε`, the numerical
//! Sobolev constant and log-log slope fits of the bubble asymptotics.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assembly::{lp_integral, StiffnessOperator};
use crate::error::{Error, Result};
use crate::fibering::Fiber;
use crate::mesh::{DiscreteFunction, Mesh};
use crate::params::{Interval, ProblemParams};
use crate::quadrature::{adaptive, GaussLegendre};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BubbleParams {
    pub eps: f64,
    pub k_amp: f64,
    /// Collar width: `ψ = 1` where the distance to the boundary exceeds `delta`.
    pub delta: f64,
    pub domain: Interval,
    /// `N − 2s`
    pub n_minus_2s: f64,
}

impl BubbleParams {
    /// Unit amplitude, collar `0.25 (b − a) / 2`, centered at the midpoint.
    pub fn new(params: &ProblemParams, eps: f64) -> Self {
        Self {
            eps,
            k_amp: 1.0,
            delta: 0.25 * params.domain.length() / 2.0,
            domain: params.domain,
            n_minus_2s: params.n() - 2.0 * params.s,
        }
    }

    pub fn with_eps(&self, eps: f64) -> Self {
        Self { eps, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Param(format!("eps>0 violated (eps = {})", self.eps)));
        }
        let half = self.domain.length() / 2.0;
        if !(self.delta > 0.0 && self.delta < half) {
            return Err(Error::Param(format!(
                "0<delta<(b-a)/2 violated (delta = {}, (b-a)/2 = {half})",
                self.delta
            )));
        }
        if !(self.n_minus_2s > 0.0) {
            return Err(Error::Param("N>2s violated".into()));
        }
        Ok(())
    }

    pub fn center(&self) -> f64 {
        self.domain.midpoint()
    }
}

/// `v_ε(x) = k ε^{(N−2s)/4} / (ε + |x − c|²)^{(N−2s)/2}`.
pub fn bubble(x: f64, bp: &BubbleParams) -> Result<f64> {
    if !(bp.eps > 0.0) {
        return Err(Error::Param(format!("eps>0 violated (eps = {})", bp.eps)));
    }
    Ok(raw_bubble(x, bp))
}

fn raw_bubble(x: f64, bp: &BubbleParams) -> f64 {
    let d = x - bp.center();
    let m = bp.n_minus_2s;
    bp.k_amp * bp.eps.powf(m / 4.0) / (bp.eps + d * d).powf(m / 2.0)
}

/// Quintic smoothstep of the distance to the boundary: `0` outside the
/// interval, `1` beyond the collar, strictly positive inside.
pub fn cutoff(x: f64, bp: &BubbleParams) -> f64 {
    let d = (x - bp.domain.a).min(bp.domain.b - x);
    if d <= 0.0 {
        0.0
    } else if d >= bp.delta {
        1.0
    } else {
        let t = d / bp.delta;
        t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    }
}

/// `u_ε = ψ v_ε`.
pub fn cut_bubble(x: f64, bp: &BubbleParams) -> f64 {
    cutoff(x, bp) * raw_bubble(x, bp)
}

/// Nodal interpolant of `u_ε`.
pub fn bubble_interpolant(mesh: &Arc<Mesh>, bp: &BubbleParams) -> Result<DiscreteFunction> {
    bp.validate()?;
    Ok(DiscreteFunction::interpolate(mesh.clone(), |x| cut_bubble(x, bp)))
}

/// `∫_Ω f(x) dx` for a function that is smooth except for a peak of width
/// `√ε` at the center and the collar junctions.
pub(crate) fn integrate_profile<F: FnMut(f64) -> f64>(bp: &BubbleParams, mut f: F) -> Result<f64> {
    let rule = GaussLegendre::new(10);
    let (a, b, c) = (bp.domain.a, bp.domain.b, bp.center());
    let w = bp.eps.sqrt();
    let mut cuts = vec![a, a + bp.delta, b - bp.delta, b, c];
    let mut r = w;
    while c - r > a + bp.delta {
        cuts.push(c - r);
        cuts.push(c + r);
        r *= 4.0;
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut total = 0.0;
    for seg in cuts.windows(2) {
        let guess = rule.integrate(seg[0], seg[1], &mut f).abs();
        total += adaptive(&rule, seg[0], seg[1], 1e-13 * guess.max(1e-300), 40, &mut f)?;
    }
    Ok(total)
}

/// Same as [`integrate_profile`] with additional breakpoints (mesh nodes of
/// a piecewise-linear factor).
pub(crate) fn integrate_profile_with<F: FnMut(f64) -> f64>(bp: &BubbleParams, extra: &[f64], mut f: F) -> Result<f64> {
    let rule = GaussLegendre::new(10);
    let (a, b, c) = (bp.domain.a, bp.domain.b, bp.center());
    let w = bp.eps.sqrt();
    let mut cuts = vec![a, a + bp.delta, b - bp.delta, b, c];
    cuts.extend(extra.iter().copied().filter(|x| *x > a && *x < b));
    let mut r = w;
    while c - r > a + bp.delta {
        cuts.push(c - r);
        cuts.push(c + r);
        r *= 4.0;
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut total = 0.0;
    for seg in cuts.windows(2) {
        let guess = rule.integrate(seg[0], seg[1], &mut f).abs();
        total += adaptive(&rule, seg[0], seg[1], 1e-12 * guess.max(1e-300), 40, &mut f)?;
    }
    Ok(total)
}

/// `(‖u_ε‖², ∫|u_ε|^{2*})` for the interpolant on the operator's mesh.
pub fn bubble_norms(a: &StiffnessOperator, bp: &BubbleParams) -> Result<(f64, f64)> {
    let u = bubble_interpolant(a.mesh(), bp)?;
    Ok((a.inner(&u, &u)?, lp_integral(&u, a.params().two_star())?))
}

/// Quotient data on one mesh level.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeshLevelEstimate {
    pub n_interior: usize,
    pub h: f64,
    pub eps: Vec<f64>,
    pub quotients: Vec<f64>,
    /// Extrapolated `ε → 0` limit on this mesh.
    pub limit: f64,
    /// Coefficients of `ε^{(N−2s)/2}` and `ε^{N/2}`.
    pub corrections: [f64; 2],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SobolevEstimate {
    /// Extrapolated limit on the finest mesh.
    pub value: f64,
    /// Largest of the mesh-to-mesh change and the spread between fits.
    pub error_bar: f64,
    /// Relative changes between successive mesh levels.
    pub relative_changes: Vec<f64>,
    pub levels: Vec<MeshLevelEstimate>,
}

/// Geometric grid of `per_decade` points per decade from `hi` down to `lo`.
pub fn eps_grid(hi: f64, lo: f64, per_decade: usize) -> Vec<f64> {
    let decades = (hi / lo).log10();
    let m = (decades * per_decade as f64).round() as usize;
    (0..=m)
        .map(|i| hi * 10f64.powf(-(i as f64) / per_decade as f64))
        .collect()
}

/// Least squares for `y ≈ X c` with few columns (via SVD).
pub(crate) fn least_squares(cols: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let m = y.len();
    let k = cols.len();
    if m < k {
        return Err(Error::Fit(format!("{m} points for {k} coefficients")));
    }
    let x = nalgebra::DMatrix::from_fn(m, k, |i, j| cols[j][i]);
    let rhs = nalgebra::DVector::from_column_slice(y);
    let svd = x.svd(true, true);
    let c = svd
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::Fit(e.to_string()))?;
    Ok(c.iter().copied().collect())
}

/// Extrapolate `Q(ε) = S + c₁ ε^{(N−2s)/2} + c₂ ε^{N/2}` from quotients of the
/// cut-off bubble on each mesh, using the `points` smallest admissible `ε`
/// (those with `ε ≥ (10h)²`).
pub fn estimate_s(
    params: &ProblemParams,
    meshes: &[Mesh],
    bp: &BubbleParams,
    eps: &[f64],
    points: usize,
) -> Result<SobolevEstimate> {
    if meshes.is_empty() {
        return Err(Error::Input("no meshes for the Sobolev estimate".into()));
    }
    let (n, s) = (params.n(), params.s);
    let (g1, g2) = ((n - 2.0 * s) / 2.0, n / 2.0);
    let mut levels = Vec::new();
    let mut spread: f64 = 0.0;
    for mesh in meshes {
        let h = mesh
            .uniform_spacing()
            .ok_or_else(|| Error::Mesh("uniform mesh required".into()))?;
        let a = crate::assembly::assemble_stiffness(mesh, params)?;
        let mut admissible: Vec<f64> = eps.iter().copied().filter(|&e| e >= (10.0 * h).powi(2)).collect();
        admissible.sort_by(|x, y| y.total_cmp(x));
        if admissible.len() < points.max(4) {
            return Err(Error::Extrapolation(format!(
                "only {} admissible eps values on mesh h = {h:.3e}",
                admissible.len()
            )));
        }
        let chosen = admissible[admissible.len() - points.max(4)..].to_vec();
        let mut quotients = Vec::with_capacity(chosen.len());
        for &e in &chosen {
            let (x, p) = bubble_norms(&a, &bp.with_eps(e))?;
            quotients.push(x / p.powf(2.0 / params.two_star()));
        }
        for w in quotients.windows(2) {
            if w[1] > w[0] * (1.0 + 1e-6) {
                return Err(Error::Extrapolation(format!(
                    "quotient increased as eps decreased ({:.8} -> {:.8})",
                    w[0], w[1]
                )));
            }
        }
        let fit = |pts: &[f64], qs: &[f64]| -> Result<Vec<f64>> {
            let cols = vec![
                vec![1.0; pts.len()],
                pts.iter().map(|e| e.powf(g1)).collect(),
                pts.iter().map(|e| e.powf(g2)).collect(),
            ];
            least_squares(&cols, qs)
        };
        let c = fit(&chosen, &quotients)?;
        let c_short = fit(&chosen[1..], &quotients[1..])?;
        spread = spread.max((c[0] - c_short[0]).abs());
        levels.push(MeshLevelEstimate {
            n_interior: mesh.n_interior(),
            h,
            eps: chosen,
            quotients,
            limit: c[0],
            corrections: [c[1], c[2]],
        });
    }
    let value = levels.last().unwrap().limit;
    if !(value > 0.0) {
        return Err(Error::Extrapolation(format!("nonpositive limit {value}")));
    }
    let relative_changes: Vec<f64> = levels
        .windows(2)
        .map(|w| (w[1].limit - w[0].limit).abs() / w[1].limit)
        .collect();
    let mesh_change = levels
        .windows(2)
        .last()
        .map(|w| (w[1].limit - w[0].limit).abs())
        .unwrap_or(0.0);
    Ok(SobolevEstimate { value, error_bar: mesh_change.max(spread), relative_changes, levels })
}

/// The four pairing integrals of a positive function `w` with the exact
/// cut-off bubble.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PairingIntegrals {
    /// `∫ w^{2*−1} u_ε`
    pub a1: f64,
    /// `∫ w^q u_ε`
    pub a2: f64,
    /// `∫ w u_ε^q`
    pub a3: f64,
    /// `∫ w u_ε^{2*−1}`
    pub a4: f64,
}

/// Pairings of `w1` (piecewise linear, positive inside) with the exact profile
/// `u_ε` (not its interpolant).
pub fn pairing_integrals(w1: &DiscreteFunction, params: &ProblemParams, bp: &BubbleParams) -> Result<PairingIntegrals> {
    bp.validate()?;
    if w1.coeffs().iter().any(|&c| !(c > 0.0)) {
        return Err(Error::Input("w1 must be positive at every interior node".into()));
    }
    let (q, ts) = (params.q, params.two_star());
    let nodes = w1.mesh().nodes().to_vec();
    let pair = |f: &dyn Fn(f64, f64) -> f64| {
        integrate_profile_with(bp, &nodes, |x| {
            let w = w1.eval(x);
            let u = cut_bubble(x, bp);
            if w <= 0.0 || u <= 0.0 {
                0.0
            } else {
                f(w, u)
            }
        })
    };
    Ok(PairingIntegrals {
        a1: pair(&|w, u| w.powf(ts - 1.0) * u)?,
        a2: pair(&|w, u| w.powf(q) * u)?,
        a3: pair(&|w, u| w * u.powf(q))?,
        a4: pair(&|w, u| w * u.powf(ts - 1.0))?,
    })
}

/// `∫ |u_ε|^{r}` for the exact profile.
pub fn bubble_lp_integral(bp: &BubbleParams, r: f64) -> Result<f64> {
    bp.validate()?;
    integrate_profile(bp, |x| cut_bubble(x, bp).powf(r))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SlopeFit {
    pub eps_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub fitted_slope: f64,
    pub slope_stderr: f64,
    pub log_factor_detected: bool,
    /// Residuals of the selected fit in log space.
    pub residuals: Vec<f64>,
}

impl SlopeFit {
    pub const CSV_HEADER: &'static str = "eps,value,residual";

    pub fn csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for ((e, v), r) in self.eps_grid.iter().zip(&self.values).zip(&self.residuals) {
            out.push_str(&format!("{e:.16e},{v:.16e},{r:.16e}\n"));
        }
        out
    }
}

fn check_grid(eps: &[f64]) -> Result<()> {
    if eps.len() < 4 {
        return Err(Error::Fit(format!("{} points; at least 4 needed", eps.len())));
    }
    if eps.windows(2).any(|w| !(w[1] < w[0])) || eps.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Fit("eps grid must be positive and strictly decreasing".into()));
    }
    if eps[0] / eps[eps.len() - 1] < 100.0 * (1.0 - 1e-9) {
        return Err(Error::Fit("eps grid spans less than two decades".into()));
    }
    Ok(())
}

/// Ordinary least squares of `log(values / factor)` against `log ε`:
/// `(slope, stderr, residuals)`.
fn ols_slope(eps: &[f64], values: &[f64], factor: impl Fn(f64) -> f64) -> Result<(f64, f64, Vec<f64>)> {
    if values.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Fit("values must be positive for a log-log fit".into()));
    }
    let x: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let y: Vec<f64> = eps.iter().zip(values).map(|(e, v)| (v / factor(*e)).ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let res: Vec<f64> = x.iter().zip(&y).map(|(a, b)| b - icpt - slope * a).collect();
    let rss: f64 = res.iter().map(|r| r * r).sum();
    let stderr = (rss / (n - 2.0) / sxx).sqrt();
    Ok((slope, stderr, res))
}

/// Log-log slope of `values` against `eps`.
pub fn fit_slope(eps: &[f64], values: &[f64]) -> Result<SlopeFit> {
    check_grid(eps)?;
    let (slope, stderr, residuals) = ols_slope(eps, values, |_| 1.0)?;
    Ok(SlopeFit {
        eps_grid: eps.to_vec(),
        values: values.to_vec(),
        fitted_slope: slope,
        slope_stderr: stderr,
        log_factor_detected: false,
        residuals,
    })
}

/// Slope fit that also tries `value ≈ C ε^γ |ln ε|` and keeps whichever model
/// has the smaller residual sum of squares (both have two free parameters).
pub fn fit_slope_with_log(eps: &[f64], values: &[f64]) -> Result<SlopeFit> {
    check_grid(eps)?;
    let plain = ols_slope(eps, values, |_| 1.0)?;
    let logged = ols_slope(eps, values, |e| e.ln().abs())?;
    let rss = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
    let use_log = rss(&logged.2) < rss(&plain.2);
    let (slope, stderr, residuals) = if use_log { logged } else { plain };
    Ok(SlopeFit {
        eps_grid: eps.to_vec(),
        values: values.to_vec(),
        fitted_slope: slope,
        slope_stderr: stderr,
        log_factor_detected: use_log,
        residuals,
    })
}

/// Slope of `∫|u_ε|^{q+1}` over `eps` (log regressor tried as well).
pub fn bubble_lq_regime(bp: &BubbleParams, eps: &[f64], q: f64) -> Result<SlopeFit> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Param(format!("0<q<1 violated (q = {q})")));
    }
    check_grid(eps)?;
    let values = eps
        .iter()
        .map(|&e| bubble_lp_integral(&bp.with_eps(e), q + 1.0))
        .collect::<Result<Vec<_>>>()?;
    fit_slope_with_log(eps, &values)
}

/// `sup_{t ≥ 0} I(t u_ε)` for the interpolated bubble (critical exponent).
pub fn sup_fiber_energy_bubble(a: &StiffnessOperator, bp: &BubbleParams, params: &ProblemParams) -> Result<f64> {
    if !params.is_critical() {
        return Err(Error::Param("sup over the bubble fiber needs p = 2*-1".into()));
    }
    let u = bubble_interpolant(a.mesh(), bp)?;
    let fiber = Fiber::new(a, &u, params)?;
    let (_, t_plus) = fiber.roots()?;
    Ok(fiber.energy_at(t_plus))
}
