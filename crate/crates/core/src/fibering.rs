//! Fibering maps `t -> I(tu)`, the Nehari decomposition and the closed-form
//! threshold constants.
//!
//! Along a ray, `d/dt I(tu) = t^q (φ(t) − μ Q)` with
//! `φ(t) = t^{1−q} X − λ t^{p−q} P`, `X = ‖u‖²`, `Q = ∫|u|^{q+1}`,
//! `P = ∫|u|^{p+1}`. With `λ = 1, p = 2*−1` these are the critical-case
//! expressions.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::assembly::{lp_integral, StiffnessOperator};
use crate::error::{Error, Result};
use crate::functional::Nonlinearity;
use crate::mesh::DiscreteFunction;
use crate::params::ProblemParams;

pub const DEFAULT_NEHARI_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NehariClass {
    NotOnN,
    NPlus,
    NMinus,
    NZeroWithinTol,
}

/// Norm data of a single function for the fibering polynomial.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FiberNorms {
    /// `‖u‖²`
    pub x0_sq: f64,
    /// `λ ∫|u|^{p+1}`
    pub lpp1_pow: f64,
}

/// `φ(t) = t^{1−q} X − t^{p−q} P`.
pub fn phi(t: f64, norms: &FiberNorms, q: f64, p: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Input(format!("fibering parameter t = {t} < 0")));
    }
    Ok(t.powf(1.0 - q) * norms.x0_sq - t.powf(p - q) * norms.lpp1_pow)
}

pub fn phi_prime(t: f64, norms: &FiberNorms, q: f64, p: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Input(format!("fibering parameter t = {t} < 0")));
    }
    Ok((1.0 - q) * t.powf(-q) * norms.x0_sq - (p - q) * t.powf(p - q - 1.0) * norms.lpp1_pow)
}

/// The one-dimensional restriction of the energy to the ray through `u`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Fiber {
    pub x0_sq: f64,
    /// `∫|u|^{q+1}`
    pub lq: f64,
    /// `∫|u|^{p+1}`
    pub lp: f64,
    pub q: f64,
    pub p: f64,
    pub mu: f64,
    pub lambda: f64,
}

impl Fiber {
    pub fn new(a: &StiffnessOperator, u: &DiscreteFunction, params: &ProblemParams) -> Result<Self> {
        a.check(u)?;
        if u.is_zero() {
            return Err(Error::ZeroInput);
        }
        Ok(Self::from_coeffs(a, u.coeffs(), params, false))
    }

    /// Fiber of `J` (nonlinear terms on `u⁺`) when `positive` is set.
    pub(crate) fn from_coeffs(a: &StiffnessOperator, u: &DVector<f64>, params: &ProblemParams, positive: bool) -> Self {
        let (lq, lp) = Nonlinearity::new(params, positive).integrals(a.mesh(), u);
        Self {
            x0_sq: a.inner_coeffs(u, u),
            lq,
            lp,
            q: params.q,
            p: params.p,
            mu: params.mu,
            lambda: params.lambda,
        }
    }

    pub fn norms(&self) -> FiberNorms {
        FiberNorms { x0_sq: self.x0_sq, lpp1_pow: self.lambda * self.lp }
    }

    pub fn phi(&self, t: f64) -> f64 {
        phi(t, &self.norms(), self.q, self.p).unwrap_or(f64::NAN)
    }

    pub fn phi_prime(&self, t: f64) -> f64 {
        phi_prime(t, &self.norms(), self.q, self.p).unwrap_or(f64::NAN)
    }

    /// `μ ∫|u|^{q+1}`
    pub fn mu_rhs(&self) -> f64 {
        self.mu * self.lq
    }

    /// Maximizer of `φ`.
    pub fn t_zero(&self) -> Result<f64> {
        let p_term = self.lambda * self.lp;
        if !(p_term > 0.0) || !(self.x0_sq > 0.0) {
            return Err(Error::Param(
                "fibering map needs lambda>0 and a nonzero function".into(),
            ));
        }
        Ok(((1.0 - self.q) * self.x0_sq / ((self.p - self.q) * p_term)).powf(1.0 / (self.p - 1.0)))
    }

    pub fn energy_at(&self, t: f64) -> f64 {
        0.5 * t * t * self.x0_sq
            - self.mu / (self.q + 1.0) * t.powf(self.q + 1.0) * self.lq
            - self.lambda / (self.p + 1.0) * t.powf(self.p + 1.0) * self.lp
    }

    /// `<I'(tu), tu>`.
    pub fn nehari_residual_at(&self, t: f64) -> f64 {
        t * t * self.x0_sq - self.mu * t.powf(self.q + 1.0) * self.lq - self.lambda * t.powf(self.p + 1.0) * self.lp
    }

    /// `(1−q)‖tu‖² − (p−q) λ ∫|tu|^{p+1}`.
    pub fn second_order_at(&self, t: f64) -> f64 {
        (1.0 - self.q) * t * t * self.x0_sq - (self.p - self.q) * self.lambda * t.powf(self.p + 1.0) * self.lp
    }

    pub fn classify_at(&self, t: f64, tol: f64) -> NehariClass {
        let scale = t * t * self.x0_sq;
        if self.nehari_residual_at(t).abs() > tol * scale {
            return NehariClass::NotOnN;
        }
        let second = self.second_order_at(t);
        if second.abs() <= tol * scale {
            NehariClass::NZeroWithinTol
        } else if second > 0.0 {
            NehariClass::NPlus
        } else {
            NehariClass::NMinus
        }
    }

    /// `(t⁻, t⁺)`: roots of `φ(t) = μQ` on either side of `t₀`. `t⁻` is absent
    /// for `μ ≤ 0`.
    pub fn roots(&self) -> Result<(Option<f64>, f64)> {
        let t0 = self.t_zero()?;
        let rhs = self.mu_rhs();
        let phi_max = self.phi(t0);
        if rhs >= phi_max {
            return Err(Error::NoRoots { mu_term: rhs, phi_max });
        }
        let f = |t: f64| self.phi(t) - rhs;
        let df = |t: f64| self.phi_prime(t);
        let t_minus = if rhs > 0.0 {
            // φ(t) <= t^{1−q} X puts the root above this point
            let lo = 0.5 * (rhs / self.x0_sq).powf(1.0 / (1.0 - self.q));
            Some(bracketed_root(f, df, lo.min(0.5 * t0), t0)?)
        } else {
            None
        };
        // φ vanishes at t₀ ((p−q)/(1−q))^{1/(p−1)} and decreases beyond
        let mut hi = (self.x0_sq / (self.lambda * self.lp)).powf(1.0 / (self.p - 1.0));
        if rhs == 0.0 {
            return Ok((t_minus, hi));
        }
        let mut guard = 0;
        while f(hi) >= 0.0 {
            hi *= 2.0;
            guard += 1;
            if guard > 200 {
                return Err(Error::Root("no upper bracket for t+".into()));
            }
        }
        let t_plus = bracketed_root(f, df, t0, hi)?;
        Ok((t_minus, t_plus))
    }
}

/// Root of a monotone function with `f(lo)` and `f(hi)` of opposite signs:
/// geometric bisection to relative bracket width `1e-12`, then two guarded
/// Newton steps.
fn bracketed_root<F: Fn(f64) -> f64, D: Fn(f64) -> f64>(f: F, df: D, lo: f64, hi: f64) -> Result<f64> {
    let (mut lo, mut hi) = (lo, hi);
    let (flo, fhi) = (f(lo), f(hi));
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() || !flo.is_finite() || !fhi.is_finite() {
        return Err(Error::Root(format!(
            "root not bracketed on [{lo:.6e}, {hi:.6e}] (f = {flo:.3e}, {fhi:.3e})"
        )));
    }
    let rising = flo < 0.0;
    for _ in 0..400 {
        if hi / lo - 1.0 <= 1e-12 {
            break;
        }
        let mid = (lo * hi).sqrt();
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if (fm < 0.0) == rising {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if hi / lo - 1.0 > 1e-12 {
        return Err(Error::Root(format!("bisection did not reach tolerance on [{lo:.6e}, {hi:.6e}]")));
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..2 {
        let d = df(t);
        if d == 0.0 || !d.is_finite() {
            break;
        }
        let next = t - f(t) / d;
        let span = hi - lo;
        if next >= lo - span && next <= hi + span {
            t = next;
        }
    }
    Ok(t)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FiberingReport {
    pub t0: f64,
    pub phi_t0: f64,
    pub mu_rhs: f64,
    pub t_minus: Option<f64>,
    pub t_plus: Option<f64>,
    /// Nehari class of `u` itself (`t = 1`).
    pub classification: NehariClass,
    pub nehari_residual: f64,
    pub second_order: f64,
}

/// `t₀(u)`.
pub fn t_zero(u: &DiscreteFunction, a: &StiffnessOperator, params: &ProblemParams) -> Result<f64> {
    Fiber::new(a, u, params)?.t_zero()
}

/// Fibering analysis of `u`. Fails with `NoRoots` when `μQ ≥ φ(t₀)`; use
/// [`fibering_report`] to get the report regardless.
pub fn fibering_roots(u: &DiscreteFunction, a: &StiffnessOperator, params: &ProblemParams) -> Result<FiberingReport> {
    let fiber = Fiber::new(a, u, params)?;
    let (t_minus, t_plus) = fiber.roots()?;
    let mut report = base_report(&fiber)?;
    report.t_minus = t_minus;
    report.t_plus = Some(t_plus);
    Ok(report)
}

pub fn fibering_report(u: &DiscreteFunction, a: &StiffnessOperator, params: &ProblemParams) -> Result<FiberingReport> {
    match fibering_roots(u, a, params) {
        Err(Error::NoRoots { .. }) => base_report(&Fiber::new(a, u, params)?),
        other => other,
    }
}

fn base_report(fiber: &Fiber) -> Result<FiberingReport> {
    let t0 = fiber.t_zero()?;
    Ok(FiberingReport {
        t0,
        phi_t0: fiber.phi(t0),
        mu_rhs: fiber.mu_rhs(),
        t_minus: None,
        t_plus: None,
        classification: fiber.classify_at(1.0, DEFAULT_NEHARI_TOL),
        nehari_residual: fiber.nehari_residual_at(1.0),
        second_order: fiber.second_order_at(1.0),
    })
}

pub fn classify_nehari(u: &DiscreteFunction, a: &StiffnessOperator, params: &ProblemParams, tol: f64) -> Result<NehariClass> {
    Ok(Fiber::new(a, u, params)?.classify_at(1.0, tol))
}

/// Directional derivative along `v` of the rescaling `w -> g(w)` that keeps
/// `g(w)(u + w)` on the Nehari manifold, at `w = 0`:
/// `−<F_w(1,0), v> / F_t(1,0)` with
/// `F(t, w) = t^{1−q}‖u+w‖² − λ t^{p−q}∫|u+w|^{p+1} − μ∫|u+w|^{q+1}`.
pub fn nehari_projection_derivative(
    u: &DiscreteFunction,
    a: &StiffnessOperator,
    params: &ProblemParams,
    v: &DiscreteFunction,
) -> Result<f64> {
    a.check(v)?;
    let fiber = Fiber::new(a, u, params)?;
    let f_t = fiber.second_order_at(1.0);
    if f_t.abs() <= DEFAULT_NEHARI_TOL * fiber.x0_sq {
        return Err(Error::NearDegenerate(f_t / fiber.x0_sq));
    }
    let weighted = Nonlinearity {
        q: params.q,
        p: params.p,
        mu: (params.q + 1.0) * params.mu,
        lambda: (params.p + 1.0) * params.lambda,
        positive: false,
    };
    let load = weighted.load(a.mesh(), u.coeffs());
    let f_w = 2.0 * a.inner(u, v)? - load.dot(v.coeffs());
    Ok(-f_w / f_t)
}

/// `ψ(u) = k₀ (‖u‖^{2(2*−1)} / ∫|u|^{2*})^{1/(2*−2)} − μ ∫|u|^{q+1}`.
pub fn psi_mu_diagnostic(u: &DiscreteFunction, a: &StiffnessOperator, params: &ProblemParams) -> Result<f64> {
    a.check(u)?;
    if u.is_zero() {
        return Err(Error::ZeroInput);
    }
    let (n, s, q) = (params.n(), params.s, params.q);
    let ts = params.two_star();
    let k0 = ((1.0 - q) / (ts - q - 1.0)).powf((n + 2.0 * s) / (4.0 * s)) * ((ts - 2.0) / (1.0 - q));
    let x = a.inner(u, u)?;
    let crit = lp_integral(u, ts)?;
    let lq = lp_integral(u, q + 1.0)?;
    Ok(k0 * (x.powf(ts - 1.0) / crit).powf(1.0 / (ts - 2.0)) - params.mu * lq)
}

/// Lower bound for `φ(t₀)` in the critical case in terms of `‖u‖` and the
/// Sobolev constant `S`.
pub fn phi_t0_lower_bound(params: &ProblemParams, s_estimate: f64, x0_norm: f64) -> f64 {
    let (n, s, q) = (params.n(), params.s, params.q);
    let ts = params.two_star();
    ((1.0 - q) / (ts - 1.0 - q)).powf((1.0 - q) * (n - 2.0 * s) / (4.0 * s))
        * (ts - 2.0)
        / (ts - 1.0 - q)
        * s_estimate.powf(n * (1.0 - q) / (4.0 * s))
        * x0_norm.powf(q + 1.0)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub tilde_mu: f64,
    pub k_const: f64,
    pub m_const: f64,
    /// `|k − M| / M`
    pub k_m_discrepancy: f64,
    pub s_estimate: f64,
    pub omega_measure: f64,
    /// Minimizer `t'` of `g(t) = (s/N) t^{2*} − aμ t^{q+1}`.
    pub g_argmin: f64,
    pub g_min: f64,
    /// `(s/N) S^{N/(2s)}`
    pub sobolev_level: f64,
    /// `(s/N) S^{N/(2s)} − k μ^{2*/(2*−q−1)}`
    pub compactness_ceiling: f64,
}

/// `a = (1−q)/(2(1+q)) |Ω|^{(2*−q−1)/2*}`.
pub fn g_coefficient(params: &ProblemParams) -> f64 {
    let (q, ts) = (params.q, params.two_star());
    (1.0 - q) / (2.0 * (1.0 + q)) * params.omega_measure().powf((ts - q - 1.0) / ts)
}

/// `g(t) = (s/N) t^{2*} − aμ t^{q+1}`.
pub fn g_function(params: &ProblemParams, t: f64) -> f64 {
    let (n, s, q) = (params.n(), params.s, params.q);
    s / n * t.powf(params.two_star()) - g_coefficient(params) * params.mu * t.powf(q + 1.0)
}

/// Threshold constants for the critical problem; exponents use `2*`
/// regardless of `params.p`.
pub fn thresholds(params: &ProblemParams, s_estimate: f64) -> Result<ThresholdSet> {
    params.validate()?;
    if !(s_estimate > 0.0 && s_estimate.is_finite()) {
        return Err(Error::Param(format!("Sobolev constant estimate {s_estimate} must be positive")));
    }
    if !(params.mu > 0.0) {
        return Err(Error::Param("mu>0 required for the threshold constants".into()));
    }
    let (n, s, q, mu) = (params.n(), params.s, params.q, params.mu);
    let ts = params.two_star();
    let omega = params.omega_measure();
    let tilde_mu = ((1.0 - q) / (ts - q - 1.0)).powf((1.0 - q) / (ts - 2.0)) * (ts - 2.0) / (ts - q - 1.0)
        * omega.powf((q + 1.0 - ts) / ts)
        * s_estimate.powf(n * (1.0 - q) / (4.0 * s) + (q + 1.0) / 2.0);
    let a = g_coefficient(params);
    let g_argmin = ((q + 1.0) * a * mu * n / (ts * s)).powf(1.0 / (ts - q - 1.0));
    let g_min = g_function(params, g_argmin);
    let k_const = -mu.powf(-ts / (ts - q - 1.0)) * g_min;
    let m_const = (2.0 * n - (n - 2.0 * s) * (q + 1.0)) * (1.0 - q) / (4.0 * (q + 1.0))
        * ((1.0 - q) * (n - 2.0 * s) / (4.0 * s)).powf((q + 1.0) / (ts - q - 1.0))
        * omega;
    let sobolev_level = s / n * s_estimate.powf(n / (2.0 * s));
    Ok(ThresholdSet {
        tilde_mu,
        k_const,
        m_const,
        k_m_discrepancy: (k_const - m_const).abs() / m_const,
        s_estimate,
        omega_measure: omega,
        g_argmin,
        g_min,
        sobolev_level,
        compactness_ceiling: sobolev_level - k_const * mu.powf(ts / (ts - q - 1.0)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_fiber(q: f64, p: f64, mu: f64) -> Fiber {
        Fiber { x0_sq: 1.0, lq: 1.0, lp: 1.0, q, p, mu, lambda: 1.0 }
    }

    #[test]
    fn phi_vanishes_at_origin() {
        let n = FiberNorms { x0_sq: 2.0, lpp1_pow: 3.0 };
        assert_eq!(phi(0.0, &n, 0.5, 3.0).unwrap(), 0.0);
        assert!(phi(-1.0, &n, 0.5, 3.0).is_err());
    }

    #[test]
    fn t_zero_unit_norms() {
        let f = unit_fiber(0.5, 3.0, 0.1);
        assert!((f.t_zero().unwrap() - 0.2f64.sqrt()).abs() < 1e-15);
        assert!(f.phi_prime(f.t_zero().unwrap()).abs() < 1e-14);
    }

    #[test]
    fn roots_bracket_t_zero_and_classify() {
        let f = unit_fiber(0.5, 3.0, 0.1);
        let t0 = f.t_zero().unwrap();
        let (tm, tp) = f.roots().unwrap();
        let tm = tm.unwrap();
        assert!(tm < t0 && t0 < tp);
        assert_eq!(f.classify_at(tm, 1e-8), NehariClass::NPlus);
        assert_eq!(f.classify_at(tp, 1e-8), NehariClass::NMinus);
        assert!(f.phi_prime(tm) > 0.0 && f.phi_prime(tp) < 0.0);
        assert_eq!(f.classify_at(1.0, 1e-8), NehariClass::NotOnN);
    }

    #[test]
    fn no_roots_when_mu_term_exceeds_max() {
        let f = unit_fiber(0.5, 3.0, 10.0);
        assert!(matches!(f.roots(), Err(Error::NoRoots { .. })));
    }

    #[test]
    fn zero_mu_gives_explicit_upper_root() {
        let f = Fiber { x0_sq: 2.0, lq: 1.0, lp: 0.5, q: 0.5, p: 2.0, mu: 0.0, lambda: 1.0 };
        let (tm, tp) = f.roots().unwrap();
        assert!(tm.is_none());
        assert!((tp - 4.0).abs() < 1e-14);
    }

    #[test]
    fn tiny_mu_lower_root_is_relatively_accurate() {
        let f = unit_fiber(0.5, 3.0, 1e-6);
        let tm = f.roots().unwrap().0.unwrap();
        assert!((f.phi(tm) - f.mu_rhs()).abs() < 1e-12 * f.mu_rhs());
    }

    #[test]
    fn threshold_constants_positive() {
        let p = ProblemParams::critical(0.2, 0.5, 0.01, -1.0, 1.0);
        let t = thresholds(&p, 3.0).unwrap();
        assert!(t.tilde_mu > 0.0 && t.k_const > 0.0 && t.m_const > 0.0);
        assert!(t.g_min < 0.0);
        let t2 = thresholds(&p.with_mu(0.5), 3.0).unwrap();
        assert!((t.k_const - t2.k_const).abs() <= 1e-12 * t.k_const);
    }
}
