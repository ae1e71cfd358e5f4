//! The concave-convex energy, its positive-part variant, the weak-form
//! residual and the positive/negative part decomposition.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assembly::StiffnessOperator;
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::mesh::{DiscreteFunction, Mesh};
use crate::params::ProblemParams;
use crate::quadrature::{dyadic_to_zero, GaussLegendre};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    /// `½‖u‖²`
    pub quadratic: f64,
    /// `μ/(q+1) ∫|u|^{q+1}`
    pub concave: f64,
    /// `λ/(p+1) ∫|u|^{p+1}`
    pub convex: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    fn new(quadratic: f64, concave: f64, convex: f64) -> Self {
        Self { quadratic, concave, convex, total: quadratic - concave - convex }
    }

    pub const CSV_HEADER: &'static str = "quadratic,concave,convex,total";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.16e},{:.16e},{:.16e},{:.16e}",
            self.quadratic, self.concave, self.convex, self.total
        )
    }
}

/// Power nonlinearities of the problem, optionally acting on `u⁺` only.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Nonlinearity {
    pub q: f64,
    pub p: f64,
    pub mu: f64,
    pub lambda: f64,
    pub positive: bool,
}

impl Nonlinearity {
    pub fn new(params: &ProblemParams, positive: bool) -> Self {
        Self { q: params.q, p: params.p, mu: params.mu, lambda: params.lambda, positive }
    }

    fn fold(&self, u: f64) -> f64 {
        if self.positive {
            u.max(0.0)
        } else {
            u
        }
    }

    /// `(∫|u|^{q+1}, ∫|u|^{p+1})` (with `u⁺` in the positive variant).
    pub fn integrals(&self, mesh: &Mesh, u: &DVector<f64>) -> (f64, f64) {
        let (mut lq, mut lp) = (0.0, 0.0);
        mesh.for_each_qp(u, |_, _, _, w, v| {
            let a = self.fold(v).abs();
            if a > 0.0 {
                lq += w * a.powf(self.q + 1.0);
                lp += w * a.powf(self.p + 1.0);
            }
        });
        (lq, lp)
    }

    /// Load vector `∫ (μ|u|^{q-1}u + λ|u|^{p-1}u) φ_i`.
    pub fn load(&self, mesh: &Mesh, u: &DVector<f64>) -> DVector<f64> {
        let n = mesh.n_interior();
        let mut out = DVector::zeros(n);
        mesh.for_each_qp(u, |e, xi, _, w, v| {
            let v = self.fold(v);
            if v == 0.0 {
                return;
            }
            let a = v.abs();
            let f = v.signum() * (self.mu * a.powf(self.q) + self.lambda * a.powf(self.p));
            // element e joins full nodes e, e+1 = interior e-1, e
            if e >= 1 {
                out[e - 1] += w * f * (1.0 - xi);
            }
            if e < n {
                out[e] += w * f * xi;
            }
        });
        out
    }

    /// Tridiagonal `∫ f'(u) φ_i φ_j` with `f'(v) = μq|v|^{q−1} + λp|v|^{p−1}`;
    /// `|v|` is floored at `floor` where the concave term is singular.
    pub fn derivative_mass(&self, mesh: &Mesh, u: &DVector<f64>, floor: f64) -> DMatrix<f64> {
        let n = mesh.n_interior();
        let mut out = DMatrix::zeros(n, n);
        mesh.for_each_qp(u, |e, xi, _, w, v| {
            if self.positive && v <= 0.0 {
                return;
            }
            let a = v.abs().max(floor);
            let d = w * (self.mu * self.q * a.powf(self.q - 1.0) + self.lambda * self.p * a.powf(self.p - 1.0));
            let phis = [(e.wrapping_sub(1), 1.0 - xi), (e, xi)];
            for &(i, pi) in &phis {
                if i >= n {
                    continue;
                }
                for &(j, pj) in &phis {
                    if j < n {
                        out[(i, j)] += d * pi * pj;
                    }
                }
            }
        });
        out
    }

    pub fn breakdown(&self, quad_form: f64, lq: f64, lp: f64) -> EnergyBreakdown {
        EnergyBreakdown::new(
            0.5 * quad_form,
            self.mu / (self.q + 1.0) * lq,
            self.lambda / (self.p + 1.0) * lp,
        )
    }

    pub fn energy(&self, a: &StiffnessOperator, u: &DVector<f64>) -> EnergyBreakdown {
        let (lq, lp) = self.integrals(a.mesh(), u);
        self.breakdown(a.inner_coeffs(u, u), lq, lp)
    }

    pub fn residual(&self, a: &StiffnessOperator, u: &DVector<f64>) -> DVector<f64> {
        a.apply(u) - self.load(a.mesh(), u)
    }
}

/// `I(u) = ½‖u‖² − μ/(q+1)∫|u|^{q+1} − λ/(p+1)∫|u|^{p+1}`.
pub fn energy(a: &StiffnessOperator, u: &DiscreteFunction, params: &ProblemParams) -> Result<EnergyBreakdown> {
    a.check(u)?;
    Ok(Nonlinearity::new(params, false).energy(a, u.coeffs()))
}

/// `J(u)`: the energy with `u⁺` in both nonlinear terms.
pub fn energy_positive_part(a: &StiffnessOperator, u: &DiscreteFunction, params: &ProblemParams) -> Result<f64> {
    Ok(energy_positive_breakdown(a, u, params)?.total)
}

pub fn energy_positive_breakdown(
    a: &StiffnessOperator,
    u: &DiscreteFunction,
    params: &ProblemParams,
) -> Result<EnergyBreakdown> {
    a.check(u)?;
    Ok(Nonlinearity::new(params, true).energy(a, u.coeffs()))
}

/// Weak-form residual covector `r_i = <I'(u), φ_i>`.
pub fn gradient(a: &StiffnessOperator, u: &DiscreteFunction, params: &ProblemParams) -> Result<DiscreteFunction> {
    a.check(u)?;
    Ok(u.with_coeffs(Nonlinearity::new(params, false).residual(a, u.coeffs())))
}

/// Residual covector of `J`.
pub fn gradient_positive_part(
    a: &StiffnessOperator,
    u: &DiscreteFunction,
    params: &ProblemParams,
) -> Result<DiscreteFunction> {
    a.check(u)?;
    Ok(u.with_coeffs(Nonlinearity::new(params, true).residual(a, u.coeffs())))
}

/// Nodal split `u = u⁺ − u⁻` with `u⁺ = max(u, 0)`, `u⁻ = max(−u, 0)`.
pub fn split_parts(u: &DiscreteFunction) -> (DiscreteFunction, DiscreteFunction) {
    let plus = u.coeffs().map(|c| c.max(0.0));
    let minus = u.coeffs().map(|c| (-c).max(0.0));
    (u.with_coeffs(plus), u.with_coeffs(minus))
}

/// `(∫(u_h⁺)^r, ∫(u_h⁻)^r)` with the parts taken pointwise at the quadrature
/// nodes; the two always add up to `∫|u_h|^r`.
pub fn split_lp_integrals(u: &DiscreteFunction, r: f64) -> Result<(f64, f64)> {
    if !(r >= 1.0) {
        return Err(Error::Input(format!("Lp exponent r = {r} < 1")));
    }
    let (mut plus, mut minus) = (0.0, 0.0);
    u.mesh().for_each_qp(u.coeffs(), |_, _, _, w, v| {
        if v > 0.0 {
            plus += w * v.powf(r);
        } else if v < 0.0 {
            minus += w * (-v).powf(r);
        }
    });
    Ok((plus, minus))
}

/// Cross term `‖u‖² − ‖u⁺‖² − ‖u⁻‖²` for `u = u_plus − u_minus`, with the
/// parts taken pointwise on the piecewise-linear interpolant of `u`:
/// `2∬ (u⁺(x)u⁻(y) + u⁺(y)u⁻(x)) K(x−y) dx dy`.
///
/// Evaluated from the double integral in the difference variable with the
/// inner correlation integrated exactly over merged breakpoints, not through
/// the assembled matrix.
pub fn cross_energy(a: &StiffnessOperator, u_plus: &DiscreteFunction, u_minus: &DiscreteFunction) -> Result<f64> {
    a.check(u_plus)?;
    a.check(u_minus)?;
    if u_plus.coeffs().iter().chain(u_minus.coeffs().iter()).any(|&c| c < 0.0) {
        return Err(Error::Part);
    }
    let u = u_plus.with_coeffs(u_plus.coeffs() - u_minus.coeffs());
    let (plus, minus) = Pwl::from_function(&u).pointwise_parts();
    let form = bilinear_by_correlation(&kernel_of(a), &plus, &minus)?;
    Ok(-2.0 * form)
}

/// `(‖u⁺‖², ‖u⁻‖²)` for the pointwise parts of the interpolant of `u`. These
/// are not mesh functions (the parts kink at zero crossings), so they are
/// evaluated through the double-integral path.
pub fn part_norms(a: &StiffnessOperator, u: &DiscreteFunction) -> Result<(f64, f64)> {
    a.check(u)?;
    let kernel = kernel_of(a);
    let (plus, minus) = Pwl::from_function(u).pointwise_parts();
    Ok((
        bilinear_by_correlation(&kernel, &plus, &plus)?,
        bilinear_by_correlation(&kernel, &minus, &minus)?,
    ))
}

/// `(I(u⁺), I(u⁻))` for the pointwise parts, so that
/// `I(u) = I(u⁺) + I(u⁻) + ½ cross_energy` up to quadrature error.
pub fn part_energies(
    a: &StiffnessOperator,
    u: &DiscreteFunction,
    params: &ProblemParams,
) -> Result<(EnergyBreakdown, EnergyBreakdown)> {
    let (xp, xm) = part_norms(a, u)?;
    let nl = Nonlinearity::new(params, false);
    let (qp, qm) = split_lp_integrals(u, params.q + 1.0)?;
    let (pp, pm) = split_lp_integrals(u, params.p + 1.0)?;
    Ok((nl.breakdown(xp, qp, pp), nl.breakdown(xm, qm, pm)))
}

fn kernel_of(a: &StiffnessOperator) -> Kernel {
    let params = a.params();
    Kernel::new(&params.kernel, params.s, params.n())
}

/// Continuous piecewise-linear function with compact support: values at
/// increasing breakpoints, zero at both ends and outside.
#[derive(Clone, Debug)]
pub(crate) struct Pwl {
    xs: Vec<f64>,
    vs: Vec<f64>,
}

impl Pwl {
    pub fn from_function(u: &DiscreteFunction) -> Self {
        Self { xs: u.mesh().nodes().to_vec(), vs: u.mesh().full_values(u.coeffs()) }
    }

    fn eval(&self, x: f64) -> f64 {
        let xs = &self.xs;
        if x <= xs[0] || x >= xs[xs.len() - 1] {
            return 0.0;
        }
        let e = xs.partition_point(|&t| t <= x) - 1;
        let xi = (x - xs[e]) / (xs[e + 1] - xs[e]);
        self.vs[e] * (1.0 - xi) + self.vs[e + 1] * xi
    }

    /// `(max(u, 0), max(−u, 0))` on a common breakpoint set that includes the
    /// zero crossings.
    pub fn pointwise_parts(&self) -> (Pwl, Pwl) {
        let mut xs = vec![self.xs[0]];
        let mut vs = vec![self.vs[0]];
        for i in 1..self.xs.len() {
            let (x0, x1, v0, v1) = (self.xs[i - 1], self.xs[i], self.vs[i - 1], self.vs[i]);
            if v0 * v1 < 0.0 {
                xs.push(x0 + (x1 - x0) * v0 / (v0 - v1));
                vs.push(0.0);
            }
            xs.push(x1);
            vs.push(v1);
        }
        let plus = vs.iter().map(|v| v.max(0.0)).collect();
        let minus = vs.iter().map(|v| (-v).max(0.0)).collect();
        (Pwl { xs: xs.clone(), vs: plus }, Pwl { xs, vs: minus })
    }

    fn l2_product(&self, other: &Pwl) -> f64 {
        let pts = merge_sorted(&self.xs, &other.xs, 0.0);
        simpson_product(&pts, |x| self.eval(x), |x| other.eval(x))
    }
}

fn merge_sorted(a: &[f64], b: &[f64], shift: f64) -> Vec<f64> {
    let mut pts: Vec<f64> = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let next = if j == b.len() || (i < a.len() && a[i] <= b[j] + shift) {
            i += 1;
            a[i - 1]
        } else {
            j += 1;
            b[j - 1] + shift
        };
        if pts.last().is_none_or(|&l| next > l) {
            pts.push(next);
        }
    }
    pts
}

/// `∫ f g` for functions linear between consecutive `pts` (Simpson is exact).
fn simpson_product<F: Fn(f64) -> f64, G: Fn(f64) -> f64>(pts: &[f64], f: F, g: G) -> f64 {
    pts.windows(2)
        .map(|w| {
            let (x0, x1) = (w[0], w[1]);
            let xm = 0.5 * (x0 + x1);
            (x1 - x0) / 6.0 * (f(x0) * g(x0) + 4.0 * f(xm) * g(xm) + f(x1) * g(x1))
        })
        .sum()
}

/// `∫ (Δ_z u)(Δ_z v) dx` with `Δ_z u(x) = u(x) − u(x − z)`, `z ≥ 0`.
fn difference_correlation(u: &Pwl, v: &Pwl, z: f64) -> f64 {
    let pts = merge_sorted(&u.xs, &u.xs, z);
    simpson_product(&pts, |x| u.eval(x) - u.eval(x - z), |x| v.eval(x) - v.eval(x - z))
}

/// `∬_{R²} (u(x)−u(y))(v(x)−v(y)) K(x−y) dx dy`. `u` and `v` must share
/// their breakpoints.
pub(crate) fn bilinear_by_correlation(kernel: &Kernel, u: &Pwl, v: &Pwl) -> Result<f64> {
    debug_assert_eq!(u.xs, v.xs);
    let xs = &u.xs;
    let len = xs[xs.len() - 1] - xs[0];
    // the correlation is a polynomial between consecutive breakpoint differences
    let mut cuts: Vec<f64> = Vec::new();
    for (i, &x) in xs.iter().enumerate() {
        for &y in &xs[..i] {
            cuts.push(x - y);
        }
    }
    cuts.sort_by(f64::total_cmp);
    let tiny = 1e-12 * len;
    let mut panels: Vec<f64> = Vec::new();
    for c in cuts {
        if panels.last().is_none_or(|&l| c > l + tiny) {
            panels.push(c);
        }
    }
    let rule = GaussLegendre::new(8);
    let corr = |z: f64| difference_correlation(u, v, z);
    let near = dyadic_to_zero(&rule, panels[0], 1e-14, 200, |z| kernel.value(z) * corr(z))?;
    let mut total = near;
    for w in panels.windows(2) {
        total += rule.integrate(w[0], w[1], |z| kernel.value(z) * corr(z));
    }
    // beyond the support length the shifted copies no longer overlap
    total += 2.0 * u.l2_product(v) * kernel.tail(len);
    // ∫_R = 2 ∫_0^∞ by evenness of the correlation in z
    Ok(2.0 * total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_stiffness;
    use crate::mesh::Mesh;

    fn setup(n: usize) -> (StiffnessOperator, ProblemParams) {
        let params = ProblemParams::fractional(0.2, 0.5, 2.0, 0.3, 1.0, -1.0, 1.0);
        let mesh = Mesh::uniform(-1.0, 1.0, n, 4).unwrap();
        (assemble_stiffness(&mesh, &params).unwrap(), params)
    }

    #[test]
    fn zero_function_energy_and_gradient_vanish() {
        let (a, params) = setup(8);
        let z = a.zero_function();
        assert_eq!(energy(&a, &z, &params).unwrap().total, 0.0);
        assert!(gradient(&a, &z, &params).unwrap().is_zero());
    }

    #[test]
    fn pure_quadratic_when_weights_vanish() {
        let (a, mut params) = setup(8);
        params.mu = 0.0;
        params.lambda = 0.0;
        let u = a.interpolate(|x| 1.0 - x * x);
        let e = energy(&a, &u, &params).unwrap();
        assert_eq!(e.total, 0.5 * a.inner(&u, &u).unwrap());
    }

    #[test]
    fn positive_part_energy_of_nonpositive_function() {
        let (a, params) = setup(8);
        let u = a.interpolate(|x| -(1.0 - x * x));
        let j = energy_positive_part(&a, &u, &params).unwrap();
        assert_eq!(j, 0.5 * a.inner(&u, &u).unwrap());
        let v = u.scaled(-1.0);
        assert_eq!(
            energy_positive_part(&a, &v, &params).unwrap(),
            energy(&a, &v, &params).unwrap().total
        );
    }

    #[test]
    fn split_is_exact_and_sign_symmetric() {
        let (a, _) = setup(6);
        let u = a.function(DVector::from_vec(vec![0.3, -0.2, 0.0, 1.0, -4.0, 2.0])).unwrap();
        let (p, m) = split_parts(&u);
        assert_eq!(p.coeffs() - m.coeffs(), *u.coeffs());
        let (p2, m2) = split_parts(&u.scaled(-1.0));
        assert_eq!(p2.coeffs(), m.coeffs());
        assert_eq!(m2.coeffs(), p.coeffs());
    }

    #[test]
    fn cross_energy_matches_matrix_identity() {
        let (a, _) = setup(10);
        let u = a.interpolate(|x| (3.0 * x).sin() + 0.2);
        let (p, m) = split_parts(&u);
        let cross = cross_energy(&a, &p, &m).unwrap();
        let (xp, xm) = part_norms(&a, &u).unwrap();
        let direct = a.inner(&u, &u).unwrap() - xp - xm;
        assert!(cross > 0.0);
        assert!((cross - direct).abs() < 1e-9 * a.inner(&u, &u).unwrap(), "{cross} vs {direct}");
    }

    #[test]
    fn cross_energy_rejects_negative_inputs() {
        let (a, _) = setup(4);
        let u = a.interpolate(|x| x);
        assert!(matches!(cross_energy(&a, &u, &u), Err(Error::Part)));
    }

    #[test]
    fn correlation_path_reproduces_the_matrix() {
        let (a, params) = setup(7);
        let kernel = Kernel::new(&params.kernel, params.s, 1.0);
        let u = a.interpolate(|x| (1.0 - x * x) * (1.0 + x));
        let v = a.interpolate(|x| x.cos() - 0.5);
        let form = bilinear_by_correlation(&kernel, &Pwl::from_function(&u), &Pwl::from_function(&v)).unwrap();
        let exact = a.inner(&u, &v).unwrap();
        assert!((form - exact).abs() < 1e-9 * exact.abs().max(1.0), "{form} vs {exact}");
    }
}
