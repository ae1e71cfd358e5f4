//! Galerkin realization of the nonlocal form `<u, v>_{X0}` with P1 elements.
//!
//! On a uniform mesh every interior hat function is a translate of one
//! reference hat, and since hats vanish outside the interval the integral over
//! `Q = R^2 \ (CΩ x CΩ)` equals the integral over all of `R^2`. Writing the
//! double integral in the difference variable `z = x - y`,
//!
//! ```text
//! A_ij = 2 ∫_0^∞ K(z) [2 R(kh) - R(kh + z) - R(kh - z)] dz,   k = |i - j|,
//! ```
//!
//! where `R(t) = ∫ φ(x) φ(x - t) dx` is the autocorrelation of the hat, a
//! scaled cubic B-spline. The bracket is a cubic polynomial on every panel
//! `[mh, (m+1)h]`; on the first panel its constant and linear terms vanish
//! identically, which is what tames the `|z|^{-1-2s}` singularity. The matrix
//! is Toeplitz and contains both the `Ω x Ω` interaction and the `Ω x CΩ`
//! tail; the tail part `2 ∫_Ω φ_i φ_j κ`, `κ(x) = ∫_{CΩ} K(x - y) dy`, is
//! assembled separately so it can be inspected and removed.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::mesh::{DiscreteFunction, Mesh};
use crate::params::ProblemParams;
use crate::quadrature::{adaptive, dyadic_to_zero, GaussLegendre};

#[derive(Clone, Debug)]
pub struct AssemblyOptions {
    /// Gauss–Legendre order on panels away from the singularity.
    pub far_order: usize,
    /// Relative tolerance for the adaptive and dyadic drivers (custom kernels).
    pub tol: f64,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self { far_order: 16, tol: 1e-9 }
    }
}

#[derive(Clone, Debug)]
pub struct StiffnessOperator {
    params: ProblemParams,
    mesh: Arc<Mesh>,
    matrix: DMatrix<f64>,
    tail_matrix: DMatrix<f64>,
    tail_weights: Vec<f64>,
    fingerprint: String,
}

/// Cubic B-spline `B3(t)`: the autocorrelation of the unit hat on `[-1, 1]`.
fn hat_autocorrelation(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        2.0 / 3.0 - t * t + 0.5 * t * t * t
    } else if t < 2.0 {
        let r = 2.0 - t;
        r * r * r / 6.0
    } else {
        0.0
    }
}

/// Derivatives `(R'', R''')` of the B-spline piece covering `(j, j+1)`, at `t`.
fn piece_derivatives(j: i64, t: f64) -> (f64, f64) {
    match j {
        0 => (-2.0 + 3.0 * t, 3.0),
        1 => (2.0 - t, -1.0),
        -1 => (-2.0 - 3.0 * t, -3.0),
        -2 => (2.0 + t, 1.0),
        _ => (0.0, 0.0),
    }
}

/// Bracket `2R(k) - R(k+z) - R(k-z)` for unit spacing.
fn second_difference(k: i64, z: f64) -> f64 {
    let kf = k as f64;
    2.0 * hat_autocorrelation(kf) - hat_autocorrelation(kf + z) - hat_autocorrelation(kf - z)
}

/// Coefficients `(c2, c3)` of the bracket on `z ∈ [0, 1]`; lower orders vanish.
fn first_panel_coefficients(k: i64) -> (f64, f64) {
    let kf = k as f64;
    let (r2, r3) = piece_derivatives(k, kf);
    let (l2, l3) = piece_derivatives(k - 1, kf);
    (-(r2 + l2) / 2.0, -(r3 - l3) / 6.0)
}

/// `∫_0^1 z^{j-1-2s} dz` with the logarithmic case guarded.
fn first_panel_moment(j: i32, s: f64) -> f64 {
    let e = j as f64 - 2.0 * s;
    if e.abs() < 1e-14 {
        f64::INFINITY
    } else {
        1.0 / e
    }
}

/// Toeplitz symbol of the power kernel on the unit grid.
fn power_symbol(k: usize, s: f64, rule: &GaussLegendre) -> f64 {
    let k = k as i64;
    let (c2, c3) = first_panel_coefficients(k);
    let mut total = c2 * first_panel_moment(2, s) + c3 * first_panel_moment(3, s);
    for m in 1..=(k + 1) {
        let lo = m as f64;
        total += rule.integrate(lo, lo + 1.0, |z| z.powf(-1.0 - 2.0 * s) * second_difference(k, z));
    }
    let plateau = 2.0 * hat_autocorrelation(k as f64);
    if plateau != 0.0 {
        let start = (k + 2) as f64;
        total += plateau * start.powf(-2.0 * s) / (2.0 * s);
    }
    2.0 * total
}

/// Toeplitz symbol for a general radial kernel at spacing `h`.
fn kernel_symbol(k: usize, h: f64, kernel: &Kernel, rule: &GaussLegendre, tol: f64) -> Result<f64> {
    let ki = k as i64;
    let (c2, c3) = first_panel_coefficients(ki);
    let near = dyadic_to_zero(rule, h, tol, 200, |z| {
        let t = z / h;
        kernel.value(z) * h * t * t * (c2 + c3 * t)
    })?;
    let mut total = near;
    for m in 1..=(ki + 1) {
        let lo = m as f64 * h;
        let mut f = |z: f64| kernel.value(z) * h * second_difference(ki, z / h);
        let scale = rule.integrate(lo, lo + h, &mut f).abs().max(near.abs());
        total += adaptive(rule, lo, lo + h, tol * scale, 30, &mut f)?;
    }
    let plateau = 2.0 * h * hat_autocorrelation(k as f64);
    if plateau != 0.0 {
        total += plateau * kernel.tail((ki + 2) as f64 * h);
    }
    Ok(2.0 * total)
}

/// `κ(x) = ∫_{CΩ} K(x - y) dy` for `x` inside `(a, b)`.
fn complement_weight(kernel: &Kernel, a: f64, b: f64, x: f64) -> f64 {
    kernel.tail(x - a) + kernel.tail(b - x)
}

/// Tridiagonal tail matrix `2 ∫_Ω φ_i φ_j κ dx`.
fn assemble_tail(mesh: &Mesh, kernel: &Kernel, rule: &GaussLegendre) -> Result<DMatrix<f64>> {
    let n = mesh.n_interior();
    let nodes = mesh.nodes();
    let (a, b) = (mesh.a(), mesh.b());
    let mut tail = DMatrix::zeros(n, n);
    let ne = mesh.n_elements();
    for e in 0..ne {
        let (x0, x1) = (nodes[e], nodes[e + 1]);
        let h = x1 - x0;
        // local shape products: (0,0), (0,1), (1,1)
        let mut local = [0.0f64; 3];
        for (slot, value) in local.iter_mut().enumerate() {
            let shape = |x: f64| {
                let xi = (x - x0) / h;
                match slot {
                    0 => (1.0 - xi) * (1.0 - xi),
                    1 => (1.0 - xi) * xi,
                    _ => xi * xi,
                }
            };
            let integrand = |x: f64| shape(x) * complement_weight(kernel, a, b, x);
            *value = if e == 0 {
                dyadic_to_zero(rule, h, 1e-15, 400, |t| integrand(a + t))?
            } else if e == ne - 1 {
                dyadic_to_zero(rule, h, 1e-15, 400, |t| integrand(b - t))?
            } else {
                rule.integrate(x0, x1, integrand)
            };
        }
        // element e joins full nodes e and e+1, i.e. interior indices e-1 and e
        let left = e.checked_sub(1);
        let right = (e < n).then_some(e);
        if let Some(i) = left {
            tail[(i, i)] += 2.0 * local[0];
        }
        if let Some(j) = right {
            tail[(j, j)] += 2.0 * local[2];
        }
        if let (Some(i), Some(j)) = (left, right) {
            tail[(i, j)] += 2.0 * local[1];
            tail[(j, i)] += 2.0 * local[1];
        }
    }
    Ok(tail)
}

/// Hash of the mesh nodes and kernel parameters.
pub fn fingerprint(mesh: &Mesh, params: &ProblemParams) -> String {
    let mut hasher = Sha256::new();
    for x in mesh.nodes() {
        hasher.update(x.to_le_bytes());
    }
    hasher.update((mesh.quad_order() as u64).to_le_bytes());
    hasher.update(params.dim.to_le_bytes());
    hasher.update(params.s.to_le_bytes());
    hasher.update(params.theta.to_le_bytes());
    let kernel = serde_json::to_vec(&params.kernel).expect("kernel spec serializes");
    hasher.update(&kernel);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn assemble_stiffness(mesh: &Mesh, params: &ProblemParams) -> Result<StiffnessOperator> {
    assemble_stiffness_with(mesh, params, &AssemblyOptions::default())
}

pub fn assemble_stiffness_with(
    mesh: &Mesh,
    params: &ProblemParams,
    opts: &AssemblyOptions,
) -> Result<StiffnessOperator> {
    params.validate()?;
    let h = mesh
        .uniform_spacing()
        .ok_or_else(|| Error::Mesh("stiffness assembly requires a uniform mesh".into()))?;
    if (mesh.a() - params.domain.a).abs() > 1e-12 * h || (mesh.b() - params.domain.b).abs() > 1e-12 * h {
        return Err(Error::Mesh(format!(
            "mesh covers [{}, {}] but the domain is [{}, {}]",
            mesh.a(),
            mesh.b(),
            params.domain.a,
            params.domain.b
        )));
    }
    let n = mesh.n_interior();
    let s = params.s;
    let kernel = Kernel::new(&params.kernel, s, params.n());
    let rule = GaussLegendre::new(opts.far_order.max(2));
    let symbol: Vec<f64> = if kernel.is_power() {
        let scale = h.powf(1.0 - 2.0 * s);
        (0..n).map(|k| scale * power_symbol(k, s, &rule)).collect()
    } else {
        (0..n)
            .map(|k| kernel_symbol(k, h, &kernel, &rule, opts.tol))
            .collect::<Result<_>>()?
    };
    let matrix = DMatrix::from_fn(n, n, |i, j| symbol[i.abs_diff(j)]);
    let tail_matrix = assemble_tail(mesh, &kernel, &rule)?;
    let tail_weights = mesh
        .interior_nodes()
        .iter()
        .map(|&x| complement_weight(&kernel, mesh.a(), mesh.b(), x))
        .collect();
    Ok(StiffnessOperator {
        params: params.clone(),
        mesh: Arc::new(mesh.clone()),
        matrix,
        tail_matrix,
        tail_weights,
        fingerprint: fingerprint(mesh, params),
    })
}

/// Consistent P1 mass matrix (L² Gram matrix of the interior hats).
pub fn mass_matrix(mesh: &Mesh) -> DMatrix<f64> {
    let n = mesh.n_interior();
    let nodes = mesh.nodes();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let hl = nodes[i + 1] - nodes[i];
        let hr = nodes[i + 2] - nodes[i + 1];
        m[(i, i)] = (hl + hr) / 3.0;
        if i + 1 < n {
            m[(i, i + 1)] = hr / 6.0;
            m[(i + 1, i)] = hr / 6.0;
        }
    }
    m
}

impl StiffnessOperator {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn tail_matrix(&self) -> &DMatrix<f64> {
        &self.tail_matrix
    }

    /// `Ω x Ω` interaction only (the tail removed).
    pub fn interaction_matrix(&self) -> DMatrix<f64> {
        &self.matrix - &self.tail_matrix
    }

    pub fn tail_weights(&self) -> &[f64] {
        &self.tail_weights
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn params(&self) -> &ProblemParams {
        &self.params
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Same operator with different concave/convex weights or exponents.
    /// Kernel, order `s` and mesh must be unchanged.
    pub fn with_params(&self, params: ProblemParams) -> Result<Self> {
        params.validate()?;
        if fingerprint(&self.mesh, &params) != self.fingerprint || params.domain != self.params.domain {
            return Err(Error::Param(
                "kernel, order or domain differ from the assembled operator".into(),
            ));
        }
        Ok(Self { params, ..self.clone() })
    }

    pub fn zero_function(&self) -> DiscreteFunction {
        DiscreteFunction::zeros(self.mesh.clone())
    }

    pub fn function(&self, coeffs: DVector<f64>) -> Result<DiscreteFunction> {
        DiscreteFunction::new(self.mesh.clone(), coeffs)
    }

    pub fn interpolate<F: Fn(f64) -> f64>(&self, f: F) -> DiscreteFunction {
        DiscreteFunction::interpolate(self.mesh.clone(), f)
    }

    pub(crate) fn check(&self, u: &DiscreteFunction) -> Result<()> {
        if u.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: u.len() });
        }
        if !Arc::ptr_eq(u.mesh(), &self.mesh) && **u.mesh() != *self.mesh {
            return Err(Error::Mesh("function lives on a different mesh".into()));
        }
        Ok(())
    }

    /// `uᵀ A v`.
    pub fn inner(&self, u: &DiscreteFunction, v: &DiscreteFunction) -> Result<f64> {
        self.check(u)?;
        self.check(v)?;
        Ok(self.inner_coeffs(u.coeffs(), v.coeffs()))
    }

    pub(crate) fn inner_coeffs(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        u.dot(&(&self.matrix * v))
    }

    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.matrix * u
    }

    pub fn to_document(&self) -> StiffnessDocument {
        let n = self.dim();
        let mut matrix = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                matrix.push(self.matrix[(i, j)]);
            }
        }
        StiffnessDocument {
            params: self.params.clone(),
            mesh: (*self.mesh).clone(),
            n,
            matrix,
            tail_weights: self.tail_weights.clone(),
            fingerprint: self.fingerprint.clone(),
        }
    }

    /// Rebuild from a document. The fingerprint is recomputed from the stored
    /// nodes and kernel and must match; the tail matrix is reassembled.
    pub fn from_document(doc: StiffnessDocument) -> Result<Self> {
        doc.params.validate()?;
        let expected = fingerprint(&doc.mesh, &doc.params);
        if expected != doc.fingerprint {
            return Err(Error::Input("operator fingerprint does not match its mesh and kernel".into()));
        }
        let n = doc.mesh.n_interior();
        if doc.n != n || doc.matrix.len() != n * n || doc.tail_weights.len() != n {
            return Err(Error::DimensionMismatch { expected: n * n, got: doc.matrix.len() });
        }
        let kernel = Kernel::new(&doc.params.kernel, doc.params.s, doc.params.n());
        let rule = GaussLegendre::new(AssemblyOptions::default().far_order);
        let tail_matrix = assemble_tail(&doc.mesh, &kernel, &rule)?;
        Ok(Self {
            matrix: DMatrix::from_row_slice(n, n, &doc.matrix),
            tail_matrix,
            tail_weights: doc.tail_weights,
            fingerprint: doc.fingerprint,
            mesh: Arc::new(doc.mesh),
            params: doc.params,
        })
    }
}

/// Serialized operator: `{params, mesh, n, matrix (row-major), tail_weights, fingerprint}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StiffnessDocument {
    pub params: ProblemParams,
    pub mesh: Mesh,
    pub n: usize,
    pub matrix: Vec<f64>,
    pub tail_weights: Vec<f64>,
    pub fingerprint: String,
}

pub fn gagliardo_norm(a: &StiffnessOperator, u: &DiscreteFunction) -> Result<f64> {
    Ok(a.inner(u, u)?.max(0.0).sqrt())
}

/// `∫_Ω |u_h|^r dx` by per-element Gauss quadrature of the interpolant.
pub fn lp_integral(u: &DiscreteFunction, r: f64) -> Result<f64> {
    if !(r >= 1.0) {
        return Err(Error::Input(format!("Lp exponent r = {r} < 1")));
    }
    Ok(lp_integral_coeffs(u.mesh(), u.coeffs(), r))
}

pub(crate) fn lp_integral_coeffs(mesh: &Mesh, u: &DVector<f64>, r: f64) -> f64 {
    let mut acc = 0.0;
    mesh.for_each_qp(u, |_, _, _, w, v| acc += w * v.abs().powf(r));
    acc
}

pub fn lp_norm(u: &DiscreteFunction, r: f64) -> Result<f64> {
    Ok(lp_integral(u, r)?.powf(1.0 / r))
}

/// `‖u‖² / |u|²_{L^{2*}}`.
pub fn sobolev_quotient(a: &StiffnessOperator, u: &DiscreteFunction) -> Result<f64> {
    a.check(u)?;
    if u.is_zero() {
        return Err(Error::ZeroInput);
    }
    let two_star = a.params().two_star();
    let num = a.inner(u, u)?;
    let den = lp_integral(u, two_star)?.powf(2.0 / two_star);
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn operator(n: usize, s: f64) -> StiffnessOperator {
        let params = ProblemParams::fractional(s, 0.5, 2.0, 0.1, 1.0, -1.0, 1.0);
        let mesh = Mesh::uniform(-1.0, 1.0, n, 4).unwrap();
        assemble_stiffness(&mesh, &params).unwrap()
    }

    #[test]
    fn b_spline_autocorrelation() {
        assert!((hat_autocorrelation(0.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((hat_autocorrelation(1.0) - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(hat_autocorrelation(2.5), 0.0);
        // brute-force correlation of the unit hat at t = 0.7
        let hat = |x: f64| (1.0 - x.abs()).max(0.0);
        let m = 200_000;
        let dx = 4.0 / m as f64;
        let brute: f64 = (0..m)
            .map(|i| {
                let x = -2.0 + (i as f64 + 0.5) * dx;
                hat(x) * hat(x - 0.7) * dx
            })
            .sum();
        assert!((brute - hat_autocorrelation(0.7)).abs() < 1e-9);
    }

    #[test]
    fn first_panel_expansion_matches_bracket() {
        for k in 0..4 {
            let (c2, c3) = first_panel_coefficients(k);
            for &z in &[0.1, 0.5, 0.9] {
                let direct = second_difference(k, z);
                assert!((direct - (c2 * z * z + c3 * z * z * z)).abs() < 1e-14, "k={k} z={z}");
            }
        }
    }

    #[test]
    fn symmetric_positive_definite() {
        let a = operator(12, 0.3);
        let m = a.matrix();
        let scale = m.amax();
        for i in 0..12 {
            for j in 0..12 {
                assert!((m[(i, j)] - m[(j, i)]).abs() <= 1e-12 * scale);
            }
        }
        let eig = m.clone().symmetric_eigen();
        assert!(eig.eigenvalues.min() > 0.0);
    }

    #[test]
    fn entries_beyond_the_neighbors_are_negative() {
        // the nearest-neighbor entry is positive for small s
        let a = operator(10, 0.2);
        assert!(a.matrix()[(0, 1)] > 0.0);
        for k in 2..10 {
            assert!(a.matrix()[(0, k)] < 0.0);
        }
        let b = operator(10, 0.45);
        assert!(b.matrix()[(0, 1)] < 0.0);
    }

    #[test]
    fn zero_function_has_zero_energy() {
        let a = operator(6, 0.2);
        let z = a.zero_function();
        assert_eq!(gagliardo_norm(&a, &z).unwrap(), 0.0);
        assert_eq!(lp_norm(&z, 2.0).unwrap(), 0.0);
        assert!(matches!(sobolev_quotient(&a, &z), Err(Error::ZeroInput)));
    }

    #[test]
    fn custom_power_table_reproduces_fractional_operator() {
        let s = 0.2;
        let mut params = ProblemParams::fractional(s, 0.5, 2.0, 0.1, 1.0, -1.0, 1.0);
        let mesh = Mesh::uniform(-1.0, 1.0, 7, 4).unwrap();
        let exact = assemble_stiffness(&mesh, &params).unwrap();
        let radii: Vec<f64> = (0..10).map(|i| 1e-3 * 3f64.powi(i)).collect();
        let values = radii.iter().map(|r| r.powf(-1.0 - 2.0 * s)).collect();
        params.kernel = crate::params::KernelSpec::Custom(crate::params::CustomKernel { radii, values });
        let table = assemble_stiffness(&mesh, &params).unwrap();
        let diff = (exact.matrix() - table.matrix()).amax();
        assert!(diff < 1e-8 * exact.matrix().amax(), "diff {diff}");
        let tdiff = (exact.tail_matrix() - table.tail_matrix()).amax();
        assert!(tdiff < 1e-10 * exact.tail_matrix().amax());
    }

    #[test]
    fn non_uniform_mesh_rejected() {
        let params = ProblemParams::fractional(0.2, 0.5, 2.0, 0.1, 1.0, -1.0, 1.0);
        let mesh = Mesh::new(vec![-1.0, -0.2, 0.1, 1.0], 3).unwrap();
        assert!(matches!(assemble_stiffness(&mesh, &params), Err(Error::Mesh(_))));
    }

    #[test]
    fn document_round_trip_checks_fingerprint() {
        let a = operator(5, 0.2);
        let doc = a.to_document();
        let back = StiffnessOperator::from_document(doc.clone()).unwrap();
        assert_eq!(back.matrix(), a.matrix());
        let mut bad = doc;
        bad.mesh = Mesh::uniform(-1.0, 1.0, 5, 3).unwrap();
        assert!(StiffnessOperator::from_document(bad).is_err());
    }

    #[test]
    fn mass_matrix_integrates_constants() {
        let mesh = Mesh::uniform(0.0, 1.0, 9, 3).unwrap();
        let m = mass_matrix(&mesh);
        // sum of all entries = ∫ (Σφ_i)² ; Σφ_i = 1 except on the two boundary elements
        let total: f64 = m.iter().sum();
        let h = 0.1;
        let expected = 1.0 - 2.0 * h + 2.0 * h / 3.0;
        assert!((total - expected).abs() < 1e-14);
    }
}
