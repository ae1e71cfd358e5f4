//! Galerkin level structure: the generalized eigenbasis of the stiffness
//! matrix against the L² mass matrix, suprema of Lᵖ norms on the tail
//! spaces and the radii built from them.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::{lp_integral_coeffs, mass_matrix, StiffnessOperator};
use crate::error::{Error, Result};
use crate::functional::Nonlinearity;
use crate::mesh::Mesh;
use crate::params::ProblemParams;

/// Generalized eigenpairs `A e = λ M e`, eigenvalues ascending, eigenvectors
/// as columns normalized to `eᵀ M e = 1`.
pub fn generalized_eigen(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    if a.ncols() != n || m.nrows() != n || m.ncols() != n {
        return Err(Error::Eigen("matrices must be square of equal size".into()));
    }
    let chol = Cholesky::new(m.clone()).ok_or_else(|| Error::Eigen("mass matrix not positive definite".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::Eigen("singular mass factor".into()))?;
    let mut c = &linv * a * linv.transpose();
    c = (&c + c.transpose()) * 0.5;
    let eig = c.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let y = DMatrix::from_fn(n, n, |r, k| eig.eigenvectors[(r, order[k])]);
    let mut e = linv.transpose() * y;
    for k in 0..n {
        let mut col = e.column_mut(k);
        // sign convention: the largest-magnitude entry is positive
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col.neg_mut();
        }
    }
    Ok((values, e))
}

/// Ground state of `A e = λ M e`: positive, `X₀`-normalized.
pub fn ground_state(a: &StiffnessOperator) -> Result<(f64, DVector<f64>)> {
    let (values, vectors) = generalized_eigen(a.matrix(), &mass_matrix(a.mesh()))?;
    let e = vectors.column(0).into_owned();
    let norm = a.inner_coeffs(&e, &e).sqrt();
    Ok((values[0], e / norm))
}

/// Eigenbasis of `A e = λ M e` with columns orthonormal in `X₀`
/// (`eᵀ A e = 1`). `Y_k` is spanned by the first `k` columns, `Z_k` by
/// columns `k..n` (1-based), so `Z_{k+1} ⊂ Z_k` and `Y_k ⊥ Z_{k+1}`.
#[derive(Clone, Debug)]
pub struct LevelStructure {
    pub eigenvalues: Vec<f64>,
    pub basis: DMatrix<f64>,
    /// `‖A e − λ M e‖` for each `M`-normalized eigenvector.
    pub eigen_residuals: Vec<f64>,
    pub k_max: usize,
}

pub fn build_levels(a: &StiffnessOperator, mass: &DMatrix<f64>, k_max: usize) -> Result<LevelStructure> {
    let n = a.dim();
    if k_max == 0 || k_max > n {
        return Err(Error::Input(format!("k_max = {k_max} outside 1..={n}")));
    }
    let (values, vectors) = generalized_eigen(a.matrix(), mass)?;
    let mut basis = vectors.clone();
    let mut eigen_residuals = Vec::with_capacity(n);
    for k in 0..n {
        let e = vectors.column(k);
        eigen_residuals.push((a.matrix() * e - mass * e * values[k]).norm());
        let norm = e.dot(&(a.matrix() * e)).sqrt();
        basis.column_mut(k).unscale_mut(norm);
    }
    Ok(LevelStructure { eigenvalues: values.iter().copied().collect(), basis, eigen_residuals, k_max })
}

impl LevelStructure {
    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Columns spanning `Y_k` (the first `k` eigenvectors).
    pub fn y_basis(&self, k: usize) -> DMatrix<f64> {
        self.basis.columns(0, k.min(self.dim())).into_owned()
    }

    /// Columns spanning `Z_k` (eigenvectors `k..n`, 1-based).
    pub fn z_basis(&self, k: usize) -> DMatrix<f64> {
        let n = self.dim();
        let first = k.saturating_sub(1).min(n);
        self.basis.columns(first, n - first).into_owned()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AscentConfig {
    /// Random starts in addition to the warm start and the leading basis vector.
    pub random_starts: usize,
    pub max_iters: usize,
    /// Stop when the relative increase of `∫|u|^r` drops below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for AscentConfig {
    fn default() -> Self {
        Self { random_starts: 3, max_iters: 2000, tol: 1e-13, seed: 0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BetaEstimate {
    pub k: usize,
    pub r: f64,
    /// Best `|u|_{L^r}` found on the unit sphere of `Z_k` (a lower bound).
    pub value: f64,
    /// Nodal coefficients of the best point.
    pub maximizer: Vec<f64>,
    /// Index of the winning start: 0 warm start, 1 leading basis vector,
    /// then the random starts.
    pub start_index: usize,
    pub warm_started: bool,
    pub stagnated: bool,
}

/// `r ∫|u|^{r−2} u φ_i`.
fn lp_gradient(mesh: &Mesh, u: &DVector<f64>, r: f64) -> DVector<f64> {
    let nl = Nonlinearity { q: 0.0, p: r - 1.0, mu: 0.0, lambda: r, positive: false };
    nl.load(mesh, u)
}

/// Power-iteration ascent of the convex functional `∫|Zc|^r` on `|c| = 1`:
/// `c ← ∇F(c) / |∇F(c)|` never decreases `F`.
fn sphere_ascent(mesh: &Mesh, z: &DMatrix<f64>, mut c: DVector<f64>, r: f64, cfg: &AscentConfig) -> (DVector<f64>, f64, bool) {
    c.normalize_mut();
    let mut f = lp_integral_coeffs(mesh, &(z * &c), r);
    for _ in 0..cfg.max_iters {
        let g = z.transpose() * lp_gradient(mesh, &(z * &c), r);
        let norm = g.norm();
        if !(norm > 0.0) {
            return (c, f, false);
        }
        let next = g / norm;
        let f_next = lp_integral_coeffs(mesh, &(z * &next), r);
        if f_next < f {
            return (c, f, false);
        }
        let done = f_next - f <= cfg.tol * f;
        c = next;
        f = f_next;
        if done {
            return (c, f, false);
        }
    }
    (c, f, true)
}

/// Lower bound for `β_k = sup_{u ∈ Z_k, ‖u‖ = 1} |u|_{L^r}` by multi-start
/// ascent. A warm start from a point of `Z_{k+1}` makes the estimate at
/// least the value there.
pub fn estimate_beta_k(
    levels: &LevelStructure,
    a: &StiffnessOperator,
    r: f64,
    k: usize,
    warm: Option<&[f64]>,
    cfg: &AscentConfig,
) -> Result<BetaEstimate> {
    let two_star = a.params().two_star();
    if !(r >= 1.0 && r < two_star) {
        return Err(Error::Input(format!("1<=r<2* violated (r = {r}, 2* = {two_star})")));
    }
    if k == 0 || k > levels.dim() {
        return Err(Error::Input(format!("level k = {k} outside 1..={}", levels.dim())));
    }
    let mesh = a.mesh();
    let z = levels.z_basis(k);
    let m = z.ncols();
    let mut starts: Vec<Option<DVector<f64>>> = Vec::new();
    // coordinates of u in Z_k: c_j = e_jᵀ A u
    starts.push(warm.map(|w| z.transpose() * a.apply(&DVector::from_column_slice(w))));
    let mut lead = DVector::zeros(m);
    lead[0] = 1.0;
    starts.push(Some(lead));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    for _ in 0..cfg.random_starts {
        starts.push(Some(DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0))));
    }
    let mut best: Option<(usize, DVector<f64>, f64, bool)> = None;
    for (i, c0) in starts.into_iter().enumerate() {
        let Some(c0) = c0 else { continue };
        if !(c0.norm() > 0.0) {
            continue;
        }
        let (c, f, stalled) = sphere_ascent(mesh, &z, c0, r, cfg);
        // ties keep the lowest start index
        if best.as_ref().is_none_or(|b| f > b.2) {
            best = Some((i, c, f, stalled));
        }
    }
    let (start_index, c, f, stagnated) = best.ok_or_else(|| Error::Input("no usable start".into()))?;
    Ok(BetaEstimate {
        k,
        r,
        value: f.powf(1.0 / r),
        maximizer: (&z * &c).iter().copied().collect(),
        start_index,
        warm_started: warm.is_some(),
        stagnated,
    })
}

/// Estimates for `k = 1..=k_max`, computed from `k_max` down with each
/// maximizer warm-starting the next level, so the sequence is nonincreasing.
pub fn estimate_beta_sequence(
    levels: &LevelStructure,
    a: &StiffnessOperator,
    r: f64,
    k_max: usize,
    cfg: &AscentConfig,
) -> Result<Vec<BetaEstimate>> {
    let mut out: Vec<BetaEstimate> = Vec::with_capacity(k_max);
    for k in (1..=k_max).rev() {
        let warm = out.last().map(|b| b.maximizer.clone());
        out.push(estimate_beta_k(levels, a, r, k, warm.as_deref(), cfg)?);
    }
    out.reverse();
    Ok(out)
}

/// Sampled estimate of `c = sup_{‖u‖=1} ∫|u|^{2*}` (ascent over the whole
/// space; a lower bound).
pub fn embedding_constant(levels: &LevelStructure, a: &StiffnessOperator, cfg: &AscentConfig) -> Result<f64> {
    let ts = a.params().two_star();
    let z = levels.z_basis(1);
    let mut best: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut lead = DVector::zeros(z.ncols());
    lead[0] = 1.0;
    let mut starts = vec![lead];
    for _ in 0..cfg.random_starts {
        starts.push(DVector::from_fn(z.ncols(), |_, _| rng.random_range(-1.0..1.0)));
    }
    for c0 in starts {
        best = best.max(sphere_ascent(a.mesh(), &z, c0, ts, cfg).1);
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Radii {
    /// `ρ_k = (4μ β_k^{q+1} / (q+1))^{1/(1−q)}` with `β_k` in `L^{q+1}`.
    pub rho_k: f64,
    /// `r_k = ((λ+|μ|) β_k^{p+1})^{1/(1−p)}` with `β_k` in `L^{p+1}`.
    pub r_k: f64,
    /// `R = (2*/(4c))^{1/(2*−2)}`, below which the critical term is at most
    /// a quarter of the quadratic one.
    pub big_r: f64,
}

pub fn radii(params: &ProblemParams, beta_q: f64, beta_p: f64, c_embed: f64) -> Result<Radii> {
    params.validate()?;
    if !(params.mu > 0.0) {
        return Err(Error::Param("mu>0 violated (rho_k)".into()));
    }
    if !(params.lambda + params.mu.abs() > 0.0) {
        return Err(Error::Param("lambda+|mu|>0 violated (r_k)".into()));
    }
    if !(beta_q > 0.0 && beta_p > 0.0 && c_embed > 0.0) {
        return Err(Error::Input("beta_k and c must be positive".into()));
    }
    let (q, p) = (params.q, params.p);
    let ts = params.two_star();
    Ok(Radii {
        rho_k: (4.0 * params.mu * beta_q.powf(q + 1.0) / (q + 1.0)).powf(1.0 / (1.0 - q)),
        r_k: ((params.lambda + params.mu.abs()) * beta_p.powf(p + 1.0)).powf(1.0 / (1.0 - p)),
        big_r: (ts / (4.0 * c_embed)).powf(1.0 / (ts - 2.0)),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SphereCheck {
    pub k: usize,
    pub radius: f64,
    pub samples: usize,
    /// Samples satisfying the inequality.
    pub passed: usize,
    /// Smallest (for `Z_k`) or largest (for `Y_k`) sampled energy.
    pub extreme_energy: f64,
}

fn sample_sphere(
    a: &StiffnessOperator,
    params: &ProblemParams,
    basis: &DMatrix<f64>,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Vec<f64> {
    let nl = Nonlinearity::new(params, false);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|_| {
            let mut c = DVector::from_fn(basis.ncols(), |_, _| rng.random_range(-1.0..1.0));
            c.normalize_mut();
            let u = basis * c * radius;
            nl.energy(a, &u).total
        })
        .collect()
}

/// Sampled `I(u) ≥ 0` on the sphere of radius `radius` in `Z_k`.
pub fn check_d1(
    levels: &LevelStructure,
    a: &StiffnessOperator,
    params: &ProblemParams,
    k: usize,
    radius: f64,
    samples: usize,
    seed: u64,
) -> SphereCheck {
    let e = sample_sphere(a, params, &levels.z_basis(k), radius, samples, seed);
    SphereCheck {
        k,
        radius,
        samples,
        passed: e.iter().filter(|v| **v >= 0.0).count(),
        extreme_energy: e.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

/// Sampled `I(u) < 0` on the sphere of radius `radius` in `Y_k`.
pub fn check_d2(
    levels: &LevelStructure,
    a: &StiffnessOperator,
    params: &ProblemParams,
    k: usize,
    radius: f64,
    samples: usize,
    seed: u64,
) -> SphereCheck {
    let e = sample_sphere(a, params, &levels.y_basis(k), radius, samples, seed);
    SphereCheck {
        k,
        radius,
        samples,
        passed: e.iter().filter(|v| **v < 0.0).count(),
        extreme_energy: e.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LevelRow {
    pub k: usize,
    pub eigenvalue: f64,
    pub beta_q: f64,
    pub beta_p: f64,
    pub rho_k: f64,
    pub r_k: f64,
}

impl LevelRow {
    pub const CSV_HEADER: &'static str = "k,eigenvalue,beta_q,beta_p,rho_k,r_k";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.k, self.eigenvalue, self.beta_q, self.beta_p, self.rho_k, self.r_k
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LevelsReport {
    pub rows: Vec<LevelRow>,
    pub c_embed: f64,
    pub big_r: f64,
    pub beta_q: Vec<BetaEstimate>,
    pub beta_p: Vec<BetaEstimate>,
    pub max_eigen_residual: f64,
}

/// Eigenbasis, both `β_k` sequences, the radii and the embedding constant.
pub fn levels_report(a: &StiffnessOperator, params: &ProblemParams, k_max: usize, cfg: &AscentConfig) -> Result<LevelsReport> {
    let levels = build_levels(a, &mass_matrix(a.mesh()), k_max)?;
    let beta_q = estimate_beta_sequence(&levels, a, params.q + 1.0, k_max, cfg)?;
    let beta_p = estimate_beta_sequence(&levels, a, params.p + 1.0, k_max, cfg)?;
    let c_embed = embedding_constant(&levels, a, cfg)?;
    let mut rows = Vec::with_capacity(k_max);
    let mut big_r = 0.0;
    for (bq, bp) in beta_q.iter().zip(&beta_p) {
        let rad = radii(params, bq.value, bp.value, c_embed)?;
        big_r = rad.big_r;
        rows.push(LevelRow {
            k: bq.k,
            eigenvalue: levels.eigenvalues[bq.k - 1],
            beta_q: bq.value,
            beta_p: bp.value,
            rho_k: rad.rho_k,
            r_k: rad.r_k,
        });
    }
    let max_eigen_residual = levels.eigen_residuals.iter().copied().fold(0.0, f64::max);
    Ok(LevelsReport { rows, c_embed, big_r, beta_q, beta_p, max_eigen_residual })
}
