//! Piecewise-linear meshes on an interval and functions living on them.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "MeshData", into = "MeshData")]
pub struct Mesh {
    nodes: Vec<f64>,
    quad_order: usize,
    rule: Vec<(f64, f64)>,
}

#[derive(Clone, Serialize, Deserialize)]
struct MeshData {
    nodes: Vec<f64>,
    quad_order: usize,
}

impl TryFrom<MeshData> for Mesh {
    type Error = Error;

    fn try_from(d: MeshData) -> Result<Self> {
        Mesh::new(d.nodes, d.quad_order)
    }
}

impl From<Mesh> for MeshData {
    fn from(m: Mesh) -> Self {
        MeshData { nodes: m.nodes, quad_order: m.quad_order }
    }
}

impl PartialEq for Mesh {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.quad_order == other.quad_order
    }
}

impl Mesh {
    pub fn new(nodes: Vec<f64>, quad_order: usize) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(Error::Mesh("need at least one interior node".into()));
        }
        if nodes.iter().any(|x| !x.is_finite()) {
            return Err(Error::Mesh("non-finite node".into()));
        }
        if let Some(w) = nodes.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::Mesh(format!(
                "nodes must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        if quad_order < 2 {
            return Err(Error::Mesh(format!("quadrature order {quad_order} < 2")));
        }
        let rule = GaussLegendre::new(quad_order).unit();
        Ok(Self { nodes, quad_order, rule })
    }

    /// Uniform mesh with `n_interior` interior nodes on `[a, b]`.
    pub fn uniform(a: f64, b: f64, n_interior: usize, quad_order: usize) -> Result<Self> {
        if !(b > a) {
            return Err(Error::Mesh(format!("empty interval [{a}, {b}]")));
        }
        let m = n_interior + 1;
        let nodes = (0..=m)
            .map(|i| {
                if i == m {
                    b
                } else {
                    a + (b - a) * i as f64 / m as f64
                }
            })
            .collect();
        Self::new(nodes, quad_order)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn n_interior(&self) -> usize {
        self.nodes.len() - 2
    }

    pub fn n_elements(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn quad_order(&self) -> usize {
        self.quad_order
    }

    pub fn a(&self) -> f64 {
        self.nodes[0]
    }

    pub fn b(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    /// Coordinate of interior node `i` (0-based).
    pub fn interior_node(&self, i: usize) -> f64 {
        self.nodes[i + 1]
    }

    pub fn interior_nodes(&self) -> &[f64] {
        &self.nodes[1..self.nodes.len() - 1]
    }

    /// Spacing if the mesh is uniform to relative `1e-10`.
    pub fn uniform_spacing(&self) -> Option<f64> {
        let h = (self.b() - self.a()) / self.n_elements() as f64;
        self.nodes
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-10 * h)
            .then_some(h)
    }

    /// Gauss rule on the reference element `[0, 1]`: `(xi, weight)`.
    pub fn rule(&self) -> &[(f64, f64)] {
        &self.rule
    }

    pub fn refined(&self) -> Result<Self> {
        let mut nodes = Vec::with_capacity(2 * self.nodes.len() - 1);
        for w in self.nodes.windows(2) {
            nodes.push(w[0]);
            nodes.push(0.5 * (w[0] + w[1]));
        }
        nodes.push(self.b());
        Self::new(nodes, self.quad_order)
    }

    /// Nodal values on all mesh nodes (boundary zeros included).
    pub(crate) fn full_values(&self, coeffs: &DVector<f64>) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.nodes.len());
        v.push(0.0);
        v.extend(coeffs.iter().copied());
        v.push(0.0);
        v
    }

    /// Visit every quadrature point: `(element, xi, x, weight * h_e, value)`.
    pub(crate) fn for_each_qp<F: FnMut(usize, f64, f64, f64, f64)>(
        &self,
        coeffs: &DVector<f64>,
        mut f: F,
    ) {
        let full = self.full_values(coeffs);
        for e in 0..self.n_elements() {
            let (x0, x1) = (self.nodes[e], self.nodes[e + 1]);
            let h = x1 - x0;
            let (u0, u1) = (full[e], full[e + 1]);
            for &(xi, w) in &self.rule {
                let u = u0 * (1.0 - xi) + u1 * xi;
                f(e, xi, x0 + h * xi, w * h, u);
            }
        }
    }
}

/// Coefficients on the interior nodes of a mesh; zero on the boundary nodes
/// and outside the interval.
#[derive(Clone, Debug)]
pub struct DiscreteFunction {
    mesh: Arc<Mesh>,
    coeffs: DVector<f64>,
}

impl DiscreteFunction {
    pub fn new(mesh: Arc<Mesh>, coeffs: DVector<f64>) -> Result<Self> {
        if coeffs.len() != mesh.n_interior() {
            return Err(Error::DimensionMismatch {
                expected: mesh.n_interior(),
                got: coeffs.len(),
            });
        }
        Ok(Self { mesh, coeffs })
    }

    pub fn from_vec(mesh: Arc<Mesh>, coeffs: Vec<f64>) -> Result<Self> {
        Self::new(mesh, DVector::from_vec(coeffs))
    }

    pub fn zeros(mesh: Arc<Mesh>) -> Self {
        let n = mesh.n_interior();
        Self { mesh, coeffs: DVector::zeros(n) }
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate<F: Fn(f64) -> f64>(mesh: Arc<Mesh>, f: F) -> Self {
        let coeffs = DVector::from_iterator(
            mesh.n_interior(),
            mesh.interior_nodes().iter().map(|&x| f(x)),
        );
        Self { mesh, coeffs }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> DVector<f64> {
        self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn with_coeffs(&self, coeffs: DVector<f64>) -> Self {
        assert_eq!(coeffs.len(), self.coeffs.len());
        Self { mesh: self.mesh.clone(), coeffs }
    }

    pub fn scaled(&self, t: f64) -> Self {
        self.with_coeffs(&self.coeffs * t)
    }

    /// `self + t * other`.
    pub fn axpy(&self, t: f64, other: &DiscreteFunction) -> Self {
        self.with_coeffs(&self.coeffs + &other.coeffs * t)
    }

    pub fn same_mesh(&self, other: &DiscreteFunction) -> bool {
        Arc::ptr_eq(&self.mesh, &other.mesh) || *self.mesh == *other.mesh
    }

    /// Piecewise-linear interpolant evaluated at `x` (zero outside the interval).
    pub fn eval(&self, x: f64) -> f64 {
        let nodes = self.mesh.nodes();
        if x <= nodes[0] || x >= nodes[nodes.len() - 1] {
            return 0.0;
        }
        let e = nodes.partition_point(|&t| t <= x) - 1;
        let value = |k: usize| {
            if k == 0 || k == nodes.len() - 1 {
                0.0
            } else {
                self.coeffs[k - 1]
            }
        };
        let xi = (x - nodes[e]) / (nodes[e + 1] - nodes[e]);
        value(e) * (1.0 - xi) + value(e + 1) * xi
    }
}
