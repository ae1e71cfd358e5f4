//! Problem parameters and the interaction kernel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tabulated radial profile `r -> K(r)`, interpolated linearly in log-log
/// coordinates and continued as `|x|^{-(N+2s)}` below the first and beyond the
/// last tabulated radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CustomKernel {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `K(x) = |x|^{-(N+2s)}`.
    Fractional,
    Custom(CustomKernel),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub a: f64,
    pub b: f64,
}

impl Interval {
    pub fn new(a: f64, b: f64) -> Self {
        Self { a, b }
    }

    pub fn length(&self) -> f64 {
        self.b - self.a
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.a + self.b)
    }
}

/// Scalar data of `L_K u + mu |u|^{q-1} u + lambda |u|^{p-1} u = 0` on an interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    /// Spatial dimension; only `1` is supported, but formulas keep it symbolic.
    pub dim: u32,
    pub s: f64,
    pub q: f64,
    pub p: f64,
    pub mu: f64,
    pub lambda: f64,
    pub domain: Interval,
    pub kernel: KernelSpec,
    /// Lower-bound constant in `K(x) >= theta |x|^{-(N+2s)}`.
    pub theta: f64,
}

impl ProblemParams {
    /// Fractional-kernel parameters on `(a, b)`.
    pub fn fractional(s: f64, q: f64, p: f64, mu: f64, lambda: f64, a: f64, b: f64) -> Self {
        Self {
            dim: 1,
            s,
            q,
            p,
            mu,
            lambda,
            domain: Interval::new(a, b),
            kernel: KernelSpec::Fractional,
            theta: 1.0,
        }
    }

    /// Critical-exponent parameters (`p = 2* - 1`, `lambda = 1`).
    pub fn critical(s: f64, q: f64, mu: f64, a: f64, b: f64) -> Self {
        let n = 1.0;
        let two_star = 2.0 * n / (n - 2.0 * s);
        Self::fractional(s, q, two_star - 1.0, mu, 1.0, a, b)
    }

    pub fn n(&self) -> f64 {
        self.dim as f64
    }

    /// `2* = 2N / (N - 2s)`.
    pub fn two_star(&self) -> f64 {
        2.0 * self.n() / (self.n() - 2.0 * self.s)
    }

    pub fn is_critical(&self) -> bool {
        (self.p - (self.two_star() - 1.0)).abs() <= 1e-12 * self.p
    }

    pub fn omega_measure(&self) -> f64 {
        self.domain.length()
    }

    pub fn with_mu(&self, mu: f64) -> Self {
        Self { mu, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.dim != 1 {
            return Err(Error::Param(format!("N = {} unsupported: only N = 1", self.dim)));
        }
        let finite = [self.s, self.q, self.p, self.mu, self.lambda, self.theta];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Param("parameters must be finite".into()));
        }
        if !(self.s > 0.0 && self.s < 1.0) {
            return Err(Error::Param(format!("0<s<1 violated (s = {})", self.s)));
        }
        if !(n > 2.0 * self.s) {
            return Err(Error::Param(format!("N>2s violated (N = {n}, s = {})", self.s)));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::Param(format!("0<q<1 violated (q = {})", self.q)));
        }
        let p_max = self.two_star() - 1.0;
        if !(self.p > 1.0 && self.p <= p_max * (1.0 + 1e-12)) {
            return Err(Error::Param(format!(
                "1<p<=2*-1 violated (p = {}, 2*-1 = {p_max})",
                self.p
            )));
        }
        if !(self.domain.b > self.domain.a) {
            return Err(Error::Param(format!(
                "b>a violated (a = {}, b = {})",
                self.domain.a, self.domain.b
            )));
        }
        if !(self.theta > 0.0) {
            return Err(Error::Param(format!("theta>0 violated (theta = {})", self.theta)));
        }
        match &self.kernel {
            KernelSpec::Fractional => {
                if self.theta > 1.0 {
                    return Err(Error::Param(format!(
                        "K(x)>=theta|x|^-(N+2s) violated: fractional kernel needs theta<=1 (theta = {})",
                        self.theta
                    )));
                }
            }
            KernelSpec::Custom(table) => self.validate_table(table)?,
        }
        Ok(())
    }

    fn validate_table(&self, table: &CustomKernel) -> Result<()> {
        let CustomKernel { radii, values } = table;
        if radii.len() < 2 || radii.len() != values.len() {
            return Err(Error::Param(
                "custom kernel needs >= 2 radii with one value each".into(),
            ));
        }
        if radii[0] <= 0.0 || radii.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Param(
                "custom kernel radii must be positive and strictly increasing".into(),
            ));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Param("custom kernel values must be positive".into()));
        }
        let kernel = crate::kernel::Kernel::new(&self.kernel, self.s, self.n());
        let exponent = -(self.n() + 2.0 * self.s);
        let mut probes: Vec<f64> = radii.clone();
        probes.extend(radii.windows(2).map(|w| (w[0] * w[1]).sqrt()));
        for r in probes {
            let bound = self.theta * r.powf(exponent);
            if kernel.value(r) < bound * (1.0 - 1e-12) {
                return Err(Error::Param(format!(
                    "K(x)>=theta|x|^-(N+2s) violated at r = {r}"
                )));
            }
        }
        Ok(())
    }

    /// Extra hypotheses for the sign-changing construction:
    /// `N > 6s` and `q > (N + 2s) / (2 (N - 2s))`.
    pub fn validate_sign_changing(&self) -> Result<()> {
        self.validate()?;
        let n = self.n();
        if !(n > 6.0 * self.s) {
            return Err(Error::Param(format!("N>6s violated (s = {})", self.s)));
        }
        let q_min = 0.5 * (n + 2.0 * self.s) / (n - 2.0 * self.s);
        if !(self.q > q_min) {
            return Err(Error::Param(format!(
                "q>(N+2s)/(2(N-2s)) violated (q = {}, bound = {q_min})",
                self.q
            )));
        }
        if !(self.mu > 0.0) {
            return Err(Error::Param("mu>0 violated".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn critical_exponent() {
        let p = ProblemParams::critical(0.2, 0.5, 0.1, -1.0, 1.0);
        assert!((p.two_star() - 2.0 / 0.6).abs() < 1e-14);
        assert!(p.is_critical());
        p.validate().unwrap();
    }

    #[test]
    fn rejects_bad_q_with_named_invariant() {
        let p = ProblemParams::fractional(0.2, 1.2, 2.0, 0.1, 1.0, -1.0, 1.0);
        let msg = p.validate().unwrap_err().to_string();
        assert!(msg.contains("0<q<1"), "{msg}");
    }

    #[test]
    fn rejects_supercritical_p() {
        let p = ProblemParams::fractional(0.2, 0.5, 2.5, 0.1, 1.0, -1.0, 1.0);
        assert!(p.validate().unwrap_err().to_string().contains("2*-1"));
    }

    #[test]
    fn rejects_s_at_half() {
        let p = ProblemParams::fractional(0.5, 0.5, 1.5, 0.1, 1.0, -1.0, 1.0);
        assert!(p.validate().unwrap_err().to_string().contains("N>2s"));
    }

    #[test]
    fn sign_changing_hypotheses() {
        ProblemParams::critical(0.1, 0.8, 0.01, -1.0, 1.0)
            .validate_sign_changing()
            .unwrap();
        // q below (N+2s)/(2(N-2s)) = 0.75
        let e = ProblemParams::critical(0.1, 0.7, 0.01, -1.0, 1.0).validate_sign_changing();
        assert!(e.is_err());
        // N > 6s fails for s = 0.2
        let e = ProblemParams::critical(0.2, 0.95, 0.01, -1.0, 1.0).validate_sign_changing();
        assert!(e.unwrap_err().to_string().contains("N>6s"));
    }

    #[test]
    fn custom_kernel_lower_bound_checked() {
        let mut p = ProblemParams::fractional(0.2, 0.5, 2.0, 0.1, 1.0, -1.0, 1.0);
        let radii = vec![0.01, 0.1, 1.0, 10.0];
        let good: Vec<f64> = radii.iter().map(|r: &f64| 2.0 * r.powf(-1.4)).collect();
        p.kernel = KernelSpec::Custom(CustomKernel { radii: radii.clone(), values: good });
        p.theta = 1.0;
        p.validate().unwrap();
        let bad: Vec<f64> = radii.iter().map(|r: &f64| 0.5 * r.powf(-1.4)).collect();
        p.kernel = KernelSpec::Custom(CustomKernel { radii, values: bad });
        assert!(p.validate().is_err());
    }
}
