//! Gauss–Legendre rules and the adaptive drivers built on them.

use crate::error::{Error, Result};

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre order must be positive");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    /// Nodes and weights mapped to `[0, 1]`.
    pub fn unit(&self) -> Vec<(f64, f64)> {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| (0.5 * (x + 1.0), 0.5 * w))
            .collect()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, lo: f64, hi: f64, mut f: F) -> f64 {
        let c = 0.5 * (hi + lo);
        let r = 0.5 * (hi - lo);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(c + r * x))
            .sum::<f64>()
            * r
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Recursive bisection: accept a panel when the rule on the panel and on its
/// two halves agree to `tol` (absolute, split across panels).
pub fn adaptive<F: FnMut(f64) -> f64>(
    rule: &GaussLegendre,
    lo: f64,
    hi: f64,
    tol: f64,
    max_depth: usize,
    f: &mut F,
) -> Result<f64> {
    let whole = rule.integrate(lo, hi, &mut *f);
    adaptive_step(rule, lo, hi, whole, tol, max_depth, f)
}

fn adaptive_step<F: FnMut(f64) -> f64>(
    rule: &GaussLegendre,
    lo: f64,
    hi: f64,
    whole: f64,
    tol: f64,
    depth: usize,
    f: &mut F,
) -> Result<f64> {
    let mid = 0.5 * (lo + hi);
    let left = rule.integrate(lo, mid, &mut *f);
    let right = rule.integrate(mid, hi, &mut *f);
    let refined = left + right;
    if (refined - whole).abs() <= tol {
        return Ok(refined);
    }
    if depth == 0 {
        return Err(Error::Quadrature(format!(
            "adaptive Gauss on [{lo:.3e}, {hi:.3e}] stalled (increment {:.3e})",
            (refined - whole).abs()
        )));
    }
    Ok(adaptive_step(rule, lo, mid, left, 0.5 * tol, depth - 1, f)?
        + adaptive_step(rule, mid, hi, right, 0.5 * tol, depth - 1, f)?)
}

/// Integral over `(0, len]` of a function singular (but integrable) at 0,
/// by dyadic panels `[len 2^{-j-1}, len 2^{-j}]` until a panel contributes
/// less than `tol * |total|`.
pub fn dyadic_to_zero<F: FnMut(f64) -> f64>(
    rule: &GaussLegendre,
    len: f64,
    tol: f64,
    max_levels: usize,
    mut f: F,
) -> Result<f64> {
    let mut total = 0.0;
    let mut hi = len;
    for _ in 0..max_levels {
        let lo = 0.5 * hi;
        let inc = rule.integrate(lo, hi, &mut f);
        total += inc;
        if inc.abs() <= tol * total.abs().max(f64::MIN_POSITIVE) {
            return Ok(total);
        }
        hi = lo;
    }
    Err(Error::Quadrature(format!(
        "dyadic refinement toward the singular endpoint did not settle in {max_levels} levels"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_polynomials() {
        let g = GaussLegendre::new(5);
        // degree 9 is integrated exactly
        let v = g.integrate(0.0, 2.0, |x| x.powi(9));
        assert!((v - 2f64.powi(10) / 10.0).abs() < 1e-11);
        let w: f64 = g.weights.iter().sum();
        assert!((w - 2.0).abs() < 1e-14);
    }

    #[test]
    fn high_order_nodes_are_accurate() {
        let g = GaussLegendre::new(40);
        let v = g.integrate(0.0, 1.0, |x| x.exp());
        assert!((v - (1f64.exp() - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn dyadic_handles_endpoint_singularity() {
        let g = GaussLegendre::new(10);
        // int_0^1 x^{-0.6} dx = 2.5
        let v = dyadic_to_zero(&g, 1.0, 1e-13, 200, |x| x.powf(-0.6)).unwrap();
        assert!((v - 2.5).abs() < 1e-10, "{v}");
    }

    #[test]
    fn adaptive_handles_kink() {
        let g = GaussLegendre::new(6);
        let mut f = |x: f64| (x - 0.3).abs();
        let v = adaptive(&g, 0.0, 1.0, 1e-12, 40, &mut f).unwrap();
        assert!((v - (0.045 + 0.245)).abs() < 1e-11);
    }
}
