//! Radial kernel evaluation for the one-dimensional operator.

use crate::params::{CustomKernel, KernelSpec};

#[derive(Clone, Debug)]
pub enum Kernel {
    /// `|z|^{-(N+2s)}`.
    Power { exponent: f64 },
    /// Log-log interpolated table with power-law continuation of `exponent`.
    Table {
        radii: Vec<f64>,
        values: Vec<f64>,
        slopes: Vec<f64>,
        exponent: f64,
    },
}

/// `int_u^v c r^alpha dr` for `0 < u <= v`.
fn power_integral(c: f64, alpha: f64, u: f64, v: f64) -> f64 {
    if (alpha + 1.0).abs() < 1e-14 {
        c * (v / u).ln()
    } else {
        c * (v.powf(alpha + 1.0) - u.powf(alpha + 1.0)) / (alpha + 1.0)
    }
}

impl Kernel {
    pub fn new(spec: &KernelSpec, s: f64, n: f64) -> Self {
        let exponent = -(n + 2.0 * s);
        match spec {
            KernelSpec::Fractional => Kernel::Power { exponent },
            KernelSpec::Custom(CustomKernel { radii, values }) => {
                let slopes = radii
                    .windows(2)
                    .zip(values.windows(2))
                    .map(|(r, k)| (k[1] / k[0]).ln() / (r[1] / r[0]).ln())
                    .collect();
                Kernel::Table {
                    radii: radii.clone(),
                    values: values.clone(),
                    slopes,
                    exponent,
                }
            }
        }
    }

    pub fn is_power(&self) -> bool {
        matches!(self, Kernel::Power { .. })
    }

    /// `K(r)` for `r > 0`.
    pub fn value(&self, r: f64) -> f64 {
        match self {
            Kernel::Power { exponent } => r.powf(*exponent),
            Kernel::Table { radii, values, slopes, exponent } => {
                let last = radii.len() - 1;
                if r <= radii[0] {
                    values[0] * (r / radii[0]).powf(*exponent)
                } else if r >= radii[last] {
                    values[last] * (r / radii[last]).powf(*exponent)
                } else {
                    let i = radii.partition_point(|&x| x <= r) - 1;
                    values[i] * (r / radii[i]).powf(slopes[i])
                }
            }
        }
    }

    /// One-sided tail `int_d^inf K(r) dr`, `d > 0`.
    pub fn tail(&self, d: f64) -> f64 {
        match self {
            Kernel::Power { exponent } => d.powf(exponent + 1.0) / -(exponent + 1.0),
            Kernel::Table { radii, values, slopes, exponent } => {
                let last = radii.len() - 1;
                let far = |from: f64| {
                    // values[last] (r/r_last)^exponent on [from, inf)
                    values[last] * radii[last].powf(-exponent) * from.powf(exponent + 1.0)
                        / -(exponent + 1.0)
                };
                if d >= radii[last] {
                    return far(d);
                }
                let mut total = far(radii[last]);
                let mut lo = d;
                if d < radii[0] {
                    let c = values[0] * radii[0].powf(-exponent);
                    total += power_integral(c, *exponent, d, radii[0]);
                    lo = radii[0];
                }
                let start = radii.partition_point(|&x| x <= lo).saturating_sub(1);
                for i in start..last {
                    let u = lo.max(radii[i]);
                    let v = radii[i + 1];
                    if v <= u {
                        continue;
                    }
                    let c = values[i] * radii[i].powf(-slopes[i]);
                    total += power_integral(c, slopes[i], u, v);
                }
                total
            }
        }
    }
}
