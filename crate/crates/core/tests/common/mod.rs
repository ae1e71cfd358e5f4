//! Independent reference computations shared by the integration and
//! acceptance tests. Nothing here calls into the assembly code.
#![allow(dead_code)]

use nalgebra::DMatrix;

/// Tanh-sinh rule on `[lo, hi]` with step `2^{-level}`, returning
/// `(x, weight)` with the endpoint distances computed without cancellation.
pub fn tanh_sinh(lo: f64, hi: f64, level: u32) -> Vec<(f64, f64)> {
    let h = 0.5f64.powi(level as i32);
    let r = 0.5 * (hi - lo);
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut out = Vec::new();
    let kmax = (4.6 / h).ceil() as i64;
    for k in -kmax..=kmax {
        let t = k as f64 * h;
        let u = half_pi * t.sinh();
        let w = half_pi * t.cosh() / u.cosh().powi(2) * h * r;
        if w < 1e-300 {
            continue;
        }
        let x = if t < 0.0 {
            // 1 + tanh(u) = 2 / (1 + e^{-2u})
            lo + r * 2.0 / (1.0 + (-2.0 * u).exp())
        } else {
            hi - r * 2.0 / (1.0 + (2.0 * u).exp())
        };
        if x > lo && x < hi {
            out.push((x, w));
        }
    }
    out
}

pub fn integrate<F: FnMut(f64) -> f64>(lo: f64, hi: f64, level: u32, mut f: F) -> f64 {
    tanh_sinh(lo, hi, level).into_iter().map(|(x, w)| w * f(x)).sum()
}

fn hat(nodes: &[f64], k: usize, x: f64) -> f64 {
    // full-node hat k
    let xk = nodes[k];
    if k > 0 && x >= nodes[k - 1] && x <= xk {
        (x - nodes[k - 1]) / (xk - nodes[k - 1])
    } else if k + 1 < nodes.len() && x >= xk && x <= nodes[k + 1] {
        (nodes[k + 1] - x) / (nodes[k + 1] - xk)
    } else {
        0.0
    }
}

/// `∫_d^∞ r^{-1-2s} dr` by quadrature after `r = d / t`.
pub fn numeric_tail(s: f64, d: f64) -> f64 {
    integrate(0.0, 1.0, 6, |t| d.powf(-2.0 * s) * t.powf(2.0 * s - 1.0))
}

/// Brute-force stiffness for the power kernel `|z|^{-1-2s}` on `nodes`:
/// Ω×Ω part by element-pair tanh-sinh double quadrature (inner integral split
/// at the diagonal), plus the complement part `2∫ φ_i φ_j κ` with `κ` also by
/// quadrature. Returns `(total, tail)` over interior nodes.
pub fn brute_force_stiffness(nodes: &[f64], s: f64, level: u32) -> (DMatrix<f64>, DMatrix<f64>) {
    let ne = nodes.len() - 1;
    let n = ne - 1;
    let kernel = |z: f64| z.abs().powf(-1.0 - 2.0 * s);
    let mut total = DMatrix::zeros(n, n);
    for e in 0..ne {
        for f in 0..ne {
            // full nodes touching either element
            let mut local: Vec<usize> = vec![e, e + 1, f, f + 1];
            local.sort();
            local.dedup();
            local.retain(|&k| k > 0 && k < ne);
            if local.is_empty() {
                continue;
            }
            let m = local.len();
            let mut acc = vec![0.0; m * m];
            for (x, wx) in tanh_sinh(nodes[e], nodes[e + 1], level) {
                let inner = |lo: f64, hi: f64, acc: &mut Vec<f64>| {
                    for (y, wy) in tanh_sinh(lo, hi, level) {
                        let kv = kernel(x - y) * wx * wy;
                        let g: Vec<f64> = local.iter().map(|&k| hat(nodes, k, x) - hat(nodes, k, y)).collect();
                        for a in 0..m {
                            for b in a..m {
                                acc[a * m + b] += g[a] * g[b] * kv;
                            }
                        }
                    }
                };
                if e == f {
                    inner(nodes[f], x, &mut acc);
                    inner(x, nodes[f + 1], &mut acc);
                } else {
                    inner(nodes[f], nodes[f + 1], &mut acc);
                }
            }
            for a in 0..m {
                for b in a..m {
                    let (i, j) = (local[a] - 1, local[b] - 1);
                    total[(i, j)] += acc[a * m + b];
                    if i != j {
                        total[(j, i)] += acc[a * m + b];
                    }
                }
            }
        }
    }
    let (lo, hi) = (nodes[0], nodes[ne]);
    let kappa = |x: f64| numeric_tail(s, x - lo) + numeric_tail(s, hi - x);
    let mut tail = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..(i + 2).min(n) {
            let (k, l) = (i + 1, j + 1);
            let mut v = 0.0;
            for e in (k - 1)..=k {
                if e + 1 < l || e >= l + 1 {
                    continue;
                }
                v += integrate(nodes[e], nodes[e + 1], level, |x| hat(nodes, k, x) * hat(nodes, l, x) * kappa(x));
            }
            tail[(i, j)] = 2.0 * v;
            tail[(j, i)] = 2.0 * v;
        }
    }
    (total + &tail, tail)
}

pub fn uniform_nodes(a: f64, b: f64, n_interior: usize) -> Vec<f64> {
    let m = n_interior + 1;
    (0..=m).map(|i| if i == m { b } else { a + (b - a) * i as f64 / m as f64 }).collect()
}

/// Golden-section maximizer of a unimodal function on `[lo, hi]`.
pub fn golden_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while (hi - lo).abs() > tol * (lo.abs() + hi.abs()).max(1e-300) {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

/// Ordinary least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Continuum best constant of `∬|u(x)−u(y)|²|x−y|^{-N-2s} ≥ S |u|²_{2*}`:
/// the sharp constant for `‖(−Δ)^{s/2}u‖²` times `2 / C(N, s)`.
pub fn sobolev_constant(n: f64, s: f64) -> f64 {
    use statrs::function::gamma::gamma;
    let pi = std::f64::consts::PI;
    let sharp = 2f64.powf(2.0 * s) * pi.powf(s) * gamma((n + 2.0 * s) / 2.0) / gamma((n - 2.0 * s) / 2.0)
        * (gamma(n / 2.0) / gamma(n)).powf(2.0 * s / n);
    let c_ns = s * 2f64.powf(2.0 * s) * gamma((n + 2.0 * s) / 2.0) / (pi.powf(n / 2.0) * gamma(1.0 - s));
    2.0 * sharp / c_ns
}

/// Bisection for a sign change of `f` on `[lo, hi]`.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
