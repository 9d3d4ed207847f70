//! Small numerical kernels: cancellation-free elementary functions, the modified
//! Bessel function `I₀ − 1`, Gauss–Legendre rules and a spectral integration matrix.

use num_complex::Complex64;
use std::sync::OnceLock;

/// `sinh(x)/x`, exact at 0.
pub fn sinhc(x: f64) -> f64 {
    if x.abs() < 1e-3 {
        let x2 = x * x;
        1.0 + x2 / 6.0 * (1.0 + x2 / 20.0 * (1.0 + x2 / 42.0))
    } else {
        x.sinh() / x
    }
}

/// `sinh(x)/x − 1` without cancellation.
pub fn sinhc_m1(x: f64) -> f64 {
    if x.abs() < 0.5 {
        let x2 = x * x;
        let mut term = x2 / 6.0;
        let mut sum = term;
        let mut k = 1.0;
        while term.abs() > 1e-18 * sum.abs() {
            term *= x2 / ((2.0 * k + 2.0) * (2.0 * k + 3.0));
            sum += term;
            k += 1.0;
        }
        sum
    } else {
        x.sinh() / x - 1.0
    }
}

/// `cosh(x) − 1 = 2 sinh²(x/2)`.
pub fn cosh_m1(x: f64) -> f64 {
    let s = (0.5 * x).sinh();
    2.0 * s * s
}

/// `eˣ − 1 − x ≥ 0` without cancellation.
pub fn expm1_minus_x(x: f64) -> f64 {
    if x.abs() < 0.5 {
        let mut term = 0.5 * x * x;
        let mut sum = term;
        let mut k = 3.0;
        while term.abs() > 1e-18 * sum.abs() {
            term *= x / k;
            sum += term;
            k += 1.0;
        }
        sum
    } else {
        x.exp_m1() - x
    }
}

/// `sin(z)/z` for complex `z`, exact at 0. Even in `z`, so any square-root branch works.
pub fn csinc(z: Complex64) -> Complex64 {
    if z.norm() < 1e-4 {
        let z2 = z * z;
        Complex64::new(1.0, 0.0) - z2 / 6.0 + z2 * z2 / 120.0
    } else {
        z.sin() / z
    }
}

/// `sinh(z)/z` for complex `z`.
pub fn csinhc(z: Complex64) -> Complex64 {
    if z.norm() < 1e-4 {
        let z2 = z * z;
        Complex64::new(1.0, 0.0) + z2 / 6.0 + z2 * z2 / 120.0
    } else {
        z.sinh() / z
    }
}

/// `I₀(x) − 1`, accurate for small `x`; `+∞` once `I₀` overflows.
pub fn i0m1(x: f64) -> f64 {
    let x = x.abs();
    if x < 20.0 {
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut sum = 0.0;
        let mut k = 1.0;
        loop {
            term *= q / (k * k);
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
            k += 1.0;
        }
        sum
    } else if x > 705.0 {
        f64::INFINITY
    } else {
        // Hankel expansion of e^{-x} I₀(x).
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..12 {
            let odd = (2 * k - 1) as f64;
            term *= odd * odd / (8.0 * k as f64 * x);
            sum += term;
        }
        x.exp() / (2.0 * std::f64::consts::PI * x).sqrt() * sum - 1.0
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            dp = n as f64 * (x * p - p0) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// An `n`-point Gauss–Legendre rule together with the matrix `S` such that
/// `∫_{-1}^{x_i} p = Σ_j S_ij p(x_j)` for every polynomial `p` of degree `< n`.
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub cumulative: Vec<Vec<f64>>,
}

impl GaussRule {
    pub fn new(n: usize) -> Self {
        let (nodes, weights) = gauss_legendre(n);
        let lagrange = |j: usize, t: f64| -> f64 {
            let mut v = 1.0;
            for (k, &xk) in nodes.iter().enumerate() {
                if k != j {
                    v *= (t - xk) / (nodes[j] - xk);
                }
            }
            v
        };
        let mut cumulative = vec![vec![0.0; n]; n];
        for (i, row) in cumulative.iter_mut().enumerate() {
            let half = 0.5 * (nodes[i] + 1.0);
            let mid = 0.5 * (nodes[i] - 1.0);
            for (j, s) in row.iter_mut().enumerate() {
                *s = nodes.iter().zip(&weights).map(|(&t, &w)| w * half * lagrange(j, half * t + mid)).sum();
            }
        }
        GaussRule { nodes, weights, cumulative }
    }
}

/// Shared 8-point rule.
pub fn gauss8() -> &'static GaussRule {
    static RULE: OnceLock<GaussRule> = OnceLock::new();
    RULE.get_or_init(|| GaussRule::new(8))
}

/// `∫_a^b f` by composite 8-point Gauss–Legendre on `pieces` equal sub-intervals.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, pieces: usize) -> f64 {
    let rule = gauss8();
    let h = (b - a) / pieces as f64;
    let mut total = 0.0;
    for p in 0..pieces {
        let mid = a + (p as f64 + 0.5) * h;
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            total += w * f(mid + 0.5 * h * x);
        }
    }
    0.5 * h * total
}

/// Trapezoid rule on a nonuniform grid.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1])).sum()
}

/// `atan(b) − atan(a)` without cancellation for large arguments of equal sign.
pub fn atan_diff(a: f64, b: f64) -> f64 {
    let den = 1.0 + a * b;
    if den > 0.0 {
        ((b - a) / den).atan()
    } else {
        b.atan() - a.atan()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_rule_is_exact_for_polynomials() {
        let (x, w) = gauss_legendre(8);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert_relative_eq!(s, 2.0 / 15.0, epsilon = 1e-14);
    }

    #[test]
    fn cumulative_matrix_integrates_cubic() {
        let r = gauss8();
        for (i, &xi) in r.nodes.iter().enumerate() {
            let s: f64 = r.cumulative[i].iter().zip(&r.nodes).map(|(s, x)| s * x.powi(3)).sum();
            assert_relative_eq!(s, (xi.powi(4) - 1.0) / 4.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn i0m1_matches_both_branches() {
        assert_relative_eq!(i0m1(1e-4), 0.25e-8, max_relative = 1e-8);
        assert_relative_eq!(i0m1(1.0), 0.2660658777520082, max_relative = 1e-14);
        let below = i0m1(19.999999);
        let above = i0m1(20.000001);
        assert_relative_eq!(below, above, max_relative = 1e-5);
        assert_relative_eq!(i0m1(25.0), 5.774560606203e9 - 1.0, max_relative = 1e-10);
    }

    #[test]
    fn expm1_minus_x_is_continuous() {
        assert_relative_eq!(expm1_minus_x(0.4999999), expm1_minus_x(0.5000001), max_relative = 1e-6);
        assert_relative_eq!(expm1_minus_x(1e-6), 0.5e-12 + 1e-18 / 6.0, max_relative = 1e-14);
        assert_relative_eq!(expm1_minus_x(-0.3), (-0.3f64).exp() - 0.7, max_relative = 1e-14);
    }

    #[test]
    fn sinhc_pieces_agree() {
        for &x in &[1e-6, 1e-2, 0.3, 0.49, 0.51, 3.0] {
            assert_relative_eq!(sinhc_m1(x) + 1.0, sinhc(x), max_relative = 1e-15);
        }
        assert_relative_eq!(sinhc_m1(1e-5), 1e-10 / 6.0, max_relative = 1e-10);
    }
}
