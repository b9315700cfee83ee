//! Gaussian quadrature rules (Golub-Welsch) and adaptive 1-D integration.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Nodes and normalized weights of a Gaussian quadrature rule. The weights
/// are divided by the total mass of the weight function, so they sum to 1
/// and integrals against the normalized weight function become plain
/// weighted sums.
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

fn golub_welsch(diag: &[f64], offdiag: &[f64]) -> GaussRule {
    let n = diag.len();
    let mut jac = DMatrix::zeros(n, n);
    for i in 0..n {
        jac[(i, i)] = diag[i];
    }
    for i in 0..n - 1 {
        jac[(i, i + 1)] = offdiag[i];
        jac[(i + 1, i)] = offdiag[i];
    }
    let eig = jac.clone().symmetric_eigen();
    // nalgebra can mispair eigenvalues and eigenvectors for close
    // eigenvalues; recover each node from the Rayleigh quotient of its
    // eigenvector instead.
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let u = eig.eigenvectors.column(i);
            let node = u.dot(&(&jac * u)) / u.dot(&u);
            let first = u[0];
            (node, first * first)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    GaussRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Generalized Gauss-Laguerre rule for the weight x^alpha e^{-x} on (0, inf),
/// normalized by Gamma(alpha + 1).
pub fn gauss_laguerre(n: usize, alpha: f64) -> Result<GaussRule> {
    if n < 1 {
        return Err(Error::InvalidParameter("need at least one node".into()));
    }
    if alpha <= -1.0 {
        return Err(Error::InvalidParameter(format!(
            "Laguerre exponent alpha must exceed -1, got {alpha}"
        )));
    }
    let diag: Vec<f64> = (0..n).map(|i| 2.0 * i as f64 + alpha + 1.0).collect();
    let offdiag: Vec<f64> = (1..n)
        .map(|i| (i as f64 * (i as f64 + alpha)).sqrt())
        .collect();
    Ok(golub_welsch(&diag, &offdiag))
}

/// Gauss-Hermite rule for the weight e^{-x^2}, normalized by sqrt(pi).
pub fn gauss_hermite(n: usize) -> Result<GaussRule> {
    if n < 1 {
        return Err(Error::InvalidParameter("need at least one node".into()));
    }
    let diag = vec![0.0; n];
    let offdiag: Vec<f64> = (1..n).map(|i| (i as f64 / 2.0).sqrt()).collect();
    Ok(golub_welsch(&diag, &offdiag))
}

/// Quadrature rule for the chi-square-type weight z^{N/2-1} e^{-z/2},
/// normalized to a probability measure. Built from a generalized Laguerre
/// rule via z = 2t.
pub fn chi_square_rule(n: usize, big_n: f64) -> Result<GaussRule> {
    let rule = gauss_laguerre(n, big_n / 2.0 - 1.0)?;
    Ok(GaussRule {
        nodes: rule.nodes.iter().map(|t| 2.0 * t).collect(),
        weights: rule.weights,
    })
}

/// Quadrature rule for the Gaussian weight sqrt(N/2pi) e^{-N u^2 / 2},
/// normalized to a probability measure.
pub fn gaussian_rule(n: usize, big_n: f64) -> Result<GaussRule> {
    let rule = gauss_hermite(n)?;
    let scale = (2.0 / big_n).sqrt();
    Ok(GaussRule {
        nodes: rule.nodes.iter().map(|s| scale * s).collect(),
        weights: rule.weights,
    })
}

const SIMPSON_MAX_DEPTH: usize = 48;

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> (f64, f64) {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let err = (left + right - whole) / 15.0;
    // the second bound stops refinement once the error estimate is pure
    // roundoff noise relative to the panel value, which an absolute
    // tolerance far below machine precision would otherwise chase forever
    let noise_floor = 4.0 * f64::EPSILON * (left.abs() + right.abs());
    if depth >= SIMPSON_MAX_DEPTH || err.abs() <= tol.max(noise_floor) {
        (left + right + err, err.abs())
    } else {
        let (vl, el) = adaptive_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth + 1);
        let (vr, er) = adaptive_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth + 1);
        (vl + vr, el + er)
    }
}

/// Adaptive Simpson integration of `f` on [a, b] with absolute tolerance
/// `tol`. Returns the integral and an error estimate. The interval is first
/// split into fixed panels so localized features are not missed by the
/// coarse initial sampling.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> (f64, f64) {
    if a == b {
        return (0.0, 0.0);
    }
    const PANELS: usize = 16;
    let h = (b - a) / PANELS as f64;
    let mut total = 0.0;
    let mut err = 0.0;
    for i in 0..PANELS {
        let x0 = a + i as f64 * h;
        let x1 = if i == PANELS - 1 { b } else { x0 + h };
        let m = 0.5 * (x0 + x1);
        let fa = f(x0);
        let fm = f(m);
        let fb = f(x1);
        let whole = simpson(fa, fm, fb, x1 - x0);
        let (v, e) =
            adaptive_step(f, x0, x1, fa, fm, fb, whole, tol / PANELS as f64, 0);
        total += v;
        err += e;
    }
    (total, err)
}

/// Trapezoidal integral of tabulated values on an ascending grid.
pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::ln_gamma;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn laguerre_weights_normalized() {
        for &(n, alpha) in &[(8, 0.0), (32, 1.1), (64, 2.5), (64, -0.5)] {
            let rule = gauss_laguerre(n, alpha).unwrap();
            let total: f64 = rule.weights.iter().sum();
            assert_relative_eq!(total, 1.0, max_relative = 1e-12);
            // first moment of normalized weight is alpha + 1
            let m1: f64 = rule
                .nodes
                .iter()
                .zip(&rule.weights)
                .map(|(x, w)| x * w)
                .sum();
            assert_relative_eq!(m1, alpha + 1.0, max_relative = 1e-10);
        }
    }

    #[test]
    fn hermite_moments() {
        let rule = gauss_hermite(40).unwrap();
        let m0: f64 = rule.weights.iter().sum();
        let m2: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(x, w)| x * x * w)
            .sum();
        assert_relative_eq!(m0, 1.0, max_relative = 1e-12);
        assert_relative_eq!(m2, 0.5, max_relative = 1e-10);
    }

    #[test]
    fn chi_square_rule_mean_is_n() {
        let rule = chi_square_rule(64, 5.0).unwrap();
        let mean: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(z, w)| z * w)
            .sum();
        assert_relative_eq!(mean, 5.0, max_relative = 1e-10);
    }

    #[test]
    fn gaussian_rule_variance() {
        let rule = gaussian_rule(48, 4.2).unwrap();
        let var: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(u, w)| u * u * w)
            .sum();
        assert_relative_eq!(var, 1.0 / 4.2, max_relative = 1e-10);
    }

    #[test]
    fn adaptive_simpson_gaussian_integral() {
        let f = |x: f64| (-x * x / 2.0).exp();
        let (val, _) = adaptive_simpson(&f, -10.0, 10.0, 1e-13);
        assert_relative_eq!(val, (2.0 * PI).sqrt(), max_relative = 1e-11);
    }

    #[test]
    fn trapezoid_linear_exact() {
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let vals: Vec<f64> = grid.iter().map(|x| 2.0 * x).collect();
        assert_relative_eq!(trapezoid(&grid, &vals), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn ln_gamma_sanity() {
        assert_relative_eq!(ln_gamma(5.0), 24.0_f64.ln(), max_relative = 1e-13);
    }
}
