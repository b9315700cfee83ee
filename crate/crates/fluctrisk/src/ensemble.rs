//! Ensemble-averaged return densities and homogeneous correlation-matrix
//! algebra.
//!
//! The central object is the average of a correlated multivariate normal over
//! a Wishart ensemble of correlation matrices, which turns the Gaussian into
//! a Bessel-K density controlled by the fluctuation strength `N`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::special::{ln_bessel_k, ln_gamma, LN_SQRT_2PI, SQRT_2PI};

const SYMMETRY_TOL: f64 = 1e-12;

/// Homogeneous average correlation matrix C = (1-c) I + c ee' together with
/// the fluctuation strength N of the Wishart ensemble around it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationModel {
    k: usize,
    c: f64,
    n: f64,
}

impl CorrelationModel {
    /// Positive definiteness requires c < 1 and 1 + (K-1)c > 0.
    pub fn new(k: usize, c: f64, n: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("K must be positive".into()));
        }
        if !(n > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "fluctuation strength N must be positive, got {n}"
            )));
        }
        if c >= 1.0 || 1.0 + (k as f64 - 1.0) * c <= 0.0 {
            return Err(Error::NotPositiveDefinite(format!(
                "homogeneous correlation c={c} outside (-1/(K-1), 1) for K={k}"
            )));
        }
        Ok(Self { k, c, n })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    /// Large eigenvalue 1 + (K-1)c carried by e/sqrt(K).
    pub fn top_eigenvalue(&self) -> f64 {
        1.0 + (self.k as f64 - 1.0) * self.c
    }

    /// The K-1 fold degenerate eigenvalue 1 - c.
    pub fn bulk_eigenvalue(&self) -> f64 {
        1.0 - self.c
    }

    /// Dense K x K matrix form of C.
    pub fn dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.k, self.k, |i, j| if i == j { 1.0 } else { self.c })
    }
}

/// Correlation input: either the two-parameter homogeneous model or an
/// explicit symmetric matrix with unit diagonal.
#[derive(Debug, Clone)]
pub enum Correlation {
    Homogeneous(CorrelationModel),
    Explicit(DMatrix<f64>),
}

impl Correlation {
    pub fn dim(&self) -> usize {
        match self {
            Self::Homogeneous(m) => m.k(),
            Self::Explicit(c) => c.nrows(),
        }
    }
}

/// Covariance Sigma = sigma C sigma, split into per-asset standard
/// deviations and the correlation.
#[derive(Debug, Clone)]
pub struct CovarianceSpec {
    sigma: Vec<f64>,
    correlation: Correlation,
}

impl CovarianceSpec {
    pub fn new(sigma: Vec<f64>, correlation: Correlation) -> Result<Self> {
        if sigma.is_empty() || sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidParameter(
                "standard deviations must be positive".into(),
            ));
        }
        match &correlation {
            Correlation::Homogeneous(m) => {
                if m.k() != sigma.len() {
                    return Err(Error::InvalidParameter(format!(
                        "dimension mismatch: {} sigmas vs K={}",
                        sigma.len(),
                        m.k()
                    )));
                }
            }
            Correlation::Explicit(c) => {
                if !c.is_square() || c.nrows() != sigma.len() {
                    return Err(Error::InvalidParameter(
                        "correlation matrix dimension mismatch".into(),
                    ));
                }
                for i in 0..c.nrows() {
                    if (c[(i, i)] - 1.0).abs() > SYMMETRY_TOL {
                        return Err(Error::InvalidParameter(format!(
                            "correlation diagonal entry {i} is {} (must be 1)",
                            c[(i, i)]
                        )));
                    }
                    for j in 0..i {
                        if (c[(i, j)] - c[(j, i)]).abs() > SYMMETRY_TOL {
                            return Err(Error::InvalidParameter(format!(
                                "correlation matrix asymmetric at ({i},{j})"
                            )));
                        }
                    }
                }
            }
        }
        Ok(Self { sigma, correlation })
    }

    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn correlation(&self) -> &Correlation {
        &self.correlation
    }

    /// Dense covariance matrix sigma C sigma.
    pub fn dense(&self) -> DMatrix<f64> {
        let c = match &self.correlation {
            Correlation::Homogeneous(m) => m.dense(),
            Correlation::Explicit(c) => c.clone(),
        };
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            self.sigma[i] * c[(i, j)] * self.sigma[j]
        })
    }

    /// Quadratic form r' Sigma^{-1} r and ln det Sigma. Uses the analytic
    /// Sherman-Morrison inverse on the homogeneous path and a Cholesky
    /// factorization on the dense path.
    pub fn inv_quadratic_form(&self, r: &[f64]) -> Result<(f64, f64)> {
        if r.len() != self.dim() {
            return Err(Error::InvalidParameter("return vector dimension mismatch".into()));
        }
        let ln_det_sigma: f64 = self.sigma.iter().map(|s| 2.0 * s.ln()).sum();
        match &self.correlation {
            Correlation::Homogeneous(m) => {
                let k = m.k() as f64;
                let c = m.c();
                let y: Vec<f64> = r.iter().zip(&self.sigma).map(|(ri, s)| ri / s).collect();
                let ss: f64 = y.iter().map(|v| v * v).sum();
                let sum: f64 = y.iter().sum();
                let top = 1.0 + (k - 1.0) * c;
                let q = (ss - c * sum * sum / top) / (1.0 - c);
                let ln_det_c = (k - 1.0) * (1.0 - c).ln() + top.ln();
                Ok((q, ln_det_sigma + ln_det_c))
            }
            Correlation::Explicit(cmat) => {
                let chol = cmat.clone().cholesky().ok_or_else(|| {
                    Error::SingularCovariance(
                        "correlation matrix has no Cholesky factorization".into(),
                    )
                })?;
                let y = nalgebra::DVector::from_iterator(
                    r.len(),
                    r.iter().zip(&self.sigma).map(|(ri, s)| ri / s),
                );
                let solved = chol.solve(&y);
                let q = y.dot(&solved);
                let ln_det_c: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
                Ok((q, ln_det_sigma + ln_det_c))
            }
        }
    }
}

/// Exact spectrum of the homogeneous correlation matrix: eigenvalue
/// 1+(K-1)c on e/sqrt(K) and 1-c on its orthogonal complement. The
/// complement is generated by a Householder reflection so the returned
/// matrix is exactly orthogonal.
pub fn homogeneous_correlation_spectrum(
    model: &CorrelationModel,
) -> (Vec<f64>, DMatrix<f64>) {
    let k = model.k();
    let mut eigenvalues = vec![model.bulk_eigenvalue(); k];
    eigenvalues[0] = model.top_eigenvalue();
    if k == 1 || model.c() == 0.0 {
        // C is the identity (or 1x1); any orthonormal basis works.
        if model.c() == 0.0 {
            eigenvalues = vec![1.0; k];
        }
        return (eigenvalues, DMatrix::identity(k, k));
    }
    // Householder H = I - 2 vv'/(v'v) with v = e/sqrt(K) - e1 maps e1 to
    // e/sqrt(K); its columns form the desired orthonormal eigenbasis.
    let invsq = 1.0 / (k as f64).sqrt();
    let mut v: Vec<f64> = vec![invsq; k];
    v[0] -= 1.0;
    let vv: f64 = v.iter().map(|x| x * x).sum();
    let h = DMatrix::from_fn(k, k, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - 2.0 * v[i] * v[j] / vv
    });
    (eigenvalues, h)
}

/// Ensemble-averaged return density: the multivariate normal averaged over
/// Wishart-distributed correlation matrices, a Bessel-K density of order
/// (K - N)/2. Evaluated in log space so large K stays finite. At r = 0 the
/// density diverges for K > N; there the value at the nearest representable
/// quadratic form is returned (the singularity is integrable).
pub fn avg_return_density(r: &[f64], cov: &CovarianceSpec, n: f64) -> Result<f64> {
    if !(n > 0.0) {
        return Err(Error::InvalidParameter(format!("N must be positive, got {n}")));
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("return vector must be finite".into()));
    }
    let k = cov.dim() as f64;
    let (q, ln_det) = cov.inv_quadratic_form(r)?;
    let nu = (k - n) / 2.0;
    // x = sqrt(N r' Sigma^{-1} r); clamp to the nearest representable point.
    let x = (n * q).sqrt().max(1e-150);
    let ln_pref = 0.5 * k * n.ln() - 0.5 * (n - 2.0) * 2.0_f64.ln() - ln_gamma(n / 2.0)
        - 0.5 * (k * (2.0 * std::f64::consts::PI).ln() + ln_det);
    Ok((ln_pref + ln_bessel_k(nu, x) - nu * x.ln()).exp())
}

/// Univariate density of rotated and scaled returns, a Bessel-K marginal of
/// order (N-1)/2 with unit variance. Symmetric in its argument. For N <= 1
/// the density has an integrable singularity at zero (logarithmic at N = 1);
/// there the value at the nearest representable point is returned.
pub fn rotated_scaled_density(r_tilde: f64, n: f64) -> Result<f64> {
    if !(n > 0.0) {
        return Err(Error::InvalidParameter(format!("N must be positive, got {n}")));
    }
    let nu = (n - 1.0) / 2.0;
    let ln_pref =
        0.5 * (1.0 - n) * 2.0_f64.ln() + 0.5 * n.ln() - 0.5 * std::f64::consts::PI.ln()
            - ln_gamma(n / 2.0);
    let x = (n * r_tilde * r_tilde).sqrt();
    if x < 1e-150 {
        if nu > 0.0 {
            // finite limit: x^nu K_nu(x) -> 2^{nu-1} Gamma(nu)
            let ln_lim = (nu - 1.0) * 2.0_f64.ln() + ln_gamma(nu);
            return Ok((ln_pref + ln_lim).exp());
        }
        // divergent at zero: evaluate at the nearest representable point
        let x = 1e-150_f64;
        return Ok((ln_pref + nu * x.ln() + ln_bessel_k(nu, x)).exp());
    }
    Ok((ln_pref + nu * x.ln() + ln_bessel_k(nu, x)).exp())
}

/// Correlated multivariate normal density, the short-horizon building block
/// and the N -> infinity reference.
pub fn multivariate_normal_density(r: &[f64], cov: &CovarianceSpec) -> Result<f64> {
    let k = cov.dim() as f64;
    let (q, ln_det) = cov.inv_quadratic_form(r)?;
    Ok((-0.5 * q - 0.5 * ln_det - k * LN_SQRT_2PI).exp())
}

/// Standard normal density, the N -> infinity limit of the rotated-scaled
/// marginal.
pub fn standard_normal_density(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}
