//! Analytic average loss distribution: closed-form per-obligor moments, the
//! (z, u) double quadrature for finite portfolios, the K -> infinity limit
//! law and density-based VaR/ETL.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::ensemble::CorrelationModel;
use crate::error::{Error, Result};
use crate::quadrature::{adaptive_simpson, chi_square_rule, GaussRule};
use crate::special::{ln_norm_cdf, norm_cdf, norm_pdf, LN_SQRT_2PI};

/// Per-obligor contract terms and the common maturity.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioSpec {
    face: Vec<f64>,
    v0: Vec<f64>,
    mu: Vec<f64>,
    rho: Vec<f64>,
    t: f64,
    weights: Vec<f64>,
}

impl PortfolioSpec {
    pub fn new(face: Vec<f64>, v0: Vec<f64>, mu: Vec<f64>, rho: Vec<f64>, t: f64) -> Result<Self> {
        let k = face.len();
        if k == 0 || v0.len() != k || mu.len() != k || rho.len() != k {
            return Err(Error::InvalidParameter(
                "portfolio vectors must be non-empty and of equal length".into(),
            ));
        }
        if face.iter().any(|x| !(*x > 0.0))
            || v0.iter().any(|x| !(*x > 0.0))
            || rho.iter().any(|x| !(*x > 0.0))
        {
            return Err(Error::InvalidParameter(
                "face values, initial values and volatilities must be positive".into(),
            ));
        }
        if !(t > 0.0) {
            return Err(Error::InvalidParameter("maturity T must be positive".into()));
        }
        let total: f64 = face.iter().sum();
        let mut weights: Vec<f64> = face.iter().map(|f| f / total).collect();
        let wsum: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= wsum;
        }
        Ok(Self { face, v0, mu, rho, t, weights })
    }

    /// All obligors share the same contract terms.
    pub fn homogeneous(k: usize, face: f64, v0: f64, mu: f64, rho: f64, t: f64) -> Result<Self> {
        Self::new(vec![face; k], vec![v0; k], vec![mu; k], vec![rho; k], t)
    }

    pub fn len(&self) -> usize {
        self.face.len()
    }

    pub fn is_empty(&self) -> bool {
        self.face.is_empty()
    }

    pub fn face(&self) -> &[f64] {
        &self.face
    }

    pub fn v0(&self) -> &[f64] {
        &self.v0
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn maturity(&self) -> f64 {
        self.t
    }

    /// Loss weights f_k = F_k / sum F_i, renormalized to sum exactly to 1.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_homogeneous(&self) -> bool {
        let f0 = self.face[0];
        let v0 = self.v0[0];
        let m0 = self.mu[0];
        let r0 = self.rho[0];
        self.face.iter().all(|&x| x == f0)
            && self.v0.iter().all(|&x| x == v0)
            && self.mu.iter().all(|&x| x == m0)
            && self.rho.iter().all(|&x| x == r0)
    }

    fn obligor(&self, k: usize) -> Obligor {
        Obligor {
            face: self.face[k],
            v0: self.v0[k],
            mu: self.mu[k],
            rho: self.rho[k],
            t: self.t,
        }
    }
}

/// One obligor's terms, shared by the closed-form and numeric moment paths.
#[derive(Debug, Clone, Copy)]
struct Obligor {
    face: f64,
    v0: f64,
    mu: f64,
    rho: f64,
    t: f64,
}

impl Obligor {
    /// Rescaled default boundary (ln(F/V0) - (mu - rho^2/2) T) / sqrt(z).
    fn hat_f(&self, z: f64) -> f64 {
        ((self.face / self.v0).ln() - (self.mu - 0.5 * self.rho * self.rho) * self.t) / z.sqrt()
    }
}

/// Quadrature scheme for the (z, u) double integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadratureScheme {
    /// Generalized Gauss-Laguerre in z, Gauss-Hermite in u.
    GaussLaguerreHermite,
    /// Doubles node counts until successive VaR_0.999 estimates move by
    /// less than 0.1%.
    Adaptive,
}

#[derive(Debug, Clone, Copy)]
pub struct QuadratureConfig {
    pub z_nodes: usize,
    pub u_nodes: usize,
    pub z_cutoff: f64,
    pub u_cutoff: f64,
    pub scheme: QuadratureScheme,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            z_nodes: 64,
            u_nodes: 64,
            z_cutoff: 400.0,
            u_cutoff: 12.0,
            scheme: QuadratureScheme::GaussLaguerreHermite,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.z_nodes < 8 || self.u_nodes < 8 {
            return Err(Error::InvalidParameter("node counts must be at least 8".into()));
        }
        if !(self.z_cutoff > 0.0) || !(self.u_cutoff > 0.0) {
            return Err(Error::InvalidParameter("cutoffs must be positive".into()));
        }
        Ok(())
    }
}

/// Tabulated average loss density on a grid over [0, 1].
#[derive(Debug, Clone)]
pub struct LossDensity {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// Probability mass of the analytic kernels falling outside [0, 1].
    pub tail_mass: f64,
    /// Key-value metadata echoed into the CSV header.
    pub meta: BTreeMap<String, String>,
}

/// Default loss grid: 2000 uniform points on [0, 1].
pub fn default_loss_grid() -> Vec<f64> {
    let n = 2000;
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Rescaled default boundary for obligor `k` at mixing variable `z`.
pub fn hat_f(k: usize, z: f64, p: &PortfolioSpec) -> Result<f64> {
    if !(z > 0.0) {
        return Err(Error::InvalidParameter(format!("z must be positive, got {z}")));
    }
    Ok(p.obligor(k).hat_f(z))
}

fn check_c_range(m: &CorrelationModel) -> Result<()> {
    if !(0.0..1.0).contains(&m.c()) {
        return Err(Error::InvalidParameter(format!(
            "loss-engine moments require c in [0, 1), got {}",
            m.c()
        )));
    }
    Ok(())
}

/// Closed-form moments m_0, m_1, m_2 of the single-obligor loss fraction at
/// mixing variables (z, u), expressed through the normal cdf. Exponential
/// prefactors are combined with the cdf in log space.
fn closed_moments(ob: &Obligor, z: f64, u: f64, c: f64, n: f64) -> (f64, f64, f64) {
    let t = ob.t;
    let rho = ob.rho;
    let s = rho * (t * (1.0 - c) / n).sqrt(); // std dev of the kernel
    let a = (c * t).sqrt() * u * rho;
    let hat_f = ob.hat_f(z);
    let sqrt_z = z.sqrt();
    let arg0 = (hat_f + a) / s;
    let m0 = norm_cdf(arg0);

    let lv = (ob.v0 / ob.face).ln();
    // first moment: shift sqrt(z) from completing the square
    let e1 = (ob.mu - 0.5 * rho * rho) * t - sqrt_z * a + 0.5 * z * s * s;
    let m1 = m0 - (lv + e1 + ln_norm_cdf(arg0 - sqrt_z * s)).exp();

    // second moment: shift 2 sqrt(z)
    let e2 = 2.0 * ob.mu * t - rho * rho * t - 2.0 * sqrt_z * a + 2.0 * z * s * s;
    let m2 = -m0 + 2.0 * m1 + (2.0 * lv + e2 + ln_norm_cdf(arg0 - 2.0 * sqrt_z * s)).exp();
    (m0, m1, m2)
}

/// d m_1 / d u at (z, u), analytic.
#[cfg(test)]
fn dm1_du(ob: &Obligor, z: f64, u: f64, c: f64, n: f64) -> f64 {
    let t = ob.t;
    let rho = ob.rho;
    let s = rho * (t * (1.0 - c) / n).sqrt();
    let a = (c * t).sqrt() * u * rho;
    let hat_f = ob.hat_f(z);
    let sqrt_z = z.sqrt();
    let arg0 = (hat_f + a) / s;
    let arg1 = arg0 - sqrt_z * s;
    let lv = (ob.v0 / ob.face).ln();
    let e1 = (ob.mu - 0.5 * rho * rho) * t - sqrt_z * a + 0.5 * z * s * s;
    let ct_rho = (c * t).sqrt() * rho;
    let term_phi0 = norm_pdf(arg0) / s;
    let term_cdf1 = sqrt_z * (lv + e1 + ln_norm_cdf(arg1)).exp();
    let term_pdf1 = (lv + e1 - 0.5 * arg1 * arg1 - LN_SQRT_2PI).exp() / s;
    ct_rho * (term_phi0 + term_cdf1 - term_pdf1)
}

/// j-th moment of the loss fraction by adaptive quadrature of the defining
/// integral; the independent cross-check for the closed forms.
pub fn moment_numeric(
    j: u8,
    k: usize,
    z: f64,
    u: f64,
    p: &PortfolioSpec,
    m: &CorrelationModel,
) -> Result<f64> {
    if j > 2 {
        return Err(Error::InvalidParameter("moment order must be 0, 1 or 2".into()));
    }
    check_c_range(m)?;
    if !(z > 0.0) {
        return Err(Error::InvalidParameter("z must be positive".into()));
    }
    let ob = p.obligor(k);
    let c = m.c();
    let n = m.n();
    let t = ob.t;
    let rho = ob.rho;
    let s = rho * (t * (1.0 - c) / n).sqrt();
    let a = (c * t).sqrt() * u * rho;
    let hat_f = ob.hat_f(z);
    let sqrt_z = z.sqrt();
    let drift = (ob.mu - 0.5 * rho * rho) * t;
    let ratio = ob.v0 / ob.face;
    let pref = 1.0 / (s * (2.0 * std::f64::consts::PI).sqrt());
    let integrand = move |v: f64| {
        let gauss = (-(v + a) * (v + a) / (2.0 * s * s)).exp();
        let frac = 1.0 - ratio * (sqrt_z * v + drift).exp();
        pref * frac.powi(j as i32) * gauss
    };
    let lower = (-a).min(hat_f) - 15.0 * s;
    let scale = norm_cdf((hat_f + a) / s).max(1e-300);
    let mut tol = 1e-13 * scale;
    let (mut val, mut err) = adaptive_simpson(&integrand, lower, hat_f, tol);
    // refine when the moment is much smaller than the default probability
    // that set the first tolerance
    if val.abs() < 1e-2 * scale {
        tol = 1e-13 * val.abs().max(1e-300);
        let refined = adaptive_simpson(&integrand, lower, hat_f, tol);
        val = refined.0;
        err = refined.1;
    }
    if err > 1e4 * tol {
        return Err(Error::QuadratureFailure(
            format!("moment m_{j} integral at z={z}, u={u}"),
            err,
        ));
    }
    Ok(val)
}

/// Closed-form j-th moment for obligor `k`.
pub fn moment_closed_form(
    j: u8,
    k: usize,
    z: f64,
    u: f64,
    p: &PortfolioSpec,
    m: &CorrelationModel,
) -> Result<f64> {
    if j > 2 {
        return Err(Error::InvalidParameter("moment order must be 0, 1 or 2".into()));
    }
    check_c_range(m)?;
    if !(z > 0.0) {
        return Err(Error::InvalidParameter("z must be positive".into()));
    }
    let (m0, m1, m2) = closed_moments(&p.obligor(k), z, u, m.c(), m.n());
    Ok(match j {
        0 => m0,
        1 => m1,
        _ => m2,
    })
}

/// Portfolio-level mean M_1 = sum f_k m_1k and variance proxy
/// M_2 = sum f_k^2 (m_2k - m_1k^2) at (z, u).
pub fn big_m(z: f64, u: f64, p: &PortfolioSpec, m: &CorrelationModel) -> Result<(f64, f64)> {
    check_c_range(m)?;
    let c = m.c();
    let n = m.n();
    let mut m1_total = 0.0;
    let mut m2_total = 0.0;
    if p.is_homogeneous() {
        let (_, m1, m2) = closed_moments(&p.obligor(0), z, u, c, n);
        let k = p.len() as f64;
        m1_total = m1;
        m2_total = (m2 - m1 * m1) / k;
    } else {
        for (k, w) in p.weights().iter().enumerate() {
            let (_, m1, m2) = closed_moments(&p.obligor(k), z, u, c, n);
            m1_total += w * m1;
            m2_total += w * w * (m2 - m1 * m1);
        }
    }
    Ok((m1_total, m2_total.max(0.0)))
}

struct KernelNode {
    weight: f64,
    m1: f64,
    m2: f64,
}

/// Discretize the u integral at each z node as an exact-mass mixture: the
/// u axis is partitioned into cells carrying their exact Gaussian weight,
/// with the cell width adapted to the local kernel width sd / |dM1/du| so
/// that narrow kernels in the deep tail stay resolved. Gauss-Hermite nodes
/// cluster near the origin and miss kernels that are much narrower than
/// the node spacing out at u of a few standard deviations.
fn kernel_nodes(
    p: &PortfolioSpec,
    m: &CorrelationModel,
    z_rule: &GaussRule,
    q: &QuadratureConfig,
) -> Result<Vec<KernelNode>> {
    let n = m.n();
    let mut nodes = Vec::new();
    if m.c() == 0.0 {
        // the u integrand is constant for c = 0
        for (&z, &wz) in z_rule.nodes.iter().zip(&z_rule.weights) {
            let (m1, m2) = big_m(z, 0.0, p, m)?;
            nodes.push(KernelNode { weight: wz, m1, m2 });
        }
        return Ok(nodes);
    }
    let u_max = q.u_cutoff / n.sqrt();
    let du_min = 2.0 * u_max / (64 * q.u_nodes) as f64;
    let du_max = 2.0 * u_max / q.u_nodes as f64;
    let sqrt_n = n.sqrt();
    for (&z, &wz) in z_rule.nodes.iter().zip(&z_rule.weights) {
        let mut u = -u_max;
        let (mut m1_left, m2_left) = big_m(z, u, p, m)?;
        let mut sd_left = m2_left.sqrt();
        let mut deriv_est = f64::NAN;
        while u < u_max {
            let du = if deriv_est.is_finite() && deriv_est.abs() > 1e-12 {
                (sd_left / (4.0 * deriv_est.abs())).clamp(du_min, du_max)
            } else {
                du_min
            };
            let u_next = (u + du).min(u_max);
            let u_mid = 0.5 * (u + u_next);
            let (m1_mid, m2_mid) = big_m(z, u_mid, p, m)?;
            let w = wz * (norm_cdf(u_next * sqrt_n) - norm_cdf(u * sqrt_n));
            if w > 0.0 {
                nodes.push(KernelNode { weight: w, m1: m1_mid, m2: m2_mid });
            }
            let (m1_next, m2_next) = big_m(z, u_next, p, m)?;
            deriv_est = (m1_next - m1_left) / (u_next - u);
            m1_left = m1_next;
            sd_left = m2_next.sqrt();
            u = u_next;
        }
    }
    Ok(nodes)
}

fn density_from_nodes(grid: &[f64], nodes: &[KernelNode]) -> (Vec<f64>, f64) {
    let n = grid.len();
    let last = n - 1;
    // Cell edges at the midpoints between grid points. The kernel law is
    // supported on [0,1]; mass leaking past a physical boundary covered by
    // the grid is censored into the boundary cell (its edge extends to
    // infinity), while mass beyond a grid narrower than [0,1] is reported
    // as tail mass. Per-cell masses are exact normal-cdf differences, so
    // the trapezoidal integral over the grid recovers the total mass for
    // kernels of any width, delta-function limits included.
    let mut edges = Vec::with_capacity(n + 1);
    edges.push(if grid[0] <= 0.0 { f64::NEG_INFINITY } else { grid[0] });
    for w in grid.windows(2) {
        edges.push(0.5 * (w[0] + w[1]));
    }
    edges.push(if grid[last] >= 1.0 { f64::INFINITY } else { grid[last] });
    // Each kernel only touches edges within 10 sd of its center; beyond
    // that it contributes its full weight, recorded in a suffix-step array
    // and folded in by a single prefix sum.
    let n_edges = edges.len();
    let mut cdf = vec![0.0; n_edges];
    let mut step = vec![0.0; n_edges + 1];
    for node in nodes {
        let sd = node.m2.sqrt();
        if sd < 1e-150 {
            let i0 = edges.partition_point(|&e| e < node.m1);
            step[i0] += node.weight;
        } else {
            let lo = node.m1 - 10.0 * sd;
            let hi = node.m1 + 10.0 * sd;
            let i_lo = edges.partition_point(|&e| e < lo);
            let i_hi = edges.partition_point(|&e| e <= hi);
            for (i, &e) in edges.iter().enumerate().take(i_hi).skip(i_lo) {
                if e.is_finite() {
                    cdf[i] += node.weight * norm_cdf((e - node.m1) / sd);
                }
            }
            step[i_hi] += node.weight;
        }
    }
    let mut run = 0.0;
    for i in 0..n_edges {
        run += step[i];
        cdf[i] += run;
    }
    let width = |i: usize| -> f64 {
        if i == 0 {
            edges[1] - grid[0]
        } else if i == last {
            grid[last] - edges[last]
        } else {
            edges[i + 1] - edges[i]
        }
    };
    // differences of near-equal cdf values can round to about -1e-16
    let values: Vec<f64> = (0..n)
        .map(|i| ((cdf[i + 1] - cdf[i]) / width(i)).max(0.0))
        .collect();
    let total: f64 = nodes.iter().map(|nd| nd.weight).sum();
    let tail = cdf[0] + (total - cdf[n]);
    (values, tail)
}

fn base_meta(p: &PortfolioSpec, m: &CorrelationModel, q: &QuadratureConfig) -> BTreeMap<String, String> {
    let join = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.16e}"))
            .collect::<Vec<_>>()
            .join(";")
    };
    let mut meta = BTreeMap::new();
    meta.insert("K".into(), p.len().to_string());
    meta.insert("c".into(), format!("{:.16e}", m.c()));
    meta.insert("N".into(), format!("{:.16e}", m.n()));
    meta.insert("T".into(), format!("{:.16e}", p.maturity()));
    if p.is_homogeneous() {
        meta.insert("F".into(), format!("{:.16e}", p.face()[0]));
        meta.insert("V0".into(), format!("{:.16e}", p.v0()[0]));
        meta.insert("mu".into(), format!("{:.16e}", p.mu()[0]));
        meta.insert("rho".into(), format!("{:.16e}", p.rho()[0]));
    } else {
        meta.insert("F".into(), join(p.face()));
        meta.insert("V0".into(), join(p.v0()));
        meta.insert("mu".into(), join(p.mu()));
        meta.insert("rho".into(), join(p.rho()));
    }
    meta.insert("z_nodes".into(), q.z_nodes.to_string());
    meta.insert("u_nodes".into(), q.u_nodes.to_string());
    meta
}

fn avg_loss_density_fixed(
    grid: &[f64],
    p: &PortfolioSpec,
    m: &CorrelationModel,
    q: &QuadratureConfig,
) -> Result<LossDensity> {
    let z_rule = chi_square_rule(q.z_nodes, m.n())?;
    let nodes = kernel_nodes(p, m, &z_rule, q)?;
    let (values, tail) = density_from_nodes(grid, &nodes);
    let mut meta = base_meta(p, m, q);
    meta.insert("kind".into(), "avg_loss_density".into());
    meta.insert("tail_mass".into(), format!("{tail:.16e}"));
    Ok(LossDensity { grid: grid.to_vec(), values, tail_mass: tail, meta })
}

/// Average loss density for a finite portfolio: the Gaussian kernel in
/// (L - M1)^2 / 2 M2 integrated over the chi-square-type z weight and the
/// Gaussian u weight. Supports real-valued N and heterogeneous portfolios.
pub fn avg_loss_density(
    grid: &[f64],
    p: &PortfolioSpec,
    m: &CorrelationModel,
    q: &QuadratureConfig,
) -> Result<LossDensity> {
    q.validate()?;
    check_grid(grid)?;
    match q.scheme {
        QuadratureScheme::GaussLaguerreHermite => avg_loss_density_fixed(grid, p, m, q),
        QuadratureScheme::Adaptive => {
            let mut cfg = *q;
            cfg.scheme = QuadratureScheme::GaussLaguerreHermite;
            let mut density = avg_loss_density_fixed(grid, p, m, &cfg)?;
            let mut prev_var = var_etl_from_density(&density, 0.999)?.0;
            for _ in 0..4 {
                cfg.z_nodes *= 2;
                cfg.u_nodes *= 2;
                let next = avg_loss_density_fixed(grid, p, m, &cfg)?;
                let var = var_etl_from_density(&next, 0.999)?.0;
                let moved = (var - prev_var).abs() / prev_var.max(1e-300);
                density = next;
                if moved < 1e-3 {
                    return Ok(density);
                }
                prev_var = var;
            }
            Err(Error::QuadratureFailure(
                "adaptive node doubling did not stabilize VaR_0.999".into(),
                f64::NAN,
            ))
        }
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::InvalidParameter("loss grid needs at least 2 points".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("loss grid must be strictly ascending".into()));
    }
    if grid[0] < 0.0 || grid[grid.len() - 1] > 1.0 {
        return Err(Error::InvalidParameter("loss grid must lie within [0, 1]".into()));
    }
    Ok(())
}

/// Solve m1(z, u0) = target for u0 by bracketing bisection refined with
/// secant steps. m1 is strictly increasing in u for c in (0, 1).
fn solve_u0(
    ob: &Obligor,
    z: f64,
    target: f64,
    c: f64,
    n: f64,
) -> Result<Option<f64>> {
    let m1_at = |u: f64| closed_moments(ob, z, u, c, n).1;
    let mut b = 10.0 / n.sqrt();
    let mut expansions = 0;
    loop {
        let lo = m1_at(-b);
        let hi = m1_at(b);
        if lo <= target && target <= hi {
            break;
        }
        if expansions >= 60 {
            // target outside the attainable range of m1
            return Ok(None);
        }
        b *= 2.0;
        expansions += 1;
    }
    // plain bisection: m1 varies over hundreds of orders of magnitude in u,
    // which makes secant/false-position steps stagnate at one endpoint
    let mut lo = -b;
    let mut hi = b;
    let mut u = 0.5 * (lo + hi);
    for _ in 0..100 {
        if hi - lo < 1e-14 * u.abs().max(1.0) {
            break;
        }
        u = 0.5 * (lo + hi);
        let fu = m1_at(u) - target;
        if fu == 0.0 {
            return Ok(Some(u));
        }
        if fu < 0.0 {
            lo = u;
        } else {
            hi = u;
        }
    }
    Ok(Some(u))
}

/// Average loss density in the limit K -> infinity for a homogeneous
/// portfolio: the u integral collapses onto the root u0(L, z) of
/// L = m1(z, u0).
pub fn avg_loss_density_limit(
    grid: &[f64],
    p: &PortfolioSpec,
    m_model: &CorrelationModel,
    q: &QuadratureConfig,
) -> Result<LossDensity> {
    q.validate()?;
    check_grid(grid)?;
    check_c_range(m_model)?;
    if !p.is_homogeneous() {
        return Err(Error::InvalidParameter(
            "the K -> infinity limit law requires a homogeneous portfolio".into(),
        ));
    }
    let n = m_model.n();
    let c = m_model.c();
    let ob = p.obligor(0);
    let z_rule = chi_square_rule(q.z_nodes, n)?;
    // monotonicity check of m1 in u, once per z node
    for &z in &z_rule.nodes {
        let b = 10.0 / n.sqrt();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=16 {
            let u = -b + 2.0 * b * i as f64 / 16.0;
            let m1 = closed_moments(&ob, z, u, c, n).1;
            if m1 < prev - 1e-12 {
                return Err(Error::RootFinding(format!(
                    "m1 is not monotone in u at z={z}; root uniqueness violated"
                )));
            }
            prev = prev.max(m1);
        }
    }
    // The limit density has an integrable spike toward L = 0 that pointwise
    // evaluation cannot represent on a fixed grid, so each cell receives its
    // exact probability mass from the semi-analytic distribution function
    // F(L) = sum_z w_z Phi(sqrt(N) u0(z, L)).
    let cdf = |l: f64| -> Result<f64> {
        if l <= 0.0 {
            return Ok(0.0);
        }
        let mut acc = 0.0;
        for (&z, &wz) in z_rule.nodes.iter().zip(&z_rule.weights) {
            match solve_u0(&ob, z, l, c, n)? {
                Some(u0) => acc += wz * norm_cdf(n.sqrt() * u0),
                None => {
                    let b = 10.0 / n.sqrt() * (1 << 20) as f64;
                    if closed_moments(&ob, z, b, c, n).1 < l {
                        acc += wz;
                    }
                }
            }
        }
        Ok(acc)
    };
    let m = grid.len();
    let mut edges = Vec::with_capacity(m + 1);
    edges.push(grid[0]);
    for i in 1..m {
        edges.push(0.5 * (grid[i - 1] + grid[i]));
    }
    edges.push(grid[m - 1]);
    let cdf_at: Vec<f64> = edges
        .par_iter()
        .map(|&e| cdf(e))
        .collect::<Result<Vec<f64>>>()?;
    let mut values = vec![0.0; m];
    for i in 0..m {
        let width = if i == 0 {
            0.5 * (grid[1] - grid[0])
        } else if i == m - 1 {
            0.5 * (grid[m - 1] - grid[m - 2])
        } else {
            0.5 * (grid[i + 1] - grid[i - 1])
        };
        values[i] = ((cdf_at[i + 1] - cdf_at[i]) / width).max(0.0);
    }
    let mut meta = base_meta(p, m_model, q);
    meta.insert("kind".into(), "avg_loss_density_limit".into());
    let tail = (cdf_at[0] + 1.0 - cdf_at[m]).max(0.0);
    meta.insert("tail_mass".into(), format!("{tail:.16e}"));
    Ok(LossDensity { grid: grid.to_vec(), values, tail_mass: tail, meta })
}

/// VaR and ETL from a tabulated density: VaR_alpha is the smallest grid
/// point with trapezoidal CDF >= alpha, ETL the tail-conditional mean.
pub fn var_etl_from_density(d: &LossDensity, alpha: f64) -> Result<(f64, f64)> {
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must be in (0,1), got {alpha}")));
    }
    let n = d.grid.len();
    let mut cdf = vec![0.0; n];
    for i in 1..n {
        cdf[i] = cdf[i - 1]
            + 0.5 * (d.grid[i] - d.grid[i - 1]) * (d.values[i] + d.values[i - 1]);
    }
    let max_alpha = cdf[n - 1];
    let idx = match cdf.iter().position(|&x| x >= alpha) {
        Some(i) => i,
        None => return Err(Error::UnresolvableQuantile { alpha, max_alpha }),
    };
    let var = d.grid[idx];
    // tail integrals from idx to the end
    let mut tail_mass = 0.0;
    let mut tail_first = 0.0;
    for i in idx..n - 1 {
        let h = d.grid[i + 1] - d.grid[i];
        tail_mass += 0.5 * h * (d.values[i] + d.values[i + 1]);
        tail_first +=
            0.5 * h * (d.grid[i] * d.values[i] + d.grid[i + 1] * d.values[i + 1]);
    }
    let etl = if tail_mass > 1e-300 {
        (tail_first / tail_mass).max(var)
    } else {
        var
    };
    Ok((var, etl))
}

impl LossDensity {
    /// CSV with `# key=value` header lines, then `L,density` rows with 17
    /// significant digits.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        for (k, v) in &self.meta {
            writeln!(w, "# {k}={v}")?;
        }
        writeln!(w, "L,density")?;
        for (l, v) in self.grid.iter().zip(&self.values) {
            writeln!(w, "{l:.16e},{v:.16e}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut meta = BTreeMap::new();
        let mut grid = Vec::new();
        let mut values = Vec::new();
        let mut seen_header = false;
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.trim().split_once('=') {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            if !seen_header {
                if line != "L,density" {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        message: format!("expected header 'L,density', got '{line}'"),
                    });
                }
                seen_header = true;
                continue;
            }
            let (a, b) = line.split_once(',').ok_or_else(|| Error::Parse {
                line: lineno + 1,
                message: "expected 'L,density' row".into(),
            })?;
            let l: f64 = a.parse().map_err(|e| Error::Parse {
                line: lineno + 1,
                message: format!("bad loss value: {e}"),
            })?;
            let v: f64 = b.parse().map_err(|e| Error::Parse {
                line: lineno + 1,
                message: format!("bad density value: {e}"),
            })?;
            grid.push(l);
            values.push(v);
        }
        let tail_mass = meta
            .get("tail_mass")
            .and_then(|s| s.parse().ok())
            .unwrap_or(0.0);
        Ok(Self { grid, values, tail_mass, meta })
    }
}
