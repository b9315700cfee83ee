//! End-to-end runs: calibration from price files, analytic density and
//! simulation sweeps over a leverage grid, and deviation tables between two
//! risk runs.

use std::io::{BufRead, Write};

use crate::ensemble::{Correlation, CorrelationModel, CovarianceSpec};
use crate::error::{Error, Result};
use crate::loss::{
    avg_loss_density, avg_loss_density_limit, default_loss_grid, var_etl_from_density,
    LossDensity, PortfolioSpec, QuadratureConfig,
};
use crate::market::{
    compute_returns, estimate_covariance, fit_n_cramer_von_mises, fit_n_least_squares,
    homogeneous_summary, rotate_scale_returns, default_n_grid, estimate_n_variance_identity,
    NFit, PricePanel, TRADING_YEAR,
};
use crate::mcsim::{
    run_simulation, sample_var_etl, FluctuationMode, RiskNumbers, SimConfig,
};

/// Correlation input for the standardization stage: the empirical matrix as
/// estimated, or its homogeneous substitute with the mean off-diagonal level
/// on every pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMode {
    Empirical,
    Homogeneous,
}

/// Calibration output: portfolio-level parameter block plus the three
/// fluctuation-strength estimates.
#[derive(Debug, Clone)]
pub struct FitSummary {
    pub mode: FitMode,
    pub assets: usize,
    pub observations: usize,
    pub dt_days: usize,
    /// Mean drift in 1/yr.
    pub mu_bar: f64,
    /// Mean volatility in 1/sqrt(yr).
    pub sigma_bar: f64,
    /// Mean off-diagonal correlation.
    pub c_hat: f64,
    pub least_squares: NFit,
    pub cramer_von_mises: NFit,
    pub variance_identity: NFit,
}

impl FitSummary {
    pub fn to_text(&self) -> String {
        let mode = match self.mode {
            FitMode::Empirical => "empirical",
            FitMode::Homogeneous => "homogeneous",
        };
        let mut out = String::new();
        out.push_str(&format!("correlation mode      {mode}\n"));
        out.push_str(&format!("assets K              {}\n", self.assets));
        out.push_str(&format!("observations          {}\n", self.observations));
        out.push_str(&format!("return interval       {} trading days\n", self.dt_days));
        out.push_str(&format!("mean drift mu         {:.4} 1/yr\n", self.mu_bar));
        out.push_str(&format!("mean volatility rho   {:.4} 1/sqrt(yr)\n", self.sigma_bar));
        out.push_str(&format!("mean correlation c    {:.4}\n", self.c_hat));
        for fit in [&self.least_squares, &self.cramer_von_mises, &self.variance_identity] {
            let name = match fit.method {
                crate::market::FitMethod::LeastSquares => "N (least squares)   ",
                crate::market::FitMethod::CramerVonMises => "N (Cramer-von Mises)",
                crate::market::FitMethod::VarianceIdentity => "N (variance identity)",
            };
            let flag = if fit.boundary { "  [grid boundary]" } else { "" };
            out.push_str(&format!("{name}  {:.2}{flag}\n", fit.n_hat));
        }
        out
    }
}

/// Full calibration pipeline: returns, covariance, homogeneous summary,
/// rotation and scaling, then the three estimators of N.
pub fn fit_pipeline(panel: &PricePanel, dt: usize, mode: FitMode) -> Result<FitSummary> {
    let stage = |name: &str, e: Error| Error::Data(format!("{name} stage: {e}"));
    let returns = compute_returns(panel, dt).map_err(|e| stage("returns", e))?;
    let est = estimate_covariance(&returns).map_err(|e| stage("covariance", e))?;
    let c_hat = homogeneous_summary(&est).map_err(|e| stage("covariance", e))?;
    let k = returns.returns.nrows();
    let cov = match mode {
        FitMode::Empirical => est.cov.clone(),
        FitMode::Homogeneous => CovarianceSpec::new(
            est.cov.sigma().to_vec(),
            Correlation::Homogeneous(CorrelationModel::new(k, c_hat, 1.0)?),
        )
        .map_err(|e| stage("homogeneous substitution", e))?,
    };
    let sample = rotate_scale_returns(&returns, &cov).map_err(|e| stage("standardization", e))?;
    let grid = default_n_grid();
    let ls = fit_n_least_squares(&sample, &grid).map_err(|e| stage("least-squares fit", e))?;
    let cvm = fit_n_cramer_von_mises(&sample, &grid)
        .map_err(|e| stage("Cramer-von Mises fit", e))?;
    let vi = estimate_n_variance_identity(&returns, c_hat)
        .map_err(|e| stage("variance-identity fit", e))?;
    let dt_year = dt as f64 / TRADING_YEAR as f64;
    let mu_bar = est.mu_per_day.iter().sum::<f64>() / k as f64 * TRADING_YEAR as f64;
    let sigma_bar = est.rho_per_sqrt_day.iter().sum::<f64>() / k as f64
        * (TRADING_YEAR as f64).sqrt();
    let _ = dt_year;
    Ok(FitSummary {
        mode,
        assets: k,
        observations: returns.returns.ncols(),
        dt_days: dt,
        mu_bar,
        sigma_bar,
        c_hat,
        least_squares: ls,
        cramer_von_mises: cvm,
        variance_identity: vi,
    })
}

/// Finite portfolio size or the closed-form large-portfolio limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PortfolioMode {
    FiniteK,
    Limit,
}

/// Analytic density plus a VaR/ETL block at the given confidence levels.
pub fn density_run(
    p: &PortfolioSpec,
    m: &CorrelationModel,
    q: &QuadratureConfig,
    mode: PortfolioMode,
    alphas: &[f64],
) -> Result<(LossDensity, Vec<(f64, f64, f64)>)> {
    let density = match mode {
        PortfolioMode::FiniteK => avg_loss_density(&default_loss_grid(), p, m, q)?,
        PortfolioMode::Limit => avg_loss_density_limit(&default_loss_grid(), p, m, q)?,
    };
    let mut block = Vec::with_capacity(alphas.len());
    for &a in alphas {
        let (var, etl) = var_etl_from_density(&density, a)?;
        block.push((a, var, etl));
    }
    Ok((density, block))
}

/// VaR/ETL over the full leverage and confidence grid from the analytic
/// density: the portfolio face values are scaled to each leverage F/V0.
pub fn analytic_risk_numbers(
    template: &PortfolioSpec,
    m: &CorrelationModel,
    q: &QuadratureConfig,
    mode: PortfolioMode,
    leverages: &[f64],
    alphas: &[f64],
) -> Result<RiskNumbers> {
    let mut var = Vec::with_capacity(leverages.len());
    let mut etl = Vec::with_capacity(leverages.len());
    for &lev in leverages {
        let p = with_leverage(template, lev)?;
        let (_, block) = density_run(&p, m, q, mode, alphas)?;
        var.push(block.iter().map(|b| b.1).collect());
        etl.push(block.iter().map(|b| b.2).collect());
    }
    Ok(RiskNumbers {
        leverages: leverages.to_vec(),
        alphas: alphas.to_vec(),
        var,
        etl,
    })
}

/// VaR/ETL over the leverage and confidence grid from Monte-Carlo runs; one
/// simulation per leverage, seeds offset by the leverage index.
pub fn simulated_risk_numbers(
    template: &SimConfig,
    leverages: &[f64],
    alphas: &[f64],
) -> Result<RiskNumbers> {
    let mut var = Vec::with_capacity(leverages.len());
    let mut etl = Vec::with_capacity(leverages.len());
    for (i, &lev) in leverages.iter().enumerate() {
        let mut cfg = template.clone();
        cfg.portfolio = with_leverage(&template.portfolio, lev)?;
        cfg.seed = template.seed.wrapping_add(i as u64);
        let sample = run_simulation(&cfg)?;
        let mut vr = Vec::with_capacity(alphas.len());
        let mut er = Vec::with_capacity(alphas.len());
        for &a in alphas {
            let (v, e) = sample_var_etl(&sample, a)?;
            vr.push(v);
            er.push(e);
        }
        var.push(vr);
        etl.push(er);
    }
    Ok(RiskNumbers {
        leverages: leverages.to_vec(),
        alphas: alphas.to_vec(),
        var,
        etl,
    })
}

/// Copy of the portfolio with every face value set to leverage * V0.
pub fn with_leverage(p: &PortfolioSpec, leverage: f64) -> Result<PortfolioSpec> {
    if !(leverage > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "leverage must be positive, got {leverage}"
        )));
    }
    let face: Vec<f64> = p.v0().iter().map(|v| leverage * v).collect();
    PortfolioSpec::new(
        face,
        p.v0().to_vec(),
        p.mu().to_vec(),
        p.rho().to_vec(),
        p.maturity(),
    )
}

impl RiskNumbers {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "measure,leverage,alpha,value")?;
        for (name, table) in [("VaR", &self.var), ("ETL", &self.etl)] {
            for (i, lev) in self.leverages.iter().enumerate() {
                for (j, a) in self.alphas.iter().enumerate() {
                    writeln!(w, "{name},{lev},{a},{:.16e}", table[i][j])?;
                }
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut leverages: Vec<f64> = Vec::new();
        let mut alphas: Vec<f64> = Vec::new();
        let mut cells: Vec<(String, f64, f64, f64)> = Vec::new();
        for (idx, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if idx == 0 || line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 4 {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected 4 fields, got {}", parts.len()),
                });
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| Error::Parse {
                    line: idx + 1,
                    message: format!("bad number {s:?}"),
                })
            };
            let lev = parse(parts[1])?;
            let a = parse(parts[2])?;
            let v = parse(parts[3])?;
            if !leverages.contains(&lev) {
                leverages.push(lev);
            }
            if !alphas.contains(&a) {
                alphas.push(a);
            }
            cells.push((parts[0].to_string(), lev, a, v));
        }
        if cells.is_empty() {
            return Err(Error::Data("risk table is empty".into()));
        }
        let find = |v: &[f64], x: f64| v.iter().position(|&y| y == x).unwrap();
        let mut var = vec![vec![f64::NAN; alphas.len()]; leverages.len()];
        let mut etl = var.clone();
        for (name, lev, a, v) in cells {
            let (i, j) = (find(&leverages, lev), find(&alphas, a));
            match name.as_str() {
                "VaR" => var[i][j] = v,
                "ETL" => etl[i][j] = v,
                other => {
                    return Err(Error::Data(format!("unknown risk measure {other:?}")));
                }
            }
        }
        if var.iter().chain(&etl).flatten().any(|x| x.is_nan()) {
            return Err(Error::Data("risk table has missing cells".into()));
        }
        Ok(Self { leverages, alphas, var, etl })
    }
}

/// Simulation configuration with the stationary marker substituted for the
/// fluctuation mode; everything else identical.
pub fn stationary_variant(cfg: &SimConfig) -> SimConfig {
    let mut out = cfg.clone();
    out.mode = FluctuationMode::Stationary;
    out
}
