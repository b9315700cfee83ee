//! Monte-Carlo simulation of correlated asset values with fluctuating
//! correlations, empirical loss samples, VaR/ETL estimators and relative
//! deviation tables.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;

use crate::ensemble::Correlation;
use crate::error::{Error, Result};
use crate::loss::PortfolioSpec;

/// Finite integer N draws the chi-square mixing variable each realization;
/// the stationary marker disables correlation fluctuations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FluctuationMode {
    Fluctuating(u32),
    Stationary,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub realizations: usize,
    pub seed: u64,
    pub mode: FluctuationMode,
    pub portfolio: PortfolioSpec,
    pub correlation: Correlation,
    /// Reproduce the literal eigenvalue transform (Lambda instead of its
    /// square root). Off by default: only the square root makes the
    /// average sampled covariance match sigma C sigma.
    pub literal_paper_transform: bool,
    /// Realization count above which losses are not stored individually;
    /// only the histogram and a tail reservoir of the largest samples are
    /// kept.
    pub streaming_cap: usize,
    pub histogram_bins: usize,
}

impl SimConfig {
    pub fn new(
        realizations: usize,
        seed: u64,
        mode: FluctuationMode,
        portfolio: PortfolioSpec,
        correlation: Correlation,
    ) -> Result<Self> {
        if realizations == 0 {
            return Err(Error::InvalidParameter("realizations must be at least 1".into()));
        }
        if let FluctuationMode::Fluctuating(0) = mode {
            return Err(Error::InvalidParameter("N must be a positive integer".into()));
        }
        if correlation.dim() != portfolio.len() {
            return Err(Error::InvalidParameter(format!(
                "correlation dimension {} does not match portfolio size {}",
                correlation.dim(),
                portfolio.len()
            )));
        }
        Ok(Self {
            realizations,
            seed,
            mode,
            portfolio,
            correlation,
            literal_paper_transform: false,
            streaming_cap: 2_000_000,
            histogram_bins: 10_000,
        })
    }
}

/// Square-root (or literal) transform of the correlation matrix applied to
/// a standard-normal vector, in place.
pub enum CorrelationTransform {
    /// sqrt(1-c) g + (sqrt(lambda_1) - sqrt(1-c)) mean(g) e, O(K)
    Homogeneous { k: usize, bulk: f64, top: f64 },
    Dense(DMatrix<f64>),
}

impl CorrelationTransform {
    pub fn build(corr: &Correlation, literal: bool) -> Result<Self> {
        match corr {
            Correlation::Homogeneous(m) => {
                let (top, bulk) = if literal {
                    (m.top_eigenvalue(), m.bulk_eigenvalue())
                } else {
                    (m.top_eigenvalue().sqrt(), m.bulk_eigenvalue().sqrt())
                };
                Ok(Self::Homogeneous { k: m.k(), bulk, top })
            }
            Correlation::Explicit(c) => {
                if literal {
                    // the literal transform needs the eigenvalues themselves
                    let eig = c.clone().symmetric_eigen();
                    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
                        return Err(Error::NotPositiveDefinite("explicit correlation has a non-positive eigenvalue".into()));
                    }
                    let mut m = eig.eigenvectors.clone();
                    for (j, l) in eig.eigenvalues.iter().enumerate() {
                        m.column_mut(j).scale_mut(*l);
                    }
                    Ok(Self::Dense(&m * eig.eigenvectors.transpose()))
                } else {
                    // any square root gives the right law; Cholesky is the
                    // numerically safest
                    let chol = c.clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite("explicit correlation is not positive definite".into()))?;
                    Ok(Self::Dense(chol.l()))
                }
            }
        }
    }

    pub fn apply(&self, g: &mut DVector<f64>) {
        match self {
            Self::Homogeneous { k, bulk, top } => {
                let mean = g.sum() / *k as f64;
                let shift = (top - bulk) * mean;
                for x in g.iter_mut() {
                    *x = bulk * *x + shift;
                }
            }
            Self::Dense(m) => {
                let y = m * &*g;
                g.copy_from(&y);
            }
        }
    }
}

/// Empirical loss distribution from a simulation run.
#[derive(Debug, Clone)]
pub struct LossSample {
    /// Individual losses; empty in streaming mode.
    pub losses: Vec<f64>,
    /// Largest observed losses, descending; populated in streaming mode.
    pub tail_reservoir: Vec<f64>,
    pub histogram_edges: Vec<f64>,
    pub histogram_counts: Vec<u64>,
    pub realizations: usize,
    pub seed: u64,
}

const CHUNK: usize = 8192;
/// Per-chunk tail fraction retained in streaming mode; generous relative
/// to the 0.5% global tail so that chunk-local fluctuations cannot drop a
/// global tail sample.
const RESERVOIR_FRACTION: f64 = 0.02;

fn chunk_rng(seed: u64, chunk: u64) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&chunk.to_le_bytes());
    ChaCha12Rng::from_seed(key)
}

/// Asset values at maturity for one realization.
pub fn draw_asset_values<R: Rng>(
    rng: &mut R,
    p: &PortfolioSpec,
    transform: &CorrelationTransform,
    mode: FluctuationMode,
) -> DVector<f64> {
    let k = p.len();
    let scale = match mode {
        FluctuationMode::Fluctuating(n) => {
            let chi = ChiSquared::new(n as f64).expect("valid dof");
            (chi.sample(rng) / n as f64).sqrt()
        }
        FluctuationMode::Stationary => 1.0,
    };
    let mut g = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
    transform.apply(&mut g);
    let t = p.maturity();
    let sqrt_t = t.sqrt();
    DVector::from_fn(k, |i, _| {
        let rho = p.rho()[i];
        let r = rho * sqrt_t * scale * g[i] + (p.mu()[i] - 0.5 * rho * rho) * t;
        p.v0()[i] * r.exp()
    })
}

/// Weighted portfolio loss fraction for one draw of asset values.
pub fn portfolio_loss(v: &DVector<f64>, p: &PortfolioSpec) -> f64 {
    let mut loss = 0.0;
    for (i, w) in p.weights().iter().enumerate() {
        let f = p.face()[i];
        if v[i] < f {
            loss += w * (f - v[i]) / f;
        }
    }
    loss.clamp(0.0, 1.0)
}

struct ChunkResult {
    losses: Vec<f64>,
    counts: Vec<u64>,
}

/// Run the full simulation: deterministic for a given seed regardless of
/// thread count, chunks owning disjoint ChaCha streams keyed by
/// (seed, chunk index).
pub fn run_simulation(cfg: &SimConfig) -> Result<LossSample> {
    let transform = CorrelationTransform::build(&cfg.correlation, cfg.literal_paper_transform)?;
    let bins = cfg.histogram_bins.max(1);
    let streaming = cfg.realizations > cfg.streaming_cap;
    let n_chunks = cfg.realizations.div_ceil(CHUNK);
    let results: Vec<ChunkResult> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let mut rng = chunk_rng(cfg.seed, ci as u64);
            let count = CHUNK.min(cfg.realizations - ci * CHUNK);
            let mut losses = Vec::with_capacity(count);
            let mut counts = vec![0u64; bins];
            for _ in 0..count {
                let v = draw_asset_values(&mut rng, &cfg.portfolio, &transform, cfg.mode);
                let l = portfolio_loss(&v, &cfg.portfolio);
                let bin = ((l * bins as f64) as usize).min(bins - 1);
                counts[bin] += 1;
                losses.push(l);
            }
            if streaming {
                // keep only the chunk's own upper tail
                let keep = ((count as f64 * RESERVOIR_FRACTION).ceil() as usize).max(1);
                losses.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap());
                losses.truncate(keep);
            }
            ChunkResult { losses, counts }
        })
        .collect();
    let mut counts = vec![0u64; bins];
    let mut all_losses = Vec::new();
    for r in &results {
        for (a, b) in counts.iter_mut().zip(&r.counts) {
            *a += b;
        }
        all_losses.extend_from_slice(&r.losses);
    }
    let edges: Vec<f64> = (0..=bins).map(|i| i as f64 / bins as f64).collect();
    let (losses, tail_reservoir) = if streaming {
        all_losses.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap());
        let keep = ((cfg.realizations as f64 * 0.005).ceil() as usize).max(1);
        all_losses.truncate(keep.min(all_losses.len()));
        (Vec::new(), all_losses)
    } else {
        (all_losses, Vec::new())
    };
    Ok(LossSample {
        losses,
        tail_reservoir,
        histogram_edges: edges,
        histogram_counts: counts,
        realizations: cfg.realizations,
        seed: cfg.seed,
    })
}

/// Empirical VaR (lower-interpolation order statistic) and ETL (mean of
/// samples at or above the VaR).
pub fn sample_var_etl(s: &LossSample, alpha: f64) -> Result<(f64, f64)> {
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must be in (0,1), got {alpha}")));
    }
    let n = s.realizations;
    if ((1.0 - alpha) * n as f64) < 100.0 {
        eprintln!(
            "warning: only {:.0} samples beyond alpha={alpha}; tail estimates are noisy",
            (1.0 - alpha) * n as f64
        );
    }
    if !s.losses.is_empty() {
        let mut sorted = s.losses.clone();
        sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        let idx = ((alpha * n as f64).ceil() as usize).clamp(1, n) - 1;
        let var = sorted[idx];
        let tail: Vec<f64> = sorted[idx..].to_vec();
        let etl = tail.iter().sum::<f64>() / tail.len() as f64;
        return Ok((var, etl.max(var)));
    }
    // streaming: the reservoir holds the top samples, descending
    let tail_count = n - ((alpha * n as f64).ceil() as usize).clamp(1, n) + 1;
    if tail_count <= s.tail_reservoir.len() {
        let tail = &s.tail_reservoir[..tail_count];
        let var = tail[tail_count - 1];
        let etl = tail.iter().sum::<f64>() / tail_count as f64;
        return Ok((var, etl.max(var)));
    }
    // alpha below the reservoir depth: fall back to the histogram
    let bins = s.histogram_counts.len();
    let target = (alpha * n as f64).ceil() as u64;
    let mut cum = 0u64;
    let mut var_bin = bins - 1;
    for (i, &c) in s.histogram_counts.iter().enumerate() {
        cum += c;
        if cum >= target {
            var_bin = i;
            break;
        }
    }
    let var = s.histogram_edges[var_bin];
    let mut mass = 0.0;
    let mut first = 0.0;
    for i in var_bin..bins {
        let mid = 0.5 * (s.histogram_edges[i] + s.histogram_edges[i + 1]);
        mass += s.histogram_counts[i] as f64;
        first += s.histogram_counts[i] as f64 * mid;
    }
    let etl = if mass > 0.0 { (first / mass).max(var) } else { var };
    Ok((var, etl))
}

/// Risk numbers over a leverage and confidence grid; `var[i][j]` belongs
/// to leverage i and confidence level j.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskNumbers {
    pub leverages: Vec<f64>,
    pub alphas: Vec<f64>,
    pub var: Vec<Vec<f64>>,
    pub etl: Vec<Vec<f64>>,
}

pub fn default_alphas() -> Vec<f64> {
    vec![0.99, 0.995, 0.999]
}

pub fn default_leverages() -> Vec<f64> {
    vec![0.75, 0.80, 0.85, 0.90]
}

/// Relative deviations in percent, rounded to half points; `None` marks
/// entries with a zero base.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationReport {
    pub leverages: Vec<f64>,
    pub alphas: Vec<f64>,
    pub var: Vec<Vec<Option<f64>>>,
    pub etl: Vec<Vec<Option<f64>>>,
}

fn round_half_point(x: f64) -> f64 {
    (2.0 * x).round() / 2.0
}

fn deviation(base: f64, variant: f64) -> Option<f64> {
    if base == 0.0 {
        None
    } else {
        Some(round_half_point((variant - base) / base * 100.0))
    }
}

/// delta = (variant - base)/base in percent, rounded to 0.5 points.
pub fn relative_deviation_report(base: &RiskNumbers, variant: &RiskNumbers) -> Result<DeviationReport> {
    if base.leverages != variant.leverages || base.alphas != variant.alphas {
        return Err(Error::InvalidParameter(
            "base and variant risk tables must share leverage and alpha grids".into(),
        ));
    }
    let map = |b: &Vec<Vec<f64>>, v: &Vec<Vec<f64>>| {
        b.iter()
            .zip(v)
            .map(|(br, vr)| br.iter().zip(vr).map(|(&b, &v)| deviation(b, v)).collect())
            .collect()
    };
    Ok(DeviationReport {
        leverages: base.leverages.clone(),
        alphas: base.alphas.clone(),
        var: map(&base.var, &variant.var),
        etl: map(&base.etl, &variant.etl),
    })
}

impl DeviationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("measure,leverage");
        for a in &self.alphas {
            out.push_str(&format!(",alpha_{a}"));
        }
        out.push('\n');
        for (name, table) in [("VaR", &self.var), ("ETL", &self.etl)] {
            for (i, lev) in self.leverages.iter().enumerate() {
                out.push_str(&format!("{name},{lev}"));
                for cell in &table[i] {
                    match cell {
                        Some(x) => out.push_str(&format!(",{x}")),
                        None => out.push_str(",undefined"),
                    }
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, table) in [("VaR", &self.var), ("ETL", &self.etl)] {
            out.push_str(&format!("relative deviation of {name} in percent\n"));
            out.push_str("  F/V0  ");
            for a in &self.alphas {
                out.push_str(&format!("{:>10}", format!("{:.1}%", a * 100.0)));
            }
            out.push('\n');
            for (i, lev) in self.leverages.iter().enumerate() {
                out.push_str(&format!("  {lev:<6.2}"));
                for cell in &table[i] {
                    match cell {
                        Some(x) => out.push_str(&format!("{:>10}", format!("{x:+.1}"))),
                        None => out.push_str(&format!("{:>10}", "--")),
                    }
                }
                out.push('\n');
            }
        }
        out
    }
}

impl LossSample {
    /// Histogram as a density table in the loss CSV format.
    pub fn histogram_density(&self) -> crate::loss::LossDensity {
        let bins = self.histogram_counts.len();
        let n = self.realizations as f64;
        let mut grid = Vec::with_capacity(bins);
        let mut values = Vec::with_capacity(bins);
        for i in 0..bins {
            let width = self.histogram_edges[i + 1] - self.histogram_edges[i];
            grid.push(0.5 * (self.histogram_edges[i] + self.histogram_edges[i + 1]));
            values.push(self.histogram_counts[i] as f64 / (n * width));
        }
        let mut meta = std::collections::BTreeMap::new();
        meta.insert("kind".into(), "mc_histogram".into());
        meta.insert("realizations".into(), self.realizations.to_string());
        meta.insert("seed".into(), self.seed.to_string());
        meta.insert("tail_mass".into(), "0".into());
        crate::loss::LossDensity { grid, values, tail_mass: 0.0, meta }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::CorrelationModel;
    use approx::assert_relative_eq;

    fn small_config(k: usize, c: f64, mode: FluctuationMode, draws: usize) -> SimConfig {
        let p = PortfolioSpec::homogeneous(k, 75.0, 100.0, 0.17, 0.35, 1.0).unwrap();
        let m = CorrelationModel::new(
            k,
            c,
            match mode {
                FluctuationMode::Fluctuating(n) => n as f64,
                FluctuationMode::Stationary => 1.0,
            },
        )
        .unwrap();
        SimConfig::new(draws, 7, mode, p, Correlation::Homogeneous(m)).unwrap()
    }

    #[test]
    fn portfolio_loss_examples() {
        let p = PortfolioSpec::homogeneous(2, 100.0, 100.0, 0.1, 0.2, 1.0).unwrap();
        assert_eq!(portfolio_loss(&DVector::from_vec(vec![150.0, 100.0]), &p), 0.0);
        assert_eq!(portfolio_loss(&DVector::from_vec(vec![0.0, 0.0]), &p), 1.0);
        assert_relative_eq!(
            portfolio_loss(&DVector::from_vec(vec![50.0, 150.0]), &p),
            0.25,
            epsilon = 1e-15
        );
    }

    #[test]
    fn tiny_volatility_gives_deterministic_drift() {
        let p = PortfolioSpec::homogeneous(3, 80.0, 100.0, 0.12, 1e-12, 2.0).unwrap();
        let m = CorrelationModel::new(3, 0.3, 5.0).unwrap();
        let transform =
            CorrelationTransform::build(&Correlation::Homogeneous(m), false).unwrap();
        let mut rng = chunk_rng(1, 0);
        let v = draw_asset_values(&mut rng, &p, &transform, FluctuationMode::Fluctuating(5));
        for i in 0..3 {
            assert_relative_eq!(v[i], 100.0 * (0.24_f64).exp(), max_relative = 1e-9);
        }
    }

    #[test]
    fn determinism_same_seed() {
        let cfg = small_config(5, 0.3, FluctuationMode::Fluctuating(5), 20_000);
        let a = run_simulation(&cfg).unwrap();
        let b = run_simulation(&cfg).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.histogram_counts, b.histogram_counts);
    }

    #[test]
    fn histogram_counts_sum_and_range() {
        let cfg = small_config(5, 0.3, FluctuationMode::Fluctuating(5), 12_345);
        let s = run_simulation(&cfg).unwrap();
        assert_eq!(s.histogram_counts.iter().sum::<u64>(), 12_345);
        assert_eq!(s.losses.len(), 12_345);
        assert!(s.losses.iter().all(|&l| (0.0..=1.0).contains(&l)));
    }

    #[test]
    fn chi_mixture_variance_matches_rho_squared_t() {
        // c=0, N=1, K=1: log-return variance is rho^2 T since E[z] = N
        let p = PortfolioSpec::homogeneous(1, 75.0, 100.0, 0.1, 0.35, 1.0).unwrap();
        let m = CorrelationModel::new(1, 0.0, 1.0).unwrap();
        let transform =
            CorrelationTransform::build(&Correlation::Homogeneous(m), false).unwrap();
        let mut rng = chunk_rng(11, 0);
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let v = draw_asset_values(&mut rng, &p, &transform, FluctuationMode::Fluctuating(1));
            let r = (v[0] / 100.0).ln();
            sum += r;
            sum2 += r * r;
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        assert_relative_eq!(var, 0.35 * 0.35, max_relative = 0.01);
    }

    #[test]
    fn sample_correlation_recovers_c() {
        let p = PortfolioSpec::homogeneous(2, 75.0, 100.0, 0.1, 0.3, 1.0).unwrap();
        let m = CorrelationModel::new(2, 0.5, 1.0).unwrap();
        let transform =
            CorrelationTransform::build(&Correlation::Homogeneous(m), false).unwrap();
        let mut rng = chunk_rng(3, 0);
        let n = 1_000_000;
        let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let v = draw_asset_values(&mut rng, &p, &transform, FluctuationMode::Stationary);
            let x = (v[0] / 100.0).ln();
            let y = (v[1] / 100.0).ln();
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
            sxy += x * y;
        }
        let nf = n as f64;
        let cov = sxy / nf - sx / nf * (sy / nf);
        let vx = sxx / nf - (sx / nf) * (sx / nf);
        let vy = syy / nf - (sy / nf) * (sy / nf);
        let corr = cov / (vx * vy).sqrt();
        assert!((corr - 0.5).abs() < 0.01, "sample correlation {corr}");
    }

    #[test]
    fn transforms_are_square_roots_of_c() {
        // apply each transform to the basis vectors and check T T^t = C
        let k = 7;
        let model = CorrelationModel::new(k, 0.4, 5.0).unwrap();
        let c = model.dense();
        for corr in [
            Correlation::Homogeneous(model.clone()),
            Correlation::Explicit(c.clone()),
        ] {
            let transform = CorrelationTransform::build(&corr, false).unwrap();
            let mut t = DMatrix::zeros(k, k);
            for j in 0..k {
                let mut e = DVector::zeros(k);
                e[j] = 1.0;
                transform.apply(&mut e);
                t.set_column(j, &e);
            }
            let prod = &t * t.transpose();
            for i in 0..k {
                for j in 0..k {
                    assert_relative_eq!(prod[(i, j)], c[(i, j)], epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn empirical_covariance_converges() {
        // stationary draws: covariance of log-returns is sigma C sigma T
        let k = 3;
        let rho = vec![0.2, 0.3, 0.4];
        let p = PortfolioSpec::new(vec![75.0; k], vec![100.0; k], vec![0.1; k], rho.clone(), 1.0)
            .unwrap();
        let m = CorrelationModel::new(k, 0.3, 5.0).unwrap();
        let transform =
            CorrelationTransform::build(&Correlation::Homogeneous(m.clone()), false).unwrap();
        let mut rng = chunk_rng(5, 0);
        let n = 1_000_000;
        let mut mean = DVector::zeros(k);
        let mut second = DMatrix::zeros(k, k);
        for _ in 0..n {
            let v = draw_asset_values(&mut rng, &p, &transform, FluctuationMode::Stationary);
            let r = DVector::from_fn(k, |i, _| (v[i] / 100.0).ln());
            mean += &r;
            second += &r * r.transpose();
        }
        mean /= n as f64;
        second /= n as f64;
        let cov = second - &mean * mean.transpose();
        let c_dense = m.dense();
        for i in 0..k {
            for j in 0..k {
                let expect = rho[i] * rho[j] * c_dense[(i, j)];
                assert_relative_eq!(cov[(i, j)], expect, max_relative = 0.02);
            }
        }
    }

    #[test]
    fn sample_var_etl_examples() {
        let losses: Vec<f64> = (1..=100).map(|i| 0.01 * i as f64).collect();
        let s = LossSample {
            losses,
            tail_reservoir: vec![],
            histogram_edges: vec![0.0, 1.0],
            histogram_counts: vec![100],
            realizations: 100,
            seed: 0,
        };
        let (var, etl) = sample_var_etl(&s, 0.99).unwrap();
        assert_relative_eq!(var, 0.99, epsilon = 1e-12);
        assert_relative_eq!(etl, 0.995, epsilon = 1e-12);

        let s = LossSample {
            losses: vec![0.3; 500],
            tail_reservoir: vec![],
            histogram_edges: vec![0.0, 1.0],
            histogram_counts: vec![500],
            realizations: 500,
            seed: 0,
        };
        let (var, etl) = sample_var_etl(&s, 0.9).unwrap();
        assert_eq!(var, 0.3);
        assert_relative_eq!(etl, 0.3, epsilon = 1e-12);
    }

    #[test]
    fn streaming_matches_in_memory_tail() {
        let mut cfg = small_config(4, 0.3, FluctuationMode::Fluctuating(5), 60_000);
        let full = run_simulation(&cfg).unwrap();
        cfg.streaming_cap = 10_000;
        let streamed = run_simulation(&cfg).unwrap();
        assert!(streamed.losses.is_empty());
        assert_eq!(streamed.histogram_counts, full.histogram_counts);
        for &alpha in &[0.999, 0.996] {
            let (v1, e1) = sample_var_etl(&full, alpha).unwrap();
            let (v2, e2) = sample_var_etl(&streamed, alpha).unwrap();
            assert_relative_eq!(v1, v2, epsilon = 1e-15);
            assert_relative_eq!(e1, e2, epsilon = 1e-12);
        }
    }

    #[test]
    fn fluctuations_fatten_the_tail() {
        let stationary = run_simulation(&small_config(
            50,
            0.3,
            FluctuationMode::Stationary,
            200_000,
        ))
        .unwrap();
        let fluctuating = run_simulation(&small_config(
            50,
            0.3,
            FluctuationMode::Fluctuating(5),
            200_000,
        ))
        .unwrap();
        let (v_s, _) = sample_var_etl(&stationary, 0.999).unwrap();
        let (v_f, _) = sample_var_etl(&fluctuating, 0.999).unwrap();
        assert!(v_f >= v_s, "fluctuating VaR {v_f} < stationary VaR {v_s}");
    }

    #[test]
    fn deviation_report_examples() {
        let base = RiskNumbers {
            leverages: vec![0.75],
            alphas: vec![0.99],
            var: vec![vec![0.10]],
            etl: vec![vec![0.0]],
        };
        let variant = RiskNumbers {
            leverages: vec![0.75],
            alphas: vec![0.99],
            var: vec![vec![0.118]],
            etl: vec![vec![0.1]],
        };
        let report = relative_deviation_report(&base, &variant).unwrap();
        assert_eq!(report.var[0][0], Some(18.0));
        assert_eq!(report.etl[0][0], None);
        let same = relative_deviation_report(&base, &base).unwrap();
        assert_eq!(same.var[0][0], Some(0.0));

        assert_eq!(round_half_point(17.76), 18.0);
        assert_eq!(round_half_point(17.74), 17.5);
    }

    #[test]
    fn histogram_density_normalizes() {
        let cfg = small_config(5, 0.3, FluctuationMode::Fluctuating(5), 50_000);
        let s = run_simulation(&cfg).unwrap();
        let d = s.histogram_density();
        let width = 1.0 / cfg.histogram_bins as f64;
        let mass: f64 = d.values.iter().map(|v| v * width).sum();
        assert_relative_eq!(mass, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn literal_transform_changes_the_law() {
        let mut cfg = small_config(5, 0.3, FluctuationMode::Fluctuating(5), 10_000);
        let base = run_simulation(&cfg).unwrap();
        cfg.literal_paper_transform = true;
        let literal = run_simulation(&cfg).unwrap();
        assert_ne!(base.losses, literal.losses);
    }
}
