//! Command-line frontend: reproducible calibration, density, simulation and
//! comparison runs, each writing a manifest with the resolved configuration.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use fluctrisk::ensemble::{Correlation, CorrelationModel};
use fluctrisk::loss::{LossDensity, PortfolioSpec, QuadratureConfig, QuadratureScheme};
use fluctrisk::market::ingest_prices;
use fluctrisk::mcsim::{
    default_alphas, default_leverages, relative_deviation_report, run_simulation,
    sample_var_etl, FluctuationMode, RiskNumbers, SimConfig,
};
use fluctrisk::pipeline::{
    analytic_risk_numbers, density_run, fit_pipeline, simulated_risk_numbers, FitMode,
    PortfolioMode,
};
use fluctrisk::Error;

const OUTPUT_DIR_ENV: &str = "FLUCTRISK_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "fluctrisk", about = "Credit-portfolio risk under fluctuating asset correlations")]
struct Cli {
    /// Output directory; defaults to $FLUCTRISK_OUTPUT_DIR, then the
    /// current directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// JSON config file; command-line flags take precedence over its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker thread cap; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read and clean a price CSV; write the retained panel and a report.
    Ingest {
        #[arg(long)]
        prices: PathBuf,
        /// Drop tickers missing more than this fraction of days.
        #[arg(long)]
        missing_threshold: Option<f64>,
    },
    /// Calibrate (c, N) from a price file.
    Fit {
        #[arg(long)]
        prices: PathBuf,
        /// Return interval in trading days.
        #[arg(long)]
        dt: Option<usize>,
        /// empirical or homogeneous correlation input to the fit.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Analytic average loss density and VaR/ETL block.
    LossDensity {
        #[command(flatten)]
        model: ModelArgs,
        /// Closed-form large-portfolio limit instead of finite K.
        #[arg(long)]
        limit: bool,
        #[arg(long)]
        z_nodes: Option<usize>,
        #[arg(long)]
        u_nodes: Option<usize>,
        /// Refine quadrature until the 99.9% VaR stabilizes.
        #[arg(long)]
        adaptive: bool,
    },
    /// Monte-Carlo loss sample and VaR/ETL block.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        realizations: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Stationary correlation (no fluctuations); otherwise N is the
        /// integer fluctuation strength.
        #[arg(long)]
        stationary: bool,
        /// Analytic density CSV to compare quantiles against.
        #[arg(long)]
        compare_density: Option<PathBuf>,
    },
    /// VaR/ETL table over the leverage and confidence grids.
    RiskReport {
        #[command(flatten)]
        model: ModelArgs,
        /// analytic, limit or simulate.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        realizations: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        stationary: bool,
    },
    /// Relative deviation table between two risk-report CSVs.
    Compare {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        variant: PathBuf,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Number of obligors.
    #[arg(long)]
    k: Option<usize>,
    /// Average asset correlation.
    #[arg(long)]
    c: Option<f64>,
    /// Fluctuation strength.
    #[arg(long)]
    n: Option<f64>,
    /// Face value over initial asset value.
    #[arg(long)]
    leverage: Option<f64>,
    /// Drift in 1/yr.
    #[arg(long)]
    mu: Option<f64>,
    /// Volatility in 1/sqrt(yr).
    #[arg(long)]
    rho: Option<f64>,
    /// Maturity in years.
    #[arg(long)]
    maturity: Option<f64>,
}

struct Resolver {
    config: Map<String, Value>,
    resolved: Map<String, Value>,
}

impl Resolver {
    fn new(path: Option<&Path>) -> Result<Self, Error> {
        let config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                match serde_json::from_str::<Value>(&text) {
                    Ok(Value::Object(map)) => map,
                    Ok(_) => {
                        return Err(Error::Data(format!(
                            "config {} must hold a JSON object",
                            p.display()
                        )))
                    }
                    Err(e) => return Err(Error::Data(format!("config {}: {e}", p.display()))),
                }
            }
            None => Map::new(),
        };
        Ok(Self { config, resolved: Map::new() })
    }

    fn f64(&mut self, key: &str, flag: Option<f64>, default: f64) -> f64 {
        let v = flag
            .or_else(|| self.config.get(key).and_then(Value::as_f64))
            .unwrap_or(default);
        self.resolved.insert(key.into(), json!(v));
        v
    }

    fn usize(&mut self, key: &str, flag: Option<usize>, default: usize) -> usize {
        let v = flag
            .or_else(|| self.config.get(key).and_then(Value::as_u64).map(|x| x as usize))
            .unwrap_or(default);
        self.resolved.insert(key.into(), json!(v));
        v
    }

    fn u64(&mut self, key: &str, flag: Option<u64>, default: u64) -> u64 {
        let v = flag
            .or_else(|| self.config.get(key).and_then(Value::as_u64))
            .unwrap_or(default);
        self.resolved.insert(key.into(), json!(v));
        v
    }

    fn string(&mut self, key: &str, flag: Option<String>, default: &str) -> String {
        let v = flag
            .or_else(|| self.config.get(key).and_then(Value::as_str).map(String::from))
            .unwrap_or_else(|| default.to_string());
        self.resolved.insert(key.into(), json!(v));
        v
    }

    fn bool(&mut self, key: &str, flag: bool) -> bool {
        let v = flag || self.config.get(key).and_then(Value::as_bool).unwrap_or(false);
        self.resolved.insert(key.into(), json!(v));
        v
    }

    fn note(&mut self, key: &str, value: Value) {
        self.resolved.insert(key.into(), value);
    }
}

fn write_manifest(dir: &Path, command: &str, r: &Resolver) -> Result<(), Error> {
    let manifest = json!({
        "command": command,
        "parameters": Value::Object(r.resolved.clone()),
    });
    let path = dir.join(format!("{command}_manifest.json"));
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "{}", serde_json::to_string_pretty(&manifest).expect("manifest is plain JSON"))?;
    Ok(())
}

fn model_from_args(r: &mut Resolver, a: &ModelArgs) -> Result<(PortfolioSpec, CorrelationModel), Error> {
    let k = r.usize("k", a.k, 100);
    let c = r.f64("c", a.c, 0.3);
    let n = r.f64("n", a.n, 5.0);
    let leverage = r.f64("leverage", a.leverage, 0.75);
    let mu = r.f64("mu", a.mu, 0.15);
    let rho = r.f64("rho", a.rho, 0.25);
    let t = r.f64("maturity", a.maturity, 1.0);
    let p = PortfolioSpec::homogeneous(k, leverage, 1.0, mu, rho, t)?;
    let m = CorrelationModel::new(k, c, n)?;
    Ok((p, m))
}

fn write_density(dir: &Path, name: &str, d: &LossDensity) -> Result<PathBuf, Error> {
    let path = dir.join(name);
    let mut f = BufWriter::new(File::create(&path)?);
    d.write_csv(&mut f)?;
    Ok(path)
}

fn write_risk_block(
    dir: &Path,
    name: &str,
    block: &[(f64, f64, f64)],
) -> Result<(), Error> {
    let mut f = BufWriter::new(File::create(dir.join(name))?);
    writeln!(f, "alpha,var,etl")?;
    for (a, v, e) in block {
        writeln!(f, "{a},{v:.16e},{e:.16e}")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    }
    let dir = cli
        .output_dir
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    let mut r = Resolver::new(cli.config.as_deref())?;
    r.note("output_dir", json!(dir.display().to_string()));

    match cli.command {
        Command::Ingest { prices, missing_threshold } => {
            let threshold = r.f64("missing_threshold", missing_threshold, 0.1);
            r.note("prices", json!(prices.display().to_string()));
            let reader = BufReader::new(File::open(&prices)?);
            let (panel, report) = ingest_prices(reader, threshold)?;
            let mut f = BufWriter::new(File::create(dir.join("prices_clean.csv"))?);
            panel.write_csv(&mut f)?;
            let mut rep = BufWriter::new(File::create(dir.join("ingest_report.txt"))?);
            writeln!(rep, "tickers retained      {}", panel.tickers.len())?;
            writeln!(rep, "dates retained        {}", panel.dates.len())?;
            for (t, frac) in &report.dropped_tickers {
                writeln!(rep, "dropped ticker        {t} ({:.1}% missing)", frac * 100.0)?;
            }
            for d in &report.dropped_dates {
                writeln!(rep, "dropped date          {d}")?;
            }
            write_manifest(&dir, "ingest", &r)?;
        }
        Command::Fit { prices, dt, mode } => {
            let dt = r.usize("dt", dt, 1);
            let mode_name = r.string("mode", mode, "empirical");
            let threshold = r.f64("missing_threshold", None, 0.1);
            r.note("prices", json!(prices.display().to_string()));
            let mode = match mode_name.as_str() {
                "empirical" => FitMode::Empirical,
                "homogeneous" => FitMode::Homogeneous,
                other => {
                    return Err(Error::InvalidParameter(format!(
                        "mode must be empirical or homogeneous, got {other:?}"
                    )))
                }
            };
            let reader = BufReader::new(File::open(&prices)?);
            let (panel, _) = ingest_prices(reader, threshold)?;
            let summary = fit_pipeline(&panel, dt, mode)?;
            let text = summary.to_text();
            std::fs::write(dir.join("fit_summary.txt"), &text)?;
            print!("{text}");
            write_manifest(&dir, "fit", &r)?;
        }
        Command::LossDensity { model, limit, z_nodes, u_nodes, adaptive } => {
            let (p, m) = model_from_args(&mut r, &model)?;
            let limit = r.bool("limit", limit);
            let adaptive = r.bool("adaptive", adaptive);
            let mut q = QuadratureConfig::default();
            q.z_nodes = r.usize("z_nodes", z_nodes, q.z_nodes);
            q.u_nodes = r.usize("u_nodes", u_nodes, q.u_nodes);
            if adaptive {
                q.scheme = QuadratureScheme::Adaptive;
            }
            let mode = if limit { PortfolioMode::Limit } else { PortfolioMode::FiniteK };
            let (density, block) = density_run(&p, &m, &q, mode, &default_alphas())?;
            write_density(&dir, "loss_density.csv", &density)?;
            write_risk_block(&dir, "risk_block.csv", &block)?;
            for (a, v, e) in &block {
                println!("alpha {a}: VaR {v:.6} ETL {e:.6}");
            }
            write_manifest(&dir, "loss-density", &r)?;
        }
        Command::Simulate { model, realizations, seed, stationary, compare_density } => {
            let (p, m) = model_from_args(&mut r, &model)?;
            let realizations = r.usize("realizations", realizations, 1_000_000);
            let seed = r.u64("seed", seed, 1);
            let stationary = r.bool("stationary", stationary);
            let mode = if stationary {
                FluctuationMode::Stationary
            } else {
                let n = m.n();
                if n.fract() != 0.0 || n < 1.0 {
                    return Err(Error::InvalidParameter(format!(
                        "simulation requires integer N >= 1, got {n}"
                    )));
                }
                FluctuationMode::Fluctuating(n as u32)
            };
            let cfg = SimConfig::new(
                realizations,
                seed,
                mode,
                p,
                Correlation::Homogeneous(m),
            )?;
            let sample = run_simulation(&cfg)?;
            let histogram = sample.histogram_density();
            write_density(&dir, "loss_sample.csv", &histogram)?;
            let mut block = Vec::new();
            for a in default_alphas() {
                let (v, e) = sample_var_etl(&sample, a)?;
                block.push((a, v, e));
            }
            write_risk_block(&dir, "risk_block.csv", &block)?;
            for (a, v, e) in &block {
                println!("alpha {a}: VaR {v:.6} ETL {e:.6}");
            }
            if let Some(path) = compare_density {
                r.note("compare_density", json!(path.display().to_string()));
                let reference = LossDensity::read_csv(BufReader::new(File::open(&path)?))?;
                println!("comparison against {}", path.display());
                for (a, v, _) in &block {
                    let (rv, _) = fluctrisk::loss::var_etl_from_density(&reference, *a)?;
                    let delta = if rv != 0.0 { (v - rv) / rv * 100.0 } else { f64::NAN };
                    println!("alpha {a}: sample VaR {v:.6} analytic VaR {rv:.6} ({delta:+.2}%)");
                }
            }
            write_manifest(&dir, "simulate", &r)?;
        }
        Command::RiskReport { model, method, realizations, seed, stationary } => {
            let (p, m) = model_from_args(&mut r, &model)?;
            let method = r.string("method", method, "analytic");
            let numbers: RiskNumbers = match method.as_str() {
                "analytic" | "limit" => {
                    let mode = if method == "limit" {
                        PortfolioMode::Limit
                    } else {
                        PortfolioMode::FiniteK
                    };
                    analytic_risk_numbers(
                        &p,
                        &m,
                        &QuadratureConfig::default(),
                        mode,
                        &default_leverages(),
                        &default_alphas(),
                    )?
                }
                "simulate" => {
                    let realizations = r.usize("realizations", realizations, 1_000_000);
                    let seed = r.u64("seed", seed, 1);
                    let stationary = r.bool("stationary", stationary);
                    let mode = if stationary {
                        FluctuationMode::Stationary
                    } else {
                        FluctuationMode::Fluctuating(m.n() as u32)
                    };
                    let cfg = SimConfig::new(
                        realizations,
                        seed,
                        mode,
                        p,
                        Correlation::Homogeneous(m),
                    )?;
                    simulated_risk_numbers(&cfg, &default_leverages(), &default_alphas())?
                }
                other => {
                    return Err(Error::InvalidParameter(format!(
                        "method must be analytic, limit or simulate, got {other:?}"
                    )))
                }
            };
            let mut f = BufWriter::new(File::create(dir.join("risk_report.csv"))?);
            numbers.write_csv(&mut f)?;
            write_manifest(&dir, "risk-report", &r)?;
        }
        Command::Compare { base, variant } => {
            r.note("base", json!(base.display().to_string()));
            r.note("variant", json!(variant.display().to_string()));
            let b = RiskNumbers::read_csv(BufReader::new(File::open(&base)?))?;
            let v = RiskNumbers::read_csv(BufReader::new(File::open(&variant)?))?;
            let report = relative_deviation_report(&b, &v)?;
            std::fs::write(dir.join("deviation_table.csv"), report.to_csv())?;
            let text = report.to_text();
            std::fs::write(dir.join("deviation_table.txt"), &text)?;
            print!("{text}");
            write_manifest(&dir, "compare", &r)?;
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidParameter(_) | Error::Data(_) | Error::Io(_) | Error::Parse { .. } => 2,
        Error::SingularCovariance(_)
        | Error::NotPositiveDefinite(_)
        | Error::QuadratureFailure(_, _)
        | Error::RootFinding(_)
        | Error::UnresolvableQuantile { .. } => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
