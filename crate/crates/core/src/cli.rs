//! The `nested-risk` command line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::estimators::{gns_estimate, gordy_juneja_allocation, regression_estimate, sns_estimate};
use crate::harness::{
    analytic_losses, benchmark_from_losses, fit_loglog_slope, run_macro_study, write_convergence_csv,
    write_report_csv, write_slopes_csv, Benchmark, Cell, EstimatorSpec, ExperimentReport, StudyOptions,
};
use crate::oracle::{sample_gns, sample_sns};
use crate::riskfn::RiskFunction;
use crate::rng::ExperimentSeed;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "nested-risk", version, about = "Nested simulation risk estimators and studies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one estimator once and print one CSV row per risk function.
    Estimate {
        #[arg(long, value_enum)]
        estimator: EstimatorArg,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run a macro-replication study and write its CSVs.
    Experiment {
        #[arg(long, value_enum)]
        study: Study,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, env = "NESTED_RISK_THREADS")]
    pub threads: Option<usize>,
    /// Overrides `output.dir`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub macro_reps: Option<usize>,
    /// Suppress the human-readable summary on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Gns,
    Sns,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Study {
    Convergence,
    Coverage,
    Table1,
    Table2,
}

impl Study {
    fn name(&self) -> &'static str {
        match self {
            Study::Convergence => "convergence",
            Study::Coverage => "coverage",
            Study::Table1 => "table1",
            Study::Table2 => "table2",
        }
    }
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        e if e.is_validation() => EXIT_CONFIG,
        Error::Io(_) | Error::Csv(_) => EXIT_IO,
        _ => EXIT_NUMERIC,
    }
}

/// Parses `args`, runs the command and returns the exit code. Errors are
/// reported on stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

struct Context {
    cfg: ExperimentConfig,
    seed: ExperimentSeed,
    out_dir: PathBuf,
    quiet: bool,
}

impl Context {
    fn new(common: &CommonArgs) -> Result<Self> {
        let mut cfg = ExperimentConfig::load(&common.config)?;
        if let Some(seed) = common.seed {
            cfg.harness.seed = seed;
        }
        if let Some(reps) = common.macro_reps {
            if reps == 0 {
                return Err(Error::config("--macro-reps", "must be positive"));
            }
            cfg.harness.macro_reps = reps;
        }
        if let Some(dir) = &common.out_dir {
            cfg.output.dir = dir.display().to_string();
        }
        let out_dir = PathBuf::from(&cfg.output.dir);
        Ok(Context {
            seed: ExperimentSeed(cfg.harness.seed),
            cfg,
            out_dir,
            quiet: common.quiet,
        })
    }

    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    /// Writes the effective config and seed into the output directory.
    fn write_provenance(&self) -> Result<()> {
        fs::create_dir_all(&self.out_dir)?;
        fs::write(self.out_dir.join("effective_config.toml"), self.cfg.to_toml())?;
        fs::write(self.out_dir.join("seed.txt"), format!("{}\n", self.seed.0))?;
        Ok(())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let common = match &cli.command {
        Command::Estimate { common, .. } | Command::Experiment { common, .. } => common,
    };
    if common.threads == Some(0) {
        return Err(Error::config("--threads", "must be positive"));
    }
    let ctx = Context::new(common)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = common.threads {
        pool = pool.num_threads(t);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Estimate { estimator, .. } => cmd_estimate(&ctx, estimator),
        Command::Experiment { study, .. } => cmd_experiment(&ctx, study),
    })
}

const ESTIMATE_HEADER: &str = "estimator,risk_fn,threshold,n,m,rho_hat,std_error,ci_low,ci_high,epsilon";

struct EstimateRow {
    risk: RiskFunction,
    rho_hat: f64,
    std_error: Option<f64>,
    ci: Option<(f64, f64)>,
    epsilon: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.10e}")).unwrap_or_default()
}

/// The benchmark of the configured market problem, restricted to the
/// configured risk functions.
fn market_benchmark(ctx: &Context) -> Result<(crate::payoff::Portfolio, Benchmark)> {
    let cfg = &ctx.cfg;
    let portfolio = cfg.portfolio()?;
    let n = cfg.harness.n_bench;
    if n < crate::harness::MIN_BENCHMARK_SIZE {
        return Err(Error::config(
            "harness.n_bench",
            format!("must be at least {}", crate::harness::MIN_BENCHMARK_SIZE),
        ));
    }
    let losses = analytic_losses(&portfolio, n, &ctx.seed.benchmark());
    let mut bench = benchmark_from_losses(&losses, cfg.risk.quantile, cfg.risk.threshold)?;
    bench.values.retain(|v| cfg.risk.kinds.contains(&v.kind));
    ctx.note(format!(
        "benchmark: n = {n}, x0 = {:.6}, digest {}",
        bench.x0,
        &bench.loss_sample_digest[..16]
    ));
    Ok((portfolio, bench))
}

fn cmd_estimate(ctx: &Context, estimator: EstimatorArg) -> Result<()> {
    let cfg = &ctx.cfg;
    let est = &cfg.estimators;
    let (name, n, m, rows): (&str, usize, usize, Vec<EstimateRow>) = if let Some(d) = &cfg.discrete {
        let problem = d.problem()?;
        let risks: Vec<RiskFunction> = cfg.risk.kinds.iter().map(|&k| RiskFunction::new(k, d.threshold)).collect();
        let stream = ctx.seed.discrete(0);
        match estimator {
            EstimatorArg::Gns => {
                let reports = sample_gns(&problem, &risks, est.gns.n, est.gns.m, &cfg.gns_settings(), &stream)?;
                let rows = reports
                    .iter()
                    .map(|r| EstimateRow {
                        risk: r.risk,
                        rho_hat: r.rho_hat,
                        std_error: Some(r.std_error()),
                        ci: Some(r.ci),
                        epsilon: r.epsilon_used,
                    })
                    .collect();
                ("gns", est.gns.n, est.gns.m, rows)
            }
            EstimatorArg::Sns => {
                let values = sample_sns(&problem, &risks, est.sns.n, est.sns.m_prime, &stream)?;
                let rows = risks
                    .iter()
                    .zip(values)
                    .map(|(&risk, rho_hat)| EstimateRow {
                        risk,
                        rho_hat,
                        std_error: None,
                        ci: None,
                        epsilon: None,
                    })
                    .collect();
                ("sns", est.sns.n, est.sns.m_prime, rows)
            }
            EstimatorArg::Regression => {
                return Err(Error::config("discrete", "the regression estimator needs a market model"));
            }
        }
    } else {
        let (portfolio, bench) = market_benchmark(ctx)?;
        let risks = bench.risks();
        let plain = |risk: RiskFunction, rho_hat: f64| EstimateRow {
            risk,
            rho_hat,
            std_error: None,
            ci: None,
            epsilon: None,
        };
        match estimator {
            EstimatorArg::Gns => {
                let reports = gns_estimate(&portfolio, &risks, est.gns.n, est.gns.m, &cfg.gns_settings(), ctx.seed, 0)?;
                if let Some(r) = reports.first() {
                    let d = &r.diagnostics;
                    ctx.note(format!(
                        "gns: {} pair evaluations, {} inner simulations, max LR {:.3}, ESS {:.1}, {:.2}s",
                        d.pair_evaluations, d.inner_simulations, d.max_likelihood_ratio, d.effective_sample_size, d.seconds
                    ));
                }
                let rows = reports
                    .iter()
                    .map(|r| EstimateRow {
                        risk: r.risk,
                        rho_hat: r.rho_hat,
                        std_error: Some(r.std_error()),
                        ci: Some(r.ci),
                        epsilon: r.epsilon_used,
                    })
                    .collect();
                ("gns", est.gns.n, est.gns.m, rows)
            }
            EstimatorArg::Sns => {
                let reports = sns_estimate(&portfolio, &risks, est.sns.n, est.sns.m_prime, ctx.seed, 0)?;
                let rows = reports.iter().map(|r| plain(r.risk, r.rho_hat)).collect();
                ("sns", est.sns.n, est.sns.m_prime, rows)
            }
            EstimatorArg::Regression => {
                let settings = &est.regression.settings;
                let reports = regression_estimate(&portfolio, &risks, est.regression.n, settings, ctx.seed, 0)?;
                let rows = reports.iter().map(|r| plain(r.risk, r.rho_hat)).collect();
                ("regression", est.regression.n, settings.inner_per_scenario, rows)
            }
        }
    };

    let mut text = String::new();
    writeln!(text, "{ESTIMATE_HEADER}").unwrap();
    for r in &rows {
        writeln!(
            text,
            "{name},{},{:.10e},{n},{m},{:.10e},{},{},{},{}",
            r.risk.kind,
            r.risk.threshold,
            r.rho_hat,
            opt(r.std_error),
            opt(r.ci.map(|c| c.0)),
            opt(r.ci.map(|c| c.1)),
            opt(r.epsilon),
        )
        .unwrap();
        match r.ci {
            Some((lo, hi)) => ctx.note(format!("{:>12}: {:.6} [{lo:.6}, {hi:.6}]", r.risk.kind.name(), r.rho_hat)),
            None => ctx.note(format!("{:>12}: {:.6}", r.risk.kind.name(), r.rho_hat)),
        }
    }
    print!("{text}");
    ctx.write_provenance()?;
    fs::write(ctx.path("estimate.csv"), &text)?;
    Ok(())
}

fn study_cells(cfg: &ExperimentConfig, study: Study) -> Result<Vec<Cell>> {
    let est = &cfg.estimators;
    let gns = est.gns.budgets.iter().map(|&b| Cell::gns(b));
    let cells: Vec<Cell> = match study {
        Study::Table1 | Study::Coverage => gns.collect(),
        Study::Table2 => {
            let inner = est.regression.settings.inner_per_scenario;
            gns.chain(est.sns.allocations.iter().map(|a| Cell::sns(a[0], a[1])))
                .chain(est.regression.budgets.iter().map(|&b| Cell::regression((b / inner).max(1), inner)))
                .collect()
        }
        Study::Convergence => {
            let mut cells: Vec<Cell> = gns.collect();
            for &b in &est.sns.convergence_budgets {
                let (n, m) = gordy_juneja_allocation(b)?;
                cells.push(Cell::sns(n, m));
            }
            cells
        }
    };
    if cells.is_empty() {
        return Err(Error::config("estimators", format!("study {} has no cells", study.name())));
    }
    Ok(cells)
}

fn write_benchmark_csv(bench: &Benchmark, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["risk_fn", "rho", "std_error", "x0", "quantile", "n_bench", "loss_sample_digest"])?;
    for v in &bench.values {
        w.write_record([
            v.kind.name().to_string(),
            format!("{:.10e}", v.rho),
            format!("{:.10e}", v.std_error),
            format!("{:.10e}", bench.x0),
            bench.quantile.to_string(),
            bench.n_bench.to_string(),
            bench.loss_sample_digest.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_convergence(ctx: &Context, report: &ExperimentReport, bench: &Benchmark) -> Result<()> {
    let mut fits = Vec::new();
    for est in [EstimatorSpec::Gns, EstimatorSpec::Sns] {
        for v in &bench.values {
            let pts = report.convergence(est, v.kind);
            if pts.is_empty() {
                continue;
            }
            let budgets: Vec<f64> = pts.iter().map(|p| p.0 as f64).collect();
            let mse: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let fit = match fit_loglog_slope(&budgets, &mse) {
                Ok(f) => Some(f),
                Err(e) => {
                    log::warn!("no slope for {} {}: {e}", est.name(), v.kind);
                    None
                }
            };
            let file = fs::File::create(ctx.path(&format!("convergence_{}_{}.csv", est.name(), v.kind)))?;
            write_convergence_csv(&pts, fit.as_ref(), file)?;
            if let Some(f) = fit {
                ctx.note(format!("{:>4} {:>12}: slope {:.3} ± {:.3}", est.name(), v.kind.name(), f.slope, f.stderr));
                fits.push((est.name().to_string(), v.kind, f));
            }
        }
    }
    write_slopes_csv(&fits, fs::File::create(ctx.path("slopes.csv"))?)
}

fn cmd_experiment(ctx: &Context, study: Study) -> Result<()> {
    let cfg = &ctx.cfg;
    if cfg.discrete.is_some() {
        return Err(Error::config("discrete", "studies run on a market model; remove the [discrete] section"));
    }
    let cells = study_cells(cfg, study)?;
    let (portfolio, bench) = market_benchmark(ctx)?;
    ctx.write_provenance()?;
    write_benchmark_csv(&bench, &ctx.path("benchmark.csv"))?;
    let opts = StudyOptions {
        reps: cfg.harness.macro_reps,
        seed: ctx.seed,
        gns: cfg.gns_settings(),
        regression: cfg.estimators.regression.settings.clone(),
    };
    ctx.note(format!("{}: {} cells × {} reps", study.name(), cells.len(), opts.reps));
    let report = run_macro_study(&portfolio, &bench, &cells, &opts)?;
    write_report_csv(&report.rows, fs::File::create(ctx.path("report.csv"))?)?;
    for r in &report.rows {
        ctx.note(format!(
            "{:>10} {:>12} budget {:>7}: rrmse {:.4} bias {:.4} std {:.4}{}",
            r.estimator,
            r.risk_fn.name(),
            r.budget,
            r.rrmse,
            r.rel_abs_bias,
            r.rel_std,
            r.coverage.map(|c| format!(" coverage {c:.3}")).unwrap_or_default()
        ));
    }
    if study == Study::Convergence {
        write_convergence(ctx, &report, &bench)?;
    }
    if let Some((cell, msg)) = report.failures.first() {
        return Err(Error::NonFinite(format!(
            "{} of {} cells failed; first: {} n={} m={}: {msg}",
            report.failures.len(),
            cells.len(),
            cell.estimator.name(),
            cell.n,
            cell.m
        )));
    }
    Ok(())
}
