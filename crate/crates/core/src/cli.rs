//! Command-line front end: resolves a run configuration, dispatches to the
//! library and writes CSV tables plus a `manifest.txt`.
//!
//! The manifest is itself a valid config file. Its `#` lines carry run
//! information (version, wall time, summary numbers); its other lines echo
//! every resolved key, so feeding it back with `--config` reproduces the
//! CSV outputs exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::asymptotics::{self, Scaling, TestFunction};
use crate::config::{ConfigMap, Threads};
use crate::density::{self, DensityKind, NoiseParams};
use crate::error::{Error, Result};
use crate::gfunc::{self, Family, GFunction};
use crate::par;
use crate::quad::QuadOptions;
use crate::sampler::{self, Correlation, Reference};
use crate::sde::{self, MarketScenario, Scheme, Signal};
use crate::volatility::{self, VolMode, VolatilityConfig};

/// Fallback for the output directory when neither flag nor config sets it.
pub const OUTPUT_DIR_ENV: &str = "SDLAB_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "sdlab-out";
pub const MANIFEST: &str = "manifest.txt";

#[derive(Parser, Debug)]
#[command(name = "sdlab", version, about = "Supply/demand price dynamics laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CommandArgs,
}

#[derive(Subcommand, Debug)]
pub enum CommandArgs {
    /// Tabulate the exact and Gaussian densities of the price change.
    Density(CommonArgs),
    /// Monte Carlo draws of the price change.
    Sample(CommonArgs),
    /// Simulate price paths of a market scenario.
    Simulate(CommonArgs),
    /// Windowed marginal volatility of simulated or ingested prices.
    Volatility(CommonArgs),
    /// Exact-vs-Gaussian expectation gap over a range of noise levels.
    Converge(CommonArgs),
    /// Empirical, Gaussian and exact upper tails.
    Tails(CommonArgs),
    /// Check the structural axioms of a response function.
    CheckG(CommonArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads, a positive integer or `auto`.
    #[arg(long)]
    pub threads: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Density,
    Sample,
    Simulate,
    Volatility,
    Converge,
    Tails,
    CheckG,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Density => "density",
            Command::Sample => "sample",
            Command::Simulate => "simulate",
            Command::Volatility => "volatility",
            Command::Converge => "converge",
            Command::Tails => "tails",
            Command::CheckG => "check-g",
        }
    }
}

impl CommandArgs {
    fn split(&self) -> (Command, &CommonArgs) {
        match self {
            CommandArgs::Density(a) => (Command::Density, a),
            CommandArgs::Sample(a) => (Command::Sample, a),
            CommandArgs::Simulate(a) => (Command::Simulate, a),
            CommandArgs::Volatility(a) => (Command::Volatility, a),
            CommandArgs::Converge(a) => (Command::Converge, a),
            CommandArgs::Tails(a) => (Command::Tails, a),
            CommandArgs::CheckG(a) => (Command::CheckG, a),
        }
    }
}

/// Whether a failure came from the configuration or from the computation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FailureKind {
    Config,
    Numeric,
}

impl FailureKind {
    pub fn exit_code(self) -> i32 {
        match self {
            FailureKind::Config => 1,
            FailureKind::Numeric => 2,
        }
    }
}

/// An error tagged with the module and operation that raised it.
#[derive(Debug)]
pub struct CliError {
    pub kind: FailureKind,
    pub module: &'static str,
    pub op: &'static str,
    pub source: Error,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let what = match self.kind {
            FailureKind::Config => "configuration error",
            FailureKind::Numeric => "numeric failure",
        };
        write!(f, "{what} in {}::{}: {}", self.module, self.op, self.source)
    }
}

impl std::error::Error for CliError {}

type CliResult<T> = std::result::Result<T, CliError>;

fn cfg<T>(r: Result<T>) -> CliResult<T> {
    r.config("config", "parse_config")
}

trait Context<T> {
    fn config(self, module: &'static str, op: &'static str) -> CliResult<T>;
    fn numeric(self, module: &'static str, op: &'static str) -> CliResult<T>;
}

impl<T> Context<T> for Result<T> {
    fn config(self, module: &'static str, op: &'static str) -> CliResult<T> {
        self.map_err(|source| CliError { kind: FailureKind::Config, module, op, source })
    }

    fn numeric(self, module: &'static str, op: &'static str) -> CliResult<T> {
        self.map_err(|source| CliError { kind: FailureKind::Numeric, module, op, source })
    }
}

/// Simulation or file source for the volatility command.
#[derive(Clone, Debug)]
pub enum PriceSource {
    Ingest(PathBuf),
    Simulate { scenario: MarketScenario, scheme: Scheme, paths: usize },
}

/// Command-specific resolved settings.
#[derive(Clone, Debug)]
pub enum Plan {
    Density { params: NoiseParams, y_min: f64, y_max: f64, n: usize },
    Sample { params: NoiseParams, n: usize, correlation: Correlation, bins: usize },
    Tails { params: NoiseParams, n: usize, k_std: Vec<f64> },
    Converge { base: NoiseParams, sigmas: Vec<f64>, scaling: Scaling, r: TestFunction },
    Simulate { scenario: MarketScenario, scheme: Scheme, paths: usize },
    Volatility { source: PriceSource, cfg: VolatilityConfig },
    CheckG { grid: Vec<f64> },
}

/// A fully resolved run.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub command: Command,
    pub g: GFunction,
    pub seed: u64,
    pub threads: Threads,
    pub output_dir: PathBuf,
    pub plan: Plan,
    /// Every resolved key except `output_dir` and `threads`, which do not
    /// affect the outputs.
    pub echo: BTreeMap<String, String>,
}

/// Resolve a config text for `command`, applying flag overrides.
///
/// Validates everything up front, so no computation starts on a bad config.
pub fn parse_config(command: Command, text: &str, flags: &CommonArgs) -> CliResult<RunConfig> {
    let mut map = ConfigMap::parse(text).config("config", "parse_config")?;
    if let Some(seed) = flags.seed {
        map.set("seed", seed.to_string()).config("config", "parse_config")?;
    }
    if let Some(t) = &flags.threads {
        map.set("threads", t.clone()).config("config", "parse_config")?;
    }
    resolve(command, &map, flags.output_dir.clone())
}

fn resolve(command: Command, map: &ConfigMap, output_flag: Option<PathBuf>) -> CliResult<RunConfig> {
    let family: Family = cfg(map.parsed_or("g.family", "power_diff", "power_diff or odd_power_diff"))?;
    let g = match family {
        Family::PowerDiff => GFunction::power_diff(cfg(map.f64_or("g.q", 1.0))?),
        Family::OddPowerOfDiff => {
            let q = cfg(map.f64_or("g.q", 3.0))?;
            if q.fract() != 0.0 || q < 1.0 || q > u32::MAX as f64 {
                Err(Error::invalid(format!("odd_power_diff needs an odd positive integer q, got {q}")))
            } else {
                GFunction::odd_power_of_diff(q as u32)
            }
        }
    }
    .config("gfunc", "GFunction::new")?;
    let seed = cfg(map.u64_or("seed", 0))?;
    let threads_raw = map.str_opt("threads").unwrap_or_else(|| "auto".into());
    let threads: Threads = threads_raw.parse().map_err(|_| CliError {
        kind: FailureKind::Config,
        module: "config",
        op: "parse_config",
        source: Error::TypeMismatch {
            key: "threads".into(),
            expected: "a positive integer or auto",
            value: threads_raw.clone(),
            line: map.line_of("threads"),
        },
    })?;
    let output_dir = output_flag
        .or_else(|| map.path_opt("output_dir"))
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));

    let params = |default_sigma: Option<f64>| -> CliResult<NoiseParams> {
        let sigma = match default_sigma {
            Some(s) => cfg(map.f64_or("sigma", s))?,
            None => cfg(map.f64_req("sigma"))?,
        };
        let dt = cfg(map.f64_or("dt", 1.0))?;
        let r = cfg(map.f64_or("d_over_s", 1.0))?;
        NoiseParams::new(sigma, dt, r).config("density", "NoiseParams::new")
    };

    let plan = match command {
        Command::Density => {
            let p = params(Some(0.1))?;
            let (center, half) = p.spread(&g);
            let y_min = cfg(map.f64_or("density.y_min", center - 10.0 * half))?;
            let y_max = cfg(map.f64_or("density.y_max", center + 10.0 * half))?;
            let n = cfg(map.usize_or("density.n", 1001))?;
            if !(y_min < y_max) || n < 2 {
                return Err(Error::invalid(format!("density grid needs y_min < y_max and n >= 2, got [{y_min}, {y_max}], n = {n}")))
                    .config("density", "tabulate");
            }
            Plan::Density { params: p, y_min, y_max, n }
        }
        Command::Sample => {
            let p = params(None)?;
            let n = cfg(map.usize_or("sample.n", 100_000))?;
            let rho = map.str_or("sample.rho", "anti");
            let correlation = if rho == "anti" {
                Correlation::Anti
            } else {
                match rho.parse::<f64>() {
                    Ok(v) if (-1.0..1.0).contains(&v) => Correlation::Rho(v),
                    _ => {
                        return Err(Error::TypeMismatch {
                            key: "sample.rho".into(),
                            expected: "`anti` or a number in [-1, 1)",
                            value: rho,
                            line: map.line_of("sample.rho"),
                        })
                        .config("config", "parse_config")
                    }
                }
            };
            let bins = cfg(map.usize_or("sample.bins", 100))?;
            if n == 0 || bins == 0 {
                return Err(Error::invalid("sample.n and sample.bins must be >= 1")).config("sampler", "sample_x3");
            }
            Plan::Sample { params: p, n, correlation, bins }
        }
        Command::Tails => {
            let p = params(None)?;
            let n = cfg(map.usize_or("tails.n", 1_000_000))?;
            let mut k_std = cfg(map.list_or("tails.k_std", &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]))?;
            if n == 0 || k_std.is_empty() {
                return Err(Error::invalid("tails.n and tails.k_std must be nonempty")).config("sampler", "tail_exceedance");
            }
            k_std.sort_by(f64::total_cmp);
            Plan::Tails { params: p, n, k_std }
        }
        Command::Converge => {
            let sigmas = cfg(map.list_or("converge.sigmas", &[0.1, 0.05, 0.025, 0.0125]))?;
            let scaling: Scaling = cfg(map.parsed_or("converge.scaling", "fixed_dt", "fixed_dt or alpha_scaling"))?;
            let r: TestFunction = cfg(map.parsed_or("converge.r", "tanh", "a bounded test function"))?;
            let dt = cfg(map.f64_or("dt", 1.0))?;
            let ratio = cfg(map.f64_or("d_over_s", 1.0))?;
            let base = NoiseParams::new(sigmas.first().copied().unwrap_or(f64::NAN), dt, ratio)
                .config("asymptotics", "convergence_experiment")?;
            Plan::Converge { base, sigmas, scaling, r }
        }
        Command::Simulate => {
            let scenario = scenario(map)?;
            let scheme = scheme(map)?;
            let paths = cfg(map.usize_or("simulate.paths", 1))?;
            if paths == 0 {
                return Err(Error::invalid("simulate.paths must be >= 1")).config("sde", "ensemble");
            }
            Plan::Simulate { scenario, scheme, paths }
        }
        Command::Volatility => {
            let window = cfg(map.usize_or("volatility.window", 64))?;
            let stride = cfg(map.usize_or("volatility.stride", window))?;
            let mode: VolMode = cfg(map.parsed_or("volatility.mode", "vlog", "vp, vpn or vlog"))?;
            let bessel = cfg(map.bool_or("variance.bessel", false))?;
            let vcfg = VolatilityConfig::with_stride(window, stride, mode)
                .config("volatility", "VolatilityConfig::new")?
                .bessel(bessel);
            let source = match map.path_opt("volatility.input") {
                Some(p) => PriceSource::Ingest(p),
                None => {
                    let scenario = scenario(map)?;
                    let scheme = scheme(map)?;
                    let paths = cfg(map.usize_or("volatility.paths", 100))?;
                    if paths == 0 {
                        return Err(Error::invalid("volatility.paths must be >= 1")).config("sde", "ensemble");
                    }
                    PriceSource::Simulate { scenario, scheme, paths }
                }
            };
            Plan::Volatility { source, cfg: vcfg }
        }
        Command::CheckG => {
            let lo = cfg(map.f64_or("check_g.x_min", 0.05))?;
            let hi = cfg(map.f64_or("check_g.x_max", 20.0))?;
            let n = cfg(map.usize_or("check_g.n", 200))?;
            if !(lo > 0.0 && hi > lo) || n < 2 {
                return Err(Error::invalid(format!("check-g grid needs 0 < x_min < x_max and n >= 2, got [{lo}, {hi}], n = {n}")))
                    .config("gfunc", "check_condition_g");
            }
            Plan::CheckG { grid: gfunc::log_grid(lo, hi, n) }
        }
    };

    std::fs::create_dir_all(&output_dir)
        .map_err(Error::from)
        .config("cli", "create_output_dir")?;
    let probe = output_dir.join(".sdlab-write-check");
    std::fs::write(&probe, b"")
        .and_then(|_| std::fs::remove_file(&probe))
        .map_err(Error::from)
        .config("cli", "create_output_dir")?;

    let mut echo = map.resolved();
    echo.remove("output_dir");
    echo.remove("threads");
    echo.insert("seed".into(), seed.to_string());
    Ok(RunConfig { command, g, seed, threads, output_dir, plan, echo })
}

fn scheme(map: &ConfigMap) -> CliResult<Scheme> {
    let s: Scheme = map
        .parsed_or("simulate.scheme", "euler_logp", "euler_p, euler_logp or sym_p")
        .config("config", "parse_config")?;
    if matches!(s, Scheme::DiscreteTatonnement | Scheme::Ingested) {
        return Err(Error::invalid(format!("`{}` cannot be simulated from a scenario", s.as_str()))).config("sde", "simulate_path");
    }
    Ok(s)
}

fn signal(map: &ConfigMap, side: &str) -> CliResult<Signal> {
    let key = |k: &str| format!("scenario.{side}.{k}");
    let kind = map.str_opt(&key("kind")).ok_or_else(|| CliError {
        kind: FailureKind::Config,
        module: "config",
        op: "parse_config",
        source: Error::RequiredKey(key("kind")),
    })?;
    let list = |k: &str| -> CliResult<Vec<f64>> {
        cfg(map.list_opt(&key(k)))?.ok_or_else(|| CliError {
            kind: FailureKind::Config,
            module: "config",
            op: "parse_config",
            source: Error::RequiredKey(key(k)),
        })
    };
    let built = match kind.as_str() {
        "constant" => Ok(Signal::constant(cfg(map.f64_req(&key("value")))?)),
        "sinusoid" => Signal::sinusoid(
            cfg(map.f64_req(&key("mean")))?,
            cfg(map.f64_req(&key("amplitude")))?,
            cfg(map.f64_req(&key("period")))?,
        ),
        "piecewise" => Signal::piecewise(list("times")?, list("values")?),
        "table" => Signal::table(list("times")?, list("values")?),
        "csv" => match map.path_opt(&key("path")) {
            Some(p) => Signal::from_csv(&p),
            None => Err(Error::RequiredKey(key("path"))),
        },
        other => Err(Error::TypeMismatch {
            key: key("kind"),
            expected: "constant, sinusoid, piecewise, table or csv",
            value: other.to_string(),
            line: map.line_of(&key("kind")),
        }),
    };
    built.config("sde", "Signal::new")
}

fn scenario(map: &ConfigMap) -> CliResult<MarketScenario> {
    let demand = signal(map, "demand")?;
    let supply = signal(map, "supply")?;
    let sigma = cfg(map.f64_req("sigma"))?;
    let t0 = cfg(map.f64_or("t0", 0.0))?;
    let t_end = cfg(map.f64_or("t_end", 1.0))?;
    let dt_step = cfg(map.f64_or("dt_step", 1e-3))?;
    let p0 = cfg(map.f64_or("p0", 1.0))?;
    MarketScenario::new(demand, supply, sigma, t0, t_end, dt_step, p0).config("sde", "MarketScenario::new")
}

/// Summary of a finished run.
#[derive(Clone, Debug, Default)]
pub struct RunSummary {
    /// Files written, relative to the output directory.
    pub files: Vec<String>,
    /// `key = value` lines recorded in the manifest as comments.
    pub info: Vec<(String, String)>,
}

impl RunSummary {
    fn file(&mut self, name: &str) {
        self.files.push(name.to_string());
    }

    fn info(&mut self, key: &str, value: impl std::fmt::Display) {
        self.info.push((key.to_string(), value.to_string()));
    }
}

/// Execute a resolved run and write its manifest.
pub fn run(config: &RunConfig) -> CliResult<RunSummary> {
    let start = Instant::now();
    let mut summary = par::with_threads(config.threads.count(), || execute(config))?;
    summary.file(MANIFEST);
    let manifest = render_manifest(config, &summary, start.elapsed().as_secs_f64());
    std::fs::write(config.output_dir.join(MANIFEST), manifest)
        .map_err(Error::from)
        .numeric("cli", "write_manifest")?;
    Ok(summary)
}

fn fmt_num(x: f64) -> String {
    crate::io::fmt_f64(x)
}

fn execute(config: &RunConfig) -> CliResult<RunSummary> {
    let out = |name: &str| config.output_dir.join(name);
    let g = &config.g;
    let mut s = RunSummary::default();
    match &config.plan {
        Plan::Density { params, y_min, y_max, n } => {
            let f3 = density::tabulate(g, params, DensityKind::F3, *y_min, *y_max, *n).numeric("density", "tabulate")?;
            f3.write_csv(&out("f3.csv")).numeric("density", "write_csv")?;
            s.file("f3.csv");
            let opts = QuadOptions::default();
            let mass = density::normalization(DensityKind::F3, g, params, &opts).numeric("density", "normalization")?;
            s.info("normalization_f3", fmt_num(mass));
            match density::gaussian_limit(g, params) {
                Ok(_) => {
                    let f3n = density::tabulate(g, params, DensityKind::F3N, *y_min, *y_max, *n).numeric("density", "tabulate")?;
                    f3n.write_csv(&out("f3n.csv")).numeric("density", "write_csv")?;
                    s.file("f3n.csv");
                    let mass_n = density::normalization(DensityKind::F3N, g, params, &opts).numeric("density", "normalization")?;
                    s.info("normalization_f3n", fmt_num(mass_n));
                }
                Err(e) => s.info("f3n", format!("not written ({e})")),
            }
            if let Some((y, f)) = f3.argmax() {
                s.info("f3_grid_argmax", format!("{} (f = {})", fmt_num(y), fmt_num(f)));
            }
        }
        Plan::Sample { params, n, correlation, bins } => {
            let batch = match correlation {
                Correlation::Anti => sampler::sample_x3(g, params, *n, config.seed),
                Correlation::Rho(rho) => sampler::sample_x3_correlated(g, params, *rho, *n, config.seed),
            }
            .numeric("sampler", "sample_x3")?;
            batch.write_csv(&out("samples.csv")).numeric("sampler", "write_csv")?;
            s.file("samples.csv");
            let hist = sampler::histogram(&batch.values, *bins).numeric("sampler", "histogram")?;
            sampler::write_histogram(&out("histogram.csv"), &hist).numeric("sampler", "write_histogram")?;
            s.file("histogram.csv");
            s.info("accepted", batch.values.len());
            s.info("rejected", batch.n_rejected);
            s.info("mean", fmt_num(batch.mean()));
            s.info("variance", fmt_num(batch.variance()));
            if matches!(correlation, Correlation::Anti) {
                let ks = sampler::ks_distance(&batch, Reference::F3Exact).numeric("sampler", "ks_distance")?;
                s.info("ks_vs_f3", fmt_num(ks.ks_statistic));
                match sampler::ks_distance(&batch, Reference::F3Normal) {
                    Ok(ks) => s.info("ks_vs_f3n", fmt_num(ks.ks_statistic)),
                    Err(e) => s.info("ks_vs_f3n", format!("unavailable ({e})")),
                }
            }
        }
        Plan::Tails { params, n, k_std } => {
            let (y0, std) = params.gaussian_moments(g);
            if !(std > 0.0) {
                return Err(Error::invalid("Gaussian width is zero at this D/S; tail thresholds are undefined"))
                    .numeric("density", "gaussian_limit");
            }
            let batch = sampler::sample_x3(g, params, *n, config.seed).numeric("sampler", "sample_x3")?;
            let thresholds: Vec<f64> = k_std.iter().map(|k| y0 + k * std).collect();
            let points = sampler::tail_exceedance(&batch, &thresholds).numeric("sampler", "tail_exceedance")?;
            let mass = density::normalization(DensityKind::F3, g, params, &QuadOptions::default())
                .numeric("density", "normalization")?;
            let exact = par::try_map_indexed(thresholds.len(), |i| density::f3_upper_tail(g, params, thresholds[i]).map(|v| v / mass))
                .numeric("density", "f3_upper_tail")?;
            let rows = points.iter().zip(k_std).zip(&exact).map(|((p, &k), &e)| vec![k, p.threshold, p.empirical, p.gaussian, e]);
            crate::io::write_csv(&out("tails.csv"), &["k_std", "threshold", "empirical", "gaussian", "exact"], rows)
                .numeric("sampler", "write_csv")?;
            s.file("tails.csv");
            s.info("y0", fmt_num(y0));
            s.info("std", fmt_num(std));
            s.info("accepted", batch.values.len());
        }
        Plan::Converge { base, sigmas, scaling, r } => {
            let r = *r;
            let report = asymptotics::convergence_experiment(move |y| r.eval(y), g, base, sigmas, *scaling)
                .numeric("asymptotics", "convergence_experiment")?;
            report.write_csv(&out("convergence.csv")).numeric("asymptotics", "write_csv")?;
            s.file("convergence.csv");
            s.info("fitted_order", report.fitted_order.map_or("none (errors at floor)".into(), fmt_num));
            s.info("fitted_order_eps", report.fitted_order_eps.map_or("none (errors at floor)".into(), fmt_num));
        }
        Plan::Simulate { scenario, scheme, paths } => {
            let ens = sde::ensemble(scenario, g, *scheme, *paths, config.seed).numeric("sde", "simulate_path")?;
            for (i, p) in ens.iter().enumerate() {
                let name = if *paths == 1 { "path.csv".to_string() } else { format!("path_{i:04}.csv") };
                p.write_csv(&out(&name)).numeric("sde", "write_csv")?;
                s.file(&name);
            }
            s.info("steps", scenario.steps());
            let min = ens.iter().flat_map(|p| p.prices.iter().copied()).fold(f64::INFINITY, f64::min);
            s.info("min_price", fmt_num(min));
        }
        Plan::Volatility { source, cfg } => {
            let (paths, sc) = match source {
                PriceSource::Ingest(p) => (vec![volatility::ingest_prices(p).numeric("volatility", "ingest_prices")?], None),
                PriceSource::Simulate { scenario, scheme, paths } => (
                    sde::ensemble(scenario, g, *scheme, *paths, config.seed).numeric("sde", "simulate_path")?,
                    Some(scenario),
                ),
            };
            let series = par::try_map_indexed(paths.len(), |i| volatility::estimate_volatility(&paths[i], cfg))
                .numeric("volatility", "estimate_volatility")?;
            let mut mean = volatility::ensemble_mean(&series).numeric("volatility", "ensemble_mean")?;
            if let Some(sc) = sc {
                volatility::attach_theory(&mut mean, sc, g).numeric("volatility", "theoretical_volatility")?;
            }
            mean.write_csv(&out("volatility.csv")).numeric("volatility", "write_csv")?;
            s.file("volatility.csv");
            let report = volatility::extrema_report(&paths, &mean, sc).numeric("volatility", "extrema_report")?;
            crate::io::write_json(&out("extrema.json"), &report).numeric("volatility", "extrema_report")?;
            s.file("extrema.json");
            s.info("windows", mean.len());
            s.info("dropped_windows", mean.dropped_windows);
            if let Some(rc) = report.rank_correlation {
                s.info("rank_correlation", fmt_num(rc));
            }
        }
        Plan::CheckG { grid } => {
            let report = gfunc::check_condition_g(g, grid).numeric("gfunc", "check_condition_g")?;
            crate::io::write_json(&out("check_g.json"), &report).numeric("gfunc", "check_condition_g")?;
            s.file("check_g.json");
            for a in &report.axioms {
                s.info(
                    &format!("axiom.{}", a.name),
                    format!("{} (max violation {})", if a.passed { "pass" } else { "FAIL" }, fmt_num(a.max_violation)),
                );
            }
            if !report.all_pass() {
                let failed: Vec<&str> = report.axioms.iter().filter(|a| !a.passed).map(|a| a.name).collect();
                return Err(Error::invalid(format!("axioms violated: {}", failed.join(", ")))).numeric("gfunc", "check_condition_g");
            }
        }
    }
    Ok(s)
}

fn render_manifest(config: &RunConfig, summary: &RunSummary, wall: f64) -> String {
    let mut m = String::new();
    let _ = writeln!(m, "# sdlab {} {}", env!("CARGO_PKG_VERSION"), config.command.as_str());
    let _ = writeln!(m, "# parallel = {}", par::is_parallel());
    let _ = writeln!(m, "# threads = {}", config.threads);
    let _ = writeln!(m, "# seed = {}", config.seed);
    let _ = writeln!(m, "# wall_time_s = {wall:.3}");
    for f in &summary.files {
        let _ = writeln!(m, "# file = {f}");
    }
    for (k, v) in &summary.info {
        let _ = writeln!(m, "# {k} = {v}");
    }
    for (k, v) in &config.echo {
        let _ = writeln!(m, "{k} = {v}");
    }
    m
}

/// Parse arguments and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let (command, flags) = cli.command.split();
    match run_command(command, flags) {
        Ok(summary) => {
            for (k, v) in &summary.info {
                println!("{k} = {v}");
            }
            0
        }
        Err(e) => {
            eprintln!("sdlab: {e}");
            e.kind.exit_code()
        }
    }
}

/// Read the config file named by the flags (if any) and run.
pub fn run_command(command: Command, flags: &CommonArgs) -> CliResult<RunSummary> {
    let text = match &flags.config {
        Some(p) => read_config(p)?,
        None => String::new(),
    };
    let config = parse_config(command, &text, flags)?;
    run(&config)
}

fn read_config(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(Error::from).config("config", "read_config")
}
