//! Acceptance criteria. Each test prints one `criterion N: PASS|FAIL` line
//! with the measured numbers, then asserts.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use sdlab::asymptotics::{self, Scaling, TestFunction};
use sdlab::density::{self, DensityKind, NoiseParams};
use sdlab::gfunc::{self, GFunction};
use sdlab::quad::QuadOptions;
use sdlab::sampler::{self, Reference};
use sdlab::sde::{self, MarketScenario, Scheme, Signal};
use sdlab::volatility::{self, VolMode, VolatilityConfig};

fn report(n: u32, pass: bool, elapsed: Duration, budget: Duration, detail: String) {
    let within = elapsed <= budget;
    let verdict = if pass && within { "PASS" } else { "FAIL" };
    println!("criterion {n}: {verdict} ({:.2?} of {:.0?}) {detail}", elapsed, budget);
    assert!(pass, "criterion {n} failed: {detail}");
    assert!(within, "criterion {n} over budget: {elapsed:?} > {budget:?}");
}

fn families() -> Vec<GFunction> {
    vec![GFunction::power_diff(1.0).unwrap(), GFunction::odd_power_of_diff(3).unwrap()]
}

#[test]
fn criterion_01_g_axioms() {
    let t = Instant::now();
    let grid = gfunc::log_grid(0.05, 20.0, 200);
    let mut worst = 0.0_f64;
    let mut all = true;
    let mut lines = Vec::new();
    for g in families() {
        let rep = gfunc::check_condition_g(&g, &grid).unwrap();
        all &= rep.all_pass();
        worst = worst.max(rep.max_violation());
        lines.push(format!("{} q={}: {} axioms, max violation {:.2e}", g.family().as_str(), g.q(), rep.axioms.len(), rep.max_violation()));
    }
    let pass = all && worst < 1e-10;
    report(1, pass, t.elapsed(), Duration::from_secs(1), lines.join("; "));
}

#[test]
fn criterion_02_normalization_sweep() {
    let t = Instant::now();
    let opts = QuadOptions::default();
    let mut worst = 0.0_f64;
    let mut count = 0;
    for g in families() {
        for &sigma in &[0.05, 0.1, 0.2] {
            for &dt in &[0.25, 1.0] {
                for &r in &[0.8, 1.0, 1.25] {
                    let p = NoiseParams::new(sigma, dt, r).unwrap();
                    let m = density::normalization(DensityKind::F3, &g, &p, &opts).unwrap();
                    worst = worst.max((m - 1.0).abs());
                    count += 1;
                }
            }
        }
    }
    let pass = count == 36 && worst <= 1e-5;
    report(2, pass, t.elapsed(), Duration::from_secs(30), format!("{count} points, max |mass - 1| = {worst:.3e}"));
}

#[test]
fn criterion_03_gaussian_gap_order() {
    let t = Instant::now();
    let g = GFunction::power_diff(1.0).unwrap();
    let sigmas = [0.1, 0.05, 0.025, 0.0125, 0.00625];
    let mut pass = true;
    let mut parts = Vec::new();
    for &r in &[1.0, 1.2] {
        for f in [TestFunction::Tanh, TestFunction::Cauchy] {
            let base = NoiseParams::new(sigmas[0], 1.0, r).unwrap();
            let rep = asymptotics::convergence_experiment(move |y| f.eval(y), &g, &base, &sigmas, Scaling::FixedDt).unwrap();
            let ok = rep.fitted_order.is_some_and(|s| (s - 2.0).abs() <= 0.3);
            pass &= ok;
            let slope = rep.fitted_order.map_or("none".to_string(), |s| format!("{s:.3}"));
            parts.push(format!(
                "D/S={r} {}: slope {slope} (max error {:.2e}) {}",
                f.as_str(),
                rep.errors.iter().copied().fold(0.0, f64::max),
                if ok { "ok" } else { "out of 2.0±0.3" }
            ));
        }
    }
    report(3, pass, t.elapsed(), Duration::from_secs(60), parts.join("; "));
}

/// Log-log linear interpolation of `(x, y)` at `x0`.
fn loglog_interp(x: &[f64], y: &[f64], x0: f64) -> f64 {
    let mut pts: Vec<(f64, f64)> = x.iter().zip(y).map(|(a, b)| (a.ln(), b.ln())).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let l = x0.ln();
    let k = pts.windows(2).position(|w| l >= w[0].0 && l <= w[1].0).expect("x0 inside the fixed-dt range");
    let (a, b) = (pts[k], pts[k + 1]);
    (a.1 + (b.1 - a.1) * (l - a.0) / (b.0 - a.0)).exp()
}

#[test]
fn criterion_04_eps_collapse() {
    let t = Instant::now();
    let g = GFunction::power_diff(1.0).unwrap();
    let f = TestFunction::Tanh;
    let r = 1.2;
    let fixed = asymptotics::convergence_experiment(
        move |y| f.eval(y),
        &g,
        &NoiseParams::new(0.2, 1.0, r).unwrap(),
        &[0.2, 0.1, 0.05, 0.025, 0.0125],
        Scaling::FixedDt,
    )
    .unwrap();
    let alpha = asymptotics::convergence_experiment(
        move |y| f.eval(y),
        &g,
        &NoiseParams::new(0.1, 0.5, r).unwrap(),
        &[0.1, 0.05, 0.025, 0.0125],
        Scaling::AlphaScaling,
    )
    .unwrap();
    let fe = fixed.eps();
    let mut worst = 1.0_f64;
    let mut ratios = Vec::new();
    for (e, err) in alpha.eps().iter().zip(&alpha.errors) {
        let reference = loglog_interp(&fe, &fixed.errors, *e);
        let q = err / reference;
        worst = worst.max(q.max(1.0 / q));
        ratios.push(format!("{q:.3}"));
    }
    let pass = worst <= 2.0;
    report(
        4,
        pass,
        t.elapsed(),
        Duration::from_secs(60),
        format!(
            "alpha/fixed error ratios at equal eps [{}], worst factor {worst:.3}; eps slopes fixed {:.3} alpha {:.3}",
            ratios.join(", "),
            fixed.fitted_order_eps.unwrap_or(f64::NAN),
            alpha.fitted_order_eps.unwrap_or(f64::NAN)
        ),
    );
}

#[test]
fn criterion_05_curvature() {
    let t = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for &(r, q) in &[(1.0, 1.0), (1.5, 1.0), (1.2, 2.0)] {
        let g = GFunction::power_diff(q).unwrap();
        let p = NoiseParams::new(0.1, 1.0, r).unwrap();
        let rep = asymptotics::verify_h1_curvature(&g, &p).unwrap();
        let ok = rep.converged && rep.relative_error <= 1e-3;
        pass &= ok;
        // The prefactor's share of the log-density curvature shrinks like σ².
        let small = asymptotics::verify_h1_curvature(&g, &p.with_sigma(0.01).unwrap()).unwrap();
        parts.push(format!(
            "(D/S={r}, q={q}): exponent rel err {:.2e}, full log-density rel err {:.2e} (sigma 0.01: {:.2e})",
            rep.relative_error, rep.log_density_relative_error, small.log_density_relative_error
        ));
    }
    report(5, pass, t.elapsed(), Duration::from_secs(5), parts.join("; "));
}

#[test]
fn criterion_06_mc_vs_exact() {
    let t = Instant::now();
    let g = GFunction::power_diff(1.0).unwrap();
    let p = NoiseParams::new(0.1, 1.0, 1.2).unwrap();
    let batch = sampler::sample_x3(&g, &p, 1_000_000, 20_240_601).unwrap();
    let ks = sampler::ks_distance(&batch, Reference::F3Exact).unwrap().ks_statistic;
    let mut normal = Vec::new();
    for &s in &[0.4, 0.2, 0.1, 0.05] {
        let p = NoiseParams::new(s, 1.0, 1.2).unwrap();
        let b = sampler::sample_x3(&g, &p, 1_000_000, 20_240_602).unwrap();
        normal.push(sampler::ks_distance(&b, Reference::F3Normal).unwrap().ks_statistic);
    }
    let monotone = normal.windows(2).all(|w| w[1] <= w[0]);
    let pass = ks <= 0.002 && monotone;
    report(
        6,
        pass,
        t.elapsed(),
        Duration::from_secs(60),
        format!("KS vs f3 {ks:.2e}; KS vs f3N over sigma 0.4..0.05 = {normal:.4?} (monotone: {monotone})"),
    );
}

#[test]
fn criterion_07_fat_tail() {
    let t = Instant::now();
    let g = GFunction::power_diff(1.0).unwrap();
    let p = NoiseParams::new(0.2, 1.0, 1.0).unwrap();
    let (y0, std) = p.gaussian_moments(&g);
    let y = y0 + 5.0 * std;
    let batch = sampler::sample_x3(&g, &p, 10_000_000, 7).unwrap();
    let tail = sampler::tail_exceedance(&batch, &[y]).unwrap()[0];
    let mass = density::normalization(DensityKind::F3, &g, &p, &QuadOptions::default()).unwrap();
    let exact = density::f3_upper_tail(&g, &p, y).unwrap() / mass;
    let emp_ratio = tail.empirical / tail.gaussian;
    let exact_ratio = exact / tail.gaussian;
    let pass = emp_ratio >= 3.0 && exact_ratio > 1.0;
    report(
        7,
        pass,
        t.elapsed(),
        Duration::from_secs(120),
        format!(
            "P(X3 > y0+5std): empirical {:.3e}, Gaussian {:.3e}, exact {:.3e}; empirical/Gaussian {emp_ratio:.1}, exact/Gaussian {exact_ratio:.1}",
            tail.empirical, tail.gaussian, exact
        ),
    );
}

#[test]
fn criterion_08_scheme_gap_order() {
    let t = Instant::now();
    let g = GFunction::power_diff(1.0).unwrap();
    let sc = MarketScenario::new(Signal::constant(1.2), Signal::constant(1.0), 0.1, 0.0, 1.0, 1e-4, 1.0).unwrap();
    let gap = |sigma: f64, seed: u64| {
        let sc = sc.with_sigma(sigma).unwrap();
        let a = sde::simulate_path(&sc, &g, Scheme::EulerP, seed).unwrap();
        let b = sde::simulate_path(&sc, &g, Scheme::EulerLogp, seed).unwrap();
        a.log_prices.iter().zip(&b.log_prices).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    };
    let ratios: Vec<f64> = (0..10).map(|seed| gap(0.1, seed) / gap(0.05, seed)).collect();
    let pass = ratios.iter().all(|r| (3.0..=5.0).contains(r));
    report(8, pass, t.elapsed(), Duration::from_secs(10), format!("shrink factors over 10 seeds {ratios:.3?}"));
}

#[test]
fn criterion_09_volatility_estimator() {
    let t = Instant::now();
    let g = GFunction::power_diff(1.0).unwrap();
    let (sigma, r) = (0.1, 1.2);
    let sc = MarketScenario::new(Signal::constant(r), Signal::constant(1.0), sigma, 0.0, 1.0, 1.0 / 8192.0, 1.0).unwrap();
    let paths = sde::ensemble(&sc, &g, Scheme::EulerLogp, 100, 99).unwrap();
    let cfg = VolatilityConfig::new(256, VolMode::Vlog).unwrap();
    let series: Vec<_> = paths.iter().map(|p| volatility::estimate_volatility(p, &cfg).unwrap()).collect();
    let mean = volatility::ensemble_mean(&series).unwrap();
    let overall = mean.estimates.iter().sum::<f64>() / mean.len() as f64;
    let theory = (sigma * g.eval_prime(r).unwrap() * r).powi(2);
    let rel = (overall / theory - 1.0).abs();

    let c = 2.0;
    let base = &paths[0];
    let scaled = sde::PricePath::from_prices(base.times.clone(), base.prices.iter().map(|p| p * c).collect(), Scheme::Ingested, 0);
    let mut equiv = 0.0_f64;
    for (mode, factor) in [(VolMode::Vp, c * c), (VolMode::Vpn, 1.0)] {
        let cfg = VolatilityConfig::new(256, mode).unwrap();
        let a = volatility::estimate_volatility(base, &cfg).unwrap();
        let b = volatility::estimate_volatility(&scaled, &cfg).unwrap();
        for (x, y) in a.estimates.iter().zip(&b.estimates) {
            equiv = equiv.max((y / (factor * x) - 1.0).abs());
        }
    }
    let pass = rel <= 0.05 && equiv <= 1e-12;
    report(
        9,
        pass,
        t.elapsed(),
        Duration::from_secs(30),
        format!("vlog ensemble mean {overall:.5e} vs {theory:.5e} (rel {rel:.2e}); vp/vpn scale-equivariance max rel dev {equiv:.1e}"),
    );
}

#[test]
fn criterion_10_extrema() {
    let t = Instant::now();
    let g = GFunction::power_diff(1.0).unwrap();
    let sc = MarketScenario::new(
        Signal::sinusoid(1.0, 0.3, 1.0).unwrap(),
        Signal::constant(1.0),
        0.1,
        0.0,
        2.0,
        1.0 / 32768.0,
        1.0,
    )
    .unwrap();
    let paths = sde::ensemble(&sc, &g, Scheme::EulerLogp, 200, 1).unwrap();
    let cfg = VolatilityConfig::new(1024, VolMode::Vlog).unwrap();
    let series: Vec<_> = paths.iter().map(|p| volatility::estimate_volatility(p, &cfg).unwrap()).collect();
    let mean = volatility::ensemble_mean(&series).unwrap();
    let rep = volatility::extrema_report(&paths, &mean, Some(&sc)).unwrap();
    let w = rep.window_length;
    let near = !rep.volatility_minima.is_empty() && rep.vol_min_to_extremum.iter().all(|d| *d <= w);
    let rho = rep.rank_correlation.unwrap_or(f64::NAN);
    let pass = near && rho >= 0.5;
    report(
        10,
        pass,
        t.elapsed(),
        Duration::from_secs(60),
        format!(
            "window {w:.4}; volatility minima {:.4?}, deterministic extrema {:.4?}, offsets {:.4?}; rank correlation {rho:.3}",
            rep.volatility_minima,
            rep.deterministic_extrema.clone().unwrap_or_default(),
            rep.vol_min_to_extremum
        ),
    );
}

const DETERMINISM_CONFIG: &str = "\
g.family = power_diff
g.q = 1
sigma = 0.1
d_over_s = 1.2
seed = 42
sample.n = 200000
tails.n = 200000
converge.sigmas = 0.1, 0.05, 0.025, 0.0125
scenario.demand.kind = sinusoid
scenario.demand.mean = 1
scenario.demand.amplitude = 0.3
scenario.demand.period = 1
scenario.supply.kind = constant
scenario.supply.value = 1
t_end = 1
dt_step = 0.0009765625
simulate.paths = 4
volatility.window = 64
volatility.paths = 20
";

fn run_cli(command: &str, config: &Path, out: &Path, threads: &str) {
    let status = Command::new(env!("CARGO_BIN_EXE_sdlab"))
        .args([command, "--config"])
        .arg(config)
        .arg("--output-dir")
        .arg(out)
        .args(["--threads", threads])
        .output()
        .unwrap();
    assert!(status.status.success(), "{command} failed: {}", String::from_utf8_lossy(&status.stderr));
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn criterion_11_determinism() {
    let t = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.conf");
    std::fs::write(&config, DETERMINISM_CONFIG).unwrap();
    let mut compared = 0;
    let mut mismatched = Vec::new();
    for command in ["density", "sample", "tails", "converge", "simulate", "volatility"] {
        let a = tmp.path().join(format!("{command}-1"));
        let b = tmp.path().join(format!("{command}-8"));
        run_cli(command, &config, &a, "1");
        run_cli(command, &config, &b, "8");
        let (fa, fb) = (csv_files(&a), csv_files(&b));
        assert!(!fa.is_empty(), "{command} wrote no CSV");
        if fa != fb {
            mismatched.push(command);
        }
        compared += fa.len();
    }
    let pass = mismatched.is_empty();
    report(
        11,
        pass,
        t.elapsed(),
        Duration::from_secs(120),
        format!("{compared} CSV files across 6 commands compared under 1 vs 8 threads; mismatches {mismatched:?}"),
    );
}
