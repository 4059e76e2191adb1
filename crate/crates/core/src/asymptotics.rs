//! Laplace approximation and the convergence of `E_f3[R]` to `E_f3N[R]`.

use serde::{Deserialize, Serialize};

use crate::density::{self, DensityKind, NoiseParams};
use crate::error::{Error, Result};
use crate::gfunc::GFunction;
use crate::par;
use crate::quad::QuadOptions;

/// `∫ u(z) e^{a h(z)} dz` with `h` maximal at 0.
pub struct LaplaceProblem<U, H> {
    pub u: U,
    pub h: H,
    pub a: f64,
}

impl<U: Fn(f64) -> f64, H: Fn(f64) -> f64> LaplaceProblem<U, H> {
    pub fn new(u: U, h: H, a: f64) -> Result<Self> {
        if !(a >= 10.0 && a.is_finite()) {
            return Err(Error::invalid(format!("Laplace parameter a must be >= 10, got {a}")));
        }
        Ok(Self { u, h, a })
    }
}

/// Second-derivative estimate from Richardson-extrapolated 5-point stencils.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Curvature {
    pub value: f64,
    pub converged: bool,
    /// Extrapolated estimates, one per halving of the step.
    pub sequence: Vec<f64>,
}

const HALVINGS: usize = 6;

fn stencil<F: Fn(f64) -> f64>(f: &F, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 16.0 * f(x + h) - 30.0 * f(x) + 16.0 * f(x - h) - f(x - 2.0 * h)) / (12.0 * h * h)
}

/// `f''(x)` starting from step `h0` and halving it; the 5-point stencil is
/// fourth order, so consecutive estimates are combined as `(16 D(h/2) - D(h)) / 15`.
/// The reported value is the extrapolant whose neighbour differs least;
/// `converged` is false when that difference is still above `1e-6` relative.
pub fn curvature<F: Fn(f64) -> f64>(f: F, x: f64, h0: f64) -> Curvature {
    let mut d = Vec::with_capacity(HALVINGS + 1);
    let mut h = h0;
    for _ in 0..=HALVINGS {
        d.push(stencil(&f, x, h));
        h *= 0.5;
    }
    let seq: Vec<f64> = d.windows(2).map(|w| (16.0 * w[1] - w[0]) / 15.0).collect();
    let mut best = (f64::INFINITY, seq[0]);
    for w in seq.windows(2) {
        let diff = (w[1] - w[0]).abs();
        if diff < best.0 {
            best = (diff, w[1]);
        }
    }
    let scale = best.1.abs().max(1e-300);
    Curvature {
        value: best.1,
        converged: best.0.is_finite() && best.0 <= 1e-6 * scale,
        sequence: seq,
    }
}

/// Leading Laplace term `u(0) √(-2π / (a h''(0))) e^{a h(0)}`.
pub fn laplace_approx<U: Fn(f64) -> f64, H: Fn(f64) -> f64>(p: &LaplaceProblem<U, H>) -> Result<f64> {
    // The step is chosen from the width of the peak, roughly 1/√a.
    let h0 = 0.5 / p.a.sqrt();
    let c = curvature(&p.h, 0.0, h0);
    if !(c.value < -1e-12) {
        return Err(Error::CurvatureSign(c.value));
    }
    Ok((p.u)(0.0) * (-2.0 * std::f64::consts::PI / (p.a * c.value)).sqrt() * (p.a * (p.h)(0.0)).exp())
}

fn expectation_opts() -> QuadOptions {
    QuadOptions::default()
}

/// `∫ R(y) f3(y) dy`.
pub fn expectation_f3<R: Fn(f64) -> f64>(r: R, g: &GFunction, p: &NoiseParams) -> Result<f64> {
    expectation_f3_with(r, g, p, &expectation_opts())
}

pub fn expectation_f3_with<R: Fn(f64) -> f64>(r: R, g: &GFunction, p: &NoiseParams, opts: &QuadOptions) -> Result<f64> {
    Ok(density::integrate_weighted(DensityKind::F3, g, p, r, f64::NEG_INFINITY, f64::INFINITY, opts)?.value)
}

/// `∫ R(y) f3N(y) dy`.
pub fn expectation_f3n<R: Fn(f64) -> f64>(r: R, g: &GFunction, p: &NoiseParams) -> Result<f64> {
    expectation_f3n_with(r, g, p, &expectation_opts())
}

pub fn expectation_f3n_with<R: Fn(f64) -> f64>(r: R, g: &GFunction, p: &NoiseParams, opts: &QuadOptions) -> Result<f64> {
    Ok(density::integrate_weighted(DensityKind::F3N, g, p, r, f64::NEG_INFINITY, f64::INFINITY, opts)?.value)
}

/// Bounded continuous test functions for the convergence experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunction {
    One,
    Tanh,
    /// `1 / (1 + y²)`
    Cauchy,
    /// `y` clipped to `[-1, 1]`
    ClippedLinear,
}

impl TestFunction {
    #[inline]
    pub fn eval(self, y: f64) -> f64 {
        match self {
            TestFunction::One => 1.0,
            TestFunction::Tanh => y.tanh(),
            TestFunction::Cauchy => 1.0 / (1.0 + y * y),
            TestFunction::ClippedLinear => y.clamp(-1.0, 1.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TestFunction::One => "one",
            TestFunction::Tanh => "tanh",
            TestFunction::Cauchy => "cauchy",
            TestFunction::ClippedLinear => "clipped_linear",
        }
    }
}

impl std::str::FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one" | "1" => Ok(TestFunction::One),
            "tanh" => Ok(TestFunction::Tanh),
            "cauchy" => Ok(TestFunction::Cauchy),
            "clipped_linear" | "clipped" => Ok(TestFunction::ClippedLinear),
            "identity" | "linear" | "y" | "square" | "y2" | "exp" => Err(Error::invalid(format!(
                "test function `{s}` is unbounded; only bounded continuous functions are supported"
            ))),
            other => Err(Error::invalid(format!("unknown test function `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// `Δt` held at the base value.
    FixedDt,
    /// `Δt ∝ σ`, so `α = Δt/σ²` grows while `σ²/Δt → 0`; the test
    /// function is applied to the rate `y / Δt`.
    AlphaScaling,
}

impl Scaling {
    pub fn as_str(self) -> &'static str {
        match self {
            Scaling::FixedDt => "fixed_dt",
            Scaling::AlphaScaling => "alpha_scaling",
        }
    }
}

impl std::str::FromStr for Scaling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed_dt" => Ok(Scaling::FixedDt),
            "alpha_scaling" | "alpha" => Ok(Scaling::AlphaScaling),
            other => Err(Error::invalid(format!("unknown scaling `{other}`"))),
        }
    }
}

/// Errors below this are treated as exact agreement; no order is fitted.
pub const ERROR_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub sigmas: Vec<f64>,
    pub dts: Vec<f64>,
    pub errors: Vec<f64>,
    /// Least-squares slope of `log error` against `log σ`; `None` when some
    /// error is at the floor.
    pub fitted_order: Option<f64>,
    /// Same, against `log(σ²/Δt)`.
    pub fitted_order_eps: Option<f64>,
    pub scaling: Scaling,
}

impl ConvergenceReport {
    /// CSV `sigma,dt,error`; the fitted orders go in a JSON sidecar.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let rows = (0..self.sigmas.len()).map(|i| vec![self.sigmas[i], self.dts[i], self.errors[i]]);
        crate::io::write_csv(path, &["sigma", "dt", "error"], rows)?;
        crate::io::write_json(&crate::io::sidecar_path(path), self)
    }

    pub fn eps(&self) -> Vec<f64> {
        self.sigmas.iter().zip(&self.dts).map(|(s, d)| s * s / d).collect()
    }
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 || y.iter().any(|&v| !(v > ERROR_FLOOR)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Smallest admissible ratio between the largest and smallest σ (three halvings).
pub const MIN_SIGMA_SPAN: f64 = 8.0;

/// `|E_f3[R] - E_f3N[R]|` for each σ.
///
/// Under `FixedDt` every point uses `base.dt`; under `AlphaScaling` point `i`
/// uses `Δt_i = base.dt · σ_i / σ_0`.
pub fn convergence_experiment<R: Fn(f64) -> f64 + Sync + Send>(
    r: R,
    g: &GFunction,
    base: &NoiseParams,
    sigmas: &[f64],
    scaling: Scaling,
) -> Result<ConvergenceReport> {
    if sigmas.len() < 4 {
        return Err(Error::invalid(format!("need at least 4 sigma values, got {}", sigmas.len())));
    }
    if sigmas.windows(2).any(|w| !(w[1] < w[0])) || sigmas.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::invalid("sigmas must be positive and strictly decreasing"));
    }
    if sigmas[0] / sigmas[sigmas.len() - 1] < MIN_SIGMA_SPAN {
        return Err(Error::invalid(format!("sigmas must span a factor of at least {MIN_SIGMA_SPAN}")));
    }
    let dts: Vec<f64> = match scaling {
        Scaling::FixedDt => vec![base.dt(); sigmas.len()],
        Scaling::AlphaScaling => sigmas.iter().map(|s| base.dt() * s / sigmas[0]).collect(),
    };
    let opts = QuadOptions { abs_tol: 1e-14, rel_tol: 1e-12, max_subdivisions: 20_000 };
    let errors = par::try_map_indexed(sigmas.len(), |i| {
        let p = NoiseParams::new(sigmas[i], dts[i], base.d_over_s())?;
        let dt = dts[i];
        let rr = |y: f64| match scaling {
            Scaling::FixedDt => r(y),
            Scaling::AlphaScaling => r(y / dt),
        };
        let e3 = expectation_f3_with(rr, g, &p, &opts)?;
        let en = expectation_f3n_with(rr, g, &p, &opts)?;
        Ok((e3 - en).abs())
    })?;
    let eps: Vec<f64> = sigmas.iter().zip(&dts).map(|(s, d)| s * s / d).collect();
    Ok(ConvergenceReport {
        fitted_order: loglog_slope(sigmas, &errors),
        fitted_order_eps: loglog_slope(&eps, &errors),
        sigmas: sigmas.to_vec(),
        dts,
        errors,
        scaling,
    })
}

/// Scaled curvature of the exact exponent at the mode, against its
/// closed form `-1 / (D/S · G'(D/S))²`.
#[derive(Clone, Debug, Serialize)]
pub struct CurvatureReport {
    pub target: f64,
    /// `σ²Δt · E''(y₀)` for the exponent `E` of `f3`.
    pub estimate: f64,
    pub relative_error: f64,
    /// `σ²Δt · (ln f3)''(y₀)`, which also carries the prefactor's curvature.
    pub log_density_estimate: f64,
    pub log_density_relative_error: f64,
    pub converged: bool,
}

pub fn verify_h1_curvature(g: &GFunction, p: &NoiseParams) -> Result<CurvatureReport> {
    let (_, std) = density::gaussian_limit(g, p)?;
    verify_h1_curvature_with_step(g, p, 0.5 * std)
}

/// As [`verify_h1_curvature`] with an explicit initial stencil step.
pub fn verify_h1_curvature_with_step(g: &GFunction, p: &NoiseParams, step: f64) -> Result<CurvatureReport> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid(format!("stencil step must be > 0, got {step}")));
    }
    let (y0, _) = density::gaussian_limit(g, p)?;
    let r = p.d_over_s();
    let target = -1.0 / (r * g.prime_raw(r)).powi(2);
    let scale = p.sigma() * p.sigma() * p.dt();
    let e = |y: f64| density::f3_exponent(g, p, y).unwrap_or(f64::NAN);
    let c = curvature(e, y0, step);
    let logf = |y: f64| density::f3_density(g, p, y).map(f64::ln).unwrap_or(f64::NAN);
    let cl = curvature(logf, y0, step);
    let estimate = c.value * scale;
    let log_est = cl.value * scale;
    Ok(CurvatureReport {
        target,
        estimate,
        relative_error: ((estimate - target) / target).abs(),
        log_density_estimate: log_est,
        log_density_relative_error: ((log_est - target) / target).abs(),
        converged: c.converged && estimate.is_finite(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad;
    use approx::assert_relative_eq;

    #[test]
    fn gaussian_laplace_is_exact() {
        let p = LaplaceProblem::new(|_| 1.0, |z: f64| -0.5 * z * z, 100.0).unwrap();
        assert_relative_eq!(laplace_approx(&p).unwrap(), (2.0 * std::f64::consts::PI / 100.0).sqrt(), max_relative = 1e-9);
        assert_relative_eq!(laplace_approx(&p).unwrap(), 0.250_662_827_463_100_05, max_relative = 1e-9);
    }

    #[test]
    fn cosine_weight_against_quadrature() {
        let a = 400.0;
        let p = LaplaceProblem::new(f64::cos, |z: f64| -0.5 * z * z, a).unwrap();
        let exact = quad::integrate(|z: f64| z.cos() * (-200.0 * z * z).exp(), f64::NEG_INFINITY, f64::INFINITY, &QuadOptions::default())
            .unwrap()
            .value;
        let approx = laplace_approx(&p).unwrap();
        assert!(((approx - exact) / exact).abs() <= 1.0 / a);
    }

    #[test]
    fn flat_maximum_is_rejected() {
        let p = LaplaceProblem::new(|_| 1.0, |z: f64| -z.powi(4), 100.0).unwrap();
        assert!(matches!(laplace_approx(&p), Err(Error::CurvatureSign(_))));
        let p = LaplaceProblem::new(|_| 1.0, |z: f64| 0.5 * z * z, 100.0).unwrap();
        assert!(matches!(laplace_approx(&p), Err(Error::CurvatureSign(_))));
        assert!(LaplaceProblem::new(|_| 1.0, |z: f64| -z * z, 5.0).is_err());
    }

    #[test]
    fn laplace_error_within_two_over_a() {
        for &a in &[1e2, 1e3, 1e4] {
            let h = |z: f64| -0.5 * z * z - 0.1 * z.powi(4);
            let u = |z: f64| 1.0 + 0.3 * z.sin() + 0.2 * z * z;
            let p = LaplaceProblem::new(u, h, a).unwrap();
            let exact = quad::integrate(|z| u(z) * (a * h(z)).exp(), f64::NEG_INFINITY, f64::INFINITY, &QuadOptions::with_abs_tol(1e-15))
                .unwrap()
                .value;
            let approx = laplace_approx(&p).unwrap();
            assert!(((approx - exact) / exact).abs() <= 2.0 / a, "a={a}");
        }
    }

    #[test]
    fn curvature_of_polynomial_and_sine() {
        let c = curvature(|x: f64| 3.0 * x * x - x.powi(3), 0.5, 0.1);
        assert_relative_eq!(c.value, 3.0, max_relative = 1e-9);
        let c = curvature(f64::sin, 1.0, 0.05);
        assert!(c.converged);
        assert_relative_eq!(c.value, -(1.0f64.sin()), max_relative = 1e-8);
    }

    #[test]
    fn oversized_step_is_flagged() {
        let g = GFunction::power_diff(1.0).unwrap();
        let p = NoiseParams::new(0.05, 1.0, 1.0).unwrap();
        let r = verify_h1_curvature_with_step(&g, &p, 1e3).unwrap();
        assert!(!r.converged);
    }

    #[test]
    fn exponent_curvature_examples() {
        let g1 = GFunction::power_diff(1.0).unwrap();
        let p = NoiseParams::new(0.05, 1.0, 1.0).unwrap();
        let r = verify_h1_curvature(&g1, &p).unwrap();
        assert_relative_eq!(r.target, -0.25, max_relative = 1e-15);
        assert!(r.relative_error <= 1e-3, "{r:?}");
        let p = NoiseParams::new(0.05, 1.0, 1.5).unwrap();
        let r = verify_h1_curvature(&g1, &p).unwrap();
        assert!(r.relative_error <= 1e-3, "{r:?}");
        assert!(r.converged);
    }

    #[test]
    fn expectation_examples() {
        let g = GFunction::power_diff(1.0).unwrap();
        let p = NoiseParams::new(0.1, 1.0, 1.0).unwrap();
        assert!((expectation_f3(|_| 1.0, &g, &p).unwrap() - 1.0).abs() < 1e-5);
        assert!(expectation_f3(|y| y, &g, &p).unwrap().abs() < 1e-6);
        let odd = GFunction::odd_power_of_diff(3).unwrap();
        assert!(expectation_f3(|y| y, &odd, &p).unwrap().abs() < 1e-6);

        assert!((expectation_f3n(|_| 1.0, &g, &p).unwrap() - 1.0).abs() < 1e-9);
        assert!((expectation_f3n(|y| y * y, &g, &p).unwrap() - 0.04).abs() < 1e-9);
        let p = NoiseParams::new(0.1, 1.0, 1.2).unwrap();
        let (y0, _) = p.gaussian_moments(&g);
        assert!((expectation_f3n(|y| y, &g, &p).unwrap() - y0).abs() < 1e-9);
    }

    #[test]
    fn test_function_parsing() {
        assert_eq!("tanh".parse::<TestFunction>().unwrap(), TestFunction::Tanh);
        assert!("identity".parse::<TestFunction>().is_err());
        assert!("square".parse::<TestFunction>().is_err());
        assert_eq!(TestFunction::ClippedLinear.eval(3.0), 1.0);
    }

    #[test]
    fn constant_function_has_no_order() {
        let g = GFunction::power_diff(1.0).unwrap();
        let base = NoiseParams::new(0.2, 1.0, 1.2).unwrap();
        let rep = convergence_experiment(|_| 1.0, &g, &base, &[0.2, 0.1, 0.05, 0.02], Scaling::FixedDt).unwrap();
        assert!(rep.errors.iter().all(|&e| e <= 1e-5));
        assert!(rep.fitted_order.is_none());
    }

    #[test]
    fn experiment_validates_sigmas() {
        let g = GFunction::power_diff(1.0).unwrap();
        let base = NoiseParams::new(0.2, 1.0, 1.2).unwrap();
        assert!(convergence_experiment(|y: f64| y.tanh(), &g, &base, &[0.2, 0.1, 0.05], Scaling::FixedDt).is_err());
        assert!(convergence_experiment(|y: f64| y.tanh(), &g, &base, &[0.2, 0.1, 0.05, 0.03], Scaling::FixedDt).is_err());
        assert!(convergence_experiment(|y: f64| y.tanh(), &g, &base, &[0.1, 0.2, 0.05, 0.01], Scaling::FixedDt).is_err());
    }

    #[test]
    fn slope_of_exact_power() {
        let x = [1.0, 0.5, 0.25, 0.125];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v * v).collect();
        assert_relative_eq!(loglog_slope(&x, &y).unwrap(), 2.0, max_relative = 1e-12);
        assert!(loglog_slope(&x, &[1.0, 0.0, 1.0, 1.0]).is_none());
    }
}
