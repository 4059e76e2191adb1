//! Price paths driven by demand and supply signals.
//!
//! With `x = D(t)/S(t)` and `b = σ G'(x) x` the continuous model is
//!
//! ```text
//! dP     = G(x) P dt + b P dW
//! d ln P = (G(x) - b²/2) dt + b dW
//! ```
//!
//! Signals are sampled at the left end of every step and all schemes driven
//! by the same seed see the same Brownian increments.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gfunc::GFunction;
use crate::io;
use crate::par;
use crate::rng::{derive_seed, Substream};

/// Points used to check that a signal stays positive on the horizon.
pub const POSITIVITY_SCAN: usize = 1000;

/// A deterministic demand or supply signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Signal {
    Constant { value: f64 },
    /// `mean + amplitude · sin(2πt / period)`
    Sinusoid { mean: f64, amplitude: f64, period: f64 },
    /// `values[i]` on `[times[i], times[i+1])`; the first value before
    /// `times[0]`, the last after it.
    Piecewise { times: Vec<f64>, values: Vec<f64> },
    /// Linear interpolation of a `(t, value)` table, flat beyond its ends.
    Table { times: Vec<f64>, values: Vec<f64> },
}

impl Signal {
    pub fn constant(value: f64) -> Self {
        Signal::Constant { value }
    }

    pub fn sinusoid(mean: f64, amplitude: f64, period: f64) -> Result<Self> {
        if !(period > 0.0) {
            return Err(Error::invalid(format!("sinusoid period must be > 0, got {period}")));
        }
        Ok(Signal::Sinusoid { mean, amplitude, period })
    }

    pub fn piecewise(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        check_knots(&times, &values)?;
        Ok(Signal::Piecewise { times, values })
    }

    pub fn table(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        check_knots(&times, &values)?;
        Ok(Signal::Table { times, values })
    }

    /// Table signal from a two-column `t,value` CSV.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let rows = io::read_two_columns(path)?;
        let (times, values) = rows.into_iter().map(|(_, t, v)| (t, v)).unzip();
        Self::table(times, values)
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Signal::Constant { value } => *value,
            Signal::Sinusoid { mean, amplitude, period } => mean + amplitude * (2.0 * std::f64::consts::PI * t / period).sin(),
            Signal::Piecewise { times, values } => {
                let k = times.partition_point(|&x| x <= t);
                values[k.saturating_sub(1)]
            }
            Signal::Table { times, values } => {
                let n = times.len();
                if t <= times[0] || n == 1 {
                    return values[0];
                }
                if t >= times[n - 1] {
                    return values[n - 1];
                }
                let k = times.partition_point(|&x| x <= t) - 1;
                let w = (t - times[k]) / (times[k + 1] - times[k]);
                values[k] + w * (values[k + 1] - values[k])
            }
        }
    }

    /// Check positivity at `POSITIVITY_SCAN` evenly spaced points and at
    /// every knot inside `[t0, t1]`.
    pub fn check_positive(&self, t0: f64, t1: f64) -> Result<()> {
        let mut probes: Vec<f64> = (0..POSITIVITY_SCAN)
            .map(|i| t0 + (t1 - t0) * i as f64 / (POSITIVITY_SCAN - 1) as f64)
            .collect();
        if let Signal::Piecewise { times, .. } | Signal::Table { times, .. } = self {
            probes.extend(times.iter().copied().filter(|&t| t >= t0 && t <= t1));
        }
        for t in probes {
            let v = self.eval(t);
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("signal is not positive at t = {t} (value {v})")));
            }
        }
        Ok(())
    }
}

fn check_knots(times: &[f64], values: &[f64]) -> Result<()> {
    if times.is_empty() || times.len() != values.len() {
        return Err(Error::invalid("signal needs equally many (>= 1) times and values"));
    }
    if times.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("signal times must be strictly increasing"));
    }
    if times.iter().chain(values).any(|v| !v.is_finite()) {
        return Err(Error::invalid("signal knots must be finite"));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarketScenario {
    pub demand: Signal,
    pub supply: Signal,
    pub sigma: f64,
    pub t0: f64,
    pub t_end: f64,
    pub dt_step: f64,
    pub p0: f64,
}

impl MarketScenario {
    /// `σ = 0` is allowed and gives the deterministic path.
    pub fn new(demand: Signal, supply: Signal, sigma: f64, t0: f64, t_end: f64, dt_step: f64, p0: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be finite and >= 0, got {sigma}")));
        }
        if !(t0.is_finite() && t_end.is_finite() && t_end > t0) {
            return Err(Error::invalid(format!("horizon [{t0}, {t_end}] is empty")));
        }
        if !(dt_step > 0.0 && dt_step <= (t_end - t0) / 10.0 * (1.0 + 1e-12)) {
            return Err(Error::invalid(format!(
                "dt_step must be in (0, (t_end - t0)/10], got {dt_step}"
            )));
        }
        if !(p0 > 0.0 && p0.is_finite()) {
            return Err(Error::invalid(format!("p0 must be > 0, got {p0}")));
        }
        demand.check_positive(t0, t_end)?;
        supply.check_positive(t0, t_end)?;
        Ok(Self { demand, supply, sigma, t0, t_end, dt_step, p0 })
    }

    /// Number of steps, `round((t_end - t0) / dt_step)`.
    pub fn steps(&self) -> usize {
        ((self.t_end - self.t0) / self.dt_step).round() as usize
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt_step
    }

    pub fn ratio(&self, t: f64) -> f64 {
        self.demand.eval(t) / self.supply.eval(t)
    }

    /// Same scenario with another `sigma`.
    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        let mut s = self.clone();
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be finite and >= 0, got {sigma}")));
        }
        s.sigma = sigma;
        Ok(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    EulerP,
    EulerLogp,
    SymP,
    DiscreteTatonnement,
    /// Read from a file rather than simulated.
    Ingested,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::EulerP => "euler_p",
            Scheme::EulerLogp => "euler_logp",
            Scheme::SymP => "sym_p",
            Scheme::DiscreteTatonnement => "discrete_tatonnement",
            Scheme::Ingested => "ingested",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler_p" => Ok(Scheme::EulerP),
            "euler_logp" => Ok(Scheme::EulerLogp),
            "sym_p" => Ok(Scheme::SymP),
            "discrete_tatonnement" => Ok(Scheme::DiscreteTatonnement),
            other => Err(Error::invalid(format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PricePath {
    pub times: Vec<f64>,
    pub prices: Vec<f64>,
    pub log_prices: Vec<f64>,
    pub scheme: Scheme,
    pub seed: u64,
}

impl PricePath {
    /// Build from prices; log prices are derived.
    pub fn from_prices(times: Vec<f64>, prices: Vec<f64>, scheme: Scheme, seed: u64) -> Self {
        let log_prices = prices.iter().map(|p| p.ln()).collect();
        Self { times, prices, log_prices, scheme, seed }
    }

    fn from_log_prices(times: Vec<f64>, log_prices: Vec<f64>, scheme: Scheme, seed: u64) -> Self {
        let prices = log_prices.iter().map(|l| l.exp()).collect();
        Self { times, prices, log_prices, scheme, seed }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Grid spacing (assumes a uniform grid of at least two points).
    pub fn dt(&self) -> f64 {
        (self.times[self.times.len() - 1] - self.times[0]) / (self.times.len() - 1) as f64
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        io::write_csv(path, &["t", "price"], self.times.iter().zip(&self.prices).map(|(&t, &p)| vec![t, p]))
    }
}

/// Standard normal shocks for one path; shared by every scheme.
pub fn brownian_shocks(seed: u64, steps: usize) -> Vec<f64> {
    let mut s = Substream::new(seed, 0);
    (0..steps).map(|_| s.standard_normal()).collect()
}

/// Drift and diffusion coefficients (per unit price) of `dP / P`.
#[inline]
pub fn coefficients(g: &GFunction, x: f64, sigma: f64) -> (f64, f64) {
    (g.value_raw(x), sigma * g.prime_raw(x) * x)
}

/// The same coefficients in the form symmetric under `x -> 1/x`:
/// drift `(G(x) - G(1/x)) / 2`, diffusion `(σ/2)(G'(x)x + G'(1/x)/x)`.
#[inline]
pub fn symmetric_coefficients(g: &GFunction, x: f64, sigma: f64) -> (f64, f64) {
    let xi = 1.0 / x;
    let drift = 0.5 * (g.value_raw(x) - g.value_raw(xi));
    let diff = 0.5 * sigma * (g.prime_raw(x) * x + g.prime_raw(xi) * xi);
    (drift, diff)
}

/// Euler-Maruyama path of the chosen scheme.
pub fn simulate_path(sc: &MarketScenario, g: &GFunction, scheme: Scheme, seed: u64) -> Result<PricePath> {
    let shocks = brownian_shocks(seed, sc.steps());
    simulate_with_shocks(sc, g, scheme, seed, &shocks)
}

/// As [`simulate_path`] with given standard normal shocks (one per step).
pub fn simulate_with_shocks(sc: &MarketScenario, g: &GFunction, scheme: Scheme, seed: u64, shocks: &[f64]) -> Result<PricePath> {
    let n = sc.steps();
    if shocks.len() < n {
        return Err(Error::invalid(format!("{} shocks supplied for {n} steps", shocks.len())));
    }
    let dt = sc.dt_step;
    let sq = dt.sqrt();
    let times: Vec<f64> = (0..=n).map(|k| sc.time(k)).collect();
    match scheme {
        Scheme::EulerP | Scheme::SymP => {
            let mut prices = Vec::with_capacity(n + 1);
            let mut p = sc.p0;
            prices.push(p);
            for k in 0..n {
                let x = sc.ratio(times[k]);
                let (mu, b) = if scheme == Scheme::EulerP {
                    coefficients(g, x, sc.sigma)
                } else {
                    symmetric_coefficients(g, x, sc.sigma)
                };
                p += p * (mu * dt + b * sq * shocks[k]);
                if !(p > 0.0) {
                    return Err(Error::PositivityBreach { step: k + 1, price: p });
                }
                prices.push(p);
            }
            Ok(PricePath::from_prices(times, prices, scheme, seed))
        }
        Scheme::EulerLogp => {
            let mut logs = Vec::with_capacity(n + 1);
            let mut l = sc.p0.ln();
            logs.push(l);
            for k in 0..n {
                let x = sc.ratio(times[k]);
                let (mu, b) = coefficients(g, x, sc.sigma);
                l += (mu - 0.5 * b * b) * dt + b * sq * shocks[k];
                logs.push(l);
            }
            Ok(PricePath::from_log_prices(times, logs, scheme, seed))
        }
        Scheme::DiscreteTatonnement | Scheme::Ingested => Err(Error::invalid(format!(
            "`{}` is not a simulation scheme",
            scheme.as_str()
        ))),
    }
}

/// `paths` independent paths; path `i` uses seed `derive_seed(seed, i)`.
pub fn ensemble(sc: &MarketScenario, g: &GFunction, scheme: Scheme, paths: usize, seed: u64) -> Result<Vec<PricePath>> {
    if paths == 0 {
        return Err(Error::invalid("ensemble needs at least one path"));
    }
    par::try_map_indexed(paths, |i| simulate_path(sc, g, scheme, derive_seed(seed, i as u64)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TatonnementVariant {
    /// `p_t = p_{t-1} + (d - s) / τ₀`
    Raw,
    /// `p_t = p_{t-1} (1 + (d - s) / (s τ₀))`
    Normalized,
    /// `p_t = p_{t-1} (1 + G(d / s) / τ₀)`
    Nonlinear,
}

/// Discrete excess-demand recursion. Returns `p0` followed by one price per
/// `(d, s)` pair.
pub fn discrete_tatonnement(
    p0: f64,
    d: &[f64],
    s: &[f64],
    tau0: f64,
    variant: TatonnementVariant,
    g: Option<&GFunction>,
) -> Result<Vec<f64>> {
    if d.len() != s.len() {
        return Err(Error::invalid("demand and supply sequences differ in length"));
    }
    if !(p0 > 0.0) || !(tau0 > 0.0) {
        return Err(Error::invalid("p0 and tau0 must be > 0"));
    }
    if s.iter().any(|&v| !(v > 0.0)) || d.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::invalid("supply must be > 0 and demand >= 0"));
    }
    if variant == TatonnementVariant::Nonlinear && g.is_none() {
        return Err(Error::invalid("nonlinear tatonnement needs a G function"));
    }
    let mut out = Vec::with_capacity(d.len() + 1);
    let mut p = p0;
    out.push(p);
    for (k, (&dk, &sk)) in d.iter().zip(s).enumerate() {
        p = match variant {
            TatonnementVariant::Raw => p + (dk - sk) / tau0,
            TatonnementVariant::Normalized => p * (1.0 + (dk - sk) / (sk * tau0)),
            TatonnementVariant::Nonlinear => {
                let g = g.expect("checked above");
                if dk == 0.0 {
                    return Err(Error::Domain { what: "d/s", value: 0.0 });
                }
                p * (1.0 + g.value_raw(dk / sk) / tau0)
            }
        };
        if !(p > 0.0) {
            return Err(Error::PositivityBreach { step: k + 1, price: p });
        }
        out.push(p);
    }
    Ok(out)
}

/// `quantity = intercept + slope · price`
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineCurve {
    pub intercept: f64,
    pub slope: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SupplyDemandCurves {
    pub demand: AffineCurve,
    pub supply: AffineCurve,
}

impl SupplyDemandCurves {
    /// Demand must fall and supply rise with price, crossing at a positive price.
    pub fn new(demand: AffineCurve, supply: AffineCurve) -> Result<Self> {
        if !(demand.slope < 0.0) {
            return Err(Error::invalid(format!("demand slope must be < 0, got {}", demand.slope)));
        }
        if !(supply.slope > 0.0) {
            return Err(Error::invalid(format!("supply slope must be > 0, got {}", supply.slope)));
        }
        let c = Self { demand, supply };
        intersect_curves(&c)?;
        Ok(c)
    }
}

/// Price at which demand equals supply.
pub fn intersect_curves(c: &SupplyDemandCurves) -> Result<f64> {
    let ds = c.supply.slope - c.demand.slope;
    if ds == 0.0 {
        return Err(Error::ParallelCurves);
    }
    let p = (c.demand.intercept - c.supply.intercept) / ds;
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::NoPositiveIntersection(p));
    }
    Ok(p)
}
