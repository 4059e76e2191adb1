//! Exact densities of the relative price change and its Gaussian limit.
//!
//! With `Y ~ N(0,1)` and `a = σ / (2√Δt)` the chain of random variables is
//!
//! ```text
//! X  = (1 + aY) / (1 - aY)
//! X1 = (D/S) X
//! X2 = G(X1)
//! X3 = G(X1) Δt
//! ```
//!
//! and each density below is the exact push-forward of the previous one.
//! `X3` is compared with `N(G(D/S)Δt, σ²Δt (G'(D/S) D/S)²)`.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::gfunc::GFunction;
use crate::par;
use crate::quad::{self, Estimate, QuadOptions};

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

/// Noise scale, window length and demand/supply ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    sigma: f64,
    dt: f64,
    d_over_s: f64,
}

impl NoiseParams {
    pub fn new(sigma: f64, dt: f64, d_over_s: f64) -> Result<Self> {
        for (name, v) in [("sigma", sigma), ("dt", dt), ("d_over_s", d_over_s)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        let p = Self { sigma, dt, d_over_s };
        if !p.a().is_finite() || p.a() == 0.0 {
            return Err(Error::invalid("sigma / (2 sqrt(dt)) is not a finite positive number"));
        }
        Ok(p)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn d_over_s(&self) -> f64 {
        self.d_over_s
    }

    /// Same parameters with a different `sigma`.
    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::new(sigma, self.dt, self.d_over_s)
    }

    /// Same parameters with a different `dt`.
    pub fn with_dt(&self, dt: f64) -> Result<Self> {
        Self::new(self.sigma, dt, self.d_over_s)
    }

    /// `σ / (2√Δt)`, the scale of the quotient's noise.
    pub fn a(&self) -> f64 {
        self.sigma / (2.0 * self.dt.sqrt())
    }

    /// Centre `G(D/S) Δt` and half the width of the image of the central
    /// `±1` band of the quotient; unlike the Gaussian width this stays
    /// positive where `G'(D/S) = 0`.
    pub fn spread(&self, g: &GFunction) -> (f64, f64) {
        let r = self.d_over_s;
        let u = self.a().min(0.5);
        let hi = r * (1.0 + u) / (1.0 - u);
        let lo = r * (1.0 - u) / (1.0 + u);
        let center = g.value_raw(r) * self.dt;
        let half = 0.5 * (g.value_raw(hi) - g.value_raw(lo)) * self.dt;
        (center, half)
    }

    /// Mean `y₀ = G(D/S) Δt` and standard deviation `σ√Δt G'(D/S) D/S` of the
    /// Gaussian approximation.
    pub fn gaussian_moments(&self, g: &GFunction) -> (f64, f64) {
        let r = self.d_over_s;
        let mean = g.value_raw(r) * self.dt;
        let std = self.sigma * self.dt.sqrt() * g.prime_raw(r) * r;
        (mean, std)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DensityKind {
    #[serde(rename = "fX")]
    FX,
    #[serde(rename = "fX1")]
    FX1,
    #[serde(rename = "f2")]
    F2,
    #[serde(rename = "f3")]
    F3,
    #[serde(rename = "f3N")]
    F3N,
}

impl DensityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DensityKind::FX => "fX",
            DensityKind::FX1 => "fX1",
            DensityKind::F2 => "f2",
            DensityKind::F3 => "f3",
            DensityKind::F3N => "f3N",
        }
    }

    fn uses_g(self) -> bool {
        matches!(self, DensityKind::F2 | DensityKind::F3)
    }
}

impl std::str::FromStr for DensityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fX" | "fx" => Ok(DensityKind::FX),
            "fX1" | "fx1" => Ok(DensityKind::FX1),
            "f2" => Ok(DensityKind::F2),
            "f3" => Ok(DensityKind::F3),
            "f3N" | "f3n" => Ok(DensityKind::F3N),
            other => Err(Error::invalid(format!("unknown density `{other}`"))),
        }
    }
}

/// Density of the anti-correlated quotient `X`.
///
/// `f_X(-1)` is defined as 0, the limit of the expression there.
pub fn fx_density(p: &NoiseParams, x: f64) -> f64 {
    if x == -1.0 {
        return 0.0;
    }
    let a2 = p.sigma * p.sigma / (4.0 * p.dt);
    let a_prime = p.sigma / p.dt.sqrt();
    let s = (x + 1.0) * (x + 1.0);
    let expo = -0.5 * (x - 1.0) * (x - 1.0) / (a2 * s);
    let e = expo.exp();
    if e == 0.0 {
        return 0.0;
    }
    a_prime / SQRT_2PI * e / (a2 * s)
}

/// Density of `X1 = (D/S) X`, as the rescaling `f_X(x / (D/S)) / (D/S)`.
pub fn fx1_density(p: &NoiseParams, x: f64) -> f64 {
    let r = p.d_over_s;
    fx_density(p, x / r) / r
}

/// Density of `X1` written out with `(x - D/S)` and `(x + D/S)` factors.
pub fn fx1_density_expanded(p: &NoiseParams, x: f64) -> f64 {
    let r = p.d_over_s;
    if x == -r {
        return 0.0;
    }
    let c = p.sigma * p.sigma / (4.0 * p.dt);
    let s = (x + r) * (x + r);
    let e = (-0.5 * (x - r) * (x - r) / (c * s)).exp();
    if e == 0.0 {
        return 0.0;
    }
    let pref = 1.0 / (SQRT_2PI * r * p.sigma / p.dt.sqrt());
    pref * e / (0.25 * s / (r * r))
}

/// Density of `X2 = G(X1)`: `f_X1(G⁻¹(y)) / G'(G⁻¹(y))`.
///
/// Returns `+inf` where `G'` vanishes (the flat point of odd powers above
/// one); the singularity is integrable.
pub fn f2_density(g: &GFunction, p: &NoiseParams, y: f64) -> Result<f64> {
    let x = g.inverse_default(y)?.get();
    let gp = g.prime_raw(x);
    let num = fx1_density(p, x);
    if gp == 0.0 {
        return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(num / gp)
}

/// Exact density of `X3 = G(X1) Δt`, evaluated from its closed form.
pub fn f3_density(g: &GFunction, p: &NoiseParams, y: f64) -> Result<f64> {
    let x = g.inverse_default(y / p.dt)?.get();
    Ok(f3_at_preimage(g, p, x))
}

/// `f3` given `x = G⁻¹(y/Δt)`.
#[inline]
pub(crate) fn f3_at_preimage(g: &GFunction, p: &NoiseParams, x: f64) -> f64 {
    let r = p.d_over_s;
    let gp = g.prime_raw(x);
    let c = p.sigma * p.sigma / (4.0 * p.dt);
    let s = (x + r) * (x + r);
    let e = (-0.5 * (x - r) * (x - r) / (c * s)).exp();
    if e == 0.0 {
        return 0.0;
    }
    let denom = SQRT_2PI * (1.0 / r) * (p.sigma * p.dt / p.dt.sqrt()) * gp * 0.25 * s;
    if denom == 0.0 {
        return f64::INFINITY;
    }
    e / denom
}

/// `f3(y) = f2(y / Δt) / Δt`; the composed route, kept as a cross-check.
pub fn f3_density_composed(g: &GFunction, p: &NoiseParams, y: f64) -> Result<f64> {
    Ok(f2_density(g, p, y / p.dt)? / p.dt)
}

/// Exponent `E(y)` of `f3 = e^E / B`.
pub fn f3_exponent(g: &GFunction, p: &NoiseParams, y: f64) -> Result<f64> {
    let x = g.inverse_default(y / p.dt)?.get();
    let r = p.d_over_s;
    let c = p.sigma * p.sigma / (4.0 * p.dt);
    Ok(-0.5 * (x - r) * (x - r) / (c * (x + r) * (x + r)))
}

/// Mean and standard deviation of `f3N`, rejecting the degenerate case
/// `G'(D/S) = 0` (odd powers above one at `D/S = 1`).
pub fn gaussian_limit(g: &GFunction, p: &NoiseParams) -> Result<(f64, f64)> {
    let (m, s) = p.gaussian_moments(g);
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::invalid(format!(
            "Gaussian limit is degenerate: G'({}) = {}",
            p.d_over_s,
            g.prime_raw(p.d_over_s)
        )));
    }
    Ok((m, s))
}

/// Gaussian approximation `f3N`.
pub fn f3n_density(g: &GFunction, p: &NoiseParams, y: f64) -> Result<f64> {
    let (m, s) = gaussian_limit(g, p)?;
    let z = (y - m) / s;
    Ok((-0.5 * z * z).exp() / (SQRT_2PI * s))
}

/// `P(X3N >= y)`.
pub fn f3n_upper_tail(g: &GFunction, p: &NoiseParams, y: f64) -> Result<f64> {
    let (m, s) = gaussian_limit(g, p)?;
    Ok(0.5 * erfc((y - m) / (s * std::f64::consts::SQRT_2)))
}

/// `P(X3N <= y)`.
pub fn f3n_cdf(g: &GFunction, p: &NoiseParams, y: f64) -> Result<f64> {
    let (m, s) = gaussian_limit(g, p)?;
    Ok(0.5 * erfc(-(y - m) / (s * std::f64::consts::SQRT_2)))
}

/// Evaluate any member of the chain.
pub fn density(which: DensityKind, g: &GFunction, p: &NoiseParams, y: f64) -> Result<f64> {
    match which {
        DensityKind::FX => Ok(fx_density(p, y)),
        DensityKind::FX1 => Ok(fx1_density(p, y)),
        DensityKind::F2 => f2_density(g, p, y),
        DensityKind::F3 => f3_density(g, p, y),
        DensityKind::F3N => f3n_density(g, p, y),
    }
}

/// Exact over Gaussian density ratio.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TailRatio {
    Ratio(f64),
    /// The Gaussian density underflowed; the ratio exceeds any threshold.
    Overflow,
}

impl TailRatio {
    pub fn exceeds(&self, threshold: f64) -> bool {
        match *self {
            TailRatio::Ratio(r) => r > threshold,
            TailRatio::Overflow => true,
        }
    }
}

pub fn tail_ratio(g: &GFunction, p: &NoiseParams, y: f64) -> Result<TailRatio> {
    let exact = f3_density(g, p, y)?;
    let normal = f3n_density(g, p, y)?;
    if normal == 0.0 || normal < f64::MIN_POSITIVE {
        return Ok(TailRatio::Overflow);
    }
    let r = exact / normal;
    Ok(if r.is_finite() { TailRatio::Ratio(r) } else { TailRatio::Overflow })
}

/// Location and natural width of a density, plus its integrable singular
/// point (if any) with the power that flattens it.
#[derive(Clone, Copy, Debug)]
struct Shape {
    center: f64,
    scale: f64,
    pole: Option<f64>,
    singular: Option<(f64, f64)>,
}

fn shape(which: DensityKind, g: &GFunction, p: &NoiseParams) -> Shape {
    let r = p.d_over_s;
    let a = p.a();
    let flat = g.has_flat_point().then_some(g.q());
    match which {
        DensityKind::FX => Shape { center: 1.0, scale: 2.0 * a, pole: Some(-1.0), singular: None },
        DensityKind::FX1 => Shape { center: r, scale: 2.0 * a * r, pole: Some(-r), singular: None },
        DensityKind::F2 => {
            let (m, s) = p.spread(g);
            Shape { center: m / p.dt, scale: s / p.dt, pole: None, singular: flat.map(|q| (0.0, q)) }
        }
        DensityKind::F3 => {
            let (m, s) = p.spread(g);
            Shape { center: m, scale: s, pole: None, singular: flat.map(|q| (0.0, q)) }
        }
        DensityKind::F3N => {
            let (m, s) = p.gaussian_moments(g);
            Shape { center: m, scale: s, pole: None, singular: None }
        }
    }
}

/// Integrate `f` over `[lo, hi]` using `breaks`; a singular point `s` with
/// power `q` is removed by the substitution `y = s ± t^q`.
fn integrate_piecewise<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    breaks: &[f64],
    singular: Option<(f64, f64)>,
    opts: &QuadOptions,
) -> Result<Estimate> {
    let inner = |a: f64, b: f64| -> Vec<f64> {
        let mut v = vec![a];
        v.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
        v.push(b);
        v
    };
    match singular {
        Some((s, q)) if s >= lo && s <= hi => {
            let mut total = Estimate { value: 0.0, error: 0.0, evaluations: 0 };
            let root = |d: f64| if d.is_infinite() { f64::INFINITY } else { d.powf(1.0 / q) };
            if hi > s {
                let pts: Vec<f64> = inner(s, hi).into_iter().map(|y| root(y - s)).collect();
                let e = quad::integrate_breaks(
                    |t| {
                        if t == 0.0 {
                            return 0.0;
                        }
                        f(s + t.powf(q)) * q * t.powf(q - 1.0)
                    },
                    &pts,
                    opts,
                )?;
                total.value += e.value;
                total.error += e.error;
                total.evaluations += e.evaluations;
            }
            if lo < s {
                let mut pts: Vec<f64> = inner(lo, s).into_iter().map(|y| root(s - y)).collect();
                pts.reverse();
                let e = quad::integrate_breaks(
                    |t| {
                        if t == 0.0 {
                            return 0.0;
                        }
                        f(s - t.powf(q)) * q * t.powf(q - 1.0)
                    },
                    &pts,
                    opts,
                )?;
                total.value += e.value;
                total.error += e.error;
                total.evaluations += e.evaluations;
            }
            Ok(total)
        }
        _ => quad::integrate_breaks(f, &inner(lo, hi), opts),
    }
}

/// `∫ weight(y) f(y) dy` over `[lo, hi]` (either end may be infinite) for
/// the chosen member of the chain. Breakpoints follow the density's own
/// scale out to 2^9 widths; beyond that the tails are mapped to finite
/// intervals.
pub fn integrate_weighted<W: Fn(f64) -> f64>(
    which: DensityKind,
    g: &GFunction,
    p: &NoiseParams,
    weight: W,
    lo: f64,
    hi: f64,
    opts: &QuadOptions,
) -> Result<Estimate> {
    if which == DensityKind::F3N {
        gaussian_limit(g, p)?;
    }
    let sh = shape(which, g, p);
    let mut extra = Vec::new();
    if let Some(pole) = sh.pole {
        extra.push(pole);
    }
    if let Some((s, _)) = sh.singular {
        extra.push(s);
    }
    let breaks = quad::line_breaks(sh.center, sh.scale, 9, &extra);
    let eval = |y: f64| -> f64 {
        let d = match which {
            DensityKind::FX => fx_density(p, y),
            DensityKind::FX1 => fx1_density(p, y),
            DensityKind::F2 => match g.inverse_default(y) {
                Ok(x) => {
                    let x = x.get();
                    let gp = g.prime_raw(x);
                    if gp == 0.0 { 0.0 } else { fx1_density(p, x) / gp }
                }
                Err(_) => f64::NAN,
            },
            DensityKind::F3 => match g.inverse_default(y / p.dt) {
                Ok(x) => {
                    let v = f3_at_preimage(g, p, x.get());
                    if v.is_finite() { v } else { 0.0 }
                }
                Err(_) => f64::NAN,
            },
            DensityKind::F3N => f3n_density(g, p, y).unwrap_or(f64::NAN),
        };
        if d == 0.0 { 0.0 } else { weight(y) * d }
    };
    let est = integrate_piecewise(eval, lo, hi, &breaks, sh.singular, opts)?;
    if !est.value.is_finite() {
        return Err(Error::Convergence { op: "density quadrature", iterations: 0 });
    }
    Ok(est)
}

/// Total mass `∫ f` over ℝ.
pub fn normalization(which: DensityKind, g: &GFunction, p: &NoiseParams, opts: &QuadOptions) -> Result<f64> {
    Ok(integrate_weighted(which, g, p, |_| 1.0, f64::NEG_INFINITY, f64::INFINITY, opts)?.value)
}

/// `P(X3 >= y)` from the exact density.
pub fn f3_upper_tail(g: &GFunction, p: &NoiseParams, y: f64) -> Result<f64> {
    let opts = QuadOptions { abs_tol: 1e-14, rel_tol: 1e-10, ..QuadOptions::default() };
    Ok(integrate_weighted(DensityKind::F3, g, p, |_| 1.0, y, f64::INFINITY, &opts)?.value)
}

/// A tabulated density on a uniform grid.
#[derive(Clone, Debug, Serialize)]
pub struct DensityCurve {
    pub which: DensityKind,
    pub grid: Vec<(f64, f64)>,
    pub params: NoiseParams,
    pub g: Option<GFunction>,
}

impl DensityCurve {
    pub fn spacing(&self) -> f64 {
        if self.grid.len() < 2 {
            return 0.0;
        }
        self.grid[1].0 - self.grid[0].0
    }

    /// Riemann sum `Σ f · Δy`.
    pub fn riemann_mass(&self) -> f64 {
        self.grid.iter().map(|&(_, f)| f).sum::<f64>() * self.spacing()
    }

    /// Grid point with the largest density value.
    pub fn argmax(&self) -> Option<(f64, f64)> {
        self.grid
            .iter()
            .copied()
            .filter(|(_, f)| f.is_finite())
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// CSV `y,f` plus a JSON sidecar with the parameters.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        crate::io::write_csv(path, &["y", "f"], self.grid.iter().map(|&(y, f)| vec![y, f]))?;
        let meta = serde_json::json!({
            "density": self.which.as_str(),
            "params": self.params,
            "g": self.g,
            "n": self.grid.len(),
            "spacing": self.spacing(),
        });
        crate::io::write_json(&crate::io::sidecar_path(path), &meta)
    }
}

/// Tabulate `which` on `n` uniform points over `[y_min, y_max]`.
pub fn tabulate(
    g: &GFunction,
    p: &NoiseParams,
    which: DensityKind,
    y_min: f64,
    y_max: f64,
    n: usize,
) -> Result<DensityCurve> {
    if !(y_min < y_max) || !y_min.is_finite() || !y_max.is_finite() {
        return Err(Error::invalid(format!("tabulation range [{y_min}, {y_max}] is empty")));
    }
    if n < 2 {
        return Err(Error::invalid(format!("tabulation needs n >= 2, got {n}")));
    }
    let h = (y_max - y_min) / (n - 1) as f64;
    let grid = par::try_map_indexed(n, |i| {
        let y = if i == n - 1 { y_max } else { y_min + h * i as f64 };
        density(which, g, p, y).map(|f| (y, f))
    })?;
    Ok(DensityCurve {
        which,
        grid,
        params: *p,
        g: which.uses_g().then_some(*g),
    })
}

/// Numerically integrated CDF of `f3`, normalised to the total mass.
///
/// The table uses `sinh`-spaced nodes around the mode (dense in the bulk,
/// reaching ±40 standard deviations), cumulative trapezoids between nodes
/// and adaptive quadrature for the two tails and for panels touching a
/// singular point. Values are linearly interpolated.
#[derive(Clone, Debug)]
pub struct DensityCdf {
    ys: Vec<f64>,
    cdf: Vec<f64>,
    total_mass: f64,
}

impl DensityCdf {
    pub fn f3(g: &GFunction, p: &NoiseParams, n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::invalid("CDF table needs at least 3 nodes"));
        }
        let (m, s) = p.spread(g);
        let reach = 40.0_f64;
        let width = 2.0;
        let u_max = (reach / width).asinh();
        let mut ys: Vec<f64> = (0..n)
            .map(|i| {
                let u = -u_max + 2.0 * u_max * i as f64 / (n - 1) as f64;
                m + s * width * u.sinh()
            })
            .collect();
        ys.dedup();
        let dens = par::try_map_indexed(ys.len(), |i| f3_density(g, p, ys[i]))?;
        let opts = QuadOptions { abs_tol: 1e-13, rel_tol: 1e-10, ..QuadOptions::default() };
        let flat = g.has_flat_point();
        let panels = par::try_map_indexed(ys.len() - 1, |i| {
            let (a, b) = (ys[i], ys[i + 1]);
            let (fa, fb) = (dens[i], dens[i + 1]);
            if flat && a <= 0.0 && b >= 0.0 || !fa.is_finite() || !fb.is_finite() {
                Ok(integrate_weighted(DensityKind::F3, g, p, |_| 1.0, a, b, &opts)?.value)
            } else {
                Ok(0.5 * (fa + fb) * (b - a))
            }
        })?;
        let left = integrate_weighted(DensityKind::F3, g, p, |_| 1.0, f64::NEG_INFINITY, ys[0], &opts)?.value;
        let right = integrate_weighted(DensityKind::F3, g, p, |_| 1.0, *ys.last().unwrap(), f64::INFINITY, &opts)?.value;
        let mut cdf = Vec::with_capacity(ys.len());
        let mut acc = left;
        cdf.push(acc);
        for w in &panels {
            acc += w.max(0.0);
            cdf.push(acc);
        }
        let total = acc + right;
        for c in cdf.iter_mut() {
            *c /= total;
        }
        // Monotone by construction; clamp against rounding anyway.
        for i in 1..cdf.len() {
            if cdf[i] < cdf[i - 1] {
                cdf[i] = cdf[i - 1];
            }
        }
        Ok(Self { ys, cdf, total_mass: total })
    }

    /// Mass of `f3` before renormalisation (slightly below one because the
    /// model excludes non-positive ratios).
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// Interpolated CDF. Outside the table (beyond 40 standard deviations)
    /// the edge values are returned; the mass out there is already included.
    pub fn eval(&self, y: f64) -> f64 {
        let n = self.ys.len();
        if y <= self.ys[0] {
            return self.cdf[0];
        }
        if y >= self.ys[n - 1] {
            return self.cdf[n - 1];
        }
        let k = self.ys.partition_point(|&v| v <= y) - 1;
        let (y0, y1) = (self.ys[k], self.ys[k + 1]);
        let t = (y - y0) / (y1 - y0);
        self.cdf[k] + t * (self.cdf[k + 1] - self.cdf[k])
    }

    pub fn nodes(&self) -> (&[f64], &[f64]) {
        (&self.ys, &self.cdf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pd1() -> GFunction {
        GFunction::power_diff(1.0).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(NoiseParams::new(0.0, 1.0, 1.0).is_err());
        assert!(NoiseParams::new(0.1, -1.0, 1.0).is_err());
        assert!(NoiseParams::new(0.1, 1.0, 0.0).is_err());
        assert!(NoiseParams::new(f64::NAN, 1.0, 1.0).is_err());
        assert!(NoiseParams::new(0.1, 1.0, 1.0).is_ok());
    }

    #[test]
    fn fx_peak_and_pole() {
        let p = NoiseParams::new(0.1, 1.0, 1.0).unwrap();
        let peak = fx_density(&p, 1.0);
        assert_relative_eq!(peak, 0.1 / (SQRT_2PI * 0.01 * 0.25 * 4.0), max_relative = 1e-14);
        assert_relative_eq!(peak, 3.989_422_804_014_327, max_relative = 1e-12);
        assert_eq!(fx_density(&p, -1.0), 0.0);
        assert_eq!(fx_density(&p, -1.0 + 1e-9), 0.0);
    }

    #[test]
    fn fx1_forms_agree() {
        for &(sigma, dt, r) in &[(0.1, 1.0, 1.0), (0.2, 0.25, 1.5), (0.05, 2.0, 0.8)] {
            let p = NoiseParams::new(sigma, dt, r).unwrap();
            for i in 0..200 {
                let x = -3.0 + 0.037 * i as f64;
                let a = fx1_density(&p, x);
                let b = fx1_density_expanded(&p, x);
                if a == 0.0 || b == 0.0 {
                    assert!(a < 1e-300 && b < 1e-300);
                } else {
                    assert_relative_eq!(a, b, max_relative = 1e-12);
                }
            }
        }
        let p = NoiseParams::new(0.1, 1.0, 1.0).unwrap();
        assert_eq!(fx1_density(&p, 0.7), fx_density(&p, 0.7));
    }

    /// Stationary point of `f_X`: root of `x - 1 + a²(x+1)² = 0` near 1.
    fn fx_mode(a: f64) -> f64 {
        let a2 = a * a;
        let b = 1.0 + 2.0 * a2;
        (-b + (b * b - 4.0 * a2 * (a2 - 1.0)).sqrt()) / (2.0 * a2)
    }

    #[test]
    fn fx1_exponent_vanishes_at_ratio_and_mode_scales() {
        let p = NoiseParams::new(0.1, 1.0, 2.0).unwrap();
        let full = 1.0 / (SQRT_2PI * 2.0 * 0.1) / (0.25 * 16.0 / 4.0);
        assert_relative_eq!(fx1_density(&p, 2.0), full, max_relative = 1e-13);
        let m = 2.0 * fx_mode(p.a());
        let at = fx1_density(&p, m);
        assert!(at > fx1_density(&p, m + 1e-4));
        assert!(at > fx1_density(&p, m - 1e-4));
    }

    #[test]
    fn f3_routes_agree() {
        let g = pd1();
        for &(sigma, dt, r) in &[(0.1, 1.0, 1.2), (0.2, 0.25, 0.8), (0.05, 0.5, 1.0)] {
            let p = NoiseParams::new(sigma, dt, r).unwrap();
            let (m, s) = p.gaussian_moments(&g);
            for k in -40..=40 {
                let y = m + s * k as f64 * 0.25;
                let a = f3_density(&g, &p, y).unwrap();
                let b = f3_density_composed(&g, &p, y).unwrap();
                assert_relative_eq!(a, b, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn f3_equals_f2_when_dt_is_one() {
        let g = pd1();
        let p = NoiseParams::new(0.1, 1.0, 1.0).unwrap();
        for &y in &[-0.3, -0.01, 0.0, 0.05, 0.4] {
            assert_relative_eq!(f3_density(&g, &p, y).unwrap(), f2_density(&g, &p, y).unwrap(), max_relative = 1e-14);
        }
    }

    #[test]
    fn f3n_values() {
        let g = pd1();
        let p = NoiseParams::new(0.1, 1.0, 1.0).unwrap();
        assert_relative_eq!(f3n_density(&g, &p, 0.0).unwrap(), 1.0 / (SQRT_2PI * 0.2), max_relative = 1e-14);
        let p = NoiseParams::new(0.1, 1.0, 1.2).unwrap();
        let (m, _) = p.gaussian_moments(&g);
        assert_relative_eq!(m, 1.2 - 1.0 / 1.2, max_relative = 1e-15);
        assert_relative_eq!(m, 0.366_666_666_666_666_7, max_relative = 1e-12);
    }

    #[test]
    fn f2_mode_sits_at_g_of_one() {
        let g = pd1();
        let p = NoiseParams::new(0.1, 1.0, 1.0).unwrap();
        let at = f2_density(&g, &p, 0.0).unwrap();
        assert!(at > f2_density(&g, &p, 1e-3).unwrap());
        assert!(at > f2_density(&g, &p, -1e-3).unwrap());
    }

    #[test]
    fn f2_matches_change_of_variables() {
        let g = pd1();
        let p = NoiseParams::new(0.1, 1.0, 1.0).unwrap();
        let y = 0.05;
        let h = 1e-6;
        let dinv = (g.inverse_default(y + h).unwrap().get() - g.inverse_default(y - h).unwrap().get()) / (2.0 * h);
        let oracle = fx1_density(&p, g.inverse_default(y).unwrap().get()) * dinv;
        assert_relative_eq!(f2_density(&g, &p, y).unwrap(), oracle, max_relative = 1e-8);
    }

    #[test]
    fn tail_ratio_examples() {
        let g = pd1();
        let p = NoiseParams::new(0.05, 1.0, 1.2).unwrap();
        let (m, s) = p.gaussian_moments(&g);
        match tail_ratio(&g, &p, m).unwrap() {
            TailRatio::Ratio(r) => assert!((0.9..=1.1).contains(&r), "{r}"),
            TailRatio::Overflow => panic!("overflow at the mode"),
        }
        assert!(tail_ratio(&g, &p, m + 10.0 * s).unwrap().exceeds(10.0));
        assert!(tail_ratio(&g, &p, m + 20.0 * s).unwrap().exceeds(1e6));
        assert_eq!(tail_ratio(&g, &p, m + 1e3 * s).unwrap(), TailRatio::Overflow);
    }

    #[test]
    fn tabulate_examples() {
        let g = pd1();
        let p = NoiseParams::new(0.1, 1.0, 1.2).unwrap();
        let (m, s) = p.gaussian_moments(&g);
        let c = tabulate(&g, &p, DensityKind::F3N, m - s, m + s, 3).unwrap();
        assert_eq!(c.argmax().unwrap().0, m);
        assert!(c.g.is_none());

        // The exponent vanishes at x = 1 but the (x+1)^-2 factor pulls the
        // mode slightly left, to about 1 - 4a².
        let p1 = NoiseParams::new(0.1, 1.0, 1.0).unwrap();
        let c = tabulate(&g, &p1, DensityKind::FX, 0.0, 3.0, 1001).unwrap();
        let (x, _) = c.argmax().unwrap();
        let mode = fx_mode(p1.a());
        assert!((x - mode).abs() <= 0.5 * c.spacing() + 1e-12, "{x} vs {mode}");
        assert!((mode - (1.0 - 4.0 * p1.a() * p1.a())).abs() < 1e-3);

        assert!(tabulate(&g, &p, DensityKind::F3, 1.0, 1.0, 10).is_err());
        assert!(tabulate(&g, &p, DensityKind::F3, 0.0, 1.0, 1).is_err());
    }

    #[test]
    fn flat_family_density_is_infinite_only_at_zero() {
        let g = GFunction::odd_power_of_diff(3).unwrap();
        let p = NoiseParams::new(0.1, 1.0, 1.0).unwrap();
        assert_eq!(f3_density(&g, &p, 0.0).unwrap(), f64::INFINITY);
        assert!(f3_density(&g, &p, 1e-6).unwrap().is_finite());
    }

    fn accepted_mass(p: &NoiseParams) -> f64 {
        1.0 - erfc(1.0 / (p.a() * std::f64::consts::SQRT_2))
    }

    #[test]
    fn mass_matches_acceptance_probability() {
        let opts = QuadOptions::default();
        for g in [pd1(), GFunction::power_diff(2.5).unwrap(), GFunction::odd_power_of_diff(3).unwrap()] {
            for &(sigma, dt, r) in &[(0.1, 1.0, 1.0), (0.4, 1.0, 1.2), (0.02, 0.5, 0.9)] {
                let p = NoiseParams::new(sigma, dt, r).unwrap();
                for which in [DensityKind::FX, DensityKind::FX1, DensityKind::F2, DensityKind::F3] {
                    // The quotient lives on the whole line; only positive
                    // ratios survive the map through G.
                    let want = match which {
                        DensityKind::FX | DensityKind::FX1 => 1.0,
                        _ => accepted_mass(&p),
                    };
                    let m = normalization(which, &g, &p, &opts).unwrap_or_else(|e| panic!("{which:?} {g:?} {sigma} {r}: {e}"));
                    assert!((m - want).abs() < 1e-9, "{which:?} {g:?} {sigma} {r}: {m} vs {want}");
                }
                match normalization(DensityKind::F3N, &g, &p, &opts) {
                    Ok(m) => assert!((m - 1.0).abs() < 1e-9),
                    Err(_) => assert!(g.has_flat_point() && r == 1.0),
                }
            }
        }
    }

    #[test]
    fn cdf_is_monotone_and_bounded() {
        let g = pd1();
        let p = NoiseParams::new(0.1, 1.0, 1.2).unwrap();
        let cdf = DensityCdf::f3(&g, &p, 2000).unwrap();
        let (_, c) = cdf.nodes();
        assert!(c.windows(2).all(|w| w[0] <= w[1]));
        assert!(c[0] >= 0.0 && *c.last().unwrap() <= 1.0 + 1e-15);
        assert!(cdf.eval(-100.0) < 1e-12);
        assert!(cdf.eval(100.0) > 1.0 - 1e-12);
    }
}
