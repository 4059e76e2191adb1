//! Windowed marginal-volatility estimates and their theoretical values.
//!
//! A window starting at grid index `i*` spans `K` one-step increments
//! `S_j = P(t_{i*+j}) - P(t_{i*+j-1})`, `j = 1..K`. The estimate is
//! `Var[{S_j}] / δt`, further divided by `E[P]²` (mean of `P(t_{i*+j})`,
//! `j = 0..K-1`) for `vpn`, or computed on log prices for `vlog`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gfunc::GFunction;
use crate::io;
use crate::par;
use crate::quad::{self, QuadOptions};
use crate::sde::{MarketScenario, PricePath, Scheme};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolMode {
    Vp,
    Vpn,
    Vlog,
}

impl VolMode {
    pub fn as_str(self) -> &'static str {
        match self {
            VolMode::Vp => "vp",
            VolMode::Vpn => "vpn",
            VolMode::Vlog => "vlog",
        }
    }
}

impl std::str::FromStr for VolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vp" => Ok(VolMode::Vp),
            "vpn" => Ok(VolMode::Vpn),
            "vlog" => Ok(VolMode::Vlog),
            other => Err(Error::invalid(format!("unknown volatility mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VolatilityConfig {
    pub window: usize,
    pub stride: usize,
    pub mode: VolMode,
    /// Divide by `K - 1` instead of `K`.
    pub bessel: bool,
}

impl VolatilityConfig {
    /// Non-overlapping windows (`stride = K`) and the population variance.
    pub fn new(window: usize, mode: VolMode) -> Result<Self> {
        Self::with_stride(window, window, mode)
    }

    pub fn with_stride(window: usize, stride: usize, mode: VolMode) -> Result<Self> {
        if window < 2 {
            return Err(Error::invalid(format!("window must hold at least 2 increments, got {window}")));
        }
        if stride == 0 {
            return Err(Error::invalid("stride must be >= 1"));
        }
        Ok(Self { window, stride, mode, bessel: false })
    }

    pub fn bessel(mut self, on: bool) -> Self {
        self.bessel = on;
        self
    }

    /// Overlapping windows give serially correlated estimates.
    pub fn overlapping(&self) -> bool {
        self.stride < self.window
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VolatilitySeries {
    pub centers: Vec<f64>,
    pub estimates: Vec<f64>,
    pub theory: Option<Vec<f64>>,
    pub mode: VolMode,
    /// Grid index at which each window starts.
    pub starts: Vec<usize>,
    /// Trailing windows that would run past the end of the path.
    pub dropped_windows: usize,
    pub overlapping: bool,
    /// Window length `K δt`.
    pub window_length: f64,
}

impl VolatilitySeries {
    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }

    /// CSV `t_center,estimate,theory`; theory is blank when absent.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows = (0..self.len()).map(|i| {
            vec![
                Some(self.centers[i]),
                Some(self.estimates[i]),
                self.theory.as_ref().map(|t| t[i]),
            ]
        });
        io::write_csv_optional(path, &["t_center", "estimate", "theory"], rows)
    }
}

fn variance(xs: &[f64], bessel: bool) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / if bessel { n - 1.0 } else { n }).max(0.0)
}

/// Window estimates along one path.
pub fn estimate_volatility(path: &PricePath, cfg: &VolatilityConfig) -> Result<VolatilitySeries> {
    let k = cfg.window;
    let n = path.len();
    if n < k + 1 {
        return Err(Error::InsufficientData(format!(
            "path has {n} points, a window of {k} increments needs {}",
            k + 1
        )));
    }
    let dt = path.dt();
    let values = match cfg.mode {
        VolMode::Vlog => &path.log_prices,
        VolMode::Vp | VolMode::Vpn => &path.prices,
    };
    let mut starts = Vec::new();
    let mut dropped = 0;
    let mut s = 0;
    while s + 1 < n {
        if s + k < n {
            starts.push(s);
        } else {
            dropped += 1;
        }
        s += cfg.stride;
    }
    let estimates = par::map_slice(&starts, |&s| {
        let inc: Vec<f64> = (1..=k).map(|j| values[s + j] - values[s + j - 1]).collect();
        let v = variance(&inc, cfg.bessel) / dt;
        match cfg.mode {
            VolMode::Vpn => {
                let mean_p = path.prices[s..s + k].iter().sum::<f64>() / k as f64;
                v / (mean_p * mean_p)
            }
            _ => v,
        }
    });
    let centers = starts.iter().map(|&s| 0.5 * (path.times[s] + path.times[s + k])).collect();
    Ok(VolatilitySeries {
        centers,
        estimates,
        theory: None,
        mode: cfg.mode,
        starts,
        dropped_windows: dropped,
        overlapping: cfg.overlapping(),
        window_length: k as f64 * dt,
    })
}

/// Pointwise mean over series with identical windows.
pub fn ensemble_mean(series: &[VolatilitySeries]) -> Result<VolatilitySeries> {
    let first = series.first().ok_or_else(|| Error::InsufficientData("no series to average".into()))?;
    if series.iter().any(|s| s.starts != first.starts || s.mode != first.mode) {
        return Err(Error::invalid("series have different windows or modes"));
    }
    let m = series.len() as f64;
    let estimates = (0..first.len())
        .map(|i| series.iter().map(|s| s.estimates[i]).sum::<f64>() / m)
        .collect();
    Ok(VolatilitySeries { estimates, ..first.clone() })
}

/// `p0 · exp(∫ G(D/S) dt)` from `t0` to `t`, the path with `σ = 0`.
pub fn deterministic_price(sc: &MarketScenario, g: &GFunction, t: f64) -> Result<f64> {
    if t == sc.t0 {
        return Ok(sc.p0);
    }
    let opts = QuadOptions { abs_tol: 1e-12, rel_tol: 1e-12, ..QuadOptions::default() };
    let integral = quad::integrate(|s| g.value_raw(sc.ratio(s)), sc.t0, t, &opts)?.value;
    Ok(sc.p0 * integral.exp())
}

/// Marginal volatility implied by the scenario at `t`.
///
/// `vlog` is `(σ G'(x) x)²` with `x = D/S`. `vp` multiplies by `P²`, with
/// `P = price_hint` or the deterministic price. `vpn` divides `vp` by the
/// deterministic price squared (the proxy for `E[P]`).
pub fn theoretical_volatility(
    sc: &MarketScenario,
    g: &GFunction,
    t: f64,
    mode: VolMode,
    price_hint: Option<f64>,
) -> Result<f64> {
    let eps = 1e-9 * (sc.t_end - sc.t0);
    if !(t >= sc.t0 - eps && t <= sc.t_end + eps) {
        return Err(Error::invalid(format!("t = {t} is outside [{}, {}]", sc.t0, sc.t_end)));
    }
    if let Some(p) = price_hint {
        if !(p > 0.0) {
            return Err(Error::invalid(format!("price hint must be > 0, got {p}")));
        }
    }
    let x = sc.ratio(t);
    let vlog = (sc.sigma * g.prime_raw(x) * x).powi(2);
    Ok(match mode {
        VolMode::Vlog => vlog,
        VolMode::Vp => {
            let p = match price_hint {
                Some(p) => p,
                None => deterministic_price(sc, g, t)?,
            };
            vlog * p * p
        }
        VolMode::Vpn => match price_hint {
            Some(p) => {
                let e = deterministic_price(sc, g, t)?;
                vlog * (p / e) * (p / e)
            }
            None => vlog,
        },
    })
}

/// Fill `series.theory` from the scenario.
pub fn attach_theory(series: &mut VolatilitySeries, sc: &MarketScenario, g: &GFunction) -> Result<()> {
    let theory = par::try_map_indexed(series.len(), |i| theoretical_volatility(sc, g, series.centers[i], series.mode, None))?;
    series.theory = Some(theory);
    Ok(())
}

/// Centered moving average of odd width, shrinking at the ends.
pub fn moving_average(xs: &[f64], width: usize) -> Vec<f64> {
    let h = width / 2;
    (0..xs.len())
        .map(|i| {
            let lo = i.saturating_sub(h);
            let hi = (i + h + 1).min(xs.len());
            xs[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtremumKind {
    Min,
    Max,
}

/// Interior local extrema whose prominence is at least `frac` of the range.
///
/// The prominence of a minimum is the smaller of the rises to the highest
/// point on either side before a lower value is met (and symmetrically for
/// maxima).
pub fn prominent_extrema(xs: &[f64], frac: f64) -> Vec<(usize, ExtremumKind)> {
    let n = xs.len();
    if n < 3 {
        return Vec::new();
    }
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let need = frac * (hi - lo);
    if !(hi > lo) {
        return Vec::new();
    }
    let mut out = Vec::new();
    for i in 1..n - 1 {
        let is_min = xs[i] < xs[i - 1] && xs[i] <= xs[i + 1];
        let is_max = xs[i] > xs[i - 1] && xs[i] >= xs[i + 1];
        if !(is_min || is_max) {
            continue;
        }
        let sign = if is_min { 1.0 } else { -1.0 };
        // Work with the minimum of sign * xs.
        let v = sign * xs[i];
        let side = |iter: &mut dyn Iterator<Item = usize>| -> Option<f64> {
            let mut peak = v;
            for j in iter {
                let w = sign * xs[j];
                if w < v {
                    return Some(peak - v);
                }
                peak = peak.max(w);
            }
            // Reached the boundary without meeting a lower value.
            Some(peak - v)
        };
        let left = side(&mut (0..i).rev()).unwrap_or(0.0);
        let right = side(&mut (i + 1..n)).unwrap_or(0.0);
        if left.min(right) >= need && need > 0.0 {
            out.push((i, if is_min { ExtremumKind::Min } else { ExtremumKind::Max }));
        }
    }
    out
}

/// Spearman rank correlation (ties get their average rank).
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let ra = ranks(a);
    let rb = ranks(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Times where `D/S` crosses 1 inside the horizon: the turning points of
/// the deterministic price.
pub fn deterministic_extrema(sc: &MarketScenario) -> Vec<(f64, ExtremumKind)> {
    let n = sc.steps().max(1000);
    let h = (sc.t_end - sc.t0) / n as f64;
    let f = |t: f64| sc.ratio(t) - 1.0;
    let mut out = Vec::new();
    let mut prev_t = sc.t0;
    let mut prev = f(prev_t);
    for i in 1..=n {
        let t = sc.t0 + h * i as f64;
        let v = f(t);
        if prev != 0.0 && v != 0.0 && (prev > 0.0) != (v > 0.0) {
            let (mut a, mut b) = (prev_t, t);
            for _ in 0..100 {
                let m = 0.5 * (a + b);
                if (f(m) > 0.0) == (prev > 0.0) {
                    a = m;
                } else {
                    b = m;
                }
            }
            let kind = if prev > 0.0 { ExtremumKind::Max } else { ExtremumKind::Min };
            out.push((0.5 * (a + b), kind));
        }
        if v != 0.0 {
            prev = v;
            prev_t = t;
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct ExtremaReport {
    /// Turning points of the smoothed (ensemble-mean) log price.
    pub price_extrema: Vec<f64>,
    /// Turning points of the deterministic price, when a scenario is given.
    pub deterministic_extrema: Option<Vec<f64>>,
    pub volatility_minima: Vec<f64>,
    pub volatility_maxima: Vec<f64>,
    /// Local maxima of the windowed mean `|Δ log P|`.
    pub change_maxima: Vec<f64>,
    /// For each reference price extremum, distance to the nearest volatility minimum.
    pub extremum_to_vol_min: Vec<f64>,
    /// For each volatility minimum, distance to the nearest reference price extremum.
    pub vol_min_to_extremum: Vec<f64>,
    /// For each `|Δ log P|` maximum, distance to the nearest volatility maximum.
    pub change_max_to_vol_max: Vec<f64>,
    /// Spearman correlation of windowed mean `|Δ log P|` with the estimates.
    pub rank_correlation: Option<f64>,
    pub window_length: f64,
    pub no_interior_extrema: bool,
    pub overlapping_windows: bool,
}

/// Relative prominence used to keep a turning point.
pub const PROMINENCE: f64 = 0.25;
/// Moving-average width (in windows) applied before locating extrema.
pub const SMOOTHING: usize = 5;

fn nearest(from: &[f64], to: &[f64]) -> Vec<f64> {
    from.iter()
        .map(|&a| to.iter().map(|&b| (a - b).abs()).fold(f64::INFINITY, f64::min))
        .collect()
}

/// Relate volatility extrema to price extrema over one path or an ensemble.
///
/// `series` must be computed on the same grid as `paths` (for an ensemble,
/// the pointwise mean). Price extrema come from the deterministic path when
/// a scenario is given and from the smoothed mean log price otherwise.
pub fn extrema_report(paths: &[PricePath], series: &VolatilitySeries, scenario: Option<&MarketScenario>) -> Result<ExtremaReport> {
    if series.is_empty() {
        return Err(Error::InsufficientData("empty volatility series".into()));
    }
    let first = paths.first().ok_or_else(|| Error::InsufficientData("no price path".into()))?;
    if paths.iter().any(|p| p.len() != first.len()) {
        return Err(Error::invalid("paths differ in length"));
    }
    let n = first.len();
    let last_needed = series.starts.iter().map(|s| s + (series.window_length / first.dt()).round() as usize).max().unwrap_or(0);
    if last_needed >= n {
        return Err(Error::invalid("series windows do not fit the paths"));
    }
    let k = (series.window_length / first.dt()).round() as usize;
    let m = paths.len() as f64;

    let mean_log: Vec<f64> = (0..n).map(|i| paths.iter().map(|p| p.log_prices[i]).sum::<f64>() / m).collect();
    let change: Vec<f64> = series
        .starts
        .iter()
        .map(|&s| paths.iter().map(|p| (p.log_prices[s + k] - p.log_prices[s]).abs()).sum::<f64>() / m)
        .collect();

    let at = |idx: usize| series.centers[idx];
    // Smoothed price sampled at window centres.
    let price_at_windows: Vec<f64> = series.starts.iter().map(|&s| mean_log[s..=s + k].iter().sum::<f64>() / (k + 1) as f64).collect();
    let price_smooth = moving_average(&price_at_windows, SMOOTHING);
    let price_extrema: Vec<f64> = prominent_extrema(&price_smooth, PROMINENCE).into_iter().map(|(i, _)| at(i)).collect();

    let vol_smooth = moving_average(&series.estimates, SMOOTHING);
    let vol_ext = prominent_extrema(&vol_smooth, PROMINENCE);
    let volatility_minima: Vec<f64> = vol_ext.iter().filter(|e| e.1 == ExtremumKind::Min).map(|e| at(e.0)).collect();
    let volatility_maxima: Vec<f64> = vol_ext.iter().filter(|e| e.1 == ExtremumKind::Max).map(|e| at(e.0)).collect();
    let change_smooth = moving_average(&change, SMOOTHING);
    let change_maxima: Vec<f64> = prominent_extrema(&change_smooth, PROMINENCE)
        .into_iter()
        .filter(|e| e.1 == ExtremumKind::Max)
        .map(|e| at(e.0))
        .collect();

    let deterministic = scenario.map(|sc| deterministic_extrema(sc).into_iter().map(|e| e.0).collect::<Vec<f64>>());
    let reference = deterministic.clone().unwrap_or_else(|| price_extrema.clone());

    Ok(ExtremaReport {
        extremum_to_vol_min: nearest(&reference, &volatility_minima),
        vol_min_to_extremum: nearest(&volatility_minima, &reference),
        change_max_to_vol_max: nearest(&change_maxima, &volatility_maxima),
        rank_correlation: spearman(&change, &series.estimates),
        no_interior_extrema: reference.is_empty(),
        price_extrema,
        deterministic_extrema: deterministic,
        volatility_minima,
        volatility_maxima,
        change_maxima,
        window_length: series.window_length,
        overlapping_windows: series.overlapping,
    })
}

/// Read a `t,price` CSV into a path.
///
/// Rows are numbered from 1 after the header. The grid must be uniform to
/// a relative tolerance of `1e-6` of the first spacing.
pub fn ingest_prices(path: &Path) -> Result<PricePath> {
    let text = std::fs::read_to_string(path)?;
    ingest_prices_str(&text)
}

pub fn ingest_prices_str(text: &str) -> Result<PricePath> {
    let rows = io::parse_two_columns(text)?;
    if rows.len() < 2 {
        return Err(Error::InsufficientData(format!("{} price rows; at least 2 needed", rows.len())));
    }
    let mut times = Vec::with_capacity(rows.len());
    let mut prices = Vec::with_capacity(rows.len());
    for (i, &(_, t, p)) in rows.iter().enumerate() {
        if !(p > 0.0) {
            return Err(Error::NonPositivePrice { row: i + 1, price: p });
        }
        times.push(t);
        prices.push(p);
    }
    let h = times[1] - times[0];
    if !(h > 0.0) {
        return Err(Error::NonUniformGrid { row: 2 });
    }
    for i in 2..times.len() {
        let d = times[i] - times[i - 1];
        if (d - h).abs() > 1e-6 * h {
            return Err(Error::NonUniformGrid { row: i + 1 });
        }
    }
    Ok(PricePath::from_prices(times, prices, Scheme::Ingested, 0))
}
