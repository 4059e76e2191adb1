//! Price-response functions `G` mapping the demand/supply ratio to a relative
//! price-change rate.
//!
//! Two families are provided:
//!
//! * [`Family::PowerDiff`]: `G(x) = x^q - x^(-q)` for real `q > 0`;
//! * [`Family::OddPowerOfDiff`]: `G(x) = (x - 1/x)^q` for odd integer `q`.
//!
//! Both satisfy `G(1) = 0`, `G(x) = -G(1/x)` and are strictly increasing with
//! range all of ℝ, so the inverse always exists.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative tolerance for [`GFunction::inverse`].
pub const DEFAULT_INVERSE_TOL: f64 = 1e-12;
/// Iteration cap for the inverse solver.
pub const INVERSE_MAX_ITER: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    PowerDiff,
    #[serde(rename = "odd_power_diff")]
    OddPowerOfDiff,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::PowerDiff => "power_diff",
            Family::OddPowerOfDiff => "odd_power_diff",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "power_diff" => Ok(Family::PowerDiff),
            "odd_power_diff" => Ok(Family::OddPowerOfDiff),
            other => Err(Error::invalid(format!(
                "unknown G family `{other}` (expected power_diff or odd_power_diff)"
            ))),
        }
    }
}

/// A positive demand/supply ratio.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct GDomainPoint(f64);

impl GDomainPoint {
    pub fn new(x: f64) -> Result<Self> {
        if x > 0.0 && x.is_finite() {
            Ok(Self(x))
        } else {
            Err(Error::Domain { what: "x", value: x })
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// An immutable member of one of the two `G` families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GFunction {
    family: Family,
    q: f64,
}

impl GFunction {
    pub fn new(family: Family, q: f64) -> Result<Self> {
        match family {
            Family::PowerDiff => Self::power_diff(q),
            Family::OddPowerOfDiff => {
                if q.fract() != 0.0 || q < 1.0 || !q.is_finite() {
                    return Err(Error::invalid(format!(
                        "odd_power_diff needs an odd positive integer q, got {q}"
                    )));
                }
                Self::odd_power_of_diff(q as u32)
            }
        }
    }

    pub fn power_diff(q: f64) -> Result<Self> {
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::invalid(format!("power_diff needs q > 0, got {q}")));
        }
        Ok(Self {
            family: Family::PowerDiff,
            q,
        })
    }

    /// Rejects even `q`, for which `G(x) = -G(1/x)` fails.
    pub fn odd_power_of_diff(q: u32) -> Result<Self> {
        if q % 2 == 0 {
            return Err(Error::invalid(format!(
                "odd_power_diff needs an odd positive integer q, got {q}"
            )));
        }
        Ok(Self {
            family: Family::OddPowerOfDiff,
            q: f64::from(q),
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// True when `G'` vanishes at `x = 1` (odd powers above one). The pushed
    /// forward densities then have an integrable singularity at `G = 0`.
    pub fn has_flat_point(&self) -> bool {
        self.family == Family::OddPowerOfDiff && self.q > 1.0
    }

    #[inline]
    fn pow(&self, x: f64) -> f64 {
        // q is an integer for the odd family; powi keeps sign and precision.
        match self.family {
            Family::PowerDiff => x.powf(self.q),
            Family::OddPowerOfDiff => x.powi(self.q as i32),
        }
    }

    pub fn value(&self, x: GDomainPoint) -> f64 {
        self.value_raw(x.0)
    }

    pub fn prime(&self, x: GDomainPoint) -> f64 {
        self.prime_raw(x.0)
    }

    pub fn second(&self, x: GDomainPoint) -> f64 {
        self.second_raw(x.0)
    }

    /// `G(x)`; checks the domain.
    pub fn eval(&self, x: f64) -> Result<f64> {
        Ok(self.value(GDomainPoint::new(x)?))
    }

    /// `G'(x)`; checks the domain.
    pub fn eval_prime(&self, x: f64) -> Result<f64> {
        Ok(self.prime(GDomainPoint::new(x)?))
    }

    /// `G''(x)`; checks the domain.
    pub fn eval_second(&self, x: f64) -> Result<f64> {
        Ok(self.second(GDomainPoint::new(x)?))
    }

    #[inline]
    pub(crate) fn value_raw(&self, x: f64) -> f64 {
        match self.family {
            Family::PowerDiff => {
                let p = self.pow(x);
                p - 1.0 / p
            }
            Family::OddPowerOfDiff => self.pow(x - 1.0 / x),
        }
    }

    #[inline]
    pub(crate) fn prime_raw(&self, x: f64) -> f64 {
        let q = self.q;
        match self.family {
            Family::PowerDiff => q * (x.powf(q - 1.0) + x.powf(-q - 1.0)),
            Family::OddPowerOfDiff => {
                let u = x - 1.0 / x;
                let du = 1.0 + 1.0 / (x * x);
                q * u.powi(self.q as i32 - 1) * du
            }
        }
    }

    #[inline]
    pub(crate) fn second_raw(&self, x: f64) -> f64 {
        let q = self.q;
        match self.family {
            Family::PowerDiff => q * (q - 1.0) * x.powf(q - 2.0) - q * (q + 1.0) * x.powf(-q - 2.0),
            Family::OddPowerOfDiff => {
                let n = self.q as i32;
                let u = x - 1.0 / x;
                let du = 1.0 + 1.0 / (x * x);
                let d2u = -2.0 / (x * x * x);
                let first = if n >= 2 {
                    q * (q - 1.0) * u.powi(n - 2) * du * du
                } else {
                    0.0
                };
                first + q * u.powi(n - 1) * d2u
            }
        }
    }

    /// `G⁻¹(y)` with the default tolerance.
    pub fn inverse_default(&self, y: f64) -> Result<GDomainPoint> {
        self.inverse(y, DEFAULT_INVERSE_TOL)
    }

    /// Solve `G(x) = y`.
    ///
    /// The bracket starts at `[1, 1]` and is widened geometrically (×2 / ÷2)
    /// until it straddles the root, then refined by an Illinois-type secant
    /// step that falls back to bisection whenever it fails to shrink the
    /// bracket. The odd family is first reduced to `x - 1/x = y^(1/q)` so
    /// that the flat point at `x = 1` does not cost precision.
    ///
    /// The returned point satisfies `|G(x) - y| <= tol * max(1, |y|)`; the
    /// iteration keeps going past that until the bracket collapses to a few
    /// ulps, because callers differentiate through the result.
    pub fn inverse(&self, y: f64, tol: f64) -> Result<GDomainPoint> {
        if !(tol > 0.0) {
            return Err(Error::invalid(format!("inverse tolerance must be > 0, got {tol}")));
        }
        if !y.is_finite() {
            return Err(Error::Domain { what: "y", value: y });
        }
        if y == 0.0 {
            return Ok(GDomainPoint(1.0));
        }
        let x = match self.family {
            Family::PowerDiff => {
                let q = self.q;
                solve_increasing(|x| { let p = x.powf(q); p - 1.0 / p }, y)?
            }
            Family::OddPowerOfDiff => {
                let target = y.signum() * y.abs().powf(1.0 / self.q);
                solve_increasing(|x| x - 1.0 / x, target)?
            }
        };
        let resid = (self.value_raw(x) - y).abs();
        if resid > tol * y.abs().max(1.0) {
            return Err(Error::Convergence {
                op: "g_inverse",
                iterations: INVERSE_MAX_ITER,
            });
        }
        Ok(GDomainPoint(x))
    }
}

impl std::fmt::Display for GFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}(q={})", self.family.as_str(), self.q)
    }
}

/// Root of a strictly increasing `f` on (0, ∞) whose range is ℝ.
fn solve_increasing<F: Fn(f64) -> f64>(f: F, target: f64) -> Result<f64> {
    let g = |x: f64| f(x) - target;
    let (mut lo, mut hi) = (1.0_f64, 1.0_f64);
    let mut g_lo = g(lo);
    let mut g_hi = g_lo;
    let mut iter = 0;
    if g_lo == 0.0 {
        return Ok(1.0);
    }
    if g_lo < 0.0 {
        while g_hi < 0.0 {
            lo = hi;
            g_lo = g_hi;
            hi *= 2.0;
            g_hi = g(hi);
            iter += 1;
            if iter > INVERSE_MAX_ITER || !hi.is_finite() {
                return Err(Error::Convergence { op: "g_inverse", iterations: iter });
            }
        }
    } else {
        while g_lo > 0.0 {
            hi = lo;
            g_hi = g_lo;
            lo *= 0.5;
            g_lo = g(lo);
            iter += 1;
            if iter > INVERSE_MAX_ITER || lo == 0.0 {
                return Err(Error::Convergence { op: "g_inverse", iterations: iter });
            }
        }
    }
    if g_lo == 0.0 {
        return Ok(lo);
    }
    if g_hi == 0.0 {
        return Ok(hi);
    }

    // Illinois false position with a bisection safeguard.
    let mut side = 0i8;
    while iter < INVERSE_MAX_ITER {
        iter += 1;
        let width = hi - lo;
        if width <= 4.0 * f64::EPSILON * hi {
            break;
        }
        let mut x = (lo * g_hi - hi * g_lo) / (g_hi - g_lo);
        if !(x > lo && x < hi) || !x.is_finite() {
            x = 0.5 * (lo + hi);
        }
        let gx = g(x);
        if gx == 0.0 {
            return Ok(x);
        }
        let before = width;
        if gx < 0.0 {
            lo = x;
            g_lo = gx;
            if side == -1 {
                g_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = x;
            g_hi = gx;
            if side == 1 {
                g_lo *= 0.5;
            }
            side = 1;
        }
        // Secant steps that hug one end converge slowly; bisect instead.
        if hi - lo > 0.5 * before {
            let mid = 0.5 * (lo + hi);
            let gm = g(mid);
            if gm == 0.0 {
                return Ok(mid);
            }
            if gm < 0.0 {
                lo = mid;
                g_lo = gm;
            } else {
                hi = mid;
                g_hi = gm;
            }
            side = 0;
        }
    }
    if hi - lo > 64.0 * f64::EPSILON * hi {
        return Err(Error::Convergence { op: "g_inverse", iterations: iter });
    }
    // Pick the endpoint with the smaller residual.
    Ok(if g_lo.abs() <= g_hi.abs() { lo } else { hi })
}

/// Outcome of one axiom check.
#[derive(Clone, Debug, Serialize)]
pub struct AxiomResult {
    pub name: &'static str,
    pub passed: bool,
    /// Largest violation measured (0 when the axiom holds everywhere).
    pub max_violation: f64,
    /// Grid point with the largest violation, if any failed.
    pub worst_x: Option<f64>,
}

/// Per-axiom report produced by [`check_condition_g`].
#[derive(Clone, Debug, Serialize)]
pub struct ConditionReport {
    pub g: GFunction,
    pub grid_len: usize,
    pub axioms: Vec<AxiomResult>,
}

impl ConditionReport {
    pub fn all_pass(&self) -> bool {
        self.axioms.iter().all(|a| a.passed)
    }

    pub fn max_violation(&self) -> f64 {
        self.axioms.iter().map(|a| a.max_violation).fold(0.0, f64::max)
    }
}

struct Tracker {
    name: &'static str,
    worst: f64,
    worst_x: Option<f64>,
    failed: bool,
}

impl Tracker {
    fn new(name: &'static str) -> Self {
        Self { name, worst: 0.0, worst_x: None, failed: false }
    }

    fn record(&mut self, x: f64, violation: f64, ok: bool) {
        if violation > self.worst || (!ok && !self.failed) {
            self.worst = self.worst.max(violation);
            self.worst_x = Some(x);
        }
        self.failed |= !ok;
    }

    fn finish(self) -> AxiomResult {
        AxiomResult {
            name: self.name,
            passed: !self.failed,
            max_violation: self.worst,
            worst_x: if self.failed { self.worst_x } else { None },
        }
    }
}

/// Check the structural axioms on a grid of positive points.
///
/// Reports `G(1) = 0`, `G' > 0`, antisymmetry `G(x) = -G(1/x)`, the reflection
/// identity `x G'(x) = x⁻¹ G'(1/x)`, the sign pattern of `(x G'(x))'` about 1,
/// and monotone growth of `x G'(x)` away from 1.
pub fn check_condition_g(g: &GFunction, grid: &[f64]) -> Result<ConditionReport> {
    if grid.is_empty() {
        return Err(Error::invalid("check_condition_g needs a nonempty grid"));
    }
    let pts = grid
        .iter()
        .map(|&x| GDomainPoint::new(x).map(|p| p.get()))
        .collect::<Result<Vec<f64>>>()?;

    let mut at_one = Tracker::new("G(1)=0");
    let v1 = g.value_raw(1.0).abs();
    at_one.record(1.0, v1, v1 == 0.0);

    let mut positive = Tracker::new("G'>0");
    let mut antisym = Tracker::new("G(x)=-G(1/x)");
    let mut reflect = Tracker::new("xG'(x)=G'(1/x)/x");
    let mut sign = Tracker::new("(xG')' sign about 1");
    let mut growth = Tracker::new("xG' grows away from 1");

    for &x in &pts {
        let gp = g.prime_raw(x);
        positive.record(x, if gp > 0.0 { 0.0 } else { -gp }, gp > 0.0);

        let a = g.value_raw(x);
        let b = g.value_raw(1.0 / x);
        let viol = (a + b).abs() / (1.0 + a.abs());
        antisym.record(x, viol, viol <= 1e-12);

        let lhs = x * gp;
        let rhs = g.prime_raw(1.0 / x) / x;
        let viol = (lhs - rhs).abs() / (1.0 + lhs.abs());
        reflect.record(x, viol, viol <= 1e-10);

        let d = gp + x * g.second_raw(x);
        let ok = if x < 1.0 {
            d < 0.0
        } else if x > 1.0 {
            d > 0.0
        } else {
            true
        };
        let viol = if ok { 0.0 } else { d.abs() };
        sign.record(x, viol, ok);
    }

    // x G'(x) should rise as |ln x| grows on each side of 1.
    let mut sorted = pts.clone();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let xg = |x: f64| x * g.prime_raw(x);
    for w in sorted.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        let (v0, v1) = (xg(x0), xg(x1));
        let ok = if x1 <= 1.0 {
            v0 > v1
        } else if x0 >= 1.0 {
            v1 > v0
        } else {
            true
        };
        let viol = if ok { 0.0 } else { (v1 - v0).abs() / (1.0 + v0.abs()) };
        growth.record(x1, viol, ok);
    }

    Ok(ConditionReport {
        g: *g,
        grid_len: pts.len(),
        axioms: vec![
            at_one.finish(),
            positive.finish(),
            antisym.finish(),
            reflect.finish(),
            sign.finish(),
            growth.finish(),
        ],
    })
}

/// `n` log-spaced points on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}
