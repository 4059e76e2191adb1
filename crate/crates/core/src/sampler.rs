//! Monte Carlo draws of the relative price change `X3`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::density::{self, DensityCdf, NoiseParams};
use crate::error::{Error, Result};
use crate::gfunc::GFunction;
use crate::io;
use crate::par;
use crate::rng::{Substream, CHUNK};

/// Nodes of the reference CDF table used for KS distances.
pub const CDF_NODES: usize = 10_000;

/// Correlation between the demand and supply shocks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correlation {
    /// The baseline: one shock raises demand and lowers supply.
    Anti,
    Rho(f64),
}

#[derive(Clone, Debug, Serialize)]
pub struct SampleBatch {
    pub values: Vec<f64>,
    pub n_requested: usize,
    pub n_rejected: usize,
    pub seed: u64,
    pub params: NoiseParams,
    pub g: GFunction,
    pub rho: Correlation,
}

impl SampleBatch {
    pub fn rejection_rate(&self) -> f64 {
        self.n_rejected as f64 / self.n_requested as f64
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.values.len() as f64
    }

    /// One `value` column plus a JSON sidecar with the parameters.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        io::write_csv(path, &["value"], self.values.iter().map(|&v| vec![v]))?;
        io::write_json(&io::sidecar_path(path), &self.sidecar())
    }

    fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "family": self.g.family().as_str(),
            "q": self.g.q(),
            "sigma": self.params.sigma(),
            "dt": self.params.dt(),
            "d_over_s": self.params.d_over_s(),
            "rho": match self.rho { Correlation::Anti => serde_json::json!("anti"), Correlation::Rho(r) => serde_json::json!(r) },
            "seed": self.seed,
            "n_requested": self.n_requested,
            "n_rejected": self.n_rejected,
        })
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("sample size must be >= 1"));
    }
    Ok(())
}

/// Generate in fixed-size chunks, chunk `k` on stream `k`, and concatenate in
/// order. `draw` returns `None` for a rejected draw.
fn generate<F>(seed: u64, n: usize, draw: F) -> (Vec<f64>, usize)
where
    F: Fn(&mut Substream) -> Option<f64> + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    let parts = par::map_indexed(chunks, |k| {
        let len = CHUNK.min(n - k * CHUNK);
        let mut s = Substream::new(seed, k as u64);
        let mut out = Vec::with_capacity(len);
        let mut rejected = 0usize;
        for _ in 0..len {
            match draw(&mut s) {
                Some(v) => out.push(v),
                None => rejected += 1,
            }
        }
        (out, rejected)
    });
    let mut values = Vec::with_capacity(n);
    let mut rejected = 0;
    for (v, r) in parts {
        values.extend(v);
        rejected += r;
    }
    (values, rejected)
}

fn finish(values: Vec<f64>, rejected: usize, n: usize, seed: u64, g: &GFunction, p: &NoiseParams, rho: Correlation) -> Result<SampleBatch> {
    if 2 * rejected > n {
        return Err(Error::ExcessiveRejection { rejected, requested: n });
    }
    Ok(SampleBatch {
        values,
        n_requested: n,
        n_rejected: rejected,
        seed,
        params: *p,
        g: *g,
        rho,
    })
}

/// Draws of `G((D/S)(Δt + (σ/2)Y√Δt) / (Δt − (σ/2)Y√Δt)) Δt` with `Y ~ N(0,1)`.
/// Draws with a non-positive factor are rejected and counted.
pub fn sample_x3(g: &GFunction, p: &NoiseParams, n: usize, seed: u64) -> Result<SampleBatch> {
    check_n(n)?;
    let (dt, r) = (p.dt(), p.d_over_s());
    let half = 0.5 * p.sigma() * dt.sqrt();
    let (values, rejected) = generate(seed, n, |s| {
        let y = s.standard_normal();
        let num = dt + half * y;
        let den = dt - half * y;
        if num <= 0.0 || den <= 0.0 {
            return None;
        }
        Some(g.value_raw(r * num / den) * dt)
    });
    finish(values, rejected, n, seed, g, p, Correlation::Anti)
}

/// As [`sample_x3`] with demand shock `Y1` and supply shock `Y2` of
/// correlation `rho`, built as `Y2 = ρY1 + √(1-ρ²)Z`. The denominator is
/// `Δt + (σ/2)Y2√Δt`, so `ρ → -1` recovers the baseline.
pub fn sample_x3_correlated(g: &GFunction, p: &NoiseParams, rho: f64, n: usize, seed: u64) -> Result<SampleBatch> {
    check_n(n)?;
    if !(rho > -1.0 && rho <= 1.0) {
        return Err(Error::invalid(format!("rho must lie in (-1, 1], got {rho}")));
    }
    let (dt, r) = (p.dt(), p.d_over_s());
    let half = 0.5 * p.sigma() * dt.sqrt();
    let c = (1.0 - rho * rho).max(0.0).sqrt();
    let (values, rejected) = generate(seed, n, |s| {
        let y1 = s.standard_normal();
        let z = s.standard_normal();
        let y2 = if rho == 1.0 { y1 } else { rho * y1 + c * z };
        let num = dt + half * y1;
        let den = dt + half * y2;
        if num <= 0.0 || den <= 0.0 {
            return None;
        }
        Some(g.value_raw(r * (num / den)) * dt)
    });
    finish(values, rejected, n, seed, g, p, Correlation::Rho(rho))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    F3Exact,
    F3Normal,
}

#[derive(Clone, Debug, Serialize)]
pub struct DistanceReport {
    pub ks_statistic: f64,
    pub n: usize,
    pub reference: Reference,
}

/// Largest gap between the empirical CDF of `sorted` and `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64 + Sync>(sorted: &[f64], cdf: F) -> f64 {
    let n = sorted.len() as f64;
    let gaps = par::map_indexed(sorted.len(), |i| {
        let f = cdf(sorted[i]);
        let lo = f - i as f64 / n;
        let hi = (i + 1) as f64 / n - f;
        lo.max(hi)
    });
    gaps.into_iter().fold(0.0_f64, f64::max).clamp(0.0, 1.0)
}

/// KS distance between the batch and the exact or Gaussian law of `X3`.
pub fn ks_distance(batch: &SampleBatch, reference: Reference) -> Result<DistanceReport> {
    if batch.values.is_empty() {
        return Err(Error::invalid("KS distance of an empty batch"));
    }
    let mut sorted = batch.values.clone();
    par::sort_f64(&mut sorted);
    let (g, p) = (&batch.g, &batch.params);
    let ks = match reference {
        Reference::F3Exact => {
            let table = DensityCdf::f3(g, p, CDF_NODES)?;
            ks_statistic(&sorted, |y| table.eval(y))
        }
        Reference::F3Normal => {
            density::gaussian_limit(g, p)?;
            ks_statistic(&sorted, |y| density::f3n_cdf(g, p, y).unwrap_or(f64::NAN))
        }
    };
    Ok(DistanceReport { ks_statistic: ks, n: sorted.len(), reference })
}

/// Two-sample KS statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    par::sort_f64(&mut a);
    par::sort_f64(&mut b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0_f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TailPoint {
    pub threshold: f64,
    pub empirical: f64,
    pub gaussian: f64,
}

/// Empirical `P(X3 >= y)` next to the Gaussian tail, per threshold.
pub fn tail_exceedance(batch: &SampleBatch, thresholds: &[f64]) -> Result<Vec<TailPoint>> {
    if thresholds.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::invalid("tail thresholds must be sorted"));
    }
    let mut sorted = batch.values.clone();
    par::sort_f64(&mut sorted);
    let n = sorted.len() as f64;
    thresholds
        .iter()
        .map(|&y| {
            let below = sorted.partition_point(|&v| v < y);
            Ok(TailPoint {
                threshold: y,
                empirical: (sorted.len() - below) as f64 / n,
                gaussian: density::f3n_upper_tail(&batch.g, &batch.params, y)?,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Bin {
    pub left: f64,
    pub right: f64,
    pub count: u64,
}

/// Equal-width histogram over `[min, max]` of the batch.
pub fn histogram(values: &[f64], bins: usize) -> Result<Vec<Bin>> {
    if bins == 0 || values.is_empty() {
        return Err(Error::invalid("histogram needs at least one bin and one value"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        hi = lo + 1.0;
    }
    let w = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &v in values {
        let k = (((v - lo) / w) as usize).min(bins - 1);
        counts[k] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| Bin {
            left: lo + w * k as f64,
            right: if k == bins - 1 { hi } else { lo + w * (k + 1) as f64 },
            count,
        })
        .collect())
}

pub fn write_histogram(path: &Path, bins: &[Bin]) -> Result<()> {
    io::write_csv(path, &["bin_left", "bin_right", "count"], bins.iter().map(|b| vec![b.left, b.right, b.count as f64]))
}
