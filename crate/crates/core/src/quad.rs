//! Globally adaptive Gauss–Kronrod (7/15) quadrature.
//!
//! Semi-infinite pieces are mapped onto (0, 1] with `x = a ± (1 - t)/t`, which
//! turns power-law tails into bounded integrands. All pieces of a breakpoint
//! list share one priority queue, so effort goes where the error is.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Clone, Copy, Debug)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-9,
            rel_tol: 1e-10,
            max_subdivisions: 4000,
        }
    }
}

impl QuadOptions {
    pub fn with_abs_tol(abs_tol: f64) -> Self {
        Self {
            abs_tol,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

#[derive(Clone, Copy, Debug)]
enum Map {
    Finite,
    /// x = origin + (1 - t)/t, t in (0, 1]
    Upper(f64),
    /// x = origin - (1 - t)/t, t in (0, 1]
    Lower(f64),
}

#[derive(Clone, Copy, Debug)]
struct Piece {
    map: Map,
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

#[inline]
fn mapped<F: Fn(f64) -> f64>(f: &F, map: Map, t: f64) -> f64 {
    match map {
        Map::Finite => f(t),
        Map::Upper(a) => {
            let v = f(a + (1.0 - t) / t);
            if v == 0.0 { 0.0 } else { v / (t * t) }
        }
        Map::Lower(b) => {
            let v = f(b - (1.0 - t) / t);
            if v == 0.0 { 0.0 } else { v / (t * t) }
        }
    }
}

fn rescale_error(err: f64, resabs: f64, resasc: f64) -> f64 {
    let mut e = err.abs();
    if resasc != 0.0 && e != 0.0 {
        let scale = (200.0 * e / resasc).powf(1.5);
        e = if scale < 1.0 { resasc * scale } else { resasc };
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        e = e.max(50.0 * f64::EPSILON * resabs);
    }
    e
}

fn kronrod<F: Fn(f64) -> f64>(f: &F, map: Map, lo: f64, hi: f64) -> (f64, f64) {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = mapped(f, map, center);
    let mut resk = fc * WGK[7];
    let mut resg = fc * WG[3];
    let mut resabs = resk.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = mapped(f, map, center - dx);
        let f2 = mapped(f, map, center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        resk += WGK[j] * (f1 + f2);
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = resk * 0.5;
    let mut resasc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        resasc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = resk * half;
    let err = rescale_error((resk - resg) * half, resabs * half.abs(), resasc * half.abs());
    (value, err)
}

fn make_piece<F: Fn(f64) -> f64>(f: &F, map: Map, lo: f64, hi: f64) -> Piece {
    let (value, error) = kronrod(f, map, lo, hi);
    Piece {
        map,
        lo,
        hi,
        value,
        error,
    }
}

/// Integrate `f` over `[a, b]`; either end may be infinite.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, opts: &QuadOptions) -> Result<Estimate> {
    integrate_breaks(f, &[a, b], opts)
}

/// Integrate `f` over consecutive segments `[p0, p1], [p1, p2], ...`.
///
/// `points` must be nondecreasing; the first may be `-inf` and the last
/// `+inf`. Zero-width segments are skipped.
pub fn integrate_breaks<F: Fn(f64) -> f64>(
    f: F,
    points: &[f64],
    opts: &QuadOptions,
) -> Result<Estimate> {
    if points.len() < 2 {
        return Err(Error::invalid("quadrature needs at least two points"));
    }
    for w in points.windows(2) {
        if !(w[0] <= w[1]) {
            return Err(Error::invalid(format!(
                "quadrature breakpoints must be nondecreasing ({} > {})",
                w[0], w[1]
            )));
        }
    }
    for (i, p) in points.iter().enumerate() {
        let end = i == 0 || i == points.len() - 1;
        if p.is_nan() || (p.is_infinite() && !end) {
            return Err(Error::invalid("interior quadrature breakpoints must be finite"));
        }
    }

    let mut heap = BinaryHeap::new();
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a == b {
            continue;
        }
        let piece = match (a.is_infinite(), b.is_infinite()) {
            (false, false) => make_piece(&f, Map::Finite, a, b),
            (false, true) => make_piece(&f, Map::Upper(a), 0.0, 1.0),
            (true, false) => make_piece(&f, Map::Lower(b), 0.0, 1.0),
            (true, true) => {
                heap.push(make_piece(&f, Map::Lower(0.0), 0.0, 1.0));
                make_piece(&f, Map::Upper(0.0), 0.0, 1.0)
            }
        };
        heap.push(piece);
    }
    let mut evaluations = heap.len() * 15;
    let mut done: Vec<Piece> = Vec::new();

    let total = |heap: &BinaryHeap<Piece>, done: &[Piece]| {
        let v: f64 = heap.iter().chain(done.iter()).map(|p| p.value).sum();
        let e: f64 = heap.iter().chain(done.iter()).map(|p| p.error).sum();
        (v, e)
    };

    let mut subdivisions = 0;
    loop {
        let (value, error) = total(&heap, &done);
        let tol = opts.abs_tol.max(opts.rel_tol * value.abs());
        if error <= tol || heap.is_empty() {
            if error <= tol || heap.is_empty() && error <= 1e3 * tol {
                return Ok(Estimate {
                    value,
                    error,
                    evaluations,
                });
            }
            return Err(Error::Quadrature {
                a: points[0],
                b: points[points.len() - 1],
                error,
                subdivisions,
            });
        }
        if subdivisions >= opts.max_subdivisions {
            return Err(Error::Quadrature {
                a: points[0],
                b: points[points.len() - 1],
                error,
                subdivisions,
            });
        }
        let worst = heap.pop().expect("heap is nonempty");
        let mid = 0.5 * (worst.lo + worst.hi);
        // Pieces that cannot be split further are retired as they are.
        if !(mid > worst.lo && mid < worst.hi) || (worst.hi - worst.lo) < 1e-15 * worst.lo.abs().max(worst.hi.abs()) {
            done.push(worst);
            continue;
        }
        heap.push(make_piece(&f, worst.map, worst.lo, mid));
        heap.push(make_piece(&f, worst.map, mid, worst.hi));
        evaluations += 30;
        subdivisions += 1;
    }
}

/// Symmetric breakpoints `center ± scale·2^k`, `k = -1..levels`, with
/// infinite ends and `extra` merged in.
pub fn line_breaks(center: f64, scale: f64, levels: u32, extra: &[f64]) -> Vec<f64> {
    let mut pts = vec![f64::NEG_INFINITY, center, f64::INFINITY];
    let mut s = 0.5 * scale;
    for _ in 0..=levels {
        pts.push(center - s);
        pts.push(center + s);
        s *= 2.0;
    }
    pts.extend(extra.iter().copied().filter(|p| p.is_finite()));
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}
