//! One-dimensional integration backends.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RIEMANN_POINTS: usize = 550;
pub const DEFAULT_MC_DRAWS: usize = 1500;
pub const DEFAULT_REL_TOL: f64 = 1e-8;
pub const DEFAULT_SIGMA_SWITCH: f64 = 1e-2;
pub const DEFAULT_COVERAGE: f64 = 0.99999;
pub const DEFAULT_DENSITY_FLOOR: f64 = 1e-300;
/// Subdivision budget of the adaptive Gauss–Kronrod scheme.
pub const MAX_SUBDIVISIONS: usize = 2000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum IntegrationMethod {
    /// Midpoint rule with `points` equal subintervals.
    Riemann {
        #[serde(default = "default_points")]
        points: usize,
    },
    /// Adaptive 7/15-point Gauss–Kronrod.
    #[serde(rename = "quad", alias = "adaptive-quadrature")]
    AdaptiveQuadrature {
        #[serde(default = "default_rel_tol")]
        rel_tol: f64,
    },
    /// Plain Monte Carlo. For Fisher information the draws come from the
    /// mixture itself.
    #[serde(rename = "mc", alias = "monte-carlo")]
    MonteCarlo {
        #[serde(default = "default_draws")]
        draws: usize,
        #[serde(default)]
        seed: u64,
    },
    /// Riemann sums while every component scale is at least `sigma_switch`,
    /// Monte Carlo below.
    Auto {
        #[serde(default = "default_sigma_switch")]
        sigma_switch: f64,
        #[serde(default = "default_points")]
        points: usize,
        #[serde(default = "default_draws")]
        draws: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_points() -> usize {
    DEFAULT_RIEMANN_POINTS
}
fn default_draws() -> usize {
    DEFAULT_MC_DRAWS
}
fn default_rel_tol() -> f64 {
    DEFAULT_REL_TOL
}
fn default_sigma_switch() -> f64 {
    DEFAULT_SIGMA_SWITCH
}
fn default_coverage() -> f64 {
    DEFAULT_COVERAGE
}
fn default_density_floor() -> f64 {
    DEFAULT_DENSITY_FLOOR
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegrationSpec {
    #[serde(flatten)]
    pub method: IntegrationMethod,
    #[serde(default = "default_coverage")]
    pub coverage: f64,
    #[serde(default = "default_density_floor")]
    pub density_floor: f64,
    /// Explicit integration range. Required for meaningful Riemann sums over
    /// heavy-tailed components; otherwise derived from `coverage`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<(f64, f64)>,
}

impl Default for IntegrationSpec {
    fn default() -> Self {
        Self::auto()
    }
}

impl IntegrationSpec {
    fn with_method(method: IntegrationMethod) -> Self {
        IntegrationSpec { method, coverage: DEFAULT_COVERAGE, density_floor: DEFAULT_DENSITY_FLOOR, bounds: None }
    }

    pub fn riemann(points: usize) -> Self {
        Self::with_method(IntegrationMethod::Riemann { points })
    }

    pub fn quad(rel_tol: f64) -> Self {
        Self::with_method(IntegrationMethod::AdaptiveQuadrature { rel_tol })
    }

    pub fn monte_carlo(draws: usize, seed: u64) -> Self {
        Self::with_method(IntegrationMethod::MonteCarlo { draws, seed })
    }

    pub fn auto() -> Self {
        Self::with_method(IntegrationMethod::Auto {
            sigma_switch: DEFAULT_SIGMA_SWITCH,
            points: DEFAULT_RIEMANN_POINTS,
            draws: DEFAULT_MC_DRAWS,
            seed: 0,
        })
    }

    pub fn with_coverage(mut self, coverage: f64) -> Self {
        self.coverage = coverage;
        self
    }

    pub fn with_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.bounds = Some((lo, hi));
        self
    }

    pub fn with_seed(mut self, new_seed: u64) -> Self {
        match &mut self.method {
            IntegrationMethod::MonteCarlo { seed, .. } | IntegrationMethod::Auto { seed, .. } => *seed = new_seed,
            _ => {}
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        match self.method {
            IntegrationMethod::Riemann { points } if points < 2 => {
                return bad(format!("riemann points must be >= 2, got {points}"))
            }
            IntegrationMethod::MonteCarlo { draws, .. } if draws < 2 => {
                return bad(format!("monte carlo draws must be >= 2, got {draws}"))
            }
            IntegrationMethod::AdaptiveQuadrature { rel_tol } if !(rel_tol > 0.0) => {
                return bad(format!("rel_tol must be > 0, got {rel_tol}"))
            }
            IntegrationMethod::Auto { sigma_switch, points, draws, .. }
                if points < 2 || draws < 2 || !(sigma_switch > 0.0) =>
            {
                return bad("auto method needs points >= 2, draws >= 2, sigma_switch > 0".into());
            }
            _ => {}
        }
        if !(self.coverage > 0.0 && self.coverage < 1.0) {
            return bad(format!("coverage must be in (0,1), got {}", self.coverage));
        }
        if !(self.density_floor > 0.0) {
            return bad(format!("density_floor must be > 0, got {}", self.density_floor));
        }
        if let Some((lo, hi)) = self.bounds {
            if !(lo < hi) {
                return bad(format!("bounds must satisfy lo < hi, got ({lo}, {hi})"));
            }
        }
        Ok(())
    }

    /// Resolves `Auto` against the smallest component scale of a model.
    pub fn resolve(&self, min_scale: f64) -> IntegrationMethod {
        match self.method {
            IntegrationMethod::Auto { sigma_switch, points, draws, seed } => {
                if min_scale >= sigma_switch {
                    IntegrationMethod::Riemann { points }
                } else {
                    IntegrationMethod::MonteCarlo { draws, seed }
                }
            }
            ref m => m.clone(),
        }
    }
}

/// Integrates `f` over `(lo, hi)` with the backend chosen by `spec`.
///
/// Monte Carlo draws are uniform on the interval. `Auto` resolves to the
/// Riemann rule since there is no model scale to switch on.
pub fn integrate<F: Fn(f64) -> f64>(f: F, interval: (f64, f64), spec: &IntegrationSpec) -> Result<f64> {
    let (lo, hi) = interval;
    if !(lo < hi) {
        return Err(Error::Domain(format!("integration interval ({lo}, {hi}) is empty")));
    }
    match spec.method {
        IntegrationMethod::Riemann { points } | IntegrationMethod::Auto { points, .. } => {
            Ok(midpoint_rule(&f, lo, hi, points))
        }
        IntegrationMethod::AdaptiveQuadrature { rel_tol } => Ok(gauss_kronrod(&f, lo, hi, rel_tol, &[])?.value),
        IntegrationMethod::MonteCarlo { draws, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sum: f64 = (0..draws).map(|_| f(rng.random_range(lo..hi))).sum();
            Ok((hi - lo) * sum / draws as f64)
        }
    }
}

pub fn midpoint_rule<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, points: usize) -> f64 {
    let h = (hi - lo) / points as f64;
    (0..points).map(|i| f(lo + (i as f64 + 0.5) * h)).sum::<f64>() * h
}

pub(crate) fn midpoints(lo: f64, hi: f64, points: usize) -> impl Iterator<Item = f64> {
    let h = (hi - lo) / points as f64;
    (0..points).map(move |i| lo + (i as f64 + 0.5) * h)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub subdivisions: usize,
}

// Kronrod 15-point abscissae and weights; the embedded Gauss 7-point rule
// uses the odd-indexed abscissae.
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

/// One 15-point Kronrod panel with the QUADPACK error heuristic.
fn qk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut res_g = fc * WG[3];
    let mut res_k = fc * WGK[7];
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = res_k * 0.5;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let result = res_k * half;
    let res_abs = res_abs * half.abs();
    let res_asc = res_asc * half.abs();
    let mut err = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    (result, err, res_abs)
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
    abs: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive Gauss–Kronrod integration on `[lo, hi]`.
///
/// `breakpoints` inside the interval seed the initial partition, which keeps
/// narrow peaks from being missed by the first panel. Converges when the
/// summed error estimate is below `rel_tol * |value|` (or the round-off floor
/// `50 eps * integral of |f|`).
pub fn gauss_kronrod<F: Fn(f64) -> f64>(
    f: &F,
    lo: f64,
    hi: f64,
    rel_tol: f64,
    breakpoints: &[f64],
) -> Result<QuadResult> {
    let mut cuts: Vec<f64> = std::iter::once(lo)
        .chain(breakpoints.iter().copied().filter(|&x| x > lo && x < hi))
        .chain(std::iter::once(hi))
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut heap = BinaryHeap::new();
    let (mut value, mut error, mut abs) = (0.0, 0.0, 0.0);
    for w in cuts.windows(2) {
        let (v, e, r) = qk15(f, w[0], w[1]);
        value += v;
        error += e;
        abs += r;
        heap.push(Panel { a: w[0], b: w[1], value: v, error: e, abs: r });
    }
    let mut subdivisions = heap.len();
    let done = |value: f64, error: f64, abs: f64| error <= rel_tol * value.abs() || error <= 50.0 * f64::EPSILON * abs;
    while !done(value, error, abs) {
        if subdivisions >= MAX_SUBDIVISIONS {
            return Err(Error::QuadratureFailure { rel_tol, subdivisions, estimate: value, error });
        }
        let worst = heap.pop().expect("non-empty panel heap");
        let mid = 0.5 * (worst.a + worst.b);
        let (v1, e1, r1) = qk15(f, worst.a, mid);
        let (v2, e2, r2) = qk15(f, mid, worst.b);
        value += v1 + v2 - worst.value;
        error += e1 + e2 - worst.error;
        abs += r1 + r2 - worst.abs;
        heap.push(Panel { a: worst.a, b: mid, value: v1, error: e1, abs: r1 });
        heap.push(Panel { a: mid, b: worst.b, value: v2, error: e2, abs: r2 });
        subdivisions += 1;
        if subdivisions % 64 == 0 {
            // resum to shed accumulated cancellation in the running totals
            value = heap.iter().map(|p| p.value).sum();
            error = heap.iter().map(|p| p.error).sum();
            abs = heap.iter().map(|p| p.abs).sum();
        }
    }
    Ok(QuadResult { value, error, subdivisions })
}
