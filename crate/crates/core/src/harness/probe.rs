//! Numerical properness probe: mass of an unnormalised density over growing
//! boxes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};

pub const MAX_PROBE_DIM: usize = 3;
pub const DEFAULT_PLATEAU_TOL: f64 = 0.01;
pub const DEFAULT_PROBE_POINTS: usize = 200;

/// Axis-aligned box, one `(lo, hi)` pair per dimension.
pub type ProbeBox = Vec<(f64, f64)>;

/// Symmetric box `[-a, a]^dim`.
pub fn symmetric_box(a: f64, dim: usize) -> ProbeBox {
    vec![(-a, a); dim]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSettings {
    /// Midpoints per axis for each box.
    pub points_per_axis: usize,
    /// Relative change between the last two masses below which the sequence
    /// counts as a plateau.
    pub plateau_tol: f64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings { points_per_axis: DEFAULT_PROBE_POINTS, plateau_tol: DEFAULT_PLATEAU_TOL }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeVerdict {
    Plateau,
    Diverging,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub boxes: Vec<ProbeBox>,
    pub masses: Vec<f64>,
    pub verdict: ProbeVerdict,
}

fn contains(outer: &ProbeBox, inner: &ProbeBox) -> bool {
    outer.iter().zip(inner).all(|(o, i)| o.0 <= i.0 && i.1 <= o.1)
}

/// Tensor midpoint mass of `exp(log_density)` over each box.
pub fn properness_probe<F>(
    log_density: F,
    boxes: &[ProbeBox],
    settings: &ProbeSettings,
    exec: Execution,
) -> Result<ProbeReport>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    if boxes.len() < 2 {
        return Err(Error::InvalidSpec("the probe needs at least two boxes".into()));
    }
    let dim = boxes[0].len();
    if dim == 0 || dim > MAX_PROBE_DIM {
        return Err(Error::InvalidSpec(format!("probe dimension must be 1..={MAX_PROBE_DIM}, got {dim}")));
    }
    if settings.points_per_axis == 0 || !(settings.plateau_tol > 0.0) {
        return Err(Error::InvalidSpec("probe needs points_per_axis >= 1 and plateau_tol > 0".into()));
    }
    for (i, b) in boxes.iter().enumerate() {
        if b.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: b.len() });
        }
        if b.iter().any(|(lo, hi)| !(lo < hi) || !lo.is_finite() || !hi.is_finite()) {
            return Err(Error::InvalidSpec(format!("box {i} has an empty or infinite side")));
        }
        if i > 0 && !contains(b, &boxes[i - 1]) {
            return Err(Error::InvalidSpec(format!("box {i} does not contain box {}", i - 1)));
        }
    }

    let m = settings.points_per_axis;
    let cells = m.pow(dim as u32);
    let masses = boxes
        .iter()
        .map(|b| {
            let h: Vec<f64> = b.iter().map(|(lo, hi)| (hi - lo) / m as f64).collect();
            let volume: f64 = h.iter().product();
            let terms = exec::map_range(exec, cells, |mut c| {
                let mut x = [0.0; MAX_PROBE_DIM];
                for j in (0..dim).rev() {
                    x[j] = b[j].0 + (c % m) as f64 * h[j] + 0.5 * h[j];
                    c /= m;
                }
                let v = log_density(&x[..dim]).exp();
                if v.is_nan() {
                    0.0
                } else {
                    v
                }
            });
            terms.iter().sum::<f64>() * volume
        })
        .collect::<Vec<f64>>();
    let n = masses.len();
    let (a, b) = (masses[n - 2], masses[n - 1]);
    let verdict = if b.is_finite() && (b - a).abs() <= settings.plateau_tol * b.abs() {
        ProbeVerdict::Plateau
    } else {
        ProbeVerdict::Diverging
    };
    Ok(ProbeReport { boxes: boxes.to_vec(), masses, verdict })
}
