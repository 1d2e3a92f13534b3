//! Piecewise-linear interpolation of 1-D functions, interpolation error
//! bounds via segment oscillation, exact and proof-style Lipschitz constants
//! of PWL functions, and an empirical Lipschitz-ratio probe for trained
//! network pairs.

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Continuous piecewise-linear function given by sorted vertices; slopes are
/// derived per segment.
#[derive(Debug, Clone)]
pub struct PwlFunction {
    vertices: Vec<(f64, f64)>,
    slopes: Vec<f64>,
}

impl PwlFunction {
    pub fn new(vertices: Vec<(f64, f64)>) -> Result<Self> {
        if vertices.len() < 2 {
            return Err(Error::Domain {
                op: "pwl",
                detail: "need at least two vertices".into(),
            });
        }
        for pair in vertices.windows(2) {
            if !(pair[0].0 < pair[1].0) {
                return Err(Error::Domain {
                    op: "pwl",
                    detail: format!("x values must strictly increase: {} then {}", pair[0].0, pair[1].0),
                });
            }
        }
        if vertices.iter().any(|(x, f)| !x.is_finite() || !f.is_finite()) {
            return Err(Error::NonFinite { op: "pwl" });
        }
        let slopes = vertices
            .windows(2)
            .map(|p| (p[1].1 - p[0].1) / (p[1].0 - p[0].0))
            .collect();
        Ok(Self { vertices, slopes })
    }

    pub fn domain(&self) -> (f64, f64) {
        (
            self.vertices[0].0,
            self.vertices[self.vertices.len() - 1].0,
        )
    }

    pub fn vertices(&self) -> &[(f64, f64)] {
        &self.vertices
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    /// Linear interpolation on the segment containing x; exact at vertices.
    pub fn eval(&self, x: f64) -> Result<f64> {
        let (a, b) = self.domain();
        if !(a..=b).contains(&x) {
            return Err(Error::Domain {
                op: "pwl_eval",
                detail: format!("x = {x} outside [{a}, {b}]"),
            });
        }
        // index of the segment whose right vertex is the first x_i >= x
        let idx = self
            .vertices
            .partition_point(|(vx, _)| *vx < x)
            .clamp(1, self.vertices.len() - 1);
        let (x0, f0) = self.vertices[idx - 1];
        let (x1, f1) = self.vertices[idx];
        if x == x0 {
            return Ok(f0);
        }
        if x == x1 {
            return Ok(f1);
        }
        Ok(f0 + (x - x0) / (x1 - x0) * (f1 - f0))
    }
}

/// Interpolate `f` at n+1 uniformly spaced vertices on [a, b].
pub fn build_interpolant(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    n: usize,
) -> Result<PwlFunction> {
    if !(a < b) {
        return Err(Error::Domain {
            op: "build_interpolant",
            detail: format!("need a < b, got [{a}, {b}]"),
        });
    }
    if n == 0 {
        return Err(Error::Domain {
            op: "build_interpolant",
            detail: "need at least one segment".into(),
        });
    }
    let vertices: Vec<(f64, f64)> = (0..=n)
        .map(|i| {
            let x = a + (b - a) * i as f64 / n as f64;
            (x, f(x))
        })
        .collect();
    if vertices.iter().any(|(_, fv)| !fv.is_finite()) {
        return Err(Error::NonFinite {
            op: "build_interpolant",
        });
    }
    PwlFunction::new(vertices)
}

/// Vertex count rule for a target accuracy: segments no wider than
/// eps / (3 K), where K bounds the slope of the function being approximated.
pub fn density_for(eps: f64, k: f64, a: f64, b: f64) -> usize {
    ((3.0 * k * (b - a)) / eps).ceil().max(1.0) as usize
}

/// Measured interpolation error against the checkable oscillation bound.
#[derive(Debug, Clone, Copy)]
pub struct ErrorBoundReport {
    /// max |f(x) - pwl(x)| over the grid.
    pub measured_max: f64,
    /// max over segments of the oscillation of f, estimated on the same
    /// grid plus the segment endpoints.
    pub oscillation_bound: f64,
}

/// Evaluate the interpolation error of `pwl` against `f` on a dense grid and
/// bound it by per-segment oscillation.
///
/// `pwl` must interpolate `f` at its vertices (checked); then every
/// interpolated value is a convex combination of segment-endpoint values of
/// f, so the measured error can never exceed the oscillation estimated from
/// the same samples. The bound is exact for the sampled points; for the true
/// sup-oscillation it is accurate up to the grid resolution.
pub fn error_bound(
    pwl: &PwlFunction,
    f: impl Fn(f64) -> f64,
    grid: &[f64],
) -> Result<ErrorBoundReport> {
    let (a, b) = pwl.domain();
    if grid.iter().any(|x| *x < a || *x > b) {
        return Err(Error::Domain {
            op: "error_bound",
            detail: "grid point outside the interpolation domain".into(),
        });
    }
    for &(x, fv) in pwl.vertices() {
        let actual = f(x);
        if (actual - fv).abs() > 1e-9 * (1.0 + actual.abs()) {
            return Err(Error::Domain {
                op: "error_bound",
                detail: format!("pwl does not interpolate f at x = {x}"),
            });
        }
    }

    let mut measured_max = 0.0f64;
    let segments = pwl.vertices().len() - 1;
    let mut seg_min: Vec<f64> = Vec::with_capacity(segments);
    let mut seg_max: Vec<f64> = Vec::with_capacity(segments);
    for w in pwl.vertices().windows(2) {
        let (f0, f1) = (w[0].1, w[1].1);
        seg_min.push(f0.min(f1));
        seg_max.push(f0.max(f1));
    }
    for &x in grid {
        let fv = f(x);
        let pv = pwl.eval(x)?;
        measured_max = measured_max.max((fv - pv).abs());
        let idx = pwl
            .vertices()
            .partition_point(|(vx, _)| *vx < x)
            .clamp(1, segments) - 1;
        seg_min[idx] = seg_min[idx].min(fv);
        seg_max[idx] = seg_max[idx].max(fv);
    }
    let oscillation_bound = seg_min
        .iter()
        .zip(&seg_max)
        .map(|(lo, hi)| hi - lo)
        .fold(0.0f64, f64::max);
    if measured_max > oscillation_bound + 1e-12 {
        return Err(Error::Domain {
            op: "error_bound",
            detail: format!(
                "measured error {measured_max} exceeds oscillation bound {oscillation_bound}"
            ),
        });
    }
    Ok(ErrorBoundReport {
        measured_max,
        oscillation_bound,
    })
}

/// Lipschitz constants of a PWL function: the exact constant (max slope
/// magnitude) and the telescoping-proof constant (sum of slope magnitudes).
#[derive(Debug, Clone, Copy)]
pub struct LipschitzReport {
    pub tight: f64,
    pub proof: f64,
}

pub fn lipschitz_of_pwl(pwl: &PwlFunction) -> LipschitzReport {
    let tight = pwl.slopes().iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let proof = pwl.slopes().iter().map(|s| s.abs()).sum();
    LipschitzReport { tight, proof }
}

/// Result of probing |G(z1)-G(z2)|_1 / |L(G(z1))-L(G(z2))|_1 over random
/// input pairs. Distances are element sums (not means) on both sides, so a
/// shape-preserving identity pair scores exactly 1.
#[derive(Debug, Clone)]
pub struct ProbeReport {
    /// Ratio per evaluated pair, in evaluation order.
    pub ratios: Vec<f64>,
    /// Pairs skipped because the latent distance was below 1e-12.
    pub skipped: usize,
    pub max: f64,
    pub median: f64,
    pub q90: f64,
}

impl ProbeReport {
    fn from_ratios(ratios: Vec<f64>, skipped: usize) -> Self {
        let mut sorted = ratios.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite ratios"));
        let pick = |q: f64| {
            let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
            sorted[idx]
        };
        Self {
            max: sorted[sorted.len() - 1],
            median: pick(0.5),
            q90: pick(0.9),
            ratios,
            skipped,
        }
    }

    /// One row per pair, then summary rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pair,ratio\n");
        for (i, r) in self.ratios.iter().enumerate() {
            out.push_str(&format!("{i},{r}\n"));
        }
        out.push_str(&format!("max,{}\n", self.max));
        out.push_str(&format!("median,{}\n", self.median));
        out.push_str(&format!("q90,{}\n", self.q90));
        out.push_str(&format!("skipped,{}\n", self.skipped));
        out
    }
}

const PROBE_DENOM_FLOOR: f64 = 1e-12;

/// Estimate the ambient-to-latent distance ratio of a generator/encoder
/// pair on random input pairs drawn from `sampler`.
pub fn empirical_lipschitz_probe<T, G, L, S>(
    g: G,
    l: L,
    mut sampler: S,
    pairs: usize,
) -> Result<ProbeReport>
where
    T: Elem,
    G: Fn(&Tensor<T>) -> Result<Tensor<T>>,
    L: Fn(&Tensor<T>) -> Result<Tensor<T>>,
    S: FnMut() -> Tensor<T>,
{
    if pairs == 0 {
        return Err(Error::Domain {
            op: "lipschitz_probe",
            detail: "need at least one pair".into(),
        });
    }
    let mut ratios = Vec::with_capacity(pairs);
    let mut skipped = 0usize;
    for _ in 0..pairs {
        let z1 = sampler();
        let z2 = sampler();
        let g1 = g(&z1)?;
        let g2 = g(&z2)?;
        let num = g1.l1_sum(&g2)?;
        let den = l(&g1)?.l1_sum(&l(&g2)?)?;
        if den < PROBE_DENOM_FLOOR {
            skipped += 1;
            continue;
        }
        ratios.push(num / den);
    }
    if ratios.is_empty() {
        return Err(Error::Degenerate {
            op: "lipschitz_probe",
            detail: format!("all {pairs} pairs had degenerate latent distance"),
        });
    }
    Ok(ProbeReport::from_ratios(ratios, skipped))
}
