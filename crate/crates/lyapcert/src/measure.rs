//! Truncated probability measures dmu = e^{-V}/Z dx on a grid, with
//! quadrature, cdf/quantile tables, tail masses and density functionals.

use crate::field::ScalarField;
use crate::grid::{Accumulator, Axis, Grid};

#[derive(Debug, Clone, thiserror::Error)]
pub enum MeasureError {
    #[error("grid too coarse: {nodes} nodes per axis (need at least {min})")]
    DegenerateGrid { nodes: usize, min: usize },
    #[error(
        "density at the domain boundary is {ratio:.3e} of the peak (limit {limit:.1e}); \
         enlarge the box or declare a power-law tail"
    )]
    NonIntegrable { ratio: f64, limit: f64 },
    #[error(
        "declared power-law tail (mass exponent {beta}) is inconsistent with the \
         fitted density slope {fitted:.3} (expected {expected:.3})"
    )]
    TailMismatch { beta: f64, fitted: f64, expected: f64 },
    #[error("non-finite value {value} at node {node:?}")]
    NonFinite { node: Vec<f64>, value: f64 },
    #[error("normalization failed: Z = {z}")]
    BadNormalization { z: f64 },
    #[error("operation requires dimension {required}, measure has dimension {actual}")]
    WrongDimension { required: usize, actual: usize },
    #[error("probability {p} outside [0, 1]")]
    InvalidProbability { p: f64 },
    #[error("density takes negative value {value} at node {node:?}")]
    NegativeDensity { node: Vec<f64>, value: f64 },
    #[error("density integrates to {mass} under the measure; |mass - 1| exceeds {tol:.1e}")]
    NotNormalized { mass: f64, tol: f64 },
    #[error("sampler acceptance rate {rate:.3} outside [0.1, 0.9] after tuning")]
    BadAcceptance { rate: f64 },
}

/// How the truncation boundary is justified.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailPolicy {
    /// Boundary density must be below `boundary_tol` times the peak.
    LightTail,
    /// Density decays like r^-(dim+beta); checked against a grid fit.
    PowerLaw { beta: f64 },
}

#[derive(Debug, Clone)]
pub struct MeasureSpec {
    pub rmax: f64,
    pub nodes: usize,
    pub log_refine: bool,
    /// Sinh stretch parameter; ln(1 + rmax) when unset.
    pub stretch: Option<f64>,
    pub tail: TailPolicy,
    pub boundary_tol: f64,
}

impl MeasureSpec {
    pub fn new(rmax: f64, nodes: usize) -> MeasureSpec {
        MeasureSpec {
            rmax,
            nodes,
            log_refine: false,
            stretch: None,
            tail: TailPolicy::LightTail,
            boundary_tol: 1e-12,
        }
    }

    pub fn log_refined(mut self) -> MeasureSpec {
        self.log_refine = true;
        self
    }

    pub fn with_tail(mut self, tail: TailPolicy) -> MeasureSpec {
        self.tail = tail;
        self
    }
}

#[derive(Debug, Clone)]
pub struct Measure {
    pub grid: Grid,
    pub v: ScalarField,
    pub z: f64,
    pub rmax: f64,
    /// Normalized density e^{-V}/Z at each node.
    density: Vec<f64>,
    /// Estimated mass lost to truncation (diagnostic, not exact).
    pub truncation_fraction: f64,
    /// Cumulative distribution values at the axis nodes (dimension 1 only).
    cdf: Option<Vec<f64>>,
}

pub const MIN_NODES_PER_AXIS: usize = 16;
pub const NORMALIZATION_TOL: f64 = 1e-8;
pub const DENSITY_MASS_TOL: f64 = 1e-6;

/// Build the truncated measure for a compiled potential.
pub fn build_measure(v: ScalarField, spec: &MeasureSpec) -> Result<Measure, MeasureError> {
    if spec.nodes < MIN_NODES_PER_AXIS {
        return Err(MeasureError::DegenerateGrid {
            nodes: spec.nodes,
            min: MIN_NODES_PER_AXIS,
        });
    }
    let dim = v.dim;
    let stretch = spec.stretch.unwrap_or_else(|| (1.0 + spec.rmax).ln());
    let axis = if spec.log_refine {
        Axis::sinh_stretched(spec.rmax, spec.nodes, stretch)
    } else {
        Axis::uniform(spec.rmax, spec.nodes)
    };
    let grid = Grid::tensor(vec![axis; dim]);

    let mut raw = Vec::with_capacity(grid.len());
    let mut peak = 0.0f64;
    for i in 0..grid.len() {
        let x = grid.node(i);
        let vv = v.value(x);
        if vv.is_nan() {
            return Err(MeasureError::NonFinite {
                node: x.to_vec(),
                value: vv,
            });
        }
        let rho = (-vv).exp();
        if !rho.is_finite() {
            return Err(MeasureError::NonFinite {
                node: x.to_vec(),
                value: rho,
            });
        }
        peak = peak.max(rho);
        raw.push(rho);
    }
    if peak <= 0.0 {
        return Err(MeasureError::BadNormalization { z: 0.0 });
    }

    let boundary_peak = (0..grid.len())
        .filter(|&i| grid.is_boundary(i))
        .map(|i| raw[i])
        .fold(0.0f64, f64::max);
    let boundary_ratio = boundary_peak / peak;

    match spec.tail {
        TailPolicy::LightTail => {
            if boundary_ratio > spec.boundary_tol {
                return Err(MeasureError::NonIntegrable {
                    ratio: boundary_ratio,
                    limit: spec.boundary_tol,
                });
            }
        }
        TailPolicy::PowerLaw { beta } => {
            let fitted = fit_tail_slope(&grid, &raw);
            let expected = -(dim as f64 + beta);
            if fitted > -(dim as f64) - 0.1 || (fitted - expected).abs() > 0.35 * expected.abs() {
                return Err(MeasureError::TailMismatch {
                    beta,
                    fitted,
                    expected,
                });
            }
        }
    }

    let mut acc = Accumulator::default();
    for i in 0..grid.len() {
        acc.add(grid.weight(i) * raw[i]);
    }
    let z = acc.total();
    if !(z.is_finite() && z > 0.0) {
        return Err(MeasureError::BadNormalization { z });
    }
    let density: Vec<f64> = raw.iter().map(|r| r / z).collect();

    let truncation_fraction = estimate_truncation(&v, &grid, &density, spec);

    let cdf = if dim == 1 {
        let axis = &grid.axes[0];
        let mut c = Vec::with_capacity(axis.len());
        c.push(0.0);
        for i in 1..axis.len() {
            let dx = axis.nodes[i] - axis.nodes[i - 1];
            let prev = c[i - 1];
            c.push(prev + 0.5 * dx * (density[i] + density[i - 1]));
        }
        let total = *c.last().unwrap();
        if total > 0.0 {
            for v in c.iter_mut() {
                *v /= total;
            }
        }
        Some(c)
    } else {
        None
    };

    Ok(Measure {
        grid,
        v,
        z,
        rmax: spec.rmax,
        density,
        truncation_fraction,
        cdf,
    })
}

/// Least-squares slope of log(density) against log(radius) along the positive
/// first axis over the outer decade of the box.
fn fit_tail_slope(grid: &Grid, raw: &[f64]) -> f64 {
    let axis = &grid.axes[0];
    let n = axis.len();
    let rmax = axis.nodes[n - 1];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..n {
        let x = axis.nodes[i];
        if x >= 0.1 * rmax && x > 0.0 {
            let idx = match grid.dim {
                1 => i,
                // Nodes along the x2 = 0 row do not exist in general; use the
                // row closest to the axis.
                2 => {
                    let mid = grid.axes[1].len() / 2;
                    i * grid.axes[1].len() + mid
                }
                _ => unreachable!(),
            };
            if raw[idx] > 0.0 {
                xs.push(x.ln());
                ys.push(raw[idx].ln());
            }
        }
    }
    least_squares_slope(&xs, &ys)
}

pub(crate) fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return f64::NAN;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

fn estimate_truncation(v: &ScalarField, grid: &Grid, density: &[f64], spec: &MeasureSpec) -> f64 {
    // Crude boundary extrapolation: density / |radial log-derivative| per
    // boundary cell, which is exact for pure exponential or power decay.
    let mut acc = 0.0;
    for i in 0..grid.len() {
        if !grid.is_boundary(i) {
            continue;
        }
        let x = grid.node(i);
        let g = v.gradient(x);
        let r: f64 = x.iter().map(|c| c * c).sum::<f64>().sqrt();
        if r == 0.0 {
            continue;
        }
        let radial: f64 = g
            .iter()
            .zip(x)
            .map(|(gi, xi)| gi * xi / r)
            .sum::<f64>()
            .max(1.0 / spec.rmax);
        let cell = match grid.dim {
            1 => 1.0,
            2 => {
                // Perimeter length share of the boundary node.
                let ny = grid.axes[1].len();
                let (ix, iy) = (i / ny, i % ny);
                let wx = grid.axes[0].weights[ix];
                let wy = grid.axes[1].weights[iy];
                if ix == 0 || ix == grid.axes[0].len() - 1 {
                    wy
                } else {
                    wx
                }
            }
            _ => unreachable!(),
        };
        acc += density[i] * cell / radial;
    }
    acc
}

impl Measure {
    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    #[inline]
    pub fn density(&self, i: usize) -> f64 {
        self.density[i]
    }

    /// mu-weight of node i: quadrature weight times normalized density.
    #[inline]
    pub fn mu_weight(&self, i: usize) -> f64 {
        self.grid.weight(i) * self.density[i]
    }

    /// int g dmu by grid quadrature. Errors on a non-finite integrand value,
    /// reporting the offending node.
    pub fn integrate(&self, mut g: impl FnMut(&[f64]) -> f64) -> Result<f64, MeasureError> {
        let mut acc = Accumulator::default();
        for i in 0..self.len() {
            let x = self.grid.node(i);
            let val = g(x);
            if !val.is_finite() {
                if self.density[i] == 0.0 && !val.is_nan() {
                    // Zero-mass node cannot contribute; tolerate an infinity.
                    continue;
                }
                return Err(MeasureError::NonFinite {
                    node: x.to_vec(),
                    value: val,
                });
            }
            acc.add(self.mu_weight(i) * val);
        }
        Ok(acc.total())
    }

    /// int g dmu for a precomputed vector of node values.
    pub fn integrate_values(&self, vals: &[f64]) -> Result<f64, MeasureError> {
        let mut acc = Accumulator::default();
        for i in 0..self.len() {
            let val = vals[i];
            if !val.is_finite() {
                if self.density[i] == 0.0 && !val.is_nan() {
                    continue;
                }
                return Err(MeasureError::NonFinite {
                    node: self.grid.node(i).to_vec(),
                    value: val,
                });
            }
            acc.add(self.mu_weight(i) * val);
        }
        Ok(acc.total())
    }

    /// Piecewise-linear cdf at x (dimension 1).
    pub fn cdf_at(&self, x: f64) -> Result<f64, MeasureError> {
        let cdf = self.cdf.as_ref().ok_or(MeasureError::WrongDimension {
            required: 1,
            actual: self.dim(),
        })?;
        let nodes = &self.grid.axes[0].nodes;
        if x <= nodes[0] {
            return Ok(0.0);
        }
        if x >= *nodes.last().unwrap() {
            return Ok(1.0);
        }
        let j = nodes.partition_point(|&v| v <= x);
        let (x0, x1) = (nodes[j - 1], nodes[j]);
        let (c0, c1) = (cdf[j - 1], cdf[j]);
        let t = if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.0 };
        Ok(c0 + t * (c1 - c0))
    }

    /// Monotone inverse of the cdf (dimension 1).
    pub fn quantile(&self, u: f64) -> Result<f64, MeasureError> {
        let cdf = self.cdf.as_ref().ok_or(MeasureError::WrongDimension {
            required: 1,
            actual: self.dim(),
        })?;
        if !(0.0..=1.0).contains(&u) {
            return Err(MeasureError::InvalidProbability { p: u });
        }
        let nodes = &self.grid.axes[0].nodes;
        if u <= 0.0 {
            return Ok(nodes[0]);
        }
        if u >= 1.0 {
            return Ok(*nodes.last().unwrap());
        }
        let j = cdf.partition_point(|&c| c < u).min(cdf.len() - 1);
        if j == 0 {
            return Ok(nodes[0]);
        }
        let (c0, c1) = (cdf[j - 1], cdf[j]);
        let (x0, x1) = (nodes[j - 1], nodes[j]);
        if c1 > c0 {
            Ok(x0 + (u - c0) / (c1 - c0) * (x1 - x0))
        } else {
            Ok(x0)
        }
    }

    /// mu(|x| > r). Piecewise-linear in r for dimension 1, a node sum for
    /// dimension 2; monotone nonincreasing in r either way.
    pub fn tail_mass(&self, r: f64) -> Result<f64, MeasureError> {
        if r <= 0.0 {
            return Ok(1.0);
        }
        match self.dim() {
            1 => {
                let upper = 1.0 - self.cdf_at(r)?;
                let lower = self.cdf_at(-r)?;
                Ok((upper + lower).clamp(0.0, 1.0))
            }
            2 => {
                let mut acc = Accumulator::default();
                for i in 0..self.len() {
                    if self.grid.radius(i) > r {
                        acc.add(self.mu_weight(i));
                    }
                }
                Ok(acc.total().clamp(0.0, 1.0))
            }
            _ => unreachable!(),
        }
    }
}

/// A probability density with respect to mu, stored as a compiled field plus
/// the normalization constant that makes it integrate to one.
#[derive(Debug, Clone)]
pub struct TestDensity {
    pub field: ScalarField,
    pub norm: f64,
    pub label: String,
}

impl TestDensity {
    /// Normalize `field` so that int field/norm dmu = 1. The field must be
    /// nonnegative on the grid.
    pub fn normalized(
        m: &Measure,
        field: ScalarField,
        label: impl Into<String>,
    ) -> Result<TestDensity, MeasureError> {
        for i in 0..m.len() {
            let x = m.grid.node(i);
            let v = field.value(x);
            if v < 0.0 {
                return Err(MeasureError::NegativeDensity {
                    node: x.to_vec(),
                    value: v,
                });
            }
        }
        let mass = m.integrate(|x| field.value(x))?;
        if !(mass.is_finite() && mass > 0.0) {
            return Err(MeasureError::BadNormalization { z: mass });
        }
        Ok(TestDensity {
            field,
            norm: mass,
            label: label.into(),
        })
    }

    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        self.field.value(x) / self.norm
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.field
            .gradient(x)
            .into_iter()
            .map(|g| g / self.norm)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct Functionals {
    pub variance: f64,
    pub entropy: f64,
    pub fisher: f64,
    pub osc: f64,
}

/// Variance, relative entropy, Fisher information and oscillation of a
/// density f with respect to mu.
pub fn functionals(m: &Measure, f: &TestDensity) -> Result<Functionals, MeasureError> {
    let mut vals = Vec::with_capacity(m.len());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..m.len() {
        let x = m.grid.node(i);
        let v = f.value(x);
        if v < 0.0 {
            return Err(MeasureError::NegativeDensity {
                node: x.to_vec(),
                value: v,
            });
        }
        lo = lo.min(v);
        hi = hi.max(v);
        vals.push(v);
    }
    let mass = m.integrate_values(&vals)?;
    if (mass - 1.0).abs() > DENSITY_MASS_TOL {
        return Err(MeasureError::NotNormalized {
            mass,
            tol: DENSITY_MASS_TOL,
        });
    }

    let mean = mass;
    let second = m.integrate_values(&vals.iter().map(|v| v * v).collect::<Vec<_>>())?;
    let variance = (second - mean * mean).max(0.0);

    let ent_vals: Vec<f64> = vals
        .iter()
        .map(|&v| if v > 0.0 { v * v.ln() } else { 0.0 })
        .collect();
    let entropy = m.integrate_values(&ent_vals)?;

    let mut fisher_vals = Vec::with_capacity(m.len());
    for i in 0..m.len() {
        let x = m.grid.node(i);
        let g = f.gradient(x);
        let g2: f64 = g.iter().map(|v| v * v).sum();
        let v = vals[i];
        if v <= 0.0 {
            if g2 <= 1e-280 {
                fisher_vals.push(0.0);
                continue;
            }
            return Err(MeasureError::NonFinite {
                node: x.to_vec(),
                value: f64::INFINITY,
            });
        }
        fisher_vals.push(g2 / v);
    }
    let fisher = m.integrate_values(&fisher_vals)?;

    Ok(Functionals {
        variance,
        entropy,
        fisher,
        osc: hi - lo,
    })
}
