//! Local ingredients on balls B_R: the Neumann spectral constant kappa_R
//! (inverse of the first nonzero Neumann eigenvalue of the generator
//! restricted to the ball) and a local super-Poincare inequality obtained by
//! transporting the Euclidean Nash inequality through two-sided density
//! bounds.

use crate::eig::{gap_1d, EigError, Stencil2d};
use crate::field::ScalarField;
use crate::measure::Measure;
use serde::Serialize;
use thiserror::Error;

/// Relative Richardson defect two nested grids must agree to.
pub const KAPPA_RICHARDSON_GATE: f64 = 0.02;
/// Nash constants for the local super-Poincare bound, by dimension.
pub const NASH_C1: f64 = 1.0;
pub const NASH_C2: f64 = 1.5;
/// Probe margins below -LOCAL_MARGIN_TOL * scale are decisive violations.
pub const LOCAL_MARGIN_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum LocalError {
    #[error(transparent)]
    Eig(#[from] EigError),
    #[error("grid refinement stalled: relative defect {delta} above gate {gate}")]
    RefinementStalled { delta: f64, gate: f64 },
    #[error("local bound overflowed: {value}")]
    BetaOverflow { value: f64 },
    #[error("ball radius must be positive and finite, got {r}")]
    BadBall { r: f64 },
    #[error("no grid nodes inside the ball of radius {r}")]
    EmptyBall { r: f64 },
    #[error("dimension {dim} is not supported here")]
    UnsupportedDimension { dim: usize },
    #[error("claimed local inequality is violated by probe {index}: relative margin {margin}")]
    ViolationFound { index: usize, margin: f64 },
}

/// Closed-form kappa_R for the flat (constant-potential) ball, used as an
/// independent oracle: the Neumann gap is (pi/2R)^2 on an interval and
/// (j'_{1,1}/R)^2 on a disc.
pub fn uniform_ball_kappa(dim: usize, r: f64) -> Result<f64, LocalError> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(LocalError::BadBall { r });
    }
    match dim {
        1 => Ok((2.0 * r / std::f64::consts::PI).powi(2)),
        2 => {
            let j11 = 1.841_183_781_340_659_f64;
            Ok((r / j11).powi(2))
        }
        dim => Err(LocalError::UnsupportedDimension { dim }),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KappaResult {
    pub lambda1: f64,
    /// Inflated inverse gap (1 + delta) / lambda1, so that downstream
    /// constants stay valid under the observed discretization uncertainty.
    pub kappa: f64,
    /// Relative defect between the two finest nested solves.
    pub delta: f64,
    pub nodes: usize,
}

/// kappa_R for the measure's potential on the ball of radius `r`, by nested
/// Neumann eigensolves. `nodes0` is the coarse per-axis resolution; grids
/// are refined (n -> 2n - 1, so nodes nest) until two consecutive solves
/// agree to the Richardson gate.
pub fn neumann_kappa(v: &ScalarField, r: f64, nodes0: usize) -> Result<KappaResult, LocalError> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(LocalError::BadBall { r });
    }
    let mut n = nodes0.max(17);
    let mut coarse = ball_gap(v, r, n)?;
    for _ in 0..4 {
        let n_fine = 2 * n - 1;
        let fine = ball_gap(v, r, n_fine)?;
        let delta = (fine - coarse).abs() / fine;
        if delta <= KAPPA_RICHARDSON_GATE {
            return Ok(KappaResult {
                lambda1: fine,
                kappa: (1.0 + delta) / fine,
                delta,
                nodes: n_fine,
            });
        }
        coarse = fine;
        n = n_fine;
    }
    let delta = KAPPA_RICHARDSON_GATE;
    Err(LocalError::RefinementStalled {
        delta,
        gate: KAPPA_RICHARDSON_GATE,
    })
}

fn ball_gap(v: &ScalarField, r: f64, n: usize) -> Result<f64, LocalError> {
    let xs: Vec<f64> = (0..n)
        .map(|i| -r + 2.0 * r * i as f64 / (n - 1) as f64)
        .collect();
    match v.dim {
        1 => {
            let rho: Vec<f64> = xs.iter().map(|&x| (-v.value(&[x])).exp()).collect();
            Ok(gap_1d(&xs, &rho)?)
        }
        2 => {
            let ys = xs.clone();
            let rho = |ix: usize, iy: usize| (-v.value(&[xs[ix], ys[iy]])).exp();
            let st = Stencil2d::build(&xs, &ys, rho, |x, y| x * x + y * y <= r * r)?;
            Ok(st.gap()?)
        }
        dim => Err(LocalError::UnsupportedDimension { dim }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KappaMethod {
    NeumannFd,
    UniformClosedForm,
}

/// A local Poincare inequality on the ball B_r:
///
///     int_{B_r} f^2 dmu <= kappa int Gamma(f) dmu
///                          + mu(B_r)^{-1} (int_{B_r} f dmu)^2.
#[derive(Debug, Clone, Serialize)]
pub struct LocalPoincare {
    pub r: f64,
    pub kappa: f64,
    pub method: KappaMethod,
    /// Per-axis resolution of the accepted eigensolve (0 for closed form).
    pub resolution: usize,
    /// Mass the measure assigns to the ball.
    pub ball_mass: f64,
    pub lambda1: f64,
    pub delta: f64,
}

impl LocalPoincare {
    /// Closed-form variant for a potential that is constant on the ball.
    pub fn uniform(m: &Measure, r: f64) -> Result<LocalPoincare, LocalError> {
        let kappa = uniform_ball_kappa(m.dim(), r)?;
        Ok(LocalPoincare {
            r,
            kappa,
            method: KappaMethod::UniformClosedForm,
            resolution: 0,
            ball_mass: ball_mass(m, r)?,
            lambda1: 1.0 / kappa,
            delta: 0.0,
        })
    }
}

/// Local Poincare data for the measure's own potential on B_r, combining the
/// Neumann eigensolve with the ball mass read off the quadrature grid.
pub fn local_poincare(m: &Measure, r: f64, nodes0: usize) -> Result<LocalPoincare, LocalError> {
    let k = neumann_kappa(&m.v, r, nodes0)?;
    Ok(LocalPoincare {
        r,
        kappa: k.kappa,
        method: KappaMethod::NeumannFd,
        resolution: k.nodes,
        ball_mass: ball_mass(m, r)?,
        lambda1: k.lambda1,
        delta: k.delta,
    })
}

/// mu(B_r) summed over grid nodes inside the ball.
pub fn ball_mass(m: &Measure, r: f64) -> Result<f64, LocalError> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(LocalError::BadBall { r });
    }
    let mut mass = 0.0;
    let mut seen = false;
    for i in 0..m.len() {
        if m.grid.radius(i) <= r {
            seen = true;
            mass += m.mu_weight(i);
        }
    }
    if !seen {
        return Err(LocalError::EmptyBall { r });
    }
    Ok(mass)
}

/// Checks the local Poincare inequality on explicit probe functions. The
/// Dirichlet side integrates over the whole grid, which only adds slack to
/// the certified ball inequality, so a violation is decisive.
pub fn verify_local_poincare(
    m: &Measure,
    lp: &LocalPoincare,
    probes: &[ScalarField],
) -> Result<f64, LocalError> {
    let mut worst = f64::INFINITY;
    let mut used = 0usize;
    for (index, f) in probes.iter().enumerate() {
        let mut ball_f2 = 0.0;
        let mut ball_f1 = 0.0;
        let mut energy = 0.0;
        let mut seen = false;
        for i in 0..m.len() {
            let x = m.grid.node(i);
            let w = m.mu_weight(i);
            energy += w * f.squared_grad_norm(x);
            if m.grid.radius(i) <= lp.r {
                seen = true;
                let v = f.value(x);
                ball_f2 += w * v * v;
                ball_f1 += w * v;
            }
        }
        if !seen {
            return Err(LocalError::EmptyBall { r: lp.r });
        }
        if ball_f2 == 0.0 && energy == 0.0 {
            continue;
        }
        used += 1;
        let rhs = lp.kappa * energy + ball_f1 * ball_f1 / lp.ball_mass;
        let scale = ball_f2.abs() + rhs.abs();
        let margin = (rhs - ball_f2) / scale.max(1e-300);
        if margin < -LOCAL_MARGIN_TOL {
            return Err(LocalError::ViolationFound { index, margin });
        }
        worst = worst.min(margin);
    }
    if used == 0 {
        return Err(LocalError::EmptyBall { r: lp.r });
    }
    Ok(worst)
}

/// Volume of the Euclidean ball B_r.
pub fn ball_volume(dim: usize, r: f64) -> Result<f64, LocalError> {
    match dim {
        1 => Ok(2.0 * r),
        2 => Ok(std::f64::consts::PI * r * r),
        dim => Err(LocalError::UnsupportedDimension { dim }),
    }
}

/// Local super-Poincare constant on B_r transported from the Euclidean Nash
/// inequality: with normalized density bounds rho_min <= rho <= rho_max on
/// the ball,
///
///     int_{B_r} f^2 dmu <= s int_{B_r} |grad f|^2 dmu
///                           + beta_loc(r, s) (int_{B_r} |f| dmu)^2,
///
///     beta_loc = rho_max rho_min^{-2} c_n max((s rho_min/rho_max)^{-n/2},
///                                             vol(B_r)^{-1}).
pub fn nash_beta_loc(
    dim: usize,
    r: f64,
    s: f64,
    rho_min: f64,
    rho_max: f64,
) -> Result<f64, LocalError> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(LocalError::BadBall { r });
    }
    let c_n = match dim {
        1 => NASH_C1,
        2 => NASH_C2,
        dim => return Err(LocalError::UnsupportedDimension { dim }),
    };
    let vol = ball_volume(dim, r)?;
    let s_lebesgue = s * rho_min / rho_max;
    let nash = s_lebesgue.powf(-(dim as f64) / 2.0);
    let beta = rho_max / (rho_min * rho_min) * c_n * nash.max(1.0 / vol);
    if !beta.is_finite() {
        return Err(LocalError::BetaOverflow { value: beta });
    }
    Ok(beta)
}

/// Node-sampled bounds of the normalized density over the ball.
pub fn ball_density_bounds(m: &Measure, r: f64) -> Result<(f64, f64), LocalError> {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    let mut seen = false;
    for i in 0..m.len() {
        if m.grid.radius(i) <= r {
            seen = true;
            lo = lo.min(m.density(i));
            hi = hi.max(m.density(i));
        }
    }
    if !seen {
        return Err(LocalError::EmptyBall { r });
    }
    Ok((lo, hi))
}

/// Per-ball local super-Poincare data: density bounds plus the Nash bound.
#[derive(Debug, Clone, Serialize)]
pub struct BetaLoc {
    pub r: f64,
    pub s: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub beta: f64,
}

/// Evaluator for the local super-Poincare bound (r, s) -> beta_loc(r, s),
/// reading density bounds off the measure's grid for each requested ball.
#[derive(Debug)]
pub struct LocalSuperPoincare<'a> {
    m: &'a Measure,
    pub c_n: f64,
}

impl<'a> LocalSuperPoincare<'a> {
    pub fn new(m: &'a Measure) -> Result<LocalSuperPoincare<'a>, LocalError> {
        let c_n = match m.dim() {
            1 => NASH_C1,
            2 => NASH_C2,
            dim => return Err(LocalError::UnsupportedDimension { dim }),
        };
        Ok(LocalSuperPoincare { m, c_n })
    }

    pub fn beta_loc(&self, r: f64, s: f64) -> Result<BetaLoc, LocalError> {
        let (rho_min, rho_max) = ball_density_bounds(self.m, r)?;
        let beta = nash_beta_loc(self.m.dim(), r, s, rho_min, rho_max)?;
        Ok(BetaLoc {
            r,
            s,
            rho_min,
            rho_max,
            beta,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalSpCheck {
    pub s: f64,
    pub beta: f64,
    /// Worst (most negative) slack of rhs - lhs over the probe functions.
    pub worst_margin: f64,
    pub probes: usize,
}

/// Numerical guard for a claimed local super-Poincare pair (s, beta) on B_r:
/// evaluates the inequality on explicit probe functions. A failure here is
/// decisive (the probes are counterexamples); a pass is supporting evidence.
pub fn verify_local_sp(
    m: &Measure,
    r: f64,
    s: f64,
    beta: f64,
    probes: &[ScalarField],
) -> Result<LocalSpCheck, LocalError> {
    let mut worst = f64::INFINITY;
    let mut used = 0usize;
    for (index, f) in probes.iter().enumerate() {
        let mut f2 = 0.0;
        let mut grad2 = 0.0;
        let mut abs1 = 0.0;
        for i in 0..m.len() {
            if m.grid.radius(i) > r {
                continue;
            }
            let x = m.grid.node(i);
            let w = m.mu_weight(i);
            let v = f.value(x);
            f2 += w * v * v;
            grad2 += w * f.squared_grad_norm(x);
            abs1 += w * v.abs();
        }
        if f2 == 0.0 && abs1 == 0.0 {
            continue;
        }
        used += 1;
        let lhs = f2;
        let rhs = s * grad2 + beta * abs1 * abs1;
        let scale = lhs.abs() + rhs.abs();
        let margin = (rhs - lhs) / scale.max(1e-300);
        if margin < -LOCAL_MARGIN_TOL {
            return Err(LocalError::ViolationFound { index, margin });
        }
        worst = worst.min(margin);
    }
    if used == 0 {
        return Err(LocalError::EmptyBall { r });
    }
    Ok(LocalSpCheck {
        s,
        beta,
        worst_margin: worst,
        probes: used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{build_measure, MeasureSpec};
    use approx::assert_relative_eq;

    #[test]
    fn flat_interval_kappa_matches_closed_form() {
        let v = ScalarField::parse("0", 1).unwrap();
        let res = neumann_kappa(&v, 1.0, 257).unwrap();
        let exact = uniform_ball_kappa(1, 1.0).unwrap();
        assert_relative_eq!(1.0 / res.lambda1, exact, max_relative = 1e-4);
        assert!(res.delta <= KAPPA_RICHARDSON_GATE);
        // Inflation keeps kappa on the safe side of the spectral truth.
        assert!(res.kappa >= 1.0 / res.lambda1);
    }

    #[test]
    fn flat_disc_kappa_matches_closed_form() {
        let v = ScalarField::parse("0", 2).unwrap();
        let res = neumann_kappa(&v, 1.0, 49).unwrap();
        let exact = uniform_ball_kappa(2, 1.0).unwrap();
        assert_relative_eq!(1.0 / res.lambda1, exact, max_relative = 0.02);
        assert!(res.kappa >= 1.0 / res.lambda1);
    }

    #[test]
    fn gaussian_ball_kappa_is_reasonable() {
        let v = ScalarField::parse("x1^2", 1).unwrap();
        let res = neumann_kappa(&v, 1.0, 257).unwrap();
        // The gap of the flat interval is pi^2/4; a log-concave weight on
        // the same interval cannot be wildly different.
        assert!(res.lambda1 > 1.0 && res.lambda1 < 6.0, "{}", res.lambda1);
    }

    #[test]
    fn nash_beta_branches_and_monotonicity() {
        // Flat density: rho_min = rho_max = rho.
        let rho = 0.25;
        let r = 2.0;
        let vol = ball_volume(1, r).unwrap();
        // Small s: Nash branch s^{-1/2}.
        let b_small = nash_beta_loc(1, r, 1e-4, rho, rho).unwrap();
        assert_relative_eq!(
            b_small,
            NASH_C1 / rho * (1e-4f64).powf(-0.5),
            max_relative = 1e-12
        );
        // Large s: volume branch.
        let b_large = nash_beta_loc(1, r, 1e6, rho, rho).unwrap();
        assert_relative_eq!(b_large, NASH_C1 / rho / vol, max_relative = 1e-12);
        // Nonincreasing in s.
        let mut prev = f64::INFINITY;
        for k in 0..30 {
            let s = 1e-5 * 2f64.powi(k);
            let b = nash_beta_loc(1, r, s, rho, rho).unwrap();
            assert!(b <= prev);
            prev = b;
        }
    }

    #[test]
    fn local_sp_guard_accepts_formula_and_rejects_slashed_beta() {
        let v = ScalarField::parse("x1^2", 1).unwrap();
        let m = build_measure(v, &MeasureSpec::new(8.0, 2049)).unwrap();
        let r = 1.5;
        let (rho_min, rho_max) = ball_density_bounds(&m, r).unwrap();
        let probes = vec![
            ScalarField::parse("1", 1).unwrap(),
            ScalarField::parse("x1", 1).unwrap(),
            ScalarField::parse("sin(3*x1)", 1).unwrap(),
            ScalarField::parse("exp(-4*x1^2)", 1).unwrap(),
        ];
        for s in [1e-3, 1e-1, 10.0] {
            let beta = nash_beta_loc(1, r, s, rho_min, rho_max).unwrap();
            let check = verify_local_sp(&m, r, s, beta, &probes).unwrap();
            assert!(
                check.worst_margin >= -LOCAL_MARGIN_TOL,
                "s = {s}: margin {}",
                check.worst_margin
            );
        }
        // With beta far below 1/mu(B_r), the constant probe is a counterexample
        // once s is tiny.
        let mass = ball_mass(&m, r).unwrap();
        let bad = verify_local_sp(&m, r, 1e-9, 0.5 / mass, &probes);
        assert!(matches!(
            bad,
            Err(LocalError::ViolationFound { index: 0, .. })
        ));
    }

    #[test]
    fn local_poincare_reports_mass_and_method() {
        let v = ScalarField::parse("x1^2", 1).unwrap();
        let m = build_measure(v, &MeasureSpec::new(8.0, 2049)).unwrap();
        let lp = local_poincare(&m, 1.0, 257).unwrap();
        // mu(|x| <= 1) for the normalized density exp(-x^2)/sqrt(pi) is
        // erf(1); the sharp indicator costs O(h) at the ball edge.
        assert_relative_eq!(lp.ball_mass, 0.842_700_792_949_714_9, max_relative = 5e-3);
        assert_eq!(lp.method, KappaMethod::NeumannFd);
        assert!(lp.resolution >= 257);
        assert!(lp.kappa >= 1.0 / lp.lambda1);
        let json = serde_json::to_string(&lp).unwrap();
        assert!(json.contains("neumann-fd"));

        let flat = LocalPoincare::uniform(&m, 1.0).unwrap();
        assert_eq!(flat.kappa, uniform_ball_kappa(1, 1.0).unwrap());
        assert_eq!(flat.resolution, 0);
        assert!(serde_json::to_string(&flat)
            .unwrap()
            .contains("uniform-closed-form"));
    }

    #[test]
    fn kappa_is_nondecreasing_in_radius() {
        let v = ScalarField::parse("x1^2", 1).unwrap();
        let mut prev = 0.0;
        for r in [0.6, 1.0, 1.5] {
            let res = neumann_kappa(&v, r, 129).unwrap();
            assert!(
                res.kappa >= prev * (1.0 - 1e-6),
                "kappa({r}) = {} dropped below {prev}",
                res.kappa
            );
            prev = res.kappa;
        }
    }

    #[test]
    fn local_poincare_guard_accepts_solve_and_rejects_slashed_kappa() {
        let v = ScalarField::parse("x1^2", 1).unwrap();
        let m = build_measure(v, &MeasureSpec::new(8.0, 2049)).unwrap();
        let lp = local_poincare(&m, 1.5, 257).unwrap();
        let probes = vec![
            ScalarField::parse("x1", 1).unwrap(),
            ScalarField::parse("sin(3*x1)", 1).unwrap(),
            ScalarField::parse("exp(-4*x1^2)", 1).unwrap(),
            ScalarField::parse("x1^2 - 1", 1).unwrap(),
        ];
        let worst = verify_local_poincare(&m, &lp, &probes).unwrap();
        assert!(worst >= -LOCAL_MARGIN_TOL, "worst margin {worst}");
        // Slashing kappa far below the solve makes f = x a counterexample:
        // its ball mean vanishes by symmetry, so the projection term cannot
        // hide the missing Dirichlet weight.
        let mut slashed = lp.clone();
        slashed.kappa *= 0.05;
        assert!(matches!(
            verify_local_poincare(&m, &slashed, &probes),
            Err(LocalError::ViolationFound { index: 0, .. })
        ));
    }

    #[test]
    fn beta_evaluator_matches_direct_formula() {
        let v = ScalarField::parse("x1^2", 1).unwrap();
        let m = build_measure(v, &MeasureSpec::new(8.0, 2049)).unwrap();
        let lsp = LocalSuperPoincare::new(&m).unwrap();
        assert_eq!(lsp.c_n, NASH_C1);
        let bl = lsp.beta_loc(1.5, 1e-3).unwrap();
        let (lo, hi) = ball_density_bounds(&m, 1.5).unwrap();
        assert_eq!(bl.rho_min, lo);
        assert_eq!(bl.rho_max, hi);
        assert_eq!(bl.beta, nash_beta_loc(1, 1.5, 1e-3, lo, hi).unwrap());
        assert!(matches!(
            lsp.beta_loc(-1.0, 1e-3),
            Err(LocalError::BadBall { .. }) | Err(LocalError::EmptyBall { .. })
        ));
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(matches!(
            uniform_ball_kappa(1, -1.0),
            Err(LocalError::BadBall { .. })
        ));
        assert!(matches!(
            uniform_ball_kappa(3, 1.0),
            Err(LocalError::UnsupportedDimension { .. })
        ));
        assert!(matches!(
            nash_beta_loc(1, 1.0, 0.0, 1.0, 1.0),
            Err(LocalError::BetaOverflow { .. })
        ));
    }
}
