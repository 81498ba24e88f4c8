//! The diffusion generator L = Delta - grad(V).grad and the basic
//! inequality behind every certificate in this crate: for psi C^1
//! increasing, h >= 1 and smooth f,
//!
//!     int (-Lh / psi(h)) f^2 dmu  <=  int |grad f|^2 / psi'(h) dmu,
//!
//! with equality when psi is the identity and f = h.

use crate::field::ScalarField;
use crate::grid::Accumulator;
use crate::measure::{Measure, MeasureError};
use thiserror::Error;

pub const LEMMA_MARGIN_TOL: f64 = 1e-8;
/// Taper kicks in automatically when boundary f^2 rho exceeds this times its peak.
pub const TAPER_TRIGGER_RATIO: f64 = 1e-12;
/// Taper ramps over the outer 10% of each axis.
pub const TAPER_START_FRACTION: f64 = 0.9;

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("lyapunov function below one at node {node}: h = {value}")]
    HBelowOne { node: usize, value: f64 },
    #[error("invalid psi: {0}")]
    BadPsi(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum PsiFunction {
    Identity,
    /// psi(h) = h^q, q > 0.
    Power { q: f64 },
    /// psi(h) = e^h.
    Exp,
    /// psi(h) = a + b log h, a > 0, b > 0.
    AffineLog { a: f64, b: f64 },
}

impl PsiFunction {
    pub fn validate(&self) -> Result<(), GeneratorError> {
        match self {
            PsiFunction::Identity | PsiFunction::Exp => Ok(()),
            PsiFunction::Power { q } => {
                if q.is_finite() && *q > 0.0 {
                    Ok(())
                } else {
                    Err(GeneratorError::BadPsi(format!(
                        "power exponent must be positive and finite, got {q}"
                    )))
                }
            }
            PsiFunction::AffineLog { a, b } => {
                if a.is_finite() && b.is_finite() && *a > 0.0 && *b > 0.0 {
                    Ok(())
                } else {
                    Err(GeneratorError::BadPsi(format!(
                        "affine-log needs a > 0 and b > 0, got a = {a}, b = {b}"
                    )))
                }
            }
        }
    }

    /// psi(h) for h >= 1. Positive and increasing for valid parameters.
    pub fn value(&self, h: f64) -> f64 {
        match self {
            PsiFunction::Identity => h,
            PsiFunction::Power { q } => h.powf(*q),
            PsiFunction::Exp => h.exp(),
            PsiFunction::AffineLog { a, b } => a + b * h.ln(),
        }
    }

    /// psi'(h) for h >= 1.
    pub fn derivative(&self, h: f64) -> f64 {
        match self {
            PsiFunction::Identity => 1.0,
            PsiFunction::Power { q } => q * h.powf(q - 1.0),
            PsiFunction::Exp => h.exp(),
            PsiFunction::AffineLog { b, .. } => b / h,
        }
    }

    pub fn label(&self) -> String {
        match self {
            PsiFunction::Identity => "identity".to_string(),
            PsiFunction::Power { q } => format!("power(q={q})"),
            PsiFunction::Exp => "exp".to_string(),
            PsiFunction::AffineLog { a, b } => format!("affine_log(a={a},b={b})"),
        }
    }
}

/// The generator of the mu-reversible diffusion, acting through V.
pub struct Generator<'a> {
    pub v: &'a ScalarField,
}

impl<'a> Generator<'a> {
    pub fn new(v: &'a ScalarField) -> Self {
        Generator { v }
    }

    /// (Lf)(x) = Delta f - grad V . grad f.
    pub fn apply_l(&self, f: &ScalarField, x: &[f64]) -> f64 {
        let gf = f.gradient(x);
        let gv = self.v.gradient(x);
        f.laplacian(x) - dot(&gv, &gf)
    }

    /// Carre du champ Gamma(f, g) = grad f . grad g.
    pub fn gamma(&self, f: &ScalarField, g: &ScalarField, x: &[f64]) -> f64 {
        dot(&f.gradient(x), &g.gradient(x))
    }

    /// Gamma(f, f) = |grad f|^2.
    pub fn gamma_one(&self, f: &ScalarField, x: &[f64]) -> f64 {
        f.squared_grad_norm(x)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaperMode {
    Auto,
    Always,
    Never,
}

/// Smooth cutoff: product over axes of a cos^2 ramp that is 1 inside
/// `start * rmax` and 0 at `rmax`. C^1 on the whole box.
#[derive(Debug, Clone)]
pub struct Taper {
    pub rmax: f64,
    pub start: f64,
}

impl Taper {
    pub fn new(rmax: f64) -> Self {
        Taper {
            rmax,
            start: TAPER_START_FRACTION,
        }
    }

    fn axis_value(&self, u: f64) -> f64 {
        let r0 = self.start * self.rmax;
        let a = u.abs();
        if a <= r0 {
            1.0
        } else if a >= self.rmax {
            0.0
        } else {
            let t = (a - r0) / (self.rmax - r0);
            let c = (std::f64::consts::FRAC_PI_2 * t).cos();
            c * c
        }
    }

    fn axis_derivative(&self, u: f64) -> f64 {
        let r0 = self.start * self.rmax;
        let a = u.abs();
        if a <= r0 || a >= self.rmax {
            0.0
        } else {
            let w = self.rmax - r0;
            let t = (a - r0) / w;
            -std::f64::consts::FRAC_PI_2 / w * (std::f64::consts::PI * t).sin() * u.signum()
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        x.iter().map(|&u| self.axis_value(u)).product()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let vals: Vec<f64> = x.iter().map(|&u| self.axis_value(u)).collect();
        (0..x.len())
            .map(|i| {
                let mut g = self.axis_derivative(x[i]);
                for (j, v) in vals.iter().enumerate() {
                    if j != i {
                        g *= v;
                    }
                }
                g
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct LemmaCheck {
    pub psi: String,
    pub lhs: f64,
    pub rhs: f64,
    /// rhs - lhs; the inequality demands margin >= -tol * scale.
    pub margin: f64,
    pub scale: f64,
    pub tapered: bool,
    /// Peak-relative boundary mass of f^2 rho that drove the taper decision.
    pub boundary_ratio: f64,
    pub pass: bool,
}

/// Quadrature check of the basic inequality for one (h, f, psi) triple.
///
/// The integration by parts behind the inequality needs f^2 rho to vanish at
/// the truncation boundary; when it does not (relative to its peak), f is
/// multiplied by a smooth cos^2 cutoff so the discrete check remains honest.
pub fn lemma_margin(
    m: &Measure,
    h: &ScalarField,
    f: &ScalarField,
    psi: &PsiFunction,
    mode: TaperMode,
) -> Result<LemmaCheck, GeneratorError> {
    psi.validate()?;
    let gen = Generator::new(&m.v);
    let n = m.len();

    // h must dominate 1 everywhere we integrate.
    for i in 0..n {
        let hv = h.value(m.grid.node(i));
        if !(hv >= 1.0 - 1e-12) {
            return Err(GeneratorError::HBelowOne { node: i, value: hv });
        }
    }

    // Taper decision from the boundary-to-peak ratio of f^2 rho.
    let mut peak = 0.0f64;
    let mut boundary_peak = 0.0f64;
    for i in 0..n {
        let x = m.grid.node(i);
        let fv = f.value(x);
        let mass = fv * fv * m.density(i);
        peak = peak.max(mass);
        if m.grid.is_boundary(i) {
            boundary_peak = boundary_peak.max(mass);
        }
    }
    let boundary_ratio = if peak > 0.0 {
        boundary_peak / peak
    } else {
        0.0
    };
    let tapered = match mode {
        TaperMode::Always => true,
        TaperMode::Never => false,
        TaperMode::Auto => boundary_ratio > TAPER_TRIGGER_RATIO,
    };
    let taper = Taper::new(m.rmax);

    let mut lhs_acc = Accumulator::default();
    let mut rhs_acc = Accumulator::default();
    for i in 0..n {
        let x = m.grid.node(i);
        let w = m.mu_weight(i);
        if w == 0.0 {
            continue;
        }
        let hv = h.value(x);
        let lh = gen.apply_l(h, x);
        let (fv, fg) = if tapered {
            let tv = taper.value(x);
            let tg = taper.gradient(x);
            let raw = f.value(x);
            let rawg = f.gradient(x);
            let val = tv * raw;
            let grad: Vec<f64> = (0..m.dim())
                .map(|k| tv * rawg[k] + raw * tg[k])
                .collect();
            (val, grad)
        } else {
            (f.value(x), f.gradient(x))
        };
        let lhs_term = (-lh / psi.value(hv)) * fv * fv;
        let rhs_term = dot(&fg, &fg) / psi.derivative(hv);
        if !lhs_term.is_finite() || !rhs_term.is_finite() {
            return Err(GeneratorError::Measure(MeasureError::NonFinite {
                node: x.to_vec(),
                value: if lhs_term.is_finite() {
                    rhs_term
                } else {
                    lhs_term
                },
            }));
        }
        lhs_acc.add(w * lhs_term);
        rhs_acc.add(w * rhs_term);
    }
    let lhs = lhs_acc.total();
    let rhs = rhs_acc.total();
    let scale = lhs.abs() + rhs.abs();
    let margin = rhs - lhs;
    Ok(LemmaCheck {
        psi: psi.label(),
        lhs,
        rhs,
        margin,
        scale,
        tapered,
        boundary_ratio,
        pass: margin >= -LEMMA_MARGIN_TOL * scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{build_measure, MeasureSpec};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn gaussian_1d(nodes: usize) -> Measure {
        let v = ScalarField::parse("x1^2", 1).unwrap();
        build_measure(v, &MeasureSpec::new(8.0, nodes)).unwrap()
    }

    #[test]
    fn psi_menu_is_increasing_and_positive() {
        let menu = [
            PsiFunction::Identity,
            PsiFunction::Power { q: 0.5 },
            PsiFunction::Power { q: 3.0 },
            PsiFunction::Exp,
            PsiFunction::AffineLog { a: 1.0, b: 2.0 },
        ];
        for psi in &menu {
            psi.validate().unwrap();
            for k in 0..40 {
                let h = 1.0 + 0.5 * k as f64;
                assert!(psi.value(h) > 0.0, "{} at {h}", psi.label());
                assert!(psi.derivative(h) > 0.0, "{} at {h}", psi.label());
            }
        }
        assert!(PsiFunction::Power { q: 0.0 }.validate().is_err());
        assert!(PsiFunction::Power { q: -1.0 }.validate().is_err());
        assert!(PsiFunction::AffineLog { a: 0.0, b: 1.0 }.validate().is_err());
    }

    #[test]
    fn generator_matches_hand_computation() {
        // V = x^2, f = 1 + x^2: Lf = 2 - 2x * 2x = 2 - 4x^2.
        let v = ScalarField::parse("x1^2", 1).unwrap();
        let f = ScalarField::parse("1 + x1^2", 1).unwrap();
        let gen = Generator::new(&v);
        for x in [-2.0, -0.3, 0.0, 1.0, 2.5] {
            assert_relative_eq!(
                gen.apply_l(&f, &[x]),
                2.0 - 4.0 * x * x,
                max_relative = 1e-12
            );
            assert_relative_eq!(gen.gamma_one(&f, &[x]), 4.0 * x * x, max_relative = 1e-12);
        }
    }

    #[test]
    fn integration_by_parts_holds_on_grid() {
        // int f Lg dmu = -int grad f . grad g dmu for compactly supported f.
        let m = gaussian_1d(4097);
        let gen = Generator::new(&m.v);
        let f = ScalarField::parse("sin(x1) * exp(-x1^2)", 1).unwrap();
        let g = ScalarField::parse("x1^2 * exp(-0.5*x1^2)", 1).unwrap();
        let lhs = m
            .integrate(&mut |x: &[f64]| f.value(x) * gen.apply_l(&g, x))
            .unwrap();
        let rhs = -m
            .integrate(&mut |x: &[f64]| gen.gamma(&f, &g, x))
            .unwrap();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-10);
    }

    #[test]
    fn lemma_equality_case_is_tight() {
        // psi = id, f = h: both sides equal int Gamma(h) dmu.
        let m = gaussian_1d(4097);
        let h = ScalarField::parse("1 + x1^2", 1).unwrap();
        let check = lemma_margin(&m, &h, &h, &PsiFunction::Identity, TaperMode::Auto).unwrap();
        assert!(check.pass);
        assert!(
            check.margin.abs() <= 1e-8 * check.scale,
            "margin {} scale {}",
            check.margin,
            check.scale
        );
        assert!(!check.tapered, "light tail should not trigger the taper");
    }

    #[test]
    fn lemma_holds_for_nontrivial_psi() {
        let m = gaussian_1d(4097);
        let h = ScalarField::parse("1 + x1^2", 1).unwrap();
        let f = ScalarField::parse("sin(2*x1) + 0.5*x1", 1).unwrap();
        for psi in [
            PsiFunction::Power { q: 2.0 },
            PsiFunction::Exp,
            PsiFunction::AffineLog { a: 1.0, b: 1.0 },
        ] {
            let check = lemma_margin(&m, &h, &f, &psi, TaperMode::Auto).unwrap();
            assert!(check.pass, "{}: margin {}", check.psi, check.margin);
        }
    }

    #[test]
    fn h_below_one_is_rejected() {
        let m = gaussian_1d(257);
        let h = ScalarField::parse("x1^2", 1).unwrap(); // h(0) = 0 < 1
        let err = lemma_margin(&m, &h, &h, &PsiFunction::Identity, TaperMode::Auto).unwrap_err();
        assert!(matches!(err, GeneratorError::HBelowOne { .. }));
    }

    #[test]
    fn taper_is_smooth_partition() {
        let t = Taper::new(10.0);
        assert_eq!(t.value(&[0.0, 0.0]), 1.0);
        assert_eq!(t.value(&[8.9, 0.0]), 1.0);
        assert_eq!(t.value(&[10.0, 0.0]), 0.0);
        let mid = t.value(&[9.5, 0.0]);
        assert!(mid > 0.0 && mid < 1.0);
        // Gradient against finite differences inside the ramp.
        let x = [9.3, 9.7];
        let g = t.gradient(&x);
        let h = 1e-6;
        for i in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fd = (t.value(&xp) - t.value(&xm)) / (2.0 * h);
            assert_abs_diff_eq!(g[i], fd, epsilon = 1e-6);
        }
    }
}
