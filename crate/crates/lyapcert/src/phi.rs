//! Rate functions phi for drift conditions L W <= -phi(W) + b 1_B. The
//! growth regime of phi relative to the identity decides which functional
//! inequality a certificate yields: linear gives a spectral-gap bound,
//! superlinear strengthens it, sublinear weakens it. Claimed regimes are
//! validated numerically on a logarithmic grid up to 1e12, so a parameter
//! choice whose regime is not actually visible at certificate scales is
//! rejected instead of silently misclassified.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiRegime {
    Sublinear,
    Linear,
    Superlinear,
}

impl std::fmt::Display for PhiRegime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PhiRegime::Sublinear => "sublinear",
            PhiRegime::Linear => "linear",
            PhiRegime::Superlinear => "superlinear",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum PhiError {
    #[error("invalid phi parameter: {0}")]
    BadParameter(String),
    #[error("phi is not positive increasing near u = {u} (phi = {value})")]
    NotIncreasing { u: f64, value: f64 },
    #[error("claimed {claimed} regime is not visible on [1, 1e12]: phi(u)/u moves from {ratio_start} to {ratio_end}")]
    RegimeNotVisible {
        claimed: PhiRegime,
        ratio_start: f64,
        ratio_end: f64,
    },
    #[error("this construction needs a {need} phi, got {got}")]
    WrongRegime { need: PhiRegime, got: PhiRegime },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhiFunction {
    /// phi(u) = c u.
    Linear { c: f64 },
    /// phi(u) = c u^p with p in (0, 1]: the sublinear menu.
    Power { c: f64, p: f64 },
    /// phi(u) = c u log(1 + u)^e; e > 0 is the superlinear menu, e < 0 a
    /// logarithmically sublinear one.
    LogPower { c: f64, e: f64 },
}

impl PhiFunction {
    pub fn value(&self, u: f64) -> f64 {
        match self {
            PhiFunction::Linear { c } => c * u,
            PhiFunction::Power { c, p } => c * u.powf(*p),
            PhiFunction::LogPower { c, e } => c * u * u.ln_1p().powf(*e),
        }
    }

    pub fn derivative(&self, u: f64) -> f64 {
        match self {
            PhiFunction::Linear { c } => *c,
            PhiFunction::Power { c, p } => c * p * u.powf(p - 1.0),
            PhiFunction::LogPower { c, e } => {
                let l = u.ln_1p();
                c * (l.powf(*e) + u * e * l.powf(e - 1.0) / (1.0 + u))
            }
        }
    }

    /// phi(u)/u, the quantity whose monotonicity defines the regime.
    pub fn ratio(&self, u: f64) -> f64 {
        match self {
            PhiFunction::Linear { c } => *c,
            PhiFunction::Power { c, p } => c * u.powf(p - 1.0),
            PhiFunction::LogPower { c, e } => c * u.ln_1p().powf(*e),
        }
    }

    pub fn regime(&self) -> PhiRegime {
        match self {
            PhiFunction::Linear { .. } => PhiRegime::Linear,
            PhiFunction::Power { p, .. } => {
                if *p < 1.0 {
                    PhiRegime::Sublinear
                } else if *p > 1.0 {
                    PhiRegime::Superlinear
                } else {
                    PhiRegime::Linear
                }
            }
            PhiFunction::LogPower { e, .. } => {
                if *e < 0.0 {
                    PhiRegime::Sublinear
                } else if *e > 0.0 {
                    PhiRegime::Superlinear
                } else {
                    PhiRegime::Linear
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            PhiFunction::Linear { c } => format!("linear(c={c})"),
            PhiFunction::Power { c, p } => format!("power(c={c},p={p})"),
            PhiFunction::LogPower { c, e } => format!("log_power(c={c},e={e})"),
        }
    }

    /// Parameter sanity plus a numeric regime audit on a logarithmic grid
    /// u in [1, 1e12]: phi must be positive and nondecreasing there, and
    /// phi(u)/u must move in the claimed direction by a visible factor.
    pub fn validate(&self) -> Result<(), PhiError> {
        let (c, extra_ok, what) = match self {
            PhiFunction::Linear { c } => (*c, true, "linear"),
            PhiFunction::Power { c, p } => (
                *c,
                p.is_finite() && *p > 0.0 && *p <= 1.0,
                "power exponent (must lie in (0, 1]; superlinear growth is the log_power menu)",
            ),
            PhiFunction::LogPower { c, e } => (*c, e.is_finite(), "log exponent"),
        };
        if !(c.is_finite() && c > 0.0) {
            return Err(PhiError::BadParameter(format!(
                "coefficient must be positive and finite, got {c}"
            )));
        }
        if !extra_ok {
            return Err(PhiError::BadParameter(format!("bad {what}")));
        }
        let points = 241;
        let mut prev_val = 0.0f64;
        for k in 0..points {
            let u = 10f64.powf(12.0 * k as f64 / (points - 1) as f64);
            let val = self.value(u);
            if !(val.is_finite() && val > 0.0) || val < prev_val * (1.0 - 1e-12) {
                return Err(PhiError::NotIncreasing { u, value: val });
            }
            prev_val = val;
        }
        let r_start = self.ratio(1.0);
        let r_end = self.ratio(1e12);
        let visible = 1.0 + 1e-6;
        let ok = match self.regime() {
            PhiRegime::Linear => {
                r_end <= r_start * visible && r_start <= r_end * visible
            }
            PhiRegime::Superlinear => r_end >= r_start * visible,
            PhiRegime::Sublinear => r_start >= r_end * visible,
        };
        if !ok {
            return Err(PhiError::RegimeNotVisible {
                claimed: self.regime(),
                ratio_start: r_start,
                ratio_end: r_end,
            });
        }
        Ok(())
    }

    pub fn require_regime(&self, need: PhiRegime) -> Result<(), PhiError> {
        let got = self.regime();
        if got == need {
            Ok(())
        } else {
            Err(PhiError::WrongRegime { need, got })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn values_and_derivatives_match_finite_differences() {
        let menu = [
            PhiFunction::Linear { c: 0.7 },
            PhiFunction::Power { c: 2.0, p: 0.33 },
            PhiFunction::Power { c: 0.5, p: 1.8 },
            PhiFunction::LogPower { c: 1.6, e: 1.0 },
            PhiFunction::LogPower { c: 1.0, e: -0.5 },
        ];
        for phi in &menu {
            for u in [1.0, 3.7, 120.0, 9e5] {
                let h = 1e-6 * u;
                let fd = (phi.value(u + h) - phi.value(u - h)) / (2.0 * h);
                assert_relative_eq!(phi.derivative(u), fd, max_relative = 1e-6);
                assert_relative_eq!(phi.ratio(u), phi.value(u) / u, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn regimes_classify_as_expected() {
        assert_eq!(PhiFunction::Linear { c: 1.0 }.regime(), PhiRegime::Linear);
        assert_eq!(
            PhiFunction::Power { c: 1.0, p: 0.5 }.regime(),
            PhiRegime::Sublinear
        );
        assert_eq!(
            PhiFunction::Power { c: 1.0, p: 1.0 }.regime(),
            PhiRegime::Linear
        );
        assert_eq!(
            PhiFunction::Power { c: 1.0, p: 2.0 }.regime(),
            PhiRegime::Superlinear
        );
        assert_eq!(
            PhiFunction::LogPower { c: 1.0, e: 1.0 }.regime(),
            PhiRegime::Superlinear
        );
        assert_eq!(
            PhiFunction::LogPower { c: 1.0, e: -1.0 }.regime(),
            PhiRegime::Sublinear
        );
    }

    #[test]
    fn menu_validates() {
        for phi in [
            PhiFunction::Linear { c: 2.0 },
            PhiFunction::Power { c: 2.0, p: 0.333 },
            PhiFunction::Power { c: 0.1, p: 1.0 },
            PhiFunction::LogPower { c: 1.6, e: 1.0 },
            PhiFunction::LogPower { c: 1.0, e: -1.0 },
        ] {
            phi.validate().unwrap();
        }
    }

    #[test]
    fn bad_parameters_rejected() {
        assert!(matches!(
            PhiFunction::Linear { c: 0.0 }.validate(),
            Err(PhiError::BadParameter(_))
        ));
        assert!(matches!(
            PhiFunction::Power { c: 1.0, p: -1.0 }.validate(),
            Err(PhiError::BadParameter(_))
        ));
        assert!(matches!(
            PhiFunction::Power { c: f64::NAN, p: 1.0 }.validate(),
            Err(PhiError::BadParameter(_))
        ));
    }

    #[test]
    fn invisible_regime_rejected() {
        // e = 1e-9 is formally superlinear but indistinguishable from
        // linear over twelve decades; the audit must say so.
        let phi = PhiFunction::LogPower { c: 1.0, e: 1e-9 };
        assert!(matches!(
            phi.validate(),
            Err(PhiError::RegimeNotVisible { .. })
        ));
    }

    #[test]
    fn superlinear_power_exponent_rejected() {
        assert!(matches!(
            PhiFunction::Power { c: 1.0, p: 1.5 }.validate(),
            Err(PhiError::BadParameter(_))
        ));
    }

    #[test]
    fn regime_requirement_enforced() {
        let phi = PhiFunction::Power { c: 1.0, p: 2.0 };
        phi.require_regime(PhiRegime::Superlinear).unwrap();
        let err = phi.require_regime(PhiRegime::Sublinear).unwrap_err();
        assert!(matches!(
            err,
            PhiError::WrongRegime {
                need: PhiRegime::Sublinear,
                got: PhiRegime::Superlinear
            }
        ));
    }
}
