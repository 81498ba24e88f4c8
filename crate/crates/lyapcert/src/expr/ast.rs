//! Expression tree for potentials and test functions.
//!
//! The node set is deliberately small: arithmetic, `exp`, `log`, `sin`, `cos`,
//! `sqrt`, `atan2`, the radial shorthand `r2` (= sum of xi^2) and the planar angle
//! `theta` (= atan2(x2, x1)). Every node has an exact symbolic partial
//! derivative, so gradients, Laplacians and Hessians of compiled fields are
//! closed under the same node set.
//!
//! Evaluation follows IEEE semantics: out-of-domain arguments (log of a
//! non-positive number, division by zero, ...) produce NaN/Inf which callers
//! detect at the point of use, where the offending grid node is known.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    /// sum of xi^2 over all coordinates.
    R2,
    /// atan2(x2, x1); only meaningful in dimension 2.
    Theta,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Exp(Box<Expr>),
    Log(Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Sqrt(Box<Expr>),
    Atan2(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    pub fn is_const(&self, c: f64) -> bool {
        matches!(self, Expr::Const(v) if *v == c)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(v) => Some(*v),
            _ => None,
        }
    }

    /// Largest variable index used, if any.
    pub fn max_var(&self) -> Option<usize> {
        let mut m = None;
        self.visit(&mut |e| {
            if let Expr::Var(i) = e {
                m = Some(m.map_or(*i, |v: usize| v.max(*i)));
            }
        });
        m
    }

    pub fn uses_theta(&self) -> bool {
        let mut found = false;
        self.visit(&mut |e| {
            if matches!(e, Expr::Theta) {
                found = true;
            }
        });
        found
    }

    pub fn node_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_| n += 1);
        n
    }

    fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Const(_) | Expr::Var(_) | Expr::R2 | Expr::Theta => {}
            Expr::Neg(a)
            | Expr::Exp(a)
            | Expr::Log(a)
            | Expr::Sin(a)
            | Expr::Cos(a)
            | Expr::Sqrt(a) => a.visit(f),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b)
            | Expr::Atan2(a, b) => {
                a.visit(f);
                b.visit(f);
            }
        }
    }

    /// Evaluate at a point. IEEE semantics: domain violations yield NaN/Inf.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => x[*i],
            Expr::R2 => x.iter().map(|v| v * v).sum(),
            Expr::Theta => x[1].atan2(x[0]),
            Expr::Neg(a) => -a.eval(x),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Pow(a, b) => a.eval(x).powf(b.eval(x)),
            Expr::Exp(a) => a.eval(x).exp(),
            Expr::Log(a) => a.eval(x).ln(),
            Expr::Sin(a) => a.eval(x).sin(),
            Expr::Cos(a) => a.eval(x).cos(),
            Expr::Sqrt(a) => a.eval(x).sqrt(),
            Expr::Atan2(a, b) => a.eval(x).atan2(b.eval(x)),
        }
    }

    /// Exact partial derivative with respect to coordinate `var`.
    ///
    /// Only constant folding and neutral-element elimination are applied to
    /// the result; no other rewriting.
    pub fn derivative(&self, var: usize) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(i) => Expr::Const(if *i == var { 1.0 } else { 0.0 }),
            Expr::R2 => mul(Expr::Const(2.0), Expr::Var(var)),
            Expr::Theta => {
                // d theta/dx1 = -x2/r2, d theta/dx2 = x1/r2.
                match var {
                    0 => div(neg(Expr::Var(1)), Expr::R2),
                    1 => div(Expr::Var(0), Expr::R2),
                    _ => Expr::Const(0.0),
                }
            }
            Expr::Neg(a) => neg(a.derivative(var)),
            Expr::Add(a, b) => add(a.derivative(var), b.derivative(var)),
            Expr::Sub(a, b) => sub(a.derivative(var), b.derivative(var)),
            Expr::Mul(a, b) => {
                // Product rule: (uv)' = u'v + uv'.
                let da = a.derivative(var);
                let db = b.derivative(var);
                add(mul(da, (**b).clone()), mul((**a).clone(), db))
            }
            Expr::Div(a, b) => {
                // Quotient rule: (u/v)' = (u'v - uv')/v^2.
                let da = a.derivative(var);
                let db = b.derivative(var);
                let num = sub(mul(da, (**b).clone()), mul((**a).clone(), db));
                div(num, mul((**b).clone(), (**b).clone()))
            }
            Expr::Pow(a, b) => {
                let da = a.derivative(var);
                match b.as_const() {
                    // (u^c)' = c u^(c-1) u'.
                    Some(c) => mul(
                        mul(Expr::Const(c), pow((**a).clone(), Expr::Const(c - 1.0))),
                        da,
                    ),
                    // General u^v via u^v (v' log u + v u'/u).
                    None => {
                        let db = b.derivative(var);
                        let t1 = mul(db, log((**a).clone()));
                        let t2 = div(mul((**b).clone(), da), (**a).clone());
                        mul(pow((**a).clone(), (**b).clone()), add(t1, t2))
                    }
                }
            }
            Expr::Exp(a) => mul(exp((**a).clone()), a.derivative(var)),
            Expr::Log(a) => div(a.derivative(var), (**a).clone()),
            Expr::Sin(a) => mul(cos((**a).clone()), a.derivative(var)),
            Expr::Cos(a) => neg(mul(sin((**a).clone()), a.derivative(var))),
            Expr::Sqrt(a) => div(
                a.derivative(var),
                mul(Expr::Const(2.0), sqrt((**a).clone())),
            ),
            Expr::Atan2(y, xx) => {
                // d atan2(y,x) = (x dy - y dx) / (x^2 + y^2).
                let dy = y.derivative(var);
                let dx = xx.derivative(var);
                let num = sub(mul((**xx).clone(), dy), mul((**y).clone(), dx));
                let den = add(
                    mul((**xx).clone(), (**xx).clone()),
                    mul((**y).clone(), (**y).clone()),
                );
                div(num, den)
            }
        }
    }

    /// Replace each variable xi by xi - shift[i]. `r2` and `theta` are
    /// rewritten in terms of shifted coordinates first.
    pub fn shift(&self, shift: &[f64], dim: usize) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(i) => {
                let s = shift.get(*i).copied().unwrap_or(0.0);
                if s == 0.0 {
                    Expr::Var(*i)
                } else {
                    sub(Expr::Var(*i), Expr::Const(s))
                }
            }
            Expr::R2 => {
                let mut acc = Expr::Const(0.0);
                for i in 0..dim {
                    let xi = Expr::Var(i).shift(shift, dim);
                    acc = add(acc, pow(xi, Expr::Const(2.0)));
                }
                acc
            }
            Expr::Theta => {
                let y = Expr::Var(1).shift(shift, dim);
                let xx = Expr::Var(0).shift(shift, dim);
                Expr::Atan2(Box::new(y), Box::new(xx))
            }
            Expr::Neg(a) => neg(a.shift(shift, dim)),
            Expr::Add(a, b) => add(a.shift(shift, dim), b.shift(shift, dim)),
            Expr::Sub(a, b) => sub(a.shift(shift, dim), b.shift(shift, dim)),
            Expr::Mul(a, b) => mul(a.shift(shift, dim), b.shift(shift, dim)),
            Expr::Div(a, b) => div(a.shift(shift, dim), b.shift(shift, dim)),
            Expr::Pow(a, b) => pow(a.shift(shift, dim), b.shift(shift, dim)),
            Expr::Exp(a) => exp(a.shift(shift, dim)),
            Expr::Log(a) => log(a.shift(shift, dim)),
            Expr::Sin(a) => sin(a.shift(shift, dim)),
            Expr::Cos(a) => cos(a.shift(shift, dim)),
            Expr::Sqrt(a) => sqrt(a.shift(shift, dim)),
            Expr::Atan2(a, b) => {
                let sa = a.shift(shift, dim);
                let sb = b.shift(shift, dim);
                Expr::Atan2(Box::new(sa), Box::new(sb))
            }
        }
    }
}

// Smart constructors: constant folding plus neutral/absorbing elements that
// derivative construction produces in bulk (0*u, u+0, u^1, ...). Rules that
// could change the domain of definition (e.g. 0/u -> 0) are not applied.

pub fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

pub fn add(a: Expr, b: Expr) -> Expr {
    if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
        if (x + y).is_finite() {
            return Expr::Const(x + y);
        }
    }
    if a.is_const(0.0) {
        return b;
    }
    if b.is_const(0.0) {
        return a;
    }
    Expr::Add(Box::new(a), Box::new(b))
}

pub fn sub(a: Expr, b: Expr) -> Expr {
    if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
        if (x - y).is_finite() {
            return Expr::Const(x - y);
        }
    }
    if b.is_const(0.0) {
        return a;
    }
    if a.is_const(0.0) {
        return neg(b);
    }
    Expr::Sub(Box::new(a), Box::new(b))
}

pub fn mul(a: Expr, b: Expr) -> Expr {
    if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
        if (x * y).is_finite() {
            return Expr::Const(x * y);
        }
    }
    if a.is_const(0.0) || b.is_const(0.0) {
        return Expr::Const(0.0);
    }
    if a.is_const(1.0) {
        return b;
    }
    if b.is_const(1.0) {
        return a;
    }
    Expr::Mul(Box::new(a), Box::new(b))
}

pub fn div(a: Expr, b: Expr) -> Expr {
    if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
        if y != 0.0 && (x / y).is_finite() {
            return Expr::Const(x / y);
        }
    }
    if b.is_const(1.0) {
        return a;
    }
    Expr::Div(Box::new(a), Box::new(b))
}

pub fn pow(a: Expr, b: Expr) -> Expr {
    if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
        let v = x.powf(y);
        if v.is_finite() {
            return Expr::Const(v);
        }
    }
    if b.is_const(1.0) {
        return a;
    }
    if b.is_const(0.0) {
        return Expr::Const(1.0);
    }
    Expr::Pow(Box::new(a), Box::new(b))
}

pub fn exp(a: Expr) -> Expr {
    if let Some(x) = a.as_const() {
        if x.exp().is_finite() {
            return Expr::Const(x.exp());
        }
    }
    Expr::Exp(Box::new(a))
}

pub fn log(a: Expr) -> Expr {
    if let Some(x) = a.as_const() {
        if x > 0.0 {
            return Expr::Const(x.ln());
        }
    }
    Expr::Log(Box::new(a))
}

pub fn sin(a: Expr) -> Expr {
    if let Some(x) = a.as_const() {
        return Expr::Const(x.sin());
    }
    Expr::Sin(Box::new(a))
}

pub fn cos(a: Expr) -> Expr {
    if let Some(x) = a.as_const() {
        return Expr::Const(x.cos());
    }
    Expr::Cos(Box::new(a))
}

pub fn sqrt(a: Expr) -> Expr {
    if let Some(x) = a.as_const() {
        if x >= 0.0 {
            return Expr::Const(x.sqrt());
        }
    }
    Expr::Sqrt(Box::new(a))
}

// Printing with minimal parentheses. Precedence: Add/Sub 1, Mul/Div 2,
// unary minus 3, Pow 4 (right associative), atoms 5.

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Add(..) | Expr::Sub(..) => 1,
        Expr::Mul(..) | Expr::Div(..) => 2,
        Expr::Neg(_) => 3,
        Expr::Const(c) if *c < 0.0 => 3,
        Expr::Pow(..) => 4,
        _ => 5,
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    if prec(e) < min_prec {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::R2 => write!(f, "r2"),
            Expr::Theta => write!(f, "theta"),
            Expr::Neg(a) => {
                write!(f, "-")?;
                write_child(f, a, 3)
            }
            Expr::Add(a, b) => {
                write_child(f, a, 1)?;
                write!(f, "+")?;
                write_child(f, b, 2)
            }
            Expr::Sub(a, b) => {
                write_child(f, a, 1)?;
                write!(f, "-")?;
                write_child(f, b, 2)
            }
            Expr::Mul(a, b) => {
                write_child(f, a, 2)?;
                write!(f, "*")?;
                write_child(f, b, 3)
            }
            Expr::Div(a, b) => {
                write_child(f, a, 2)?;
                write!(f, "/")?;
                write_child(f, b, 3)
            }
            Expr::Pow(a, b) => {
                write_child(f, a, 5)?;
                write!(f, "^")?;
                write_child(f, b, 4)
            }
            Expr::Exp(a) => write!(f, "exp({a})"),
            Expr::Log(a) => write!(f, "log({a})"),
            Expr::Sin(a) => write!(f, "sin({a})"),
            Expr::Cos(a) => write!(f, "cos({a})"),
            Expr::Sqrt(a) => write!(f, "sqrt({a})"),
            Expr::Atan2(a, b) => write!(f, "atan2({a},{b})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_basics() {
        let e = add(mul(Expr::Const(2.0), Expr::var(0)), Expr::Const(1.0));
        assert_eq!(e.eval(&[3.0]), 7.0);
        assert_eq!(Expr::R2.eval(&[3.0, 4.0]), 25.0);
        let th = Expr::Theta.eval(&[0.0, 2.0]);
        assert!((th - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn derivative_of_square() {
        // d/dx x^2 = 2x.
        let e = pow(Expr::var(0), Expr::Const(2.0));
        let d = e.derivative(0);
        assert_eq!(d.eval(&[3.0]), 6.0);
    }

    #[test]
    fn derivative_drops_zero_terms() {
        // Smart constructors keep d/dx (c * x) at a single node.
        let e = mul(Expr::Const(5.0), Expr::var(0));
        let d = e.derivative(0);
        assert_eq!(d, Expr::Const(5.0));
    }

    #[test]
    fn theta_gradient_is_tangential() {
        let d0 = Expr::Theta.derivative(0);
        let d1 = Expr::Theta.derivative(1);
        let p = [0.6, -1.3];
        let r2 = p[0] * p[0] + p[1] * p[1];
        assert!((d0.eval(&p) - (-p[1] / r2)).abs() < 1e-15);
        assert!((d1.eval(&p) - (p[0] / r2)).abs() < 1e-15);
    }

    #[test]
    fn shift_rewrites_r2() {
        let e = Expr::R2;
        let s = e.shift(&[1.0], 1);
        assert!((s.eval(&[3.0]) - 4.0).abs() < 1e-15);
    }

    #[test]
    fn display_parenthesizes_by_precedence() {
        let e = mul(add(Expr::var(0), Expr::Const(1.0)), Expr::var(0));
        assert_eq!(e.to_string(), "(x1+1)*x1");
        let p = pow(Expr::var(0), neg(Expr::Const(2.0)));
        assert_eq!(p.to_string(), "x1^(-2)");
    }
}
