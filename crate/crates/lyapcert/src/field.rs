//! Compiled scalar fields: an expression together with its symbolic gradient,
//! Hessian and Laplacian, evaluable at arbitrary points.

use crate::expr::{parse_expr, Expr, ParseError};

#[derive(Debug, Clone)]
pub struct ScalarField {
    pub dim: usize,
    pub expr: Expr,
    grad: Vec<Expr>,
    /// Upper triangle of the Hessian, row-major: (i,j) with i <= j.
    hess: Vec<Expr>,
}

impl ScalarField {
    /// Compile `expr` for dimension `dim`, differentiating symbolically.
    pub fn compile(expr: Expr, dim: usize) -> ScalarField {
        let grad: Vec<Expr> = (0..dim).map(|i| expr.derivative(i)).collect();
        let mut hess = Vec::with_capacity(dim * (dim + 1) / 2);
        for i in 0..dim {
            for j in i..dim {
                hess.push(grad[i].derivative(j));
            }
        }
        ScalarField {
            dim,
            expr,
            grad,
            hess,
        }
    }

    /// Parse and compile in one step.
    pub fn parse(src: &str, dim: usize) -> Result<ScalarField, ParseError> {
        Ok(Self::compile(parse_expr(src, dim)?, dim))
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.expr.eval(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.grad.iter().map(|g| g.eval(x)).collect()
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, g) in out.iter_mut().zip(&self.grad) {
            *o = g.eval(x);
        }
    }

    pub fn grad_expr(&self, i: usize) -> &Expr {
        &self.grad[i]
    }

    fn hess_idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        // Row-major upper triangle offset.
        i * self.dim - i * (i + 1) / 2 + j
    }

    pub fn hessian_entry(&self, i: usize, j: usize, x: &[f64]) -> f64 {
        self.hess[self.hess_idx(i, j)].eval(x)
    }

    pub fn laplacian(&self, x: &[f64]) -> f64 {
        (0..self.dim).map(|i| self.hessian_entry(i, i, x)).sum()
    }

    /// Smallest eigenvalue of the Hessian at `x` (dim 1 or 2).
    pub fn hessian_min_eig(&self, x: &[f64]) -> f64 {
        match self.dim {
            1 => self.hessian_entry(0, 0, x),
            2 => {
                let a = self.hessian_entry(0, 0, x);
                let b = self.hessian_entry(0, 1, x);
                let c = self.hessian_entry(1, 1, x);
                let mean = 0.5 * (a + c);
                let disc = (0.5 * (a - c)).hypot(b);
                mean - disc
            }
            _ => f64::NAN,
        }
    }

    pub fn squared_grad_norm(&self, x: &[f64]) -> f64 {
        self.grad.iter().map(|g| g.eval(x).powi(2)).sum()
    }
}
