//! Certificate engine for Lyapunov-based functional inequalities.
//!
//! Measures mu proportional to e^{-V} on R^n (n = 1, 2) are represented on
//! truncated tensor grids. The crate constructs Lyapunov drift certificates
//! (linear, phi-shaped, multiplicative), converts them into explicit
//! functional-inequality constants and rate curves, and audits every
//! certificate against independent spectral, transport, and quadrature
//! oracles.

pub mod eig;
pub mod expr;
pub mod field;
pub mod generator;
pub mod grid;
pub mod local;
pub mod lyapunov;
pub mod measure;
pub mod phi;
pub mod sampler;

pub use expr::{parse_expr, Expr, ParseError};
pub use field::ScalarField;
pub use measure::{build_measure, Measure, MeasureError, MeasureSpec, TailPolicy};
