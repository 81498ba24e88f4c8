pub mod ast;
pub mod parser;

pub use ast::Expr;
pub use parser::{parse_expr, ParseError, ParseErrorKind};
