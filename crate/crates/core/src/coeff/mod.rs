//! Periodic coefficient tensors A(y) and the expression language they are
//! written in.

mod expr;
mod field;

pub use expr::{parse_expr, parse_expr_in, BinOp, Env, Expr, ExprError, Func, Var, VarSet};
pub use field::{validate, CoeffError, CoefficientField, Holder, Tensor, ValidationReport, DIM};
