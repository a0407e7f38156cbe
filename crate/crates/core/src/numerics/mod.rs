//! Dense arrays and reverse-mode differentiation.

mod array;
mod expr;
mod gradcheck;

pub use array::{Array, Precision, ShapeError};
pub use expr::{evaluate, gradient, log_sigmoid, sigmoid, Bindings, Expr, GradientMap, NodeId, NumericsError, Tape};
pub(crate) use expr::dot;
pub use gradcheck::finite_difference_check;
