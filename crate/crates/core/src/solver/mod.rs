//! Linear operators, the TV solver and a dense least-squares oracle.

pub mod gradient;
pub mod operator;
pub mod oracle;
pub mod tv;

pub use gradient::{gradient_adjoint, gradient_stencil};
pub use operator::{adjoint_mismatch, gram_norm_estimate, DenseOperator, IdentityOperator, LinearOperator};
pub use oracle::{ls_oracle, numerical_rank};
pub use tv::{tv_objective, tv_solve, SolveReport, SolverConfig, TvNorm};
