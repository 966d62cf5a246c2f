//! Dense linear algebra, forward- and reverse-mode differentiation, and the
//! finite-difference oracle.

pub mod dense;
pub mod dual;
pub mod fd;
pub mod special;
pub mod tape;

pub use dense::{condition_number, dot, solve_spd, sym_eigen, Cholesky, Mat};
pub use dual::{dual_gradient, hyper_hessian, Dual, Hyper, Real};
pub use fd::{fd_gradient, fd_jacobian, finite_diff_check, max_rel_error};
pub use tape::{Gradients, NodeId, OpKind, Tape};
