//! Ground-state energy, Laplace transform and upper large-deviation rate
//! function of mixed p-spin glasses with an external field.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod error;
pub mod finite_n;
pub mod gamma;
pub mod mixture;
pub mod pde;
pub mod ldp;
pub mod martingale;
pub mod quadrature;
pub mod variational;
pub mod verify;

pub use error::{Error, Result};
pub use gamma::GammaPath;
pub use mixture::{FieldSpec, MixtureSpec};
pub use pde::{solve_finite_temp, solve_zero_temp, PdeGrid, PdePoint, PdeSolution, Terminal};
