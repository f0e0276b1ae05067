//! Constraint reparametrizations `{Â_k} → {A_k}` and their vector-Jacobian
//! products.
//!
//! Three maps are provided:
//!
//! - column softmax (stochasticity): every column of `A_k` is a probability
//!   vector;
//! - symmetrization: `A_k = ½(Â_k + Â_kᵀ)`;
//! - crispmax (orthogonality): an entrywise softmax across the K operators
//!   with inverse temperature `γ`, which for large `γ` leaves at most one
//!   operator active per entry.
//!
//! [`constrain`] composes them: the per-operator map (identity, symmetry or
//! stochasticity) runs first and crispmax runs last, so the orthogonality
//! produced by crispmax is what the convolution sees. [`constrain_vjp`]
//! walks the same chain backwards. None of the Jacobians is materialized;
//! every VJP is a closed-form loop over entries.

mod compose;
mod crispmax;
mod schedule;
mod stochastic;
mod symmetry;

pub use compose::{constrain, constrain_vjp, ConstraintCtx};
pub use crispmax::{check_epsilon_orthogonality, crispmax_forward, crispmax_vjp, Orthogonality};
pub use schedule::{anneal_gamma, gamma_lower_bound, CrispmaxConfig};
pub use stochastic::{stochastic_forward, stochastic_vjp};
pub use symmetry::{symmetry_forward, symmetry_vjp};

pub(crate) use crispmax::crispmax_masked;
pub(crate) use stochastic::column_softmax;

use crate::matrix::Matrix;

/// Gradient of the loss with respect to the free parameters `{Â_k}`.
#[derive(Clone, Debug, PartialEq)]
pub struct VjpGrad {
    pub mats: Vec<Matrix>,
}

impl VjpGrad {
    pub fn k(&self) -> usize {
        self.mats.len()
    }
}

/// Per-thread count of inner-loop multiply-adds performed by the crispmax
/// VJP. Lets tests assert the `O(K n²)` cost without timing anything.
pub mod counters {
    use std::cell::Cell;

    thread_local! {
        static CRISPMAX_VJP_OPS: Cell<u64> = const { Cell::new(0) };
    }

    pub fn reset() {
        CRISPMAX_VJP_OPS.with(|c| c.set(0));
    }

    pub fn crispmax_vjp_ops() -> u64 {
        CRISPMAX_VJP_OPS.with(Cell::get)
    }

    pub(crate) fn add_crispmax_vjp(n: u64) {
        CRISPMAX_VJP_OPS.with(|c| c.set(c.get() + n));
    }
}
