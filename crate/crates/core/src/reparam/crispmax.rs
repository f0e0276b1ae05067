use super::{counters, VjpGrad};
use crate::basis::{AdjacencyBasis, ConstraintKind, FreeBasis, Mask};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Entrywise softmax across operators:
/// `A_k = exp(γ Â_k) ⊘ Σ_r exp(γ Â_r)`.
///
/// Operators whose mask excludes an entry take no part in that entry's
/// softmax and receive 0 there.
pub fn crispmax_forward(basis: &FreeBasis, gamma: f64) -> Result<AdjacencyBasis> {
    let mats = crispmax_masked(basis.mats(), basis.masks(), gamma)?;
    AdjacencyBasis::new(mats, ConstraintKind::Orth)
}

pub(crate) fn crispmax_masked(
    mats: &[Matrix],
    masks: Option<&[Mask]>,
    gamma: f64,
) -> Result<Vec<Matrix>> {
    let k = mats.len();
    if k < 2 {
        return Err(Error::Constraint(
            "orthogonality not applicable when K=1".into(),
        ));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Domain(format!("crispmax gamma must be > 0, got {gamma}")));
    }
    if mats.iter().any(|m| !m.is_finite()) {
        return Err(Error::NonFinite("crispmax input".into()));
    }
    let (rows, cols) = mats[0].shape();
    let keep = |op: usize, flat: usize| masks.is_none_or(|m| m[op].at(flat));
    let mut out: Vec<Matrix> = (0..k).map(|_| Matrix::zeros(rows, cols)).collect();
    let mut scratch = vec![0.0; k];
    for flat in 0..rows * cols {
        let mut max = f64::NEG_INFINITY;
        for (op, m) in mats.iter().enumerate() {
            if keep(op, flat) {
                max = max.max(gamma * m.as_slice()[flat]);
            }
        }
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut total = 0.0;
        for (op, m) in mats.iter().enumerate() {
            scratch[op] = if keep(op, flat) {
                (gamma * m.as_slice()[flat] - max).exp()
            } else {
                0.0
            };
            total += scratch[op];
        }
        for (op, o) in out.iter_mut().enumerate() {
            o.as_mut_slice()[flat] = scratch[op] / total;
        }
    }
    Ok(out)
}

/// VJP of crispmax given its output:
/// `∂E/∂Â_k,ij = γ A_k,ij (g_k,ij − Σ_k' g_k',ij A_k',ij)`.
///
/// Only the K entries sharing a position interact, so one pass over the
/// `K n²` entries suffices.
pub fn crispmax_vjp(out: &AdjacencyBasis, gamma: f64, grad_a: &[Matrix]) -> Result<VjpGrad> {
    crispmax_vjp_mats(out.mats(), gamma, grad_a)
}

pub(crate) fn crispmax_vjp_mats(out: &[Matrix], gamma: f64, grad_a: &[Matrix]) -> Result<VjpGrad> {
    if out.len() != grad_a.len() {
        return Err(Error::dim(
            "crispmax_vjp operator count",
            (out.len(), 0),
            (grad_a.len(), 0),
        ));
    }
    for g in grad_a {
        if g.shape() != out[0].shape() {
            return Err(Error::dim("crispmax_vjp", out[0].shape(), g.shape()));
        }
    }
    let k = out.len();
    let (rows, cols) = out[0].shape();
    let mut grads: Vec<Matrix> = (0..k).map(|_| Matrix::zeros(rows, cols)).collect();
    for flat in 0..rows * cols {
        let mut dot = 0.0;
        for (a, g) in out.iter().zip(grad_a) {
            dot += g.as_slice()[flat] * a.as_slice()[flat];
        }
        for op in 0..k {
            let a = out[op].as_slice()[flat];
            grads[op].as_mut_slice()[flat] = gamma * a * (grad_a[op].as_slice()[flat] - dot);
        }
    }
    counters::add_crispmax_vjp((2 * k * rows * cols) as u64);
    Ok(VjpGrad { mats: grads })
}

/// Largest entry of `A_k ⊙ A_k'` over all operator pairs, and whether it
/// stays within `eps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Orthogonality {
    pub max_overlap: f64,
    pub ok: bool,
}

pub fn check_epsilon_orthogonality(basis: &AdjacencyBasis, eps: f64) -> Result<Orthogonality> {
    let mats = basis.mats();
    if mats.len() < 2 {
        return Err(Error::Constraint(
            "orthogonality not applicable when K=1".into(),
        ));
    }
    let mut max_overlap: f64 = 0.0;
    for a in 0..mats.len() {
        for b in a + 1..mats.len() {
            for (x, y) in mats[a].as_slice().iter().zip(mats[b].as_slice()) {
                max_overlap = max_overlap.max(x * y);
            }
        }
    }
    Ok(Orthogonality {
        max_overlap,
        ok: max_overlap <= eps,
    })
}
