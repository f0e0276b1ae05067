use super::crispmax::crispmax_vjp_mats;
use super::{column_softmax, crispmax_masked, stochastic_vjp, symmetry_forward, symmetry_vjp, VjpGrad};
use crate::basis::{AdjacencyBasis, ConstraintKind, FreeBasis, Mask};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Forward values saved by [`constrain`] for the matching [`constrain_vjp`].
#[derive(Clone, Debug)]
pub struct ConstraintCtx {
    kind: ConstraintKind,
    gamma: f64,
    /// Output of the per-operator map (identity, symmetry or column softmax).
    premapped: Vec<Matrix>,
    /// Crispmax output; `None` when orthogonality is off.
    crisp: Option<Vec<Matrix>>,
    masks: Option<Vec<Mask>>,
}

impl ConstraintCtx {
    pub fn kind(&self) -> ConstraintKind {
        self.kind
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Per-operator intermediates, before crispmax.
    pub fn premapped(&self) -> &[Matrix] {
        &self.premapped
    }
}

/// Maps free parameters to constrained context matrices.
///
/// The per-operator map runs first (`Â_k` unchanged, `½(Â_k + Â_kᵀ)`, or a
/// column softmax), then crispmax across operators when orthogonality is
/// requested. Masked entries are zero after every stage and the softmaxes
/// only range over each mask's support.
pub fn constrain(
    basis: &FreeBasis,
    kind: ConstraintKind,
    gamma: f64,
) -> Result<(AdjacencyBasis, ConstraintCtx)> {
    kind.validate_for(basis.k())?;
    let masks = basis.masks();
    if kind.has_sym() {
        if let Some(bad) = masks.and_then(|m| m.iter().position(|mask| !mask.is_symmetric())) {
            return Err(Error::Constraint(format!(
                "symmetry requested but the mask of operator {bad} is not symmetric"
            )));
        }
    }

    let mut premapped = Vec::with_capacity(basis.k());
    for (op, a_hat) in basis.mats().iter().enumerate() {
        let mask = basis.mask(op);
        let mapped = if kind.has_stc() {
            column_softmax(a_hat, mask)
        } else {
            let mut m = a_hat.clone();
            if let Some(mask) = mask {
                mask.apply(&mut m);
            }
            if kind.has_sym() {
                symmetry_forward(&m)?
            } else {
                m
            }
        };
        premapped.push(mapped);
    }

    let (out, crisp) = if kind.has_orth() {
        let crisp = crispmax_masked(&premapped, masks, gamma)?;
        (crisp.clone(), Some(crisp))
    } else {
        (premapped.clone(), None)
    };

    let ctx = ConstraintCtx {
        kind,
        gamma,
        premapped,
        crisp,
        masks: masks.map(<[Mask]>::to_vec),
    };
    Ok((AdjacencyBasis::new(out, kind)?, ctx))
}

/// Pulls `∂E/∂{A_k}` back to `∂E/∂{Â_k}`: crispmax VJP first, then the
/// per-operator VJP, then the masks.
pub fn constrain_vjp(ctx: &ConstraintCtx, kind: ConstraintKind, grad_a: &[Matrix]) -> Result<VjpGrad> {
    if kind != ctx.kind {
        return Err(Error::State(format!(
            "constrain_vjp called with '{kind}' but the forward pass used '{}'",
            ctx.kind
        )));
    }
    if grad_a.len() != ctx.premapped.len() {
        return Err(Error::dim(
            "constrain_vjp operator count",
            (grad_a.len(), 0),
            (ctx.premapped.len(), 0),
        ));
    }

    let after_orth = match &ctx.crisp {
        Some(crisp) => crispmax_vjp_mats(crisp, ctx.gamma, grad_a)?.mats,
        None => grad_a.to_vec(),
    };

    let mut mats = Vec::with_capacity(after_orth.len());
    for (op, g) in after_orth.iter().enumerate() {
        let mut pulled = if kind.has_stc() {
            stochastic_vjp(&ctx.premapped[op], g)?
        } else if kind.has_sym() {
            symmetry_vjp(g)?
        } else {
            if g.shape() != ctx.premapped[op].shape() {
                return Err(Error::dim("constrain_vjp", ctx.premapped[op].shape(), g.shape()));
            }
            g.clone()
        };
        if let Some(masks) = &ctx.masks {
            masks[op].apply(&mut pulled);
        }
        mats.push(pulled);
    }
    Ok(VjpGrad { mats })
}
