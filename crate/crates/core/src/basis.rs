//! Operator sets: the free parameters `{Â_k}` and the constrained context
//! matrices `{A_k}` derived from them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::reparam::CrispmaxConfig;

/// Boolean support pattern of one `n × n` operator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    n: usize,
    keep: Vec<bool>,
}

impl Mask {
    pub fn full(n: usize) -> Self {
        Self {
            n,
            keep: vec![true; n * n],
        }
    }

    /// Support of a matrix: entries that are nonzero.
    pub fn support(m: &Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::dim("mask", m.shape(), m.shape()));
        }
        Ok(Self {
            n: m.rows(),
            keep: m.as_slice().iter().map(|&v| v != 0.0).collect(),
        })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut keep = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                keep.push(f(i, j));
            }
        }
        Self { n, keep }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.keep[i * self.n + j]
    }

    #[inline]
    pub fn at(&self, flat: usize) -> bool {
        self.keep[flat]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Union with the transpose.
    pub fn symmetrized(&self) -> Self {
        Self::from_fn(self.n, |i, j| self.get(i, j) || self.get(j, i))
    }

    pub fn count(&self) -> usize {
        self.keep.iter().filter(|&&b| b).count()
    }

    /// Zeroes every entry outside the support.
    pub fn apply(&self, m: &mut Matrix) {
        for (v, &keep) in m.as_mut_slice().iter_mut().zip(&self.keep) {
            if !keep {
                *v = 0.0;
            }
        }
    }
}

/// The unconstrained optimization variables `{Â_k}`: K square matrices of
/// equal size plus an optional support mask per operator.
#[derive(Clone, Debug, PartialEq)]
pub struct FreeBasis {
    mats: Vec<Matrix>,
    masks: Option<Vec<Mask>>,
}

impl FreeBasis {
    pub fn new(mats: Vec<Matrix>) -> Result<Self> {
        Self::build(mats, None)
    }

    /// Builds a masked basis. Entries outside each mask are forced to zero.
    pub fn with_masks(mats: Vec<Matrix>, masks: Vec<Mask>) -> Result<Self> {
        Self::build(mats, Some(masks))
    }

    fn build(mut mats: Vec<Matrix>, masks: Option<Vec<Mask>>) -> Result<Self> {
        let n = check_operator_shapes(&mats)?;
        if let Some(masks) = &masks {
            if masks.len() != mats.len() {
                return Err(Error::dim("mask count", (masks.len(), 0), (mats.len(), 0)));
            }
            for (m, mask) in mats.iter_mut().zip(masks) {
                if mask.n() != n {
                    return Err(Error::dim("mask", (mask.n(), mask.n()), (n, n)));
                }
                mask.apply(m);
            }
        }
        Ok(Self { mats, masks })
    }

    /// Operator count K.
    pub fn k(&self) -> usize {
        self.mats.len()
    }

    /// Node count n.
    pub fn n(&self) -> usize {
        self.mats[0].rows()
    }

    pub fn mats(&self) -> &[Matrix] {
        &self.mats
    }

    pub(crate) fn mats_mut(&mut self) -> &mut [Matrix] {
        &mut self.mats
    }

    pub fn masks(&self) -> Option<&[Mask]> {
        self.masks.as_deref()
    }

    pub fn mask(&self, k: usize) -> Option<&Mask> {
        self.masks.as_ref().map(|m| &m[k])
    }
}

fn check_operator_shapes(mats: &[Matrix]) -> Result<usize> {
    let first = mats
        .first()
        .ok_or_else(|| Error::Input("an operator basis needs at least one matrix".into()))?;
    if !first.is_square() {
        return Err(Error::dim("operator", first.shape(), first.shape()));
    }
    for m in mats {
        if m.shape() != first.shape() {
            return Err(Error::dim("operator", m.shape(), first.shape()));
        }
    }
    Ok(first.rows())
}

/// Constrained context matrices `{A_k}` consumed by the convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyBasis {
    mats: Vec<Matrix>,
    tag: ConstraintKind,
}

impl AdjacencyBasis {
    pub fn new(mats: Vec<Matrix>, tag: ConstraintKind) -> Result<Self> {
        check_operator_shapes(&mats)?;
        Ok(Self { mats, tag })
    }

    pub fn k(&self) -> usize {
        self.mats.len()
    }

    pub fn n(&self) -> usize {
        self.mats[0].rows()
    }

    pub fn mats(&self) -> &[Matrix] {
        &self.mats
    }

    pub fn into_mats(self) -> Vec<Matrix> {
        self.mats
    }

    /// Which constraint combination produced these matrices.
    pub fn constraint_tag(&self) -> ConstraintKind {
        self.tag
    }

    pub fn with_tag(mut self, tag: ConstraintKind) -> Self {
        self.tag = tag;
        self
    }
}

/// The six constraint combinations that can be learned. Symmetry and
/// stochasticity are mutually exclusive, so `sym+stc` has no variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConstraintKind {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "sym")]
    Sym,
    #[serde(rename = "orth")]
    Orth,
    #[serde(rename = "stc")]
    Stc,
    #[serde(rename = "sym+orth")]
    SymOrth,
    #[serde(rename = "orth+stc")]
    OrthStc,
}

impl ConstraintKind {
    pub const ALL: [ConstraintKind; 6] = [
        ConstraintKind::None,
        ConstraintKind::Sym,
        ConstraintKind::Orth,
        ConstraintKind::Stc,
        ConstraintKind::SymOrth,
        ConstraintKind::OrthStc,
    ];

    pub fn has_sym(self) -> bool {
        matches!(self, ConstraintKind::Sym | ConstraintKind::SymOrth)
    }

    pub fn has_orth(self) -> bool {
        matches!(
            self,
            ConstraintKind::Orth | ConstraintKind::SymOrth | ConstraintKind::OrthStc
        )
    }

    pub fn has_stc(self) -> bool {
        matches!(self, ConstraintKind::Stc | ConstraintKind::OrthStc)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConstraintKind::None => "none",
            ConstraintKind::Sym => "sym",
            ConstraintKind::Orth => "orth",
            ConstraintKind::Stc => "stc",
            ConstraintKind::SymOrth => "sym+orth",
            ConstraintKind::OrthStc => "orth+stc",
        }
    }

    /// Orthogonality needs at least two operators.
    pub fn validate_for(self, k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::Constraint("operator count K must be at least 1".into()));
        }
        if self.has_orth() && k < 2 {
            return Err(Error::Constraint(
                "orthogonality not applicable when K=1".into(),
            ));
        }
        Ok(())
    }
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConstraintKind {
    type Err = Error;

    /// Accepts the `+`-joined names in any order, e.g. `stc+orth`.
    fn from_str(s: &str) -> Result<Self> {
        let mut sym = false;
        let mut orth = false;
        let mut stc = false;
        let trimmed = s.trim().to_ascii_lowercase();
        if trimmed == "none" {
            return Ok(ConstraintKind::None);
        }
        for part in trimmed.split('+') {
            match part.trim() {
                "sym" => sym = true,
                "orth" => orth = true,
                "stc" => stc = true,
                other => {
                    return Err(Error::Constraint(format!(
                        "unknown constraint '{other}' in '{s}'"
                    )))
                }
            }
        }
        match (sym, orth, stc) {
            (true, _, true) => Err(Error::Constraint(
                "symmetry cannot be combined with stochasticity".into(),
            )),
            (true, false, false) => Ok(ConstraintKind::Sym),
            (false, true, false) => Ok(ConstraintKind::Orth),
            (false, false, true) => Ok(ConstraintKind::Stc),
            (true, true, false) => Ok(ConstraintKind::SymOrth),
            (false, true, true) => Ok(ConstraintKind::OrthStc),
            (false, false, false) => Err(Error::Constraint(format!("empty constraint '{s}'"))),
        }
    }
}

/// A constraint combination together with its crispmax settings and the
/// perturbation applied to the free parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSpec {
    pub kind: ConstraintKind,
    pub crispmax: CrispmaxConfig,
    pub noise_std: f64,
}

impl ConstraintSpec {
    pub fn new(kind: ConstraintKind, crispmax: CrispmaxConfig, noise_std: f64) -> Result<Self> {
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std must be >= 0, got {noise_std}")));
        }
        Ok(Self {
            kind,
            crispmax,
            noise_std,
        })
    }

    pub fn validate_for(&self, k: usize) -> Result<()> {
        self.kind.validate_for(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_kinds_and_rejects_sym_stc() {
        for kind in ConstraintKind::ALL {
            assert_eq!(kind.as_str().parse::<ConstraintKind>().unwrap(), kind);
        }
        assert_eq!("stc+orth".parse::<ConstraintKind>().unwrap(), ConstraintKind::OrthStc);
        assert!(matches!(
            "sym+stc".parse::<ConstraintKind>(),
            Err(Error::Constraint(_))
        ));
        assert!(matches!(
            "sym+orth+stc".parse::<ConstraintKind>(),
            Err(Error::Constraint(_))
        ));
        assert!("bogus".parse::<ConstraintKind>().is_err());
    }

    #[test]
    fn orth_requires_two_operators() {
        assert!(ConstraintKind::Orth.validate_for(1).is_err());
        assert!(ConstraintKind::OrthStc.validate_for(2).is_ok());
        assert!(ConstraintKind::Stc.validate_for(1).is_ok());
    }

    #[test]
    fn masked_basis_zeroes_outside_support() {
        let m = Matrix::filled(2, 2, 3.0);
        let mask = Mask::from_fn(2, |i, j| i == j);
        let basis = FreeBasis::with_masks(vec![m], vec![mask]).unwrap();
        assert_eq!(basis.mats()[0].as_slice(), &[3.0, 0.0, 0.0, 3.0]);
    }

    #[test]
    fn rejects_ragged_operators() {
        let err = FreeBasis::new(vec![Matrix::zeros(2, 2), Matrix::zeros(3, 3)]);
        assert!(matches!(err, Err(Error::Dimension { .. })));
        assert!(FreeBasis::new(vec![Matrix::zeros(2, 3)]).is_err());
        assert!(FreeBasis::new(vec![]).is_err());
    }
}
