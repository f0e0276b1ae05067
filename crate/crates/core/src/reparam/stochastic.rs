use crate::basis::Mask;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Column softmax: `A_ij = exp(Â_ij) / Σ_q exp(Â_qj)`.
///
/// Each column is shifted by its maximum before exponentiation.
pub fn stochastic_forward(a_hat: &Matrix) -> Result<Matrix> {
    if !a_hat.is_finite() {
        return Err(Error::NonFinite("stochastic_forward input".into()));
    }
    Ok(column_softmax(a_hat, None))
}

/// Softmax over the masked support of each column. Entries outside the mask
/// are 0; a column with empty support stays all-zero.
pub(crate) fn column_softmax(a_hat: &Matrix, mask: Option<&Mask>) -> Matrix {
    let (rows, cols) = a_hat.shape();
    let keep = |i: usize, j: usize| mask.is_none_or(|m| m.get(i, j));
    let mut out = Matrix::zeros(rows, cols);
    for j in 0..cols {
        let mut max = f64::NEG_INFINITY;
        for i in 0..rows {
            if keep(i, j) {
                max = max.max(a_hat.get(i, j));
            }
        }
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut total = 0.0;
        for i in 0..rows {
            if keep(i, j) {
                let e = (a_hat.get(i, j) - max).exp();
                out[(i, j)] = e;
                total += e;
            }
        }
        for i in 0..rows {
            out[(i, j)] /= total;
        }
    }
    out
}

/// VJP of the column softmax given its output `a`:
/// `∂E/∂Â_ij = A_ij · (g_ij − Σ_p g_pj A_pj)`.
pub fn stochastic_vjp(a: &Matrix, grad_a: &Matrix) -> Result<Matrix> {
    if a.shape() != grad_a.shape() {
        return Err(Error::dim("stochastic_vjp", a.shape(), grad_a.shape()));
    }
    let (rows, cols) = a.shape();
    let mut out = Matrix::zeros(rows, cols);
    for j in 0..cols {
        let mut dot = 0.0;
        for p in 0..rows {
            dot += grad_a.get(p, j) * a.get(p, j);
        }
        for i in 0..rows {
            out[(i, j)] = a.get(i, j) * (grad_a.get(i, j) - dot);
        }
    }
    Ok(out)
}
