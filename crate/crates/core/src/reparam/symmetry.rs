use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// `½(Â + Âᵀ)`. Both triangles are computed from the same sum, so the result
/// is exactly symmetric.
pub fn symmetry_forward(a_hat: &Matrix) -> Result<Matrix> {
    half_sum_with_transpose("symmetry_forward", a_hat)
}

/// `½(g + gᵀ)`: ties the gradient of each symmetric pair of entries.
pub fn symmetry_vjp(grad_a: &Matrix) -> Result<Matrix> {
    half_sum_with_transpose("symmetry_vjp", grad_a)
}

fn half_sum_with_transpose(op: &'static str, m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::dim(op, m.shape(), (m.cols(), m.rows())));
    }
    let n = m.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = 0.5 * (m.get(i, j) + m.get(j, i));
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}
