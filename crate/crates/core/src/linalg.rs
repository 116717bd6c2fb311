//! Rank-revealing least-squares solves.

use crate::tensor::Matrix;

/// Singular values below `RANK_RTOL * sigma_max` are treated as zero.
pub const RANK_RTOL: f64 = 1e-10;

/// Result of a minimum-norm least-squares solve `min ||a x - b||_F`.
#[derive(Clone, Debug)]
pub struct LeastSquares {
    pub solution: Matrix,
    /// Numerical rank of `a` under [`RANK_RTOL`].
    pub rank: usize,
    /// Ratio of the smallest retained singular value to the largest.
    pub rank_margin: f64,
    /// `||a x - b||_F / ||b||_F`, or the absolute residual when `b` is zero.
    pub relative_residual: f64,
}

/// Minimum-norm least-squares solution via the SVD of `a`.
pub fn lstsq(a: &Matrix, b: &Matrix) -> LeastSquares {
    assert_eq!(a.nrows(), b.nrows(), "lstsq row mismatch");
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let sigma = &svd.singular_values;
    let smax = sigma.iter().cloned().fold(0.0, f64::max);
    let cutoff = RANK_RTOL * smax;
    let kept: Vec<usize> = (0..sigma.len())
        .filter(|&i| sigma[i] > cutoff && sigma[i] > 0.0)
        .collect();
    let rank = kept.len();
    let smin = kept.iter().map(|&i| sigma[i]).fold(f64::INFINITY, f64::min);

    let mut solution = Matrix::zeros(a.ncols(), b.ncols());
    for &i in &kept {
        // x += v_i (u_i^T b) / sigma_i
        let coeffs = u.column(i).transpose() * b / sigma[i];
        solution += v_t.row(i).transpose() * coeffs;
    }
    let residual = (a * &solution - b).norm();
    let bnorm = b.norm();
    LeastSquares {
        solution,
        rank,
        rank_margin: if rank == 0 { 0.0 } else { smin / smax },
        relative_residual: if bnorm > 0.0 { residual / bnorm } else { residual },
    }
}

/// Numerical rank of `a` under [`RANK_RTOL`].
pub fn numerical_rank(a: &Matrix) -> usize {
    let sigma = a.singular_values();
    let smax = sigma.iter().cloned().fold(0.0, f64::max);
    sigma.iter().filter(|&&s| s > RANK_RTOL * smax && s > 0.0).count()
}

/// Moore-Penrose pseudoinverse with the crate-wide rank tolerance.
pub fn pinv(a: &Matrix) -> Matrix {
    lstsq(a, &Matrix::identity(a.nrows(), a.nrows())).solution
}

/// The `k` leading left singular vectors of `a`, as columns; `None` when
/// `a` has fewer than `k` singular values.
pub fn leading_left(a: &Matrix, k: usize) -> Option<Matrix> {
    if k > a.nrows().min(a.ncols()) {
        return None;
    }
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    Some(Matrix::from_fn(a.nrows(), k, |i, j| u[(i, order[j])]))
}
