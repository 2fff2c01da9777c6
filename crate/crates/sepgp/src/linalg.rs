//! Small dense-algebra helpers shared across modules.
//!
//! The parallel products split work along fixed 1024-wide chunks and reduce
//! in chunk order, so results are identical for every thread count.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

// Fixed chunk width for parallel column blocks. Column products are
// independent, so results do not depend on the chunking; weighted sums
// reduce in chunk order, so they are identical for every thread count.
const CHUNK: usize = 256;

/// ln det from a Cholesky factor.
pub fn chol_ln_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|v| v.ln())
        .sum::<f64>()
}

/// Force exact symmetry by averaging with the transpose.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for r in 0..n {
        for c in 0..r {
            let v = 0.5 * (m[(r, c)] + m[(c, r)]);
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
    }
}

/// Solve K X = B from K's Cholesky factor, in parallel column chunks.
pub fn chol_solve_cols(chol: &Cholesky<f64, Dyn>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    let ncols = rhs.ncols();
    if ncols <= CHUNK {
        return chol.solve(rhs);
    }
    let parts: Vec<(usize, DMatrix<f64>)> = (0..ncols)
        .step_by(CHUNK)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            let end = (start + CHUNK).min(ncols);
            let block = rhs.columns(start, end - start).into_owned();
            (start, chol.solve(&block))
        })
        .collect();
    let mut out = DMatrix::zeros(rhs.nrows(), ncols);
    for (start, block) in parts {
        out.columns_mut(start, block.ncols()).copy_from(&block);
    }
    out
}

/// a (m×m) · b (m×n) with column-chunk parallelism.
pub fn par_mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = b.ncols();
    if n <= CHUNK {
        return a * b;
    }
    let blocks: Vec<(usize, DMatrix<f64>)> = (0..n)
        .step_by(CHUNK)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            let end = (start + CHUNK).min(n);
            (start, a * b.columns(start, end - start))
        })
        .collect();
    let mut out = DMatrix::zeros(a.nrows(), n);
    for (start, block) in blocks {
        out.columns_mut(start, block.ncols()).copy_from(&block);
    }
    out
}

/// Σ_i w_i · u_i u_iᵀ over the columns u_i of `u` — the natural-parameter
/// precision aggregate. Chunked over columns, reduced in fixed order.
pub fn weighted_gram(u: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let (m, n) = (u.nrows(), u.ncols());
    let partials: Vec<DMatrix<f64>> = (0..n)
        .step_by(CHUNK)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            let end = (start + CHUNK).min(n);
            let cols = u.columns(start, end - start);
            let mut scaled = cols.into_owned();
            for (k, i) in (start..end).enumerate() {
                scaled.column_mut(k).scale_mut(w[i]);
            }
            &scaled * cols.transpose()
        })
        .collect();
    let mut acc = DMatrix::zeros(m, m);
    for p in partials {
        acc += p;
    }
    acc
}

/// Σ_i w_i · u_i over the columns of `u`.
pub fn weighted_colsum(u: &DMatrix<f64>, w: &DVector<f64>) -> DVector<f64> {
    u * w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_gram_matches_naive() {
        let u = DMatrix::from_fn(3, 7, |r, c| ((r * 7 + c) as f64 * 0.37).sin());
        let w = DVector::from_fn(7, |i, _| 0.5 - (i as f64 * 0.21).cos());
        let fast = weighted_gram(&u, &w);
        let mut naive = DMatrix::zeros(3, 3);
        for i in 0..7 {
            let col = u.column(i);
            naive += w[i] * col * col.transpose();
        }
        assert!((fast - naive).abs().max() < 1e-13);
    }
}
