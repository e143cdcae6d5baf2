//! Small dense-matrix helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Relative pivot threshold below which a factorisation is treated as singular.
pub const SINGULAR_PIVOT_RATIO: f64 = 1e-14;

/// Solves `lhs * X = rhs` with full pivoting; `None` when `lhs` is numerically singular.
pub fn solve(lhs: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if lhs.nrows() == 0 {
        return Some(DMatrix::zeros(0, rhs.ncols()));
    }
    let lu = lhs.clone().full_piv_lu();
    let u = lu.u();
    let diag = u.diagonal();
    let max = diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = diag.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if !(max > 0.0) || min / max < SINGULAR_PIVOT_RATIO {
        return None;
    }
    lu.solve(rhs)
}

/// Largest elementwise relative difference, with `floor` guarding near-zero entries.
pub fn max_rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let scale = a.amax().max(b.amax()).max(floor);
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(scale * 1e-12).max(floor))
        .fold(0.0, f64::max)
}

pub fn is_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn vec_is_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Row-major nested-array conversion used by the JSON documents.
pub mod rows {
    use nalgebra::DMatrix;

    pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        (0..m.nrows())
            .map(|i| m.row(i).iter().copied().collect())
            .collect()
    }

    pub fn from_rows(rows: &[Vec<f64>], ncols_if_empty: usize) -> Result<DMatrix<f64>, String> {
        let ncols = rows.first().map_or(ncols_if_empty, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err("ragged matrix rows".into());
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }
}
