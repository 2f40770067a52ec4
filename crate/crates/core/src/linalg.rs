//! Minimal dense linear algebra on row-major `Vec<f64>` buffers.
//!
//! Parameter dimensions here are tiny (a handful of covariates), so plain
//! LU with partial pivoting covers everything the estimators need.

use crate::error::{Error, Result};

/// Solve `a x = b` for square `a` (row-major, `dim x dim`). `a` and `b` are
/// left untouched. A zero-dimensional system returns an empty vector.
pub(crate) fn solve(a: &[f64], b: &[f64], dim: usize, what: &'static str) -> Result<Vec<f64>> {
    if dim == 0 {
        return Ok(Vec::new());
    }
    debug_assert_eq!(a.len(), dim * dim);
    debug_assert_eq!(b.len(), dim);
    let mut lu = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..dim {
        // partial pivot
        let mut piv = col;
        let mut best = lu[col * dim + col].abs();
        for row in (col + 1)..dim {
            let v = lu[row * dim + col].abs();
            if v > best {
                best = v;
                piv = row;
            }
        }
        if best < 1e-300 || !best.is_finite() {
            return Err(Error::Singular { what });
        }
        if piv != col {
            for j in 0..dim {
                lu.swap(col * dim + j, piv * dim + j);
            }
            x.swap(col, piv);
        }
        let d = lu[col * dim + col];
        for row in (col + 1)..dim {
            let f = lu[row * dim + col] / d;
            if f != 0.0 {
                for j in (col + 1)..dim {
                    lu[row * dim + j] -= f * lu[col * dim + j];
                }
                x[row] -= f * x[col];
            }
            lu[row * dim + col] = 0.0;
        }
    }
    for col in (0..dim).rev() {
        x[col] /= lu[col * dim + col];
        for row in 0..col {
            x[row] -= lu[row * dim + col] * x[col];
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular { what });
    }
    Ok(x)
}

/// Matrix inverse via `dim` solves against unit vectors.
pub(crate) fn invert(a: &[f64], dim: usize, what: &'static str) -> Result<Vec<f64>> {
    let mut inv = vec![0.0; dim * dim];
    let mut e = vec![0.0; dim];
    for col in 0..dim {
        e[col] = 1.0;
        let x = solve(a, &e, dim, what)?;
        e[col] = 0.0;
        for row in 0..dim {
            inv[row * dim + col] = x[row];
        }
    }
    Ok(inv)
}

/// `y = a x` for row-major `a` (`rows x cols`).
pub(crate) fn matvec(a: &[f64], x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows];
    for r in 0..rows {
        let row = &a[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for c in 0..cols {
            acc += row[c] * x[c];
        }
        y[r] = acc;
    }
    y
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rank-one update `m += w * v v^T` for row-major square `m`.
pub(crate) fn outer_add(m: &mut [f64], v: &[f64], w: f64) {
    let d = v.len();
    for i in 0..d {
        let wi = w * v[i];
        for j in 0..d {
            m[i * d + j] += wi * v[j];
        }
    }
}

pub(crate) fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let a = [4.0, 1.0, 1.0, 3.0];
        let b = [1.0, 2.0];
        let x = solve(&a, &b, 2, "test matrix").unwrap();
        assert!((4.0 * x[0] + x[1] - 1.0).abs() < 1e-12);
        assert!((x[0] + 3.0 * x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = [1.0, 2.0, 2.0, 4.0];
        let b = [1.0, 1.0];
        assert!(solve(&a, &b, 2, "test matrix").is_err());
    }

    #[test]
    fn inverse_round_trip() {
        let a = [2.0, 0.5, 0.0, 0.5, 3.0, 1.0, 0.0, 1.0, 1.5];
        let inv = invert(&a, 3, "test matrix").unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += a[i * 3 + k] * inv[k * 3 + j];
                }
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((acc - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_dimension_is_trivial() {
        assert!(solve(&[], &[], 0, "empty").unwrap().is_empty());
    }
}
