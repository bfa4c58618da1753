use crate::scalar::Real;

/// Solves the row-major `dim × dim` system `a·x = b` by Gaussian elimination
/// with partial pivoting. Returns `None` when the matrix is numerically singular.
pub(crate) fn solve_dense<F: Real>(a: &mut [F], b: &mut [F], dim: usize) -> Option<Vec<F>> {
    for col in 0..dim {
        let pivot = (col..dim).max_by(|&i, &j| {
            a[i * dim + col]
                .abs()
                .partial_cmp(&a[j * dim + col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        let pv = a[pivot * dim + col];
        if !(pv.abs() > F::epsilon() * F::lit(1e-3)) {
            return None;
        }
        if pivot != col {
            for c in 0..dim {
                a.swap(pivot * dim + c, col * dim + c);
            }
            b.swap(pivot, col);
        }
        for r in col + 1..dim {
            let f = a[r * dim + col] / a[col * dim + col];
            if f == F::zero() {
                continue;
            }
            for c in col..dim {
                a[r * dim + c] = a[r * dim + c] - f * a[col * dim + c];
            }
            b[r] = b[r] - f * b[col];
        }
    }
    let mut x = vec![F::zero(); dim];
    for r in (0..dim).rev() {
        let mut acc = b[r];
        for c in r + 1..dim {
            acc = acc - a[r * dim + c] * x[c];
        }
        x[r] = acc / a[r * dim + r];
    }
    Some(x)
}
