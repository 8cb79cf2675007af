//! Small dense solves for the kriging systems.

/// Square matrix in row-major storage.
#[derive(Debug, Clone)]
pub(crate) struct SquareMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> SquareMatrix {
        SquareMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }
}

/// LU factorization with partial pivoting. Returns `Err(rcond)` — the ratio
/// of the failing pivot to the largest one seen — when a pivot underflows
/// the singularity threshold.
fn lu_solve(mut a: SquareMatrix, mut b: Vec<f64>) -> Result<Vec<f64>, f64> {
    let n = a.n;
    debug_assert_eq!(b.len(), n);
    let scale = a
        .data
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
        .max(1e-300);
    let tol = 1e-13 * scale;

    let mut max_pivot = 0.0_f64;
    for k in 0..n {
        let mut pivot_row = k;
        let mut pivot_val = a.get(k, k).abs();
        for i in (k + 1)..n {
            let v = a.get(i, k).abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = i;
            }
        }
        if pivot_val < tol {
            return Err(if max_pivot > 0.0 { pivot_val / max_pivot } else { 0.0 });
        }
        if pivot_row != k {
            for j in 0..n {
                let tmp = a.get(k, j);
                a.set(k, j, a.get(pivot_row, j));
                a.set(pivot_row, j, tmp);
            }
            b.swap(k, pivot_row);
        }
        max_pivot = max_pivot.max(pivot_val);
        let pivot = a.get(k, k);
        for i in (k + 1)..n {
            let factor = a.get(i, k) / pivot;
            if factor == 0.0 {
                continue;
            }
            a.set(i, k, 0.0);
            for j in (k + 1)..n {
                let v = a.get(i, j) - factor * a.get(k, j);
                a.set(i, j, v);
            }
            b[i] -= factor * b[k];
        }
    }

    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = b[i];
        for (j, xj) in x.iter().enumerate().skip(i + 1) {
            sum -= a.get(i, j) * xj;
        }
        x[i] = sum / a.get(i, i);
    }
    Ok(x)
}

/// Solve `A·x = b`, retrying once with a small diagonal regularization if the
/// factorization finds a negligible pivot. The second failure is reported
/// with the conditioning estimate.
pub(crate) fn solve_with_regularization(a: &SquareMatrix, b: &[f64]) -> Result<Vec<f64>, f64> {
    match lu_solve(a.clone(), b.to_vec()) {
        Ok(out) => Ok(out),
        Err(_) => {
            let mut regularized = a.clone();
            for i in 0..a.n {
                let v = regularized.get(i, i) + 1e-10;
                regularized.set(i, i, v);
            }
            lu_solve(regularized, b.to_vec())
        }
    }
}
