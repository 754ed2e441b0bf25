//! Small dense linear algebra on row-major `n×n` slices.

/// LU factorisation with partial pivoting, `P·A = L·U`.
///
/// `lu` stores the unit-lower factor below the diagonal and `U` on and above it.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    sign: f64,
}

impl Lu {
    pub fn factor(a: &[f64], n: usize) -> Self {
        assert_eq!(a.len(), n * n, "LU of a non-square buffer");
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for k in 0..n {
            let mut pivot = k;
            let mut best = lu[k * n + k].abs();
            for r in (k + 1)..n {
                let v = lu[r * n + k].abs();
                if v > best {
                    best = v;
                    pivot = r;
                }
            }
            if pivot != k {
                for c in 0..n {
                    lu.swap(k * n + c, pivot * n + c);
                }
                perm.swap(k, pivot);
                sign = -sign;
            }
            let diag = lu[k * n + k];
            if diag == 0.0 {
                continue;
            }
            for r in (k + 1)..n {
                let factor = lu[r * n + k] / diag;
                lu[r * n + k] = factor;
                if factor != 0.0 {
                    for c in (k + 1)..n {
                        lu[r * n + c] -= factor * lu[k * n + c];
                    }
                }
            }
        }
        Lu { n, lu, perm, sign }
    }

    pub fn determinant(&self) -> f64 {
        let n = self.n;
        (0..n).fold(self.sign, |acc, i| acc * self.lu[i * n + i])
    }

    /// Smallest absolute pivot; zero for an exactly singular matrix.
    pub fn min_pivot(&self) -> f64 {
        let n = self.n;
        (0..n)
            .map(|i| self.lu[i * n + i].abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Solves `A·x = b` in place.
    fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let permuted: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        b.copy_from_slice(&permuted);
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.lu[i * n + k] * b[k];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= self.lu[i * n + k] * b[k];
            }
            b[i] = s / self.lu[i * n + i];
        }
    }

    /// Inverse, or `None` when a pivot is exactly zero.
    pub fn inverse(&self) -> Option<Vec<f64>> {
        let n = self.n;
        if self.min_pivot() == 0.0 {
            return None;
        }
        let mut inv = vec![0.0; n * n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            col.iter_mut().for_each(|v| *v = 0.0);
            col[j] = 1.0;
            self.solve_in_place(&mut col);
            for i in 0..n {
                inv[i * n + j] = col[i];
            }
        }
        Some(inv)
    }
}

pub fn determinant(a: &[f64], n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    Lu::factor(a, n).determinant()
}

/// Pivot magnitude below which the determinant gradient switches to `A + εI`.
pub const SINGULAR_PIVOT: f64 = 1e-10;
/// Diagonal shift used for numerically singular matrices.
pub const DET_RIDGE: f64 = 1e-8;

/// Gradient of `det(A)` with respect to `A`: `det(A)·A⁻ᵀ`.
///
/// Numerically singular inputs are shifted to `A + εI` first; the exact
/// subgradient there is unbounded.
pub fn determinant_gradient(a: &[f64], n: usize) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let lu = Lu::factor(a, n);
    let (det, inv) = match lu.inverse() {
        Some(inv) if lu.min_pivot() >= SINGULAR_PIVOT => (lu.determinant(), inv),
        _ => {
            let mut shifted = a.to_vec();
            for i in 0..n {
                shifted[i * n + i] += DET_RIDGE;
            }
            let lu = Lu::factor(&shifted, n);
            match lu.inverse() {
                Some(inv) => (lu.determinant(), inv),
                None => return vec![0.0; n * n],
            }
        }
    };
    let mut grad = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            grad[i * n + j] = det * inv[j * n + i];
        }
    }
    grad
}
