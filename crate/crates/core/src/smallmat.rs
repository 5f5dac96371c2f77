//! Dense storage and eigenvalue routines for the small symmetric matrices
//! that show up when symmetrizing Jacobians.  Everything here is sized for
//! state dimensions up to 16; no attempt is made to be clever about cache or
//! SIMD because the matrices are tiny and the call sites are dominated by
//! ODE right-hand-side work anyway.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Hard cap on the supported matrix order.
pub const MAX_ORDER: usize = 16;

/// Maximum entry-wise asymmetry accepted when interpreting a square matrix
/// as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Default relative tolerance for the Jacobi eigenvalue iteration.
pub const DEFAULT_EIG_TOL: f64 = 1e-12;

const MAX_JACOBI_SWEEPS: usize = 30;

/// Row-major dense square matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix {
    order: usize,
    entries: Vec<f64>,
}

impl SquareMatrix {
    pub fn new(order: usize, entries: Vec<f64>) -> Result<Self> {
        if order == 0 || order > MAX_ORDER {
            return Err(Error::InvalidInput(format!(
                "matrix order must be in 1..={MAX_ORDER}, got {order}"
            )));
        }
        if entries.len() != order * order {
            return Err(Error::InvalidInput(format!(
                "expected {} entries for order {order}, got {}",
                order * order,
                entries.len()
            )));
        }
        if entries.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidInput(
                "matrix entries must be finite".into(),
            ));
        }
        Ok(Self { order, entries })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let order = rows.len();
        let mut entries = Vec::with_capacity(order * order);
        for row in rows {
            if row.len() != order {
                return Err(Error::InvalidInput(
                    "rows must all have the same length as the row count".into(),
                ));
            }
            entries.extend_from_slice(row);
        }
        Self::new(order, entries)
    }

    pub fn zeros(order: usize) -> Self {
        Self {
            order,
            entries: vec![0.0; order * order],
        }
    }

    pub fn identity(order: usize) -> Self {
        let mut m = Self::zeros(order);
        for i in 0..order {
            m.set(i, i, 1.0);
        }
        m
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.order + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.order + j] = v;
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// y = A x
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.order);
        let mut y = vec![0.0; self.order];
        for i in 0..self.order {
            let mut acc = 0.0;
            for j in 0..self.order {
                acc += self.get(i, j) * x[j];
            }
            y[i] = acc;
        }
        y
    }

    /// C = A + s·B
    pub fn add_scaled(&self, s: f64, other: &SquareMatrix) -> Result<SquareMatrix> {
        if self.order != other.order {
            return Err(Error::InvalidInput("matrix order mismatch".into()));
        }
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a + s * b)
            .collect();
        SquareMatrix::new(self.order, entries)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.order {
            for j in (i + 1)..self.order {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// Symmetric matrix; symmetry is enforced at construction so downstream
/// eigenvalue code never has to re-check it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricMatrix {
    order: usize,
    entries: Vec<f64>,
}

impl SymmetricMatrix {
    /// Accepts a square matrix whose asymmetry is below [`SYMMETRY_TOL`] and
    /// stores the exactly-symmetric average (S + Sᵀ)/2.
    pub fn from_square(m: &SquareMatrix) -> Result<Self> {
        let asym = m.max_asymmetry();
        if asym >= SYMMETRY_TOL {
            return Err(Error::InvalidInput(format!(
                "matrix is not symmetric: max |S_ij - S_ji| = {asym:.3e}"
            )));
        }
        let mut entries = m.entries.clone();
        for i in 0..m.order {
            for j in (i + 1)..m.order {
                let avg = 0.5 * (m.get(i, j) + m.get(j, i));
                entries[i * m.order + j] = avg;
                entries[j * m.order + i] = avg;
            }
        }
        Ok(Self {
            order: m.order,
            entries,
        })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        Self::from_square(&SquareMatrix::from_rows(rows)?)
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.order + j]
    }

    pub fn as_square(&self) -> SquareMatrix {
        SquareMatrix {
            order: self.order,
            entries: self.entries.clone(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    /// Largest eigenvalue, using the default tolerance.
    pub fn lambda_max(&self) -> Result<f64> {
        Ok(*eig_sym(self, DEFAULT_EIG_TOL)?.last().unwrap())
    }

    /// Smallest eigenvalue, using the default tolerance.
    pub fn lambda_min(&self) -> Result<f64> {
        Ok(eig_sym(self, DEFAULT_EIG_TOL)?[0])
    }
}

/// Symmetric part in the doubled convention: Jᵀ + J (no ½ factor).
///
/// The doubled form is what the quadratic-form growth estimates use:
/// d/dt |v|² = vᵀ(Jᵀ + J)v for v̇ = Jv.  Entries are computed once per
/// unordered index pair so the result is exactly symmetric in floating point.
pub fn sym_part(j: &SquareMatrix) -> SymmetricMatrix {
    let n = j.order;
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for k in i..n {
            let v = j.get(i, k) + j.get(k, i);
            entries[i * n + k] = v;
            entries[k * n + i] = v;
        }
    }
    SymmetricMatrix { order: n, entries }
}

/// Eigenvalues of a symmetric matrix, sorted ascending.
///
/// Cyclic Jacobi iteration; terminates when the off-diagonal Frobenius mass
/// drops below `tol` times the Frobenius norm of the input, with a budget of
/// 30 sweeps.  For the tiny matrices this crate deals with, a handful of
/// sweeps is typical.
pub fn eig_sym(s: &SymmetricMatrix, tol: f64) -> Result<Vec<f64>> {
    Ok(jacobi(s, tol, false)?.0)
}

/// Full eigen-decomposition: `(values, vectors)` with eigenvalues ascending
/// and the corresponding eigenvectors as columns of the returned matrix.
pub fn eigendecomposition(s: &SymmetricMatrix, tol: f64) -> Result<(Vec<f64>, SquareMatrix)> {
    let (vals, vecs) = jacobi(s, tol, true)?;
    Ok((vals, vecs.unwrap()))
}

/// λ_min(S) − m: positive when S ⪰ mI with margin, negative on violation.
pub fn definiteness_shift(s: &SymmetricMatrix, m: f64) -> Result<f64> {
    if !m.is_finite() {
        return Err(Error::InvalidInput("shift m must be finite".into()));
    }
    Ok(s.lambda_min()? - m)
}

fn off_diagonal_norm(a: &[f64], n: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += a[i * n + j] * a[i * n + j];
            }
        }
    }
    acc.sqrt()
}

fn jacobi(
    s: &SymmetricMatrix,
    tol: f64,
    want_vectors: bool,
) -> Result<(Vec<f64>, Option<SquareMatrix>)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput("eigenvalue tolerance must be > 0".into()));
    }
    let n = s.order;
    let mut a = s.entries.clone();
    let mut v = want_vectors.then(|| SquareMatrix::identity(n));
    let threshold = tol * s.frobenius_norm();

    let mut converged = false;
    for _sweep in 0..MAX_JACOBI_SWEEPS {
        if off_diagonal_norm(&a, n) <= threshold {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                // Stable tangent of the rotation angle.
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * c;

                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    if k != p && k != q {
                        let akp = a[k * n + p];
                        let akq = a[k * n + q];
                        a[k * n + p] = c * akp - sn * akq;
                        a[p * n + k] = a[k * n + p];
                        a[k * n + q] = sn * akp + c * akq;
                        a[q * n + k] = a[k * n + q];
                    }
                }
                if let Some(vm) = v.as_mut() {
                    for k in 0..n {
                        let vkp = vm.get(k, p);
                        let vkq = vm.get(k, q);
                        vm.set(k, p, c * vkp - sn * vkq);
                        vm.set(k, q, sn * vkp + c * vkq);
                    }
                }
            }
        }
    }
    if !converged && off_diagonal_norm(&a, n) > threshold {
        return Err(Error::NumericFailure(format!(
            "Jacobi eigenvalue iteration did not converge in {MAX_JACOBI_SWEEPS} sweeps; \
             off-diagonal residual {:.3e}",
            off_diagonal_norm(&a, n)
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].partial_cmp(&a[j * n + j]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = v.map(|vm| {
        let mut sorted = SquareMatrix::zeros(n);
        for (col, &src) in order.iter().enumerate() {
            for row in 0..n {
                sorted.set(row, col, vm.get(row, src));
            }
        }
        sorted
    });
    Ok((values, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sym_part_of_rotation_generator_vanishes() {
        let j = SquareMatrix::from_rows(&[&[0.0, -1.0], &[1.0, 0.0]]).unwrap();
        let s = sym_part(&j);
        for i in 0..2 {
            for k in 0..2 {
                assert_eq!(s.get(i, k), 0.0);
            }
        }
    }

    #[test]
    fn sym_part_doubles_diagonal() {
        // Shear-like Jacobian: off-diagonal parts cancel, diagonal doubles.
        let j = SquareMatrix::from_rows(&[&[1.0, -1.0], &[1.0, -1.0]]).unwrap();
        let s = sym_part(&j);
        assert_eq!(s.get(0, 0), 2.0);
        assert_eq!(s.get(0, 1), 0.0);
        assert_eq!(s.get(1, 0), 0.0);
        assert_eq!(s.get(1, 1), -2.0);
    }

    #[test]
    fn sym_part_scalar() {
        let j = SquareMatrix::from_rows(&[&[3.0]]).unwrap();
        assert_eq!(sym_part(&j).get(0, 0), 6.0);
    }

    #[test]
    fn eig_of_diagonal_is_sorted_diagonal() {
        let s = SymmetricMatrix::from_rows(&[&[2.0, 0.0], &[0.0, -2.0]]).unwrap();
        let vals = eig_sym(&s, DEFAULT_EIG_TOL).unwrap();
        assert_eq!(vals, vec![-2.0, 2.0]);
    }

    #[test]
    fn eig_two_by_two_analytic() {
        // Characteristic polynomial (2-λ)² - 1 → λ ∈ {1, 3}.
        let s = SymmetricMatrix::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]).unwrap();
        let vals = eig_sym(&s, DEFAULT_EIG_TOL).unwrap();
        assert_abs_diff_eq!(vals[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(vals[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn eig_scalar_and_zero() {
        let s = SymmetricMatrix::from_rows(&[&[0.0]]).unwrap();
        assert_eq!(eig_sym(&s, DEFAULT_EIG_TOL).unwrap(), vec![0.0]);
        let s = SymmetricMatrix::from_rows(&[&[-7.5]]).unwrap();
        assert_eq!(eig_sym(&s, DEFAULT_EIG_TOL).unwrap(), vec![-7.5]);
    }

    #[test]
    fn definiteness_shift_reports_margin() {
        let s = SymmetricMatrix::from_rows(&[&[2.0, 0.0], &[0.0, 5.0]]).unwrap();
        assert_abs_diff_eq!(definiteness_shift(&s, 1.0).unwrap(), 1.0, epsilon = 1e-12);
        let s = SymmetricMatrix::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]).unwrap();
        assert_abs_diff_eq!(definiteness_shift(&s, 1.0).unwrap(), 0.0, epsilon = 1e-12);
        let s = SymmetricMatrix::from_rows(&[&[-1.0]]).unwrap();
        assert_abs_diff_eq!(definiteness_shift(&s, 1.0).unwrap(), -2.0, epsilon = 1e-12);
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let j = SquareMatrix::from_rows(&[&[1.0, 0.5], &[0.4999, 1.0]]).unwrap();
        assert!(matches!(
            SymmetricMatrix::from_square(&j),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn tiny_asymmetry_is_averaged_away() {
        let eps = 1e-13;
        let j = SquareMatrix::from_rows(&[&[1.0, 0.5 + eps], &[0.5, 1.0]]).unwrap();
        let s = SymmetricMatrix::from_square(&j).unwrap();
        assert_eq!(s.get(0, 1), s.get(1, 0));
        assert_abs_diff_eq!(s.get(0, 1), 0.5 + eps / 2.0, epsilon = 1e-16);
    }

    #[test]
    fn non_finite_entries_are_rejected() {
        assert!(SquareMatrix::new(1, vec![f64::NAN]).is_err());
        assert!(SquareMatrix::new(2, vec![1.0, f64::INFINITY, 0.0, 1.0]).is_err());
    }

    #[test]
    fn oversized_order_is_rejected() {
        assert!(SquareMatrix::new(17, vec![0.0; 17 * 17]).is_err());
    }

    #[test]
    fn eigendecomposition_reconstructs() {
        let s = SymmetricMatrix::from_rows(&[
            &[4.0, 1.0, -0.5],
            &[1.0, 3.0, 0.25],
            &[-0.5, 0.25, -2.0],
        ])
        .unwrap();
        let (vals, vecs) = eigendecomposition(&s, DEFAULT_EIG_TOL).unwrap();
        let n = 3;
        // Rebuild V Λ Vᵀ and compare.
        let mut rebuilt = SquareMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += vecs.get(i, k) * vals[k] * vecs.get(j, k);
                }
                rebuilt.set(i, j, acc);
            }
        }
        let scale = s.frobenius_norm();
        for i in 0..n {
            for j in 0..n {
                assert_abs_diff_eq!(rebuilt.get(i, j), s.get(i, j), epsilon = 1e-8 * scale);
            }
        }
    }
}
