//! Small dense linear-algebra helpers shared by the modules.

use nalgebra::{DMatrix, DVector};

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().min()
}

/// Solve `a x = b` by LU with partial pivoting followed by one step of
/// iterative refinement. Returns `None` when the factorisation is singular.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let lu = a.clone().lu();
    let mut x = lu.solve(b)?;
    if !x.iter().all(|v| v.is_finite()) {
        return None;
    }
    let residual = b - a * &x;
    if let Some(dx) = lu.solve(&residual) {
        if dx.iter().all(|v| v.is_finite()) {
            x += dx;
        }
    }
    Some(x)
}

/// Solve `a X = B` column-wise with the same LU factorisation.
pub fn solve_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let lu = a.clone().lu();
    let mut x = lu.solve(b)?;
    if !x.iter().all(|v| v.is_finite()) {
        return None;
    }
    let residual = b - a * &x;
    if let Some(dx) = lu.solve(&residual) {
        if dx.iter().all(|v| v.is_finite()) {
            x += dx;
        }
    }
    Some(x)
}

/// Moore-Penrose pseudo-inverse solution `a⁺ b`, discarding singular values
/// at or below `cutoff`.
pub fn pinv_solve(a: &DMatrix<f64>, b: &DVector<f64>, cutoff: f64) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let cutoff = cutoff.max(f64::MIN_POSITIVE);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let mut coeffs = u.transpose() * b;
    for (c, &s) in coeffs.iter_mut().zip(svd.singular_values.iter()) {
        *c = if s > cutoff { *c / s } else { 0.0 };
    }
    v_t.transpose() * coeffs
}

/// Neumaier-compensated running sum over matrices of a fixed shape.
#[derive(Debug, Clone)]
pub struct CompensatedMatrix {
    sum: DMatrix<f64>,
    comp: DMatrix<f64>,
}

impl CompensatedMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { sum: DMatrix::zeros(rows, cols), comp: DMatrix::zeros(rows, cols) }
    }

    pub fn add(&mut self, term: &DMatrix<f64>) {
        for ((s, c), &x) in self.sum.iter_mut().zip(self.comp.iter_mut()).zip(term.iter()) {
            let t = *s + x;
            if s.abs() >= x.abs() {
                *c += (*s - t) + x;
            } else {
                *c += (x - t) + *s;
            }
            *s = t;
        }
    }

    pub fn value(&self) -> DMatrix<f64> {
        &self.sum + &self.comp
    }

    /// Value of `self + term` without mutating the accumulator.
    pub fn value_with(&self, term: &DMatrix<f64>) -> DMatrix<f64> {
        let mut probe = self.clone();
        probe.add(term);
        probe.value()
    }
}
