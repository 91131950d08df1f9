//! Small dense-matrix utilities on top of nalgebra.

use crate::{CMatrix, C64};

/// Relative singular-value threshold below which a matrix counts as singular.
pub const NONSINGULAR_REL_TOL: f64 = 1e-10;

/// Relative threshold for numerical rank of data matrices.
pub const RANK_REL_TOL: f64 = 1e-8;

/// Singular values in descending order.
pub fn singular_values(m: &CMatrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    sv
}

/// Spectral summary of a matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spectrum {
    pub sigma_max: f64,
    /// Smallest of the `min(rows, cols)` singular values.
    pub sigma_min: f64,
    /// `sum ln(sigma_i)`; equals `ln|det|` for square matrices.
    pub log_abs_det: f64,
}

impl Spectrum {
    pub fn of(m: &CMatrix) -> Self {
        let sv = singular_values(m);
        let sigma_max = sv.first().copied().unwrap_or(0.0);
        let sigma_min = sv.last().copied().unwrap_or(0.0);
        let log_abs_det = sv.iter().map(|s| s.ln()).sum();
        Self { sigma_max, sigma_min, log_abs_det }
    }

    /// `sigma_min / sigma_max`, zero for the zero matrix.
    pub fn relative_sigma_min(&self) -> f64 {
        if self.sigma_max > 0.0 {
            self.sigma_min / self.sigma_max
        } else {
            0.0
        }
    }

    pub fn is_nonsingular(&self, rel_tol: f64) -> bool {
        self.sigma_max > 0.0 && self.sigma_min > rel_tol * self.sigma_max
    }
}

/// Number of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank(m: &CMatrix, rel_tol: f64) -> usize {
    let sv = singular_values(m);
    match sv.first() {
        Some(&top) if top > 0.0 => sv.iter().filter(|&&s| s > rel_tol * top).count(),
        _ => 0,
    }
}

/// Rows `rows` and columns `cols` of `m`, in the given order.
pub fn submatrix(m: &CMatrix, rows: &[usize], cols: &[usize]) -> CMatrix {
    CMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Largest entry modulus, zero for empty matrices.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z: &C64| acc.max(z.norm()))
}

/// `[0, n) \ set`, ascending.
pub fn complement(n: usize, set: &[usize]) -> Vec<usize> {
    let mut mark = vec![false; n];
    for &i in set {
        if i < n {
            mark[i] = true;
        }
    }
    (0..n).filter(|&i| !mark[i]).collect()
}
