//! Minimum-norm least squares through a truncated singular value decomposition.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};

/// Coefficient matrix, right-hand side and one label per unknown.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub coefficients: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub labels: Vec<String>,
}

impl LinearSystem {
    pub fn new(coefficients: DMatrix<f64>, rhs: DVector<f64>, labels: Vec<String>) -> Result<Self> {
        let (r, c) = coefficients.shape();
        if r == 0 || c == 0 {
            return Err(Error::Degenerate("empty coefficient matrix".into()));
        }
        if rhs.len() != r || labels.len() != c {
            return Err(Error::Invalid(format!(
                "system shape {r}x{c} does not match rhs {} / labels {}",
                rhs.len(),
                labels.len()
            )));
        }
        Ok(LinearSystem { coefficients, rhs, labels })
    }

    pub fn rows(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn unknowns(&self) -> usize {
        self.coefficients.ncols()
    }

    pub fn singular_values(&self) -> Vec<f64> {
        singular_values(&self.coefficients)
    }
}

/// Which singular values are treated as zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Truncation {
    /// Drop values below `rel · σ_max`.
    Relative(f64),
    /// Drop exactly this many of the smallest values.
    DropSmallest(usize),
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation::Relative(1e-10)
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub x: DVector<f64>,
    /// Descending.
    pub singular_values: Vec<f64>,
    pub rank: usize,
    pub residual_norm: f64,
    /// Ratio of largest to smallest retained singular value.
    pub condition: f64,
}

/// Descending singular values.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.iter().any(|v| !v.is_finite()) {
        return vec![f64::NAN; a.nrows().min(a.ncols())];
    }
    let mut sv: Vec<f64> = SVD::new(a.clone(), false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Count of singular values at or above `rel · σ_max`.
pub fn numerical_rank(sv: &[f64], rel: f64) -> usize {
    let max = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > rel * max).count()
}

pub fn pinv_solve(sys: &LinearSystem, truncation: Truncation) -> Result<Solution> {
    let a = &sys.coefficients;
    if a.iter().chain(sys.rhs.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite entries in linear system".into()));
    }
    if a.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("all-zero coefficient matrix".into()));
    }
    let svd = SVD::new(a.clone(), true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested Vᵀ");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sorted: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();

    let keep = match truncation {
        Truncation::Relative(rel) => numerical_rank(&sorted, rel),
        Truncation::DropSmallest(k) => sorted.len().saturating_sub(k),
    };
    let mut x = DVector::zeros(a.ncols());
    for &i in order.iter().take(keep) {
        let s = svd.singular_values[i];
        if s == 0.0 {
            continue;
        }
        let coeff = u.column(i).dot(&sys.rhs) / s;
        x += v_t.row(i).transpose() * coeff;
    }
    let residual_norm = (a * &x - &sys.rhs).norm();
    let condition = if keep > 0 { sorted[0] / sorted[keep - 1] } else { f64::INFINITY };
    Ok(Solution { x, singular_values: sorted, rank: keep, residual_norm, condition })
}
