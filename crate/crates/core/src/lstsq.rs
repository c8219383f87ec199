//! Small dense least-squares solves via an orthogonal factorization.
//!
//! Columns are equilibrated to unit norm before the SVD so that the rank
//! decision is independent of feature units (mm vs kN vs mm/s²).

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug)]
pub struct LeastSquares {
    /// Coefficients in the original (unscaled) column units.
    pub solution: Vec<f64>,
    /// Numerical rank of the equilibrated design matrix.
    pub rank: usize,
    /// Ratio of largest to smallest singular value of the equilibrated matrix
    /// (infinite when a singular value is exactly zero).
    pub condition_number: f64,
    /// Columns participating in each dropped (near-null) direction.
    pub collinear_columns: Vec<usize>,
}

impl LeastSquares {
    pub fn is_full_rank(&self) -> bool {
        self.collinear_columns.is_empty() && self.rank == self.solution.len()
    }
}

/// Minimum-norm least-squares solution of `design · β ≈ target` in the
/// equilibrated column space. Singular values below `rel_tol · σ_max` are
/// treated as zero.
pub fn solve(design: &DMatrix<f64>, target: &DVector<f64>, rel_tol: f64) -> LeastSquares {
    let cols = design.ncols();
    let norms: Vec<f64> = (0..cols).map(|j| design.column(j).norm()).collect();
    let mut scaled = design.clone();
    for (j, &n) in norms.iter().enumerate() {
        if n > 0.0 {
            scaled.column_mut(j).scale_mut(1.0 / n);
        }
    }
    let svd = scaled.svd(true, true);
    let sigma = &svd.singular_values;
    let sigma_max = sigma.iter().cloned().fold(0.0, f64::max);
    let sigma_min = sigma.iter().cloned().fold(f64::INFINITY, f64::min);
    let cutoff = rel_tol * sigma_max;
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested Vᵀ");

    let mut beta_scaled = DVector::<f64>::zeros(cols);
    let mut rank = 0;
    let mut collinear = Vec::new();
    for (i, &s) in sigma.iter().enumerate() {
        let v = v_t.row(i).transpose();
        if sigma_max > 0.0 && s > cutoff {
            rank += 1;
            let coeff = u.column(i).dot(target) / s;
            beta_scaled += v * coeff;
        } else {
            for (j, c) in v.iter().enumerate() {
                if c.abs() > 0.1 && !collinear.contains(&j) {
                    collinear.push(j);
                }
            }
        }
    }
    // A zero column is its own null direction.
    for (j, &n) in norms.iter().enumerate() {
        if n == 0.0 && !collinear.contains(&j) {
            collinear.push(j);
        }
    }
    collinear.sort_unstable();

    let solution = (0..cols)
        .map(|j| if norms[j] > 0.0 { beta_scaled[j] / norms[j] } else { 0.0 })
        .collect();
    LeastSquares {
        solution,
        rank,
        condition_number: if sigma_min > 0.0 {
            sigma_max / sigma_min
        } else {
            f64::INFINITY
        },
        collinear_columns: collinear,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_a_line() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let y = DVector::from_row_slice(&[2.0, 5.0, 8.0]);
        let ls = solve(&x, &y, 1e-12);
        assert!(ls.is_full_rank());
        assert!((ls.solution[0] - 2.0).abs() < 1e-12);
        assert!((ls.solution[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn flags_proportional_columns() {
        let rows: Vec<f64> = (0..20)
            .flat_map(|i| {
                let t = i as f64;
                [t.sin(), 600.0 * t.sin(), t.cos()]
            })
            .collect();
        let x = DMatrix::from_row_slice(20, 3, &rows);
        let y = DVector::from_iterator(20, (0..20).map(|i| (i as f64).sin()));
        let ls = solve(&x, &y, 1e-10);
        assert_eq!(ls.rank, 2);
        assert_eq!(ls.collinear_columns, vec![0, 1]);
        // Minimum-norm split still reproduces the target.
        let fit = &x * DVector::from_vec(ls.solution.clone());
        assert!((fit - y).norm() < 1e-10);
    }

    #[test]
    fn zero_matrix_has_rank_zero() {
        let x = DMatrix::<f64>::zeros(10, 3);
        let y = DVector::from_element(10, 1.0);
        let ls = solve(&x, &y, 1e-10);
        assert_eq!(ls.rank, 0);
        assert_eq!(ls.solution, vec![0.0; 3]);
        assert!(!ls.is_full_rank());
    }
}
