//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, Dyn, QR};

/// Relative singular-value threshold below which a design is rank deficient.
pub const RANK_TOL: f64 = 1e-10;

/// Checks that `a` has full column rank using its singular values.
pub fn check_full_column_rank(a: &DMatrix<f64>) -> Result<(), String> {
    let (n, p) = a.shape();
    if p == 0 {
        return Err("no columns".into());
    }
    if n < p {
        return Err(format!("{n} rows cannot support {p} columns"));
    }
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if !(max > 0.0) || min <= RANK_TOL * max {
        return Err(format!("smallest singular value {min:e} vs largest {max:e}"));
    }
    Ok(())
}

/// Householder QR of a tall matrix, reused for many right-hand sides.
pub struct LeastSquares {
    qr: QR<f64, Dyn, Dyn>,
    ncols: usize,
}

impl LeastSquares {
    pub fn new(a: &DMatrix<f64>) -> Result<Self, String> {
        let (n, p) = a.shape();
        if n < p || p == 0 {
            return Err(format!("cannot fit {p} coefficients from {n} rows"));
        }
        let qr = a.clone().qr();
        let r = qr.r();
        let diag: Vec<f64> = (0..p).map(|i| r[(i, i)].abs()).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        if !(max > 0.0) || diag.iter().any(|&d| d <= RANK_TOL * max) {
            return Err("design is rank deficient".into());
        }
        Ok(LeastSquares { qr, ncols: p })
    }

    /// Least-squares solution of `a x = rhs`, one column per right-hand side.
    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut qtb = rhs.clone();
        self.qr.q_tr_mul(&mut qtb);
        let top = qtb.rows(0, self.ncols).into_owned();
        let r = self.qr.r();
        r.solve_upper_triangular(&top).expect("checked non-singular")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_overdetermined_system() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let y = DMatrix::from_row_slice(3, 1, &[1.0, 3.0, 5.0]);
        let x = LeastSquares::new(&a).unwrap().solve(&y);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn detects_rank_deficiency() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert!(LeastSquares::new(&a).is_err());
        assert!(check_full_column_rank(&a).is_err());
        assert!(check_full_column_rank(&DMatrix::identity(3, 3)).is_ok());
    }
}
