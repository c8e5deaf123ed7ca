//! Explicit lifted matrix for small instances, assembled straight from the complex channels.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use super::e_factor;
use crate::error::{Error, Result};
use crate::scenario::Scenario;

/// Largest column count `2MNK` that [`dense_matrix`] will materialize.
pub const DENSE_COLUMN_LIMIT: usize = 512;

/// The full lifted matrix `A` for rate `rate`, including power rows.
pub fn dense_matrix(scenario: &Scenario, rate: f64) -> Result<DMatrix<f64>> {
    let (m_aps, n, k) = (scenario.num_aps(), scenario.antennas_per_ap(), scenario.num_users());
    let mn = m_aps * n;
    let cols = 2 * mn * k;
    let cone = 2 * k + 2;
    let rows = k * cone + cols;
    if cols > DENSE_COLUMN_LIMIT {
        return Err(Error::TooLargeForDense { rows, cols });
    }
    let sqrt_e = e_factor(rate)?.sqrt();
    let mut a = DMatrix::zeros(rows, cols);
    for user in 0..k {
        let h = scenario.user_channel(user);
        for j in 0..k {
            for (i, hi) in h.iter().enumerate() {
                // h^H v = sum conj(h_i) v_i, split into real and imaginary parts of v.
                let (re_col, im_col) = (j * 2 * mn + i, j * 2 * mn + mn + i);
                let (pr, pi) = (user * cone + 2 * j, user * cone + 2 * j + 1);
                a[(pr, re_col)] = hi.re;
                a[(pr, im_col)] = hi.im;
                a[(pi, re_col)] = -hi.im;
                a[(pi, im_col)] = hi.re;
                if j == user {
                    a[(user * cone + cone - 1, re_col)] = sqrt_e * hi.re;
                    a[(user * cone + cone - 1, im_col)] = sqrt_e * hi.im;
                }
            }
        }
    }
    let power = k * cone;
    for m in 0..m_aps {
        for j in 0..k {
            for a_idx in 0..n {
                let row = power + m * 2 * k * n + j * 2 * n + a_idx;
                let col = j * 2 * mn + m * n + a_idx;
                a[(row, col)] = 1.0;
                a[(row + n, col + mn)] = 1.0;
            }
        }
    }
    Ok(a)
}

/// Writes a matrix in Matrix Market coordinate format (nonzeros only, 1-based).
pub fn write_matrix_market(matrix: &DMatrix<f64>, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let nnz = matrix.iter().filter(|x| **x != 0.0).count();
    writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(out, "{} {} {}", matrix.nrows(), matrix.ncols(), nnz)?;
    for c in 0..matrix.ncols() {
        for r in 0..matrix.nrows() {
            let v = matrix[(r, c)];
            if v != 0.0 {
                writeln!(out, "{} {} {:e}", r + 1, c + 1, v)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}
