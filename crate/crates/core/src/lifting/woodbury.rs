//! Block solves `(c I + Hbar^T Hbar + e h_j h_j^T)^{-1}` without forming `2MN x 2MN` inverses.
//!
//! `Hbar` stacks the `2K` real channel rows. The base operator `B = c I + Hbar^T Hbar` is
//! factored once per channel realization, either directly (when `2MN <= K`, where a dense solve
//! still costs `O(MNK)`) or through the `2K x 2K` capacitance matrix `c I + Hbar Hbar^T`. The per-block rank-one term is handled by
//! Sherman-Morrison with precomputed `u_j = B^{-1} h_j` and `gamma_j = h_j^T u_j`.

use nalgebra::DMatrix;

use super::{axpy, dot, FeasibilityProblem, RealChannels};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum Base {
    /// Cholesky factor of `B` itself.
    Direct { l: Vec<f64> },
    /// Cholesky factor of `c I + Hbar Hbar^T`.
    Capacitance { l: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct WoodburyFactors {
    shift: f64,
    n: usize,
    k2: usize,
    fingerprint: u64,
    base: Base,
    /// `u_j`, row-major `K x 2MN`.
    u: Vec<f64>,
    gamma: Vec<f64>,
    /// Real channel rows interleaved as `[re_0, im_0, re_1, ...]`.
    hbar: Vec<f64>,
}

/// Per-thread work buffers for [`WoodburyFactors::solve_compact`].
#[derive(Debug, Clone)]
pub struct Scratch {
    small: Vec<f64>,
}

fn cholesky(m: DMatrix<f64>, what: &'static str) -> Result<Vec<f64>> {
    let n = m.nrows();
    let chol = m.cholesky().ok_or(Error::NotPositiveDefinite(what))?;
    let l = chol.l();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            out[i * n + j] = l[(i, j)];
        }
    }
    Ok(out)
}

/// Solves `L L^T x = b` in place for a row-major lower factor.
fn cholesky_solve(l: &[f64], n: usize, x: &mut [f64]) {
    for i in 0..n {
        let row = &l[i * n..i * n + i];
        x[i] = (x[i] - dot(row, &x[..i])) / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in i + 1..n {
            s -= l[j * n + i] * x[j];
        }
        x[i] = s / l[i * n + i];
    }
}

impl WoodburyFactors {
    /// Factors `shift I + Hbar^T Hbar` for the given channels. `shift` must be positive.
    pub fn new(channels: &RealChannels, shift: f64) -> Result<Self> {
        if !(shift > 0.0 && shift.is_finite()) {
            return Err(Error::config("shift", "must be positive and finite"));
        }
        let n = channels.block_len();
        let k = channels.num_users();
        let k2 = 2 * k;
        let mut hbar = Vec::with_capacity(k2 * n);
        for user in 0..k {
            hbar.extend_from_slice(channels.re_row(user));
            hbar.extend_from_slice(channels.im_row(user));
        }
        if hbar.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("channels"));
        }
        let h = DMatrix::from_row_slice(k2, n, &hbar);
        let base = if n <= k {
            let b = DMatrix::identity(n, n) * shift + h.transpose() * &h;
            Base::Direct {
                l: cholesky(b, "block normal matrix")?,
            }
        } else {
            let c = DMatrix::identity(k2, k2) * shift + &h * h.transpose();
            Base::Capacitance {
                l: cholesky(c, "capacitance matrix")?,
            }
        };
        let mut factors = WoodburyFactors {
            shift,
            n,
            k2,
            fingerprint: channels.fingerprint(),
            base,
            u: vec![0.0; k * n],
            gamma: vec![0.0; k],
            hbar,
        };
        let mut scratch = factors.scratch();
        for user in 0..k {
            let mut u = channels.re_row(user).to_vec();
            factors.base_solve(&mut u, &mut scratch);
            factors.gamma[user] = dot(channels.re_row(user), &u);
            factors.u[user * n..(user + 1) * n].copy_from_slice(&u);
        }
        Ok(factors)
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn scratch(&self) -> Scratch {
        Scratch {
            small: vec![0.0; self.k2],
        }
    }

    /// Errors unless these factors were built from `problem`'s channels with the given shift.
    pub fn check_compatible(&self, problem: &FeasibilityProblem, shift: f64) -> Result<()> {
        if self.fingerprint != problem.channels().fingerprint()
            || self.n != problem.block_len()
            || self.shift != shift
        {
            return Err(Error::StaleFactorization);
        }
        Ok(())
    }

    /// `x <- B^{-1} x`.
    fn base_solve(&self, x: &mut [f64], scratch: &mut Scratch) {
        match &self.base {
            Base::Direct { l } => cholesky_solve(l, self.n, x),
            Base::Capacitance { l } => {
                let t = &mut scratch.small;
                for (i, ti) in t.iter_mut().enumerate() {
                    *ti = dot(&self.hbar[i * self.n..(i + 1) * self.n], x);
                }
                cholesky_solve(l, self.k2, t);
                for (i, ti) in t.iter().enumerate() {
                    axpy(-ti, &self.hbar[i * self.n..(i + 1) * self.n], x);
                }
                let inv = 1.0 / self.shift;
                x.iter_mut().for_each(|v| *v *= inv);
            }
        }
    }

    /// `out = (B + e h_j h_j^T)^{-1} A_j^T c` for compact coordinates `c` of block `j`.
    pub fn solve_compact(
        &self,
        problem: &FeasibilityProblem,
        j: usize,
        compact: &[f64],
        out: &mut [f64],
        scratch: &mut Scratch,
    ) {
        problem.apply_block_transpose_compact(j, compact, out);
        self.solve_block_system(problem.e_factor(), j, out, scratch);
    }

    /// `x <- (B + e h_j h_j^T)^{-1} x`.
    pub fn solve_block_system(&self, e: f64, j: usize, x: &mut [f64], scratch: &mut Scratch) {
        self.base_solve(x, scratch);
        let u = &self.u[j * self.n..(j + 1) * self.n];
        let h = &self.hbar[2 * j * self.n..(2 * j + 1) * self.n];
        let coef = e * dot(h, x) / (1.0 + e * self.gamma[j]);
        axpy(-coef, u, x);
    }
}
