//! Max-min fair downlink beamforming for cell-free massive MIMO via bisection over
//! second-order-cone feasibility checks solved with (randomized) ADMM.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b, tol): (f64, f64, f64) = ($a, $b, $tol);
        assert!((a - b).abs() <= tol, "{} vs {} (tol {})", a, b, tol);
    }};
}

pub mod cli;
pub mod cones;
pub mod driver;
pub mod error;
pub mod lifting;
pub mod scenario;
pub mod solvers;

pub use error::{Error, Result};
