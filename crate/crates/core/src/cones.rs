//! Projections onto the product set of second-order cones and per-AP power balls, the
//! squared-distance objective `f(w) = 1/2 ||w - Proj(w)||^2`, its gradient and its prox.

use std::ops::Range;

use crate::error::{Error, Result};

/// Relative slack used when testing membership of a block.
pub const MEMBERSHIP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlockKind {
    /// `{(rest, last) : ||rest|| <= last}`
    Soc,
    /// Euclidean ball of the given radius.
    Ball { radius: f64 },
}

/// Layout of the split variable: `soc_count` cone blocks of length `soc_dim`, followed by
/// one power ball of length `ball_dim` per entry of `ball_radii`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeLayout {
    soc_count: usize,
    soc_dim: usize,
    ball_dim: usize,
    ball_radii: Vec<f64>,
}

impl ConeLayout {
    /// Max-min feasibility layout: `K` cones of length `2K + 2`, then `M` balls of length
    /// `2KN` with radii `sqrt(p_m)`.
    pub fn new(num_users: usize, antennas_per_ap: usize, per_ap_power: &[f64]) -> Result<Self> {
        if per_ap_power.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(Error::config("per_ap_power", "every entry must be positive and finite"));
        }
        Ok(ConeLayout {
            soc_count: num_users,
            soc_dim: 2 * num_users + 2,
            ball_dim: 2 * num_users * antennas_per_ap,
            ball_radii: per_ap_power.iter().map(|p| p.sqrt()).collect(),
        })
    }

    /// Cones only; used by the min-power (QoS) formulation.
    pub fn cones_only(num_users: usize) -> Self {
        ConeLayout {
            soc_count: num_users,
            soc_dim: 2 * num_users + 2,
            ball_dim: 0,
            ball_radii: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.soc_count * self.soc_dim + self.ball_dim * self.ball_radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn soc_count(&self) -> usize {
        self.soc_count
    }

    pub fn soc_dim(&self) -> usize {
        self.soc_dim
    }

    pub fn ball_count(&self) -> usize {
        self.ball_radii.len()
    }

    pub fn ball_dim(&self) -> usize {
        self.ball_dim
    }

    pub fn ball_radii(&self) -> &[f64] {
        &self.ball_radii
    }

    pub fn soc_range(&self, k: usize) -> Range<usize> {
        k * self.soc_dim..(k + 1) * self.soc_dim
    }

    pub fn ball_offset(&self) -> usize {
        self.soc_count * self.soc_dim
    }

    pub fn ball_range(&self, m: usize) -> Range<usize> {
        let start = self.ball_offset() + m * self.ball_dim;
        start..start + self.ball_dim
    }

    pub fn blocks(&self) -> impl Iterator<Item = (Range<usize>, BlockKind)> + '_ {
        let socs = (0..self.soc_count).map(|k| (self.soc_range(k), BlockKind::Soc));
        let balls = self
            .ball_radii
            .iter()
            .enumerate()
            .map(|(m, &radius)| (self.ball_range(m), BlockKind::Ball { radius }));
        socs.chain(balls)
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::DimensionMismatch {
                what: "split vector",
                expected: self.len(),
                actual: len,
            });
        }
        Ok(())
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Projection onto the standard second-order cone; the last entry is the cone's "height".
pub fn project_soc_into(x: &[f64], out: &mut [f64]) {
    debug_assert!(x.len() >= 2 && out.len() == x.len());
    let (rest, last) = x.split_at(x.len() - 1);
    let last = last[0];
    let rest_norm = norm(rest);
    if rest_norm <= last {
        out.copy_from_slice(x);
    } else if rest_norm <= -last {
        out.fill(0.0);
    } else {
        // rest_norm > |last| >= 0 here
        let scale = 0.5 * (1.0 + last / rest_norm);
        let n = x.len();
        for (o, r) in out[..n - 1].iter_mut().zip(rest) {
            *o = scale * r;
        }
        out[n - 1] = 0.5 * (last + rest_norm);
    }
}

pub fn project_soc(x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    project_soc_into(x, &mut out);
    out
}

pub fn project_ball_into(d: &[f64], radius: f64, out: &mut [f64]) {
    let n = norm(d);
    if n <= radius {
        out.copy_from_slice(d);
    } else {
        for (o, v) in out.iter_mut().zip(d) {
            *o = radius * v / n;
        }
    }
}

/// Projection onto the ball of radius `radius` (the square root of the AP power budget).
pub fn project_power_block(d: &[f64], radius: f64) -> Vec<f64> {
    let mut out = vec![0.0; d.len()];
    project_ball_into(d, radius, &mut out);
    out
}

pub fn project_block_into(x: &[f64], kind: BlockKind, out: &mut [f64]) {
    match kind {
        BlockKind::Soc => project_soc_into(x, out),
        BlockKind::Ball { radius } => project_ball_into(x, radius, out),
    }
}

/// Membership with relative slack [`MEMBERSHIP_TOL`].
pub fn block_contains(x: &[f64], kind: BlockKind) -> bool {
    let tol = MEMBERSHIP_TOL * (1.0 + norm(x));
    match kind {
        BlockKind::Soc => {
            let (rest, last) = x.split_at(x.len() - 1);
            norm(rest) <= last[0] + tol
        }
        BlockKind::Ball { radius } => norm(x) <= radius + tol,
    }
}

pub fn project_d_into(w: &[f64], layout: &ConeLayout, out: &mut [f64]) -> Result<()> {
    layout.check(w.len())?;
    layout.check(out.len())?;
    for (range, kind) in layout.blocks() {
        project_block_into(&w[range.clone()], kind, &mut out[range]);
    }
    Ok(())
}

pub fn project_d(w: &[f64], layout: &ConeLayout) -> Result<Vec<f64>> {
    let mut out = vec![0.0; w.len()];
    project_d_into(w, layout, &mut out)?;
    Ok(out)
}

/// Squared distance of one block to its set, halved.
pub fn block_f(x: &[f64], kind: BlockKind) -> f64 {
    match kind {
        BlockKind::Soc => {
            let (rest, last) = x.split_at(x.len() - 1);
            let last = last[0];
            let r = norm(rest);
            if r <= last {
                0.0
            } else if r <= -last {
                0.5 * (r * r + last * last)
            } else {
                // distance to the cone is (r - last) / sqrt(2)
                0.25 * (r - last) * (r - last)
            }
        }
        BlockKind::Ball { radius } => {
            let n = norm(x);
            if n <= radius {
                0.0
            } else {
                0.5 * (n - radius) * (n - radius)
            }
        }
    }
}

pub fn f_value(w: &[f64], layout: &ConeLayout) -> Result<f64> {
    layout.check(w.len())?;
    Ok(layout.blocks().map(|(range, kind)| block_f(&w[range], kind)).sum())
}

pub fn f_gradient(w: &[f64], layout: &ConeLayout) -> Result<Vec<f64>> {
    let mut g = project_d(w, layout)?;
    for (gi, wi) in g.iter_mut().zip(w) {
        *gi = wi - *gi;
    }
    Ok(g)
}

/// `argmin_w f_i(w) + beta/2 ||w - d||^2`: `d` itself when it is a member, otherwise the
/// point `(beta d + Proj(d)) / (1 + beta)` on the segment towards its projection.
pub fn prox_block_into(d: &[f64], beta: f64, kind: BlockKind, out: &mut [f64]) {
    if block_contains(d, kind) {
        out.copy_from_slice(d);
        return;
    }
    project_block_into(d, kind, out);
    let inv = 1.0 / (1.0 + beta);
    for (o, di) in out.iter_mut().zip(d) {
        *o = (beta * di + *o) * inv;
    }
}

pub fn prox_f_block(d: &[f64], beta: f64, kind: BlockKind) -> Result<Vec<f64>> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::config("beta", "must be positive and finite"));
    }
    let mut out = vec![0.0; d.len()];
    prox_block_into(d, beta, kind, &mut out);
    Ok(out)
}
