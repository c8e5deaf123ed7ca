//! Real-valued lifting of the rate-target feasibility problem.
//!
//! For a target rate `s` every user's rate constraint becomes membership of
//!
//! ```text
//! [Re h_k^H v_1, Im h_k^H v_1, ..., Re h_k^H v_K, Im h_k^H v_K, sigma_k, sqrt(e(s)) Re h_k^H v_k]
//! ```
//!
//! in a standard second-order cone, and the per-AP budgets become Euclidean balls over the
//! AP-major permutation of the stacked beamformers. The lifted matrix `A = [A_1 ... A_K]` is
//! never stored: each column block `A_j` (acting on user `j`'s real beamformer
//! `[Re v_j; Im v_j]`) touches a fixed set of rows that no other block touches, so every
//! operator here works on the compact "masked" coordinates of one block.

mod dense;
mod woodbury;

pub use dense::{dense_matrix, write_matrix_market, DENSE_COLUMN_LIMIT};
pub use woodbury::{Scratch, WoodburyFactors};

use std::hash::{Hash, Hasher};
use std::ops::Range;
use std::sync::Arc;

use crate::cones::ConeLayout;
use crate::error::{Error, Result};
use crate::scenario::{Scenario, C64};

/// `e(s) = 2^s / (2^s - 1)`, the factor turning a rate target into a cone constraint.
pub fn e_factor(rate: f64) -> Result<f64> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::config("rate", "target rate must be positive and finite"));
    }
    let g = rate.exp2();
    Ok(g / (g - 1.0))
}

/// Per-user real channel rows. For `h_k = a + j b` (stacked over all APs) the rows are
/// `re_k = [a; b]` and `im_k = [-b; a]`, so that for `x = [Re v; Im v]`
/// `re_k . x = Re(h_k^H v)` and `im_k . x = Im(h_k^H v)`.
#[derive(Debug, Clone)]
pub struct RealChannels {
    num_aps: usize,
    antennas: usize,
    num_users: usize,
    re_rows: Vec<f64>,
    im_rows: Vec<f64>,
    fingerprint: u64,
}

impl RealChannels {
    pub fn new(scenario: &Scenario) -> Self {
        let (m, n, k) = (scenario.num_aps(), scenario.antennas_per_ap(), scenario.num_users());
        let mn = m * n;
        let mut re_rows = vec![0.0; k * 2 * mn];
        let mut im_rows = vec![0.0; k * 2 * mn];
        let mut hasher = std::collections::hash_map::DefaultHasher::new();
        (m, n, k).hash(&mut hasher);
        for user in 0..k {
            let h = scenario.user_channel(user);
            let re = &mut re_rows[user * 2 * mn..(user + 1) * 2 * mn];
            let im = &mut im_rows[user * 2 * mn..(user + 1) * 2 * mn];
            for (i, z) in h.iter().enumerate() {
                re[i] = z.re;
                re[mn + i] = z.im;
                im[i] = -z.im;
                im[mn + i] = z.re;
                z.re.to_bits().hash(&mut hasher);
                z.im.to_bits().hash(&mut hasher);
            }
        }
        RealChannels {
            num_aps: m,
            antennas: n,
            num_users: k,
            re_rows,
            im_rows,
            fingerprint: hasher.finish(),
        }
    }

    pub fn num_aps(&self) -> usize {
        self.num_aps
    }
    pub fn antennas(&self) -> usize {
        self.antennas
    }
    pub fn num_users(&self) -> usize {
        self.num_users
    }
    /// Length `2MN` of one user's real beamformer.
    pub fn block_len(&self) -> usize {
        2 * self.num_aps * self.antennas
    }

    /// `h~_k`, the first row of `H~_k`.
    pub fn re_row(&self, k: usize) -> &[f64] {
        let n = self.block_len();
        &self.re_rows[k * n..(k + 1) * n]
    }

    /// The second row of `H~_k`.
    pub fn im_row(&self, k: usize) -> &[f64] {
        let n = self.block_len();
        &self.im_rows[k * n..(k + 1) * n]
    }

    /// Applies `H~_k` to a real beamformer.
    pub fn apply_user(&self, k: usize, x: &[f64]) -> [f64; 2] {
        [dot(self.re_row(k), x), dot(self.im_row(k), x)]
    }

    pub(crate) fn fingerprint(&self) -> u64 {
        self.fingerprint
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Row index set of one column block, as ranges into the full lifted vector. The order of
/// the ranges defines the block's compact coordinates:
/// `[pair rows of user j in cone 0, ..., in cone K-1, height row of cone j, power rows]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NonzeroMask {
    ranges: Vec<Range<usize>>,
}

impl NonzeroMask {
    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.ranges.iter().flat_map(|r| r.clone())
    }

    pub fn len(&self) -> usize {
        self.ranges.iter().map(|r| r.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The lifted feasibility instance for one target rate.
#[derive(Debug, Clone)]
pub struct FeasibilityProblem {
    channels: Arc<RealChannels>,
    rate: f64,
    e_sc: f64,
    sqrt_e: f64,
    noise_std: Vec<f64>,
    layout: ConeLayout,
    with_power: bool,
}

/// Builds the max-min feasibility instance (cones plus per-AP power balls).
pub fn build_problem(scenario: &Scenario, rate: f64) -> Result<FeasibilityProblem> {
    FeasibilityProblem::new(Arc::new(RealChannels::new(scenario)), scenario, rate, true)
}

/// Builds the min-power instance: the same cones, no power balls.
pub fn build_qos_problem(scenario: &Scenario, rate: f64) -> Result<FeasibilityProblem> {
    FeasibilityProblem::new(Arc::new(RealChannels::new(scenario)), scenario, rate, false)
}

impl FeasibilityProblem {
    /// Reuses an existing channel stack, so repeated builds for different rates share it.
    pub fn new(
        channels: Arc<RealChannels>,
        scenario: &Scenario,
        rate: f64,
        with_power: bool,
    ) -> Result<Self> {
        let e_sc = e_factor(rate)?;
        let k = scenario.num_users();
        if channels.num_users != k
            || channels.num_aps != scenario.num_aps()
            || channels.antennas != scenario.antennas_per_ap()
        {
            return Err(Error::DimensionMismatch {
                what: "channel stack users",
                expected: k,
                actual: channels.num_users,
            });
        }
        let layout = if with_power {
            ConeLayout::new(k, scenario.antennas_per_ap(), scenario.per_ap_power())?
        } else {
            ConeLayout::cones_only(k)
        };
        Ok(FeasibilityProblem {
            channels,
            rate,
            e_sc,
            sqrt_e: e_sc.sqrt(),
            noise_std: scenario.noise_power.iter().map(|p| p.sqrt()).collect(),
            layout,
            with_power,
        })
    }

    /// Same channels and budgets, different target rate.
    pub fn with_rate(&self, rate: f64) -> Result<Self> {
        let e_sc = e_factor(rate)?;
        Ok(FeasibilityProblem {
            rate,
            e_sc,
            sqrt_e: e_sc.sqrt(),
            ..self.clone()
        })
    }

    pub fn channels(&self) -> &Arc<RealChannels> {
        &self.channels
    }
    pub fn rate(&self) -> f64 {
        self.rate
    }
    pub fn e_factor(&self) -> f64 {
        self.e_sc
    }
    pub fn layout(&self) -> &ConeLayout {
        &self.layout
    }
    pub fn has_power_blocks(&self) -> bool {
        self.with_power
    }
    pub fn num_users(&self) -> usize {
        self.channels.num_users
    }
    pub fn num_aps(&self) -> usize {
        self.channels.num_aps
    }
    pub fn antennas(&self) -> usize {
        self.channels.antennas
    }
    pub fn block_len(&self) -> usize {
        self.channels.block_len()
    }
    pub fn num_blocks(&self) -> usize {
        self.channels.num_users
    }
    /// Number of rows of the lifted matrix (length of `w`).
    pub fn rows(&self) -> usize {
        self.layout.len()
    }
    /// Number of columns of the lifted matrix (length of the stacked real beamformer).
    pub fn cols(&self) -> usize {
        self.num_users() * self.block_len()
    }
    pub fn noise_std(&self) -> &[f64] {
        &self.noise_std
    }

    fn cone_dim(&self) -> usize {
        2 * self.num_users() + 2
    }

    /// Offset vector `b`: `sigma_k` in slot `2K` of cone `k`, zero elsewhere.
    pub fn offset(&self) -> Vec<f64> {
        let mut b = vec![0.0; self.rows()];
        let dim = self.cone_dim();
        for (k, s) in self.noise_std.iter().enumerate() {
            b[k * dim + dim - 2] = *s;
        }
        b
    }

    /// Length of block `j`'s compact coordinates.
    pub fn compact_len(&self) -> usize {
        2 * self.num_users() + 1 + if self.with_power { self.block_len() } else { 0 }
    }

    pub fn mask(&self, j: usize) -> NonzeroMask {
        let k = self.num_users();
        let dim = self.cone_dim();
        let mut ranges = Vec::with_capacity(k + 1 + self.num_aps());
        for cone in 0..k {
            let start = cone * dim + 2 * j;
            ranges.push(start..start + 2);
        }
        let height = j * dim + dim - 1;
        ranges.push(height..height + 1);
        if self.with_power {
            let n2 = 2 * self.antennas();
            for m in 0..self.num_aps() {
                let start = self.layout.ball_range(m).start + j * n2;
                ranges.push(start..start + n2);
            }
        }
        NonzeroMask { ranges }
    }

    fn check_block(&self, j: usize) -> Result<()> {
        if j >= self.num_blocks() {
            return Err(Error::DimensionMismatch {
                what: "block index bound",
                expected: self.num_blocks(),
                actual: j,
            });
        }
        Ok(())
    }

    fn check_len(&self, what: &'static str, expected: usize, actual: usize) -> Result<()> {
        if expected != actual {
            return Err(Error::DimensionMismatch {
                what,
                expected,
                actual,
            });
        }
        Ok(())
    }

    /// Reads block `j`'s rows of a full-length vector into compact coordinates.
    pub fn gather(&self, j: usize, full: &[f64], out: &mut [f64]) {
        let k = self.num_users();
        let dim = self.cone_dim();
        for cone in 0..k {
            let row = cone * dim + 2 * j;
            out[2 * cone] = full[row];
            out[2 * cone + 1] = full[row + 1];
        }
        out[2 * k] = full[j * dim + dim - 1];
        if self.with_power {
            let n2 = 2 * self.antennas();
            for m in 0..self.num_aps() {
                let start = self.layout.ball_range(m).start + j * n2;
                let dst = 2 * k + 1 + m * n2;
                out[dst..dst + n2].copy_from_slice(&full[start..start + n2]);
            }
        }
    }

    /// Writes compact coordinates of block `j` into a full-length vector, overwriting those rows.
    pub fn scatter(&self, j: usize, compact: &[f64], full: &mut [f64]) {
        let k = self.num_users();
        let dim = self.cone_dim();
        for cone in 0..k {
            let row = cone * dim + 2 * j;
            full[row] = compact[2 * cone];
            full[row + 1] = compact[2 * cone + 1];
        }
        full[j * dim + dim - 1] = compact[2 * k];
        if self.with_power {
            let n2 = 2 * self.antennas();
            for m in 0..self.num_aps() {
                let start = self.layout.ball_range(m).start + j * n2;
                let src = 2 * k + 1 + m * n2;
                full[start..start + n2].copy_from_slice(&compact[src..src + n2]);
            }
        }
    }

    /// `A_j x` in compact coordinates.
    pub fn apply_block_compact(&self, j: usize, x: &[f64], out: &mut [f64]) {
        let ch = &*self.channels;
        let k = ch.num_users;
        let mut own_re = 0.0;
        for cone in 0..k {
            let [re, im] = ch.apply_user(cone, x);
            out[2 * cone] = re;
            out[2 * cone + 1] = im;
            if cone == j {
                own_re = re;
            }
        }
        out[2 * k] = self.sqrt_e * own_re;
        if self.with_power {
            let (n, mn) = (ch.antennas, ch.num_aps * ch.antennas);
            for m in 0..ch.num_aps {
                let dst = 2 * k + 1 + m * 2 * n;
                out[dst..dst + n].copy_from_slice(&x[m * n..(m + 1) * n]);
                out[dst + n..dst + 2 * n].copy_from_slice(&x[mn + m * n..mn + (m + 1) * n]);
            }
        }
    }

    /// `A_j^T c` for compact coordinates `c`.
    pub fn apply_block_transpose_compact(&self, j: usize, c: &[f64], out: &mut [f64]) {
        let ch = &*self.channels;
        let k = ch.num_users;
        out.fill(0.0);
        if self.with_power {
            let (n, mn) = (ch.antennas, ch.num_aps * ch.antennas);
            for m in 0..ch.num_aps {
                let src = 2 * k + 1 + m * 2 * n;
                out[m * n..(m + 1) * n].copy_from_slice(&c[src..src + n]);
                out[mn + m * n..mn + (m + 1) * n].copy_from_slice(&c[src + n..src + 2 * n]);
            }
        }
        for cone in 0..k {
            let mut coef = c[2 * cone];
            if cone == j {
                coef += self.sqrt_e * c[2 * k];
            }
            axpy(coef, ch.re_row(cone), out);
            axpy(c[2 * cone + 1], ch.im_row(cone), out);
        }
    }

    /// `A_j v_j` as a full-length vector (zero outside the block's mask).
    pub fn apply_block(&self, j: usize, v: &[f64]) -> Result<Vec<f64>> {
        self.check_block(j)?;
        self.check_len("block vector", self.block_len(), v.len())?;
        let mut compact = vec![0.0; self.compact_len()];
        self.apply_block_compact(j, v, &mut compact);
        let mut full = vec![0.0; self.rows()];
        self.scatter(j, &compact, &mut full);
        Ok(full)
    }

    /// `A_j^T r`; only the rows in `mask(j)` are read.
    pub fn apply_block_transpose(&self, j: usize, r: &[f64]) -> Result<Vec<f64>> {
        self.check_block(j)?;
        self.check_len("residual", self.rows(), r.len())?;
        let mut compact = vec![0.0; self.compact_len()];
        self.gather(j, r, &mut compact);
        let mut out = vec![0.0; self.block_len()];
        self.apply_block_transpose_compact(j, &compact, &mut out);
        Ok(out)
    }

    /// `A v` for the stacked real beamformer.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len("stacked beamformer", self.cols(), v.len())?;
        let n = self.block_len();
        let mut full = vec![0.0; self.rows()];
        let mut compact = vec![0.0; self.compact_len()];
        for j in 0..self.num_blocks() {
            self.apply_block_compact(j, &v[j * n..(j + 1) * n], &mut compact);
            self.scatter(j, &compact, &mut full);
        }
        Ok(full)
    }

    /// Least-squares block update `-(A_j^T A_j)^{-1} A_j^T D_j r`.
    pub fn solve_block_ls(&self, factors: &WoodburyFactors, j: usize, r: &[f64]) -> Result<Vec<f64>> {
        self.check_block(j)?;
        self.check_len("residual", self.rows(), r.len())?;
        factors.check_compatible(self, self.expected_shift(factors))?;
        let mut compact = vec![0.0; self.compact_len()];
        self.gather(j, r, &mut compact);
        let mut scratch = factors.scratch();
        let mut out = vec![0.0; self.block_len()];
        factors.solve_compact(self, j, &compact, &mut out, &mut scratch);
        out.iter_mut().for_each(|x| *x = -*x);
        Ok(out)
    }

    fn expected_shift(&self, factors: &WoodburyFactors) -> f64 {
        if self.with_power {
            1.0
        } else {
            factors.shift()
        }
    }

    /// Factors of `A_j^T A_j = I + sum_k H~_k^T H~_k + e h~_j h~_j^T`.
    pub fn factors(&self) -> Result<WoodburyFactors> {
        if !self.with_power {
            return Err(Error::config("shift", "min-power instances need qos_factors(beta)"));
        }
        WoodburyFactors::new(&self.channels, 1.0)
    }

    /// Factors of `(2/beta) I + G_j^T G_j` for the min-power block update.
    pub fn qos_factors(&self, beta: f64) -> Result<WoodburyFactors> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::config("beta", "must be positive and finite"));
        }
        WoodburyFactors::new(&self.channels, 2.0 / beta)
    }
}

/// Dimension triple `(M, N, K)` carried with beamformer conversions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub num_aps: usize,
    pub antennas: usize,
    pub num_users: usize,
}

impl Dims {
    pub fn of(scenario: &Scenario) -> Self {
        Dims {
            num_aps: scenario.num_aps(),
            antennas: scenario.antennas_per_ap(),
            num_users: scenario.num_users(),
        }
    }
    pub fn mn(&self) -> usize {
        self.num_aps * self.antennas
    }
    pub fn real_len(&self) -> usize {
        2 * self.mn() * self.num_users
    }
}

/// Complex beamformers `v_k[m]`, stored user-major like the channels.
pub fn to_complex(dims: Dims, real: &[f64]) -> Result<Vec<C64>> {
    if real.len() != dims.real_len() {
        return Err(Error::DimensionMismatch {
            what: "stacked real beamformer",
            expected: dims.real_len(),
            actual: real.len(),
        });
    }
    let mn = dims.mn();
    let mut out = Vec::with_capacity(mn * dims.num_users);
    for block in real.chunks(2 * mn) {
        out.extend((0..mn).map(|i| C64::new(block[i], block[mn + i])));
    }
    Ok(out)
}

pub fn from_complex(dims: Dims, beamformers: &[C64]) -> Result<Vec<f64>> {
    let mn = dims.mn();
    if beamformers.len() != mn * dims.num_users {
        return Err(Error::DimensionMismatch {
            what: "complex beamformers",
            expected: mn * dims.num_users,
            actual: beamformers.len(),
        });
    }
    let mut out = vec![0.0; dims.real_len()];
    for (k, v) in beamformers.chunks(mn).enumerate() {
        let block = &mut out[k * 2 * mn..(k + 1) * 2 * mn];
        for (i, z) in v.iter().enumerate() {
            block[i] = z.re;
            block[mn + i] = z.im;
        }
    }
    Ok(out)
}

/// Index map of the AP-major permutation: `breve[i] = tilde[perm[i]]`.
fn ap_major_index(dims: Dims) -> Vec<usize> {
    let (m_aps, n, k_users, mn) = (dims.num_aps, dims.antennas, dims.num_users, dims.mn());
    let mut idx = Vec::with_capacity(dims.real_len());
    for m in 0..m_aps {
        for k in 0..k_users {
            let base = k * 2 * mn;
            idx.extend((0..n).map(|a| base + m * n + a));
            idx.extend((0..n).map(|a| base + mn + m * n + a));
        }
    }
    idx
}

/// Reorders a user-major real beamformer into per-AP groups
/// `[Re v_1[m]; Im v_1[m]; ...; Re v_K[m]; Im v_K[m]]`.
pub fn permute_to_ap_major(dims: Dims, tilde: &[f64]) -> Result<Vec<f64>> {
    if tilde.len() != dims.real_len() {
        return Err(Error::DimensionMismatch {
            what: "user-major vector",
            expected: dims.real_len(),
            actual: tilde.len(),
        });
    }
    Ok(ap_major_index(dims).into_iter().map(|i| tilde[i]).collect())
}

pub fn permute_from_ap_major(dims: Dims, breve: &[f64]) -> Result<Vec<f64>> {
    if breve.len() != dims.real_len() {
        return Err(Error::DimensionMismatch {
            what: "AP-major vector",
            expected: dims.real_len(),
            actual: breve.len(),
        });
    }
    let mut out = vec![0.0; breve.len()];
    for (pos, src) in ap_major_index(dims).into_iter().enumerate() {
        out[src] = breve[pos];
    }
    Ok(out)
}

/// Per-user rates `log2(1 + |h_k^H v_k|^2 / (sum_{j != k} |h_k^H v_j|^2 + sigma_k^2))`.
pub fn achieved_rates(scenario: &Scenario, beamformers: &[C64]) -> Result<Vec<f64>> {
    let dims = Dims::of(scenario);
    let mn = dims.mn();
    if beamformers.len() != mn * dims.num_users {
        return Err(Error::DimensionMismatch {
            what: "complex beamformers",
            expected: mn * dims.num_users,
            actual: beamformers.len(),
        });
    }
    if beamformers.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::NonFinite("beamformers"));
    }
    Ok((0..dims.num_users)
        .map(|k| {
            let h = scenario.user_channel(k);
            let gains: Vec<f64> = beamformers
                .chunks(mn)
                .map(|v| h.iter().zip(v).map(|(hi, vi)| hi.conj() * vi).sum::<C64>().norm_sqr())
                .collect();
            let interference: f64 = gains.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, g)| g).sum();
            (1.0 + gains[k] / (interference + scenario.noise_power[k])).log2()
        })
        .collect())
}

/// Transmit power of every AP, `sum_k ||v_k[m]||^2`.
pub fn per_ap_powers(dims: Dims, beamformers: &[C64]) -> Vec<f64> {
    let (n, mn) = (dims.antennas, dims.mn());
    (0..dims.num_aps)
        .map(|m| {
            beamformers
                .chunks(mn)
                .map(|v| v[m * n..(m + 1) * n].iter().map(|z| z.norm_sqr()).sum::<f64>())
                .sum()
        })
        .collect()
}
