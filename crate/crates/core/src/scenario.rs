//! Cell-free deployment generator: uniform AP/user drops in a square, log-distance
//! pathloss with log-normal shadowing, and spatially correlated Rayleigh fading.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

pub const SCENARIO_CONFIG_SCHEMA: &str = "mmb.scenario-config/v1";
pub const SCENARIO_SCHEMA: &str = "mmb.scenario/v1";

/// Number of angular paths averaged by the local-scattering correlation model.
pub const LOCAL_SCATTERING_PATHS: usize = 200;

const PSD_TOL: f64 = 1e-10;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watt(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

pub fn watt_to_dbm(watt: f64) -> f64 {
    10.0 * watt.log10() + 30.0
}

/// Thermal noise floor `-174 dBm/Hz` integrated over `bandwidth_hz`.
pub fn noise_power_dbm(bandwidth_hz: f64) -> f64 {
    -174.0 + 10.0 * bandwidth_hz.log10()
}

/// Log-distance pathloss model `offset - exponent * log10(d / 1 m) + shadow`, all in dB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathlossModel {
    pub offset_db: f64,
    pub exponent_db_per_decade: f64,
}

impl Default for PathlossModel {
    fn default() -> Self {
        PathlossModel {
            offset_db: -34.53,
            exponent_db_per_decade: 38.0,
        }
    }
}

impl PathlossModel {
    /// Distances below 1 m are clamped to 1 m.
    pub fn fading_db(&self, distance_m: f64, shadow_db: f64) -> Result<f64> {
        if !distance_m.is_finite() {
            return Err(Error::NonFinite("distance_m"));
        }
        if !shadow_db.is_finite() {
            return Err(Error::NonFinite("shadow_db"));
        }
        let d = distance_m.max(1.0);
        Ok(self.offset_db - self.exponent_db_per_decade * d.log10() + shadow_db)
    }
}

/// Large-scale fading in dB under the default pathloss model.
pub fn large_scale_fading_db(distance_m: f64, shadow_db: f64) -> Result<f64> {
    PathlossModel::default().fading_db(distance_m, shadow_db)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Correlation {
    Uncorrelated,
    /// Half-wavelength ULA with Gaussian angular spread (standard deviation, degrees)
    /// around the AP-to-user azimuth.
    LocalScattering { angular_spread_deg: f64 },
}

impl Default for Correlation {
    fn default() -> Self {
        Correlation::LocalScattering {
            angular_spread_deg: 15.0,
        }
    }
}

fn default_config_schema() -> String {
    SCENARIO_CONFIG_SCHEMA.to_string()
}
fn default_area_side() -> f64 {
    500.0
}
fn default_bandwidth() -> f64 {
    2.0e7
}
fn default_shadow_std() -> f64 {
    10.0
}
fn default_pathloss_offset() -> f64 {
    PathlossModel::default().offset_db
}
fn default_pathloss_exponent() -> f64 {
    PathlossModel::default().exponent_db_per_decade
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_config_schema")]
    pub schema: String,
    pub num_aps: usize,
    pub antennas_per_ap: usize,
    pub num_users: usize,
    #[serde(default = "default_area_side")]
    pub area_side: f64,
    /// Per-AP power budget in watts, one entry per AP.
    pub per_ap_power: Vec<f64>,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_hz: f64,
    #[serde(default = "default_shadow_std")]
    pub shadow_std_db: f64,
    #[serde(default = "default_pathloss_offset")]
    pub pathloss_offset_db: f64,
    #[serde(default = "default_pathloss_exponent")]
    pub pathloss_exponent_db_per_decade: f64,
    #[serde(default)]
    pub correlation: Correlation,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioConfig {
    /// Defaults for everything except the dimensions and a uniform per-AP power.
    pub fn new(num_aps: usize, antennas_per_ap: usize, num_users: usize, power_w: f64) -> Self {
        ScenarioConfig {
            schema: default_config_schema(),
            num_aps,
            antennas_per_ap,
            num_users,
            area_side: default_area_side(),
            per_ap_power: vec![power_w; num_aps],
            bandwidth_hz: default_bandwidth(),
            shadow_std_db: default_shadow_std(),
            pathloss_offset_db: default_pathloss_offset(),
            pathloss_exponent_db_per_decade: default_pathloss_exponent(),
            correlation: Correlation::default(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn pathloss(&self) -> PathlossModel {
        PathlossModel {
            offset_db: self.pathloss_offset_db,
            exponent_db_per_decade: self.pathloss_exponent_db_per_decade,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCENARIO_CONFIG_SCHEMA {
            return Err(Error::config(
                "schema",
                format!("expected {SCENARIO_CONFIG_SCHEMA:?}, got {:?}", self.schema),
            ));
        }
        if self.num_aps == 0 {
            return Err(Error::config("num_aps", "must be at least 1"));
        }
        if self.antennas_per_ap == 0 {
            return Err(Error::config("antennas_per_ap", "must be at least 1"));
        }
        if self.num_users == 0 {
            return Err(Error::config("num_users", "must be at least 1"));
        }
        if !(self.area_side > 0.0 && self.area_side.is_finite()) {
            return Err(Error::config("area_side", "must be positive and finite"));
        }
        if self.per_ap_power.len() != self.num_aps {
            return Err(Error::config(
                "per_ap_power",
                format!("expected {} entries, got {}", self.num_aps, self.per_ap_power.len()),
            ));
        }
        if self.per_ap_power.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(Error::config("per_ap_power", "every entry must be positive and finite"));
        }
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return Err(Error::config("bandwidth_hz", "must be positive and finite"));
        }
        if !(self.shadow_std_db >= 0.0 && self.shadow_std_db.is_finite()) {
            return Err(Error::config("shadow_std_db", "must be non-negative and finite"));
        }
        if !self.pathloss_offset_db.is_finite() {
            return Err(Error::config("pathloss_offset_db", "must be finite"));
        }
        if !self.pathloss_exponent_db_per_decade.is_finite() {
            return Err(Error::config("pathloss_exponent_db_per_decade", "must be finite"));
        }
        if let Correlation::LocalScattering { angular_spread_deg } = self.correlation {
            if !(angular_spread_deg >= 0.0 && angular_spread_deg.is_finite()) {
                return Err(Error::config(
                    "correlation.angular_spread_deg",
                    "must be non-negative and finite",
                ));
            }
        }
        Ok(())
    }
}

/// A realized deployment. Channels are stored user-major: entry `(k, m, a)` lives at
/// `(k * M + m) * N + a`, so `user_channel(k)` is the stacked `h_k` of length `M N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub ap_positions: Vec<[f64; 2]>,
    pub user_positions: Vec<[f64; 2]>,
    channels: Vec<C64>,
    /// Noise power per user in watts.
    pub noise_power: Vec<f64>,
}

impl Scenario {
    pub fn from_parts(
        config: ScenarioConfig,
        ap_positions: Vec<[f64; 2]>,
        user_positions: Vec<[f64; 2]>,
        channels: Vec<C64>,
        noise_power: Vec<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let (m, n, k) = (config.num_aps, config.antennas_per_ap, config.num_users);
        check_len("ap_positions", m, ap_positions.len())?;
        check_len("user_positions", k, user_positions.len())?;
        check_len("channels", k * m * n, channels.len())?;
        check_len("noise_power", k, noise_power.len())?;
        if channels.iter().any(|h| !(h.re.is_finite() && h.im.is_finite())) {
            return Err(Error::NonFinite("channels"));
        }
        if noise_power.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::config("noise_power", "every entry must be positive and finite"));
        }
        Ok(Scenario {
            config,
            ap_positions,
            user_positions,
            channels,
            noise_power,
        })
    }

    /// Hand-built scenario with default geometry (all nodes at the origin).
    pub fn with_channels(
        per_ap_power: Vec<f64>,
        antennas_per_ap: usize,
        num_users: usize,
        channels: Vec<C64>,
        noise_power: Vec<f64>,
    ) -> Result<Self> {
        let num_aps = per_ap_power.len();
        let mut config = ScenarioConfig::new(num_aps, antennas_per_ap, num_users, 1.0);
        config.per_ap_power = per_ap_power;
        Scenario::from_parts(
            config,
            vec![[0.0, 0.0]; num_aps],
            vec![[0.0, 0.0]; num_users],
            channels,
            noise_power,
        )
    }

    pub fn num_aps(&self) -> usize {
        self.config.num_aps
    }
    pub fn antennas_per_ap(&self) -> usize {
        self.config.antennas_per_ap
    }
    pub fn num_users(&self) -> usize {
        self.config.num_users
    }
    pub fn per_ap_power(&self) -> &[f64] {
        &self.config.per_ap_power
    }

    pub fn channels(&self) -> &[C64] {
        &self.channels
    }

    pub fn channel(&self, user: usize, ap: usize) -> &[C64] {
        let n = self.antennas_per_ap();
        let start = (user * self.num_aps() + ap) * n;
        &self.channels[start..start + n]
    }

    pub fn user_channel(&self, user: usize) -> &[C64] {
        let len = self.num_aps() * self.antennas_per_ap();
        &self.channels[user * len..(user + 1) * len]
    }

    /// Same deployment with every per-AP budget replaced.
    pub fn with_power(&self, per_ap_power: Vec<f64>) -> Result<Self> {
        let mut config = self.config.clone();
        config.per_ap_power = per_ap_power;
        Scenario::from_parts(
            config,
            self.ap_positions.clone(),
            self.user_positions.clone(),
            self.channels.clone(),
            self.noise_power.clone(),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ScenarioFile::from(self);
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Scenario::from_json(&std::fs::read_to_string(path)?)
    }
}

fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            actual,
        });
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    schema: String,
    config: ScenarioConfig,
    ap_positions: Vec<[f64; 2]>,
    user_positions: Vec<[f64; 2]>,
    /// `channels[k][m][a] = [re, im]`
    channels: Vec<Vec<Vec<[f64; 2]>>>,
    noise_power_w: Vec<f64>,
}

impl From<&Scenario> for ScenarioFile {
    fn from(s: &Scenario) -> Self {
        let channels = (0..s.num_users())
            .map(|k| {
                (0..s.num_aps())
                    .map(|m| s.channel(k, m).iter().map(|h| [h.re, h.im]).collect())
                    .collect()
            })
            .collect();
        ScenarioFile {
            schema: SCENARIO_SCHEMA.to_string(),
            config: s.config.clone(),
            ap_positions: s.ap_positions.clone(),
            user_positions: s.user_positions.clone(),
            channels,
            noise_power_w: s.noise_power.clone(),
        }
    }
}

impl TryFrom<ScenarioFile> for Scenario {
    type Error = Error;

    fn try_from(file: ScenarioFile) -> Result<Self> {
        if file.schema != SCENARIO_SCHEMA {
            return Err(Error::Malformed(format!(
                "expected schema {SCENARIO_SCHEMA:?}, got {:?}",
                file.schema
            )));
        }
        let cfg = &file.config;
        let (m, n) = (cfg.num_aps, cfg.antennas_per_ap);
        if file.channels.len() != cfg.num_users {
            return Err(Error::Malformed(format!(
                "channels: expected {} users, got {}",
                cfg.num_users,
                file.channels.len()
            )));
        }
        let mut channels = Vec::with_capacity(cfg.num_users * m * n);
        for (k, per_user) in file.channels.iter().enumerate() {
            if per_user.len() != m {
                return Err(Error::Malformed(format!(
                    "channels[{k}]: expected {m} APs, got {}",
                    per_user.len()
                )));
            }
            for (ap, per_ap) in per_user.iter().enumerate() {
                if per_ap.len() != n {
                    return Err(Error::Malformed(format!(
                        "channels[{k}][{ap}]: expected {n} antennas, got {}",
                        per_ap.len()
                    )));
                }
                channels.extend(per_ap.iter().map(|[re, im]| C64::new(*re, *im)));
            }
        }
        Scenario::from_parts(
            file.config,
            file.ap_positions,
            file.user_positions,
            channels,
            file.noise_power_w,
        )
    }
}

/// `L` with `L L^H = R`, obtained from the Hermitian eigendecomposition so that
/// rank-deficient correlation matrices are handled.
#[derive(Debug, Clone)]
pub struct CorrelationFactor {
    factor: DMatrix<C64>,
}

impl CorrelationFactor {
    pub fn new(r: &DMatrix<C64>) -> Result<Self> {
        if r.nrows() != r.ncols() {
            return Err(Error::DimensionMismatch {
                what: "correlation matrix columns",
                expected: r.nrows(),
                actual: r.ncols(),
            });
        }
        if r.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite("correlation matrix"));
        }
        let scale = r.iter().map(|z| z.norm()).fold(1.0, f64::max);
        let asym = (r - r.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if asym > PSD_TOL * scale {
            return Err(Error::NotPsd {
                min_eigenvalue: f64::NAN,
            });
        }
        let hermitian = (r + r.adjoint()).scale(0.5);
        let eig = SymmetricEigen::new(hermitian);
        let min_eigenvalue = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_eigenvalue < -PSD_TOL * scale {
            return Err(Error::NotPsd { min_eigenvalue });
        }
        let max_eigenvalue = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let mut factor = eig.eigenvectors;
        for (j, lambda) in eig.eigenvalues.iter().enumerate() {
            // round-off eigenvalues of a rank-deficient matrix are treated as exact zeros
            let s = if *lambda <= PSD_TOL * max_eigenvalue { 0.0 } else { lambda.sqrt() };
            factor.column_mut(j).scale_mut(s);
        }
        Ok(CorrelationFactor { factor })
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    /// Draws `sqrt(gain) * L z` with `z ~ CN(0, I)`.
    pub fn sample<R: Rng + ?Sized>(&self, gain_linear: f64, rng: &mut R) -> DVector<C64> {
        let n = self.dim();
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        let z = DVector::from_fn(n, |_, _| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            C64::new(re * inv_sqrt2, im * inv_sqrt2)
        });
        (&self.factor * z).scale(gain_linear.max(0.0).sqrt())
    }
}

/// One spatially correlated Rayleigh draw `h ~ CN(0, gain * R)`.
pub fn sample_channel<R: Rng + ?Sized>(
    gain_linear: f64,
    correlation: &DMatrix<C64>,
    rng: &mut R,
) -> Result<DVector<C64>> {
    if !(gain_linear >= 0.0 && gain_linear.is_finite()) {
        return Err(Error::config("gain_linear", "must be non-negative and finite"));
    }
    Ok(CorrelationFactor::new(correlation)?.sample(gain_linear, rng))
}

/// Local-scattering correlation of a half-wavelength ULA: the empirical average of
/// `exp(j pi (a - b) sin(theta_s))` over `angles`.
pub fn local_scattering_correlation(antennas: usize, angles: &[f64]) -> DMatrix<C64> {
    let count = angles.len().max(1) as f64;
    let mut r = DMatrix::from_element(antennas, antennas, C64::new(0.0, 0.0));
    for &theta in angles {
        let phase = std::f64::consts::PI * theta.sin();
        for a in 0..antennas {
            for b in 0..antennas {
                r[(a, b)] += C64::from_polar(1.0, phase * (a as f64 - b as f64));
            }
        }
    }
    r.unscale_mut(count);
    r
}

fn uniform_point<R: Rng + ?Sized>(side: f64, rng: &mut R) -> [f64; 2] {
    [rng.random::<f64>() * side, rng.random::<f64>() * side]
}

/// Draws a full deployment. Every random quantity comes from one ChaCha8 stream seeded
/// with `config.seed`, consumed in a fixed order, so the output is a pure function of the config.
pub fn generate_scenario(config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (m_aps, n, k_users) = (config.num_aps, config.antennas_per_ap, config.num_users);

    let ap_positions: Vec<_> = (0..m_aps).map(|_| uniform_point(config.area_side, &mut rng)).collect();
    let user_positions: Vec<_> =
        (0..k_users).map(|_| uniform_point(config.area_side, &mut rng)).collect();

    let pathloss = config.pathloss();
    let identity = DMatrix::<C64>::identity(n, n);
    let identity_factor = CorrelationFactor::new(&identity)?;
    let mut channels = Vec::with_capacity(k_users * m_aps * n);
    for user in &user_positions {
        for ap in &ap_positions {
            let dx = user[0] - ap[0];
            let dy = user[1] - ap[1];
            let distance = dx.hypot(dy);
            let shadow: f64 = config.shadow_std_db * rng.sample::<f64, _>(StandardNormal);
            let gain = db_to_linear(pathloss.fading_db(distance, shadow)?);
            let h = match config.correlation {
                Correlation::Uncorrelated => identity_factor.sample(gain, &mut rng),
                Correlation::LocalScattering { angular_spread_deg } => {
                    let nominal = dy.atan2(dx);
                    let spread = angular_spread_deg.to_radians();
                    let angles: Vec<f64> = (0..LOCAL_SCATTERING_PATHS)
                        .map(|_| nominal + spread * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    let r = local_scattering_correlation(n, &angles);
                    CorrelationFactor::new(&r)?.sample(gain, &mut rng)
                }
            };
            channels.extend(h.iter().cloned());
        }
    }

    let noise_w = dbm_to_watt(noise_power_dbm(config.bandwidth_hz));
    Scenario::from_parts(
        config.clone(),
        ap_positions,
        user_positions,
        channels,
        vec![noise_w; k_users],
    )
}
