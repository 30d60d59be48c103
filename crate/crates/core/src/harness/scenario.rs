use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::climate::{NoiseConfig, DEFAULT_HORIZON};
use crate::error::{Error, Result};
use crate::fan::FanCurves;
use crate::model::{DiscreteBuildingModel, Disturbance, DEFAULT_STEP_S};
use crate::regulation::{GainSchedule, DEFAULT_EPSILON, DEFAULT_NOISE_W, DEFAULT_TAU_S};
use crate::scheduler::{SymmetryMode, DEFAULT_COMFORT_PENALTY};
use crate::signal::{self, RegulationSignal};
use crate::timeio;
use crate::weather::{self, WeatherConfig};

/// A building model given by name or by its matrix entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    /// `"reference_new"` or `"reference_old"`.
    Named(String),
    Explicit(DiscreteBuildingModel),
}

impl ModelSpec {
    pub fn resolve(&self) -> Result<DiscreteBuildingModel> {
        let m = match self {
            ModelSpec::Named(n) => match n.as_str() {
                "reference_new" => DiscreteBuildingModel::reference_new(),
                "reference_old" => DiscreteBuildingModel::reference_old(),
                other => return Err(Error::invalid("model", format!("unknown model `{other}`; use reference_new, reference_old or explicit entries"))),
            },
            ModelSpec::Explicit(m) => *m,
        };
        m.validate()?;
        if (m.delta_t - DEFAULT_STEP_S).abs() > 1e-9 {
            return Err(Error::invalid("model", format!("step must be {DEFAULT_STEP_S} s, got {}", m.delta_t)));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisturbanceSource {
    Synthetic(WeatherConfig),
    /// CSV with header `timestamp,t_a,g,i_g`, one row per 15-min slot from
    /// the experiment start.
    Csv { path: PathBuf },
}

impl Default for DisturbanceSource {
    fn default() -> Self {
        DisturbanceSource::Synthetic(WeatherConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalSource {
    /// Band-limited noise; band edges in Hz.
    Synthetic { band: [f64; 2] },
    /// CSV with header `timestamp,w`; its first sample is aligned with the
    /// experiment start.
    Csv { path: PathBuf },
    /// The same value throughout.
    Constant { w: f64 },
}

impl Default for SignalSource {
    fn default() -> Self {
        SignalSource::Synthetic { band: [1.0 / 3600.0, 1.0 / 120.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarketConfig {
    /// Multiplies the synthetic reserve prices; 0 disables reserves.
    pub reserve_price_scale: f64,
    pub energy_price_scale: f64,
    /// Fixed activation bound; when absent it is the percentile below of
    /// the regulation signal's 15-min energy content.
    pub w_lim: Option<f64>,
    pub w_lim_percentile: f64,
    pub symmetry: SymmetryMode,
    pub comfort_penalty: f64,
    /// Use exact envelopes in the day-ahead schedule.
    pub exact: bool,
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            reserve_price_scale: 1.0,
            energy_price_scale: 1.0,
            w_lim: None,
            w_lim_percentile: 97.5,
            symmetry: SymmetryMode::default(),
            comfort_penalty: DEFAULT_COMFORT_PENALTY,
            exact: true,
        }
    }
}

/// Forecast error model: per issue time, an AR(1) sequence over lead time
/// added to the true ambient temperature and irradiance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastNoise {
    pub phi: f64,
    pub sigma_t_a: f64,
    pub sigma_g: f64,
}

impl Default for ForecastNoise {
    fn default() -> Self {
        Self { phi: 0.9, sigma_t_a: 0.3, sigma_g: 30.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSettings {
    /// Standard deviation of the room-temperature sensor, °C.
    pub measurement_sigma: f64,
    pub ekf: NoiseConfig,
    pub forecast: ForecastNoise,
}

impl Default for NoiseSettings {
    fn default() -> Self {
        Self { measurement_sigma: 0.1, ekf: NoiseConfig::default(), forecast: ForecastNoise::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackingConfig {
    pub epsilon: f64,
    pub tau: f64,
    pub sigma_p: f64,
    pub gains: GainSchedule,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self { epsilon: DEFAULT_EPSILON, tau: DEFAULT_TAU_S, sigma_p: DEFAULT_NOISE_W, gains: GainSchedule::default() }
    }
}

fn default_name() -> String {
    "default".into()
}
fn default_start() -> String {
    "2024-07-01T00:00:00Z".into()
}
fn default_days() -> usize {
    1
}
fn default_truth() -> ModelSpec {
    ModelSpec::Named("reference_new".into())
}
fn default_controller() -> ModelSpec {
    ModelSpec::Named("reference_old".into())
}
fn default_x0() -> [f64; 2] {
    [23.0, 28.0]
}
fn default_horizon() -> usize {
    DEFAULT_HORIZON
}

/// Everything an experiment needs. Relative CSV paths are resolved against
/// the scenario file's directory by [`Scenario::load`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    /// Start of the first slot, ISO-8601; must be a UTC midnight.
    #[serde(default = "default_start")]
    pub start: String,
    #[serde(default = "default_days")]
    pub days: usize,
    #[serde(default)]
    pub seed: u64,
    /// Model of the simulated cells.
    #[serde(default = "default_truth")]
    pub truth_model: ModelSpec,
    /// Model used by levels 1 and 2.
    #[serde(default = "default_controller")]
    pub controller_model: ModelSpec,
    #[serde(default)]
    pub fan: Option<FanCurves>,
    #[serde(default)]
    pub disturbances: DisturbanceSource,
    #[serde(default)]
    pub signal: SignalSource,
    #[serde(default)]
    pub market: MarketConfig,
    #[serde(default)]
    pub noise: NoiseSettings,
    #[serde(default)]
    pub tracking: TrackingConfig,
    /// True initial `[T_r, T_m]` of both cells, °C.
    #[serde(default = "default_x0")]
    pub x0: [f64; 2],
    #[serde(default = "default_horizon")]
    pub mpc_horizon: usize,
}

impl Default for Scenario {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

/// Seeds of the independent random streams, derived from the scenario seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Seeds {
    pub weather: u64,
    pub signal: u64,
    pub market: u64,
    pub forecast: u64,
    pub measurement: u64,
    pub fan: u64,
}

/// Seed of the `index`-th member of a sweep.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut s: Scenario = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            match &mut s.disturbances {
                DisturbanceSource::Csv { path } => Some(path),
                _ => None,
            },
            match &mut s.signal {
                SignalSource::Csv { path } => Some(path),
                _ => None,
            },
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(s)
    }

    pub fn steps_per_day() -> usize {
        (86_400.0 / DEFAULT_STEP_S) as usize
    }

    pub fn n_steps(&self) -> usize {
        self.days * Self::steps_per_day()
    }

    pub fn start_seconds(&self) -> Result<f64> {
        let t = timeio::parse_timestamp(&self.start).map_err(|e| Error::invalid("start", e))?;
        if t.rem_euclid(86_400.0) != 0.0 {
            return Err(Error::invalid("start", format!("`{}` is not a UTC midnight", self.start)));
        }
        Ok(t)
    }

    pub fn curves(&self) -> FanCurves {
        self.fan.clone().unwrap_or_else(FanCurves::reference)
    }

    pub(crate) fn seeds(&self) -> Seeds {
        let d = |i| derive_seed(self.seed, i);
        Seeds { weather: d(1), signal: d(2), market: d(3), forecast: d(4), measurement: d(5), fan: d(6) }
    }

    /// Checks every parameter that does not need the external series.
    pub fn validate(&self) -> Result<()> {
        self.start_seconds()?;
        self.truth_model.resolve()?;
        self.controller_model.resolve()?;
        self.curves().validate()?;
        self.noise.ekf.validate()?;
        self.tracking.gains.validate()?;
        if !(self.noise.measurement_sigma >= 0.0) {
            return Err(Error::invalid("measurement_sigma", "must be non-negative"));
        }
        let f = &self.noise.forecast;
        if !(f.phi.abs() < 1.0 && f.sigma_t_a >= 0.0 && f.sigma_g >= 0.0) {
            return Err(Error::invalid("forecast", "need |phi| < 1 and non-negative sigmas"));
        }
        if !(self.tracking.epsilon > 0.0 && self.tracking.tau > 0.0 && self.tracking.sigma_p >= 0.0) {
            return Err(Error::invalid("tracking", "need epsilon > 0, tau > 0, sigma_p >= 0"));
        }
        let m = &self.market;
        if !(m.reserve_price_scale >= 0.0 && m.energy_price_scale > 0.0) {
            return Err(Error::invalid("market", "price scales must be non-negative (energy: positive)"));
        }
        if let Some(w) = m.w_lim {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::invalid("w_lim", format!("must lie in [0, 1], got {w}")));
            }
        }
        if !(m.w_lim_percentile > 0.0 && m.w_lim_percentile <= 100.0) {
            return Err(Error::invalid("w_lim_percentile", "must lie in (0, 100]"));
        }
        if self.mpc_horizon == 0 {
            return Err(Error::invalid("mpc_horizon", "must be at least 1"));
        }
        if !self.x0.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("x0", "must be finite"));
        }
        Ok(())
    }

    /// True disturbances for every slot of the experiment.
    pub fn load_disturbances(&self) -> Result<Vec<Disturbance>> {
        let n = self.n_steps();
        let v = match &self.disturbances {
            DisturbanceSource::Synthetic(cfg) => weather::synthetic_disturbances(cfg, self.seeds().weather, n, DEFAULT_STEP_S),
            DisturbanceSource::Csv { path } => read_disturbances(path)?,
        };
        if v.len() < n {
            return Err(Error::InsufficientData(format!("disturbance series has {} slots, the experiment needs {n}", v.len())));
        }
        let v = v[..n].to_vec();
        for d in &v {
            d.validate()?;
        }
        Ok(v)
    }

    /// Regulation signal aligned so that `at(0)` is the experiment start.
    pub fn load_signal(&self) -> Result<RegulationSignal> {
        let duration = self.n_steps() as f64 * DEFAULT_STEP_S;
        let s = match &self.signal {
            SignalSource::Synthetic { band } => {
                if duration == 0.0 {
                    RegulationSignal::new(0.0, signal::DEFAULT_PERIOD_S, Vec::new())?
                } else {
                    signal::generate_synthetic(self.seeds().signal, duration, *band)?
                }
            }
            SignalSource::Csv { path } => signal::load_signal(path)?,
            SignalSource::Constant { w } => {
                let n = (duration / signal::DEFAULT_PERIOD_S).ceil() as usize;
                RegulationSignal::new(0.0, signal::DEFAULT_PERIOD_S, vec![*w; n])?
            }
        };
        if (s.period_s - signal::DEFAULT_PERIOD_S).abs() > 1e-9 {
            return Err(Error::invalid("signal", format!("sample period must be {} s, got {}", signal::DEFAULT_PERIOD_S, s.period_s)));
        }
        if s.duration_s() + 1e-9 < duration {
            return Err(Error::InsufficientData(format!("regulation signal covers {} s, the experiment needs {duration} s", s.duration_s())));
        }
        Ok(RegulationSignal { start: 0.0, ..s })
    }
}

#[derive(Deserialize)]
struct DisturbanceRow {
    #[allow(dead_code)]
    timestamp: String,
    t_a: f64,
    g: f64,
    i_g: f64,
}

fn read_disturbances(path: &Path) -> Result<Vec<Disturbance>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<DisturbanceRow>().enumerate() {
        let r = row.map_err(|e| Error::BadDataRow { row: i + 2, reason: e.to_string() })?;
        out.push(Disturbance::new(r.t_a, r.g, r.i_g));
    }
    Ok(out)
}
