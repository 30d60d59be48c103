use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::model::{BuildingState, DiscreteBuildingModel, Disturbance};

/// Process and measurement noise. Only the room temperature is measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Process covariance, row major, °C².
    pub q: [[f64; 2]; 2],
    /// Measurement variance, °C².
    pub r: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { q: [[0.4, 0.0], [0.0, 0.4]], r: 0.1 }
    }
}

impl NoiseConfig {
    pub fn q_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.q[0][0], self.q[0][1], self.q[1][0], self.q[1][1])
    }

    /// Rejects a non-symmetric or indefinite `Q` and a non-positive `R`.
    /// A matrix like `[0.4 0; 0.4 0]` is a common misprint of `diag(0.4, 0.4)`
    /// and is refused rather than silently reinterpreted.
    pub fn validate(&self) -> Result<()> {
        let q = self.q_matrix();
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("Q", "entries must be finite"));
        }
        if (q[(0, 1)] - q[(1, 0)]).abs() > 1e-12 * q.abs().max().max(1.0) {
            return Err(Error::invalid("Q", format!("must be symmetric, got {:?}; a diagonal covariance is written [[q1, 0], [0, q2]]", self.q)));
        }
        let det = q[(0, 0)] * q[(1, 1)] - q[(0, 1)] * q[(1, 0)];
        if q[(0, 0)] < 0.0 || q[(1, 1)] < 0.0 || det < -1e-15 {
            return Err(Error::invalid("Q", "must be positive semidefinite"));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::invalid("R", format!("must be positive, got {}", self.r)));
        }
        Ok(())
    }
}

/// Estimate and error covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState {
    pub x: BuildingState,
    pub p: Matrix2<f64>,
}

impl KalmanState {
    pub fn new(x: BuildingState, p: Matrix2<f64>) -> Self {
        Self { x, p }
    }
}

fn symmetrize(p: Matrix2<f64>) -> Matrix2<f64> {
    (p + p.transpose()) * 0.5
}

/// A priori step: the estimate follows the model and the covariance is
/// propagated with the state Jacobian `A + B_xu u`.
pub fn kf_predict(model: &DiscreteBuildingModel, state: &KalmanState, u: f64, v: Disturbance, noise: &NoiseConfig) -> KalmanState {
    let f = model.state_jacobian(u);
    KalmanState { x: model.step(state.x, u, v), p: symmetrize(f * state.p * f.transpose() + noise.q_matrix()) }
}

/// Measurement update with the room temperature `y`. The covariance uses the
/// Joseph form, which equals `(I - K C) P` for this gain but stays
/// positive semidefinite under rounding.
pub fn kf_update(state: &KalmanState, y: f64, noise: &NoiseConfig) -> KalmanState {
    let p = state.p;
    let s = p[(0, 0)] + noise.r;
    let k = Vector2::new(p[(0, 0)] / s, p[(1, 0)] / s);
    let innovation = y - state.x.t_r;
    let x = BuildingState::new(state.x.t_r + k[0] * innovation, state.x.t_m + k[1] * innovation);
    let ikc = Matrix2::new(1.0 - k[0], 0.0, -k[1], 1.0);
    let p = ikc * p * ikc.transpose() + k * k.transpose() * noise.r;
    KalmanState { x, p: symmetrize(p) }
}

/// Filter with its noise model and a record of normalised innovations.
#[derive(Debug, Clone)]
pub struct Ekf {
    pub state: KalmanState,
    pub noise: NoiseConfig,
    /// Innovations `y - C x̂⁻`, °C.
    pub innovations: Vec<f64>,
}

impl Ekf {
    pub fn new(x0: BuildingState, p0: Matrix2<f64>, noise: NoiseConfig) -> Result<Self> {
        noise.validate()?;
        Ok(Self { state: KalmanState::new(x0, p0), noise, innovations: Vec::new() })
    }

    pub fn predict(&mut self, model: &DiscreteBuildingModel, u: f64, v: Disturbance) {
        self.state = kf_predict(model, &self.state, u, v, &self.noise);
    }

    pub fn update(&mut self, y: f64) {
        self.innovations.push(y - self.state.x.t_r);
        self.state = kf_update(&self.state, y, &self.noise);
    }

    pub fn estimate(&self) -> BuildingState {
        self.state.x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LjungBox {
    pub statistic: f64,
    pub lags: usize,
    pub p_value: f64,
}

/// Ljung–Box portmanteau test for whiteness of `series` over `lags` lags.
pub fn ljung_box(series: &[f64], lags: usize) -> Result<LjungBox> {
    let n = series.len();
    if lags == 0 || n <= lags + 1 {
        return Err(Error::InsufficientData(format!("Ljung-Box with {lags} lags needs more than {} samples, got {n}", lags + 1)));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let c0: f64 = series.iter().map(|x| (x - mean).powi(2)).sum();
    if c0 == 0.0 {
        return Err(Error::invalid("series", "constant series has no autocorrelation"));
    }
    let mut q = 0.0;
    for k in 1..=lags {
        let ck: f64 = (k..n).map(|t| (series[t] - mean) * (series[t - k] - mean)).sum();
        let rho = ck / c0;
        q += rho * rho / (n - k) as f64;
    }
    let statistic = n as f64 * (n as f64 + 2.0) * q;
    let chi = ChiSquared::new(lags as f64).map_err(|e| Error::invalid("lags", e.to_string()))?;
    Ok(LjungBox { statistic, lags, p_value: 1.0 - chi.cdf(statistic) })
}
