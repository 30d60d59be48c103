//! Level 2: robust MPC around the day-ahead reserves and the extended
//! Kalman filter that feeds it.

mod kalman;
mod mpc;

pub use kalman::{kf_predict, kf_update, ljung_box, Ekf, KalmanState, LjungBox, NoiseConfig};
pub use mpc::{mpc_energy_only, mpc_step, MpcConfig, MpcInputs, MpcPlan, DEFAULT_HORIZON};
