//! Synthetic disturbance series for tests, demos and default scenarios.
//!
//! Ambient temperature follows a daily sinusoid peaking mid-afternoon,
//! irradiance a clipped half-sine between 06:00 and 18:00 scaled by a
//! per-day cloudiness factor, and internal gains switch between occupied
//! (08:00–18:00) and unoccupied levels.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::model::Disturbance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeatherConfig {
    pub t_a_mean: f64,
    pub t_a_amplitude: f64,
    /// Standard deviation of the per-step ambient perturbation, °C.
    pub t_a_noise: f64,
    /// Clear-sky noon irradiance, W/m².
    pub g_peak: f64,
    pub i_g_occupied: f64,
    pub i_g_unoccupied: f64,
}

impl Default for WeatherConfig {
    fn default() -> Self {
        Self { t_a_mean: 30.0, t_a_amplitude: 4.0, t_a_noise: 0.2, g_peak: 700.0, i_g_occupied: 2500.0, i_g_unoccupied: 1500.0 }
    }
}

/// Hour of day (0–24) at slot `k` of length `delta_t` seconds.
pub fn hour_of_day(k: usize, delta_t: f64) -> f64 {
    (k as f64 * delta_t / 3600.0).rem_euclid(24.0)
}

pub fn is_working_hour(hour: f64) -> bool {
    (8.0..18.0).contains(&hour)
}

pub fn synthetic_disturbances(cfg: &WeatherConfig, seed: u64, n_steps: usize, delta_t: f64) -> Vec<Disturbance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.t_a_noise.max(0.0)).expect("non-negative sigma");
    let steps_per_day = (86_400.0 / delta_t).round().max(1.0) as usize;
    let mut cloud = 1.0;
    (0..n_steps)
        .map(|k| {
            if k % steps_per_day == 0 {
                cloud = rng.random_range(0.6..1.0);
            }
            let hour = hour_of_day(k, delta_t);
            let t_a = cfg.t_a_mean + cfg.t_a_amplitude * (2.0 * PI * (hour - 9.0) / 24.0).sin() + noise.sample(&mut rng);
            let g = if (6.0..18.0).contains(&hour) { cfg.g_peak * cloud * (PI * (hour - 6.0) / 12.0).sin() } else { 0.0 };
            let i_g = if is_working_hour(hour) { cfg.i_g_occupied } else { cfg.i_g_unoccupied };
            Disturbance { t_a, g: g.max(0.0), i_g }
        })
        .collect()
}
