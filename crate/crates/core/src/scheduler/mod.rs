//! Day-ahead robust reserve scheduling.
//!
//! For every slot `k` the scheduler chooses an operating flow `u_k` and
//! thermal reserves `r_u,k`, `r_d,k`, which translate into electric reserve
//! capacities `R_u,k = f(u_k) − f(u_k − r_d,k)` and
//! `R_d,k = f(u_k + r_u,k) − f(u_k)`. Robustness against any regulation
//! request with energy content up to `w_lim` is enforced on two worst-case
//! envelopes: the warmest trajectory (least flow) must stay below the comfort
//! ceiling and the coolest (most flow) above the comfort floor.
//!
//! Two envelope models are available. The exact one drives the envelopes
//! with `f⁻¹(f(u) ∓ w_lim R)`; the linearised one with `u − w_lim r_d` and
//! `u + w_lim r_u`. For `0 < w_lim < 1` the linearised envelopes lie above
//! the exact ones (the approximation is conservative on the warm side) and
//! at `w_lim = 1` both coincide.

mod envelope;
mod problem;
mod robust;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fan::FanCurves;
use crate::model::{BuildingState, DiscreteBuildingModel, Disturbance};
use crate::nlp::{self, SolveOptions, SolveReport};
use crate::weather;

pub(crate) use envelope::{lower_flow, propagate, upper_flow, Trajectory};
pub use robust::{verify_schedule, RobustnessReport};

pub use problem::ScheduleProblem;

/// Comfort penalty, $ per °C of violation per step.
pub const DEFAULT_COMFORT_PENALTY: f64 = 1e4;

/// Hourly reserve blocks at 15-minute resolution.
pub const DEFAULT_BLOCK_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymmetryMode {
    /// Up and down reserves chosen independently.
    None,
    /// `R_u,k = R_d,k`.
    ElectricSymmetric,
    /// `r_u,k = r_d,k`.
    #[default]
    ThermalSymmetric,
}

fn default_block_len() -> usize {
    DEFAULT_BLOCK_LEN
}

fn default_penalty() -> f64 {
    DEFAULT_COMFORT_PENALTY
}

/// Prices, forecasts and product rules for one scheduling horizon.
///
/// Prices are per step: the energy cost of slot `k` is
/// `energy_price[k] · f(u_k)` and its reserve revenue
/// `reserve_price[k] · (R_u,k + R_d,k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketScenario {
    /// $/W per step.
    pub energy_price: Vec<f64>,
    /// $/W per step.
    pub reserve_price: Vec<f64>,
    pub disturbances: Vec<Disturbance>,
    /// Comfort band for the temperature reached at the end of each slot, °C.
    pub comfort_min: Vec<f64>,
    pub comfort_max: Vec<f64>,
    pub w_lim: f64,
    /// `[u_min, u_max]` the flow must respect under any activation, kg/s.
    pub flow_bounds: [f64; 2],
    /// Reserve block length in steps; 1 disables blocks.
    #[serde(default = "default_block_len")]
    pub block_len: usize,
    #[serde(default)]
    pub symmetry: SymmetryMode,
    #[serde(default = "default_penalty")]
    pub comfort_penalty: f64,
}

/// Default comfort band: 21–24 °C during working hours (08:00–18:00),
/// 19–26 °C otherwise.
pub fn default_comfort_band(hour: f64) -> (f64, f64) {
    if weather::is_working_hour(hour) {
        (21.0, 24.0)
    } else {
        (19.0, 26.0)
    }
}

impl MarketScenario {
    /// A scenario with synthetic prices: time-of-use energy at 0.12 $/kWh
    /// (0.28 $/kWh from 12:00 to 18:00) and hourly reserve prices scattered
    /// ±30 % around 100 $/MW·h. Flow bounds are the fan's 20 % and 80 %
    /// speeds; `start_step` fixes the time of day of the first slot.
    pub fn synthetic(curves: &FanCurves, disturbances: Vec<Disturbance>, start_step: usize, delta_t: f64, w_lim: f64, seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = disturbances.len();
        let hours = delta_t / 3600.0;
        let steps_per_hour = (3600.0 / delta_t).round().max(1.0) as usize;
        let mut energy_price = Vec::with_capacity(n);
        let mut reserve_price = Vec::with_capacity(n);
        let mut comfort_min = Vec::with_capacity(n);
        let mut comfort_max = Vec::with_capacity(n);
        let mut hourly = 0.0;
        for k in 0..n {
            let step = start_step + k;
            let hour = weather::hour_of_day(step, delta_t);
            let kwh = if (12.0..18.0).contains(&hour) { 0.28 } else { 0.12 };
            energy_price.push(kwh / 1000.0 * hours);
            if k == 0 || step % steps_per_hour == 0 {
                hourly = 100.0 * (1.0 + rng.random_range(-0.3..0.3));
            }
            reserve_price.push(hourly * 1e-6 * hours);
            let (lo, hi) = default_comfort_band(weather::hour_of_day(step + 1, delta_t));
            comfort_min.push(lo);
            comfort_max.push(hi);
        }
        Self {
            energy_price,
            reserve_price,
            disturbances,
            comfort_min,
            comfort_max,
            w_lim,
            flow_bounds: [curves.h(20.0), curves.h(80.0)],
            block_len: DEFAULT_BLOCK_LEN,
            symmetry: SymmetryMode::default(),
            comfort_penalty: DEFAULT_COMFORT_PENALTY,
        }
    }

    pub fn horizon(&self) -> usize {
        self.energy_price.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.horizon();
        for (what, len) in [
            ("reserve prices", self.reserve_price.len()),
            ("disturbance forecasts", self.disturbances.len()),
            ("comfort minima", self.comfort_min.len()),
            ("comfort maxima", self.comfort_max.len()),
        ] {
            if len != n {
                return Err(Error::LengthMismatch { what, left: n, right: len });
            }
        }
        if let Some(k) = (0..n).find(|&k| !(self.comfort_min[k] < self.comfort_max[k])) {
            return Err(Error::invalid("comfort band", format!("empty at step {k}")));
        }
        if !(0.0..=1.0).contains(&self.w_lim) {
            return Err(Error::invalid("w_lim", format!("must lie in [0, 1], got {}", self.w_lim)));
        }
        let [lo, hi] = self.flow_bounds;
        if !(lo < hi) {
            return Err(Error::invalid("flow_bounds", format!("need u_min < u_max, got [{lo}, {hi}]")));
        }
        if self.block_len == 0 {
            return Err(Error::invalid("block_len", "must be at least 1"));
        }
        if !(self.comfort_penalty > 0.0) {
            return Err(Error::invalid("comfort_penalty", "must be positive"));
        }
        for d in &self.disturbances {
            d.validate()?;
        }
        Ok(())
    }

    /// Cooling-mode check: the supply air must not be warmer than the
    /// comfort floor at any step.
    pub fn check_cooling(&self, model: &DiscreteBuildingModel) -> Result<()> {
        if let Some(k) = self.comfort_min.iter().position(|&m| model.t_s > m) {
            return Err(Error::CoolingAssumption(format!(
                "supply temperature {} °C exceeds the comfort floor {} °C at step {k}",
                model.t_s, self.comfort_min[k]
            )));
        }
        Ok(())
    }

    /// Block start for step `k`, blocks aligned to step 0.
    pub fn block_start(&self, k: usize) -> usize {
        k - k % self.block_len
    }
}

/// Solved day-ahead schedule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReserveSchedule {
    pub u: Vec<f64>,
    pub r_u: Vec<f64>,
    pub r_d: Vec<f64>,
    /// Electric up/down reserve per step, W.
    pub reserve_up: Vec<f64>,
    pub reserve_down: Vec<f64>,
    /// Envelope states `x_0..x_N`; `upper` is the warm one.
    pub upper: Vec<BuildingState>,
    pub lower: Vec<BuildingState>,
    pub objective: f64,
    pub energy_cost: f64,
    pub reserve_revenue: f64,
    pub comfort_slack: f64,
    pub w_lim: f64,
    pub exact: bool,
    pub solve: SolveReport,
}

impl ReserveSchedule {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// A schedule with no reserves, used beyond the last scheduled day.
    pub fn zero_reserve(u: Vec<f64>, x0: BuildingState) -> Self {
        let n = u.len();
        Self {
            r_u: vec![0.0; n],
            r_d: vec![0.0; n],
            reserve_up: vec![0.0; n],
            reserve_down: vec![0.0; n],
            upper: vec![x0],
            lower: vec![x0],
            objective: 0.0,
            energy_cost: 0.0,
            reserve_revenue: 0.0,
            comfort_slack: 0.0,
            w_lim: 0.0,
            exact: false,
            solve: SolveReport {
                z: Vec::new(),
                objective: 0.0,
                stationarity: 0.0,
                max_violation: 0.0,
                iterations: 0,
                inner_iterations: 0,
                converged: true,
                ineq_multipliers: Vec::new(),
                eq_multipliers: Vec::new(),
            },
            u,
        }
    }
}

/// Solver choices for [`schedule`].
#[derive(Debug, Clone, Default)]
pub struct ScheduleOptions {
    /// Use the exact inverse-fan-curve envelopes instead of the linearised ones.
    pub exact: bool,
    /// Pin all reserves to zero (energy-only reference problem).
    pub zero_reserves: bool,
    /// Initial decisions; a cold start uses mid-range flow and no reserves.
    pub warm_start: Option<(Vec<f64>, Vec<f64>, Vec<f64>)>,
    pub solve: SolveOptions,
}

/// Linearised-envelope schedule.
pub fn schedule_reserves(model: &DiscreteBuildingModel, curves: &FanCurves, scenario: &MarketScenario, x0: BuildingState) -> Result<ReserveSchedule> {
    schedule(model, curves, scenario, x0, &ScheduleOptions::default())
}

/// Exact-envelope schedule.
pub fn schedule_reserves_exact(model: &DiscreteBuildingModel, curves: &FanCurves, scenario: &MarketScenario, x0: BuildingState) -> Result<ReserveSchedule> {
    schedule(model, curves, scenario, x0, &ScheduleOptions { exact: true, ..ScheduleOptions::default() })
}

pub fn schedule(
    model: &DiscreteBuildingModel,
    curves: &FanCurves,
    scenario: &MarketScenario,
    x0: BuildingState,
    opts: &ScheduleOptions,
) -> Result<ReserveSchedule> {
    scenario.validate()?;
    model.validate()?;
    curves.validate()?;
    scenario.check_cooling(model)?;
    if !x0.is_finite() {
        return Err(Error::invalid("x0", "initial state must be finite"));
    }
    let problem = ScheduleProblem::new(model, curves, scenario, x0, opts.exact, opts.zero_reserves);
    let z0 = problem.initial_point(opts.warm_start.as_ref());
    let report = nlp::solve(&problem, &z0, &opts.solve);
    if !report.converged {
        log::warn!(
            "reserve scheduling did not converge (violation {:.2e}, stationarity {:.2e})",
            report.max_violation,
            report.stationarity
        );
    }
    Ok(problem.finish(report))
}

/// Least and largest flow the fan can be driven to by any activation in
/// `[-w_lim, w_lim]` around baseline `u` with thermal reserves `r_u`, `r_d`.
pub fn envelope_flows(curves: &FanCurves, u: f64, r_u: f64, r_d: f64, w_lim: f64, exact: bool) -> [f64; 2] {
    [upper_flow(curves, u, r_d, w_lim, exact).q, lower_flow(curves, u, r_u, w_lim, exact).q]
}

/// Envelopes of fixed decisions under either envelope model.
pub fn evaluate_envelopes(
    model: &DiscreteBuildingModel,
    curves: &FanCurves,
    scenario: &MarketScenario,
    x0: BuildingState,
    u: &[f64],
    r_u: &[f64],
    r_d: &[f64],
    exact: bool,
) -> (Vec<BuildingState>, Vec<BuildingState>) {
    let w = scenario.w_lim;
    let qh: Vec<f64> = (0..u.len()).map(|k| upper_flow(curves, u[k], r_d[k], w, exact).q).collect();
    let ql: Vec<f64> = (0..u.len()).map(|k| lower_flow(curves, u[k], r_u[k], w, exact).q).collect();
    (
        propagate(model, x0, &qh, &scenario.disturbances, false).states,
        propagate(model, x0, &ql, &scenario.disturbances, false).states,
    )
}

/// Writes `k,u,r_u,r_d,R_u,R_d,x_hi,x_lo`; the envelope columns are the room
/// temperatures at the end of each slot.
pub fn write_schedule_csv(schedule: &ReserveSchedule, path: &Path) -> Result<usize> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    wtr.write_record(["k", "u", "r_u", "r_d", "R_u", "R_d", "x_hi", "x_lo"]).map_err(|e| Error::csv(path, e))?;
    for k in 0..schedule.len() {
        let hi = schedule.upper.get(k + 1).map_or(String::new(), |x| x.t_r.to_string());
        let lo = schedule.lower.get(k + 1).map_or(String::new(), |x| x.t_r.to_string());
        wtr.write_record([
            k.to_string(),
            schedule.u[k].to_string(),
            schedule.r_u[k].to_string(),
            schedule.r_d[k].to_string(),
            schedule.reserve_up[k].to_string(),
            schedule.reserve_down[k].to_string(),
            hi,
            lo,
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(schedule.len())
}

#[cfg(test)]
mod tests;
