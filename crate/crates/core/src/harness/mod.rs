//! The three-level closed loop against a pair of simulated cells.
//!
//! One cell sells reserves: a day-ahead schedule fixes its capacities, a
//! 15-min robust MPC with an EKF picks the flow, and the 4-s switched
//! controller tracks the regulation signal around it. The benchmark cell
//! sees the same weather, sensor noise and fan noise but runs energy-only
//! MPC and holds its fan power at the baseline.

mod export;
mod scenario;


use nalgebra::Matrix2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::climate::{mpc_energy_only, mpc_step, Ekf, MpcConfig, MpcInputs, MpcPlan};
use crate::error::{Error, Result};
use crate::fan::FanCurves;
use crate::model::{BuildingState, Disturbance, DEFAULT_STEP_S};
use crate::regulation::{settled_share, tracking_rmse, TrackingLoop, TrackingRow, TrackingSlot, LOOP_PERIOD_S};
use crate::scheduler::{schedule, MarketScenario, ReserveSchedule, ScheduleOptions};
use crate::signal::{energy_content, wlim_from_percentile, RegulationSignal, DEFAULT_WINDOW_S};
use crate::timeio::format_timestamp;

pub use export::{export_results, Manifest, ManifestEntry};
pub use scenario::{derive_seed, DisturbanceSource, ForecastNoise, MarketConfig, ModelSpec, NoiseSettings, Scenario, SignalSource, TrackingConfig};

/// Level 1 runs at this slot of each day for the following day.
pub const SCHEDULE_SLOT: usize = 48;
/// Level 3 ticks per 15-min slot.
pub const TICKS_PER_SLOT: usize = (DEFAULT_STEP_S / LOOP_PERIOD_S) as usize;

/// One slot of a day-ahead schedule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Level1Row {
    pub day: usize,
    pub issued_at: String,
    pub timestamp: String,
    pub u: f64,
    pub r_u: f64,
    pub r_d: f64,
    #[serde(rename = "R_u")]
    pub reserve_up: f64,
    #[serde(rename = "R_d")]
    pub reserve_down: f64,
    pub x_hi: f64,
    pub x_lo: f64,
    pub energy_price: f64,
    pub reserve_price: f64,
    pub converged: bool,
}

/// One 15-min slot of one cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Level2Row {
    pub timestamp: String,
    pub cell: &'static str,
    pub measured_t_r: f64,
    pub est_t_r: f64,
    pub est_t_m: f64,
    pub u_setpoint: f64,
    #[serde(rename = "P_s")]
    pub p_s: f64,
    #[serde(rename = "R_u")]
    pub reserve_up: f64,
    #[serde(rename = "R_d")]
    pub reserve_down: f64,
    /// Predicted room-temperature envelope at the end of the slot.
    pub plan_hi: f64,
    pub plan_lo: f64,
    pub mean_p_d: f64,
    pub mean_p_f: f64,
    pub applied_flow: f64,
    pub energy_wh: f64,
    /// True state at the end of the slot.
    pub t_r: f64,
    pub t_m: f64,
    pub comfort_min: f64,
    pub comfort_max: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackingLogRow {
    pub t: String,
    pub w: f64,
    #[serde(rename = "P_d")]
    pub p_d: f64,
    #[serde(rename = "P_f")]
    pub p_f: f64,
    #[serde(rename = "N_f")]
    pub n_f: f64,
    pub branch: &'static str,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct CellSummary {
    pub energy_wh: f64,
    pub energy_cost: f64,
    /// Integral of the comfort-band violation, °C·h.
    pub comfort_violation_ch: f64,
    pub max_comfort_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub seed: u64,
    pub days: usize,
    pub w_lim: f64,
    pub regulation: CellSummary,
    pub benchmark: CellSummary,
    pub reserve_revenue: f64,
    pub tracking_rmse_w: f64,
    /// Share of ticks within ε, excluding 20 s after large target steps.
    pub tracking_settled_share: f64,
    pub level1_runs: usize,
    pub level2_runs: usize,
    pub level3_ticks: usize,
    pub saturated_ticks: usize,
    pub extrapolated_ticks: usize,
    pub unconverged_solves: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub summary: Summary,
    pub level1: Vec<Level1Row>,
    /// Both cells, regulation first within each slot.
    pub level2: Vec<Level2Row>,
    /// Regulation cell only.
    pub level3: Vec<TrackingLogRow>,
}

impl ExperimentResult {
    pub fn cell_rows<'a>(&'a self, cell: &'a str) -> impl Iterator<Item = &'a Level2Row> + Clone + 'a {
        self.level2.iter().filter(move |r| r.cell == cell)
    }
}

struct Cell {
    name: &'static str,
    x: BuildingState,
    ekf: Ekf,
    tracking: TrackingLoop,
    sensor: ChaCha8Rng,
    fan_rng: ChaCha8Rng,
    warm: Option<Vec<f64>>,
    summary: CellSummary,
}

/// Day-ahead data known to the controllers, indexed by global step.
struct Plan {
    scheduled_until: usize,
    energy_price: Vec<f64>,
    reserve_price: Vec<f64>,
    comfort_min: Vec<f64>,
    comfort_max: Vec<f64>,
    reserve_up: Vec<f64>,
    reserve_down: Vec<f64>,
    u: Vec<f64>,
}

/// Forecasts of the true disturbances: at every issue step a fresh AR(1)
/// error sequence over lead time.
struct Forecaster<'a> {
    truth: &'a [Disturbance],
    noise: ForecastNoise,
    seed: u64,
}

impl Forecaster<'_> {
    fn issue(&self, k: usize, from: usize, to: usize) -> Vec<Disturbance> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(k as u64);
        let n01 = Normal::new(0.0, 1.0).expect("unit normal");
        let (mut e_t, mut e_g) = (0.0, 0.0);
        let mut out = Vec::with_capacity(to.saturating_sub(from));
        for j in k..to.min(self.truth.len()) {
            e_t = self.noise.phi * e_t + self.noise.sigma_t_a * n01.sample(&mut rng);
            e_g = self.noise.phi * e_g + self.noise.sigma_g * n01.sample(&mut rng);
            if j >= from {
                let v = self.truth[j];
                out.push(Disturbance::new(v.t_a + e_t, (v.g + e_g).max(0.0), v.i_g));
            }
        }
        out
    }
}

fn level_error(level: &'static str, t: f64, e: Error) -> Error {
    Error::Level { level, timestamp: format_timestamp(t), source: Box::new(e) }
}

/// The scenario's fixed `w_lim`, or the configured percentile of the
/// signal's energy content.
fn resolve_w_lim(scenario: &Scenario, signal: &RegulationSignal) -> Result<f64> {
    match scenario.market.w_lim {
        Some(w) => Ok(w),
        None if signal.is_empty() => Ok(0.0),
        None => wlim_from_percentile(&energy_content(signal, DEFAULT_WINDOW_S)?, scenario.market.w_lim_percentile),
    }
}

/// Day `day`'s market with the scenario's price scaling applied.
fn day_market(scenario: &Scenario, curves: &FanCurves, forecast: Vec<Disturbance>, day: usize, w_lim: f64) -> MarketScenario {
    let spd = Scenario::steps_per_day();
    let mut sc = MarketScenario::synthetic(curves, forecast, day * spd, DEFAULT_STEP_S, w_lim, derive_seed(scenario.seeds().market, day as u64));
    sc.reserve_price.iter_mut().for_each(|p| *p *= scenario.market.reserve_price_scale);
    sc.energy_price.iter_mut().for_each(|p| *p *= scenario.market.energy_price_scale);
    sc.symmetry = scenario.market.symmetry;
    sc.comfort_penalty = scenario.market.comfort_penalty;
    sc
}

fn day_options(scenario: &Scenario, sc: &MarketScenario) -> ScheduleOptions {
    ScheduleOptions { exact: scenario.market.exact, zero_reserves: sc.reserve_price.iter().all(|&p| p == 0.0), ..ScheduleOptions::default() }
}

/// Schedules the scenario's first day with perfect disturbance knowledge,
/// starting from `x0`. `exact` overrides the scenario's envelope model.
pub fn schedule_first_day(scenario: &Scenario, exact: Option<bool>) -> Result<ReserveSchedule> {
    scenario.validate()?;
    if scenario.days == 0 {
        return Err(Error::invalid("days", "scheduling needs at least one day"));
    }
    let ctrl = scenario.controller_model.resolve()?;
    let curves = scenario.curves();
    let dist = scenario.load_disturbances()?;
    let signal = scenario.load_signal()?;
    let w_lim = resolve_w_lim(scenario, &signal)?;
    let spd = Scenario::steps_per_day();
    let sc = day_market(scenario, &curves, dist[..spd].to_vec(), 0, w_lim);
    let mut opts = day_options(scenario, &sc);
    if let Some(e) = exact {
        opts.exact = e;
    }
    schedule(&ctrl, &curves, &sc, BuildingState::new(scenario.x0[0], scenario.x0[1]), &opts)
}

/// Runs the paired experiment. Deterministic per scenario (seed included).
pub fn run_experiment(scenario: &Scenario) -> Result<ExperimentResult> {
    scenario.validate()?;
    let truth = scenario.truth_model.resolve()?;
    let ctrl = scenario.controller_model.resolve()?;
    let curves = scenario.curves();
    let dist = scenario.load_disturbances()?;
    let signal = scenario.load_signal()?;
    let seeds = scenario.seeds();
    let t0 = scenario.start_seconds()?;
    let n = scenario.n_steps();
    let spd = Scenario::steps_per_day();
    let dt = DEFAULT_STEP_S;

    let w_lim = resolve_w_lim(scenario, &signal)?;
    let mut mpc_cfg = MpcConfig::new(&curves, w_lim);
    mpc_cfg.horizon = scenario.mpc_horizon;
    mpc_cfg.comfort_penalty = scenario.market.comfort_penalty;
    mpc_cfg.validate()?;

    let forecaster = Forecaster { truth: &dist, noise: scenario.noise.forecast.clone(), seed: seeds.forecast };
    let x0 = BuildingState::new(scenario.x0[0], scenario.x0[1]);
    let sensor_sigma = scenario.noise.measurement_sigma;
    let trk = &scenario.tracking;
    let make_cell = |name| -> Result<Cell> {
        let mut fan_rng = ChaCha8Rng::seed_from_u64(seeds.fan);
        let p_init = curves.f(0.5 * (mpc_cfg.flow_bounds[0] + mpc_cfg.flow_bounds[1]));
        let tracking = TrackingLoop::new(&curves, trk.gains.clone(), trk.epsilon, trk.tau, trk.sigma_p, p_init, &mut fan_rng)?;
        Ok(Cell {
            name,
            x: x0,
            ekf: Ekf::new(x0, Matrix2::identity(), scenario.noise.ekf.clone())?,
            tracking,
            sensor: ChaCha8Rng::seed_from_u64(seeds.measurement),
            fan_rng,
            warm: None,
            summary: CellSummary::default(),
        })
    };
    let mut cells = [make_cell("regulation")?, make_cell("benchmark")?];

    let mut plan = Plan {
        scheduled_until: 0,
        energy_price: vec![0.0; n],
        reserve_price: vec![0.0; n],
        comfort_min: vec![0.0; n],
        comfort_max: vec![0.0; n],
        reserve_up: vec![0.0; n],
        reserve_down: vec![0.0; n],
        u: vec![0.0; n],
    };
    let mut summary = Summary { scenario: scenario.name.clone(), seed: scenario.seed, days: scenario.days, w_lim, ..Summary::default() };
    let mut level1 = Vec::new();
    let mut level2 = Vec::with_capacity(2 * n);
    let mut level3 = Vec::with_capacity(n * TICKS_PER_SLOT);
    let mut ticks: Vec<TrackingRow> = Vec::with_capacity(n * TICKS_PER_SLOT);
    let sensor_noise = Normal::new(0.0, sensor_sigma.max(0.0)).expect("valid sigma");

    for k in 0..n {
        let t = t0 + k as f64 * dt;
        let day = k / spd;
        let mut measured = [0.0; 2];
        for (i, c) in cells.iter_mut().enumerate() {
            let noise = if sensor_sigma > 0.0 { sensor_noise.sample(&mut c.sensor) } else { 0.0 };
            measured[i] = c.x.t_r + noise;
            c.ekf.update(measured[i]);
        }

        // Level 1: bootstrap for the first day, then at noon for the next.
        let target_day = if k == 0 {
            Some(0)
        } else if k % spd == SCHEDULE_SLOT && day + 1 < scenario.days {
            Some(day + 1)
        } else {
            None
        };
        if let Some(d) = target_day {
            let (from, to) = (d * spd, (d + 1) * spd);
            let fc = forecaster.issue(k, k, to);
            let x_start = ctrl.simulate(cells[0].ekf.estimate(), &plan.u[k..from], &fc[..from - k]).map_err(|e| level_error("level 1", t, e))?;
            let x_start = *x_start.last().expect("simulate includes the initial state");
            let sc = day_market(scenario, &curves, fc[from - k..].to_vec(), d, w_lim);
            mpc_cfg.check_wider_than(sc.flow_bounds).map_err(|e| level_error("level 1", t, e))?;
            let opts = day_options(scenario, &sc);
            let s = schedule(&ctrl, &curves, &sc, x_start, &opts).map_err(|e| level_error("level 1", t, e))?;
            summary.level1_runs += 1;
            summary.unconverged_solves += usize::from(!s.solve.converged);
            for j in 0..spd {
                let g = from + j;
                plan.energy_price[g] = sc.energy_price[j];
                plan.reserve_price[g] = sc.reserve_price[j];
                plan.comfort_min[g] = sc.comfort_min[j];
                plan.comfort_max[g] = sc.comfort_max[j];
                plan.reserve_up[g] = s.reserve_up[j];
                plan.reserve_down[g] = s.reserve_down[j];
                plan.u[g] = s.u[j];
                level1.push(Level1Row {
                    day: d,
                    issued_at: format_timestamp(t),
                    timestamp: format_timestamp(t0 + g as f64 * dt),
                    u: s.u[j],
                    r_u: s.r_u[j],
                    r_d: s.r_d[j],
                    reserve_up: s.reserve_up[j],
                    reserve_down: s.reserve_down[j],
                    x_hi: s.upper[j + 1].t_r,
                    x_lo: s.lower[j + 1].t_r,
                    energy_price: sc.energy_price[j],
                    reserve_price: sc.reserve_price[j],
                    converged: s.solve.converged,
                });
            }
            plan.scheduled_until = to;
        }

        // Level 2 for both cells over the scheduled part of the horizon.
        let end = plan.scheduled_until.min(k + mpc_cfg.horizon);
        let fc = forecaster.issue(k, k, end);
        let zeros = vec![0.0; end - k];
        for c in cells.iter_mut() {
            let regulating = c.name == "regulation";
            let (r_up, r_down) = if regulating { (&plan.reserve_up[k..end], &plan.reserve_down[k..end]) } else { (&zeros[..], &zeros[..]) };
            let inputs = MpcInputs {
                reserve_up: r_up,
                reserve_down: r_down,
                disturbances: &fc,
                energy_price: &plan.energy_price[k..end],
                comfort_min: &plan.comfort_min[k..end],
                comfort_max: &plan.comfort_max[k..end],
            };
            let x_hat = c.ekf.estimate();
            // With no reserve anywhere in the horizon the robust problem is
            // the nominal one.
            let robust = r_up.iter().chain(r_down).any(|&r| r != 0.0);
            let mpc: MpcPlan = if robust {
                mpc_step(&ctrl, &curves, &mpc_cfg, x_hat, &inputs, c.warm.as_deref())
            } else {
                mpc_energy_only(&ctrl, &curves, &mpc_cfg, x_hat, &inputs, c.warm.as_deref())
            }
            .map_err(|e| level_error("level 2", t, e))?;
            summary.level2_runs += usize::from(regulating);
            summary.unconverged_solves += usize::from(!mpc.solve.converged);
            c.warm = Some(mpc.u[1..].to_vec());

            // Level 3: P_s is held for the whole slot.
            let u_set = mpc.setpoint();
            let slot = TrackingSlot { p_s: curves.f(u_set), r_u: r_up.first().copied().unwrap_or(0.0), r_d: r_down.first().copied().unwrap_or(0.0) };
            let (mut sum_pd, mut sum_pf, mut sum_flow, mut energy) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..TICKS_PER_SLOT {
                let tt = (k * TICKS_PER_SLOT + i) as f64 * LOOP_PERIOD_S;
                let w = if regulating { signal.at(tt) } else { 0.0 };
                let row = c.tracking.tick(tt, w, &slot, LOOP_PERIOD_S, &mut c.fan_rng);
                let p = c.tracking.plant.power();
                sum_pd += row.p_d;
                sum_pf += row.p_f;
                sum_flow += curves.f_inv(p);
                energy += p * LOOP_PERIOD_S / 3600.0;
                if regulating {
                    summary.level3_ticks += 1;
                    summary.saturated_ticks += usize::from(c.tracking.controller.saturated);
                    summary.extrapolated_ticks += usize::from(c.tracking.controller.extrapolated);
                    level3.push(TrackingLogRow {
                        t: format_timestamp(t0 + tt),
                        w,
                        p_d: row.p_d,
                        p_f: row.p_f,
                        n_f: row.n_f,
                        branch: row.branch.as_str(),
                    });
                    ticks.push(row);
                }
            }
            let m = TICKS_PER_SLOT as f64;
            let applied = sum_flow / m;
            c.x = truth.step(c.x, applied, dist[k]);
            let (lo, hi) = (plan.comfort_min[k], plan.comfort_max[k]);
            let viol = (c.x.t_r - hi).max(lo - c.x.t_r).max(0.0);
            c.summary.comfort_violation_ch += viol * dt / 3600.0;
            c.summary.max_comfort_violation = c.summary.max_comfort_violation.max(viol);
            c.summary.energy_wh += energy;
            c.summary.energy_cost += plan.energy_price[k] * energy * 3600.0 / dt;
            if regulating {
                summary.reserve_revenue += plan.reserve_price[k] * (plan.reserve_up[k] + plan.reserve_down[k]);
            }
            // The controller knows its own fan readings.
            c.ekf.predict(&ctrl, curves.f_inv(sum_pf / m), fc[0]);
            level2.push(Level2Row {
                timestamp: format_timestamp(t),
                cell: c.name,
                measured_t_r: measured[usize::from(!regulating)],
                est_t_r: x_hat.t_r,
                est_t_m: x_hat.t_m,
                u_setpoint: u_set,
                p_s: slot.p_s,
                reserve_up: slot.r_u,
                reserve_down: slot.r_d,
                plan_hi: mpc.upper[1].t_r,
                plan_lo: mpc.lower[1].t_r,
                mean_p_d: sum_pd / m,
                mean_p_f: sum_pf / m,
                applied_flow: applied,
                energy_wh: energy,
                t_r: c.x.t_r,
                t_m: c.x.t_m,
                comfort_min: lo,
                comfort_max: hi,
                converged: mpc.solve.converged,
            });
        }
    }
    summary.regulation = cells[0].summary;
    summary.benchmark = cells[1].summary;
    summary.tracking_rmse_w = tracking_rmse(&ticks);
    summary.tracking_settled_share = settled_share(&ticks, trk.epsilon, 20.0);
    Ok(ExperimentResult { summary, level1, level2, level3 })
}

/// Runs independent experiments concurrently, member `i` with the seed
/// derived from `base_seed` and `i`.
pub fn run_sweep(scenarios: &[Scenario], base_seed: u64) -> Vec<Result<ExperimentResult>> {
    use rayon::prelude::*;
    scenarios
        .par_iter()
        .enumerate()
        .map(|(i, s)| run_experiment(&Scenario { seed: derive_seed(base_seed, i as u64), ..s.clone() }))
        .collect()
}
