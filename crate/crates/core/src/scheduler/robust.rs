//! Monte Carlo robustness check of a schedule against random activations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{MarketScenario, ReserveSchedule};
use crate::fan::FanCurves;
use crate::model::DiscreteBuildingModel;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessReport {
    /// Random draws plus the two constant extremes.
    pub draws: usize,
    /// Largest excursion of the realised room temperature outside the comfort
    /// band beyond the slack the schedule already accepted, °C.
    pub max_comfort_violation: f64,
    /// Largest excursion outside the schedule's own envelopes, °C.
    pub max_envelope_excursion: f64,
    /// Largest excursion of the realised flow outside the flow bounds, kg/s.
    pub max_flow_violation: f64,
    /// Index of the draw with the largest envelope excursion; `n_draws` and
    /// `n_draws + 1` are the `+w_lim` and `-w_lim` extremes.
    pub worst_draw: usize,
}

/// Flow the fan delivers while following request `w`.
pub(crate) fn realised_flow(curves: &FanCurves, u: f64, up: f64, down: f64, w: f64) -> f64 {
    let reserve = if w >= 0.0 { down } else { up };
    curves.f_inv(curves.f(u) + w * reserve)
}

struct DrawOutcome {
    comfort: f64,
    envelope: f64,
    flow: f64,
}

fn simulate_draw(model: &DiscreteBuildingModel, curves: &FanCurves, schedule: &ReserveSchedule, sc: &MarketScenario, w: &[f64]) -> DrawOutcome {
    let [lo, hi] = sc.flow_bounds;
    let mut x = schedule.upper[0];
    let mut out = DrawOutcome { comfort: 0.0, envelope: 0.0, flow: 0.0 };
    for k in 0..schedule.len() {
        let q = realised_flow(curves, schedule.u[k], schedule.reserve_up[k], schedule.reserve_down[k], w[k]);
        out.flow = out.flow.max(lo - q).max(q - hi);
        x = model.step(x, q, sc.disturbances[k]);
        out.comfort = out.comfort.max(x.t_r - sc.comfort_max[k].max(schedule.upper[k + 1].t_r)).max(sc.comfort_min[k].min(schedule.lower[k + 1].t_r) - x.t_r);
        out.envelope = out.envelope.max(x.t_r - schedule.upper[k + 1].t_r).max(schedule.lower[k + 1].t_r - x.t_r);
    }
    out
}

/// Simulates the schedule under `n_draws` signals with per-step requests
/// uniform in `[-w_lim, w_lim]`, plus the constant signals `±w_lim`.
/// Draw `i` uses stream `i` of a generator seeded with `seed`, so the result
/// does not depend on the thread count.
pub fn verify_schedule(
    model: &DiscreteBuildingModel,
    curves: &FanCurves,
    schedule: &ReserveSchedule,
    scenario: &MarketScenario,
    n_draws: usize,
    seed: u64,
) -> RobustnessReport {
    let n = schedule.len();
    let w_lim = scenario.w_lim;
    let outcomes: Vec<DrawOutcome> = (0..n_draws + 2)
        .into_par_iter()
        .map(|i| {
            let w: Vec<f64> = if i == n_draws {
                vec![w_lim; n]
            } else if i == n_draws + 1 {
                vec![-w_lim; n]
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                (0..n).map(|_| if w_lim > 0.0 { rng.random_range(-w_lim..=w_lim) } else { 0.0 }).collect()
            };
            simulate_draw(model, curves, schedule, scenario, &w)
        })
        .collect();
    let mut report = RobustnessReport { draws: n_draws + 2, max_comfort_violation: 0.0, max_envelope_excursion: 0.0, max_flow_violation: 0.0, worst_draw: 0 };
    for (i, o) in outcomes.iter().enumerate() {
        report.max_comfort_violation = report.max_comfort_violation.max(o.comfort);
        report.max_flow_violation = report.max_flow_violation.max(o.flow);
        if o.envelope > report.max_envelope_excursion {
            report.max_envelope_excursion = o.envelope;
            report.worst_draw = i;
        }
    }
    report
}
