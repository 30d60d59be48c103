//! Receding-horizon climate control with reserves fixed by the day-ahead
//! schedule.
//!
//! Given `R_u,k` and `R_d,k`, the thermal reserves are determined by the flow:
//! `r_d = u − f⁻¹(f(u) − R_u)` and `r_u = f⁻¹(f(u) + R_d) − u`. Eliminating
//! them leaves the flows (and comfort slacks) as the only decisions, and the
//! flow limits under activation become plain bounds on `u_k`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fan::FanCurves;
use crate::model::{BuildingState, DiscreteBuildingModel, Disturbance};
use crate::nlp::{self, NlpProblem, SolveOptions, SolveReport};
use crate::scheduler::{propagate, DEFAULT_COMFORT_PENALTY};

/// Eight hours at 15-minute steps.
pub const DEFAULT_HORIZON: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    pub horizon: usize,
    /// `[u_min, u_max]`, kg/s; must be wider than the scheduler's bounds.
    pub flow_bounds: [f64; 2],
    pub comfort_penalty: f64,
    pub w_lim: f64,
    #[serde(skip)]
    pub solve: SolveOptions,
}

impl MpcConfig {
    /// Fan speeds 10 % to 90 %.
    pub fn new(curves: &FanCurves, w_lim: f64) -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            flow_bounds: [curves.h(10.0), curves.h(90.0)],
            comfort_penalty: DEFAULT_COMFORT_PENALTY,
            w_lim,
            solve: SolveOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.flow_bounds;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid("flow_bounds", format!("need u_min < u_max, got [{lo}, {hi}]")));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon", "must be at least one step"));
        }
        if !(0.0..=1.0).contains(&self.w_lim) {
            return Err(Error::invalid("w_lim", format!("must lie in [0, 1], got {}", self.w_lim)));
        }
        if !(self.comfort_penalty > 0.0) {
            return Err(Error::invalid("comfort_penalty", "must be positive"));
        }
        Ok(())
    }

    /// The MPC needs room around the scheduled operating range to deliver
    /// the reserves, so its bounds must be strictly wider.
    pub fn check_wider_than(&self, schedule_bounds: [f64; 2]) -> Result<()> {
        let [lo, hi] = self.flow_bounds;
        if !(lo < schedule_bounds[0] && schedule_bounds[1] < hi) {
            return Err(Error::invalid(
                "flow_bounds",
                format!("[{lo}, {hi}] must strictly contain the scheduling bounds {schedule_bounds:?}"),
            ));
        }
        Ok(())
    }
}

/// Forecasts and fixed reserves from the current step onwards. The horizon
/// is the shorter of the configured one and the shortest series.
#[derive(Debug, Clone, Copy)]
pub struct MpcInputs<'a> {
    pub reserve_up: &'a [f64],
    pub reserve_down: &'a [f64],
    pub disturbances: &'a [Disturbance],
    /// $/W per step.
    pub energy_price: &'a [f64],
    pub comfort_min: &'a [f64],
    pub comfort_max: &'a [f64],
}

impl MpcInputs<'_> {
    fn available(&self) -> usize {
        [
            self.reserve_up.len(),
            self.reserve_down.len(),
            self.disturbances.len(),
            self.energy_price.len(),
            self.comfort_min.len(),
            self.comfort_max.len(),
        ]
        .into_iter()
        .min()
        .unwrap_or(0)
    }
}

/// Plan of one MPC solve; only `u[0]` is applied.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MpcPlan {
    pub u: Vec<f64>,
    pub r_u: Vec<f64>,
    pub r_d: Vec<f64>,
    /// Envelopes `x_0..x_N`; identical for the energy-only controller.
    pub upper: Vec<BuildingState>,
    pub lower: Vec<BuildingState>,
    pub objective: f64,
    pub comfort_slack: f64,
    pub solve: SolveReport,
}

impl MpcPlan {
    /// First flow setpoint, kg/s.
    pub fn setpoint(&self) -> f64 {
        self.u[0]
    }
}

struct MpcProblem<'a> {
    model: &'a DiscreteBuildingModel,
    curves: &'a FanCurves,
    cfg: &'a MpcConfig,
    x0: BuildingState,
    inputs: MpcInputs<'a>,
    n: usize,
    robust: bool,
    lo: Vec<f64>,
    hi: Vec<f64>,
    obj_scale: Option<f64>,
}

/// Flow driving one envelope and its derivative in `u`.
struct Driven {
    q: f64,
    dq: f64,
}

impl<'a> MpcProblem<'a> {
    fn new(
        model: &'a DiscreteBuildingModel,
        curves: &'a FanCurves,
        cfg: &'a MpcConfig,
        x0: BuildingState,
        inputs: MpcInputs<'a>,
        robust: bool,
    ) -> Result<Self> {
        let n = cfg.horizon.min(inputs.available());
        if n == 0 {
            return Err(Error::InsufficientData("MPC inputs cover no step".into()));
        }
        let [ulo, uhi] = cfg.flow_bounds;
        let (plo, phi) = (curves.f(ulo), curves.f(uhi));
        let mut lo = Vec::with_capacity(n);
        let mut hi = Vec::with_capacity(n);
        for k in 0..n {
            let (ru, rd) = if robust { (inputs.reserve_up[k], inputs.reserve_down[k]) } else { (0.0, 0.0) };
            if !(ru >= 0.0 && rd >= 0.0) {
                return Err(Error::InfeasibleReserve { step: k, reason: format!("negative reserve ({ru}, {rd})") });
            }
            if plo + ru > phi - rd {
                return Err(Error::InfeasibleReserve {
                    step: k,
                    reason: format!("R_u + R_d = {:.1} W exceeds the fan's {:.1} W range in [{ulo}, {uhi}] kg/s", ru + rd, phi - plo),
                });
            }
            lo.push(if ru > 0.0 { curves.f_inv(plo + ru) } else { ulo });
            hi.push(if rd > 0.0 { curves.f_inv(phi - rd) } else { uhi });
        }
        let slope = curves.df(ulo).abs().max(curves.df(uhi).abs());
        let price = inputs.energy_price[..n].iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let obj_scale = (price * slope > 0.0).then_some(price * slope);
        Ok(Self { model, curves, cfg, x0, inputs, n, robust, lo, hi, obj_scale })
    }

    fn upper_flow(&self, k: usize, u: f64) -> Driven {
        let w = self.cfg.w_lim;
        let ru = self.inputs.reserve_up[k];
        if !self.robust || ru == 0.0 || w == 0.0 {
            return Driven { q: u, dq: 1.0 };
        }
        let a = self.curves.f_inv(self.curves.f(u) - ru);
        Driven { q: (1.0 - w) * u + w * a, dq: (1.0 - w) + w * self.curves.df(u) / self.curves.df(a) }
    }

    fn lower_flow(&self, k: usize, u: f64) -> Driven {
        let w = self.cfg.w_lim;
        let rd = self.inputs.reserve_down[k];
        if !self.robust || rd == 0.0 || w == 0.0 {
            return Driven { q: u, dq: 1.0 };
        }
        let b = self.curves.f_inv(self.curves.f(u) + rd);
        Driven { q: (1.0 - w) * u + w * b, dq: (1.0 - w) + w * self.curves.df(u) / self.curves.df(b) }
    }

    fn envelopes(&self, z: &[f64], sens: bool) -> (crate::scheduler::Trajectory, crate::scheduler::Trajectory, Vec<f64>, Vec<f64>) {
        let dh: Vec<Driven> = (0..self.n).map(|k| self.upper_flow(k, z[k])).collect();
        let dl: Vec<Driven> = (0..self.n).map(|k| self.lower_flow(k, z[k])).collect();
        let qh: Vec<f64> = dh.iter().map(|d| d.q).collect();
        let ql: Vec<f64> = dl.iter().map(|d| d.q).collect();
        let v = &self.inputs.disturbances[..self.n];
        (
            propagate(self.model, self.x0, &qh, v, sens),
            propagate(self.model, self.x0, &ql, v, sens),
            dh.iter().map(|d| d.dq).collect(),
            dl.iter().map(|d| d.dq).collect(),
        )
    }

    fn initial_point(&self, warm: Option<&[f64]>) -> Vec<f64> {
        let n = self.n;
        let mut z = vec![0.0; 3 * n];
        for k in 0..n {
            let guess = warm.and_then(|w| w.get(k).copied()).unwrap_or(0.5 * (self.lo[k] + self.hi[k]));
            z[k] = guess.clamp(self.lo[k], self.hi[k]);
        }
        let (th, tl, _, _) = self.envelopes(&z, false);
        for k in 0..n {
            z[n + k] = (th.states[k + 1].t_r - self.inputs.comfort_max[k]).max(0.0);
            z[2 * n + k] = (self.inputs.comfort_min[k] - tl.states[k + 1].t_r).max(0.0);
        }
        z
    }

    fn plan(&self, report: SolveReport) -> MpcPlan {
        let n = self.n;
        let u = report.z[..n].to_vec();
        let (th, tl, _, _) = self.envelopes(&u, false);
        let f = |x: f64| self.curves.f(x);
        let mut r_u = vec![0.0; n];
        let mut r_d = vec![0.0; n];
        if self.robust {
            for k in 0..n {
                r_d[k] = u[k] - self.curves.f_inv(f(u[k]) - self.inputs.reserve_up[k]);
                r_u[k] = self.curves.f_inv(f(u[k]) + self.inputs.reserve_down[k]) - u[k];
            }
        }
        MpcPlan {
            comfort_slack: report.z[n..].iter().sum(),
            objective: report.objective,
            u,
            r_u,
            r_d,
            upper: th.states,
            lower: tl.states,
            solve: report,
        }
    }
}

impl NlpProblem for MpcProblem<'_> {
    fn dim(&self) -> usize {
        3 * self.n
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = self.lo.clone();
        let mut hi = self.hi.clone();
        lo.resize(3 * self.n, 0.0);
        hi.resize(3 * self.n, 1e3);
        (lo, hi)
    }

    fn num_inequality(&self) -> usize {
        2 * self.n
    }

    fn objective_scale(&self) -> Option<f64> {
        self.obj_scale
    }

    fn objective(&self, z: &[f64]) -> f64 {
        let n = self.n;
        let mut val = 0.0;
        for k in 0..n {
            val += self.inputs.energy_price[k] * self.curves.f(z[k]);
            val += self.cfg.comfort_penalty * (z[n + k] + z[2 * n + k]);
        }
        val
    }

    fn gradient(&self, z: &[f64], grad: &mut [f64]) {
        let n = self.n;
        for k in 0..n {
            grad[k] = self.inputs.energy_price[k] * self.curves.df(z[k]);
            grad[n + k] = self.cfg.comfort_penalty;
            grad[2 * n + k] = self.cfg.comfort_penalty;
        }
    }

    fn inequality(&self, z: &[f64], out: &mut [f64]) {
        let n = self.n;
        let (th, tl, _, _) = self.envelopes(z, false);
        for k in 0..n {
            out[k] = th.states[k + 1].t_r - self.inputs.comfort_max[k] - z[n + k];
            out[n + k] = self.inputs.comfort_min[k] - tl.states[k + 1].t_r - z[2 * n + k];
        }
    }

    fn inequality_jacobian(&self, z: &[f64], jac: &mut DMatrix<f64>) {
        let n = self.n;
        jac.fill(0.0);
        let (th, tl, dh, dl) = self.envelopes(z, true);
        for k in 0..n {
            for j in 0..=k {
                jac[(k, j)] = th.dtr[k][j] * dh[j];
                jac[(n + k, j)] = -tl.dtr[k][j] * dl[j];
            }
            jac[(k, n + k)] = -1.0;
            jac[(n + k, 2 * n + k)] = -1.0;
        }
    }
}

fn check_inputs(model: &DiscreteBuildingModel, curves: &FanCurves, cfg: &MpcConfig, x_hat: BuildingState, inputs: &MpcInputs) -> Result<()> {
    cfg.validate()?;
    model.validate()?;
    curves.validate()?;
    if !x_hat.is_finite() {
        return Err(Error::invalid("x_hat", "state estimate must be finite"));
    }
    let n = cfg.horizon.min(inputs.available());
    if let Some(k) = inputs.comfort_min[..n].iter().position(|&m| model.t_s > m) {
        return Err(Error::CoolingAssumption(format!(
            "supply temperature {} °C exceeds the comfort floor {} °C at step {k}",
            model.t_s, inputs.comfort_min[k]
        )));
    }
    Ok(())
}

/// Robust MPC with the reserves of `inputs` held fixed. `warm` seeds the
/// flows, typically with the previous plan shifted by one step.
pub fn mpc_step(
    model: &DiscreteBuildingModel,
    curves: &FanCurves,
    cfg: &MpcConfig,
    x_hat: BuildingState,
    inputs: &MpcInputs,
    warm: Option<&[f64]>,
) -> Result<MpcPlan> {
    check_inputs(model, curves, cfg, x_hat, inputs)?;
    let problem = MpcProblem::new(model, curves, cfg, x_hat, *inputs, true)?;
    solve(&problem, warm)
}

/// Energy-only MPC: no reserves and a single predicted trajectory. The
/// reserve fields of `inputs` are ignored.
pub fn mpc_energy_only(
    model: &DiscreteBuildingModel,
    curves: &FanCurves,
    cfg: &MpcConfig,
    x_hat: BuildingState,
    inputs: &MpcInputs,
    warm: Option<&[f64]>,
) -> Result<MpcPlan> {
    check_inputs(model, curves, cfg, x_hat, inputs)?;
    let problem = MpcProblem::new(model, curves, cfg, x_hat, *inputs, false)?;
    solve(&problem, warm)
}

fn solve(problem: &MpcProblem, warm: Option<&[f64]>) -> Result<MpcPlan> {
    let z0 = problem.initial_point(warm);
    let report = nlp::solve(problem, &z0, &problem.cfg.solve);
    if !report.converged {
        log::warn!("MPC did not converge (violation {:.2e}, stationarity {:.2e})", report.max_violation, report.stationarity);
    }
    Ok(problem.plan(report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlp::check_gradients;
    use crate::scheduler::default_comfort_band;
    use crate::weather::{hour_of_day, synthetic_disturbances, WeatherConfig};

    struct Fixture {
        model: DiscreteBuildingModel,
        curves: FanCurves,
        v: Vec<Disturbance>,
        price: Vec<f64>,
        cmin: Vec<f64>,
        cmax: Vec<f64>,
    }

    fn fixture(start: usize, n: usize) -> Fixture {
        let v = synthetic_disturbances(&WeatherConfig::default(), 5, start + n, 900.0)[start..].to_vec();
        let band: Vec<_> = (0..n).map(|k| default_comfort_band(hour_of_day(start + k + 1, 900.0))).collect();
        Fixture {
            model: DiscreteBuildingModel::reference_new(),
            curves: FanCurves::reference(),
            v,
            price: (0..n).map(|k| if (48..72).contains(&(start + k)) { 7e-5 } else { 3e-5 }).collect(),
            cmin: band.iter().map(|b| b.0).collect(),
            cmax: band.iter().map(|b| b.1).collect(),
        }
    }

    fn inputs<'a>(f: &'a Fixture, up: &'a [f64], down: &'a [f64]) -> MpcInputs<'a> {
        MpcInputs { reserve_up: up, reserve_down: down, disturbances: &f.v, energy_price: &f.price, comfort_min: &f.cmin, comfort_max: &f.cmax }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let f = fixture(40, 10);
        let cfg = MpcConfig::new(&f.curves, 0.3);
        let up = vec![150.0; 10];
        let down = vec![220.0; 10];
        let p = MpcProblem::new(&f.model, &f.curves, &cfg, BuildingState::new(22.0, 25.0), inputs(&f, &up, &down), true).unwrap();
        let mut z = p.initial_point(None);
        for k in 0..10 {
            z[k] = p.lo[k] + (p.hi[k] - p.lo[k]) * (0.2 + 0.06 * k as f64);
        }
        z[12] = 0.3;
        let chk = check_gradients(&p, &z, 1e-6);
        assert!(chk.max_error() < 1e-5, "{chk:?}");
    }

    #[test]
    fn zero_reserves_match_energy_only_controller() {
        let f = fixture(30, 16);
        let cfg = MpcConfig { horizon: 16, ..MpcConfig::new(&f.curves, 0.25) };
        let zero = vec![0.0; 16];
        let x = BuildingState::new(23.0, 27.0);
        let a = mpc_step(&f.model, &f.curves, &cfg, x, &inputs(&f, &zero, &zero), None).unwrap();
        let b = mpc_energy_only(&f.model, &f.curves, &cfg, x, &inputs(&f, &zero, &zero), None).unwrap();
        assert!(a.solve.converged && b.solve.converged);
        for k in 0..16 {
            assert!((a.u[k] - b.u[k]).abs() <= 1e-6, "step {k}: {} vs {}", a.u[k], b.u[k]);
            assert!(a.r_u[k].abs() < 1e-12 && a.r_d[k].abs() < 1e-12);
        }
    }

    #[test]
    fn reserves_shrink_the_flow_range() {
        let f = fixture(40, 8);
        let cfg = MpcConfig { horizon: 8, ..MpcConfig::new(&f.curves, 0.25) };
        let up = vec![200.0; 8];
        let down = vec![300.0; 8];
        let plan = mpc_step(&f.model, &f.curves, &cfg, BuildingState::new(22.5, 27.0), &inputs(&f, &up, &down), None).unwrap();
        for k in 0..8 {
            let p = f.curves.f(plan.u[k]);
            assert!(f.curves.f(plan.u[k] - plan.r_d[k]) >= f.curves.f(cfg.flow_bounds[0]) - 1e-6);
            assert!((p - f.curves.f(plan.u[k] - plan.r_d[k]) - 200.0).abs() < 1e-6);
            assert!((f.curves.f(plan.u[k] + plan.r_u[k]) - p - 300.0).abs() < 1e-6);
            assert!(plan.lower[k + 1].t_r <= plan.upper[k + 1].t_r + 1e-9);
        }
    }

    #[test]
    fn oversized_reserve_is_reported_with_its_step() {
        let f = fixture(40, 4);
        let cfg = MpcConfig::new(&f.curves, 0.25);
        let up = vec![0.0, 0.0, 4000.0, 0.0];
        let down = vec![0.0; 4];
        let err = mpc_step(&f.model, &f.curves, &cfg, BuildingState::new(22.0, 25.0), &inputs(&f, &up, &down), None).unwrap_err();
        assert!(matches!(err, Error::InfeasibleReserve { step: 2, .. }), "{err}");
    }

    #[test]
    fn single_step_matches_grid() {
        let f = fixture(44, 1);
        let cfg = MpcConfig { horizon: 1, ..MpcConfig::new(&f.curves, 0.25) };
        for (tr, cmax) in [(23.0, 24.0), (24.5, 23.5), (21.5, 24.0)] {
            let mut f2 = fixture(44, 1);
            f2.cmax[0] = cmax;
            let x = BuildingState::new(tr, 27.0);
            let zero = [0.0];
            let plan = mpc_energy_only(&f.model, &f.curves, &cfg, x, &inputs(&f2, &zero, &zero), None).unwrap();
            let [lo, hi] = cfg.flow_bounds;
            let h = 1e-4;
            let (mut best, mut best_u) = (f64::INFINITY, lo);
            let mut u = lo;
            while u <= hi {
                let t = f.model.step(x, u, f2.v[0]).t_r;
                let j = f2.price[0] * f.curves.f(u) + cfg.comfort_penalty * ((t - f2.cmax[0]).max(0.0) + (f2.cmin[0] - t).max(0.0));
                if j < best {
                    best = j;
                    best_u = u;
                }
                u += h;
            }
            assert!((plan.u[0] - best_u).abs() <= 2.0 * h, "{} vs grid {best_u}", plan.u[0]);
        }
    }

    #[test]
    fn receding_horizon_reproduces_plan_tail() {
        let f = fixture(36, 12);
        let cfg = MpcConfig { horizon: 32, ..MpcConfig::new(&f.curves, 0.25) };
        let zero = vec![0.0; 12];
        let x = BuildingState::new(22.8, 27.0);
        let first = mpc_step(&f.model, &f.curves, &cfg, x, &inputs(&f, &zero, &zero), None).unwrap();
        let next_in = MpcInputs {
            reserve_up: &zero[1..],
            reserve_down: &zero[1..],
            disturbances: &f.v[1..],
            energy_price: &f.price[1..],
            comfort_min: &f.cmin[1..],
            comfort_max: &f.cmax[1..],
        };
        let second = mpc_step(&f.model, &f.curves, &cfg, first.upper[1], &next_in, Some(&first.u[1..])).unwrap();
        for k in 0..11 {
            assert!((second.u[k] - first.u[k + 1]).abs() < 1e-5, "step {k}: {} vs {}", second.u[k], first.u[k + 1]);
        }
    }

    #[test]
    fn bounds_must_contain_schedule_bounds() {
        let c = FanCurves::reference();
        let cfg = MpcConfig::new(&c, 0.25);
        assert!(cfg.check_wider_than([c.h(20.0), c.h(80.0)]).is_ok());
        assert!(cfg.check_wider_than([c.h(5.0), c.h(80.0)]).is_err());
    }
}
