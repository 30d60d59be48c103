//! Grey-box identification of the bilinear building model.
//!
//! The unknowns are the model entries only; the unmeasured mass temperature
//! is reconstructed by forward simulation from `T_m(0) = T_r(0)` at the
//! start of every contiguous segment. Two predictors are supported:
//!
//! * one-step: the measured room temperature is injected at every step,
//! * one-day: the room temperature is reset to the measurement once per day
//!   and otherwise chained through the model's own predictions.
//!
//! The fit minimises the sum of squared room-temperature prediction errors
//! subject to the sign pattern of the model (box bounds), the
//! thermal-mass bounds `low·T_r ≤ T̂_m ≤ high·T_r` at every sample and
//! stability of `A + B_xu u` for every flow in the data. Gradients come from
//! forward sensitivities of the rollout.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BuildingState, DiscreteBuildingModel, Disturbance, DEFAULT_STEP_S};
use crate::nlp::{self, NlpProblem, SolveOptions};
use crate::timeio;

/// Steps between measured restarts in one-day mode (15-minute steps).
pub const STEPS_PER_DAY: usize = 96;

/// Safety margin kept inside the stability region so that a solution
/// within the solver's violation tolerance is still strictly stable.
const STABILITY_MARGIN: f64 = 1e-5;

const NPAR: usize = 8;
const PARAM_NAMES: [&str; NPAR] = ["a11", "a12", "a21", "a22", "b", "d11", "d12", "d13"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentRow {
    pub timestamp: f64,
    #[serde(rename = "T_r")]
    pub t_r: f64,
    pub mdot: f64,
    #[serde(rename = "T_a")]
    pub t_a: f64,
    #[serde(rename = "G")]
    pub g: f64,
    #[serde(rename = "I_g")]
    pub i_g: f64,
    #[serde(rename = "T_s")]
    pub t_s: f64,
}

impl IdentRow {
    fn disturbance(&self) -> Disturbance {
        Disturbance { t_a: self.t_a, g: self.g, i_g: self.i_g }
    }
}

/// Uniformly sampled identification data, split into gap-free segments.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentDataset {
    pub period_s: f64,
    pub segments: Vec<Vec<IdentRow>>,
}

impl IdentDataset {
    /// Splits `rows` wherever the timestamp advances by more than one
    /// period. Sampling that is neither one period nor a whole number of
    /// periods is rejected.
    pub fn from_rows(rows: Vec<IdentRow>, period_s: f64) -> Result<Self> {
        if !(period_s > 0.0) {
            return Err(Error::invalid("period_s", "must be positive"));
        }
        let tol = 1e-6 * period_s;
        let mut segments: Vec<Vec<IdentRow>> = Vec::new();
        let mut current: Vec<IdentRow> = Vec::new();
        for (i, row) in rows.into_iter().enumerate() {
            let fields = [row.t_r, row.mdot, row.t_a, row.g, row.i_g, row.t_s];
            if fields.iter().any(|v| !v.is_finite()) {
                return Err(Error::BadDataRow { row: i + 2, reason: "non-finite value".into() });
            }
            if row.mdot < 0.0 || row.g < 0.0 || row.i_g < 0.0 {
                return Err(Error::BadDataRow { row: i + 2, reason: "mdot, G and I_g must be non-negative".into() });
            }
            if let Some(prev) = current.last() {
                let dt = row.timestamp - prev.timestamp;
                let periods = (dt / period_s).round();
                if periods < 1.0 || (dt - periods * period_s).abs() > tol {
                    return Err(Error::BadDataRow {
                        row: i + 2,
                        reason: format!("timestamp step {dt} s is not a multiple of the {period_s} s period"),
                    });
                }
                if periods > 1.0 {
                    segments.push(std::mem::take(&mut current));
                }
            }
            current.push(row);
        }
        if !current.is_empty() {
            segments.push(current);
        }
        Ok(Self { period_s, segments })
    }

    pub fn len(&self) -> usize {
        self.segments.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of one-step transitions (prediction targets).
    pub fn transitions(&self) -> usize {
        self.segments.iter().map(|s| s.len().saturating_sub(1)).sum()
    }

    pub fn rows(&self) -> impl Iterator<Item = &IdentRow> {
        self.segments.iter().flatten()
    }

    fn flow_range(&self) -> [f64; 2] {
        self.rows().fold([f64::INFINITY, f64::NEG_INFINITY], |[lo, hi], r| [lo.min(r.mdot), hi.max(r.mdot)])
    }

    fn mean_supply(&self) -> f64 {
        self.rows().map(|r| r.t_s).sum::<f64>() / self.len().max(1) as f64
    }
}

#[derive(Deserialize)]
struct CsvRow {
    timestamp: String,
    #[serde(rename = "T_r")]
    t_r: f64,
    mdot: f64,
    #[serde(rename = "T_a")]
    t_a: f64,
    #[serde(rename = "G")]
    g: f64,
    #[serde(rename = "I_g")]
    i_g: f64,
    #[serde(rename = "T_s")]
    t_s: f64,
}

/// Reads `timestamp,T_r,mdot,T_a,G,I_g,T_s`. The period is the smallest
/// timestamp increment in the file.
pub fn load_dataset(path: &Path) -> Result<IdentDataset> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<CsvRow>().enumerate() {
        let rec = rec.map_err(|e| Error::BadDataRow { row: i + 2, reason: e.to_string() })?;
        let timestamp = timeio::parse_timestamp(&rec.timestamp).map_err(|reason| Error::BadDataRow { row: i + 2, reason })?;
        rows.push(IdentRow { timestamp, t_r: rec.t_r, mdot: rec.mdot, t_a: rec.t_a, g: rec.g, i_g: rec.i_g, t_s: rec.t_s });
    }
    let period = rows
        .windows(2)
        .map(|w| w[1].timestamp - w[0].timestamp)
        .filter(|d| *d > 0.0)
        .fold(f64::INFINITY, f64::min);
    let period = if period.is_finite() { period } else { DEFAULT_STEP_S };
    IdentDataset::from_rows(rows, period)
}

pub fn save_dataset(data: &IdentDataset, path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    wtr.write_record(["timestamp", "T_r", "mdot", "T_a", "G", "I_g", "T_s"]).map_err(|e| Error::csv(path, e))?;
    for r in data.rows() {
        let rec = [
            timeio::format_timestamp(r.timestamp),
            r.t_r.to_string(),
            r.mdot.to_string(),
            r.t_a.to_string(),
            r.g.to_string(),
            r.i_g.to_string(),
            r.t_s.to_string(),
        ];
        wtr.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

/// Simulates `model` and records the room temperature with additive
/// Gaussian noise. The true mass temperature starts equal to the room
/// temperature.
pub fn synthesize(
    model: &DiscreteBuildingModel,
    t_r0: f64,
    flows: &[f64],
    disturbances: &[Disturbance],
    noise_sigma: f64,
    seed: u64,
) -> Result<IdentDataset> {
    let traj = model.simulate(BuildingState::new(t_r0, t_r0), flows, disturbances)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma.max(0.0)).map_err(|e| Error::invalid("noise_sigma", e.to_string()))?;
    let rows = flows
        .iter()
        .zip(disturbances)
        .zip(&traj)
        .enumerate()
        .map(|(k, ((&mdot, v), x))| IdentRow {
            timestamp: k as f64 * model.delta_t,
            t_r: x.t_r + noise.sample(&mut rng),
            mdot,
            t_a: v.t_a,
            g: v.g,
            i_g: v.i_g,
            t_s: model.t_s,
        })
        .collect();
    IdentDataset::from_rows(rows, model.delta_t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HorizonMode {
    OneStep,
    OneDay,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitConfig {
    /// 1 or 2.
    pub n_states: usize,
    pub horizon: HorizonMode,
    /// Multipliers `(low, high)` of the thermal-mass bounds.
    pub tm_bounds: [f64; 2],
    pub steps_per_day: usize,
    pub solve: SolveOptions,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { n_states: 2, horizon: HorizonMode::OneDay, tm_bounds: [0.01, 2.5], steps_per_day: STEPS_PER_DAY, solve: SolveOptions::default() }
    }
}

impl FitConfig {
    pub fn new(n_states: usize, horizon: HorizonMode) -> Self {
        Self { n_states, horizon, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.n_states, 1 | 2) {
            return Err(Error::invalid("n_states", format!("must be 1 or 2, got {}", self.n_states)));
        }
        let [lo, hi] = self.tm_bounds;
        if !(lo > 0.0 && lo < hi) {
            return Err(Error::invalid("tm_bounds", format!("need 0 < low < high, got ({lo}, {hi})")));
        }
        if self.steps_per_day == 0 {
            return Err(Error::invalid("steps_per_day", "must be positive"));
        }
        Ok(())
    }

    fn free(&self) -> &'static [usize] {
        if self.n_states == 1 {
            &[0, 4, 5, 6, 7]
        } else {
            &[0, 1, 2, 3, 4, 5, 6, 7]
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub model: DiscreteBuildingModel,
    /// RMSE of the configured predictor on the training data, °C.
    pub rmse: f64,
    /// Measured minus predicted room temperature per transition.
    pub residuals: Vec<f64>,
    pub n_states: usize,
    pub horizon: HorizonMode,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub stationarity: f64,
    pub max_violation: f64,
    pub starts: usize,
    /// Number of starts that ended within 1e-8 relative of the best
    /// objective at a different parameter vector.
    pub equivalent_optima: usize,
}

#[cfg(test)]
fn theta_of(m: &DiscreteBuildingModel) -> [f64; NPAR] {
    [m.a11, m.a12, m.a21, m.a22, m.b, m.d11, m.d12, m.d13]
}

fn model_of(theta: &[f64; NPAR], t_s: f64, delta_t: f64) -> DiscreteBuildingModel {
    DiscreteBuildingModel {
        a11: theta[0],
        a12: theta[1],
        a21: theta[2],
        a22: theta[3],
        b: theta[4],
        d11: theta[5],
        d12: theta[6],
        d13: theta[7],
        t_s,
        delta_t,
    }
}

struct Rollout {
    /// Predicted room temperature per transition.
    pred: Vec<f64>,
    /// Measured room temperature per transition target.
    meas: Vec<f64>,
    /// Reconstructed mass temperature and measured room temperature per row.
    tm: Vec<f64>,
    tr_meas: Vec<f64>,
    /// d(pred)/dθ per transition and d(T̂_m)/dθ per row, when requested.
    pred_sens: Vec<[f64; NPAR]>,
    tm_sens: Vec<[f64; NPAR]>,
}

fn rollout(model: &DiscreteBuildingModel, data: &IdentDataset, mode: HorizonMode, steps_per_day: usize, sens: bool) -> Rollout {
    let n = data.len();
    let mut out = Rollout {
        pred: Vec::with_capacity(n),
        meas: Vec::with_capacity(n),
        tm: Vec::with_capacity(n),
        tr_meas: Vec::with_capacity(n),
        pred_sens: Vec::new(),
        tm_sens: Vec::new(),
    };
    let m = model;
    for seg in &data.segments {
        let mut x = BuildingState::new(seg[0].t_r, seg[0].t_r);
        let mut sr = [0.0; NPAR];
        let mut sm = [0.0; NPAR];
        out.tm.push(x.t_m);
        out.tr_meas.push(seg[0].t_r);
        if sens {
            out.tm_sens.push(sm);
        }
        for k in 0..seg.len() - 1 {
            let row = &seg[k];
            if mode == HorizonMode::OneStep || k % steps_per_day == 0 {
                x.t_r = row.t_r;
                sr = [0.0; NPAR];
            }
            let next = m.step_with_supply(x, row.mdot, row.disturbance(), row.t_s);
            if sens {
                let u = row.mdot;
                let mut nr = [0.0; NPAR];
                let mut nm = [0.0; NPAR];
                for j in 0..NPAR {
                    nr[j] = (m.a11 - m.b * u) * sr[j] + m.a12 * sm[j];
                    nm[j] = m.a21 * sr[j] + m.a22 * sm[j];
                }
                nr[0] += x.t_r;
                nr[1] += x.t_m;
                nr[4] += (row.t_s - x.t_r) * u;
                nr[5] += row.t_a;
                nr[6] += row.g;
                nr[7] += row.i_g;
                nm[2] += x.t_r;
                nm[3] += x.t_m;
                sr = nr;
                sm = nm;
                out.pred_sens.push(sr);
                out.tm_sens.push(sm);
            }
            x = next;
            out.pred.push(x.t_r);
            out.meas.push(seg[k + 1].t_r);
            out.tm.push(x.t_m);
            out.tr_meas.push(seg[k + 1].t_r);
        }
    }
    out
}

/// Root-mean-square room-temperature prediction error of `model` on `data`.
///
/// One-step mode predicts each sample from the measured previous one;
/// one-day mode simulates open loop, restarting the room temperature from
/// the measurement every 96 steps.
pub fn evaluate_rmse(model: &DiscreteBuildingModel, data: &IdentDataset, mode: HorizonMode) -> f64 {
    let r = rollout(model, data, mode, STEPS_PER_DAY, false);
    rmse_of(&r)
}

fn rmse_of(r: &Rollout) -> f64 {
    if r.pred.is_empty() {
        return 0.0;
    }
    let sse: f64 = r.pred.iter().zip(&r.meas).map(|(p, y)| (y - p) * (y - p)).sum();
    (sse / r.pred.len() as f64).sqrt()
}

/// The regression as a smooth NLP in scaled coordinates `z_i = θ_j · s_j`.
struct SysidProblem<'a> {
    data: &'a IdentDataset,
    cfg: &'a FitConfig,
    free: &'static [usize],
    scale: [f64; NPAR],
    lo: [f64; NPAR],
    hi: [f64; NPAR],
    u_checks: Vec<f64>,
    t_s: f64,
}

impl<'a> SysidProblem<'a> {
    fn new(data: &'a IdentDataset, cfg: &'a FitConfig) -> Self {
        let rms = |f: &dyn Fn(&IdentRow) -> f64| {
            let v = (data.rows().map(|r| f(r) * f(r)).sum::<f64>() / data.len() as f64).sqrt();
            if v > 0.0 && v.is_finite() { v } else { 1.0 }
        };
        let s_tr = rms(&|r| r.t_r);
        let scale = [s_tr, s_tr, s_tr, s_tr, rms(&|r| (r.t_s - r.t_r) * r.mdot), rms(&|r| r.t_a), rms(&|r| r.g), rms(&|r| r.i_g)];
        let [u_lo, u_hi] = data.flow_range();
        let mut u_checks = vec![0.0, u_lo, u_hi];
        u_checks.dedup();
        Self {
            data,
            cfg,
            free: cfg.free(),
            scale,
            lo: [-1.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0],
            hi: [1.0, 2.0, 2.0, 1.0, 10.0, 1.0, 1.0, 1.0],
            u_checks,
            t_s: data.mean_supply(),
        }
    }

    fn theta(&self, z: &[f64]) -> [f64; NPAR] {
        let mut t = [0.0; NPAR];
        for (i, &j) in self.free.iter().enumerate() {
            t[j] = z[i] / self.scale[j];
        }
        t
    }

    fn to_z(&self, theta: &[f64; NPAR]) -> Vec<f64> {
        self.free.iter().map(|&j| theta[j].clamp(self.lo[j], self.hi[j]) * self.scale[j]).collect()
    }

    fn model(&self, z: &[f64]) -> DiscreteBuildingModel {
        model_of(&self.theta(z), self.t_s, self.data.period_s)
    }

    fn num_stability(&self) -> usize {
        self.u_checks.len() * if self.cfg.n_states == 2 { 4 } else { 2 }
    }

    fn two_state(&self) -> bool {
        self.cfg.n_states == 2
    }

    /// Stability rows and their derivatives with respect to θ.
    fn stability(&self, th: &[f64; NPAR], mut emit: impl FnMut(f64, [f64; NPAR])) {
        let d = STABILITY_MARGIN;
        for &u in &self.u_checks {
            let m11 = th[0] - th[4] * u;
            if self.two_state() {
                let tr = m11 + th[3];
                let det = m11 * th[3] - th[1] * th[2];
                let mut dtr = [0.0; NPAR];
                dtr[0] = 1.0;
                dtr[3] = 1.0;
                dtr[4] = -u;
                let mut ddet = [0.0; NPAR];
                ddet[0] = th[3];
                ddet[1] = -th[2];
                ddet[2] = -th[1];
                ddet[3] = m11;
                ddet[4] = -u * th[3];
                let neg = |a: [f64; NPAR]| a.map(|v| -v);
                let sub = |a: [f64; NPAR], b: [f64; NPAR]| {
                    let mut o = a;
                    for j in 0..NPAR {
                        o[j] -= b[j];
                    }
                    o
                };
                emit(det - 1.0 + d, ddet);
                emit(-1.0 - det + d, neg(ddet));
                emit(tr - 1.0 - det + d, sub(dtr, ddet));
                emit(-tr - 1.0 - det + d, sub(neg(dtr), ddet));
            } else {
                let mut dm = [0.0; NPAR];
                dm[0] = 1.0;
                dm[4] = -u;
                emit(m11 - 1.0 + d, dm);
                emit(-1.0 - m11 + d, dm.map(|v| -v));
            }
        }
    }
}

impl NlpProblem for SysidProblem<'_> {
    fn dim(&self) -> usize {
        self.free.len()
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let lo = self.free.iter().map(|&j| self.lo[j] * self.scale[j]).collect();
        let hi = self.free.iter().map(|&j| self.hi[j] * self.scale[j]).collect();
        (lo, hi)
    }

    fn num_inequality(&self) -> usize {
        self.num_stability() + if self.two_state() { 2 * self.data.len() } else { 0 }
    }

    /// Stationarity is judged on the mean squared error: the sum over all
    /// transitions has a rounding floor that grows with the data length.
    fn objective_scale(&self) -> Option<f64> {
        Some(self.data.transitions().max(1) as f64)
    }

    fn objective(&self, z: &[f64]) -> f64 {
        let r = rollout(&self.model(z), self.data, self.cfg.horizon, self.cfg.steps_per_day, false);
        r.pred.iter().zip(&r.meas).map(|(p, y)| (p - y) * (p - y)).sum()
    }

    fn gradient(&self, z: &[f64], grad: &mut [f64]) {
        let r = rollout(&self.model(z), self.data, self.cfg.horizon, self.cfg.steps_per_day, true);
        let mut g = [0.0; NPAR];
        for ((p, y), s) in r.pred.iter().zip(&r.meas).zip(&r.pred_sens) {
            let e = 2.0 * (p - y);
            for j in 0..NPAR {
                g[j] += e * s[j];
            }
        }
        for (i, &j) in self.free.iter().enumerate() {
            grad[i] = g[j] / self.scale[j];
        }
    }

    fn inequality(&self, z: &[f64], out: &mut [f64]) {
        let th = self.theta(z);
        let mut i = 0;
        self.stability(&th, |v, _| {
            out[i] = v;
            i += 1;
        });
        if self.two_state() {
            let [low, high] = self.cfg.tm_bounds;
            let r = rollout(&self.model(z), self.data, self.cfg.horizon, self.cfg.steps_per_day, false);
            for (&tm, &tr) in r.tm.iter().zip(&r.tr_meas) {
                out[i] = low * tr - tm;
                out[i + 1] = tm - high * tr;
                i += 2;
            }
        }
    }

    fn inequality_jacobian(&self, z: &[f64], jac: &mut DMatrix<f64>) {
        let th = self.theta(z);
        let free = self.free;
        let scale = self.scale;
        let put = |row: usize, d: &[f64; NPAR], sign: f64, jac: &mut DMatrix<f64>| {
            for (c, &j) in free.iter().enumerate() {
                jac[(row, c)] = sign * d[j] / scale[j];
            }
        };
        let mut i = 0;
        self.stability(&th, |_, d| {
            put(i, &d, 1.0, jac);
            i += 1;
        });
        if self.two_state() {
            let r = rollout(&self.model(z), self.data, self.cfg.horizon, self.cfg.steps_per_day, true);
            for s in &r.tm_sens {
                put(i, s, -1.0, jac);
                put(i + 1, s, 1.0, jac);
                i += 2;
            }
        }
    }
}

/// Linear least-squares one-step regression of the single-state model,
/// clipped to the admissible box. Used to seed the nonlinear fits.
fn regression_guess(data: &IdentDataset) -> [f64; NPAR] {
    let n = data.transitions();
    let mut x = DMatrix::zeros(n, 5);
    let mut y = DVector::zeros(n);
    let mut i = 0;
    for seg in &data.segments {
        for w in seg.windows(2) {
            let r = &w[0];
            x[(i, 0)] = r.t_r;
            x[(i, 1)] = (r.t_s - r.t_r) * r.mdot;
            x[(i, 2)] = r.t_a;
            x[(i, 3)] = r.g;
            x[(i, 4)] = r.i_g;
            y[i] = w[1].t_r;
            i += 1;
        }
    }
    // Column scaling keeps the pseudo-inverse cut-off meaningful.
    let scales: Vec<f64> = (0..5).map(|j| x.column(j).amax().max(1e-300)).collect();
    for j in 0..5 {
        x.column_mut(j).scale_mut(1.0 / scales[j]);
    }
    let coef = x.svd(true, true).solve(&y, 1e-10).unwrap_or_else(|_| DVector::zeros(5));
    let c: Vec<f64> = (0..5).map(|j| coef[j] / scales[j]).collect();
    [c[0].clamp(-0.99, 0.99), 0.0, 0.0, 0.0, c[1].max(0.0), c[2].max(0.0), c[3].max(0.0), c[4].max(0.0)]
}

fn starts(cfg: &FitConfig, guess: &[f64; NPAR]) -> Vec<[f64; NPAR]> {
    if cfg.n_states == 1 {
        return vec![*guess];
    }
    [(0.9, 0.1), (0.97, 0.05), (0.6, 0.3), (0.95, 0.2)]
        .iter()
        .map(|&(a22, a12)| {
            let mut t = *guess;
            t[0] = guess[0] - a12;
            t[1] = a12;
            t[2] = 1.0 - a22;
            t[3] = a22;
            t
        })
        .collect()
}

struct Candidate {
    report: nlp::SolveReport,
    theta: [f64; NPAR],
}

fn run_starts(problem: &SysidProblem, starts: &[[f64; NPAR]]) -> Vec<Candidate> {
    starts
        .par_iter()
        .map(|s| {
            let report = nlp::solve(problem, &problem.to_z(s), &problem.cfg.solve);
            let theta = problem.theta(&report.z);
            Candidate { report, theta }
        })
        .collect()
}

/// Lowest objective among candidates within the violation tolerance, or the
/// least infeasible one if none is. The first of equal candidates wins.
fn pick(cands: &[Candidate], tol: f64) -> usize {
    let feasible: Vec<usize> = (0..cands.len()).filter(|&i| cands[i].report.max_violation <= tol).collect();
    let pool = if feasible.is_empty() { (0..cands.len()).collect() } else { feasible };
    let key = |i: usize| if cands[i].report.max_violation <= tol { cands[i].report.objective } else { cands[i].report.max_violation };
    pool.into_iter().fold(None, |best: Option<usize>, i| match best {
        Some(b) if key(b) <= key(i) => Some(b),
        _ => Some(i),
    })
    .expect("at least one start")
}

/// Fits the configured model variant to `data`.
pub fn fit_model(data: &IdentDataset, cfg: &FitConfig) -> Result<FitReport> {
    cfg.validate()?;
    let n_par = cfg.free().len();
    if data.transitions() < 10 * n_par {
        return Err(Error::InsufficientData(format!(
            "{} transitions for {n_par} parameters; need at least {}",
            data.transitions(),
            10 * n_par
        )));
    }
    let guess = regression_guess(data);
    let mut start_set = starts(cfg, &guess);
    if cfg.horizon == HorizonMode::OneDay {
        let step_cfg = FitConfig { horizon: HorizonMode::OneStep, ..cfg.clone() };
        let step_problem = SysidProblem::new(data, &step_cfg);
        let cands = run_starts(&step_problem, &start_set);
        let best = pick(&cands, 10.0 * cfg.solve.violation_tol);
        start_set.insert(0, cands[best].theta);
    }

    let problem = SysidProblem::new(data, cfg);
    let cands = run_starts(&problem, &start_set);
    let best = pick(&cands, 10.0 * cfg.solve.violation_tol);
    let c = &cands[best];

    if c.report.max_violation > 1e-3 {
        let mut g = vec![0.0; problem.num_inequality()];
        problem.inequality(&c.report.z, &mut g);
        let ns = problem.num_stability();
        let (idx, worst) = g.iter().enumerate().fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        let (class, detail) = if idx < ns {
            ("stability", format!("stability condition violated by {worst:.3e}"))
        } else {
            let sample = (idx - ns) / 2;
            ("thermal-mass bounds", format!("reconstructed T_m leaves its bounds by {worst:.3e} °C at sample {sample}"))
        };
        return Err(Error::Infeasible { class, detail });
    }
    if !c.report.converged {
        log::warn!("identification did not converge; returning the best iterate");
    }

    let equivalent_optima = cands
        .iter()
        .filter(|o| {
            o.report.max_violation <= 10.0 * cfg.solve.violation_tol
                && (o.report.objective - c.report.objective).abs() <= 1e-8 * c.report.objective.abs().max(1e-12)
                && o.theta.iter().zip(&c.theta).any(|(a, b)| (a - b).abs() > 1e-4 * b.abs().max(1e-6))
        })
        .count();
    let model = problem.model(&c.report.z);
    let r = rollout(&model, data, cfg.horizon, cfg.steps_per_day, false);
    Ok(FitReport {
        model,
        rmse: rmse_of(&r),
        residuals: r.meas.iter().zip(&r.pred).map(|(y, p)| y - p).collect(),
        n_states: cfg.n_states,
        horizon: cfg.horizon,
        objective: c.report.objective,
        converged: c.report.converged,
        iterations: c.report.iterations,
        stationarity: c.report.stationarity,
        max_violation: c.report.max_violation,
        starts: start_set.len(),
        equivalent_optima,
    })
}

/// Reconstructed mass temperature of `model` on `data` under `mode`, one
/// value per row.
pub fn reconstruct_mass_temperature(model: &DiscreteBuildingModel, data: &IdentDataset, mode: HorizonMode) -> Vec<f64> {
    rollout(model, data, mode, STEPS_PER_DAY, false).tm
}

/// Names of the identified entries in parameter-vector order.
pub fn parameter_names() -> &'static [&'static str] {
    &PARAM_NAMES
}
