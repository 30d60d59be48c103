//! Level 3: fan-power tracking of the regulation signal.
//!
//! A switched controller runs every four seconds. Large tracking errors are
//! handled by the static speed-to-power map (feedforward); once the error is
//! within `epsilon` a gain-scheduled PI loop in velocity form removes the
//! remaining offset. Switching to feedforward resets the stored error.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fan::FanCurves;
use crate::signal::RegulationSignal;

/// Switching tolerance, W; slightly above the flow-to-power fit error.
pub const DEFAULT_EPSILON: f64 = 25.0;
/// Regulation signal cadence, s.
pub const LOOP_PERIOD_S: f64 = 4.0;
pub const DEFAULT_TAU_S: f64 = 5.0;
pub const DEFAULT_NOISE_W: f64 = 2.0;
pub const SPEED_MIN: f64 = 10.0;
pub const SPEED_MAX: f64 = 90.0;

/// Desired fan power: the baseline plus the requested share of the up or
/// down reserve.
pub fn compute_target(p_s: f64, r_u: f64, r_d: f64, w: f64) -> f64 {
    let r = if w > 0.0 { w * r_d } else { w * r_u };
    p_s + r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainRegion {
    /// Lower edge of the desired-power interval, W (inclusive).
    pub lo_w: f64,
    /// Upper edge, W (exclusive).
    pub hi_w: f64,
    /// Proportional gain, % per W.
    pub kp: f64,
    /// Integral gain, % per W·s.
    pub ki: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule {
    pub regions: Vec<GainRegion>,
}

impl Default for GainSchedule {
    fn default() -> Self {
        Self::tuned()
    }
}

impl GainSchedule {
    /// Hand-tuned gains for five 0.5 kW regions between 0 and 2.5 kW.
    pub fn tuned() -> Self {
        let kp = [0.004, 0.004, 0.004, 0.0045, 0.004];
        let ki = [0.01, 0.0035, 0.003, 0.0025, 0.002];
        Self {
            regions: (0..5).map(|i| GainRegion { lo_w: 500.0 * i as f64, hi_w: 500.0 * (i + 1) as f64, kp: kp[i], ki: ki[i] }).collect(),
        }
    }

    /// Regions must start at 0 W and be contiguous, non-empty and ordered.
    pub fn validate(&self) -> Result<()> {
        let first = self.regions.first().ok_or_else(|| Error::invalid("gain schedule", "no regions"))?;
        if first.lo_w != 0.0 {
            return Err(Error::invalid("gain schedule", format!("first region starts at {} W, not 0", first.lo_w)));
        }
        for (i, r) in self.regions.iter().enumerate() {
            if !(r.lo_w < r.hi_w) {
                return Err(Error::invalid("gain schedule", format!("region {i} is empty")));
            }
            if !(r.kp >= 0.0 && r.ki >= 0.0) {
                return Err(Error::invalid("gain schedule", format!("region {i} has negative gains")));
            }
            if i > 0 && self.regions[i - 1].hi_w != r.lo_w {
                return Err(Error::invalid("gain schedule", format!("gap or overlap between regions {} and {i}", i - 1)));
            }
        }
        Ok(())
    }

    /// Gains for desired power `p_d`. Beyond the last region its gains are
    /// reused and the flag is set; below 0 W the first region applies.
    pub fn lookup(&self, p_d: f64) -> (f64, f64, bool) {
        match self.regions.iter().find(|r| p_d < r.hi_w) {
            Some(r) => (r.kp, r.ki, false),
            None => {
                let r = self.regions.last().expect("validated schedule");
                (r.kp, r.ki, true)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Feedforward,
    Pi,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Feedforward => "feedforward",
            Branch::Pi => "pi",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SwitchedControllerState {
    /// Error stored by the PI loop, W.
    pub e_old: f64,
    /// Commanded speed, %.
    pub n_f: f64,
    pub branch: Branch,
    pub epsilon: f64,
    pub dt: f64,
    /// The last desired power lay outside the fan's speed-power range.
    pub saturated: bool,
    /// The last desired power lay above the gain schedule.
    pub extrapolated: bool,
}

impl SwitchedControllerState {
    pub fn new(n_f: f64, epsilon: f64, dt: f64) -> Self {
        Self { e_old: 0.0, n_f: n_f.clamp(SPEED_MIN, SPEED_MAX), branch: Branch::Feedforward, epsilon, dt, saturated: false, extrapolated: false }
    }
}

/// One pass of the switched controller; returns the new state and the speed
/// command.
pub fn control_step(state: &SwitchedControllerState, p_d: f64, p_f: f64, gains: &GainSchedule, curves: &FanCurves) -> (SwitchedControllerState, f64) {
    let mut s = *state;
    let e_new = p_d - p_f;
    let [plo, phi] = curves.speed_power_range();
    s.saturated = !(plo..=phi).contains(&p_d);
    if e_new.abs() <= s.epsilon {
        let (kp, ki, ext) = gains.lookup(p_d);
        s.extrapolated = ext;
        let n_pi = s.n_f + kp * (e_new - s.e_old) + ki * s.dt * e_new;
        s.n_f = n_pi.clamp(SPEED_MIN, SPEED_MAX);
        s.e_old = e_new;
        s.branch = Branch::Pi;
    } else {
        s.extrapolated = false;
        s.n_f = curves.power_to_speed(p_d.clamp(plo, phi)).unwrap_or(SPEED_MIN).clamp(SPEED_MIN, SPEED_MAX);
        s.e_old = 0.0;
        s.branch = Branch::Feedforward;
    }
    (s, s.n_f)
}

/// First-order speed lag with noisy power measurement.
#[derive(Debug, Clone)]
pub struct FanPlant {
    pub curves: FanCurves,
    pub tau: f64,
    pub sigma: f64,
    /// Actual speed, %.
    pub speed: f64,
}

impl FanPlant {
    pub fn new(curves: FanCurves, tau: f64, sigma: f64, speed: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::invalid("tau", format!("must be positive, got {tau}")));
        }
        if !(sigma >= 0.0) {
            return Err(Error::invalid("sigma", format!("must be non-negative, got {sigma}")));
        }
        Ok(Self { curves, tau, sigma, speed })
    }

    /// Power reading at the current speed.
    pub fn measure(&self, rng: &mut impl Rng) -> f64 {
        let p = self.curves.g(self.speed);
        if self.sigma > 0.0 {
            p + Normal::new(0.0, self.sigma).expect("valid sigma").sample(rng)
        } else {
            p
        }
    }

    /// Advances the speed toward `command` over `dt` seconds (exact
    /// first-order response) and returns the new power reading.
    pub fn step(&mut self, command: f64, dt: f64, rng: &mut impl Rng) -> f64 {
        self.speed += (command - self.speed) * (1.0 - (-dt / self.tau).exp());
        self.measure(rng)
    }

    /// Noise-free power at the current speed.
    pub fn power(&self) -> f64 {
        self.curves.g(self.speed)
    }
}

/// Scheduled operating point of one slot, W.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingSlot {
    pub p_s: f64,
    pub r_u: f64,
    pub r_d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrackingRow {
    pub t: f64,
    pub w: f64,
    pub p_d: f64,
    pub p_f: f64,
    pub n_f: f64,
    pub branch: Branch,
}

/// Controller, plant and the most recent power reading, advanced one tick
/// at a time.
#[derive(Debug, Clone)]
pub struct TrackingLoop {
    pub controller: SwitchedControllerState,
    pub plant: FanPlant,
    pub gains: GainSchedule,
    last_reading: f64,
}

impl TrackingLoop {
    /// The plant starts at rest at the feedforward speed for `p_initial`.
    pub fn new(curves: &FanCurves, gains: GainSchedule, epsilon: f64, tau: f64, sigma: f64, p_initial: f64, rng: &mut impl Rng) -> Result<Self> {
        gains.validate()?;
        if !(epsilon > 0.0) {
            return Err(Error::invalid("epsilon", format!("must be positive, got {epsilon}")));
        }
        let [plo, phi] = curves.speed_power_range();
        let n0 = curves.power_to_speed(p_initial.clamp(plo, phi))?;
        let plant = FanPlant::new(curves.clone(), tau, sigma, n0)?;
        let last_reading = plant.measure(rng);
        Ok(Self { controller: SwitchedControllerState::new(n0, epsilon, LOOP_PERIOD_S), plant, gains, last_reading })
    }

    /// One controller pass against the latest reading, then `dt` seconds of
    /// plant motion. The row carries the reading the controller acted on.
    pub fn tick(&mut self, t: f64, w: f64, slot: &TrackingSlot, dt: f64, rng: &mut impl Rng) -> TrackingRow {
        let p_d = compute_target(slot.p_s, slot.r_u, slot.r_d, w);
        let p_f = self.last_reading;
        let (state, n_f) = control_step(&self.controller, p_d, p_f, &self.gains, &self.plant.curves);
        self.controller = state;
        self.last_reading = self.plant.step(n_f, dt, rng);
        TrackingRow { t, w, p_d, p_f, n_f, branch: state.branch }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackingRun {
    pub rows: Vec<TrackingRow>,
    /// RMS of `P_d − P_f` over the run, W.
    pub rmse: f64,
}

pub fn tracking_rmse(rows: &[TrackingRow]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    (rows.iter().map(|r| (r.p_d - r.p_f).powi(2)).sum::<f64>() / rows.len() as f64).sqrt()
}

/// Tracks `signal` around one operating point for `duration_s` seconds at
/// the signal's own cadence.
pub fn run_tracking(slot: &TrackingSlot, signal: &RegulationSignal, lp: &mut TrackingLoop, duration_s: f64, rng: &mut impl Rng) -> Result<TrackingRun> {
    if (signal.period_s - lp.controller.dt).abs() > 1e-9 {
        return Err(Error::invalid("signal", format!("sample period {} s differs from the loop period {} s", signal.period_s, lp.controller.dt)));
    }
    let ticks = (duration_s / signal.period_s).round() as usize;
    let rows: Vec<TrackingRow> = (0..ticks)
        .map(|i| {
            let t = i as f64 * signal.period_s;
            lp.tick(t, signal.at(t), slot, signal.period_s, rng)
        })
        .collect();
    Ok(TrackingRun { rmse: tracking_rmse(&rows), rows })
}

/// Share of rows with `|P_d − P_f| ≤ epsilon`, skipping `settle_s` seconds
/// after every change of `P_d` larger than `epsilon`.
pub fn settled_share(rows: &[TrackingRow], epsilon: f64, settle_s: f64) -> f64 {
    let mut last_step = f64::NEG_INFINITY;
    let mut counted = 0usize;
    let mut within = 0usize;
    for (i, r) in rows.iter().enumerate() {
        if i > 0 && (r.p_d - rows[i - 1].p_d).abs() > epsilon {
            last_step = r.t;
        }
        if r.t - last_step <= settle_s {
            continue;
        }
        counted += 1;
        if (r.p_d - r.p_f).abs() <= epsilon {
            within += 1;
        }
    }
    if counted == 0 {
        1.0
    } else {
        within as f64 / counted as f64
    }
}
