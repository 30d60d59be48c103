//! Property suite behind the `verify` subcommand.
//!
//! Each check exercises a structural property the controllers rely on:
//! shape of the fan curve, where activation extremes are attained, the
//! ordering between linearised and exact envelopes, robustness of a solved
//! schedule, filter covariance health, signal analytics, solver derivatives
//! and tracking quality.

use std::time::Instant;

use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::climate::{kf_predict, kf_update, KalmanState, NoiseConfig};
use crate::fan::FanCurves;
use crate::model::{BuildingState, DiscreteBuildingModel, Disturbance, DEFAULT_STEP_S};
use crate::nlp::{check_gradients, NlpProblem};
use crate::regulation::{run_tracking, tracking_rmse, GainSchedule, TrackingLoop, TrackingSlot, DEFAULT_EPSILON, DEFAULT_NOISE_W, DEFAULT_TAU_S};
use crate::scheduler::{envelope_flows, evaluate_envelopes, schedule_reserves_exact, verify_schedule, MarketScenario, ScheduleProblem};
use crate::signal::{energy_content, RegulationSignal};
use crate::weather::{synthetic_disturbances, WeatherConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

type Check = fn(u64) -> (bool, String);

const CHECKS: &[(&str, Check)] = &[
    ("fan curve increasing and convex", fan_shape),
    ("activation extremes at ±w_lim", activation_extremes),
    ("linearised envelope flows bounded by exact", envelope_flow_order),
    ("linearised envelopes are warmer", envelopes_warmer),
    ("envelope models coincide at w_lim = 1", envelopes_coincide),
    ("Monte Carlo stays inside exact envelopes", monte_carlo),
    ("EKF covariance symmetric PSD", ekf_covariance),
    ("energy content of reference signals", signal_reference),
    ("scheduler derivatives vs finite differences", scheduler_gradients),
    ("square-wave tracking", square_wave),
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|(n, _)| *n).collect()
}

/// Runs every check with randomness derived from `seed`.
pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .map(|(name, check)| {
            let t = Instant::now();
            let (passed, detail) = check(seed);
            CheckOutcome { name, passed, detail, seconds: t.elapsed().as_secs_f64() }
        })
        .collect()
}

pub fn render_table(outcomes: &[CheckOutcome]) -> String {
    let width = outcomes.iter().map(|o| o.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for o in outcomes {
        out.push_str(&format!("{:<4}  {:<width$}  {:>7.2}s  {}\n", if o.passed { "PASS" } else { "FAIL" }, o.name, o.seconds, o.detail));
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    out.push_str(&format!("{} checks, {} failed\n", outcomes.len(), failed));
    out
}

fn flow_domain(c: &FanCurves) -> [f64; 2] {
    [c.h(10.0), c.h(90.0)]
}

fn fan_shape(_: u64) -> (bool, String) {
    let c = FanCurves::reference();
    let [lo, hi] = flow_domain(&c);
    let (mut min_d1, mut min_d2) = (f64::INFINITY, f64::INFINITY);
    for i in 0..1000 {
        let u = lo + (hi - lo) * i as f64 / 999.0;
        min_d1 = min_d1.min(c.df(u));
        min_d2 = min_d2.min(c.d2f(u));
    }
    (min_d1 > 0.0 && min_d2 >= 0.0, format!("min f' = {min_d1:.3}, min f'' = {min_d2:.3}"))
}

/// A reserve pair inside the flow domain around a random operating point.
fn random_reserve(c: &FanCurves, rng: &mut ChaCha8Rng) -> (f64, f64, f64) {
    let [lo, hi] = flow_domain(c);
    let u = rng.random_range(lo..hi);
    (u, rng.random_range(0.0..=hi - u), rng.random_range(0.0..=u - lo))
}

fn activation_extremes(seed: u64) -> (bool, String) {
    let c = FanCurves::reference();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut worst_full = 0.0f64;
    for _ in 0..10_000 {
        let (u, r_u, r_d) = random_reserve(&c, &mut rng);
        let p = c.f(u);
        let (up, down) = (p - c.f(u - r_d), c.f(u + r_u) - p);
        for w_lim in [0.1, 0.25, 0.5, 1.0] {
            // Realised flow over a grid of activations including both ends.
            let (mut q_min, mut q_max) = (f64::INFINITY, f64::NEG_INFINITY);
            for j in 0..=20 {
                let w = -w_lim + 2.0 * w_lim * j as f64 / 20.0;
                let q = c.f_inv(p + if w >= 0.0 { w * down } else { w * up });
                q_min = q_min.min(q);
                q_max = q_max.max(q);
            }
            let [lo_closed, hi_closed] = envelope_flows(&c, u, r_u, r_d, w_lim, true);
            worst = worst.max((q_min - lo_closed).abs()).max((q_max - hi_closed).abs());
            if w_lim == 1.0 {
                worst_full = worst_full.max((q_min - (u - r_d)).abs()).max((q_max - (u + r_u)).abs());
            }
        }
    }
    (worst <= 1e-6 && worst_full <= 1e-6, format!("max deviation {worst:.1e} kg/s, at w_lim = 1 {worst_full:.1e} kg/s"))
}

fn envelope_flow_order(seed: u64) -> (bool, String) {
    let c = FanCurves::reference();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..10_000 {
        let (u, r_u, r_d) = random_reserve(&c, &mut rng);
        let w = rng.random_range(0.0..=1.0);
        let [low_exact, high_exact] = envelope_flows(&c, u, r_u, r_d, w, true);
        let [low_lin, high_lin] = envelope_flows(&c, u, r_u, r_d, w, false);
        worst = worst.max(low_lin - low_exact).max(high_lin - high_exact);
    }
    (worst <= 1e-9, format!("largest linearised-minus-exact flow {worst:.1e} kg/s"))
}

fn twelve_step(w_lim: f64) -> (DiscreteBuildingModel, FanCurves, MarketScenario, BuildingState) {
    let m = DiscreteBuildingModel::reference_new();
    let c = FanCurves::reference();
    let start = 40;
    let v: Vec<Disturbance> = synthetic_disturbances(&WeatherConfig::default(), 3, start + 12, DEFAULT_STEP_S)[start..].to_vec();
    let sc = MarketScenario::synthetic(&c, v, start, DEFAULT_STEP_S, w_lim, 11);
    (m, c, sc, BuildingState::new(22.5, 23.0))
}

fn random_decisions(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let u: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..0.9)).collect();
    let r_u = (0..n).map(|_| rng.random_range(0.0..0.3)).collect();
    let r_d = (0..n).map(|_| rng.random_range(0.0..0.3)).collect();
    (u, r_u, r_d)
}

fn envelopes_warmer(seed: u64) -> (bool, String) {
    let (m, c, sc, x0) = twelve_step(0.25);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa11);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..200 {
        let (u, r_u, r_d) = random_decisions(&mut rng, 12);
        let (ah, al) = evaluate_envelopes(&m, &c, &sc, x0, &u, &r_u, &r_d, false);
        let (eh, el) = evaluate_envelopes(&m, &c, &sc, x0, &u, &r_u, &r_d, true);
        for k in 0..=12 {
            worst = worst.max(eh[k].t_r - ah[k].t_r).max(el[k].t_r - al[k].t_r);
        }
    }
    (worst <= 1e-12, format!("largest exact-minus-linearised temperature {worst:.1e} °C"))
}

fn envelopes_coincide(seed: u64) -> (bool, String) {
    let (m, c, sc, x0) = twelve_step(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc01);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (u, r_u, r_d) = random_decisions(&mut rng, 12);
        let (ah, al) = evaluate_envelopes(&m, &c, &sc, x0, &u, &r_u, &r_d, false);
        let (eh, el) = evaluate_envelopes(&m, &c, &sc, x0, &u, &r_u, &r_d, true);
        for k in 0..=12 {
            worst = worst.max((eh[k].t_r - ah[k].t_r).abs()).max((el[k].t_r - al[k].t_r).abs());
        }
    }
    (worst <= 1e-9, format!("largest gap {worst:.1e} °C"))
}

fn monte_carlo(seed: u64) -> (bool, String) {
    let (m, c, sc, x0) = twelve_step(0.25);
    let s = match schedule_reserves_exact(&m, &c, &sc, x0) {
        Ok(s) => s,
        Err(e) => return (false, format!("scheduling failed: {e}")),
    };
    let r = verify_schedule(&m, &c, &s, &sc, 200, seed);
    (
        r.max_envelope_excursion <= 0.05 && r.max_comfort_violation <= 0.05,
        format!("{} draws, envelope excursion {:.1e} °C, comfort violation {:.1e} °C", r.draws, r.max_envelope_excursion, r.max_comfort_violation),
    )
}

fn ekf_covariance(seed: u64) -> (bool, String) {
    let m = DiscreteBuildingModel::reference_new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xeff);
    let mut worst_asym = 0.0f64;
    let mut min_eig = f64::INFINITY;
    let mut st = KalmanState::new(BuildingState::new(22.0, 27.0), Matrix2::identity());
    for i in 0..10_000 {
        if i % 500 == 0 {
            st = KalmanState::new(BuildingState::new(22.0, 27.0), Matrix2::identity() * rng.random_range(0.01..10.0));
        }
        let noise = NoiseConfig { q: [[rng.random_range(1e-6..1.0), 0.0], [0.0, rng.random_range(1e-6..1.0)]], r: 10f64.powf(rng.random_range(-6.0..3.0)) };
        let v = Disturbance::new(rng.random_range(15.0..35.0), rng.random_range(0.0..800.0), rng.random_range(0.0..4000.0));
        st = kf_predict(&m, &st, rng.random_range(0.2..1.2), v, &noise);
        st = kf_update(&st, st.x.t_r + rng.random_range(-1.0..1.0), &noise);
        let p = st.p;
        worst_asym = worst_asym.max((p[(0, 1)] - p[(1, 0)]).abs());
        let tr = p[(0, 0)] + p[(1, 1)];
        let det = p[(0, 0)] * p[(1, 1)] - p[(0, 1)] * p[(1, 0)];
        let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
        min_eig = min_eig.min(0.5 * tr - disc);
    }
    (worst_asym == 0.0 && min_eig >= -1e-12, format!("asymmetry {worst_asym:.1e}, smallest eigenvalue {min_eig:.2e}"))
}

fn signal_reference(_: u64) -> (bool, String) {
    let n = 225;
    let constant = RegulationSignal::new(0.0, 4.0, vec![0.5; 4 * n]).expect("valid signal");
    let sine: Vec<f64> = (0..4 * n).map(|k| (2.0 * std::f64::consts::PI * k as f64 / n as f64).sin()).collect();
    let sine = RegulationSignal::new(0.0, 4.0, sine).expect("valid signal");
    let (Ok(a), Ok(b)) = (energy_content(&constant, 900.0), energy_content(&sine, 900.0)) else {
        return (false, "energy content failed".into());
    };
    let err_c = a.contents.iter().map(|e| (e - 0.5).abs()).fold(0.0, f64::max);
    let err_s = b.contents.iter().map(|e| e.abs()).fold(0.0, f64::max);
    (err_c <= 1e-12 && err_s <= 1e-12, format!("constant error {err_c:.1e}, sinusoid error {err_s:.1e}"))
}

fn scheduler_gradients(seed: u64) -> (bool, String) {
    let (m, c, sc, x0) = twelve_step(0.25);
    let p = ScheduleProblem::new(&m, &c, &sc, x0, true, false);
    let (lo, hi) = p.bounds();
    let n = sc.horizon();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9ad);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let z: Vec<f64> = (0..p.dim())
            .map(|i| {
                let (l, h) = if i < n { (0.6, 0.8) } else { (lo[i], hi[i].min(lo[i] + 0.2)) };
                rng.random_range(l..h)
            })
            .collect();
        worst = worst.max(check_gradients(&p, &z, 1e-6).max_error());
    }
    (worst <= 1e-5, format!("max relative error {worst:.1e} over 20 points"))
}

fn square_wave(seed: u64) -> (bool, String) {
    let c = FanCurves::reference();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a);
    let samples: Vec<f64> = (0..900).map(|i| if (i * 4 / 150) % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let sig = RegulationSignal::new(0.0, 4.0, samples).expect("valid signal");
    let slot = TrackingSlot { p_s: 700.0, r_u: 200.0, r_d: 200.0 };
    let run = TrackingLoop::new(&c, GainSchedule::tuned(), DEFAULT_EPSILON, DEFAULT_TAU_S, DEFAULT_NOISE_W, 700.0, &mut rng)
        .and_then(|mut lp| run_tracking(&slot, &sig, &mut lp, sig.duration_s(), &mut rng));
    let run = match run {
        Ok(r) => r,
        Err(e) => return (false, e.to_string()),
    };
    let mut last_edge = f64::NEG_INFINITY;
    let mut kept = Vec::new();
    for (i, r) in run.rows.iter().enumerate() {
        if i > 0 && r.w != run.rows[i - 1].w {
            last_edge = r.t;
        }
        if r.t - last_edge > 20.0 {
            kept.push(*r);
        }
    }
    let rmse = tracking_rmse(&kept);
    let bound = 0.1 * (slot.r_u + slot.r_d);
    (rmse < bound, format!("RMSE {rmse:.2} W outside transients (bound {bound} W)"))
}
