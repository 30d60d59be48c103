//! Acceptance criteria, run sequentially so that the runtime limits are
//! measured without competing test threads. Prints one line per criterion
//! and exits nonzero if any fails.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use freqreg::climate::{kf_predict, kf_update, ljung_box, Ekf, KalmanState, NoiseConfig};
use freqreg::fan::FanCurves;
use freqreg::model::{BuildingState, DiscreteBuildingModel, Disturbance, DEFAULT_STEP_S};
use freqreg::nlp::check_gradients;
use freqreg::nlp::NlpProblem;
use freqreg::regulation::{run_tracking, settled_share, tracking_rmse, GainSchedule, TrackingLoop, TrackingSlot, DEFAULT_EPSILON};
use freqreg::scheduler::{
    envelope_flows, schedule_reserves, schedule_reserves_exact, verify_schedule, MarketScenario, ScheduleProblem, SymmetryMode,
};
use freqreg::signal::{energy_content, generate_synthetic, load_signal, RegulationSignal};
use freqreg::sysid::{evaluate_rmse, fit_model, synthesize, FitConfig, HorizonMode};
use freqreg::weather::{synthetic_disturbances, WeatherConfig};
use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn within(limit_s: u64, f: impl FnOnce() -> Outcome) -> Outcome {
    let t = Instant::now();
    let mut o = f();
    let el = t.elapsed();
    if el > Duration::from_secs(limit_s) {
        o.passed = false;
    }
    o.detail = format!("{}; {:.2} s (limit {limit_s} s)", o.detail, el.as_secs_f64());
    o
}

fn flow_domain(c: &FanCurves) -> [f64; 2] {
    [c.h(10.0), c.h(90.0)]
}

fn fan_shape() -> Outcome {
    let c = FanCurves::reference();
    let [lo, hi] = flow_domain(&c);
    let mut bad = 0;
    let (mut d1, mut d2) = (f64::INFINITY, f64::INFINITY);
    for i in 0..1000 {
        let u = lo + (hi - lo) * i as f64 / 999.0;
        // Finite differences of f as a second route to the analytic
        // derivatives.
        let h = 1e-4;
        let fd1 = (c.f(u + h) - c.f(u - h)) / (2.0 * h);
        let fd2 = (c.f(u + h) - 2.0 * c.f(u) + c.f(u - h)) / (h * h);
        if !(c.df(u) > 0.0 && c.d2f(u) >= 0.0 && fd1 > 0.0 && fd2 >= -1e-3) {
            bad += 1;
        }
        d1 = d1.min(c.df(u));
        d2 = d2.min(c.d2f(u));
    }
    outcome(bad == 0, format!("min f' {d1:.2} W·s/kg, min f'' {d2:.2}, {bad} bad points"))
}

fn random_reserve(c: &FanCurves, rng: &mut ChaCha8Rng) -> (f64, f64, f64) {
    let [lo, hi] = flow_domain(c);
    let u = rng.random_range(lo..hi);
    (u, rng.random_range(0.0..=hi - u), rng.random_range(0.0..=u - lo))
}

/// Realised flow for activation `w`, straight from the power balance.
fn realised(c: &FanCurves, u: f64, r_u: f64, r_d: f64, w: f64) -> f64 {
    let p = c.f(u);
    let reserve = if w >= 0.0 { c.f(u + r_u) - p } else { p - c.f(u - r_d) };
    c.f_inv(p + w * reserve)
}

fn activation_extremes() -> Outcome {
    let c = FanCurves::reference();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst, mut worst_full) = (0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let (u, r_u, r_d) = random_reserve(&c, &mut rng);
        for w_lim in [0.1, 0.25, 0.5, 1.0] {
            let (mut q_min, mut q_max) = (f64::INFINITY, f64::NEG_INFINITY);
            for j in 0..=40 {
                let q = realised(&c, u, r_u, r_d, -w_lim + 2.0 * w_lim * j as f64 / 40.0);
                q_min = q_min.min(q);
                q_max = q_max.max(q);
            }
            let [lo, hi] = envelope_flows(&c, u, r_u, r_d, w_lim, true);
            worst = worst.max((q_min - lo).abs()).max((q_max - hi).abs());
            if w_lim == 1.0 {
                worst_full = worst_full.max((lo - (u - r_d)).abs()).max((hi - (u + r_u)).abs());
            }
        }
    }
    outcome(worst <= 1e-6 && worst_full <= 1e-6, format!("max deviation {worst:.1e} kg/s, at w_lim = 1 {worst_full:.1e} kg/s"))
}

fn twelve_step(w_lim: f64) -> (DiscreteBuildingModel, FanCurves, MarketScenario, BuildingState) {
    let m = DiscreteBuildingModel::reference_new();
    let c = FanCurves::reference();
    let start = 40;
    let v = synthetic_disturbances(&WeatherConfig::default(), 3, start + 12, DEFAULT_STEP_S)[start..].to_vec();
    let sc = MarketScenario::synthetic(&c, v, start, DEFAULT_STEP_S, w_lim, 11);
    (m, c, sc, BuildingState::new(22.5, 23.0))
}

fn approximate_warmer() -> Outcome {
    let (m, c, sc, x0) = twelve_step(0.25);
    let (a, e) = match (schedule_reserves(&m, &c, &sc, x0), schedule_reserves_exact(&m, &c, &sc, x0)) {
        (Ok(a), Ok(e)) => (a, e),
        (Err(e), _) | (_, Err(e)) => return outcome(false, format!("scheduling failed: {e}")),
    };
    let mut worst = f64::NEG_INFINITY;
    for k in 0..=12 {
        worst = worst.max(e.upper[k].t_r - a.upper[k].t_r).max(e.lower[k].t_r - a.lower[k].t_r);
    }
    outcome(worst <= 1e-4, format!("largest exact-minus-linearised envelope {worst:.2e} °C"))
}

fn full_activation_coincide() -> Outcome {
    let (m, c, sc, x0) = twelve_step(1.0);
    let (a, e) = match (schedule_reserves(&m, &c, &sc, x0), schedule_reserves_exact(&m, &c, &sc, x0)) {
        (Ok(a), Ok(e)) => (a, e),
        (Err(e), _) | (_, Err(e)) => return outcome(false, format!("scheduling failed: {e}")),
    };
    let rel = (a.objective - e.objective).abs() / a.objective.abs().max(1e-12);
    let mut gap = 0.0f64;
    for k in 0..=12 {
        gap = gap.max((a.upper[k].t_r - e.upper[k].t_r).abs()).max((a.lower[k].t_r - e.lower[k].t_r).abs());
    }
    outcome(rel <= 1e-4 && gap <= 1e-3, format!("objective gap {rel:.1e} relative, envelope gap {gap:.1e} °C"))
}

fn monte_carlo() -> Outcome {
    let (m, c, sc, x0) = twelve_step(0.25);
    let s = match schedule_reserves_exact(&m, &c, &sc, x0) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("scheduling failed: {e}")),
    };
    let r = verify_schedule(&m, &c, &s, &sc, 200, 5);
    outcome(
        r.draws == 202 && r.max_envelope_excursion <= 0.05 && r.max_comfort_violation <= 0.05,
        format!("{} draws, envelope excursion {:.1e} °C, comfort violation {:.1e} °C", r.draws, r.max_envelope_excursion, r.max_comfort_violation),
    )
}

fn excitation(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u = rng.random_range(0.1936..1.2576);
        out.extend(std::iter::repeat_n(u, rng.random_range(1..=4)));
    }
    out.truncate(n);
    out
}

fn identification() -> Outcome {
    let truth = DiscreteBuildingModel::reference_new();
    let n = 7 * 96;
    let mut worst_fit = 0.0f64;
    let mut order_failures = Vec::new();
    let mut sums = [0.0; 4];
    for seed in 0..10u64 {
        let v = synthetic_disturbances(&WeatherConfig::default(), seed, n, DEFAULT_STEP_S);
        let data = match synthesize(&truth, 22.0, &excitation(seed, n), &v, 0.05, seed) {
            Ok(d) => d,
            Err(e) => return outcome(false, e.to_string()),
        };
        // All variants scored on the same day-ahead prediction error.
        let mut day = [0.0; 4];
        for (i, (states, mode)) in [(2, HorizonMode::OneDay), (2, HorizonMode::OneStep), (1, HorizonMode::OneStep), (1, HorizonMode::OneDay)].into_iter().enumerate() {
            let rep = match fit_model(&data, &FitConfig::new(states, mode)) {
                Ok(r) => r,
                Err(e) => return outcome(false, format!("seed {seed}: {e}")),
            };
            day[i] = evaluate_rmse(&rep.model, &data, HorizonMode::OneDay);
            sums[i] += day[i];
        }
        worst_fit = worst_fit.max(day[0]);
        let [d2d, d2s, d1s, d1d] = day;
        if !(d2d <= d2s && d2s <= d1s && d1d <= d1s) {
            order_failures.push(format!("seed {seed}: {day:.4?}"));
        }
    }
    let mean = sums.map(|s| s / 10.0);
    outcome(
        worst_fit <= 0.1 && order_failures.is_empty(),
        format!(
            "worst 2-state/1-day RMSE {worst_fit:.4} °C; mean day-ahead RMSE 2s/1d {:.3}, 2s/1s {:.3}, 1s/1s {:.3}, 1s/1d {:.3}; ordering failures {:?}",
            mean[0], mean[1], mean[2], mean[3], order_failures
        ),
    )
}

/// Single-slot objective with linearised envelopes, as the scheduler
/// states it: energy cost, minus reserve revenue, plus comfort penalties on
/// the warm and cold envelope.
fn slot_objective(m: &DiscreteBuildingModel, c: &FanCurves, sc: &MarketScenario, x0: BuildingState, u: f64, r_u: f64, r_d: f64) -> f64 {
    let (cp, lam, w, pen, v) = (sc.energy_price[0], sc.reserve_price[0], sc.w_lim, sc.comfort_penalty, sc.disturbances[0]);
    let warm = m.step(x0, u - w * r_d, v).t_r;
    let cold = m.step(x0, u + w * r_u, v).t_r;
    cp * c.f(u) - lam * (c.f(u + r_u) - c.f(u - r_d)) + pen * (warm - sc.comfort_max[0]).max(0.0) + pen * (sc.comfort_min[0] - cold).max(0.0)
}

/// Exhaustive search at resolution `h`. Returns the best objective and the
/// largest change of the objective over the neighbouring grid cells of the
/// optimum.
fn grid_search(m: &DiscreteBuildingModel, c: &FanCurves, sc: &MarketScenario, x0: BuildingState, h: f64) -> (f64, f64) {
    let [lo, hi] = sc.flow_bounds;
    let n = ((hi - lo) / h).floor() as i64;
    let at = |i: i64| lo + i as f64 * h;
    let feasible = |i: i64, ju: i64, jd: i64| i >= 0 && i <= n && ju >= 0 && jd >= 0 && i + ju <= n && i - jd >= 0;
    let obj = |i: i64, ju: i64, jd: i64| slot_objective(m, c, sc, x0, at(i), ju as f64 * h, jd as f64 * h);
    let mut best = (f64::INFINITY, 0, 0, 0);
    for i in 0..=n {
        // For fixed u the objective separates into an r_u part and an r_d
        // part, so each is searched on its own.
        let (mut bu, mut ju_best) = (f64::INFINITY, 0);
        for ju in 0..=(n - i) {
            let val = obj(i, ju, 0);
            if val < bu {
                bu = val;
                ju_best = ju;
            }
        }
        let (mut bd, mut jd_best) = (f64::INFINITY, 0);
        for jd in 0..=i {
            let val = obj(i, 0, jd);
            if val < bd {
                bd = val;
                jd_best = jd;
            }
        }
        let val = obj(i, ju_best, jd_best);
        if val < best.0 {
            best = (val, i, ju_best, jd_best);
        }
    }
    let (g, i, ju, jd) = best;
    let mut variation = 0.0f64;
    for di in -1..=1 {
        for du in -1..=1 {
            for dd in -1..=1 {
                if feasible(i + di, ju + du, jd + dd) {
                    variation = variation.max((obj(i + di, ju + du, jd + dd) - g).abs());
                }
            }
        }
    }
    (g, variation)
}

fn scheduler_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst = f64::NEG_INFINITY;
    let mut failures = 0;
    for draw in 0..20 {
        let m = DiscreteBuildingModel::reference_new();
        let c = FanCurves::reference();
        let start = rng.random_range(0..96);
        let v = synthetic_disturbances(&WeatherConfig::default(), 3, start + 1, DEFAULT_STEP_S)[start..].to_vec();
        let mut sc = MarketScenario::synthetic(&c, v, start, DEFAULT_STEP_S, rng.random_range(0.1..0.5), 11 + draw);
        sc.symmetry = SymmetryMode::None;
        sc.block_len = 1;
        sc.energy_price[0] *= rng.random_range(0.2..2.0);
        sc.reserve_price[0] *= rng.random_range(0.5..4.0);
        sc.flow_bounds = [rng.random_range(0.1936..0.4), rng.random_range(0.9..1.2576)];
        let x0 = BuildingState::new(rng.random_range(21.0..24.0), rng.random_range(22.0..26.0));
        let s = match schedule_reserves(&m, &c, &sc, x0) {
            Ok(s) => s,
            Err(e) => return outcome(false, format!("draw {draw}: {e}")),
        };
        let (g, variation) = grid_search(&m, &c, &sc, x0, 1e-3);
        let gap = (s.objective - g).abs() / variation.max(1e-12);
        worst = worst.max(gap);
        if (s.objective - g).abs() > variation {
            failures += 1;
        }
    }
    outcome(failures == 0, format!("largest |solver - grid| is {worst:.2} grid-cell variations; {failures} of 20 outside"))
}

fn is_psd(p: &Matrix2<f64>) -> (f64, f64) {
    let tr = p[(0, 0)] + p[(1, 1)];
    let det = p[(0, 0)] * p[(1, 1)] - p[(0, 1)] * p[(1, 0)];
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    ((p[(0, 1)] - p[(1, 0)]).abs(), 0.5 * tr - disc)
}

fn ekf_suite() -> Outcome {
    let m = DiscreteBuildingModel::reference_new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut asym, mut min_eig) = (0.0f64, f64::INFINITY);
    let mut st = KalmanState::new(BuildingState::new(22.0, 26.0), Matrix2::identity());
    for i in 0..10_000 {
        if i % 1000 == 0 {
            let a: f64 = rng.random_range(0.0..2.0);
            let b: f64 = rng.random_range(0.0..2.0);
            let cc: f64 = rng.random_range(-1.0..1.0);
            st.p = Matrix2::new(a * a + 1e-3, a * cc, a * cc, cc * cc + b * b + 1e-3);
        }
        let noise = NoiseConfig { q: [[rng.random_range(1e-6..1.0), 0.0], [0.0, rng.random_range(1e-6..1.0)]], r: 10f64.powf(rng.random_range(-6.0..3.0)) };
        let v = Disturbance::new(rng.random_range(15.0..35.0), rng.random_range(0.0..800.0), rng.random_range(0.0..4000.0));
        st = kf_predict(&m, &st, rng.random_range(0.1936..1.2576), v, &noise);
        let (a, e) = is_psd(&st.p);
        asym = asym.max(a);
        min_eig = min_eig.min(e);
        st = kf_update(&st, st.x.t_r + rng.random_range(-1.0..1.0), &noise);
        let (a, e) = is_psd(&st.p);
        asym = asym.max(a);
        min_eig = min_eig.min(e);
    }
    let psd = asym <= 1e-12 && min_eig >= -1e-12;

    let prior = KalmanState::new(BuildingState::new(22.0, 24.0), Matrix2::new(0.5, 0.1, 0.1, 0.4));
    let ignore = kf_update(&prior, 25.0, &NoiseConfig { r: 1e9, ..Default::default() });
    let trust = kf_update(&prior, 25.0, &NoiseConfig { r: 1e-9, ..Default::default() });
    let limits = (ignore.x.t_r - 22.0).abs() < 1e-8 && (ignore.x.t_m - 24.0).abs() < 1e-8 && (trust.x.t_r - 25.0).abs() < 1e-8;

    let noise = NoiseConfig { q: [[0.01, 0.0], [0.0, 0.01]], r: 0.01 };
    let n = 960;
    let v = synthetic_disturbances(&WeatherConfig::default(), 2, n, DEFAULT_STEP_S);
    let w = Normal::new(0.0, 0.1).expect("valid sigma");
    let mut x = BuildingState::new(22.0, 26.0);
    let mut ekf = Ekf::new(BuildingState::new(21.0, 25.0), Matrix2::identity(), noise).expect("valid noise");
    for vk in &v {
        let u = rng.random_range(0.3..1.1);
        x = m.step(x, u, *vk);
        x.t_r += w.sample(&mut rng);
        x.t_m += w.sample(&mut rng);
        ekf.predict(&m, u, *vk);
        ekf.update(x.t_r + w.sample(&mut rng));
    }
    let samples = &ekf.innovations[50..];
    let white = match ljung_box(samples, 20) {
        Ok(lb) => (lb.p_value > 0.05, lb.p_value),
        Err(_) => (false, f64::NAN),
    };
    outcome(
        psd && limits && white.0 && samples.len() >= 500,
        format!("asymmetry {asym:.1e}, smallest eigenvalue {min_eig:.1e}, limits {limits}, Ljung-Box p = {:.3} over {} innovations", white.1, samples.len()),
    )
}

fn settled_at(c: &FanCurves, sig: &RegulationSignal, reserve: f64, seed: u64) -> Result<(f64, f64), String> {
    let slot = TrackingSlot { p_s: 900.0, r_u: reserve, r_d: reserve };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let run = TrackingLoop::new(c, GainSchedule::tuned(), DEFAULT_EPSILON, 5.0, 2.0, 900.0, &mut rng)
        .and_then(|mut lp| run_tracking(&slot, sig, &mut lp, sig.duration_s(), &mut rng))
        .map_err(|e| e.to_string())?;
    // Share of ticks whose target moves by more than the loop can follow
    // (about ε over one tick plus the plant lag) without being a step the
    // criterion excludes.
    let lag_ticks = 1.0 + 5.0 / 4.0;
    let ramps = run.rows.windows(2).filter(|w| {
        let d = (w[1].p_d - w[0].p_d).abs();
        d > DEFAULT_EPSILON / lag_ticks && d <= DEFAULT_EPSILON
    });
    Ok((settled_share(&run.rows, DEFAULT_EPSILON, 20.0), ramps.count() as f64 / run.rows.len() as f64))
}

fn tracking() -> Outcome {
    let c = FanCurves::reference();
    let hours = 2.0;
    let sig = match generate_synthetic(9, hours * 3600.0, [1.0 / 3600.0, 1.0 / 120.0]) {
        Ok(s) => s,
        Err(e) => return outcome(false, e.to_string()),
    };
    let stats = energy_content(&sig, 900.0).expect("two hours hold eight windows");
    let t = Instant::now();
    let (share, ramps) = match settled_at(&c, &sig, 300.0, 3) {
        Ok(v) => v,
        Err(e) => return outcome(false, e),
    };
    let per_hour = t.elapsed().as_secs_f64() / hours;
    // The same signal at smaller reserves shows where the criterion becomes
    // attainable; it does not enter the verdict.
    let sweep: Vec<String> = [100.0, 150.0, 200.0]
        .iter()
        .filter_map(|&r| settled_at(&c, &sig, r, 3).ok().map(|(s, _)| format!("{r:.0} W: {s:.3}")))
        .collect();

    let samples: Vec<f64> = (0..900).map(|i| if (i * 4 / 150) % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let square = RegulationSignal::new(0.0, 4.0, samples).expect("valid signal");
    let sq_slot = TrackingSlot { p_s: 700.0, r_u: 200.0, r_d: 200.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sq = TrackingLoop::new(&c, GainSchedule::tuned(), DEFAULT_EPSILON, 5.0, 2.0, 700.0, &mut rng)
        .and_then(|mut lp| run_tracking(&sq_slot, &square, &mut lp, square.duration_s(), &mut rng));
    let sq = match sq {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let mut last_edge = f64::NEG_INFINITY;
    let mut kept = Vec::new();
    for (i, r) in sq.rows.iter().enumerate() {
        if i > 0 && r.w != sq.rows[i - 1].w {
            last_edge = r.t;
        }
        if r.t - last_edge > 20.0 {
            kept.push(*r);
        }
    }
    let sq_rmse = tracking_rmse(&kept);
    outcome(
        share >= 0.95 && sq_rmse < 40.0 && per_hour < 60.0,
        format!(
            "settled share {share:.3} at ±300 W (need 0.95; {:.1} % of ticks are untrackable ramps; smaller reserves {}), 97.5th percentile energy {:.3}, square-wave RMSE {sq_rmse:.1} W (limit 40 W), {per_hour:.3} s per simulated hour",
            100.0 * ramps,
            sweep.join(", "),
            stats.p97_5
        ),
    )
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn signal_analytics() -> Outcome {
    let n = 225;
    let constant = RegulationSignal::new(0.0, 4.0, vec![0.5; 4 * n]).expect("valid");
    let sine = RegulationSignal::new(0.0, 4.0, (0..4 * n).map(|k| (2.0 * std::f64::consts::PI * k as f64 / n as f64).sin()).collect()).expect("valid");
    let ec = energy_content(&constant, 900.0).expect("four windows");
    let es = energy_content(&sine, 900.0).expect("four windows");
    let err_c = ec.contents.iter().map(|e| (e - 0.5).abs()).fold(0.0, f64::max);
    let err_s = es.contents.iter().map(|e| e.abs()).fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut monotone = true;
    for _ in 0..100 {
        let len = n * rng.random_range(1..30) + rng.random_range(0..n);
        let sig = RegulationSignal::new(0.0, 4.0, (0..len).map(|_| rng.random_range(-1.0..=1.0)).collect()).expect("valid");
        let st = energy_content(&sig, 900.0).expect("at least one window");
        let mut prev = f64::NEG_INFINITY;
        for p in 1..=200 {
            let v = st.percentile(p as f64 / 2.0).expect("valid percentile");
            monotone &= v >= prev;
            prev = v;
        }
        monotone &= st.median <= st.p95 && st.p95 <= st.p97_5 && st.p97_5 <= st.p99 && st.p99 <= st.max;
    }

    let fixture_ok = match load_signal(&fixture("signal_windows.csv")).and_then(|s| energy_content(&s, 900.0)) {
        Ok(st) => {
            let means_ok = st.contents.len() == 40 && st.contents.iter().enumerate().all(|(i, v)| *v == ((17 * (i + 1)) % 41) as f64 / 64.0);
            means_ok && st.median == 0.3125 && st.p95 == 0.59375 && st.p97_5 == 0.609375 && st.p99 == 0.625 && st.max == 0.625
        }
        Err(_) => false,
    };
    outcome(
        err_c <= 1e-12 && err_s <= 1e-12 && monotone && fixture_ok,
        format!("constant error {err_c:.1e}, sinusoid error {err_s:.1e}, monotone {monotone}, fixture reproduced {fixture_ok}"),
    )
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .expect("result directory")
        .map(|e| {
            let e = e.expect("entry");
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).expect("readable"))
        })
        .collect();
    out.sort();
    out
}

fn determinism() -> Outcome {
    let scenario = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/default.json");
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut dirs = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_freqreg"))
            .arg("simulate")
            .arg(&scenario)
            .args(["--days", "2", "--seed", "7", "--out"])
            .arg(&out)
            .output()
            .expect("binary runs");
        if !status.status.success() {
            return outcome(false, format!("simulate failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        dirs.push(dir_bytes(&out));
    }
    let files = dirs[0].len();
    let bytes: usize = dirs[0].iter().map(|(_, b)| b.len()).sum();
    outcome(files > 0 && dirs[0] == dirs[1], format!("{files} files, {bytes} bytes, identical {}", dirs[0] == dirs[1]))
}

fn gradients() -> Outcome {
    let (m, c, sc, x0) = twelve_step(0.25);
    let p = ScheduleProblem::new(&m, &c, &sc, x0, true, false);
    let (lo, hi) = p.bounds();
    let n = sc.horizon();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        // Flows mid-range and reserves small keep every activation inside
        // the flow bounds.
        let z: Vec<f64> = (0..p.dim())
            .map(|i| if i < n { rng.random_range(0.6..0.8) } else { rng.random_range(lo[i]..hi[i].min(lo[i] + 0.2)) })
            .collect();
        worst = worst.max(check_gradients(&p, &z, 1e-6).max_error());
    }
    outcome(worst <= 1e-5, format!("max relative error {worst:.1e} over 20 points"))
}

fn main() -> ExitCode {
    let criteria: [(&str, u64, fn() -> Outcome); 12] = [
        ("fan curve increasing and convex on the speed range", 1, fan_shape),
        ("activation extremes at ±w_lim", 5, activation_extremes),
        ("linearised schedule envelopes are warmer", 60, approximate_warmer),
        ("envelope models coincide at w_lim = 1", 60, full_activation_coincide),
        ("Monte Carlo robustness of the exact schedule", 30, monte_carlo),
        ("identification recovery and variant ordering", 300, identification),
        ("single-slot schedule vs exhaustive grid", 120, scheduler_oracle),
        ("EKF covariance, limits and whiteness", 30, ekf_suite),
        ("tracking performance", 120, tracking),
        ("signal energy-content analytics", 5, signal_analytics),
        ("end-to-end determinism", 600, determinism),
        ("scheduler gradient checks", 60, gradients),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    for (i, (name, limit, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || *f == id.to_string()) {
            continue;
        }
        let o = within(*limit, f);
        println!("criterion {id:>2} {}: {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        if !o.passed {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
