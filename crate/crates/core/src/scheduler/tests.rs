use super::*;
use crate::nlp::{check_gradients, NlpProblem};
use crate::weather::{synthetic_disturbances, WeatherConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DT: f64 = 900.0;

fn setup(n: usize, start_step: usize, w_lim: f64) -> (DiscreteBuildingModel, FanCurves, MarketScenario, BuildingState) {
    let model = DiscreteBuildingModel::reference_new();
    let curves = FanCurves::reference();
    let v = synthetic_disturbances(&WeatherConfig::default(), 3, start_step + n, DT)[start_step..].to_vec();
    let sc = MarketScenario::synthetic(&curves, v, start_step, DT, w_lim, 11);
    (model, curves, sc, BuildingState::new(22.5, 23.0))
}

/// Comfort band wide enough never to bind, so both envelope models share
/// the same optimal decisions.
fn loose(mut sc: MarketScenario) -> MarketScenario {
    sc.comfort_min.iter_mut().for_each(|m| *m = 15.0);
    sc.comfort_max.iter_mut().for_each(|m| *m = 40.0);
    sc
}

fn random_point(p: &ScheduleProblem, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (lo, hi) = p.bounds();
    let mut z: Vec<f64> = lo.iter().zip(&hi).map(|(&l, &h)| rng.random_range(l..h.min(l + 2.0))).collect();
    // Keep flows and reserves inside the fan's domain.
    let n = lo.len();
    for v in z.iter_mut().take(n) {
        *v = v.min(1.0);
    }
    z
}

#[test]
fn analytic_derivatives_match_finite_differences() {
    let (m, c, mut sc, x0) = setup(8, 40, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for symmetry in [SymmetryMode::None, SymmetryMode::ElectricSymmetric, SymmetryMode::ThermalSymmetric] {
        sc.symmetry = symmetry;
        for exact in [false, true] {
            let p = ScheduleProblem::new(&m, &c, &sc, x0, exact, false);
            let n = sc.horizon();
            for _ in 0..3 {
                let mut z = random_point(&p, &mut rng);
                for k in 0..n {
                    z[k] = rng.random_range(0.6..0.8);
                }
                for k in n..p.dim() {
                    z[k] = z[k].min(0.2);
                }
                let chk = check_gradients(&p, &z, 1e-6);
                assert!(chk.max_error() < 1e-5, "{symmetry:?} exact={exact}: {chk:?}");
            }
        }
    }
}

#[test]
fn no_reserve_price_gives_no_reserves() {
    let (m, c, mut sc, x0) = setup(12, 40, 0.25);
    sc.reserve_price.iter_mut().for_each(|l| *l = 0.0);
    let with = schedule_reserves(&m, &c, &sc, x0).unwrap();
    let without = schedule(&m, &c, &sc, x0, &ScheduleOptions { zero_reserves: true, ..Default::default() }).unwrap();
    assert!(with.solve.converged && without.solve.converged);
    assert!((with.objective - without.objective).abs() <= 1e-6 * without.objective.abs().max(1.0), "{} vs {}", with.objective, without.objective);
    for k in 0..12 {
        assert!(with.reserve_up[k] < 1e-3 && with.reserve_down[k] < 1e-3, "step {k}: {} {}", with.reserve_up[k], with.reserve_down[k]);
    }
}

#[test]
fn envelopes_collapse_without_activation() {
    let (m, c, sc, x0) = setup(12, 40, 0.0);
    let s = schedule_reserves(&m, &c, &sc, x0).unwrap();
    for k in 0..=12 {
        assert!((s.upper[k].t_r - s.lower[k].t_r).abs() < 1e-12);
    }
}

#[test]
fn thermal_symmetry_gives_larger_down_reserve() {
    let (m, c, sc, x0) = setup(12, 40, 0.25);
    let s = schedule_reserves(&m, &c, &sc, x0).unwrap();
    assert!(s.r_u.iter().zip(&s.r_d).all(|(a, b)| a == b));
    let mut positive = 0;
    for k in 0..12 {
        if s.r_u[k] > 1e-6 {
            positive += 1;
            assert!(s.reserve_down[k] >= s.reserve_up[k] - 1e-6);
        }
        assert!(s.lower[k + 1].t_r <= s.upper[k + 1].t_r + 1e-9);
    }
    assert!(positive > 0);
}

#[test]
fn approximate_envelopes_are_warmer() {
    let (m, c, sc, x0) = setup(12, 40, 0.25);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let u: Vec<f64> = (0..12).map(|_| rng.random_range(0.5..0.9)).collect();
        let r_u: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..0.3)).collect();
        let r_d: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..0.3)).collect();
        let (ah, al) = evaluate_envelopes(&m, &c, &sc, x0, &u, &r_u, &r_d, false);
        let (eh, el) = evaluate_envelopes(&m, &c, &sc, x0, &u, &r_u, &r_d, true);
        for k in 0..=12 {
            assert!(ah[k].t_r >= eh[k].t_r - 1e-12 && al[k].t_r >= el[k].t_r - 1e-12);
        }
    }
    let sc = loose(sc);
    let a = schedule_reserves(&m, &c, &sc, x0).unwrap();
    let e = schedule_reserves_exact(&m, &c, &sc, x0).unwrap();
    for k in 0..=12 {
        assert!(a.upper[k].t_r >= e.upper[k].t_r - 1e-4 && a.lower[k].t_r >= e.lower[k].t_r - 1e-4, "step {k}");
    }
}

#[test]
fn envelope_models_coincide_at_full_activation() {
    let (m, c, sc, x0) = setup(12, 40, 1.0);
    let a = schedule_reserves(&m, &c, &sc, x0).unwrap();
    let e = schedule_reserves_exact(&m, &c, &sc, x0).unwrap();
    assert!((a.objective - e.objective).abs() <= 1e-4 * a.objective.abs(), "{} vs {}", a.objective, e.objective);
    for k in 0..=12 {
        assert!((a.upper[k].t_r - e.upper[k].t_r).abs() < 1e-3 && (a.lower[k].t_r - e.lower[k].t_r).abs() < 1e-3);
    }
}

/// Exhaustive search for a single slot. For a fixed flow the objective
/// separates into an `r_u` part and an `r_d` part, so each is minimised over
/// its own grid.
fn grid_single_step(m: &DiscreteBuildingModel, c: &FanCurves, sc: &MarketScenario, x0: BuildingState, h: f64) -> f64 {
    let [lo, hi] = sc.flow_bounds;
    let (cp, lam, w, pen) = (sc.energy_price[0], sc.reserve_price[0], sc.w_lim, sc.comfort_penalty);
    let v = sc.disturbances[0];
    let n = ((hi - lo) / h).round() as usize;
    let mut best = f64::INFINITY;
    for i in 0..=n {
        let u = lo + i as f64 * h;
        let base = cp * c.f(u);
        let mut best_d = f64::INFINITY;
        let mut j = 0;
        while u - j as f64 * h >= lo - 1e-12 {
            let rd = j as f64 * h;
            let t = m.step(x0, u - w * rd, v).t_r;
            best_d = best_d.min(-lam * (c.f(u) - c.f(u - rd)) + pen * (t - sc.comfort_max[0]).max(0.0));
            j += 1;
        }
        let mut best_u = f64::INFINITY;
        let mut j = 0;
        while u + j as f64 * h <= hi + 1e-12 {
            let ru = j as f64 * h;
            let t = m.step(x0, u + w * ru, v).t_r;
            best_u = best_u.min(-lam * (c.f(u + ru) - c.f(u)) + pen * (sc.comfort_min[0] - t).max(0.0));
            j += 1;
        }
        best = best.min(base + best_d + best_u);
    }
    best
}

#[test]
fn single_step_matches_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..4 {
        let (m, c, mut sc, x0) = setup(1, 50, rng.random_range(0.1..0.5));
        sc.symmetry = SymmetryMode::None;
        sc.block_len = 1;
        sc.energy_price[0] *= rng.random_range(0.2..2.0);
        sc.reserve_price[0] *= rng.random_range(0.5..4.0);
        let s = schedule_reserves(&m, &c, &sc, x0).unwrap();
        let g = grid_single_step(&m, &c, &sc, x0, 1e-3);
        // One grid cell moves the economic part by at most this much.
        let cell = 1e-3 * (sc.energy_price[0] + 2.0 * sc.reserve_price[0]) * c.df(sc.flow_bounds[1]) * 3.0;
        assert!(s.objective <= g + 1e-9 && s.objective >= g - cell, "{} vs grid {g}", s.objective);
    }
}

#[test]
fn block_capacities_are_constant() {
    let (m, c, mut sc, x0) = setup(12, 40, 0.25);
    sc.symmetry = SymmetryMode::None;
    let s = schedule_reserves(&m, &c, &sc, x0).unwrap();
    for k in 0..12 {
        let k0 = sc.block_start(k);
        assert_eq!(s.reserve_up[k], s.reserve_up[k0]);
        assert_eq!(s.reserve_down[k], s.reserve_down[k0]);
        let raw = c.f(s.u[k]) - c.f(s.u[k] - s.r_d[k]);
        assert!((raw - s.reserve_up[k]).abs() < 1e-2, "step {k}: {raw} vs {}", s.reserve_up[k]);
    }
}

#[test]
fn electric_symmetry_is_enforced() {
    let (m, c, mut sc, x0) = setup(8, 40, 0.25);
    sc.symmetry = SymmetryMode::ElectricSymmetric;
    let s = schedule_reserves(&m, &c, &sc, x0).unwrap();
    for k in 0..8 {
        assert!((s.reserve_up[k] - s.reserve_down[k]).abs() < 1e-2);
    }
}

#[test]
fn warm_supply_air_is_rejected() {
    let (mut m, c, sc, x0) = setup(4, 40, 0.25);
    m.t_s = 22.0;
    assert!(matches!(schedule_reserves(&m, &c, &sc, x0), Err(Error::CoolingAssumption(_))));
}

#[test]
fn invalid_scenarios_are_rejected() {
    let (m, c, sc, x0) = setup(4, 40, 0.25);
    let mut bad = sc.clone();
    bad.w_lim = 1.5;
    assert!(schedule_reserves(&m, &c, &bad, x0).is_err());
    let mut bad = sc.clone();
    bad.comfort_min[2] = 30.0;
    assert!(schedule_reserves(&m, &c, &bad, x0).is_err());
    let mut bad = sc;
    bad.reserve_price.pop();
    assert!(matches!(schedule_reserves(&m, &c, &bad, x0), Err(Error::LengthMismatch { .. })));
}

#[test]
fn monte_carlo_stays_inside_exact_envelopes() {
    let (m, c, sc, x0) = setup(12, 40, 0.25);
    let s = schedule_reserves_exact(&m, &c, &sc, x0).unwrap();
    let r = verify_schedule(&m, &c, &s, &sc, 200, 1);
    assert_eq!(r.draws, 202);
    // Reported capacities are block means, which differ from the per-step
    // values by the solver tolerance.
    assert!(r.max_envelope_excursion <= 1e-5, "{r:?}");
    assert!(r.max_comfort_violation <= 1e-5 && r.max_flow_violation <= 1e-9, "{r:?}");
    assert_eq!(r, verify_schedule(&m, &c, &s, &sc, 200, 1));

    let mut doubled = s.clone();
    doubled.reserve_down.iter_mut().for_each(|r| *r *= 2.0);
    let r = verify_schedule(&m, &c, &doubled, &sc, 50, 1);
    assert!(r.max_envelope_excursion > 0.01, "{r:?}");
}

#[test]
fn zero_reserve_schedule_has_no_violations() {
    let (m, c, sc, x0) = setup(12, 40, 0.25);
    let s = schedule(&m, &c, &loose(sc.clone()), x0, &ScheduleOptions { zero_reserves: true, ..Default::default() }).unwrap();
    let r = verify_schedule(&m, &c, &s, &loose(sc), 20, 3);
    assert!(r.max_comfort_violation < 1e-9 && r.max_envelope_excursion < 1e-9, "{r:?}");
}

#[test]
fn schedule_csv_has_one_row_per_step() {
    let (m, c, sc, x0) = setup(4, 40, 0.25);
    let s = schedule_reserves(&m, &c, &sc, x0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    assert_eq!(write_schedule_csv(&s, &path).unwrap(), 4);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("k,u,r_u,r_d,R_u,R_d,x_hi,x_lo\n"));
    assert_eq!(text.lines().count(), 5);
}

