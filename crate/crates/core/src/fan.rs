//! Static fan curves: flow→power `f`, speed→power `g` and speed→flow `h`.
//!
//! Coefficient arrays are stored lowest order first, so `alpha[n]` multiplies
//! `u^n`. Speeds are in percent of rated speed, flows in kg/s, power in W.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeio;

/// Samples recorded within this many seconds after a speed change are dropped.
pub const SETTLE_DISCARD_S: f64 = 20.0;

/// Minimum number of distinct speed levels accepted by [`fit_fan`].
pub const MIN_SPEED_LEVELS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FanCurves {
    /// Flow→power coefficients, W per (kg/s)^n.
    pub alpha: [f64; 4],
    /// Speed→power coefficients, W per %^n.
    pub beta: [f64; 4],
    /// Speed→flow coefficients `[gamma0, gamma1]`.
    pub gamma: [f64; 2],
    /// Valid flow range `[u_lo, u_hi]`, kg/s.
    pub flow_domain: [f64; 2],
    /// Valid speed range `[N_lo, N_hi]`, %.
    pub speed_domain: [f64; 2],
}

/// Electric reserve capacities around an operating flow.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReservePair {
    /// Up-reserve (consumption decrease), W.
    pub up: f64,
    /// Down-reserve (consumption increase), W.
    pub down: f64,
}

#[inline]
fn cubic(c: &[f64; 4], x: f64) -> f64 {
    ((c[3] * x + c[2]) * x + c[1]) * x + c[0]
}

#[inline]
fn cubic_d1(c: &[f64; 4], x: f64) -> f64 {
    (3.0 * c[3] * x + 2.0 * c[2]) * x + c[1]
}

#[inline]
fn cubic_d2(c: &[f64; 4], x: f64) -> f64 {
    6.0 * c[3] * x + 2.0 * c[2]
}

/// Root of an increasing function on `[lo, hi]` by bisection down to
/// floating-point resolution.
pub(crate) fn bisect_increasing(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (f(lo) - target).abs() <= (f(hi) - target).abs() {
        lo
    } else {
        hi
    }
}

impl FanCurves {
    /// Curves identified on the test fan, speed range 10–90 %.
    pub fn reference() -> Self {
        let gamma = [0.0606, 0.0133];
        let speed_domain = [10.0, 90.0];
        let flow_domain = [gamma[0] + gamma[1] * speed_domain[0], gamma[0] + gamma[1] * speed_domain[1]];
        Self {
            alpha: [28.7, 630.9, -1458.0, 2588.2],
            beta: [55.7634, 1.4521, -0.0151, 0.0032],
            gamma,
            flow_domain,
            speed_domain,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.alpha.iter().chain(&self.beta).chain(&self.gamma).chain(&self.flow_domain).chain(&self.speed_domain);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("fan curves", "non-finite coefficient"));
        }
        if self.gamma[1] <= 0.0 {
            return Err(Error::invalid("gamma1", "speed-to-flow slope must be positive"));
        }
        if self.flow_domain[0] >= self.flow_domain[1] || self.speed_domain[0] >= self.speed_domain[1] {
            return Err(Error::invalid("domain", "empty flow or speed domain"));
        }
        if let Some((lo, hi)) = first_non_increasing(&self.alpha, self.flow_domain) {
            return Err(Error::NonMonotone { lo, hi });
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let curves: FanCurves = serde_json::from_str(&text)?;
        curves.validate()?;
        Ok(curves)
    }

    /// Raw flow→power polynomial, no domain handling.
    #[inline]
    pub fn f(&self, u: f64) -> f64 {
        cubic(&self.alpha, u)
    }

    #[inline]
    pub fn df(&self, u: f64) -> f64 {
        cubic_d1(&self.alpha, u)
    }

    #[inline]
    pub fn d2f(&self, u: f64) -> f64 {
        cubic_d2(&self.alpha, u)
    }

    /// Raw speed→power polynomial.
    #[inline]
    pub fn g(&self, n: f64) -> f64 {
        cubic(&self.beta, n)
    }

    #[inline]
    pub fn dg(&self, n: f64) -> f64 {
        cubic_d1(&self.beta, n)
    }

    /// Raw speed→flow map.
    #[inline]
    pub fn h(&self, n: f64) -> f64 {
        self.gamma[1] * n + self.gamma[0]
    }

    /// Inverse of `f` without a range check. The search bracket extends one
    /// domain width beyond each end so optimiser iterates slightly outside the
    /// domain still get a smooth answer.
    pub fn f_inv(&self, p: f64) -> f64 {
        let [lo, hi] = self.flow_domain;
        let w = hi - lo;
        bisect_increasing(|u| self.f(u), p, lo - w, hi + w)
    }

    /// Power range `[f(u_lo), f(u_hi)]`.
    pub fn power_range(&self) -> [f64; 2] {
        [self.f(self.flow_domain[0]), self.f(self.flow_domain[1])]
    }

    /// Power range `[g(N_lo), g(N_hi)]`.
    pub fn speed_power_range(&self) -> [f64; 2] {
        [self.g(self.speed_domain[0]), self.g(self.speed_domain[1])]
    }

    /// Fan power at flow `u`; out-of-domain flows are clamped with a warning.
    pub fn flow_to_power(&self, u: f64) -> f64 {
        let [lo, hi] = self.flow_domain;
        let clamped = u.clamp(lo, hi);
        if clamped != u {
            log::warn!("flow {u} kg/s outside [{lo}, {hi}], clamped");
        }
        self.f(clamped)
    }

    /// Unique flow with `f(u) = p`.
    pub fn power_to_flow(&self, p: f64) -> Result<f64> {
        let [plo, phi] = self.power_range();
        if !(p >= plo && p <= phi) {
            return Err(Error::OutOfRange { what: "fan power for flow inversion", value: p, lo: plo, hi: phi });
        }
        Ok(bisect_increasing(|u| self.f(u), p, self.flow_domain[0], self.flow_domain[1]))
    }

    /// Flow at speed `n`; out-of-domain speeds are clamped with a warning.
    pub fn speed_to_flow(&self, n: f64) -> f64 {
        let [lo, hi] = self.speed_domain;
        let clamped = n.clamp(lo, hi);
        if clamped != n {
            log::warn!("speed {n} % outside [{lo}, {hi}], clamped");
        }
        self.h(clamped)
    }

    /// Exact affine inverse of `h`.
    pub fn flow_to_speed(&self, u: f64) -> f64 {
        (u - self.gamma[0]) / self.gamma[1]
    }

    /// Fan power at speed `n`; out-of-domain speeds are clamped with a warning.
    pub fn speed_to_power(&self, n: f64) -> f64 {
        let [lo, hi] = self.speed_domain;
        let clamped = n.clamp(lo, hi);
        if clamped != n {
            log::warn!("speed {n} % outside [{lo}, {hi}], clamped");
        }
        self.g(clamped)
    }

    /// Unique speed with `g(n) = p`.
    pub fn power_to_speed(&self, p: f64) -> Result<f64> {
        let [plo, phi] = self.speed_power_range();
        if !(p >= plo && p <= phi) {
            return Err(Error::OutOfRange { what: "fan power for speed inversion", value: p, lo: plo, hi: phi });
        }
        Ok(bisect_increasing(|n| self.g(n), p, self.speed_domain[0], self.speed_domain[1]))
    }

    /// Electric capacities implied by thermal reserves `r_u`, `r_d` at flow `u`.
    pub fn reserve_capacities(&self, u: f64, r_u: f64, r_d: f64) -> Result<ReservePair> {
        const TOL: f64 = 1e-12;
        let [lo, hi] = self.flow_domain;
        if r_u < 0.0 || r_d < 0.0 {
            return Err(Error::invalid("thermal reserve", format!("must be non-negative (r_u={r_u}, r_d={r_d})")));
        }
        if u - r_d < lo - TOL {
            return Err(Error::OutOfRange { what: "u - r_d", value: u - r_d, lo, hi });
        }
        if u + r_u > hi + TOL {
            return Err(Error::OutOfRange { what: "u + r_u", value: u + r_u, lo, hi });
        }
        let p = self.f(u);
        Ok(ReservePair { up: p - self.f(u - r_d), down: self.f(u + r_u) - p })
    }

    /// Largest `|f(h(N)) - g(N)|` over the speed domain, a consistency
    /// diagnostic between the independently fitted curves.
    pub fn curve_consistency(&self) -> f64 {
        let [lo, hi] = self.speed_domain;
        (0..=100)
            .map(|i| lo + (hi - lo) * i as f64 / 100.0)
            .map(|n| (self.f(self.h(n)) - self.g(n)).abs())
            .fold(0.0, f64::max)
    }

    /// `true` iff `f'' >= 0` across the flow domain (checked at the ends,
    /// which suffices for a cubic whose second derivative is affine).
    pub fn is_convex(&self) -> bool {
        self.d2f(self.flow_domain[0]) >= 0.0 && self.d2f(self.flow_domain[1]) >= 0.0
    }
}

fn first_non_increasing(c: &[f64; 4], domain: [f64; 2]) -> Option<(f64, f64)> {
    const GRID: usize = 1000;
    let [lo, hi] = domain;
    let at = |i: usize| lo + (hi - lo) * i as f64 / GRID as f64;
    let mut start = None;
    for i in 0..=GRID {
        let bad = cubic_d1(c, at(i)) <= 0.0;
        match (bad, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => return Some((at(s.saturating_sub(1)), at(i))),
            _ => {}
        }
    }
    start.map(|s| (at(s.saturating_sub(1)), hi))
}

/// One row of a fan speed sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSample {
    pub speed_pct: f64,
    pub flow: f64,
    pub power: f64,
    /// Seconds (any epoch).
    pub timestamp: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FanFitReport {
    pub curves: FanCurves,
    pub samples_used: usize,
    pub speed_levels: usize,
    pub rmse_flow_power: f64,
    pub rmse_speed_power: f64,
    pub rmse_speed_flow: f64,
    /// Largest `|f(h(N)) - g(N)|`; reported, not enforced.
    pub consistency_gap: f64,
    pub convex: bool,
}

#[derive(Deserialize)]
struct SweepRow {
    speed_pct: f64,
    flow: f64,
    power: f64,
    timestamp: String,
}

/// Reads a sweep CSV with header `speed_pct,flow,power,timestamp`.
pub fn load_sweep(path: &Path) -> Result<Vec<SweepSample>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<SweepRow>().enumerate() {
        let row = rec.map_err(|e| Error::csv(path, e))?;
        let timestamp = timeio::parse_timestamp(&row.timestamp)
            .map_err(|reason| Error::BadDataRow { row: i + 2, reason })?;
        out.push(SweepSample { speed_pct: row.speed_pct, flow: row.flow, power: row.power, timestamp });
    }
    Ok(out)
}

/// Least-squares cubic (`degree = 3`) or affine (`degree = 1`) fit,
/// returned lowest order first together with the RMSE.
fn polyfit(x: &[f64], y: &[f64], degree: usize) -> Result<(Vec<f64>, f64)> {
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let n = x.len();
    let design = DMatrix::from_fn(n, degree + 1, |i, j| (x[i] / scale).powi(j as i32));
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(Error::RankDeficient(format!(
            "degree-{degree} fit has singular value ratio {:.3e}",
            smin / smax
        )));
    }
    let rhs = DVector::from_column_slice(y);
    let coef = svd.solve(&rhs, 0.0).map_err(|e| Error::RankDeficient(e.to_string()))?;
    let resid = &design * &coef - rhs;
    let rmse = (resid.norm_squared() / n as f64).sqrt();
    let coef = coef.iter().enumerate().map(|(j, c)| c / scale.powi(j as i32)).collect();
    Ok((coef, rmse))
}

/// Fits `f`, `g` and `h` to a speed sweep.
pub fn fit_fan(sweep: &[SweepSample]) -> Result<FanFitReport> {
    let mut kept = Vec::with_capacity(sweep.len());
    let mut level_start: Option<(f64, f64)> = None;
    let mut levels: Vec<f64> = Vec::new();
    for s in sweep {
        match level_start {
            Some((speed, _)) if speed == s.speed_pct => {}
            _ => {
                level_start = Some((s.speed_pct, s.timestamp));
                if !levels.contains(&s.speed_pct) {
                    levels.push(s.speed_pct);
                }
            }
        }
        let (_, t0) = level_start.expect("set above");
        if s.timestamp - t0 >= SETTLE_DISCARD_S {
            kept.push(*s);
        }
    }
    let distinct_kept = {
        let mut v: Vec<f64> = kept.iter().map(|s| s.speed_pct).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v.len()
    };
    if distinct_kept < 4 {
        return Err(Error::RankDeficient(format!(
            "{distinct_kept} distinct settled speed level(s); a cubic needs at least 4"
        )));
    }
    if distinct_kept < MIN_SPEED_LEVELS {
        return Err(Error::InsufficientData(format!(
            "{distinct_kept} settled speed levels, need at least {MIN_SPEED_LEVELS}"
        )));
    }

    let speed: Vec<f64> = kept.iter().map(|s| s.speed_pct).collect();
    let flow: Vec<f64> = kept.iter().map(|s| s.flow).collect();
    let power: Vec<f64> = kept.iter().map(|s| s.power).collect();

    let (a, rmse_fp) = polyfit(&flow, &power, 3)?;
    let (b, rmse_sp) = polyfit(&speed, &power, 3)?;
    let (c, rmse_sf) = polyfit(&speed, &flow, 1)?;

    let minmax = |v: &[f64]| [v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(f64::NEG_INFINITY, f64::max)];
    let curves = FanCurves {
        alpha: [a[0], a[1], a[2], a[3]],
        beta: [b[0], b[1], b[2], b[3]],
        gamma: [c[0], c[1]],
        flow_domain: minmax(&flow),
        speed_domain: minmax(&speed),
    };
    curves.validate()?;
    let convex = curves.is_convex();
    if !convex {
        log::warn!("fitted flow-to-power curve is not convex on the flow domain");
    }
    Ok(FanFitReport {
        consistency_gap: curves.curve_consistency(),
        convex,
        samples_used: kept.len(),
        speed_levels: levels.len(),
        rmse_flow_power: rmse_fp,
        rmse_speed_power: rmse_sp,
        rmse_speed_flow: rmse_sf,
        curves,
    })
}
