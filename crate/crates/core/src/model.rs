//! Two-state bilinear RC model of a single thermal zone.
//!
//! The state is `[T_r, T_m]` (room air and lumped thermal mass, °C), the
//! input is the supply mass flow `u` (kg/s) and the disturbance is
//! `[T_a, G, I_g]` (ambient °C, solar W/m², internal gains W). Only the room
//! row is driven by the flow and the disturbances:
//!
//! ```text
//! T_r' = a11 T_r + a12 T_m + b T_s u - b T_r u + d11 T_a + d12 G + d13 I_g
//! T_m' = a21 T_r + a22 T_m
//! ```
//!
//! A single-state model is represented with `a12 = a21 = a22 = 0`.

use nalgebra::{Matrix2, Matrix2x3, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default discretisation step: one 15-minute slot.
pub const DEFAULT_STEP_S: f64 = 900.0;

/// Supply air temperature used with the bundled parameter sets.
pub const DEFAULT_SUPPLY_TEMP: f64 = 14.0;

/// Physical RC parameters in SI units.
///
/// Capacitances in J/°C, resistances in °C/W, `c_p` in J/(kg·°C), `gamma`
/// is the effective solar aperture in m² (so `gamma * G` is in W).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuousBuildingParams {
    pub c_r: f64,
    pub c_m: f64,
    pub r_ra: f64,
    pub r_rm: f64,
    pub gamma: f64,
    pub c_p: f64,
    #[serde(rename = "T_s")]
    pub t_s: f64,
}

/// Discrete-time bilinear building model with explicit matrix entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscreteBuildingModel {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
    pub b: f64,
    pub d11: f64,
    pub d12: f64,
    pub d13: f64,
    #[serde(rename = "T_s")]
    pub t_s: f64,
    #[serde(default = "default_step")]
    pub delta_t: f64,
}

fn default_step() -> f64 {
    DEFAULT_STEP_S
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BuildingState {
    #[serde(rename = "T_r")]
    pub t_r: f64,
    /// Never measured; only ever an estimate.
    #[serde(rename = "T_m")]
    pub t_m: f64,
}

impl BuildingState {
    pub fn new(t_r: f64, t_m: f64) -> Self {
        Self { t_r, t_m }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.t_r, self.t_m)
    }

    pub fn from_vector(v: &Vector2<f64>) -> Self {
        Self::new(v[0], v[1])
    }

    pub fn is_finite(&self) -> bool {
        self.t_r.is_finite() && self.t_m.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Disturbance {
    #[serde(rename = "T_a")]
    pub t_a: f64,
    #[serde(rename = "G")]
    pub g: f64,
    #[serde(rename = "I_g")]
    pub i_g: f64,
}

impl Disturbance {
    pub fn new(t_a: f64, g: f64, i_g: f64) -> Self {
        Self { t_a, g, i_g }
    }

    /// Irradiance and internal gains must be non-negative, all entries finite.
    pub fn validate(&self) -> Result<()> {
        if !(self.t_a.is_finite() && self.g.is_finite() && self.i_g.is_finite()) {
            return Err(Error::invalid("disturbance", "entries must be finite"));
        }
        if self.g < 0.0 || self.i_g < 0.0 {
            return Err(Error::invalid("disturbance", format!("G and I_g must be non-negative, got {} and {}", self.g, self.i_g)));
        }
        Ok(())
    }
}

impl ContinuousBuildingParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("c_r", self.c_r),
            ("c_m", self.c_m),
            ("r_ra", self.r_ra),
            ("r_rm", self.r_rm),
            ("c_p", self.c_p),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::invalid(name, format!("must be positive, got {value}")));
            }
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("gamma", format!("must be non-negative, got {}", self.gamma)));
        }
        if !self.t_s.is_finite() {
            return Err(Error::invalid("T_s", "must be finite"));
        }
        Ok(())
    }
}

/// Forward-Euler discretisation, which keeps the sign pattern of the
/// continuous matrices.
pub fn discretize(params: &ContinuousBuildingParams, delta_t: f64) -> Result<DiscreteBuildingModel> {
    params.validate()?;
    if !(delta_t >= 0.0 && delta_t.is_finite()) {
        return Err(Error::invalid("delta_t", format!("must be non-negative, got {delta_t}")));
    }
    let p = params;
    let ra = 1.0 / (p.c_r * p.r_ra);
    let rm = 1.0 / (p.c_r * p.r_rm);
    let mr = 1.0 / (p.c_m * p.r_rm);
    Ok(DiscreteBuildingModel {
        a11: 1.0 - delta_t * (ra + rm),
        a12: delta_t * rm,
        a21: delta_t * mr,
        a22: 1.0 - delta_t * mr,
        b: delta_t * p.c_p / p.c_r,
        d11: delta_t * ra,
        d12: delta_t * p.gamma / p.c_r,
        d13: delta_t / p.c_r,
        t_s: p.t_s,
        delta_t,
    })
}

impl DiscreteBuildingModel {
    /// Most recent identified parameter set (15-min step, 2 states, day-ahead fit).
    pub fn reference_new() -> Self {
        Self {
            a11: 0.6344,
            a12: 0.2661,
            a21: 0.1021,
            a22: 0.9170,
            b: 0.4716,
            d11: 0.0405,
            d12: 0.0028,
            d13: 3.3686e-4,
            t_s: DEFAULT_SUPPLY_TEMP,
            delta_t: DEFAULT_STEP_S,
        }
    }

    /// Older identified parameter set, used as the controller model when
    /// exercising plant-model mismatch.
    pub fn reference_old() -> Self {
        Self {
            a11: 0.8665,
            a12: 0.0918,
            a21: 0.0374,
            a22: 0.9703,
            b: 0.2996,
            d11: 0.0230,
            d12: 2.016e-4,
            d13: 1.424e-4,
            t_s: DEFAULT_SUPPLY_TEMP,
            delta_t: DEFAULT_STEP_S,
        }
    }

    pub fn is_single_state(&self) -> bool {
        self.a12 == 0.0 && self.a21 == 0.0 && self.a22 == 0.0
    }

    pub fn a(&self) -> Matrix2<f64> {
        Matrix2::new(self.a11, self.a12, self.a21, self.a22)
    }

    pub fn b_u(&self) -> Vector2<f64> {
        Vector2::new(self.b * self.t_s, 0.0)
    }

    pub fn b_xu(&self) -> Matrix2<f64> {
        Matrix2::new(-self.b, 0.0, 0.0, 0.0)
    }

    pub fn b_v(&self) -> Matrix2x3<f64> {
        Matrix2x3::new(self.d11, self.d12, self.d13, 0.0, 0.0, 0.0)
    }

    /// State Jacobian of the bilinear dynamics at flow `u`: `A + B_xu u`.
    pub fn state_jacobian(&self, u: f64) -> Matrix2<f64> {
        Matrix2::new(self.a11 - self.b * u, self.a12, self.a21, self.a22)
    }

    /// Checks the structural sign constraints and the zero second rows.
    pub fn validate(&self) -> Result<()> {
        let values = [
            ("a11", self.a11),
            ("a12", self.a12),
            ("a21", self.a21),
            ("a22", self.a22),
            ("b", self.b),
            ("d11", self.d11),
            ("d12", self.d12),
            ("d13", self.d13),
            ("T_s", self.t_s),
            ("delta_t", self.delta_t),
        ];
        for (name, v) in values {
            if !v.is_finite() {
                return Err(Error::invalid(name, "must be finite"));
            }
        }
        let nonneg = [
            ("a12", self.a12),
            ("a21", self.a21),
            ("b", self.b),
            ("d11", self.d11),
            ("d12", self.d12),
            ("d13", self.d13),
        ];
        for (name, v) in nonneg {
            if v < 0.0 {
                return Err(Error::invalid(name, format!("must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// One step with the model's own supply temperature.
    pub fn step(&self, x: BuildingState, u: f64, v: Disturbance) -> BuildingState {
        self.step_with_supply(x, u, v, self.t_s)
    }

    /// One step with an explicit supply air temperature.
    ///
    /// Evaluation order is fixed (A·x, then input, bilinear and disturbance
    /// terms) so that repeated simulation is bit-reproducible.
    pub fn step_with_supply(&self, x: BuildingState, u: f64, v: Disturbance, t_s: f64) -> BuildingState {
        let mut t_r = self.a11 * x.t_r + self.a12 * x.t_m;
        t_r += self.b * t_s * u;
        t_r += -self.b * x.t_r * u;
        t_r += self.d11 * v.t_a + self.d12 * v.g + self.d13 * v.i_g;
        let t_m = self.a21 * x.t_r + self.a22 * x.t_m;
        BuildingState { t_r, t_m }
    }

    /// Trajectory of `u_seq.len() + 1` states starting at `x0`.
    pub fn simulate(&self, x0: BuildingState, u_seq: &[f64], v_seq: &[Disturbance]) -> Result<Vec<BuildingState>> {
        if u_seq.len() != v_seq.len() {
            return Err(Error::LengthMismatch {
                what: "flow and disturbance sequences",
                left: u_seq.len(),
                right: v_seq.len(),
            });
        }
        let mut traj = Vec::with_capacity(u_seq.len() + 1);
        traj.push(x0);
        let mut x = x0;
        for (&u, &v) in u_seq.iter().zip(v_seq) {
            x = self.step(x, u, v);
            traj.push(x);
        }
        Ok(traj)
    }

    /// `true` iff both `A` and `A + B_xu u` have spectral radius at most one.
    pub fn closed_loop_stable(&self, u: f64) -> bool {
        spectral_radius(&self.a()) <= 1.0 && spectral_radius(&self.state_jacobian(u)) <= 1.0
    }
}

/// Eigenvalue magnitudes of a real 2×2 matrix, largest first.
pub fn eigen_magnitudes(m: &Matrix2<f64>) -> [f64; 2] {
    let tr = m[(0, 0)] + m[(1, 1)];
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let half = 0.5 * tr;
    let disc = half * half - det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        let (l1, l2) = ((half + s).abs(), (half - s).abs());
        if l1 >= l2 {
            [l1, l2]
        } else {
            [l2, l1]
        }
    } else {
        let r = det.sqrt();
        [r, r]
    }
}

pub fn spectral_radius(m: &Matrix2<f64>) -> f64 {
    eigen_magnitudes(m)[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params() -> ContinuousBuildingParams {
        ContinuousBuildingParams {
            c_r: 2.0e6,
            c_m: 2.0e7,
            r_ra: 0.02,
            r_rm: 0.005,
            gamma: 5.0,
            c_p: 1005.0,
            t_s: 14.0,
        }
    }

    #[test]
    fn zero_step_is_identity() {
        let m = discretize(&params(), 0.0).unwrap();
        assert_eq!(m.a(), Matrix2::identity());
        assert_eq!((m.b, m.d11, m.d12, m.d13), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn doubling_step_doubles_a_minus_identity() {
        let m1 = discretize(&params(), 300.0).unwrap();
        let m2 = discretize(&params(), 600.0).unwrap();
        let d1 = m1.a() - Matrix2::identity();
        let d2 = m2.a() - Matrix2::identity();
        assert_abs_diff_eq!(d2, d1 * 2.0, epsilon = 1e-15);
    }

    #[test]
    fn small_step_is_stable_and_sign_preserving() {
        let m = discretize(&params(), 60.0).unwrap();
        m.validate().unwrap();
        // 2x2 eigenvalues from the characteristic polynomial.
        let tr = m.a11 + m.a22;
        let det = m.a11 * m.a22 - m.a12 * m.a21;
        let disc = tr * tr / 4.0 - det;
        assert!(disc >= 0.0);
        for l in [tr / 2.0 + disc.sqrt(), tr / 2.0 - disc.sqrt()] {
            assert!(l.abs() <= 1.0);
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = params();
        p.r_rm = 0.0;
        assert!(matches!(discretize(&p, 900.0), Err(Error::InvalidParameter { name: "r_rm", .. })));
        assert!(discretize(&params(), -1.0).is_err());
    }

    #[test]
    fn hand_evaluated_step() {
        let m = DiscreteBuildingModel::reference_new();
        let x = m.step(BuildingState::new(24.0, 24.0), 0.5, Disturbance::new(20.0, 0.0, 0.0));
        assert_abs_diff_eq!(x.t_r, 20.064, epsilon = 1e-12);
        assert_abs_diff_eq!(x.t_m, 24.4584, epsilon = 1e-12);
    }

    #[test]
    fn zero_is_a_fixed_point_and_free_response_decays() {
        let m = DiscreteBuildingModel::reference_new();
        let z = m.step(BuildingState::default(), 0.0, Disturbance::default());
        assert_eq!(z, BuildingState::default());
        let eig = eigen_magnitudes(&m.a());
        assert_abs_diff_eq!(eig[0], 0.9928, epsilon = 1e-4);
        assert_abs_diff_eq!(eig[1], 0.5586, epsilon = 1e-4);
        let mut x = BuildingState::new(25.0, 25.0);
        for _ in 0..2000 {
            x = m.step(x, 0.0, Disturbance::default());
        }
        assert!(x.t_r.abs() < 1e-4 && x.t_m.abs() < 1e-4);
    }

    #[test]
    fn simulate_matches_closed_form_affine_recursion() {
        let m = DiscreteBuildingModel::reference_new();
        let u = 0.6;
        let v = Disturbance::new(18.0, 150.0, 800.0);
        let x0 = BuildingState::new(23.0, 22.0);
        let traj = m.simulate(x0, &[u; 96], &[v; 96]).unwrap();
        assert_eq!(traj.len(), 97);
        // x_k = M^k x0 + sum_{j<k} M^j c with M = A + B_xu u.
        let mm = m.state_jacobian(u);
        let c = m.b_u() * u + m.b_v() * nalgebra::Vector3::new(v.t_a, v.g, v.i_g);
        let mut power = Matrix2::identity();
        let mut acc = Vector2::zeros();
        for k in 1..=96 {
            acc += power * c;
            power = mm * power;
            let expect = power * x0.to_vector() + acc;
            assert_abs_diff_eq!(traj[k].t_r, expect[0], epsilon = 1e-9);
            assert_abs_diff_eq!(traj[k].t_m, expect[1], epsilon = 1e-9);
        }
    }

    #[test]
    fn simulate_edge_cases() {
        let m = DiscreteBuildingModel::reference_new();
        let x0 = BuildingState::new(22.0, 21.0);
        assert_eq!(m.simulate(x0, &[], &[]).unwrap(), vec![x0]);
        let v = Disturbance::new(10.0, 5.0, 1.0);
        let t = m.simulate(x0, &[0.3], &[v]).unwrap();
        assert_eq!(t[1], m.step(x0, 0.3, v));
        assert!(matches!(m.simulate(x0, &[0.3], &[]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn stability_checks() {
        let m = DiscreteBuildingModel::reference_new();
        assert!(m.closed_loop_stable(0.5));
        let e = eigen_magnitudes(&m.state_jacobian(0.5));
        assert_abs_diff_eq!(e[0], 0.965, epsilon = 1e-3);
        assert_abs_diff_eq!(e[1], 0.351, epsilon = 1e-3);

        let mut id = m;
        (id.a11, id.a12, id.a21, id.a22, id.b) = (1.0, 0.0, 0.0, 1.0, 0.0);
        assert!(id.closed_loop_stable(0.7));
        (id.a11, id.a22) = (2.0, 2.0);
        assert!(!id.closed_loop_stable(0.0));
    }

    #[test]
    fn json_uses_explicit_entries() {
        let m = DiscreteBuildingModel::reference_new();
        let s = serde_json::to_value(m).unwrap();
        for key in ["a11", "a12", "a21", "a22", "b", "d11", "d12", "d13", "T_s", "delta_t"] {
            assert!(s.get(key).is_some(), "{key}");
        }
        let back: DiscreteBuildingModel = serde_json::from_value(s).unwrap();
        assert_eq!(back, m);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn discretize_preserves_signs(
                c_r in 1e4f64..1e8, c_m in 1e4f64..1e9, r_ra in 1e-4f64..1.0,
                r_rm in 1e-4f64..1.0, gamma in 0.0f64..50.0, dt in 0.0f64..3600.0,
            ) {
                let p = ContinuousBuildingParams { c_r, c_m, r_ra, r_rm, gamma, c_p: 1005.0, t_s: 14.0 };
                let m = discretize(&p, dt).unwrap();
                prop_assert!(m.validate().is_ok());
            }

            #[test]
            fn room_temperature_non_increasing_in_flow(
                tr in 14.0f64..35.0, tm in 10.0f64..40.0, u1 in 0.0f64..1.5, du in 0.0f64..1.0,
                ta in -5.0f64..40.0, g in 0.0f64..900.0, ig in 0.0f64..3000.0,
            ) {
                let m = DiscreteBuildingModel::reference_new();
                let x = BuildingState::new(tr, tm);
                let v = Disturbance::new(ta, g, ig);
                prop_assert!(m.step(x, u1 + du, v).t_r <= m.step(x, u1, v).t_r);
            }
        }
    }
}
