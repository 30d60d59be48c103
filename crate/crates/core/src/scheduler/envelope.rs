//! Worst-case temperature envelopes and their flow sensitivities.

use crate::fan::FanCurves;
use crate::model::{BuildingState, DiscreteBuildingModel, Disturbance};

/// State trajectory `x_0..x_N` driven by the flows `q`, together with the
/// lower-triangular sensitivities `dtr[k][j] = ∂T_r(k+1) / ∂q_j`, `j <= k`.
pub(crate) struct Trajectory {
    pub states: Vec<BuildingState>,
    pub dtr: Vec<Vec<f64>>,
}

pub(crate) fn propagate(model: &DiscreteBuildingModel, x0: BuildingState, q: &[f64], v: &[Disturbance], sens: bool) -> Trajectory {
    let n = q.len();
    let mut states = Vec::with_capacity(n + 1);
    states.push(x0);
    let mut x = x0;
    for k in 0..n {
        x = model.step(x, q[k], v[k]);
        states.push(x);
    }
    let mut dtr = Vec::new();
    if sens {
        dtr = (0..n).map(|k| vec![0.0; k + 1]).collect();
        let jac: Vec<_> = q.iter().map(|&qk| model.state_jacobian(qk)).collect();
        for j in 0..n {
            // ∂x_{j+1}/∂q_j, then carried forward by the state Jacobians.
            let mut s = nalgebra::Vector2::new(model.b * (model.t_s - states[j].t_r), 0.0);
            dtr[j][j] = s[0];
            for k in j + 1..n {
                s = jac[k] * s;
                dtr[k][j] = s[0];
            }
        }
    }
    Trajectory { states, dtr }
}

/// Flow driving an envelope, with its partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct EnvelopeFlow {
    pub q: f64,
    /// ∂q/∂u.
    pub du: f64,
    /// ∂q/∂r for the reserve that moves this envelope (`r_d` for the upper
    /// envelope, `r_u` for the lower one).
    pub dr: f64,
}

/// Least flow under any admissible activation, which drives the upper
/// (warmest) envelope. `exact` uses the fan-curve inverse, otherwise the
/// linearisation `u - w r_d`.
pub(crate) fn upper_flow(curves: &FanCurves, u: f64, r_d: f64, w: f64, exact: bool) -> EnvelopeFlow {
    if !exact {
        return EnvelopeFlow { q: u - w * r_d, du: 1.0, dr: -w };
    }
    let p = (1.0 - w) * curves.f(u) + w * curves.f(u - r_d);
    let q = curves.f_inv(p);
    let fq = curves.df(q);
    EnvelopeFlow { q, du: ((1.0 - w) * curves.df(u) + w * curves.df(u - r_d)) / fq, dr: -w * curves.df(u - r_d) / fq }
}

/// Largest flow under any admissible activation, driving the lower envelope.
pub(crate) fn lower_flow(curves: &FanCurves, u: f64, r_u: f64, w: f64, exact: bool) -> EnvelopeFlow {
    if !exact {
        return EnvelopeFlow { q: u + w * r_u, du: 1.0, dr: w };
    }
    let p = (1.0 - w) * curves.f(u) + w * curves.f(u + r_u);
    let q = curves.f_inv(p);
    let fq = curves.df(q);
    EnvelopeFlow { q, du: ((1.0 - w) * curves.df(u) + w * curves.df(u + r_u)) / fq, dr: w * curves.df(u + r_u) / fq }
}
