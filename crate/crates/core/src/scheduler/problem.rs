//! The scheduling problem as a smooth NLP.
//!
//! Variables: flows `u`, thermal reserves (`r_u`, `r_d`, or one shared `r`
//! in thermal-symmetric mode) and non-negative comfort slacks for the
//! ceiling and the floor of every step. The envelopes are eliminated by
//! forward simulation; their derivatives come from the lower-triangular
//! sensitivities in [`super::envelope`].

use nalgebra::DMatrix;

use super::envelope::{lower_flow, propagate, upper_flow, EnvelopeFlow};
use super::{MarketScenario, ReserveSchedule, SymmetryMode};
use crate::fan::FanCurves;
use crate::model::{BuildingState, DiscreteBuildingModel};
use crate::nlp::{NlpProblem, SolveReport};

#[derive(Debug, Clone, Copy)]
enum EqRow {
    /// `R_u,k − R_d,k`.
    Symmetric(usize),
    /// `R_u,k − R_u,k0`.
    BlockUp(usize, usize),
    /// `R_d,k − R_d,k0`.
    BlockDown(usize, usize),
}

/// Exposed so that derivative checks can be run against it.
pub struct ScheduleProblem<'a> {
    model: &'a DiscreteBuildingModel,
    curves: &'a FanCurves,
    sc: &'a MarketScenario,
    x0: BuildingState,
    exact: bool,
    zero_reserves: bool,
    n: usize,
    shared_r: bool,
    eq_rows: Vec<EqRow>,
    /// Power normalisation of the reserve equalities, W.
    p_scale: f64,
    obj_scale: Option<f64>,
}

struct Decisions {
    u: Vec<f64>,
    r_u: Vec<f64>,
    r_d: Vec<f64>,
}

impl<'a> ScheduleProblem<'a> {
    pub fn new(
        model: &'a DiscreteBuildingModel,
        curves: &'a FanCurves,
        sc: &'a MarketScenario,
        x0: BuildingState,
        exact: bool,
        zero_reserves: bool,
    ) -> Self {
        let n = sc.horizon();
        let mut eq_rows = Vec::new();
        if !zero_reserves {
            if sc.symmetry == SymmetryMode::ElectricSymmetric {
                eq_rows.extend((0..n).map(EqRow::Symmetric));
            }
            if sc.block_len > 1 {
                for k in 0..n {
                    let k0 = sc.block_start(k);
                    if k != k0 {
                        eq_rows.push(EqRow::BlockUp(k, k0));
                        // Symmetry already ties R_d to R_u.
                        if sc.symmetry != SymmetryMode::ElectricSymmetric {
                            eq_rows.push(EqRow::BlockDown(k, k0));
                        }
                    }
                }
            }
        }
        let [lo, hi] = sc.flow_bounds;
        let slope = curves.df(lo).abs().max(curves.df(hi).abs());
        let price = (0..n).map(|k| sc.energy_price[k].abs() + 2.0 * sc.reserve_price[k].abs()).fold(0.0, f64::max);
        let obj_scale = (price * slope > 0.0).then_some(price * slope);
        Self {
            model,
            curves,
            sc,
            x0,
            exact,
            zero_reserves,
            n,
            shared_r: sc.symmetry == SymmetryMode::ThermalSymmetric,
            eq_rows,
            p_scale: (curves.f(hi) - curves.f(lo)).abs().max(1.0),
            obj_scale,
        }
    }

    fn iu(&self, k: usize) -> usize {
        k
    }
    fn iru(&self, k: usize) -> usize {
        self.n + k
    }
    fn ird(&self, k: usize) -> usize {
        if self.shared_r {
            self.n + k
        } else {
            2 * self.n + k
        }
    }
    fn n_r(&self) -> usize {
        if self.shared_r {
            1
        } else {
            2
        }
    }
    fn ish(&self, k: usize) -> usize {
        (1 + self.n_r()) * self.n + k
    }
    fn isl(&self, k: usize) -> usize {
        (2 + self.n_r()) * self.n + k
    }

    fn decode(&self, z: &[f64]) -> Decisions {
        let n = self.n;
        Decisions {
            u: (0..n).map(|k| z[self.iu(k)]).collect(),
            r_u: (0..n).map(|k| z[self.iru(k)]).collect(),
            r_d: (0..n).map(|k| z[self.ird(k)]).collect(),
        }
    }

    fn flows(&self, d: &Decisions) -> (Vec<EnvelopeFlow>, Vec<EnvelopeFlow>) {
        let w = self.sc.w_lim;
        let hi = (0..self.n).map(|k| upper_flow(self.curves, d.u[k], d.r_d[k], w, self.exact)).collect();
        let lo = (0..self.n).map(|k| lower_flow(self.curves, d.u[k], d.r_u[k], w, self.exact)).collect();
        (hi, lo)
    }

    fn envelopes(&self, d: &Decisions, sens: bool) -> (super::envelope::Trajectory, super::envelope::Trajectory, Vec<EnvelopeFlow>, Vec<EnvelopeFlow>) {
        let (fh, fl) = self.flows(d);
        let qh: Vec<f64> = fh.iter().map(|f| f.q).collect();
        let ql: Vec<f64> = fl.iter().map(|f| f.q).collect();
        let v = &self.sc.disturbances;
        (propagate(self.model, self.x0, &qh, v, sens), propagate(self.model, self.x0, &ql, v, sens), fh, fl)
    }

    /// Cold start (mid-range flow, no reserves) or a warm start, with slacks
    /// set to the comfort violation of the starting envelopes.
    pub fn initial_point(&self, warm: Option<&(Vec<f64>, Vec<f64>, Vec<f64>)>) -> Vec<f64> {
        let n = self.n;
        let [lo, hi] = self.sc.flow_bounds;
        let mut z = vec![0.0; self.dim()];
        for k in 0..n {
            z[self.iu(k)] = 0.5 * (lo + hi);
        }
        if let Some((u, r_u, r_d)) = warm.filter(|w| w.0.len() == n && w.1.len() == n && w.2.len() == n) {
            for k in 0..n {
                z[self.iu(k)] = u[k];
                if !self.zero_reserves {
                    z[self.iru(k)] = r_u[k];
                    z[self.ird(k)] = if self.shared_r { 0.5 * (r_u[k] + r_d[k]) } else { r_d[k] };
                }
            }
        }
        let (blo, bhi) = self.bounds();
        for i in 0..z.len() {
            z[i] = z[i].clamp(blo[i], bhi[i]);
        }
        let d = self.decode(&z);
        let (th, tl, _, _) = self.envelopes(&d, false);
        for k in 0..n {
            z[self.ish(k)] = (th.states[k + 1].t_r - self.sc.comfort_max[k]).max(0.0);
            z[self.isl(k)] = (self.sc.comfort_min[k] - tl.states[k + 1].t_r).max(0.0);
        }
        z
    }

    fn reserves(&self, d: &Decisions) -> (Vec<f64>, Vec<f64>) {
        let f = |x: f64| self.curves.f(x);
        let up = (0..self.n).map(|k| f(d.u[k]) - f(d.u[k] - d.r_d[k])).collect();
        let down = (0..self.n).map(|k| f(d.u[k] + d.r_u[k]) - f(d.u[k])).collect();
        (up, down)
    }

    pub(crate) fn finish(&self, report: SolveReport) -> ReserveSchedule {
        let d = self.decode(&report.z);
        let (mut up, mut down) = self.reserves(&d);
        if self.sc.block_len > 1 {
            // Report each block's capacity as its mean so it is constant to
            // the last bit; the spread is within the solver tolerance.
            for vals in [&mut up, &mut down] {
                let mut k0 = 0;
                while k0 < self.n {
                    let k1 = (k0 + self.sc.block_len).min(self.n);
                    let mean = vals[k0..k1].iter().sum::<f64>() / (k1 - k0) as f64;
                    vals[k0..k1].iter_mut().for_each(|v| *v = mean);
                    k0 = k1;
                }
            }
        }
        let (th, tl, _, _) = self.envelopes(&d, false);
        let energy_cost = (0..self.n).map(|k| self.sc.energy_price[k] * self.curves.f(d.u[k])).sum();
        let reserve_revenue = (0..self.n).map(|k| self.sc.reserve_price[k] * (up[k] + down[k])).sum();
        let comfort_slack = (0..self.n).map(|k| report.z[self.ish(k)] + report.z[self.isl(k)]).sum();
        ReserveSchedule {
            u: d.u,
            r_u: d.r_u,
            r_d: d.r_d,
            reserve_up: up,
            reserve_down: down,
            upper: th.states,
            lower: tl.states,
            objective: report.objective,
            energy_cost,
            reserve_revenue,
            comfort_slack,
            w_lim: self.sc.w_lim,
            exact: self.exact,
            solve: report,
        }
    }
}

impl NlpProblem for ScheduleProblem<'_> {
    fn dim(&self) -> usize {
        (3 + self.n_r()) * self.n
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let [lo, hi] = self.sc.flow_bounds;
        let span = if self.zero_reserves { 0.0 } else { hi - lo };
        let mut l = vec![0.0; self.dim()];
        let mut h = vec![1e3; self.dim()];
        for k in 0..self.n {
            l[self.iu(k)] = lo;
            h[self.iu(k)] = hi;
            h[self.iru(k)] = span;
            h[self.ird(k)] = span;
        }
        (l, h)
    }

    fn num_inequality(&self) -> usize {
        4 * self.n
    }

    fn num_equality(&self) -> usize {
        self.eq_rows.len()
    }

    fn objective_scale(&self) -> Option<f64> {
        self.obj_scale
    }

    fn objective(&self, z: &[f64]) -> f64 {
        let f = |x: f64| self.curves.f(x);
        let mut val = 0.0;
        for k in 0..self.n {
            let (u, ru, rd) = (z[self.iu(k)], z[self.iru(k)], z[self.ird(k)]);
            val += self.sc.energy_price[k] * f(u) - self.sc.reserve_price[k] * (f(u + ru) - f(u - rd));
            val += self.sc.comfort_penalty * (z[self.ish(k)] + z[self.isl(k)]);
        }
        val
    }

    fn gradient(&self, z: &[f64], grad: &mut [f64]) {
        grad.fill(0.0);
        let df = |x: f64| self.curves.df(x);
        for k in 0..self.n {
            let (u, ru, rd) = (z[self.iu(k)], z[self.iru(k)], z[self.ird(k)]);
            let (c, lam) = (self.sc.energy_price[k], self.sc.reserve_price[k]);
            grad[self.iu(k)] += c * df(u) - lam * (df(u + ru) - df(u - rd));
            grad[self.iru(k)] += -lam * df(u + ru);
            grad[self.ird(k)] += -lam * df(u - rd);
            grad[self.ish(k)] += self.sc.comfort_penalty;
            grad[self.isl(k)] += self.sc.comfort_penalty;
        }
    }

    fn inequality(&self, z: &[f64], out: &mut [f64]) {
        let n = self.n;
        let d = self.decode(z);
        let [lo, hi] = self.sc.flow_bounds;
        let (th, tl, _, _) = self.envelopes(&d, false);
        for k in 0..n {
            out[k] = lo - d.u[k] + d.r_d[k];
            out[n + k] = d.u[k] + d.r_u[k] - hi;
            out[2 * n + k] = th.states[k + 1].t_r - self.sc.comfort_max[k] - z[self.ish(k)];
            out[3 * n + k] = self.sc.comfort_min[k] - tl.states[k + 1].t_r - z[self.isl(k)];
        }
    }

    fn inequality_jacobian(&self, z: &[f64], jac: &mut DMatrix<f64>) {
        let n = self.n;
        jac.fill(0.0);
        let d = self.decode(z);
        let (th, tl, fh, fl) = self.envelopes(&d, true);
        for k in 0..n {
            jac[(k, self.iu(k))] = -1.0;
            jac[(k, self.ird(k))] += 1.0;
            jac[(n + k, self.iu(k))] = 1.0;
            jac[(n + k, self.iru(k))] += 1.0;

            let row_hi = 2 * n + k;
            let row_lo = 3 * n + k;
            for j in 0..=k {
                let sh = th.dtr[k][j];
                jac[(row_hi, self.iu(j))] += sh * fh[j].du;
                jac[(row_hi, self.ird(j))] += sh * fh[j].dr;
                let sl = tl.dtr[k][j];
                jac[(row_lo, self.iu(j))] -= sl * fl[j].du;
                jac[(row_lo, self.iru(j))] -= sl * fl[j].dr;
            }
            jac[(row_hi, self.ish(k))] = -1.0;
            jac[(row_lo, self.isl(k))] = -1.0;
        }
    }

    fn equality(&self, z: &[f64], out: &mut [f64]) {
        let d = self.decode(z);
        let (up, down) = self.reserves(&d);
        for (i, row) in self.eq_rows.iter().enumerate() {
            out[i] = match *row {
                EqRow::Symmetric(k) => up[k] - down[k],
                EqRow::BlockUp(k, k0) => up[k] - up[k0],
                EqRow::BlockDown(k, k0) => down[k] - down[k0],
            } / self.p_scale;
        }
    }

    fn equality_jacobian(&self, z: &[f64], jac: &mut DMatrix<f64>) {
        jac.fill(0.0);
        let df = |x: f64| self.curves.df(x);
        let s = 1.0 / self.p_scale;
        // Partials of R_u,k (in u_k and r_d,k) and R_d,k (in u_k and r_u,k).
        let up = |k: usize| {
            let (u, rd) = (z[self.iu(k)], z[self.ird(k)]);
            ((self.iu(k), df(u) - df(u - rd)), (self.ird(k), df(u - rd)))
        };
        let down = |k: usize| {
            let (u, ru) = (z[self.iu(k)], z[self.iru(k)]);
            ((self.iu(k), df(u + ru) - df(u)), (self.iru(k), df(u + ru)))
        };
        for (i, row) in self.eq_rows.iter().enumerate() {
            let (plus, minus) = match *row {
                EqRow::Symmetric(k) => (up(k), down(k)),
                EqRow::BlockUp(k, k0) => (up(k), up(k0)),
                EqRow::BlockDown(k, k0) => (down(k), down(k0)),
            };
            for (c, v) in [plus.0, plus.1] {
                jac[(i, c)] += s * v;
            }
            for (c, v) in [minus.0, minus.1] {
                jac[(i, c)] -= s * v;
            }
        }
    }
}
