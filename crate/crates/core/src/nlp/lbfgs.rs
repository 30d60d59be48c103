//! Projected L-BFGS for box-constrained smooth minimisation.

use std::collections::VecDeque;

use super::projected_gradient_norm;

#[derive(Debug, Clone, Copy)]
pub struct BoxResult {
    pub iterations: usize,
    pub value: f64,
    pub projected_gradient: f64,
    /// The line search could make no further progress.
    pub stalled: bool,
}

/// Relative rounding level assumed for merit values.
const ROUNDING_REL: f64 = 1e-11;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimises `fg` (which returns the value and writes the gradient) over
/// `lo <= z <= hi`, starting from and overwriting `z`.
pub fn minimize_box(
    mut fg: impl FnMut(&[f64], &mut [f64]) -> f64,
    z: &mut Vec<f64>,
    lo: &[f64],
    hi: &[f64],
    tol: f64,
    max_iter: usize,
    memory: usize,
) -> BoxResult {
    let n = z.len();
    let mut grad = vec![0.0; n];
    let mut value = fg(z, &mut grad);
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(memory);
    let mut trial = vec![0.0; n];
    let mut trial_grad = vec![0.0; n];
    let mut dir = vec![0.0; n];
    let mut free = vec![true; n];
    let mut alpha = vec![0.0; memory.max(1)];
    let mut stalled = false;
    let mut iterations = 0;
    let mut flat_steps = 0;
    let mut best_pg = f64::INFINITY;

    for it in 0..max_iter {
        let pg = projected_gradient_norm(z, &grad, lo, hi);
        if pg <= tol || !value.is_finite() {
            break;
        }
        iterations = it + 1;

        for i in 0..n {
            free[i] = !((z[i] <= lo[i] && grad[i] > 0.0) || (z[i] >= hi[i] && grad[i] < 0.0));
        }

        // Two-loop recursion on the free subspace.
        for i in 0..n {
            dir[i] = if free[i] { -grad[i] } else { 0.0 };
        }
        for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
            let a = rho * dot(s, &dir);
            alpha[k] = a;
            for i in 0..n {
                dir[i] -= a * y[i];
            }
        }
        if let Some((s, y, _)) = pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            dir.iter_mut().for_each(|d| *d *= gamma);
        }
        for (k, (s, y, rho)) in pairs.iter().enumerate() {
            let b = rho * dot(y, &dir);
            for i in 0..n {
                dir[i] += (alpha[k] - b) * s[i];
            }
        }
        for i in 0..n {
            if !free[i] {
                dir[i] = 0.0;
            }
        }

        let slope = dot(&grad, &dir);
        let gnorm = dot(&grad, &grad).sqrt();
        let dnorm = dot(&dir, &dir).sqrt();
        let mut first_step = 1.0;
        if pairs.is_empty() || !(slope < -1e-12 * gnorm * dnorm) {
            pairs.clear();
            for i in 0..n {
                dir[i] = if free[i] { -grad[i] } else { 0.0 };
            }
            let dmax = dir.iter().fold(0.0f64, |m, d| m.max(d.abs()));
            first_step = if dmax > 0.0 { (1.0 / dmax).min(1.0) } else { 1.0 };
        }

        // Backtracking Armijo search along the projection arc. Near the
        // optimum of an ill-conditioned merit the decrease drowns in the
        // rounding of the value, so a step is also taken when the value is
        // unchanged to rounding and the slope at the trial point shows the
        // quadratic model still decreasing (approximate Wolfe).
        let f_noise = ROUNDING_REL * value.abs();
        let mut t = first_step;
        let mut accepted = false;
        let mut trial_value = value;
        for _ in 0..60 {
            for i in 0..n {
                trial[i] = (z[i] + t * dir[i]).clamp(lo[i], hi[i]);
            }
            trial_value = fg(&trial, &mut trial_grad);
            let decrease: f64 = grad.iter().zip(trial.iter().zip(z.iter())).map(|(g, (a, b))| g * (a - b)).sum();
            if trial_value.is_finite() && trial_value <= value + 1e-4 * decrease.min(0.0) {
                accepted = true;
                break;
            }
            if decrease < 0.0 && trial_value.is_finite() && trial_value <= value + f_noise {
                let end_slope: f64 = trial_grad.iter().zip(trial.iter().zip(z.iter())).map(|(g, (a, b))| g * (a - b)).sum();
                if end_slope <= -0.8 * decrease {
                    accepted = true;
                    break;
                }
            }
            t *= if t == first_step { 0.1 } else { 0.5 };
        }
        if !accepted {
            if pairs.is_empty() {
                stalled = true;
                break;
            }
            pairs.clear();
            continue;
        }

        let s: Vec<f64> = trial.iter().zip(z.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = trial_grad.iter().zip(grad.iter()).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if pairs.len() == memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }

        let improvement = value - trial_value;
        std::mem::swap(z, &mut trial);
        std::mem::swap(&mut grad, &mut trial_grad);
        value = trial_value;

        let pg_new = projected_gradient_norm(z, &grad, lo, hi);
        if pg_new < best_pg {
            best_pg = pg_new;
            flat_steps = 0;
        } else if improvement <= 1e-15 * value.abs().max(1e-300) {
            flat_steps += 1;
            if flat_steps >= 5 {
                stalled = true;
                break;
            }
        } else {
            flat_steps = 0;
        }
    }

    BoxResult { iterations, value, projected_gradient: projected_gradient_norm(z, &grad, lo, hi), stalled }
}
