use std::ops::Range;

use super::{BlockData, BlockState, DualDirection, EngineError, PenaltyMode, SolverConfig};
use crate::model::ProblemSpec;

/// Proximal update of the subvector `cols` of block `X_i`.
///
/// `x_work` is the Gauss-Seidel point: subvectors before `cols` already hold
/// their new values, the rest (including `cols` itself) hold `X_i^k`, which
/// `block.x` still stores and which is the proximal center. The subproblem
///
/// ```text
/// <c, x> + rho/2 (|x - Z|^2 + P |G(X) + Y|^2 + P |H(X)|^2)
///        + <W, x> + <mu, G(X) + Y> + <nu, H(X)> + sigma/2 |x - X^k|^2
/// ```
///
/// over the box is a strongly convex quadratic with an exact closed-form
/// minimizer along every coordinate; cyclic coordinate sweeps run until no
/// coordinate moves by `cfg.subqp_tol`. `P` is 1 in full penalty mode, 0 otherwise.
#[allow(clippy::too_many_arguments)]
pub fn update_x_subblock(
    spec: &ProblemSpec,
    data: &BlockData,
    block: &BlockState,
    x_work: &[f64],
    z: &[f64],
    cols: Range<usize>,
    sigma: f64,
    cfg: &SolverConfig,
) -> Result<Vec<f64>, EngineError> {
    let rho = block.params.rho;
    let pen = cfg.penalty_mode.constraint_weight() * rho;

    // Running values of G(X) + Y and H(X) at the current point.
    let mut g: Vec<f64> = data
        .ineq
        .eval(x_work)
        .iter()
        .zip(&block.y)
        .map(|(gr, yr)| gr + yr)
        .collect();
    let mut h = data.eq.eval(x_work);

    let mut x = x_work[cols.clone()].to_vec();
    let curv: Vec<f64> = cols
        .clone()
        .map(|j| rho + sigma + pen * data.col_sq_norms[j])
        .collect();
    if let Some(&c) = curv.iter().find(|&&c| !(c > 0.0)) {
        return Err(EngineError::NonPositiveCurvature(c));
    }

    let mut last_change = f64::INFINITY;
    for _ in 0..cfg.subqp_max_sweeps {
        let mut max_change = 0.0_f64;
        for (t, j) in cols.clone().enumerate() {
            let mut grad = spec.cost[j]
                + block.w[j]
                + rho * (x[t] - z[j])
                + sigma * (x[t] - block.x[j]);
            for (r, row) in data.ineq.matrix.iter().enumerate() {
                grad += row[j] * (block.mu[r] + pen * g[r]);
            }
            for (r, row) in data.eq.matrix.iter().enumerate() {
                grad += row[j] * (block.nu[r] + pen * h[r]);
            }
            let next = (x[t] - grad / curv[t]).clamp(spec.lower[j], spec.upper[j]);
            let delta = next - x[t];
            if delta != 0.0 {
                for (r, row) in data.ineq.matrix.iter().enumerate() {
                    g[r] += row[j] * delta;
                }
                for (r, row) in data.eq.matrix.iter().enumerate() {
                    h[r] += row[j] * delta;
                }
                x[t] = next;
            }
            max_change = max_change.max(delta.abs());
        }
        last_change = max_change;
        if max_change < cfg.subqp_tol {
            return Ok(x);
        }
    }
    Err(EngineError::InnerNotConverged {
        sweeps: cfg.subqp_max_sweeps,
        tol: cfg.subqp_tol,
        last_change,
    })
}

/// Updates every subvector of `block.x` in order, then shifts the old
/// iterate into `block.x_prev`. On error the block is left untouched.
pub fn primal_sweep(
    spec: &ProblemSpec,
    data: &BlockData,
    block: &mut BlockState,
    z: &[f64],
    col_ranges: &[Range<usize>],
    sigma: f64,
    cfg: &SolverConfig,
) -> Result<(), EngineError> {
    let mut work = block.x.clone();
    for cols in col_ranges {
        let next = update_x_subblock(spec, data, block, &work, z, cols.clone(), sigma, cfg)?;
        work[cols.clone()].copy_from_slice(&next);
    }
    block.x_prev = std::mem::replace(&mut block.x, work);
    Ok(())
}

/// One block's share of the `Z` update: `(rho X + W + tau Z^k, rho + tau)`.
pub fn z_contribution(block: &BlockState, z_prev: &[f64], tau: f64) -> (Vec<f64>, f64) {
    let rho = block.params.rho;
    let value = block
        .x
        .iter()
        .zip(&block.w)
        .zip(z_prev)
        .map(|((x, w), z)| rho * x + w + tau * z)
        .collect();
    (value, rho + tau)
}

/// Minimizer over the box of the summed `Z` objective. Its curvature is a
/// multiple of the identity, so clipping the unconstrained minimizer
/// `numerator / denominator` is exact.
pub fn z_closed_form(
    numerator: &[f64],
    denominator: f64,
    lower: &[f64],
    upper: &[f64],
) -> Result<Vec<f64>, EngineError> {
    if !(denominator > 0.0) {
        return Err(EngineError::NonPositiveCurvature(denominator));
    }
    Ok(numerator
        .iter()
        .zip(lower.iter().zip(upper))
        .map(|(v, (&l, &u))| (v / denominator).clamp(l, u))
        .collect())
}

/// Proximal slack update at the block's new `X`; `g_val` is `G_i(X_i^{k+1})`
/// without the slack. Componentwise
/// `clip((rho(-g) - mu + gamma Y^k) / (rho + gamma), 0, u_Y)` where `rho`
/// drops out in consensus-only mode.
pub fn update_y(
    block: &BlockState,
    g_val: &[f64],
    gamma: f64,
    slack_upper: &[f64],
    mode: PenaltyMode,
) -> Result<Vec<f64>, EngineError> {
    let rho = mode.constraint_weight() * block.params.rho;
    let curv = rho + gamma;
    if !(curv > 0.0) {
        return Err(EngineError::NonPositiveCurvature(curv));
    }
    Ok(g_val
        .iter()
        .zip(&block.mu)
        .zip(block.y.iter().zip(slack_upper))
        .map(|((g, mu), (y, &u))| ((rho * -g - mu + gamma * y) / curv).clamp(0.0, u))
        .collect())
}

fn step_clamped(values: &mut [f64], residual: impl Iterator<Item = f64>, step: f64, bound: f64) -> usize {
    let mut clamps = 0;
    for (v, r) in values.iter_mut().zip(residual) {
        let raw = *v + step * r;
        if raw > bound || raw < -bound {
            clamps += 1;
        }
        *v = raw.clamp(-bound, bound);
    }
    clamps
}

/// Multiplier step on the block's residuals `X - Z`, `G + Y`, `H`, followed
/// by the clamp to `[-dual_bound, dual_bound]`. Uses the block's current
/// `x` and `y`, which must already be the new iterates. Returns the number
/// of components that hit the clamp.
pub fn update_duals(
    block: &mut BlockState,
    z_new: &[f64],
    g_val: &[f64],
    h_val: &[f64],
    direction: DualDirection,
    dual_bound: f64,
) -> usize {
    let s = direction.sign();
    let p = block.params;
    let cons = block.x.iter().zip(z_new).map(|(x, z)| x - z);
    let mut clamps = step_clamped(&mut block.w, cons, s * p.alpha_w, dual_bound);
    let ineq: Vec<f64> = g_val.iter().zip(&block.y).map(|(g, y)| g + y).collect();
    clamps += step_clamped(&mut block.mu, ineq.into_iter(), s * p.alpha_mu, dual_bound);
    clamps += step_clamped(&mut block.nu, h_val.iter().copied(), s * p.alpha_nu, dual_bound);
    clamps
}
