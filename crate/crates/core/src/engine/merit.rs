use serde::{Deserialize, Serialize};

use super::{BlockData, BlockState, EngineError, PenaltyMode, ProxSchedule, ProxParams, SolverConfig};
use crate::model::{dot, ProblemSpec};

fn sq_norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum()
}

/// Block `i`'s term of the merit function `L^k`.
pub fn block_merit(
    spec: &ProblemSpec,
    data: &BlockData,
    block: &BlockState,
    z: &[f64],
    mode: PenaltyMode,
) -> f64 {
    let pw = mode.constraint_weight();
    let rho = block.params.rho;
    let cons: Vec<f64> = block.x.iter().zip(z).map(|(x, z)| x - z).collect();
    let ineq: Vec<f64> = data
        .ineq
        .eval(&block.x)
        .iter()
        .zip(&block.y)
        .map(|(g, y)| g + y)
        .collect();
    let eq = data.eq.eval(&block.x);

    let penalty = sq_norm(cons.iter().copied())
        + pw * sq_norm(ineq.iter().copied())
        + pw * sq_norm(eq.iter().copied());
    spec.objective(&block.x)
        + 0.5 * rho * penalty
        + dot(&block.w, &cons)
        + dot(&block.mu, &ineq)
        + dot(&block.nu, &eq)
}

/// `L^k`, summed over blocks in index order.
pub fn merit(
    spec: &ProblemSpec,
    data: &[BlockData],
    blocks: &[BlockState],
    z: &[f64],
    mode: PenaltyMode,
) -> f64 {
    data.iter()
        .zip(blocks)
        .map(|(d, b)| block_merit(spec, d, b, z, mode))
        .reduce(|acc, v| acc + v)
        .unwrap_or(0.0)
}

/// Max-norm residuals of the consensus, inequality and equality constraints.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub cons: f64,
    pub ineq: f64,
    pub eq: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.cons.max(self.ineq).max(self.eq)
    }

    pub fn combine(self, other: Residuals) -> Residuals {
        Residuals {
            cons: self.cons.max(other.cons),
            ineq: self.ineq.max(other.ineq),
            eq: self.eq.max(other.eq),
        }
    }
}

fn max_abs(v: impl Iterator<Item = f64>) -> f64 {
    v.fold(0.0, |m, x| m.max(x.abs()))
}

pub fn block_residuals(data: &BlockData, block: &BlockState, z: &[f64]) -> Residuals {
    Residuals {
        cons: max_abs(block.x.iter().zip(z).map(|(x, z)| x - z)),
        ineq: max_abs(
            data.ineq
                .eval(&block.x)
                .into_iter()
                .zip(&block.y)
                .map(|(g, y)| g + y),
        ),
        eq: max_abs(data.eq.eval(&block.x).into_iter()),
    }
}

pub fn residuals(data: &[BlockData], blocks: &[BlockState], z: &[f64]) -> Residuals {
    data.iter()
        .zip(blocks)
        .map(|(d, b)| block_residuals(d, b, z))
        .fold(Residuals::default(), Residuals::combine)
}

/// Constant `C` of the `O(1/k)` bound `L^k - N f(Z^inf) <= C / k`:
///
/// ```text
/// C = sum_i  sigma_i^0/2 |X_i^0 - Z^inf|^2 + (rho_i + tau^0)/2 |Z^0 - Z^inf|^2
///          + gamma_i^0/2 |Y_i^0 - Y_i^inf|^2
/// ```
///
/// The bound is only established without `G`/`H` penalties and with
/// nonincreasing proximal coefficients, so any other configuration is refused.
pub fn rate_certificate(
    initial: &[BlockState],
    z0: &[f64],
    prox0: &ProxParams,
    z_inf: &[f64],
    y_inf: &[Vec<f64>],
    cfg: &SolverConfig,
) -> Result<f64, EngineError> {
    if cfg.penalty_mode != PenaltyMode::ConsensusOnly {
        return Err(EngineError::CertificateUndefined(
            "requires consensus-only penalty mode",
        ));
    }
    if cfg.prox_schedule != ProxSchedule::Constant {
        return Err(EngineError::CertificateUndefined(
            "requires a nonincreasing (constant) proximal schedule",
        ));
    }
    let dz = sq_norm(z0.iter().zip(z_inf).map(|(a, b)| a - b));
    let mut c = 0.0;
    for (i, b) in initial.iter().enumerate() {
        let dx = sq_norm(b.x.iter().zip(z_inf).map(|(a, b)| a - b));
        let dy = sq_norm(b.y.iter().zip(&y_inf[i]).map(|(a, b)| a - b));
        c += 0.5 * prox0.sigma[i] * dx + 0.5 * (b.params.rho + prox0.tau) * dz + 0.5 * prox0.gamma[i] * dy;
    }
    Ok(c)
}

/// Steps where `values` increases by more than `slack`: `(index, increase)`
/// for `values[index] - values[index - 1]`.
pub fn merit_increases(values: &[f64], slack: f64) -> Vec<(usize, f64)> {
    values
        .windows(2)
        .enumerate()
        .filter_map(|(t, w)| {
            let inc = w[1] - w[0];
            (inc > slack).then_some((t + 1, inc))
        })
        .collect()
}

/// Iterate numbers `k >= 1` with `merit_by_iterate[k-1] - n_f_inf > C/k + slack`.
/// `merit_by_iterate[t]` is `L^{t+1}`.
pub fn rate_violations(merit_by_iterate: &[f64], c: f64, n_f_inf: f64, slack: f64) -> Vec<usize> {
    merit_by_iterate
        .iter()
        .enumerate()
        .filter_map(|(t, &l)| {
            let k = (t + 1) as f64;
            (l - n_f_inf > c / k + slack).then_some(t + 1)
        })
        .collect()
}
