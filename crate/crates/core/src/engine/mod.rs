//! Per-iteration mathematics of the consensus-block method.
//!
//! Each consensus block `i` owns a local copy `X_i` of the decision vector,
//! slacks `Y_i` for its inequality rows and the multipliers `W_i`, `mu_i`,
//! `nu_i`. One iteration is
//!
//! 1. Gauss-Seidel proximal updates of the subvectors of every `X_i`,
//! 2. the closed-form update of the common variable `Z`,
//! 3. the closed-form proximal update of every `Y_i`,
//! 4. the multiplier updates.
//!
//! Everything here is a deterministic function of its inputs; the runtime
//! decides where each call executes.

mod merit;
mod updates;

pub use merit::{
    block_merit, block_residuals, merit, merit_increases, rate_certificate, rate_violations,
    residuals, Residuals,
};
pub use updates::{
    primal_sweep, update_duals, update_x_subblock, update_y, z_closed_form, z_contribution,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AffineSystem, PartitionPlan, ProblemSpec, SlackBounds};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("subproblem solver did not reach tolerance {tol:e} within {sweeps} sweeps (last change {last_change:e})")]
    InnerNotConverged {
        sweeps: usize,
        tol: f64,
        last_change: f64,
    },
    #[error("nonpositive curvature {0} in a closed-form update")]
    NonPositiveCurvature(f64),
    #[error("rate certificate is undefined: {0}")]
    CertificateUndefined(&'static str),
}

/// How the proximal coefficients evolve over iterations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProxSchedule {
    /// `sigma^k = sigma0` for every `k`.
    #[default]
    Constant,
    /// `sigma^k = sigma0 / ||X^k - X^{k-1}||`, with the divisor taken as 1 at
    /// `k = 0` and whenever it vanishes. Same for `tau` and `gamma`.
    Normalized,
}

/// Which constraint residuals carry a quadratic penalty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyMode {
    /// Penalize `X_i - Z`, `G_i(X_i) + Y_i` and `H_i(X_i)`.
    #[default]
    Full,
    /// Penalize only `X_i - Z`.
    ConsensusOnly,
}

impl PenaltyMode {
    /// Weight applied to the `G`/`H` penalty terms.
    pub fn constraint_weight(self) -> f64 {
        match self {
            PenaltyMode::Full => 1.0,
            PenaltyMode::ConsensusOnly => 0.0,
        }
    }
}

/// Sign of the multiplier step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DualDirection {
    /// `W <- W - alpha (X - Z)` and likewise for `mu`, `nu`.
    Descent,
    /// The classical sign, `W <- W + alpha (X - Z)`.
    Ascent,
}

impl DualDirection {
    fn sign(self) -> f64 {
        match self {
            DualDirection::Descent => -1.0,
            DualDirection::Ascent => 1.0,
        }
    }
}

/// Coefficients owned by one consensus block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub rho: f64,
    pub sigma0: f64,
    pub gamma0: f64,
    pub alpha_w: f64,
    pub alpha_mu: f64,
    pub alpha_nu: f64,
}

impl BlockParams {
    fn validate(&self) -> Result<(), EngineError> {
        let positive = [
            ("sigma0", self.sigma0),
            ("gamma0", self.gamma0),
            ("alpha_w", self.alpha_w),
            ("alpha_mu", self.alpha_mu),
            ("alpha_nu", self.alpha_nu),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(EngineError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return Err(EngineError::InvalidConfig(format!(
                "rho must be nonnegative, got {}",
                self.rho
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub rho: f64,
    pub alpha_w: f64,
    pub alpha_mu: f64,
    pub alpha_nu: f64,
    pub sigma0: f64,
    pub tau0: f64,
    pub gamma0: f64,
    /// Per-block coefficients; when empty every block uses the scalars above.
    #[serde(default)]
    pub block_params: Vec<BlockParams>,
    pub prox_schedule: ProxSchedule,
    pub penalty_mode: PenaltyMode,
    /// Multipliers are clamped componentwise to `[-dual_bound, dual_bound]`.
    pub dual_bound: f64,
    /// Iterations `k < ascent_phase_iters` use ascent multiplier steps.
    pub ascent_phase_iters: usize,
    pub tol_residual: f64,
    pub tol_merit: f64,
    pub max_iters: usize,
    /// Stop the coordinate sweeps once no coordinate moves by this much.
    pub subqp_tol: f64,
    pub subqp_max_sweeps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            alpha_w: 0.5,
            alpha_mu: 0.5,
            alpha_nu: 0.5,
            sigma0: 1.0,
            tau0: 1.0,
            gamma0: 1.0,
            block_params: Vec::new(),
            prox_schedule: ProxSchedule::Constant,
            penalty_mode: PenaltyMode::Full,
            dual_bound: 1e6,
            ascent_phase_iters: 0,
            tol_residual: 1e-6,
            tol_merit: 1e-9,
            max_iters: 50_000,
            subqp_tol: 1e-12,
            subqp_max_sweeps: 10_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, blocks: usize) -> Result<(), EngineError> {
        if !self.block_params.is_empty() && self.block_params.len() != blocks {
            return Err(EngineError::InvalidConfig(format!(
                "{} per-block parameter sets for {blocks} blocks",
                self.block_params.len()
            )));
        }
        for i in 0..blocks {
            self.params_for(i).validate()?;
        }
        let positive = [
            ("tau0", self.tau0),
            ("dual_bound", self.dual_bound),
            ("tol_residual", self.tol_residual),
            ("tol_merit", self.tol_merit),
            ("subqp_tol", self.subqp_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || v.is_nan() {
                return Err(EngineError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.subqp_max_sweeps == 0 {
            return Err(EngineError::InvalidConfig(
                "subqp_max_sweeps must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn params_for(&self, block: usize) -> BlockParams {
        self.block_params.get(block).copied().unwrap_or(BlockParams {
            rho: self.rho,
            sigma0: self.sigma0,
            gamma0: self.gamma0,
            alpha_w: self.alpha_w,
            alpha_mu: self.alpha_mu,
            alpha_nu: self.alpha_nu,
        })
    }

    pub fn direction_at(&self, k: usize) -> DualDirection {
        if k < self.ascent_phase_iters {
            DualDirection::Ascent
        } else {
            DualDirection::Descent
        }
    }
}

/// Constraint data of one consensus block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockData {
    pub ineq: AffineSystem,
    pub eq: AffineSystem,
    pub slack_upper: Vec<f64>,
    /// `sum_r a_rj^2 + sum_r h_rj^2` over the block's rows, per column.
    pub col_sq_norms: Vec<f64>,
}

impl BlockData {
    pub fn new(ineq: AffineSystem, eq: AffineSystem, slack_upper: Vec<f64>, n: usize) -> Self {
        let mut col_sq_norms = vec![0.0; n];
        for row in ineq.matrix.iter().chain(&eq.matrix) {
            for (c, a) in col_sq_norms.iter_mut().zip(row) {
                *c += a * a;
            }
        }
        Self {
            ineq,
            eq,
            slack_upper,
            col_sq_norms,
        }
    }

    /// One `BlockData` per consensus block of the plan.
    pub fn for_plan(spec: &ProblemSpec, plan: &PartitionPlan, slack: &SlackBounds) -> Vec<Self> {
        (0..plan.blocks)
            .map(|i| {
                let (ineq, eq) = plan.block_systems(spec, i);
                BlockData::new(ineq, eq, slack.upper[i].clone(), spec.n)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockState {
    pub x: Vec<f64>,
    pub x_prev: Vec<f64>,
    pub y: Vec<f64>,
    pub y_prev: Vec<f64>,
    pub w: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub params: BlockParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalState {
    pub z: Vec<f64>,
    pub z_prev: Vec<f64>,
    pub k: usize,
    pub tau0: f64,
}

/// `X_i = Z = clip(0, l, u)`, `Y_i = clip(-G_i(X_i), 0, u_Y)`, multipliers 0.
pub fn initial_states(
    spec: &ProblemSpec,
    data: &[BlockData],
    cfg: &SolverConfig,
) -> (Vec<BlockState>, GlobalState) {
    let z = spec.project_box(&vec![0.0; spec.n]);
    let blocks = data
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let y: Vec<f64> = d
                .ineq
                .eval(&z)
                .iter()
                .zip(&d.slack_upper)
                .map(|(g, &u)| (-g).clamp(0.0, u))
                .collect();
            BlockState {
                x: z.clone(),
                x_prev: z.clone(),
                y_prev: y.clone(),
                y,
                w: vec![0.0; spec.n],
                mu: vec![0.0; d.ineq.rows()],
                nu: vec![0.0; d.eq.rows()],
                params: cfg.params_for(i),
            }
        })
        .collect();
    let global = GlobalState {
        z_prev: z.clone(),
        z,
        k: 0,
        tau0: cfg.tau0,
    };
    (blocks, global)
}

/// Proximal coefficients for one iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxParams {
    pub sigma: Vec<f64>,
    pub tau: f64,
    pub gamma: Vec<f64>,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn normalized(base: f64, k: usize, step: f64) -> f64 {
    if k == 0 || step == 0.0 {
        base
    } else {
        base / step
    }
}

/// `(sigma_i^k, gamma_i^k)` for one block.
pub fn block_prox(k: usize, schedule: ProxSchedule, block: &BlockState) -> (f64, f64) {
    let BlockParams { sigma0, gamma0, .. } = block.params;
    match schedule {
        ProxSchedule::Constant => (sigma0, gamma0),
        ProxSchedule::Normalized => (
            normalized(sigma0, k, distance(&block.x, &block.x_prev)),
            normalized(gamma0, k, distance(&block.y, &block.y_prev)),
        ),
    }
}

/// `tau^k` from the common variable's last step.
pub fn consensus_prox(k: usize, schedule: ProxSchedule, tau0: f64, z: &[f64], z_prev: &[f64]) -> f64 {
    match schedule {
        ProxSchedule::Constant => tau0,
        ProxSchedule::Normalized => normalized(tau0, k, distance(z, z_prev)),
    }
}

pub fn prox_params(
    k: usize,
    schedule: ProxSchedule,
    blocks: &[BlockState],
    global: &GlobalState,
) -> ProxParams {
    let (sigma, gamma) = blocks.iter().map(|b| block_prox(k, schedule, b)).unzip();
    ProxParams {
        sigma,
        gamma,
        tau: consensus_prox(k, schedule, global.tau0, &global.z, &global.z_prev),
    }
}
