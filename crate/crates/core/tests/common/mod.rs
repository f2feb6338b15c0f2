//! Helpers shared by the integration test targets: evaluators written
//! directly from the problem data (no engine code) and the instance catalog.

#![allow(dead_code)]

use std::ops::Range;

use consensus_lp::engine::{update_x_subblock, update_y, z_closed_form, BlockData, BlockParams, BlockState};
use consensus_lp::model::{generate_instance, AffineSystem, GeneratorOptions, PartitionPlan, ProblemSpec};
use consensus_lp::oracle::{box_qp_brute_force, numeric_minimize};
use consensus_lp::{PenaltyMode, SolverConfig};
use rand::Rng;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn row_value(spec_row: &[f64], offset: f64, x: &[f64]) -> f64 {
    dot(spec_row, x) + offset
}

/// `L` evaluated term by term from the full problem and the row lists of the
/// plan.
pub fn merit_by_terms(
    spec: &ProblemSpec,
    plan: &PartitionPlan,
    blocks: &[BlockState],
    z: &[f64],
    mode: PenaltyMode,
) -> f64 {
    let pen = match mode {
        PenaltyMode::Full => 1.0,
        PenaltyMode::ConsensusOnly => 0.0,
    };
    let mut total = 0.0;
    for (i, b) in blocks.iter().enumerate() {
        let rho = b.params.rho;
        let mut term = dot(&spec.cost, &b.x);
        for j in 0..spec.n {
            let d = b.x[j] - z[j];
            term += 0.5 * rho * d * d + b.w[j] * d;
        }
        for (t, &r) in plan.ineq_rows[i].iter().enumerate() {
            let v = row_value(&spec.ineq.matrix[r], spec.ineq.offset[r], &b.x) + b.y[t];
            term += 0.5 * rho * pen * v * v + b.mu[t] * v;
        }
        for (t, &r) in plan.eq_rows[i].iter().enumerate() {
            let v = row_value(&spec.eq.matrix[r], spec.eq.offset[r], &b.x);
            term += 0.5 * rho * pen * v * v + b.nu[t] * v;
        }
        total += term;
    }
    total
}

/// `(r_cons, r_ineq, r_eq)` from the full problem.
pub fn residuals_by_terms(
    spec: &ProblemSpec,
    plan: &PartitionPlan,
    blocks: &[BlockState],
    z: &[f64],
) -> (f64, f64, f64) {
    let (mut rc, mut ri, mut re) = (0.0_f64, 0.0_f64, 0.0_f64);
    for (i, b) in blocks.iter().enumerate() {
        for j in 0..spec.n {
            rc = rc.max((b.x[j] - z[j]).abs());
        }
        for (t, &r) in plan.ineq_rows[i].iter().enumerate() {
            let v = row_value(&spec.ineq.matrix[r], spec.ineq.offset[r], &b.x) + b.y[t];
            ri = ri.max(v.abs());
        }
        for &r in &plan.eq_rows[i] {
            re = re.max(row_value(&spec.eq.matrix[r], spec.eq.offset[r], &b.x).abs());
        }
    }
    (rc, ri, re)
}

/// Quadratic `1/2 x^T Q x + g^T x + const` in the subvector `cols` of the
/// primal subproblem of one block, everything else frozen at `x_work`.
pub struct SubQp {
    pub q: Vec<Vec<f64>>,
    pub g: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Builds the subproblem from its definition: cost, consensus penalty,
/// constraint penalties (full mode), multiplier terms and proximal term.
#[allow(clippy::too_many_arguments)]
pub fn sub_qp(
    spec: &ProblemSpec,
    ineq_rows: &[usize],
    eq_rows: &[usize],
    block: &BlockState,
    x_work: &[f64],
    z: &[f64],
    cols: Range<usize>,
    sigma: f64,
    mode: PenaltyMode,
) -> SubQp {
    let rho = block.params.rho;
    let pen = match mode {
        PenaltyMode::Full => rho,
        PenaltyMode::ConsensusOnly => 0.0,
    };
    let m = cols.len();
    let mut q = vec![vec![0.0; m]; m];
    let mut g = vec![0.0; m];
    for (a, j) in cols.clone().enumerate() {
        q[a][a] += rho + sigma;
        g[a] += spec.cost[j] + block.w[j] - rho * z[j] - sigma * block.x[j];
    }
    let mut frozen = x_work.to_vec();
    for j in cols.clone() {
        frozen[j] = 0.0;
    }
    let rows = ineq_rows
        .iter()
        .enumerate()
        .map(|(t, &r)| (&spec.ineq.matrix[r], spec.ineq.offset[r] + block.y[t], block.mu[t]))
        .chain(
            eq_rows
                .iter()
                .enumerate()
                .map(|(t, &r)| (&spec.eq.matrix[r], spec.eq.offset[r], block.nu[t])),
        );
    for (row, offset, mult) in rows {
        let rest = dot(row, &frozen) + offset;
        for (a, ja) in cols.clone().enumerate() {
            g[a] += row[ja] * (mult + pen * rest);
            for (b, jb) in cols.clone().enumerate() {
                q[a][b] += pen * row[ja] * row[jb];
            }
        }
    }
    SubQp {
        q,
        g,
        lower: spec.lower[cols.clone()].to_vec(),
        upper: spec.upper[cols].to_vec(),
    }
}

impl SubQp {
    pub fn value(&self, x: &[f64]) -> f64 {
        let m = x.len();
        let mut v = dot(&self.g, x);
        for a in 0..m {
            for b in 0..m {
                v += 0.5 * x[a] * self.q[a][b] * x[b];
            }
        }
        v
    }
}

/// One acceptance instance: generator arguments and partition.
#[derive(Clone, Copy, Debug)]
pub struct Case {
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub blocks: usize,
    pub subvectors: usize,
}

/// Twenty instances covering `n` in 4..=20, `p <= 2n`, `q <= n/2` and every
/// `(N, M)` in `{1, 2, 4}^2`. Instances with `n <= 12` keep `p` moderate so
/// vertex enumeration stays within budget.
pub const CATALOG: [Case; 20] = [
    Case { seed: 101, n: 4, p: 3, q: 1, blocks: 1, subvectors: 1 },
    Case { seed: 102, n: 4, p: 8, q: 2, blocks: 2, subvectors: 2 },
    Case { seed: 103, n: 5, p: 4, q: 2, blocks: 4, subvectors: 1 },
    Case { seed: 104, n: 6, p: 6, q: 3, blocks: 1, subvectors: 2 },
    Case { seed: 105, n: 6, p: 4, q: 2, blocks: 2, subvectors: 4 },
    Case { seed: 106, n: 7, p: 5, q: 2, blocks: 4, subvectors: 2 },
    Case { seed: 107, n: 8, p: 6, q: 4, blocks: 1, subvectors: 4 },
    Case { seed: 108, n: 8, p: 10, q: 3, blocks: 2, subvectors: 1 },
    Case { seed: 109, n: 9, p: 6, q: 4, blocks: 4, subvectors: 4 },
    Case { seed: 110, n: 10, p: 8, q: 5, blocks: 2, subvectors: 2 },
    Case { seed: 111, n: 10, p: 5, q: 3, blocks: 1, subvectors: 4 },
    Case { seed: 112, n: 11, p: 7, q: 4, blocks: 4, subvectors: 1 },
    Case { seed: 113, n: 12, p: 6, q: 6, blocks: 2, subvectors: 4 },
    Case { seed: 114, n: 12, p: 8, q: 5, blocks: 4, subvectors: 2 },
    Case { seed: 115, n: 14, p: 20, q: 7, blocks: 1, subvectors: 2 },
    Case { seed: 116, n: 15, p: 12, q: 5, blocks: 2, subvectors: 4 },
    Case { seed: 117, n: 16, p: 24, q: 8, blocks: 4, subvectors: 4 },
    Case { seed: 118, n: 18, p: 30, q: 6, blocks: 2, subvectors: 2 },
    Case { seed: 119, n: 19, p: 16, q: 9, blocks: 4, subvectors: 1 },
    Case { seed: 120, n: 20, p: 40, q: 10, blocks: 4, subvectors: 4 },
];

impl Case {
    pub fn spec(&self) -> ProblemSpec {
        generate_instance(self.seed, self.n, self.p, self.q, &GeneratorOptions::default())
            .expect("catalog parameters are valid")
            .spec
    }

    pub fn plan(&self, spec: &ProblemSpec) -> PartitionPlan {
        consensus_lp::partition(spec, self.blocks, self.subvectors).expect("catalog partition is valid")
    }
}

/// Worst disagreement between a closed-form update and its oracle.
#[derive(Clone, Copy, Debug, Default)]
pub struct Agreement {
    pub argument: f64,
    pub objective: f64,
}

impl Agreement {
    pub fn absorb(&mut self, argument: f64, objective: f64) {
        self.argument = self.argument.max(argument);
        self.objective = self.objective.max(objective);
    }

    pub fn within(&self, argument: f64, objective: f64) -> bool {
        self.argument <= argument && self.objective <= objective
    }
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn random_vec(rng: &mut impl Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| uniform(rng, lo, hi)).collect()
}

fn random_mode(rng: &mut impl Rng) -> PenaltyMode {
    if rng.random_bool(0.5) {
        PenaltyMode::Full
    } else {
        PenaltyMode::ConsensusOnly
    }
}

/// One random primal subproblem (`m <= 4`) solved by the engine and by
/// active-set enumeration.
pub fn x_update_case(rng: &mut impl Rng) -> (f64, f64) {
    let n = rng.random_range(1..=6usize);
    let m = rng.random_range(1..=n.min(4));
    let start = rng.random_range(0..=n - m);
    let cols = start..start + m;
    let p = rng.random_range(0..=3usize);
    let q = rng.random_range(0..=2usize);
    let lower = random_vec(rng, n, -2.0, 0.0);
    let upper: Vec<f64> = lower.iter().map(|l| l + uniform(rng, 0.5, 3.0)).collect();
    let rows = |rng: &mut _, k| (0..k).map(|_| random_vec(rng, n, -2.0, 2.0)).collect::<Vec<_>>();
    let ineq = AffineSystem::new(rows(rng, p), random_vec(rng, p, -1.0, 1.0));
    let eq = AffineSystem::new(rows(rng, q), random_vec(rng, q, -1.0, 1.0));
    let spec = ProblemSpec::new(random_vec(rng, n, -2.0, 2.0), ineq, eq, lower, upper).unwrap();

    let inside = |rng: &mut _| -> Vec<f64> {
        (0..n)
            .map(|j| uniform(rng, spec.lower[j], spec.upper[j]))
            .collect()
    };
    let x = inside(rng);
    let block = BlockState {
        x_prev: x.clone(),
        x,
        y: random_vec(rng, p, 0.0, 2.0),
        y_prev: vec![0.0; p],
        w: random_vec(rng, n, -2.0, 2.0),
        mu: random_vec(rng, p, -2.0, 2.0),
        nu: random_vec(rng, q, -2.0, 2.0),
        params: BlockParams {
            rho: uniform(rng, 0.1, 3.0),
            ..SolverConfig::default().params_for(0)
        },
    };
    // Gauss-Seidel point: earlier subvectors already moved.
    let mut x_work = block.x.clone();
    for j in 0..start {
        x_work[j] = uniform(rng, spec.lower[j], spec.upper[j]);
    }
    let z = inside(rng);
    let sigma = uniform(rng, 0.1, 3.0);
    let cfg = SolverConfig {
        penalty_mode: random_mode(rng),
        ..SolverConfig::default()
    };

    let data = BlockData::new(spec.ineq.clone(), spec.eq.clone(), vec![10.0; p], n);
    let got = update_x_subblock(&spec, &data, &block, &x_work, &z, cols.clone(), sigma, &cfg).unwrap();
    let all_ineq: Vec<usize> = (0..p).collect();
    let all_eq: Vec<usize> = (0..q).collect();
    let qp = sub_qp(&spec, &all_ineq, &all_eq, &block, &x_work, &z, cols, sigma, cfg.penalty_mode);
    let want = box_qp_brute_force(&qp.q, &qp.g, &qp.lower, &qp.upper);
    let arg = got.iter().zip(&want).fold(0.0_f64, |e, (a, b)| e.max((a - b).abs()));
    (arg, (qp.value(&got) - qp.value(&want)).abs())
}

/// One random `Z` update against per-component golden-section search.
pub fn z_update_case(rng: &mut impl Rng) -> (f64, f64) {
    let blocks = rng.random_range(1..=8usize);
    let m = rng.random_range(1..=4usize);
    let lower = random_vec(rng, m, -2.0, 0.0);
    let upper: Vec<f64> = lower.iter().map(|l| l + uniform(rng, 0.5, 3.0)).collect();
    let tau = uniform(rng, 0.1, 3.0);
    let rho = random_vec(rng, blocks, 0.0, 3.0);
    let xs: Vec<Vec<f64>> = (0..blocks).map(|_| random_vec(rng, m, -4.0, 4.0)).collect();
    let ws: Vec<Vec<f64>> = (0..blocks).map(|_| random_vec(rng, m, -3.0, 3.0)).collect();
    let zk = random_vec(rng, m, -2.0, 2.0);

    let mut num = vec![0.0; m];
    let mut den = 0.0;
    for i in 0..blocks {
        for j in 0..m {
            num[j] += rho[i] * xs[i][j] + ws[i][j] + tau * zk[j];
        }
        den += rho[i] + tau;
    }
    let got = z_closed_form(&num, den, &lower, &upper).unwrap();

    let mut worst = (0.0_f64, 0.0_f64);
    for j in 0..m {
        let f = |z: f64| {
            (0..blocks)
                .map(|i| {
                    let d = xs[i][j] - z;
                    0.5 * rho[i] * d * d + ws[i][j] * d + 0.5 * tau * (z - zk[j]) * (z - zk[j])
                })
                .sum::<f64>()
        };
        let want = numeric_minimize(f, lower[j], upper[j]);
        worst.0 = worst.0.max((got[j] - want).abs());
        worst.1 = worst.1.max((f(got[j]) - f(want)).abs());
    }
    worst
}

/// One random slack update against per-component golden-section search.
pub fn y_update_case(rng: &mut impl Rng) -> (f64, f64) {
    let rows = rng.random_range(1..=4usize);
    let mode = random_mode(rng);
    let rho = uniform(rng, 0.1, 3.0);
    let gamma = uniform(rng, 0.1, 3.0);
    let block = BlockState {
        x: vec![],
        x_prev: vec![],
        y: random_vec(rng, rows, 0.0, 2.0),
        y_prev: vec![],
        w: vec![],
        mu: random_vec(rng, rows, -4.0, 4.0),
        nu: vec![],
        params: BlockParams {
            rho,
            ..SolverConfig::default().params_for(0)
        },
    };
    let g_val = random_vec(rng, rows, -4.0, 2.0);
    let u_y = random_vec(rng, rows, 0.0, 4.0);
    let got = update_y(&block, &g_val, gamma, &u_y, mode).unwrap();
    let pen = match mode {
        PenaltyMode::Full => rho,
        PenaltyMode::ConsensusOnly => 0.0,
    };
    let mut worst = (0.0_f64, 0.0_f64);
    for t in 0..rows {
        let f = |y: f64| {
            let v = g_val[t] + y;
            0.5 * pen * v * v + block.mu[t] * v + 0.5 * gamma * (y - block.y[t]) * (y - block.y[t])
        };
        let want = numeric_minimize(f, 0.0, u_y[t]);
        worst.0 = worst.0.max((got[t] - want).abs());
        worst.1 = worst.1.max((f(got[t]) - f(want)).abs());
    }
    worst
}
